//! Issue-commit link recovery.
//!
//! The crate covers the whole pipeline: loading and preprocessing issue and
//! commit records, building true / false / issue-code link sets, distilling a
//! compact bidirectional self-attention encoder from a larger frozen one,
//! multi-task fine-tuning of the compact encoder, and ranking evaluation
//! against a TF-IDF baseline.

pub mod error;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod distill;
pub mod encoder;
pub mod links;
pub mod optim;
pub mod pipeline;
pub mod preprocess;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
