use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Schema, SplitSpec, SynthConfig};
use crate::distill::ChannelMap;
use crate::encoder::{Budgets, EncoderConfig};
use crate::error::{Error, Result};
use crate::links::{FalseLinkMode, FalseLinkPolicy};
use crate::retrieval::{QueryConfig, DEFAULT_THRESHOLD};
use crate::trainer::TrainConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "TRACELINK_OUT";
pub const DEFAULT_OUT: &str = "tracelink-out";
/// Config file every stage looks for in the output directory.
pub const RUN_FILE: &str = "run.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    /// Directory with raw `issues.jsonl` / `commits.jsonl`; `None` means `<out>/raw`.
    pub raw: Option<PathBuf>,
    pub schema: Schema,
    /// Externally produced teacher weights; `None` initializes a random teacher.
    pub teacher_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub channels: ChannelMap,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Cap on the number of training sequences, sampled with `seed`.
    pub max_sequences: usize,
    /// Start the student as a copy of the channel-paired teacher blocks.
    pub init_from_teacher: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            channels: ChannelMap::default(),
            epochs: 10,
            lr: 1e-3,
            batch_size: 16,
            max_sequences: 256,
            init_from_teacher: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Valid,
    #[default]
    Test,
}

/// Where distractor commits come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistractorPool {
    /// Only the evaluated split.
    Split,
    /// Validation and test links together.
    #[default]
    Heldout,
    /// Every true link of the project.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: EvalSplit,
    pub distractors: DistractorPool,
    pub max_issues: usize,
    pub multi_relevant: bool,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: EvalSplit::Test,
            distractors: DistractorPool::Heldout,
            max_issues: 1000,
            multi_relevant: false,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn queries(&self) -> QueryConfig {
        QueryConfig {
            max_issues: self.max_issues,
            seed: self.seed,
            multi_relevant: self.multi_relevant,
        }
    }
}

/// Everything a pipeline run depends on. Every random choice is driven by
/// one of the seeds in here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; [`RunConfig::with_seed`] derives the per-stage seeds from it.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub project: ProjectConfig,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    /// Time-window false links written by the `links` stage.
    pub false_links: FalseLinkPolicy,
    pub teacher: EncoderConfig,
    pub student: EncoderConfig,
    pub distill: DistillConfig,
    pub budgets: Budgets,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    /// Desk-scale settings: d=64 encoders, students trained from scratch.
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            project: ProjectConfig::default(),
            synth: SynthConfig::default(),
            split: SplitSpec::default(),
            false_links: FalseLinkPolicy {
                mode: FalseLinkMode::TimeInterval,
                ..Default::default()
            },
            teacher: EncoderConfig::teacher(),
            student: EncoderConfig::student(),
            distill: DistillConfig::default(),
            budgets: Budgets::default(),
            train: TrainConfig {
                lr: 1e-3,
                ..Default::default()
            },
            eval: EvalConfig::default(),
        }
        .with_seed(0)
    }
}

impl RunConfig {
    /// Sets the master seed and every stage seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.split.seed = seed;
        self.false_links.seed = seed;
        self.teacher.seed = seed.wrapping_add(1);
        self.student.seed = seed.wrapping_add(2);
        self.distill.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.false_links.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.train.validate()?;
        if self.teacher.hidden_dim != self.student.hidden_dim {
            return Err(Error::Config(format!(
                "teacher hidden_dim {} differs from student hidden_dim {}",
                self.teacher.hidden_dim, self.student.hidden_dim
            )));
        }
        self.distill
            .channels
            .validate(self.teacher.n_layers, self.student.n_layers)?;
        if self.distill.epochs == 0 || self.distill.batch_size == 0 || self.distill.max_sequences == 0 {
            return Err(Error::Config("distill epochs, batch_size and max_sequences must be positive".into()));
        }
        if !(self.distill.lr.is_finite() && self.distill.lr > 0.0) {
            return Err(Error::Config(format!("distill lr must be positive, got {}", self.distill.lr)));
        }
        if !(-1.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config(format!("threshold {} outside [-1, 1]", self.eval.threshold)));
        }
        if self.eval.max_issues == 0 {
            return Err(Error::Config("max_issues must be positive".into()));
        }
        let max_budget = self.budgets.k_nl.max(self.budgets.k_pl);
        if max_budget > self.student.max_positions || max_budget > self.teacher.max_positions {
            return Err(Error::Config(format!(
                "token budget {max_budget} exceeds the encoders' max_positions"
            )));
        }
        Ok(())
    }

    /// The output directory, `tracelink-out` if unresolved.
    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().unwrap_or(Path::new(DEFAULT_OUT))
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.out_dir())
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.project
            .raw
            .clone()
            .unwrap_or_else(|| self.layout().raw())
    }
}

/// Resolves the configuration a command runs with.
///
/// The output directory is `out`, else the config file's `out`, else
/// `$TRACELINK_OUT`, else `tracelink-out`. Without `config`, `<out>/run.toml`
/// is used when present.
pub fn resolve_config(config: Option<&Path>, out: Option<&Path>) -> Result<RunConfig> {
    let from_file = config.map(RunConfig::load).transpose()?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| from_file.as_ref().and_then(|c| c.out.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut cfg = match from_file {
        Some(c) => c,
        None => {
            let run = out_dir.join(RUN_FILE);
            if run.exists() {
                RunConfig::load(&run)?
            } else {
                RunConfig::default()
            }
        }
    };
    cfg.out = Some(out_dir);
    Ok(cfg)
}

/// File locations inside an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn run_file(&self) -> PathBuf {
        self.root.join(RUN_FILE)
    }
    pub fn raw(&self) -> PathBuf {
        self.root.join("raw")
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn vocab(&self) -> PathBuf {
        self.data().join("vocab.txt")
    }
    pub fn links(&self) -> PathBuf {
        self.root.join("links")
    }
    pub fn link_file(&self, name: &str) -> PathBuf {
        self.links().join(format!("{name}.jsonl"))
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }
    pub fn teacher(&self) -> PathBuf {
        self.model().join("teacher.safetensors")
    }
    pub fn student(&self) -> PathBuf {
        self.model().join("student.safetensors")
    }
    pub fn distill_curve(&self) -> PathBuf {
        self.model().join("distill_loss.csv")
    }
    pub fn distill_checkpoints(&self) -> PathBuf {
        self.model().join("distill")
    }
    pub fn trained(&self) -> PathBuf {
        self.model().join("trained")
    }
    pub fn history(&self) -> PathBuf {
        self.model().join("history.csv")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn vsm(&self) -> PathBuf {
        self.root.join("vsm")
    }
}
