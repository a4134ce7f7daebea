//! Shared vocabulary and the bidirectional self-attention encoders.
//!
//! Blocks are pre-norm: `h + attn(norm(h))` followed by `h + ffn(norm(h))`.
//! Layer 0 is the normalized embedding output, layers `1..=n_layers` are the
//! block outputs. A block whose output projections are zero is an exact
//! identity, which [`EncoderState::make_identity_block`] exploits.

mod vocab;

pub use vocab::{Vocab, CLS, PAD, SEP, UNK};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::{Mat, ParamId, ParamSet, Tape, Var};
use crate::checkpoint;
use crate::corpus::{CommitRecord, IssueRecord};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    /// Inner width of the feed-forward sublayer; `None` means `4 * hidden_dim`.
    pub ffn_dim: Option<usize>,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::student()
    }
}

impl EncoderConfig {
    pub fn student() -> Self {
        Self {
            n_layers: 2,
            n_heads: 1,
            hidden_dim: 64,
            ffn_dim: None,
            max_positions: 128,
            vocab_size: 4,
            init_std: 0.02,
            seed: 0,
        }
    }

    pub fn teacher() -> Self {
        Self {
            n_layers: 12,
            n_heads: 4,
            seed: 1,
            ..Self::student()
        }
    }

    pub fn ffn(&self) -> usize {
        self.ffn_dim.unwrap_or(4 * self.hidden_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.hidden_dim == 0 || self.ffn() == 0 {
            return bad(format!("encoder sizes must be positive: {self:?}"));
        }
        if self.hidden_dim % self.n_heads != 0 {
            return bad(format!(
                "hidden_dim {} not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must cover the special tokens".into());
        }
        if self.max_positions == 0 {
            return bad("max_positions must be positive".into());
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    tok: ParamId,
    pos: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    blocks: Vec<BlockIds>,
}

fn build_params(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> (ParamSet, Layout) {
    let normal = Normal::new(0.0, cfg.init_std).expect("validated std");
    let mut ps = ParamSet::new();
    let (d, f) = (cfg.hidden_dim, cfg.ffn());
    let mut rand = |ps: &mut ParamSet, name: String, r: usize, c: usize| {
        let data = (0..r * c).map(|_| normal.sample(rng)).collect();
        ps.push(name, Mat::from_vec(r, c, data))
    };
    let tok = rand(&mut ps, "embeddings.token".into(), cfg.vocab_size, d);
    let pos = rand(&mut ps, "embeddings.position".into(), cfg.max_positions, d);
    let ln_g = ps.push("embeddings.norm.weight", Mat::filled(1, d, 1.0));
    let ln_b = ps.push("embeddings.norm.bias", Mat::zeros(1, d));
    let mut blocks = Vec::new();
    for l in 1..=cfg.n_layers {
        let p = format!("layers.{l}.");
        let ln1_g = ps.push(format!("{p}attn_norm.weight"), Mat::filled(1, d, 1.0));
        let ln1_b = ps.push(format!("{p}attn_norm.bias"), Mat::zeros(1, d));
        let wq = rand(&mut ps, format!("{p}attn.query.weight"), d, d);
        let bq = ps.push(format!("{p}attn.query.bias"), Mat::zeros(1, d));
        let wk = rand(&mut ps, format!("{p}attn.key.weight"), d, d);
        let bk = ps.push(format!("{p}attn.key.bias"), Mat::zeros(1, d));
        let wv = rand(&mut ps, format!("{p}attn.value.weight"), d, d);
        let bv = ps.push(format!("{p}attn.value.bias"), Mat::zeros(1, d));
        let wo = rand(&mut ps, format!("{p}attn.output.weight"), d, d);
        let bo = ps.push(format!("{p}attn.output.bias"), Mat::zeros(1, d));
        let ln2_g = ps.push(format!("{p}ffn_norm.weight"), Mat::filled(1, d, 1.0));
        let ln2_b = ps.push(format!("{p}ffn_norm.bias"), Mat::zeros(1, d));
        let w1 = rand(&mut ps, format!("{p}ffn.inner.weight"), d, f);
        let b1 = ps.push(format!("{p}ffn.inner.bias"), Mat::zeros(1, f));
        let w2 = rand(&mut ps, format!("{p}ffn.outer.weight"), f, d);
        let b2 = ps.push(format!("{p}ffn.outer.bias"), Mat::zeros(1, d));
        blocks.push(BlockIds {
            ln1_g,
            ln1_b,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln2_g,
            ln2_b,
            w1,
            b1,
            w2,
            b2,
        });
    }
    (
        ps,
        Layout {
            tok,
            pos,
            ln_g,
            ln_b,
            blocks,
        },
    )
}

/// A fixed-length token id sequence with its attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }
}

/// Keeps the first `budget` tokens, maps unknown tokens to UNK and pads to
/// `budget` with PAD.
pub fn tokenize<S: AsRef<str>>(vocab: &Vocab, tokens: &[S], budget: usize) -> Sequence {
    let mut ids: Vec<u32> = tokens.iter().take(budget).map(|t| vocab.id(t.as_ref())).collect();
    let mut mask = vec![true; ids.len()];
    ids.resize(budget, PAD);
    mask.resize(budget, false);
    Sequence { ids, mask }
}

/// Output of every layer for one sequence; `layers[0]` is the embedding layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub layers: Vec<Mat>,
    pub mask: Vec<bool>,
}

impl HiddenStates {
    pub fn top(&self) -> &Mat {
        self.layers.last().expect("at least the embedding layer")
    }

    /// Number of transformer blocks.
    pub fn n_blocks(&self) -> usize {
        self.layers.len() - 1
    }
}

/// Mean of the rows of `h` at active mask positions; zero vector if none.
pub fn pool(h: &Mat, mask: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; h.cols];
    let mut n = 0usize;
    for (r, &m) in mask.iter().enumerate().take(h.rows) {
        if m {
            n += 1;
            for (o, x) in out.iter_mut().zip(h.row(r)) {
                *o += x;
            }
        }
    }
    if n > 0 {
        out.iter_mut().for_each(|o| *o /= n as f64);
    }
    out
}

/// Tape variables for the layer outputs of one sequence.
#[derive(Debug, Clone)]
pub struct TapeStates {
    pub layers: Vec<Var>,
    /// Rows of each layer matrix holding real (non-pad) tokens.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub params: ParamSet,
    pub frozen: bool,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: EncoderConfig,
    frozen: bool,
}

impl EncoderState {
    /// Randomly initialized encoder, deterministic in `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (params, layout) = build_params(&config, &mut rng);
        Ok(Self {
            config,
            params,
            frozen: false,
            layout,
        })
    }

    /// New encoder with the embeddings of `teacher` and, for block `i`, a copy
    /// of teacher block `blocks[i]` (1-based).
    pub fn copy_blocks(teacher: &EncoderState, blocks: &[usize]) -> Result<Self> {
        let mut cfg = teacher.config.clone();
        cfg.n_layers = blocks.len();
        let mut out = Self::new(cfg)?;
        let src = &teacher.params;
        let tl = &teacher.layout;
        for (dst, s) in [
            (out.layout.tok, tl.tok),
            (out.layout.pos, tl.pos),
            (out.layout.ln_g, tl.ln_g),
            (out.layout.ln_b, tl.ln_b),
        ] {
            *out.params.get_mut(dst) = src.get(s).clone();
        }
        for (i, &b) in blocks.iter().enumerate() {
            if b == 0 || b > teacher.config.n_layers {
                return Err(Error::Config(format!(
                    "teacher has no block {b} (blocks are 1..={})",
                    teacher.config.n_layers
                )));
            }
            let (d, s) = (out.layout.blocks[i], tl.blocks[b - 1]);
            for (x, y) in block_ids(&d).into_iter().zip(block_ids(&s)) {
                *out.params.get_mut(x) = src.get(y).clone();
            }
        }
        Ok(out)
    }

    /// Zeroes the output projections of block `l` (1-based) so it passes its
    /// input through unchanged.
    pub fn make_identity_block(&mut self, l: usize) -> Result<()> {
        if l == 0 || l > self.config.n_layers {
            return Err(Error::Config(format!("no block {l}")));
        }
        let b = self.layout.blocks[l - 1];
        for id in [b.wo, b.bo, b.w2, b.b2] {
            let m = self.params.get_mut(id);
            m.data.iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&StateMeta {
            config: self.config.clone(),
            frozen: self.frozen,
        })?;
        checkpoint::save(path, &[("", &self.params)], &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let arc = checkpoint::load(path)?;
        Self::from_archive(&arc, "")
    }

    /// Restores an encoder whose tensors are stored under `prefix` and whose
    /// config is the `encoder` member (or the whole) of the archive metadata.
    pub fn from_archive(arc: &checkpoint::Archive, prefix: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(&arc.meta)
            .map_err(|e| Error::Checkpoint(format!("bad checkpoint metadata: {e}")))?;
        let v = v.get("encoder").cloned().unwrap_or(v);
        let meta: StateMeta =
            serde_json::from_value(v).map_err(|e| Error::Checkpoint(format!("bad encoder metadata: {e}")))?;
        let mut st = Self::new(meta.config)?;
        arc.restore(prefix, &mut st.params)?;
        st.frozen = meta.frozen;
        Ok(st)
    }

    pub(crate) fn meta_json(&self) -> serde_json::Value {
        serde_json::to_value(StateMeta {
            config: self.config.clone(),
            frozen: self.frozen,
        })
        .expect("serializable")
    }

    fn check_input(&self, seq: &Sequence) -> Result<()> {
        if seq.ids.len() != seq.mask.len() {
            return Err(Error::InvalidInput("ids and mask lengths differ".into()));
        }
        if seq.len() > self.config.max_positions {
            return Err(Error::InvalidInput(format!(
                "sequence of length {} exceeds max_positions {}",
                seq.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = seq.ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Records the forward pass of `seq` on `tape`, which must borrow this
    /// encoder's parameters.
    ///
    /// With `trim` only the active positions are fed through the network.
    /// Outputs at those positions equal the full masked computation.
    pub fn forward(&self, tape: &mut Tape<'_>, seq: &Sequence, trim: bool) -> Result<TapeStates> {
        assert!(
            std::ptr::eq(tape.params(), &self.params),
            "tape does not borrow this encoder's parameters"
        );
        self.check_input(seq)?;
        if !self.params.all_finite() {
            return Err(Error::Numeric("encoder parameters contain non-finite values".into()));
        }
        let active = seq.active();
        let (ids, positions, rows, key_mask): (Vec<usize>, Vec<usize>, Vec<usize>, Option<Mat>) = if trim {
            (
                active.iter().map(|&p| seq.ids[p] as usize).collect(),
                active.clone(),
                (0..active.len()).collect(),
                None,
            )
        } else {
            let n = seq.len();
            let masked = seq.mask.iter().any(|m| !m);
            let km = masked.then(|| {
                let mut m = Mat::zeros(n, n);
                for r in 0..n {
                    for c in 0..n {
                        if !seq.mask[c] {
                            m.data[r * n + c] = f64::NEG_INFINITY;
                        }
                    }
                }
                m
            });
            (seq.ids.iter().map(|&i| i as usize).collect(), (0..n).collect(), active, km)
        };
        let l = &self.layout;
        let mut layers = Vec::with_capacity(self.config.n_layers + 1);
        if ids.is_empty() {
            let z = tape.input(Mat::zeros(0, self.config.hidden_dim));
            layers.resize(self.config.n_layers + 1, z);
            return Ok(TapeStates { layers, rows });
        }
        let tok = tape.param(l.tok);
        let pos = tape.param(l.pos);
        let te = tape.gather(tok, &ids);
        let pe = tape.gather(pos, &positions);
        let e = tape.add(te, pe);
        let (g, b) = (tape.param(l.ln_g), tape.param(l.ln_b));
        let mut h = tape.layer_norm(e, g, b, LN_EPS);
        layers.push(h);
        let mask_var = key_mask.map(|m| tape.input(m));
        for blk in &l.blocks {
            h = self.block(tape, blk, h, mask_var);
            layers.push(h);
        }
        Ok(TapeStates { layers, rows })
    }

    fn block(&self, t: &mut Tape<'_>, b: &BlockIds, h: Var, mask: Option<Var>) -> Var {
        let linear = |t: &mut Tape<'_>, x: Var, w: ParamId, bias: ParamId| {
            let (w, bias) = (t.param(w), t.param(bias));
            let y = t.matmul(x, w);
            t.add_row(y, bias)
        };
        let (g, be) = (t.param(b.ln1_g), t.param(b.ln1_b));
        let a = t.layer_norm(h, g, be, LN_EPS);
        let q = linear(t, a, b.wq, b.bq);
        let k = linear(t, a, b.wk, b.bk);
        let v = linear(t, a, b.wv, b.bv);
        let heads = self.config.n_heads;
        let dh = self.config.hidden_dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Vec::with_capacity(heads);
        for hd in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    t.slice_cols(q, hd * dh, dh),
                    t.slice_cols(k, hd * dh, dh),
                    t.slice_cols(v, hd * dh, dh),
                )
            };
            let s = t.matmul_bt(qh, kh);
            let mut s = t.scale(s, scale);
            if let Some(m) = mask {
                s = t.add(s, m);
            }
            let p = t.softmax_rows(s);
            ctx.push(t.matmul(p, vh));
        }
        let c = if heads == 1 { ctx[0] } else { t.concat_cols(&ctx) };
        let o = linear(t, c, b.wo, b.bo);
        let h = t.add(h, o);
        let (g, be) = (t.param(b.ln2_g), t.param(b.ln2_b));
        let a = t.layer_norm(h, g, be, LN_EPS);
        let f = linear(t, a, b.w1, b.b1);
        let f = t.gelu(f);
        let f = linear(t, f, b.w2, b.b2);
        t.add(h, f)
    }

    /// All layer outputs over the full (padded) sequence.
    pub fn encode(&self, seq: &Sequence) -> Result<HiddenStates> {
        let mut tape = Tape::new(&self.params);
        let st = self.forward(&mut tape, seq, false)?;
        Ok(HiddenStates {
            layers: st.layers.iter().map(|&v| tape.value(v).clone()).collect(),
            mask: seq.mask.clone(),
        })
    }

    /// Mean-pooled top layer.
    pub fn pooled(&self, seq: &Sequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let st = self.forward(&mut tape, seq, true)?;
        let top = *st.layers.last().expect("layers");
        let all = vec![true; st.rows.len()];
        Ok(pool(tape.value(top), &all))
    }
}

fn block_ids(b: &BlockIds) -> [ParamId; 16] {
    [
        b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo, b.ln2_g, b.ln2_b, b.w1, b.b1, b.w2, b.b2,
    ]
}

/// Token budgets for natural-language and code sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub k_nl: usize,
    pub k_pl: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { k_nl: 35, k_pl: 80 }
    }
}

/// Title tokens followed by description tokens, truncated to `k_nl`.
pub fn issue_sequence(issue: &IssueRecord, vocab: &Vocab, b: &Budgets) -> Sequence {
    let toks: Vec<&String> = issue.text_tokens().take(b.k_nl).collect();
    tokenize(vocab, &toks, b.k_nl)
}

pub fn message_sequence(commit: &CommitRecord, vocab: &Vocab, b: &Budgets) -> Sequence {
    tokenize(vocab, &commit.message_tokens, b.k_nl)
}

/// Diff tokens of every changed file in commit order, truncated to `k_pl`.
pub fn code_sequence(commit: &CommitRecord, vocab: &Vocab, b: &Budgets) -> Sequence {
    let toks: Vec<&String> = commit.code_tokens().take(b.k_pl).collect();
    tokenize(vocab, &toks, b.k_pl)
}

/// `[p ; p]` for the pooled issue text `p`.
pub fn represent_issue(state: &EncoderState, vocab: &Vocab, b: &Budgets, issue: &IssueRecord) -> Result<Vec<f64>> {
    let p = state.pooled(&issue_sequence(issue, vocab, b))?;
    Ok([p.clone(), p].concat())
}

/// `[pooled message ; pooled code]`.
pub fn represent_commit(
    state: &EncoderState,
    vocab: &Vocab,
    b: &Budgets,
    commit: &CommitRecord,
) -> Result<Vec<f64>> {
    let m = state.pooled(&message_sequence(commit, vocab, b))?;
    let c = state.pooled(&code_sequence(commit, vocab, b))?;
    Ok([m, c].concat())
}

#[cfg(test)]
mod tests;
