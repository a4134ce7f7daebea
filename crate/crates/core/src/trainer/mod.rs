//! Multi-task fine-tuning of the student encoder.
//!
//! Each batch combines three losses over cosine similarities: the recovery
//! loss on true and generated false links, an in-batch contrastive loss
//! between commits, and a cross-entropy loss of an auxiliary classifier that
//! predicts whether an issue mentions a changed source file.

mod losses;

pub use losses::{
    aux_forward, aux_loss, contrastive_loss, contrastive_on_tape, main_loss, main_loss_on_tape, total_loss,
    AuxClassifier, ContrastiveTerm, ContrastiveValue, LossWeights, PROB_FLOOR,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, Mat, Tape, Var};
use crate::checkpoint;
use crate::corpus::{CommitRecord, Corpus, IssueRecord, LinkRecord};
use crate::encoder::{
    code_sequence, issue_sequence, message_sequence, tokenize, Budgets, EncoderState, Sequence, Vocab,
};
use crate::error::{Error, Result};
use crate::links::{cosine, generate_false_links_similarity, IssueCodeLink};
use crate::optim::Adam;
use crate::retrieval::{evaluate, LinkScorer, MetricReport, RankingQuery};

pub const MODEL_FILE: &str = "model.safetensors";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub temperature: f64,
    pub lambda_cl: f64,
    pub lambda_aux: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 4e-5,
            lr_decay: 0.8,
            decay_every: 6,
            temperature: 0.07,
            lambda_cl: 1.0,
            lambda_aux: 1.0,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        for (n, v) in [("lambda_cl", self.lambda_cl), ("lambda_aux", self.lambda_aux)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{n} must be non-negative, got {v}"));
            }
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.decay_every == 0 {
            return bad("lr_decay must be in (0, 1] and decay_every positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        Ok(())
    }

    /// Learning rate during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(((epoch.max(1) - 1) / self.decay_every) as i32)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            main: 1.0,
            cl: self.lambda_cl,
            aux: self.lambda_aux,
        }
    }
}

/// Student encoder, auxiliary classifier and the vocabulary they read.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub encoder: EncoderState,
    pub classifier: AuxClassifier,
    pub vocab: Vocab,
    pub budgets: Budgets,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    encoder: serde_json::Value,
    budgets: Budgets,
    aux_dim: usize,
}

impl LinkModel {
    pub fn new(encoder: EncoderState, vocab: Vocab, budgets: Budgets, classifier_seed: u64) -> Result<Self> {
        if vocab.len() != encoder.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens, encoder expects {}",
                vocab.len(),
                encoder.config.vocab_size
            )));
        }
        let longest = budgets.k_nl.max(budgets.k_pl);
        if longest > encoder.config.max_positions {
            return Err(Error::Config(format!(
                "token budget {longest} exceeds max_positions {}",
                encoder.config.max_positions
            )));
        }
        let classifier = AuxClassifier::new(encoder.config.hidden_dim, classifier_seed);
        Ok(Self {
            encoder,
            classifier,
            vocab,
            budgets,
        })
    }

    pub fn issue_rep(&self, issue: &IssueRecord) -> Result<Vec<f64>> {
        crate::encoder::represent_issue(&self.encoder, &self.vocab, &self.budgets, issue)
    }

    pub fn commit_rep(&self, commit: &CommitRecord) -> Result<Vec<f64>> {
        crate::encoder::represent_commit(&self.encoder, &self.vocab, &self.budgets, commit)
    }

    pub fn score(&self, issue: &IssueRecord, commit: &CommitRecord) -> Result<f64> {
        Ok(cosine(&self.issue_rep(issue)?, &self.commit_rep(commit)?))
    }

    pub fn predict(&self, issue: &IssueRecord, commit: &CommitRecord, threshold: f64) -> Result<(f64, bool)> {
        Ok(crate::retrieval::predict(self.score(issue, commit)?, threshold))
    }

    /// Writes the model archive and vocabulary into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string(&ModelMeta {
            encoder: self.encoder.meta_json(),
            budgets: self.budgets,
            aux_dim: self.classifier.dim(),
        })?;
        checkpoint::save(
            &dir.join(MODEL_FILE),
            &[("encoder.", &self.encoder.params), ("aux.", &self.classifier.params)],
            &meta,
        )?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let arc = checkpoint::load(&dir.join(MODEL_FILE))?;
        let meta: ModelMeta = serde_json::from_str(&arc.meta)
            .map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))?;
        let encoder = EncoderState::from_archive(&arc, "encoder.")?;
        let mut classifier = AuxClassifier::zeros(meta.aux_dim);
        arc.restore("aux.", &mut classifier.params)?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        if vocab.len() != encoder.config.vocab_size {
            return Err(Error::Checkpoint("vocabulary does not match the encoder".into()));
        }
        Ok(Self {
            encoder,
            classifier,
            vocab,
            budgets: meta.budgets,
        })
    }
}

/// Scores pairs with a [`LinkModel`], caching representations by id.
pub struct ModelScorer<'a> {
    model: &'a LinkModel,
    corpus: &'a Corpus,
    issues: HashMap<String, Vec<f64>>,
    commits: HashMap<String, Vec<f64>>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a LinkModel, corpus: &'a Corpus) -> Self {
        Self {
            model,
            corpus,
            issues: HashMap::new(),
            commits: HashMap::new(),
        }
    }
}

impl LinkScorer for ModelScorer<'_> {
    fn score(&mut self, issue_id: &str, commit_id: &str) -> Result<f64> {
        if !self.issues.contains_key(issue_id) {
            let i = self
                .corpus
                .issue(issue_id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown issue {issue_id}")))?;
            self.issues.insert(issue_id.to_string(), self.model.issue_rep(i)?);
        }
        if !self.commits.contains_key(commit_id) {
            let c = self
                .corpus
                .commit(commit_id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown commit {commit_id}")))?;
            self.commits.insert(commit_id.to_string(), self.model.commit_rep(c)?);
        }
        Ok(cosine(&self.issues[issue_id], &self.commits[commit_id]))
    }
}

/// One optimization step's worth of links and auxiliary examples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub true_links: Vec<LinkRecord>,
    pub false_links: Vec<LinkRecord>,
    pub aux: Vec<IssueCodeLink>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLosses {
    pub main: f64,
    pub cl: f64,
    pub aux: f64,
    pub total: f64,
    pub cl_anchors: usize,
    pub cl_skipped: usize,
}

#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub encoder: Grads,
    pub classifier: Grads,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SeqKey {
    Issue(usize),
    Message(usize),
    Code(usize),
    File(usize, usize),
}

/// Encoder tapes of every distinct sequence in a batch.
struct Forward<'m> {
    model: &'m LinkModel,
    corpus: &'m Corpus,
    slots: BTreeMap<SeqKey, usize>,
    tapes: Vec<(Tape<'m>, Var)>,
}

impl<'m> Forward<'m> {
    fn new(model: &'m LinkModel, corpus: &'m Corpus) -> Self {
        Self {
            model,
            corpus,
            slots: BTreeMap::new(),
            tapes: Vec::new(),
        }
    }

    fn sequence(&self, key: SeqKey) -> Sequence {
        let (c, m) = (self.corpus, self.model);
        match key {
            SeqKey::Issue(i) => issue_sequence(&c.issues[i], &m.vocab, &m.budgets),
            SeqKey::Message(j) => message_sequence(&c.commits[j], &m.vocab, &m.budgets),
            SeqKey::Code(j) => code_sequence(&c.commits[j], &m.vocab, &m.budgets),
            SeqKey::File(j, f) => tokenize(&m.vocab, &c.commits[j].changed_files[f].diff_tokens, m.budgets.k_pl),
        }
    }

    fn slot(&mut self, key: SeqKey) -> Result<usize> {
        if let Some(&s) = self.slots.get(&key) {
            return Ok(s);
        }
        let seq = self.sequence(key);
        let enc = &self.model.encoder;
        let mut tape = Tape::new(&enc.params);
        let st = enc.forward(&mut tape, &seq, true)?;
        let top = *st.layers.last().expect("layers");
        let pooled = tape.mean_rows(top, &st.rows);
        self.tapes.push((tape, pooled));
        self.slots.insert(key, self.tapes.len() - 1);
        Ok(self.tapes.len() - 1)
    }

    fn pooled(&self, slot: usize) -> &Mat {
        let (t, v) = &self.tapes[slot];
        t.value(*v)
    }

    fn issue_slot(&mut self, id: &str) -> Result<usize> {
        let i = self
            .corpus
            .issue_pos(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown issue {id}")))?;
        self.slot(SeqKey::Issue(i))
    }

    fn commit_slots(&mut self, id: &str) -> Result<(usize, usize)> {
        let j = self
            .corpus
            .commit_pos(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown commit {id}")))?;
        Ok((self.slot(SeqKey::Message(j))?, self.slot(SeqKey::Code(j))?))
    }

    fn file_slot(&mut self, ex: &IssueCodeLink) -> Result<usize> {
        let j = self
            .corpus
            .commit_pos(&ex.commit_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown commit {}", ex.commit_id)))?;
        if ex.file_index >= self.corpus.commits[j].changed_files.len() {
            return Err(Error::InvalidInput(format!(
                "commit {} has no file #{}",
                ex.commit_id, ex.file_index
            )));
        }
        self.slot(SeqKey::File(j, ex.file_index))
    }

    fn add_links(&mut self, links: &[LinkRecord]) -> Result<()> {
        for l in links {
            self.issue_slot(&l.issue_id)?;
            self.commit_slots(&l.commit_id)?;
        }
        Ok(())
    }

    fn add_aux(&mut self, aux: &[IssueCodeLink]) -> Result<()> {
        for ex in aux {
            self.issue_slot(&ex.issue_id)?;
            self.file_slot(ex)?;
        }
        Ok(())
    }

    /// Combined loss of `batch`, plus gradients when `want_grads`.
    fn losses(&mut self, batch: &Batch, w: &LossWeights, tau: f64, want_grads: bool) -> Result<(BatchLosses, Option<BatchGrads>)> {
        self.add_links(&batch.true_links)?;
        self.add_links(&batch.false_links)?;
        self.add_aux(&batch.aux)?;
        let clf = &self.model.classifier;
        let mut head = Tape::new(&clf.params);
        let inputs: Vec<Var> = (0..self.tapes.len()).map(|s| head.input(self.pooled(s).clone())).collect();

        let mut issue_reps: HashMap<usize, Var> = HashMap::new();
        let mut commit_reps: HashMap<(usize, usize), Var> = HashMap::new();
        let mut rep_of = |f: &mut Self, head: &mut Tape<'_>, l: &LinkRecord| -> Result<(Var, Var)> {
            let si = f.issue_slot(&l.issue_id)?;
            let sc = f.commit_slots(&l.commit_id)?;
            let s = *issue_reps
                .entry(si)
                .or_insert_with(|| head.concat_cols(&[inputs[si], inputs[si]]));
            let q = *commit_reps
                .entry(sc)
                .or_insert_with(|| head.concat_cols(&[inputs[sc.0], inputs[sc.1]]));
            Ok((s, q))
        };

        let mut main_terms = Vec::new();
        let mut cl_reps = Vec::new();
        let mut groups = Vec::new();
        for l in &batch.true_links {
            let (s, q) = rep_of(self, &mut head, l)?;
            main_terms.push((s, q, 1.0));
            cl_reps.push(q);
            groups.push(l.issue_id.as_str());
        }
        for l in &batch.false_links {
            let (s, q) = rep_of(self, &mut head, l)?;
            main_terms.push((s, q, f64::from(l.label())));
        }
        let main = main_loss_on_tape(&mut head, &main_terms);
        let cl = contrastive_on_tape(&mut head, &cl_reps, &groups, tau);
        let mut aux_parts = Vec::new();
        for ex in &batch.aux {
            let si = self.issue_slot(&ex.issue_id)?;
            let sf = self.file_slot(ex)?;
            aux_parts.push(clf.loss_on_tape(&mut head, inputs[si], inputs[sf], ex.label)?);
        }
        let aux = if aux_parts.is_empty() {
            head.input(Mat::scalar(0.0))
        } else {
            head.sum(&aux_parts)
        };
        let wm = head.scale(main, w.main);
        let wc = head.scale(cl.loss, w.cl);
        let wa = head.scale(aux, w.aux);
        let total = head.sum(&[wm, wc, wa]);
        let out = BatchLosses {
            main: head.scalar(main),
            cl: head.scalar(cl.loss),
            aux: head.scalar(aux),
            total: head.scalar(total),
            cl_anchors: cl.anchors,
            cl_skipped: cl.skipped,
        };
        if !want_grads {
            return Ok((out, None));
        }
        let mut clf_grads = clf.params.zero_grads();
        let node_grads = head.backward(total, Mat::scalar(1.0), &mut clf_grads);
        let mut enc_grads = self.model.encoder.params.zero_grads();
        for (slot, (tape, pooled)) in self.tapes.iter().enumerate() {
            if let Some(g) = node_grads.wrt(inputs[slot]) {
                tape.backward(*pooled, g.clone(), &mut enc_grads);
            }
        }
        Ok((
            out,
            Some(BatchGrads {
                encoder: enc_grads,
                classifier: clf_grads,
            }),
        ))
    }
}

/// Losses of a fully specified batch, and optionally their gradients with
/// respect to the encoder and classifier parameters.
pub fn compute_batch(
    model: &LinkModel,
    corpus: &Corpus,
    batch: &Batch,
    weights: &LossWeights,
    temperature: f64,
    want_grads: bool,
) -> Result<(BatchLosses, Option<BatchGrads>)> {
    Forward::new(model, corpus).losses(batch, weights, temperature, want_grads)
}

/// Issue groups in random order, packed into batches of `batch_size` links.
/// A trailing single-link batch joins the previous one.
pub fn make_batches(links: &[LinkRecord], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<LinkRecord>> {
    let mut groups: BTreeMap<&str, Vec<LinkRecord>> = BTreeMap::new();
    for l in links {
        groups.entry(&l.issue_id).or_default().push(l.clone());
    }
    let mut order: Vec<Vec<LinkRecord>> = groups.into_values().collect();
    order.shuffle(rng);
    let flat: Vec<LinkRecord> = order.into_iter().flatten().collect();
    let mut batches: Vec<Vec<LinkRecord>> = flat.chunks(batch_size.max(1)).map(<[_]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Everything the training loop reads besides the model.
#[derive(Debug, Clone)]
pub struct TrainData<'c> {
    pub corpus: &'c Corpus,
    pub train: Vec<LinkRecord>,
    pub aux: Vec<IssueCodeLink>,
    pub valid_queries: Vec<RankingQuery>,
    /// Every known true link; generated false links never hit one.
    pub known_true: HashSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Per-batch loss values averaged over the epoch's batches.
    pub main: f64,
    pub cl: f64,
    pub aux: f64,
    pub total: f64,
    pub valid_mrr: f64,
    pub false_links: usize,
    pub cl_skipped: usize,
}

pub enum TrainEvent<'a> {
    FalseLinks { epoch: usize, links: &'a [LinkRecord] },
    Epoch(&'a EpochStats),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The model of the best validation epoch.
    pub model: LinkModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_report: Option<MetricReport>,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,main,cl,aux,total,valid_MRR\n");
    for h in history {
        writeln!(
            s,
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            h.epoch, h.main, h.cl, h.aux, h.total, h.valid_mrr
        )
        .expect("string write");
    }
    s
}

/// Fine-tunes `model` on `data`. With `out_dir` the best model so far and
/// the history are kept on disk, so an aborted run leaves its last good
/// checkpoint behind.
pub fn train(
    mut model: LinkModel,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    observer: &mut dyn FnMut(&TrainEvent<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.encoder.frozen {
        return Err(Error::Config("student encoder is frozen".into()));
    }
    if data.train.iter().filter(|l| l.is_true()).count() < 2 {
        return Err(Error::InvalidInput("training needs at least two true links".into()));
    }
    let train: Vec<LinkRecord> = data.train.iter().filter(|l| l.is_true()).cloned().collect();
    let weights = cfg.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc_opt = Adam::new(&model.encoder.params, cfg.lr);
    let mut clf_opt = Adam::new(&model.classifier.params, cfg.lr);
    let mut aux_order: Vec<usize> = (0..data.aux.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, LinkModel, Option<MetricReport>)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        enc_opt.lr = lr;
        clf_opt.lr = lr;
        let batches = make_batches(&train, cfg.batch_size, &mut rng);
        aux_order.shuffle(&mut rng);
        let mut aux_pos = 0;
        let mut sums = BatchLosses::default();
        let mut epoch_false = Vec::new();
        for batch_true in &batches {
            let mut aux = Vec::new();
            if !aux_order.is_empty() {
                for _ in 0..cfg.batch_size {
                    aux.push(data.aux[aux_order[aux_pos % aux_order.len()]].clone());
                    aux_pos += 1;
                }
            }
            let (losses, grads) = {
                let mut fwd = Forward::new(&model, data.corpus);
                fwd.add_links(batch_true)?;
                let distinct: HashSet<&str> = batch_true.iter().map(|l| l.issue_id.as_str()).collect();
                let false_links = if distinct.len() >= 2 {
                    let mut embed = BTreeMap::new();
                    for l in batch_true {
                        let s = fwd.issue_slot(&l.issue_id)?;
                        embed.insert(l.issue_id.clone(), fwd.pooled(s).data.clone());
                    }
                    generate_false_links_similarity(batch_true, &embed, &data.known_true)?.links
                } else {
                    Vec::new()
                };
                let batch = Batch {
                    true_links: batch_true.clone(),
                    false_links,
                    aux,
                };
                let r = fwd.losses(&batch, &weights, cfg.temperature, true)?;
                epoch_false.extend(batch.false_links);
                r
            };
            if !losses.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss became {} (main {}, cl {}, aux {})", losses.total, losses.main, losses.cl, losses.aux),
                });
            }
            let grads = grads.expect("requested");
            if !grads.encoder.is_finite() || !grads.classifier.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite gradient".into(),
                });
            }
            enc_opt.step(&mut model.encoder.params, &grads.encoder);
            clf_opt.step(&mut model.classifier.params, &grads.classifier);
            sums.main += losses.main;
            sums.cl += losses.cl;
            sums.aux += losses.aux;
            sums.total += losses.total;
            sums.cl_skipped += losses.cl_skipped;
        }
        observer(&TrainEvent::FalseLinks {
            epoch,
            links: &epoch_false,
        });
        let report = if data.valid_queries.is_empty() {
            None
        } else {
            let mut scorer = ModelScorer::new(&model, data.corpus);
            Some(evaluate(&mut scorer, &data.valid_queries)?.report)
        };
        let nb = batches.len() as f64;
        let stats = EpochStats {
            epoch,
            lr,
            main: sums.main / nb,
            cl: sums.cl / nb,
            aux: sums.aux / nb,
            total: sums.total / nb,
            valid_mrr: report.as_ref().map_or(f64::NAN, |r| r.mrr),
            false_links: epoch_false.len(),
            cl_skipped: sums.cl_skipped,
        };
        observer(&TrainEvent::Epoch(&stats));
        let score = report.as_ref().map_or(epoch as f64, |r| r.mrr);
        if best.as_ref().map_or(true, |b| score > b.0) {
            if let Some(dir) = out_dir {
                model.save(dir)?;
            }
            best = Some((score, epoch, model.clone(), report));
        }
        history.push(stats);
        if let Some(dir) = out_dir {
            let p = dir.join("history.csv");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            fs::write(&p, history_csv(&history)).map_err(|e| Error::io(p, e))?;
        }
    }
    let (_, best_epoch, model, best_report) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_report,
    })
}
