use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Mat, ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// Floor applied to a predicted probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Two-layer head over `[s ; c ; |c - s|]`: a tanh layer of width `dim`
/// followed by a linear layer with two logits.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxClassifier {
    pub params: ParamSet,
    dim: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl AuxClassifier {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Self::zeros(dim);
        for (id, fan_in) in [(c.w1, 3 * dim), (c.w2, dim)] {
            let n = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            c.params.get_mut(id).data.iter_mut().for_each(|x| *x = n.sample(&mut rng));
        }
        c
    }

    /// All weights and biases zero.
    pub fn zeros(dim: usize) -> Self {
        let mut params = ParamSet::new();
        let w1 = params.push("f1.weight", Mat::zeros(3 * dim, dim));
        let b1 = params.push("f1.bias", Mat::zeros(1, dim));
        let w2 = params.push("f2.weight", Mat::zeros(dim, 2));
        let b2 = params.push("f2.bias", Mat::zeros(1, 2));
        Self {
            params,
            dim,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Records the class probabilities for pooled issue `s` and code `c`.
    pub fn probs_on_tape(&self, t: &mut Tape<'_>, s: Var, c: Var) -> Result<Var> {
        if !std::ptr::eq(t.params(), &self.params) {
            return Err(Error::Config("tape does not borrow the classifier parameters".into()));
        }
        let (ds, dc) = (t.value(s).shape(), t.value(c).shape());
        if ds != (1, self.dim) || dc != (1, self.dim) {
            return Err(Error::Config(format!(
                "aux classifier expects 1x{} inputs, got {ds:?} and {dc:?}",
                self.dim
            )));
        }
        let diff = t.sub(c, s);
        let ad = t.abs(diff);
        let feat = t.concat_cols(&[s, c, ad]);
        let (w1, b1, w2, b2) = (t.param(self.w1), t.param(self.b1), t.param(self.w2), t.param(self.b2));
        let h = t.matmul(feat, w1);
        let h = t.add_row(h, b1);
        let h = t.tanh(h);
        let z = t.matmul(h, w2);
        let z = t.add_row(z, b2);
        Ok(t.softmax_rows(z))
    }

    /// `-ln(max(p[label], floor))` for one example.
    pub fn loss_on_tape(&self, t: &mut Tape<'_>, s: Var, c: Var, label: u8) -> Result<Var> {
        let p = self.probs_on_tape(t, s, c)?;
        Ok(t.neg_log_pick(p, usize::from(label > 0), PROB_FLOOR))
    }
}

/// Class probabilities `(p0, p1)`.
pub fn aux_forward(issue_pooled: &[f64], code_pooled: &[f64], clf: &AuxClassifier) -> Result<[f64; 2]> {
    let mut t = Tape::new(&clf.params);
    let s = t.input(Mat::row_vector(issue_pooled.to_vec()));
    let c = t.input(Mat::row_vector(code_pooled.to_vec()));
    let p = clf.probs_on_tape(&mut t, s, c)?;
    let v = &t.value(p).data;
    Ok([v[0], v[1]])
}

/// Summed cross-entropy over `(issue pooled, code pooled, label)` examples.
pub fn aux_loss(examples: &[(Vec<f64>, Vec<f64>, u8)], clf: &AuxClassifier) -> Result<f64> {
    let mut total = 0.0;
    for (s, c, y) in examples {
        let p = aux_forward(s, c, clf)?;
        total -= p[usize::from(*y > 0)].max(PROB_FLOOR).ln();
    }
    Ok(total)
}

/// `sum |y - cos(s, q)|` over `(issue rep, commit rep, label)` terms.
pub fn main_loss_on_tape(t: &mut Tape<'_>, terms: &[(Var, Var, f64)]) -> Var {
    let parts: Vec<Var> = terms
        .iter()
        .map(|&(s, q, y)| {
            let c = t.cosine(s, q);
            let d = t.affine(c, -1.0, y);
            t.abs(d)
        })
        .collect();
    if parts.is_empty() {
        t.input(Mat::scalar(0.0))
    } else {
        t.sum(&parts)
    }
}

pub fn main_loss(terms: &[(Vec<f64>, Vec<f64>, f64)]) -> f64 {
    terms.iter().map(|(s, q, y)| (y - crate::links::cosine(s, q)).abs()).sum()
}

#[derive(Debug, Clone)]
pub struct ContrastiveTerm {
    pub loss: Var,
    /// Loss of every anchor that was not skipped, by link index.
    pub per_anchor: Vec<(usize, Var)>,
    pub anchors: usize,
    /// Anchors whose whole batch belongs to their own group.
    pub skipped: usize,
}

/// In-batch contrastive loss over commit representations `reps`, where
/// `groups[i]` identifies the issue of link `i`.
///
/// The positive of anchor `i` is the first other link of its group, or the
/// anchor itself; negatives are all links of other groups.
pub fn contrastive_on_tape<G: PartialEq>(t: &mut Tape<'_>, reps: &[Var], groups: &[G], tau: f64) -> ContrastiveTerm {
    assert_eq!(reps.len(), groups.len());
    let mut parts = Vec::new();
    let mut per_anchor = Vec::new();
    let mut skipped = 0;
    for i in 0..reps.len() {
        let negs: Vec<usize> = (0..reps.len()).filter(|&j| groups[j] != groups[i]).collect();
        if negs.is_empty() {
            skipped += 1;
            continue;
        }
        let pos = (0..reps.len()).find(|&j| j != i && groups[j] == groups[i]).unwrap_or(i);
        let mut sims = Vec::with_capacity(negs.len() + 1);
        for j in std::iter::once(pos).chain(negs) {
            let c = t.cosine(reps[i], reps[j]);
            sims.push(t.scale(c, 1.0 / tau));
        }
        let row = t.concat_cols(&sims);
        let lse = t.logsumexp(row);
        let l = t.sub(lse, sims[0]);
        per_anchor.push((i, l));
        parts.push(l);
    }
    let anchors = parts.len();
    let loss = if parts.is_empty() {
        t.input(Mat::scalar(0.0))
    } else {
        t.sum(&parts)
    };
    ContrastiveTerm {
        loss,
        per_anchor,
        anchors,
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveValue {
    pub loss: f64,
    pub anchors: usize,
    pub skipped: usize,
}

pub fn contrastive_loss<G: PartialEq>(reps: &[Vec<f64>], groups: &[G], tau: f64) -> Result<ContrastiveValue> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if reps.len() != groups.len() {
        return Err(Error::InvalidInput("one group id per representation required".into()));
    }
    let mut t = Tape::detached();
    let vars: Vec<Var> = reps.iter().map(|r| t.input(Mat::row_vector(r.clone()))).collect();
    let term = contrastive_on_tape(&mut t, &vars, groups, tau);
    Ok(ContrastiveValue {
        loss: t.scalar(term.loss),
        anchors: term.anchors,
        skipped: term.skipped,
    })
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub main: f64,
    pub cl: f64,
    pub aux: f64,
}

pub fn total_loss(main: f64, cl: f64, aux: f64, w: &LossWeights) -> f64 {
    w.main * main + w.cl * cl + w.aux * aux
}
