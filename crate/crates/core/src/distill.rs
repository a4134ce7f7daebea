//! Intermediate-layer distillation: each student block learns to reproduce
//! the hidden states of one teacher block.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::encoder::{EncoderState, HiddenStates, Sequence};
use crate::error::{Error, Result};
use crate::optim::Adam;

/// Pairs of (teacher block, student block), both 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelMap {
    pairs: Vec<(usize, usize)>,
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self {
            pairs: vec![(1, 1), (5, 2)],
        }
    }
}

impl ChannelMap {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("channel map is empty".into()));
        }
        for (i, &(t, s)) in pairs.iter().enumerate() {
            if t == 0 || s == 0 {
                return Err(Error::Config(format!(
                    "channel t{t}:s{s}: layers are 1-based, the embedding layer is not a channel endpoint"
                )));
            }
            if pairs[..i].iter().any(|&(_, s2)| s2 == s) {
                return Err(Error::Config(format!("student layer {s} appears in more than one channel")));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Teacher blocks in student-layer order, for initializing a student as a
    /// copy of the teacher when every student layer has a channel.
    pub fn teacher_blocks(&self, student_layers: usize) -> Option<Vec<usize>> {
        (1..=student_layers)
            .map(|s| self.pairs.iter().find(|p| p.1 == s).map(|p| p.0))
            .collect()
    }

    /// Checks the map against concrete encoders.
    pub fn validate(&self, teacher_layers: usize, student_layers: usize) -> Result<()> {
        for &(t, s) in &self.pairs {
            if t > teacher_layers {
                return Err(Error::Config(format!(
                    "channel t{t}:s{s}: teacher has {teacher_layers} layers"
                )));
            }
            if s > student_layers {
                return Err(Error::Config(format!(
                    "channel t{t}:s{s}: student has {student_layers} layers"
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for ChannelMap {
    type Err = Error;

    /// Accepts `"t1:s1,t5:s2"` or `"1:1,5:2"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad channel map {s:?}, expected e.g. \"t1:s1,t5:s2\""));
        let mut pairs = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (t, st) = part.split_once(':').ok_or_else(bad)?;
            let t = t.trim().trim_start_matches(['t', 'T']).parse().map_err(|_| bad())?;
            let st = st.trim().trim_start_matches(['s', 'S']).parse().map_err(|_| bad())?;
            pairs.push((t, st));
        }
        Self::new(pairs)
    }
}

impl fmt::Display for ChannelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.pairs.iter().map(|(t, s)| format!("t{t}:s{s}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl TryFrom<String> for ChannelMap {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ChannelMap> for String {
    fn from(c: ChannelMap) -> String {
        c.to_string()
    }
}

fn check_layers(h: &HiddenStates, l: usize, who: &str) -> Result<()> {
    if l == 0 || l > h.n_blocks() {
        return Err(Error::Config(format!("{who} has no layer {l} (1..={})", h.n_blocks())));
    }
    Ok(())
}

/// Squared distance between channel-paired hidden states, summed over
/// channels, active mask positions and dimensions, for one sequence.
pub fn distill_loss(
    h_teacher: &HiddenStates,
    h_student: &HiddenStates,
    channels: &ChannelMap,
    mask: &[bool],
) -> Result<f64> {
    let mut total = 0.0;
    for &(t, s) in channels.pairs() {
        check_layers(h_teacher, t, "teacher")?;
        check_layers(h_student, s, "student")?;
        let (a, b) = (&h_teacher.layers[t], &h_student.layers[s]);
        if a.cols != b.cols {
            return Err(Error::Config(format!(
                "hidden sizes differ: teacher {} vs student {}",
                a.cols, b.cols
            )));
        }
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for (x, y) in a.row(r).iter().zip(b.row(r)) {
                total += (x - y) * (x - y);
            }
        }
    }
    Ok(total)
}

/// Mean of [`distill_loss`] over a batch of (teacher, student) state pairs.
pub fn batch_distill_loss(pairs: &[(HiddenStates, HiddenStates)], channels: &ChannelMap) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for (t, st) in pairs {
        s += distill_loss(t, st, channels, &t.mask)?;
    }
    Ok(s / pairs.len() as f64)
}

/// Teacher hidden states at the active positions of one sequence, one matrix
/// per channel.
#[derive(Debug, Clone)]
pub struct TeacherTargets {
    per_channel: Vec<Mat>,
}

impl TeacherTargets {
    pub fn compute(teacher: &EncoderState, seq: &Sequence, channels: &ChannelMap) -> Result<Self> {
        let mut tape = Tape::new(&teacher.params);
        let st = teacher.forward(&mut tape, seq, true)?;
        Ok(Self {
            per_channel: channels
                .pairs()
                .iter()
                .map(|&(t, _)| tape.value(st.layers[t]).clone())
                .collect(),
        })
    }
}

/// Records the distillation loss of one sequence on `tape`.
pub fn distill_loss_on_tape(
    student: &EncoderState,
    tape: &mut Tape<'_>,
    seq: &Sequence,
    targets: &TeacherTargets,
    channels: &ChannelMap,
) -> Result<Var> {
    let st = student.forward(tape, seq, true)?;
    let mut terms = Vec::with_capacity(channels.pairs().len());
    for (&(_, s), target) in channels.pairs().iter().zip(&targets.per_channel) {
        terms.push(tape.masked_sq_dist(st.layers[s], target, &st.rows));
    }
    Ok(tape.sum(&terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Where per-epoch student checkpoints go; `None` keeps nothing on disk.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for DistillSchedule {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: EncoderState,
    /// Mean loss over the corpus before training, then after every epoch.
    pub curve: Vec<f64>,
}

impl DistillOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.curve[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.curve.last().expect("non-empty curve")
    }

    /// `epoch,mean_loss` rows; epoch 0 is the untrained student.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (e, l) in self.curve.iter().enumerate() {
            s.push_str(&format!("{e},{l:.12e}\n"));
        }
        s
    }

    pub fn write_curve(&self, path: &Path) -> Result<()> {
        fs::write(path, self.curve_csv()).map_err(|e| Error::io(path, e))
    }
}

fn mean_loss(student: &EncoderState, seqs: &[Sequence], targets: &[TeacherTargets], ch: &ChannelMap) -> Result<f64> {
    let mut s = 0.0;
    for (seq, tg) in seqs.iter().zip(targets) {
        let mut tape = Tape::new(&student.params);
        let v = distill_loss_on_tape(student, &mut tape, seq, tg, ch)?;
        s += tape.scalar(v);
    }
    Ok(s / seqs.len() as f64)
}

/// Trains `student` to match the channel-paired hidden states of the frozen
/// `teacher` over `sequences`.
pub fn run_distillation(
    teacher: &EncoderState,
    mut student: EncoderState,
    sequences: &[Sequence],
    channels: &ChannelMap,
    schedule: &DistillSchedule,
) -> Result<DistillOutcome> {
    if student.frozen {
        return Err(Error::Config("student encoder is frozen".into()));
    }
    if teacher.config.hidden_dim != student.config.hidden_dim {
        return Err(Error::Config(format!(
            "teacher hidden_dim {} differs from student hidden_dim {}",
            teacher.config.hidden_dim, student.config.hidden_dim
        )));
    }
    if teacher.config.vocab_size != student.config.vocab_size {
        return Err(Error::Config("teacher and student vocabularies differ".into()));
    }
    channels.validate(teacher.config.n_layers, student.config.n_layers)?;
    if schedule.batch_size == 0 || !(schedule.lr > 0.0) {
        return Err(Error::Config("distillation needs batch_size > 0 and lr > 0".into()));
    }
    let seqs: Vec<Sequence> = sequences.iter().filter(|s| s.mask.iter().any(|&m| m)).cloned().collect();
    if seqs.is_empty() {
        return Err(Error::InvalidInput("no non-empty sequences to distill on".into()));
    }
    let targets = seqs
        .iter()
        .map(|s| TeacherTargets::compute(teacher, s, channels))
        .collect::<Result<Vec<_>>>()?;

    let initial = mean_loss(&student, &seqs, &targets, channels)?;
    if !initial.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            reason: format!("initial distillation loss is {initial}"),
        });
    }
    let mut curve = vec![initial];
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut opt = Adam::new(&student.params, schedule.lr);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    if let Some(dir) = &schedule.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(schedule.batch_size) {
            let mut grads = student.params.zero_grads();
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new(&student.params);
                let v = distill_loss_on_tape(&student, &mut tape, &seqs[i], &targets[i], channels)?;
                let l = tape.scalar(v);
                if !l.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!("distillation loss became {l}"),
                    });
                }
                tape.backward(v, Mat::scalar(w), &mut grads);
            }
            opt.step(&mut student.params, &grads);
        }
        let l = mean_loss(&student, &seqs, &targets, channels).or_else(|e| match e {
            Error::Numeric(m) => Err(Error::Diverged { epoch, reason: m }),
            e => Err(e),
        })?;
        if !l.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("mean distillation loss became {l}"),
            });
        }
        curve.push(l);
        if let Some(dir) = &schedule.checkpoint_dir {
            student.save(&dir.join(format!("student_epoch{epoch:03}.safetensors")))?;
        }
    }
    Ok(DistillOutcome { student, curve })
}
