use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{DistractorPool, EvalSplit, RunConfig};
use super::prepare::{build_vocab, VOCAB_MIN_FREQ};
use crate::corpus::{
    generate_synthetic_corpus, read_jsonl, read_links, require_artifact, save_project, split_links, write_jsonl,
    write_links, Corpus, LinkRecord, RecordFormat, Schema,
};
use crate::distill::{run_distillation, DistillSchedule};
use crate::encoder::{code_sequence, issue_sequence, message_sequence, EncoderState, Sequence, Vocab};
use crate::error::{Error, Result};
use crate::links::{
    extract_true_links, generate_false_links_time, generate_issue_code_links, pair_set, IssueCodeLink,
};
use crate::retrieval::{build_queries, evaluate, CorpusStats, Evaluation, RankingQuery, VsmScorer};
use crate::trainer::{history_csv, train, LinkModel, ModelScorer, TrainData, TrainEvent};

/// Pipeline stages in chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Preprocess,
    Links,
    Distill,
    Train,
    Eval,
    Vsm,
}

impl Stage {
    pub const CHAIN: [Stage; 7] = [
        Stage::Synth,
        Stage::Preprocess,
        Stage::Links,
        Stage::Distill,
        Stage::Train,
        Stage::Eval,
        Stage::Vsm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Links => "links",
            Stage::Distill => "distill",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Vsm => "vsm",
        }
    }

    pub fn run(self, cfg: &RunConfig) -> Result<()> {
        match self {
            Stage::Synth => cmd_synth(cfg),
            Stage::Preprocess => cmd_preprocess(cfg),
            Stage::Links => cmd_links(cfg),
            Stage::Distill => cmd_distill(cfg),
            Stage::Train => cmd_train(cfg),
            Stage::Eval => cmd_eval(cfg),
            Stage::Vsm => cmd_vsm(cfg),
        }
    }
}

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingArtifact { .. } => 2,
        _ => 1,
    }
}

/// Runs every stage in order, stopping at the first failure.
pub fn run_chain(cfg: &RunConfig) -> Result<()> {
    for stage in Stage::CHAIN {
        stage.run(cfg)?;
    }
    Ok(())
}

fn announce(stage: Stage, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let mut shown = cfg.clone();
    if let Ok(v) = Vocab::load(&cfg.layout().vocab()) {
        shown.teacher.vocab_size = v.len();
        shown.student.vocab_size = v.len();
    }
    println!("# tracelink {}: resolved config", stage.name());
    print!("{}", shown.to_toml()?);
    println!("# ---");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn save_run_file(cfg: &RunConfig) -> Result<()> {
    let mut portable = cfg.clone();
    portable.out = None;
    portable.save(&cfg.layout().run_file())
}

/// Writes a synthetic raw project and the run file for the chain.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    announce(Stage::Synth, cfg)?;
    let synth = generate_synthetic_corpus(&cfg.synth)?;
    let raw = cfg.raw_dir();
    save_project(&raw, &synth.issues, &synth.commits)?;
    save_run_file(cfg)?;
    println!(
        "synth: {} issues, {} commits, {} tagged links -> {}",
        synth.issues.len(),
        synth.commits.len(),
        synth.true_links.len(),
        raw.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PreprocessReport {
    load: crate::corpus::LoadReport,
    issues: usize,
    commits: usize,
    vocab: usize,
    vocab_min_freq: usize,
}

/// Raw project to token-annotated records plus the shared vocabulary.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    announce(Stage::Preprocess, cfg)?;
    let layout = cfg.layout();
    let raw = cfg.raw_dir();
    require_artifact(raw.join(crate::corpus::ISSUES_FILE), "synth")?;
    require_artifact(raw.join(crate::corpus::COMMITS_FILE), "synth")?;
    let (corpus, load) = Corpus::load(&raw, &cfg.project.schema)?;
    let vocab = build_vocab(&corpus, VOCAB_MIN_FREQ);
    save_project(&layout.data(), &corpus.issues, &corpus.commits)?;
    vocab.save(&layout.vocab())?;
    let report = PreprocessReport {
        load,
        issues: corpus.issues.len(),
        commits: corpus.commits.len(),
        vocab: vocab.len(),
        vocab_min_freq: VOCAB_MIN_FREQ,
    };
    write_json(&layout.data().join("report.json"), &report)?;
    if !layout.run_file().exists() {
        save_run_file(cfg)?;
    }
    println!(
        "preprocess: {} issues, {} commits ({} + {} lines skipped), vocab {}",
        report.issues,
        report.commits,
        load.issues.skipped(),
        load.commits.skipped(),
        report.vocab
    );
    Ok(())
}

fn data_schema(cfg: &RunConfig) -> Schema {
    Schema {
        format: RecordFormat::Preprocessed,
        ..cfg.project.schema.clone()
    }
}

fn load_data(cfg: &RunConfig) -> Result<Corpus> {
    let data = cfg.layout().data();
    require_artifact(data.join(crate::corpus::ISSUES_FILE), "preprocess")?;
    require_artifact(data.join(crate::corpus::COMMITS_FILE), "preprocess")?;
    Ok(Corpus::load(&data, &data_schema(cfg))?.0)
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocab> {
    Vocab::load(&require_artifact(cfg.layout().vocab(), "preprocess")?)
}

fn links_file(cfg: &RunConfig, name: &str) -> Result<Vec<LinkRecord>> {
    read_links(&require_artifact(cfg.layout().link_file(name), "links")?)
}

#[derive(Serialize)]
struct LinksReport {
    true_links: usize,
    unknown_issue_tags: usize,
    train: usize,
    valid: usize,
    test: usize,
    issue_code: usize,
    issue_code_positive: usize,
    false_time: usize,
    false_time_skipped_issues: usize,
}

/// True links, their split, issue-code examples and time-window false links.
pub fn cmd_links(cfg: &RunConfig) -> Result<()> {
    announce(Stage::Links, cfg)?;
    let layout = cfg.layout();
    let corpus = load_data(cfg)?;
    let text = cfg.project.schema.text.build()?;
    let extracted = extract_true_links(&corpus.issues, &corpus.commits);
    let splits = split_links(&extracted.links, &cfg.split)?;
    let aux = generate_issue_code_links(&splits.train, &corpus, &text)?;
    let false_time = generate_false_links_time(&splits.train, &corpus, &cfg.false_links)?;

    write_links(&layout.link_file("true"), &extracted.links)?;
    write_links(&layout.link_file("train"), &splits.train)?;
    write_links(&layout.link_file("valid"), &splits.valid)?;
    write_links(&layout.link_file("test"), &splits.test)?;
    write_jsonl(&layout.link_file("issue_code"), &aux)?;
    write_links(&layout.link_file("false_time"), &false_time.links)?;
    let report = LinksReport {
        true_links: extracted.links.len(),
        unknown_issue_tags: extracted.unknown_issue,
        train: splits.train.len(),
        valid: splits.valid.len(),
        test: splits.test.len(),
        issue_code: aux.len(),
        issue_code_positive: aux.iter().filter(|a| a.label == 1).count(),
        false_time: false_time.links.len(),
        false_time_skipped_issues: false_time.skipped,
    };
    write_json(&layout.links().join("summary.json"), &report)?;
    println!(
        "links: {} true ({} train / {} valid / {} test), {} issue-code examples",
        report.true_links, report.train, report.valid, report.test, report.issue_code
    );
    Ok(())
}

/// Token sequences of the training issues and their commits, sampled down to
/// `max_sequences` with the distillation seed.
pub fn distill_sequences(cfg: &RunConfig, corpus: &Corpus, train: &[LinkRecord], vocab: &Vocab) -> Result<Vec<Sequence>> {
    let mut seqs = Vec::new();
    let mut seen_issues = BTreeSet::new();
    for l in train {
        let (issue, commit) = corpus.resolve(l)?;
        if seen_issues.insert(issue.issue_id.as_str()) {
            seqs.push(issue_sequence(issue, vocab, &cfg.budgets));
        }
        seqs.push(message_sequence(commit, vocab, &cfg.budgets));
        seqs.push(code_sequence(commit, vocab, &cfg.budgets));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.distill.seed);
    seqs.shuffle(&mut rng);
    seqs.truncate(cfg.distill.max_sequences);
    Ok(seqs)
}

/// The frozen teacher: loaded from `project.teacher_checkpoint` or freshly initialized.
pub fn build_teacher(cfg: &RunConfig, vocab: &Vocab) -> Result<EncoderState> {
    let mut teacher = match &cfg.project.teacher_checkpoint {
        Some(p) => EncoderState::load(p)?,
        None => EncoderState::new(crate::encoder::EncoderConfig {
            vocab_size: vocab.len(),
            ..cfg.teacher.clone()
        })?,
    };
    if teacher.config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "teacher vocabulary has {} entries, project vocabulary {}",
            teacher.config.vocab_size,
            vocab.len()
        )));
    }
    teacher.frozen = true;
    Ok(teacher)
}

/// Distills the teacher into a fresh student.
pub fn cmd_distill(cfg: &RunConfig) -> Result<()> {
    announce(Stage::Distill, cfg)?;
    let layout = cfg.layout();
    let corpus = load_data(cfg)?;
    let vocab = load_vocab(cfg)?;
    let train = links_file(cfg, "train")?;
    let teacher = build_teacher(cfg, &vocab)?;
    let channels = &cfg.distill.channels;
    let student = if cfg.distill.init_from_teacher {
        let blocks = channels.teacher_blocks(cfg.student.n_layers).ok_or_else(|| {
            Error::Config("init_from_teacher needs a channel for every student layer".into())
        })?;
        EncoderState::copy_blocks(&teacher, &blocks)?
    } else {
        EncoderState::new(crate::encoder::EncoderConfig {
            vocab_size: vocab.len(),
            ..cfg.student.clone()
        })?
    };
    let seqs = distill_sequences(cfg, &corpus, &train, &vocab)?;
    let schedule = DistillSchedule {
        epochs: cfg.distill.epochs,
        lr: cfg.distill.lr,
        batch_size: cfg.distill.batch_size,
        seed: cfg.distill.seed,
        checkpoint_dir: Some(layout.distill_checkpoints()),
    };
    let outcome = run_distillation(&teacher, student, &seqs, channels, &schedule)?;
    teacher.save(&layout.teacher())?;
    outcome.student.save(&layout.student())?;
    outcome.write_curve(&layout.distill_curve())?;
    println!(
        "distill: {} sequences, channels {}, loss {:.6} -> {:.6}",
        seqs.len(),
        channels,
        outcome.initial_loss(),
        outcome.final_loss()
    );
    Ok(())
}

fn query_pool(cfg: &RunConfig, split: EvalSplit) -> Result<(Vec<LinkRecord>, Option<Vec<LinkRecord>>)> {
    let name = match split {
        EvalSplit::Valid => "valid",
        EvalSplit::Test => "test",
    };
    let links = links_file(cfg, name)?;
    let pool = match cfg.eval.distractors {
        DistractorPool::Split => None,
        DistractorPool::Heldout => {
            let mut p = links_file(cfg, "valid")?;
            p.extend(links_file(cfg, "test")?);
            Some(p)
        }
        DistractorPool::All => Some(links_file(cfg, "true")?),
    };
    Ok((links, pool))
}

/// Ranking queries for a split under the run's evaluation settings.
pub fn queries_for(cfg: &RunConfig, split: EvalSplit) -> Result<Vec<RankingQuery>> {
    let (links, pool) = query_pool(cfg, split)?;
    build_queries(&links, pool.as_deref(), &cfg.eval.queries())
}

/// Fine-tunes the distilled student on the link task.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    announce(Stage::Train, cfg)?;
    let layout = cfg.layout();
    let corpus = load_data(cfg)?;
    let vocab = load_vocab(cfg)?;
    let student = EncoderState::load(&require_artifact(layout.student(), "distill")?)?;
    let train_links = links_file(cfg, "train")?;
    let all_true = links_file(cfg, "true")?;
    let aux: Vec<IssueCodeLink> = read_jsonl(&require_artifact(layout.link_file("issue_code"), "links")?)?;
    let valid_queries = queries_for(cfg, EvalSplit::Valid)?;
    let model = LinkModel::new(student, vocab, cfg.budgets, cfg.train.seed)?;
    let data = TrainData {
        corpus: &corpus,
        train: train_links,
        aux,
        valid_queries,
        known_true: pair_set(&all_true),
    };
    let outcome = train(model, &data, &cfg.train, Some(&layout.trained()), &mut |e| {
        if let TrainEvent::Epoch(s) = e {
            println!(
                "epoch {:>3}  lr {:.3e}  main {:.4}  cl {:.4}  aux {:.4}  total {:.4}  valid MRR {:.4}",
                s.epoch, s.lr, s.main, s.cl, s.aux, s.total, s.valid_mrr
            );
        }
    })?;
    fs::write(layout.history(), history_csv(&outcome.history)).map_err(|e| Error::io(layout.history(), e))?;
    println!("train: best epoch {} -> {}", outcome.best_epoch, layout.trained().display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Link / no-link decisions at `threshold` over every scored candidate.
pub fn threshold_report(eval: &Evaluation, threshold: f64) -> ThresholdReport {
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for q in &eval.scored {
        for (&s, &y) in q.scores.iter().zip(&q.labels) {
            match (crate::retrieval::predict(s, threshold).1, y != 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ThresholdReport {
        threshold,
        true_positive: tp,
        false_positive: fp,
        false_negative: fneg,
        true_negative: tn,
        precision,
        recall,
        f1,
    }
}

/// Ranks the evaluation split with the trained model.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    announce(Stage::Eval, cfg)?;
    let layout = cfg.layout();
    let trained = require_artifact(layout.trained().join(crate::trainer::MODEL_FILE), "train")?;
    let model = LinkModel::load(trained.parent().expect("model dir"))?;
    let corpus = load_data(cfg)?;
    let queries = queries_for(cfg, cfg.eval.split)?;
    let mut scorer = ModelScorer::new(&model, &corpus);
    let eval = evaluate(&mut scorer, &queries)?;
    eval.write(&layout.eval(), Some(&queries))?;
    write_json(&layout.eval().join("threshold.json"), &threshold_report(&eval, cfg.eval.threshold))?;
    print!("{}", eval.report.to_table());
    Ok(())
}

/// Ranks the evaluation split with the TF-IDF baseline.
pub fn cmd_vsm(cfg: &RunConfig) -> Result<()> {
    announce(Stage::Vsm, cfg)?;
    let layout = cfg.layout();
    let corpus = load_data(cfg)?;
    let train_links = links_file(cfg, "train")?;
    let queries = queries_for(cfg, cfg.eval.split)?;
    let mut scorer = VsmScorer::new(&corpus, CorpusStats::from_links(&corpus, &train_links)?);
    let eval = evaluate(&mut scorer, &queries)?;
    eval.write(&layout.vsm(), Some(&queries))?;
    print!("{}", eval.report.to_table());
    Ok(())
}
