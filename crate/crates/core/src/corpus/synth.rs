//! Synthetic projects for desk-scale runs.
//!
//! Every issue belongs to one topic. Topics have two disjoint vocabularies:
//! words used in issue prose and identifier parts used in code. Each issue
//! also carries two key terms. A commit fixing the issue mentions one of the
//! key terms in its message and code with probability `overlap`; otherwise it
//! shares no key term with the issue at all. Lexical matching can therefore
//! only exploit the key terms, while a learned model can also pick up the
//! topic correspondence between prose and code.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::{ChangedFile, CommitRecord, IssueRecord, LinkRecord, Provenance, Timestamp};
use crate::error::{Error, Result};
use crate::preprocess::{CODE_KEYWORDS, ENGLISH_STOPWORDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_issues: usize,
    pub seed: u64,
    /// Probability that a fixing commit shares a key term with its issue.
    pub overlap: f64,
    /// Number of topics; `None` picks `max(4, n_issues / 10)`.
    pub n_topics: Option<usize>,
    /// Untagged commits added as background noise, per issue.
    pub untagged_per_issue: f64,
    pub project_key: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_issues: 200,
            seed: 7,
            overlap: 0.9,
            n_topics: None,
            untagged_per_issue: 0.2,
            project_key: "SYN".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// Raw records; run them through preprocessing before use.
    pub issues: Vec<IssueRecord>,
    pub commits: Vec<CommitRecord>,
    pub true_links: Vec<LinkRecord>,
    /// Every key term the generator planted, for scanning generated data.
    pub keyterms: BTreeSet<String>,
}

const FILLER: &[&str] = &[
    "problem", "behavior", "error", "result", "request", "option", "report", "value", "server",
    "client", "output", "input", "message", "failure", "test", "build", "release", "document",
    "performance", "memory", "thread", "query", "table", "file", "user", "window", "setting",
    "warning", "crash", "timeout",
];
const ISSUE_VERBS: &[&str] = &["Fix", "Improve", "Support", "Handle", "Investigate", "Broken"];
const COMMIT_VERBS: &[&str] = &["fix", "update", "refactor", "cleanup", "adjust", "rework", "patch"];
const CODE_GENERIC: &[&str] = &[
    "get", "set", "value", "list", "map", "init", "count", "index", "handler", "util", "config",
    "node", "state", "cache", "reader", "writer", "factory", "helper", "manager", "context",
];
const TYPES: &[&str] = &["int", "long", "String", "boolean", "List<String>", "Object"];

struct WordForge {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
    stemmer: Stemmer,
}

impl WordForge {
    fn new(seed: u64) -> Self {
        let mut used: BTreeSet<String> = BTreeSet::new();
        used.extend(ENGLISH_STOPWORDS.iter().map(|s| s.to_string()));
        used.extend(CODE_KEYWORDS.iter().map(|s| s.to_string()));
        used.extend(FILLER.iter().chain(CODE_GENERIC).map(|s| s.to_string()));
        used.extend(COMMIT_VERBS.iter().map(|s| s.to_string()));
        used.extend(ISSUE_VERBS.iter().map(|s| s.to_lowercase()));
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f0e9),
            used,
            stemmer: Stemmer::create(Algorithm::English),
        }
    }

    /// A fresh consonant-vowel pseudo-word that the stemmer leaves alone.
    fn word(&mut self) -> String {
        const C: &[u8] = b"bdfgklmnprtvz";
        const V: &[u8] = b"aeiou";
        loop {
            let len = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..len {
                w.push(*C.choose(&mut self.rng).unwrap() as char);
                w.push(*V.choose(&mut self.rng).unwrap() as char);
            }
            w.push(*C.choose(&mut self.rng).unwrap() as char);
            if self.stemmer.stem(&w) == w && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

struct Topic {
    prose: Vec<String>,
    code: Vec<String>,
}

fn cap(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).unwrap()
}

fn hex_id(rng: &mut ChaCha8Rng) -> String {
    (0..40)
        .map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap())
        .collect()
}

/// Code identifiers for one file: topic parts, generic parts, optionally key terms.
fn diff_body(rng: &mut ChaCha8Rng, topic: &Topic, keys: &[&str], path: &str) -> String {
    let mut out = format!(
        "diff --git a/{path} b/{path}\n--- a/{path}\n+++ b/{path}\n@@ -{},6 +{},7 @@\n",
        rng.gen_range(1..200),
        rng.gen_range(1..200)
    );
    let lines = rng.gen_range(3..=6);
    for li in 0..lines {
        let t1 = pick(rng, &topic.code).clone();
        let t2 = pick(rng, &topic.code).clone();
        let g1 = *pick(rng, CODE_GENERIC);
        let g2 = *pick(rng, CODE_GENERIC);
        let var = if !keys.is_empty() && li % 2 == 0 {
            format!("{}{}", keys[li / 2 % keys.len()], cap(&t1))
        } else {
            format!("{t1}{}", cap(g1))
        };
        let sign = if rng.gen_bool(0.7) { '+' } else { '-' };
        let ty = *pick(rng, TYPES);
        let line = match rng.gen_range(0..3) {
            0 => format!("{sign}    {ty} {var} = {t2}{}.{g2}{}();", cap(g1), cap(&t1)),
            1 => format!("{sign}    if ({var} != null) {{ {g2}{}({var}); }}", cap(&t2)),
            _ => format!("{sign}    {var}.{g1}{}({}_{});", cap(&t2), g2.to_uppercase(), t1.to_uppercase()),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    if cfg.n_issues < 10 {
        return Err(Error::InvalidInput(format!(
            "synthetic corpus needs at least 10 issues, got {}",
            cfg.n_issues
        )));
    }
    if !(0.0..=1.0).contains(&cfg.overlap) {
        return Err(Error::InvalidInput(format!("overlap {} not in [0, 1]", cfg.overlap)));
    }
    let mut forge = WordForge::new(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_topics = cfg.n_topics.unwrap_or((cfg.n_issues / 10).max(4)).max(1);
    let topics: Vec<Topic> = (0..n_topics)
        .map(|_| Topic {
            prose: forge.words(6),
            code: forge.words(6),
        })
        .collect();
    let keyterms = forge.words((cfg.n_issues / 2).max(8));

    let base = Timestamp::parse("2021-01-01T00:00:00Z").unwrap().0;
    let day = Timestamp::DAY;
    let mut issues = Vec::with_capacity(cfg.n_issues);
    let mut commits = Vec::new();
    let mut true_links = Vec::new();

    for i in 0..cfg.n_issues {
        let id = format!("{}-{}", cfg.project_key, i + 1);
        let topic = &topics[rng.gen_range(0..n_topics)];
        let mut keys: Vec<&str> = keyterms
            .choose_multiple(&mut rng, 2)
            .map(String::as_str)
            .collect();
        keys.shuffle(&mut rng);

        let create = base + rng.gen_range(0..365 * day);
        let update = create + rng.gen_range(0..20 * day);
        let resolved = update + rng.gen_range(0..10 * day);

        // commits first, so the issue text can mention one of their files
        let n_commits = match rng.gen_range(0..10) {
            0..=4 => 1,
            5..=7 => 2,
            _ => 3,
        };
        let mut first_file: Option<String> = None;
        for _ in 0..n_commits {
            let planted = rng.gen_bool(cfg.overlap);
            let commit_keys: Vec<&str> = if planted { vec![keys[0], keys[1]] } else { vec![] };
            let mut msg = format!("[{id}] {}", pick(&mut rng, COMMIT_VERBS));
            if planted {
                msg.push(' ');
                msg.push_str(keys[0]);
            }
            for _ in 0..rng.gen_range(1..=3) {
                msg.push(' ');
                msg.push_str(pick(&mut rng, FILLER));
            }
            let mut commit = CommitRecord::new(hex_id(&mut rng), msg);
            commit.commit_time = Some(Timestamp(create + rng.gen_range(0..10 * day)));
            let n_files = rng.gen_range(1..=3);
            for f in 0..n_files {
                let stem = if planted && f == 0 {
                    format!("{}{}", cap(commit_keys[0]), cap(pick(&mut rng, CODE_GENERIC)))
                } else {
                    format!("{}{}", cap(pick(&mut rng, &topic.code)), cap(pick(&mut rng, CODE_GENERIC)))
                };
                let path = format!("src/main/java/org/syn/{}/{stem}.java", pick(&mut rng, &topic.code));
                first_file.get_or_insert_with(|| stem.clone());
                let body = diff_body(&mut rng, topic, &commit_keys, &path);
                commit.changed_files.push(ChangedFile::new(path, body));
            }
            if rng.gen_bool(0.15) {
                commit.changed_files.push(ChangedFile::new(
                    "docs/CHANGES.md",
                    format!("+ * {} {}", pick(&mut rng, COMMIT_VERBS), pick(&mut rng, FILLER)),
                ));
            }
            true_links.push(LinkRecord::new(&id, &commit.commit_id, Provenance::TaggedTrue));
            commits.push(commit);
        }

        let title = format!(
            "{} {} {} {}",
            pick(&mut rng, ISSUE_VERBS),
            pick(&mut rng, &topic.prose),
            keys[0],
            pick(&mut rng, FILLER)
        );
        let mut desc = String::new();
        for s in 0..rng.gen_range(2..=3) {
            let words = [
                pick(&mut rng, &topic.prose).as_str(),
                pick(&mut rng, FILLER),
                if s == 0 { keys[1] } else { pick(&mut rng, &topic.prose).as_str() },
                pick(&mut rng, FILLER),
                pick(&mut rng, &topic.prose).as_str(),
            ];
            desc.push_str(&cap(&words.join(" ")));
            desc.push_str(". ");
        }
        if rng.gen_bool(0.5) {
            if let Some(f) = &first_file {
                desc.push_str(&format!("The failure shows up in {f}. "));
            }
        }
        if rng.gen_bool(0.2) {
            desc.push_str(&format!("See https://issues.example.org/browse/{id} for logs. "));
        }
        if rng.gen_bool(0.2) {
            desc.push_str(&format!(
                "Reproduce with `{}.{}()`.",
                pick(&mut rng, CODE_GENERIC),
                pick(&mut rng, CODE_GENERIC)
            ));
        }

        let mut issue = IssueRecord::new(&id, title, desc.trim_end());
        issue.create_date = Some(Timestamp(create));
        issue.update_date = Some(Timestamp(update));
        issue.last_resolved_date = Some(Timestamp(resolved));
        issue
            .extra
            .insert("issue_type".into(), serde_json::Value::from(*pick(&mut rng, &["bug", "improvement"])));
        issues.push(issue);
    }

    let n_noise = (cfg.n_issues as f64 * cfg.untagged_per_issue).round() as usize;
    for _ in 0..n_noise {
        let topic = &topics[rng.gen_range(0..n_topics)];
        let msg = format!("{} {} {}", pick(&mut rng, COMMIT_VERBS), pick(&mut rng, FILLER), pick(&mut rng, FILLER));
        let mut commit = CommitRecord::new(hex_id(&mut rng), msg);
        commit.commit_time = Some(Timestamp(base + rng.gen_range(0..380 * day)));
        let stem = format!("{}{}", cap(pick(&mut rng, &topic.code)), cap(pick(&mut rng, CODE_GENERIC)));
        let path = format!("src/main/java/org/syn/misc/{stem}.java");
        let body = diff_body(&mut rng, topic, &[], &path);
        commit.changed_files.push(ChangedFile::new(path, body));
        commits.push(commit);
    }

    Ok(SyntheticCorpus {
        issues,
        commits,
        true_links,
        keyterms: keyterms.into_iter().collect(),
    })
}
