use std::path::Path;
use std::process::{Command, Output};

use tracelink::pipeline::{resolve_config, Layout, RunConfig, OUT_ENV, RUN_FILE};

const SMALL: &str = r#"
seed = 4
[synth]
n_issues = 80
[distill]
epochs = 1
max_sequences = 16
[train]
epochs = 1
lr = 0.001
[eval]
distractors = "all"
"#;

fn cli(out: &Path, config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tracelink"));
    cmd.arg("--out").arg(out).env_remove(OUT_ENV);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn eval_without_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), None, &["eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let o = cli(&dir.path().join("out"), Some(&cfg), &["synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));
}

#[test]
fn small_chain_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    for stage in ["synth", "preprocess", "links", "distill", "train", "eval", "vsm"] {
        let stdout = ok(&cli(&out, Some(&cfg), &[stage]));
        assert!(stdout.contains(&format!("# tracelink {stage}: resolved config")), "{stage}: {stdout}");
    }
    let l = Layout::new(&out);
    for p in [
        l.run_file(),
        l.vocab(),
        l.link_file("true"),
        l.link_file("train"),
        l.teacher(),
        l.student(),
        l.distill_curve(),
        l.history(),
        l.trained().join("model.safetensors"),
        l.eval().join("metrics.json"),
        l.eval().join("scores.csv"),
        l.eval().join("threshold.json"),
        l.vsm().join("metrics.json"),
    ] {
        assert!(p.is_file(), "missing {}", p.display());
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(l.eval().join("metrics.json")).unwrap()).unwrap();
    let mrr = m["mrr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mrr));
    assert!(m["queries"].as_u64().unwrap() > 0);

    // later stages pick up run.toml from the output directory on their own
    let o = ok(&cli(&out, None, &["eval", "--threshold", "0.25"]));
    assert!(o.contains("threshold = 0.25"));
    let again: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(l.eval().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(again, m);
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    let from_file = dir.path().join("from-file");
    let cfg = RunConfig {
        out: Some(from_file.clone()),
        ..RunConfig::default()
    };
    cfg.save(&cfg_path).unwrap();

    let flag = dir.path().join("flag");
    let r = resolve_config(Some(&cfg_path), Some(&flag)).unwrap();
    assert_eq!(r.out_dir(), flag);
    let r = resolve_config(Some(&cfg_path), None).unwrap();
    assert_eq!(r.out_dir(), from_file);

    // an existing run.toml in the output directory is loaded without --config
    let seeded = RunConfig::default().with_seed(9);
    seeded.save(&flag.join(RUN_FILE)).unwrap();
    let r = resolve_config(None, Some(&flag)).unwrap();
    assert_eq!(r.seed, 9);
    assert_eq!(r.train.seed, 9);
    assert_eq!(r.student.seed, 11);

    // the environment only matters when neither flag nor file name a directory
    std::env::set_var(OUT_ENV, dir.path().join("env"));
    let r = resolve_config(None, None).unwrap();
    assert_eq!(r.out_dir(), dir.path().join("env"));
    let r = resolve_config(Some(&cfg_path), None).unwrap();
    assert_eq!(r.out_dir(), from_file);
    std::env::remove_var(OUT_ENV);
}
