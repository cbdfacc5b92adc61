//! End-to-end runs of the `cidmad` binary on a tiny configuration.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[corpus]
subjects = 30
train_pairs_per_class = 10
test_bonafide_per_subject = 2
test_morphs_per_subject = 2
image_size = 32

[comparator.embedding]
triplets = 4000

[translator]
epochs = 2
base_channels = 4
disc_channels = 4
checkpoint_every = 0

[demorph]
saliency_window = 8
saliency_stride = 8
heatmaps_per_class = 1

[demorph.translator]
epochs = 2
base_channels = 4
disc_channels = 4
checkpoint_every = 0
"#;

fn cidmad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cidmad"))
        .args(args)
        .env_remove("CIDMAD_LOG")
        .env("CIDMAD_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cidmad(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    lines[0].to_string()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn full_pipeline_on_a_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    ok(&["corpus", "build", "--config", c, "--out", o]);
    assert!(out.join("manifests/test.tsv").exists());
    assert!(out.join("config.toml").exists());

    // downstream commands pick the config up from the echo
    ok(&["train", "--out", o]);
    assert!(out.join("checkpoints/translator/final.ckpt").exists());
    assert!(out.join("checkpoints/comparator.json").exists());
    ok(&["detect", "--out", o]);
    let summary = ok(&["eval", "--out", o]);
    assert!(summary.contains("bpcer_at_apcer10="));
    let metrics = out.join("report/all/metrics.tsv");
    let first = read(&metrics);
    assert!(first.lines().count() > 5);
    assert!(out.join("report/all/score_histograms.svg").exists());

    ok(&["eval", "--out", o]);
    assert_eq!(read(&metrics), first);

    ok(&["cross-eval", "--out", o]);
    let cells = read(&out.join("report/cross_eval_cells.tsv"));
    assert_eq!(cells.lines().count(), 5, "{cells}");
    assert!(out.join("checkpoints/cross_appearance_morph/final.ckpt").exists());

    let recovery = ok(&["demorph", "--out", o]);
    assert!(recovery.contains("majority_closer_to_second"));
    assert!(out.join("checkpoints/demorph/final.ckpt").exists());
    let saliency = read(&out.join("report/demorph/saliency.tsv"));
    assert!(saliency.lines().count() > 10);
    let heatmaps = std::fs::read_dir(out.join("report/demorph/heatmaps")).unwrap().count();
    assert_eq!(heatmaps, 6);

    // a different config may not reuse the directory
    let line = error_line(&cidmad(&["detect", "--config", c, "--out", o, "--seed", "3"]));
    assert!(line.starts_with("error kind=config"), "{line}");
}

#[test]
fn missing_upstream_artifacts_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("empty");
    let line = error_line(&cidmad(&["detect", "--out", o.to_str().unwrap()]));
    assert!(line.starts_with("error kind=data"), "{line}");
    assert!(line.contains("corpus build"), "{line}");
}

#[test]
fn unknown_config_keys_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[translator]\nepochz = 3\n").unwrap();
    let o = dir.path().join("run");
    let line = error_line(&cidmad(&["corpus", "build", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]));
    assert!(line.starts_with("error kind=config"), "{line}");
    assert!(!o.exists());
}

#[test]
fn environment_overrides_reach_the_echo() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_cidmad"))
        .args(["corpus", "build", "--out", o.to_str().unwrap()])
        .env("CIDMAD_LOG", "warn")
        .env("CIDMAD_CORPUS__SUBJECTS", "20")
        .env("CIDMAD_CORPUS__TRAIN_PAIRS_PER_CLASS", "4")
        .env("CIDMAD_CORPUS__IMAGE_SIZE", "32")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = read(&o.join("config.toml"));
    assert!(echo.contains("subjects = 20"), "{echo}");
}
