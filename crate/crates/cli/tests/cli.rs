use std::fs;
use std::path::{Path, PathBuf};

use gradlex_cli::config::ExperimentSpec;
use gradlex_cli::run;

const BLOBS: &str = "\
dataset = synthetic
synthetic_kind = gaussian-blobs
classes = 3
side = 4
n_train = 120
n_test = 60
noise = 1.0
epochs = 5
batch_size = 16
hidden = 8
";

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    setup_with(BLOBS, extra)
}

fn setup_with(base: &str, extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    fs::write(&cfg, format!("{base}{extra}")).unwrap();
    (dir, cfg)
}

fn gradlex(args: &[&str]) -> i32 {
    let mut argv = vec!["gradlex"];
    argv.extend_from_slice(args);
    run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn baseline_writes_one_record_per_epoch() {
    let (dir, cfg) = setup("strategy = sgd-baseline\n");
    let out = dir.path().join("out");
    assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&out)]), 0);
    let records = lines(&out.join("metrics.jsonl"));
    assert_eq!(records.len(), 5);
    for (g, line) in records.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["generation"], g as u64);
        assert_eq!(v["strategy"], "sgd-baseline");
    }
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["count"], 60);
    // Echoed config re-parses to the spec that ran.
    let echoed = ExperimentSpec::parse(&fs::read_to_string(out.join("config.txt")).unwrap()).unwrap();
    assert_eq!(echoed.out, out);
    assert_eq!(echoed.strategy.as_str(), "sgd-baseline");
}

#[test]
fn seed_override_changes_checkpoint_and_reruns_repeat() {
    let (dir, cfg) = setup("");
    let ck = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&out), "--seed", seed]), 0);
        fs::read(out.join("checkpoint.lxgd")).unwrap()
    };
    let a = ck("a", "1");
    let b = ck("b", "1");
    let c = ck("c", "2");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn workers_do_not_change_results() {
    let (dir, cfg) = setup("");
    let mut cks = Vec::new();
    for w in ["1", "4"] {
        let out = dir.path().join(format!("w{w}"));
        assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&out), "--workers", w]), 0);
        cks.push(fs::read(out.join("checkpoint.lxgd")).unwrap());
    }
    assert_eq!(cks[0], cks[1]);
}

#[test]
fn config_errors_exit_2() {
    let (dir, cfg) = setup("poplation = 3\n");
    let out = dir.path().join("out");
    assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&out)]), 2);
    assert!(!out.exists());
    let (dir, cfg) = setup("");
    let out = dir.path().join("out");
    assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&out), "--momentum-policy", "keep"]), 2);
    assert_eq!(gradlex(&["train", "--bogus-flag"]), 2);
    assert_eq!(gradlex(&["train", "--config", s(&dir.path().join("missing.conf"))]), 2);
}

#[test]
fn compare_summary_matches_manual_statistics() {
    let (dir, cfg) = setup("strategies = sgd-baseline,lexicase\nseeds = 3,4,5\npopulation = 2\n");
    let out = dir.path().join("cmp");
    assert_eq!(gradlex(&["compare", "--config", s(&cfg), "--out", s(&out)]), 0);
    let runs = lines(&out.join("runs.csv"));
    assert_eq!(runs.len(), 1 + 6);
    let summary = lines(&out.join("summary.csv"));
    assert_eq!(summary.len(), 1 + 2);
    for row in &summary[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let accs: Vec<f64> = runs[1..]
            .iter()
            .map(|r| r.split(',').collect::<Vec<_>>())
            .filter(|r| r[0] == f[0])
            .map(|r| r[4].parse().unwrap())
            .collect();
        assert_eq!(accs.len(), 3);
        let mean = (accs[0] + accs[1] + accs[2]) / 3.0;
        let var = ((accs[0] - mean).powi(2) + (accs[1] - mean).powi(2) + (accs[2] - mean).powi(2)) / 2.0;
        assert!((f[4].parse::<f64>().unwrap() - mean).abs() < 1e-9);
        assert!((f[5].parse::<f64>().unwrap() - var.sqrt()).abs() < 1e-9);
    }
    // Each run is a full train directory.
    assert!(out.join("lexicase/seed-4/checkpoint.lxgd").exists());
    assert!(out.join("summary.txt").exists());
}

#[test]
fn single_seed_reports_zero_std() {
    let (dir, cfg) = setup("strategies = random\n");
    let out = dir.path().join("one");
    assert_eq!(gradlex(&["compare", "--config", s(&cfg), "--out", s(&out), "--seed", "9"]), 0);
    let summary = lines(&out.join("summary.csv"));
    assert_eq!(summary.len(), 2);
    let std: f64 = summary[1].split(',').nth(5).unwrap().parse().unwrap();
    assert_eq!(std, 0.0);
}

#[test]
fn sweep_rows_and_degenerate_population() {
    let (dir, cfg) = setup("seeds = 7\n");
    let out = dir.path().join("sweep");
    assert_eq!(gradlex(&["sweep-pop", "--config", s(&cfg), "--out", s(&out), "--sizes", "1,2"]), 0);
    assert_eq!(lines(&out.join("summary.csv")).len(), 3);

    let base = dir.path().join("base");
    assert_eq!(
        gradlex(&["train", "--config", s(&cfg), "--out", s(&base), "--strategy", "sgd-baseline"]),
        0
    );
    assert_eq!(
        fs::read(out.join("p-1/seed-7/checkpoint.lxgd")).unwrap(),
        fs::read(base.join("checkpoint.lxgd")).unwrap()
    );

    let four = dir.path().join("four");
    assert_eq!(gradlex(&["sweep-pop", "--config", s(&cfg), "--out", s(&four), "--sizes", "4"]), 0);
    let train = dir.path().join("train");
    assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&train)]), 0);
    assert_eq!(
        fs::read(four.join("p-4/seed-7/checkpoint.lxgd")).unwrap(),
        fs::read(train.join("checkpoint.lxgd")).unwrap()
    );
}

#[test]
fn profile_outputs_and_errors() {
    let base = BLOBS.replace("side = 4", "side = 8");
    let (dir, cfg) = setup_with(&base, "model = conv-small\nchannels = 2\ngenerations = 0\n");
    let untrained = dir.path().join("init");
    assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&untrained)]), 0);
    let ck = untrained.join("checkpoint.lxgd");

    let p1 = dir.path().join("p1");
    let p2 = dir.path().join("p2");
    for p in [&p1, &p2] {
        assert_eq!(
            gradlex(&["profile", "--config", s(&cfg), "--out", s(p), "--checkpoint", s(&ck), "--samples", "1"]),
            0
        );
    }
    let csv = lines(&p1.join("profile-1.csv"));
    assert_eq!(csv.len(), 1 + 4); // header + one row per channel of the final block
    assert_eq!(
        fs::read(p1.join("profile-1.json")).unwrap(),
        fs::read(p2.join("profile-1.json")).unwrap()
    );

    let both = dir.path().join("both");
    assert_eq!(
        gradlex(&["profile", "--config", s(&cfg), "--out", s(&both), "--checkpoint", s(&ck), "--checkpoint", s(&ck)]),
        0
    );
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(both.join("comparison.json")).unwrap()).unwrap();
    assert!(cmp["a"]["normalized_entropy"].is_number());
    assert!(cmp["b"]["zero_fraction"].is_number());

    let bad = dir.path().join("bad.lxgd");
    fs::write(&bad, b"NOPE0000").unwrap();
    assert_eq!(
        gradlex(&["profile", "--config", s(&cfg), "--out", s(&both), "--checkpoint", s(&bad)]),
        1
    );
    assert_eq!(gradlex(&["eval", "--config", s(&cfg), "--out", s(&both), "--checkpoint", s(&bad)]), 1);
}

#[test]
fn eval_matches_training_report() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("t");
    assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&out)]), 0);
    let ev = dir.path().join("e");
    assert_eq!(
        gradlex(&["eval", "--config", s(&cfg), "--out", s(&ev), "--checkpoint", s(&out.join("checkpoint.lxgd"))]),
        0
    );
    assert_eq!(
        fs::read(out.join("eval.json")).unwrap(),
        fs::read(ev.join("eval.json")).unwrap()
    );
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let (dir, cfg) = setup("population = 2\nmomentum_policy = inherit\n");
    let full = dir.path().join("full");
    assert_eq!(gradlex(&["train", "--config", s(&cfg), "--out", s(&full)]), 0);

    // A shorter run with the full run's schedule, then resumed.
    let horizon = {
        let spec = ExperimentSpec::parse(&fs::read_to_string(full.join("config.txt")).unwrap()).unwrap();
        spec.primary_run().default_horizon(120)
    };
    let (dir2, short_cfg) = setup(&format!(
        "population = 2\nmomentum_policy = inherit\ngenerations = 4\nlr_horizon = {horizon}\n"
    ));
    let part = dir2.path().join("part");
    assert_eq!(gradlex(&["train", "--config", s(&short_cfg), "--out", s(&part)]), 0);
    let resume_cfg = dir2.path().join("resume.conf");
    fs::write(&resume_cfg, format!("{BLOBS}population = 2\nmomentum_policy = inherit\nlr_horizon = {horizon}\n")).unwrap();
    assert_eq!(
        gradlex(&[
            "train",
            "--config",
            s(&resume_cfg),
            "--out",
            s(&part),
            "--resume",
            s(&part.join("checkpoint.lxgd"))
        ]),
        0
    );
    assert_eq!(lines(&part.join("metrics.jsonl")).len(), 10);
    assert_eq!(
        fs::read(part.join("checkpoint.lxgd")).unwrap(),
        fs::read(full.join("checkpoint.lxgd")).unwrap()
    );
}

#[test]
fn outputs_stay_under_out() {
    let (dir, cfg) = setup("strategies = lexicase\nseeds = 1\n");
    let out = dir.path().join("only");
    assert_eq!(gradlex(&["compare", "--config", s(&cfg), "--out", s(&out)]), 0);
    let mut entries: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    entries.sort();
    assert_eq!(entries, vec!["exp.conf", "only"]);
}
