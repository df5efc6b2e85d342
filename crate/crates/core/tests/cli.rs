//! End-to-end runs of the command-line tool on a small synthetic dataset.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use peercollab::harness::RunSummary;

fn peercollab(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_peercollab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    out
}

fn ok(args: &[&str]) -> String {
    let out = peercollab(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            "model = \"dnn\"\nmode = \"single\"\nepochs = 2\nsynthetic_users = 200\nsynthetic_items = 120\n{extra}"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn csv_header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn train_then_evaluate_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();
    let stdout = ok(&["train", "--config", &cfg, "--mode", "pc-lw", "--out", out_s]);
    assert!(stdout.contains("pc-lw-dnn"), "{stdout}");

    for f in [
        "config.toml",
        "metrics.csv",
        "history.csv",
        "cooperation.csv",
        "summary.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    for d in ["peer1", "peer2", "model"] {
        assert!(
            out.join("checkpoints").join(d).join("weights.bin").exists(),
            "missing checkpoint {d}"
        );
    }
    assert_eq!(
        csv_header(&out.join("metrics.csv")),
        "run_id,model,split,metric,N,value"
    );
    assert_eq!(
        csv_header(&out.join("cooperation.csv")),
        "epoch,layer,criterion,h_self,h_peer,mu_self,replaced_count"
    );

    let summary = RunSummary::load(&out).unwrap();
    assert_eq!(summary.model, "pc-lw-dnn");
    assert_eq!(summary.best_epochs.len(), 2);

    ok(&["evaluate", "--out", out_s]);
    let again = fs::read_to_string(out.join("evaluate.csv")).unwrap();
    let test_rows: Vec<&str> = again.lines().filter(|l| l.contains(",test,")).collect();
    assert_eq!(test_rows.len(), 6);
    let mrr5 = test_rows.iter().find(|l| l.contains(",MRR,5,")).unwrap();
    let value: f64 = mrr5.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(value, summary.test.mrr5());
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "alpha = 5.0\n");
    let out = tmp.path().join("run");
    ok(&[
        "train",
        "--config",
        &cfg,
        "--model",
        "bpr",
        "--mode",
        "pc-pw",
        "--gamma",
        "0.002",
        "--epochs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let written = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("model = \"bpr\""), "{written}");
    assert!(written.contains("gamma = 0.002"), "{written}");
    assert!(written.contains("alpha = 5.0"), "{written}");
    assert!(written.contains("epochs = 1"), "{written}");
}

#[test]
fn invalid_configurations_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    let cases: [&[&str]; 4] = [
        &[
            "train", "--config", &cfg, "--mode", "pc-lw", "--eta1", "0.01", "--eta2", "0.01", "--out", out,
        ],
        &["train", "--config", &cfg, "--criterion", "variance", "--out", out],
        &["train", "--model", "gru", "--out", out],
        &[
            "train",
            "--config",
            &cfg,
            "--data",
            "/nonexistent/file.tsv",
            "--out",
            out,
        ],
    ];
    for args in cases {
        let res = peercollab(args);
        assert!(!res.status.success(), "{args:?} should fail");
    }
    let typo = tmp.path().join("typo.toml");
    fs::write(&typo, "model = \"dnn\"\nmode = \"single\"\nalpah = 3.0\n").unwrap();
    assert!(!peercollab(&["train", "--config", typo.to_str().unwrap()])
        .status
        .success());
}

#[test]
fn prune_grid_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");

    let prune = tmp.path().join("prune");
    let stdout = ok(&[
        "prune",
        "--config",
        &cfg,
        "--fractions",
        "0.2,0.6",
        "--fine-tune-epochs",
        "1",
        "--out",
        prune.to_str().unwrap(),
    ]);
    assert!(stdout.contains("rho 0.20"), "{stdout}");
    assert_eq!(
        csv_header(&prune.join("prune.csv")),
        "fraction,zeroed,metric,N,unpruned,pruned,fine_tuned"
    );
    assert!(prune.join("plot_pruning.csv").exists());

    let grid_spec = tmp.path().join("grid.toml");
    fs::write(&grid_spec, "modes = [\"single\", \"pc-lw\"]\nseeds = [1, 2]\n").unwrap();
    let grid = tmp.path().join("grid");
    ok(&[
        "grid",
        "--config",
        &cfg,
        "--epochs",
        "1",
        "--grid",
        grid_spec.to_str().unwrap(),
        "--out",
        grid.to_str().unwrap(),
    ]);
    let results = fs::read_to_string(grid.join("grid_results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 4);
    let summary = fs::read_to_string(grid.join("grid_summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("pc-lw_")), "{summary}");

    // A second invocation resumes from finished cells and yields the same table.
    ok(&[
        "grid",
        "--config",
        &cfg,
        "--epochs",
        "1",
        "--grid",
        grid_spec.to_str().unwrap(),
        "--out",
        grid.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(grid.join("grid_results.csv")).unwrap(), results);

    let stdout = ok(&["report", "--out", grid.to_str().unwrap()]);
    assert!(stdout.contains("plot_alpha.csv"), "{stdout}");
}

#[test]
fn ingest_filters_and_densifies() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.tsv");
    let mut text = String::new();
    // Six users share items 10..15; user 99 and item 77 are too sparse to survive.
    for u in 0..6 {
        for (t, i) in (10..16).enumerate() {
            text.push_str(&format!("u{u}\t{i}\t{}\n", 100 * u + t));
        }
    }
    text.push_str("u99\t77\t5\n");
    fs::write(&raw, text).unwrap();
    let out = tmp.path().join("data");
    let stdout = ok(&[
        "ingest",
        "--input",
        raw.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("6 users, 6 items, 36 interactions"), "{stdout}");

    let synth = tmp.path().join("synth");
    ok(&["ingest", "--out", synth.to_str().unwrap(), "--seed", "3"]);
    let first = fs::read(synth.join("interactions.tsv")).unwrap();
    ok(&["ingest", "--out", synth.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(fs::read(synth.join("interactions.tsv")).unwrap(), first);
}
