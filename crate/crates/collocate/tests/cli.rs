use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn collocate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collocate")).args(args).env_remove("COLLOCATE_OUT").env_remove("COLLOCATE_JOBS").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = collocate(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, n: &str, seed: &str) -> PathBuf {
    let out = dir.join(format!("gen_{n}_{seed}"));
    ok(&["gen", "--n", n, "--seed", seed, "--out", s(&out)]);
    out.join("dataset.bin")
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(collocate(&[]).status.code(), Some(2));
    assert_eq!(collocate(&["gen", "--n", "0"]).status.code(), Some(2));
    assert_eq!(collocate(&["train", "--method", "dagger", "--data", "x"]).status.code(), Some(2));
    assert_eq!(collocate(&["--jobs", "0", "replay"]).status.code(), Some(2));
    assert_eq!(collocate(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[gen]\nnn = 3\n").unwrap();
    assert_eq!(collocate(&["--config", s(&cfg), "replay", "--out", s(dir.path())]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.bin");
    assert_eq!(collocate(&["train", "--data", s(&missing), "--out", s(dir.path())]).status.code(), Some(3));
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"CLDS not really a dataset").unwrap();
    assert_eq!(collocate(&["export", "--data", s(&junk), "--out", s(dir.path())]).status.code(), Some(3));
    let o = collocate(&["plot", "--deviation", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("none.bin"));
}

#[test]
fn out_root_env_places_command_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_collocate")).arg("replay").env("COLLOCATE_OUT", dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("replay/replay.ckpt").exists());
    assert!(dir.path().join("replay/provenance.json").exists());
    assert!(dir.path().join("replay/config.toml").exists());
}

#[test]
fn gen_train_eval_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "4", "5");
    let b_dir = dir.path().join("again");
    ok(&["gen", "--n", "4", "--seed", "5", "--out", s(&b_dir)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(b_dir.join("dataset.bin")).unwrap());
    let other = gen(dir.path(), "4", "6");
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(other).unwrap());

    let mut ckpts = Vec::new();
    for run in ["t1", "t2"] {
        let out = dir.path().join(run);
        ok(&["train", "--method", "code", "--policy", "nn", "--data", s(&a), "--epochs", "3", "--out", s(&out)]);
        ckpts.push(out);
    }
    for f in ["policy.ckpt", "aux.ckpt", "history.csv", "config.toml"] {
        assert_eq!(std::fs::read(ckpts[0].join(f)).unwrap(), std::fs::read(ckpts[1].join(f)).unwrap(), "{f}");
    }
    let prov = json(&ckpts[0].join("provenance.json"));
    assert_eq!(prov["command"], "train");
    assert_eq!(prov["outputs"].as_array().unwrap().len(), 3);

    let mut evals = Vec::new();
    for run in ["e1", "e2"] {
        let out = dir.path().join(run);
        let ck = ckpts[0].join("policy.ckpt");
        let aux = ckpts[0].join("aux.ckpt");
        ok(&["eval", "--checkpoint", s(&ck), "--aux", s(&aux), "--audit", "--data", s(&a), "--out", s(&out)]);
        evals.push(out);
    }
    for f in ["report.json", "rmse.csv", "deviation.csv", "audit.csv"] {
        assert_eq!(std::fs::read(evals[0].join(f)).unwrap(), std::fs::read(evals[1].join(f)).unwrap(), "{f}");
    }
    let audit = std::fs::read_to_string(evals[0].join("audit.csv")).unwrap();
    assert!(audit.lines().nth(1).unwrap().contains("certified"));
}

#[test]
fn replay_checkpoint_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "3", "2");
    let rp = dir.path().join("rp");
    ok(&["replay", "--out", s(&rp)]);
    let ev = dir.path().join("ev");
    ok(&["eval", "--checkpoint", s(&rp.join("replay.ckpt")), "--data", s(&data), "--out", s(&ev)]);
    let r = json(&ev.join("report.json"));
    assert_eq!(r["median_rmse"].as_f64(), Some(0.0));
    assert_eq!(r["success_rate"].as_f64(), Some(1.0));
    assert_eq!(r["policy"], "replay");
    let dev = std::fs::read_to_string(ev.join("deviation.csv")).unwrap();
    for line in dev.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v == "0"), "{line}");
    }
    assert_eq!(
        collocate(&["eval", "--checkpoint", s(&rp.join("replay.ckpt")), "--audit", "--data", s(&data), "--out", s(&ev)]).status.code(),
        Some(2)
    );
}

#[test]
fn rmp_audit_is_estimated_and_aux_checkpoint_is_rejected_as_policy() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "3", "3");
    let tr = dir.path().join("tr");
    ok(&["train", "--method", "code", "--policy", "rmp", "--data", s(&data), "--epochs", "2", "--out", s(&tr)]);
    let ev = dir.path().join("ev");
    ok(&["eval", "--checkpoint", s(&tr.join("policy.ckpt")), "--audit", "--data", s(&data), "--out", s(&ev)]);
    let audit = std::fs::read_to_string(ev.join("audit.csv")).unwrap();
    assert!(audit.lines().nth(1).unwrap().contains("estimated"));
    let o = collocate(&["eval", "--checkpoint", s(&tr.join("aux.ckpt")), "--data", s(&data), "--out", s(&ev)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_writes_one_row_per_job_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "6", "4");
    let sw = dir.path().join("sw");
    ok(&[
        "--jobs",
        "2",
        "sweep",
        "--data",
        s(&data),
        "--sizes",
        "2,4",
        "--seeds",
        "0",
        "--methods",
        "bc,code",
        "--classes",
        "nn",
        "--epochs",
        "2",
        "--validation",
        "2",
        "--out",
        s(&sw),
    ]);
    let rows = std::fs::read_to_string(sw.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2);
    assert!(rows.lines().next().unwrap().starts_with("run_id,method,class,size,seed,status"));
    assert!(sw.join("runs/code_nn_n4_s0/policy.ckpt").exists());
    assert!(sw.join("runs/bc_nn_n2_s0/report.json").exists());
    assert!(!sw.join("runs/bc_nn_n2_s0/aux.ckpt").exists());

    let pl = dir.path().join("pl");
    let dev = sw.join("runs/code_nn_n4_s0/deviation.csv");
    ok(&["plot", "--deviation", s(&dev), "--rmse-table", s(&sw.join("rmse_table.csv")), "--out", s(&pl)]);
    for f in ["deviation.svg", "rmse_boxes.svg"] {
        let svg = std::fs::read_to_string(pl.join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }
    let o = collocate(&["sweep", "--data", s(&data), "--sizes", "5", "--validation", "2", "--out", s(&sw)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn export_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "2", "9");
    let ex = dir.path().join("ex");
    ok(&["export", "--data", s(&data), "--out", s(&ex)]);
    let v = json(&ex.join("dataset.json"));
    assert_eq!(v["trajectories"].as_array().unwrap().len(), 2);
}
