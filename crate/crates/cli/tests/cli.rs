use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use isomerge_core::{load_bundle, save_bundle, Tensor, TensorBundle};

fn isomerge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isomerge"))
        .args(args)
        .env_remove("ISO_MERGE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn bundle(entries: &[(&str, Vec<usize>, Vec<f32>)], task: &str) -> TensorBundle {
    let mut b = TensorBundle::new();
    for (name, shape, data) in entries {
        b.insert(*name, Tensor::new(shape.clone(), data.clone()).unwrap()).unwrap();
    }
    b.with_meta("task", task)
}

fn write(dir: &Path, name: &str, b: &TensorBundle) -> PathBuf {
    let path = dir.join(name);
    save_bundle(b, &path).unwrap();
    path
}

/// Base, plus two tasks with distinct 3×3 updates.
fn fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let base = bundle(
        &[
            ("w", vec![3, 3], vec![0.5, -0.25, 0.0, 0.125, 1.0, 0.0, 0.0, 0.0, -1.0]),
            ("b", vec![3], vec![0.0, 0.5, 1.0]),
        ],
        "base",
    );
    let a = bundle(
        &[
            ("w", vec![3, 3], vec![2.5, -0.25, 0.5, 0.125, 1.5, 0.0, 0.0, 0.25, -1.0]),
            ("b", vec![3], vec![1.0, 0.5, 1.0]),
        ],
        "a",
    );
    let b = bundle(
        &[
            ("w", vec![3, 3], vec![0.5, 0.75, 0.0, 0.125, 1.0, -0.5, 0.25, 0.0, 0.0]),
            ("b", vec![3], vec![0.0, 0.0, 1.5]),
        ],
        "b",
    );
    (
        write(dir, "base.isot", &base),
        write(dir, "a.isot", &a),
        write(dir, "b.isot", &b),
    )
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn merge_isotropic_single_task_is_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let base = bundle(
        &[("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]), ("b", vec![2], vec![0.5, 0.5])],
        "base",
    );
    // Δ = 1.5·I is already isotropic
    let task = bundle(
        &[("w", vec![2, 2], vec![2.5, 2.0, 3.0, 5.5]), ("b", vec![2], vec![1.0, 0.0])],
        "t",
    );
    let bp = write(dir.path(), "base.isot", &base);
    let tp = write(dir.path(), "t.isot", &task);
    let out = dir.path().join("m.isot");
    ok(&isomerge(&[
        "merge", "--method", "iso-c", "--base", p(&bp), "--tasks", p(&tp), "--alpha", "1.0", "--out", p(&out),
    ]));
    let merged = load_bundle(&out).unwrap();
    for (name, t) in task.iter() {
        let m = merged.get(name).unwrap();
        for (x, y) in m.data().iter().zip(t.data()) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{name}: {x} vs {y}");
        }
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.isot.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["method"], "iso-c");
    assert_eq!(meta["layers"]["w"]["method"], "ISO_C");
    assert!((meta["layers"]["w"]["sigma_bar"].as_f64().unwrap() - 1.5).abs() < 1e-9);
}

#[test]
fn iso_cts_full_common_fraction_matches_iso_c() {
    let dir = tempfile::tempdir().unwrap();
    let (base, a, b) = fixture(dir.path());
    let c_out = dir.path().join("c.isot");
    let cts_out = dir.path().join("cts.isot");
    let tasks = format!("{},{}", p(&a), p(&b));
    ok(&isomerge(&["merge", "--method", "iso-c", "--base", p(&base), "--tasks", &tasks, "--out", p(&c_out)]));
    ok(&isomerge(&[
        "merge", "--method", "iso-cts", "--common-frac", "1.0", "--base", p(&base), "--tasks", &tasks, "--out", p(&cts_out),
    ]));
    let (c, cts) = (load_bundle(&c_out).unwrap(), load_bundle(&cts_out).unwrap());
    for (name, t) in c.iter() {
        let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t.data()), bits(cts.get(name).unwrap().data()), "{name}");
    }
}

#[test]
fn merge_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (base, a, _) = fixture(dir.path());
    let missing = dir.path().join("nope.isot");
    let out = dir.path().join("m.isot");
    let res = isomerge(&[
        "merge", "--method", "ta", "--base", p(&base), "--tasks", p(&a), p(&missing), "--out", p(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains(p(&missing)));

    let res = isomerge(&["merge", "--method", "ta", "--base", p(&base), "--tasks", p(&a), "--alpha", "0", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--alpha"));

    let res = isomerge(&["merge", "--method", "fancy", "--base", p(&base), "--tasks", p(&a), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));

    let other = write(dir.path(), "other.isot", &bundle(&[("w", vec![2, 2], vec![1.0; 4])], "o"));
    let res = isomerge(&["merge", "--method", "ta", "--base", p(&base), "--tasks", p(&other), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("other.isot"));
}

#[test]
fn analyze_self_alignment_and_optional_nai() {
    let dir = tempfile::tempdir().unwrap();
    let (base, a, b) = fixture(dir.path());
    let out_dir = dir.path().join("self");
    ok(&isomerge(&[
        "analyze", "--merged", p(&a), "--tasks", p(&a), "--base", p(&base), "--epsilon", "0.05", "--out-dir", p(&out_dir),
    ]));
    let rows = read_csv(&out_dir.join("alignment.csv"));
    assert_eq!(rows[0], ["task", "layer", "sar"]);
    assert_eq!(rows.len(), 3); // w + avg
    for row in &rows[1..] {
        assert!(row[2].parse::<f64>().unwrap() >= 0.99, "{row:?}");
    }
    assert!(!out_dir.join("nai.csv").exists());

    let acc = dir.path().join("acc.csv");
    std::fs::write(&acc, "task,acc_merged,acc_task,acc_zero\na,0.8,0.9,0.5\nb,0.6,0.9,0.3\n").unwrap();
    let merged = dir.path().join("m.isot");
    ok(&isomerge(&["merge", "--method", "ta", "--base", p(&base), "--tasks", p(&a), p(&b), "--out", p(&merged)]));
    let out_dir = dir.path().join("full");
    ok(&isomerge(&[
        "analyze", "--merged", p(&merged), "--tasks", p(&a), p(&b), "--base", p(&base), "--accuracy", p(&acc), "--epsilon", "0.5", "--out-dir", p(&out_dir),
    ]));
    let nai = read_csv(&out_dir.join("nai.csv"));
    assert_eq!(nai[0], ["task", "acc_merged", "acc_task", "acc_zero", "nai"]);
    assert_eq!(nai[1], ["a", "0.8", "0.9", "0.5", "0.75"]);
    assert_eq!(nai[2][4], "0.5");
    let corr = read_csv(&out_dir.join("correlation.csv"));
    assert_eq!(corr[0], ["metric_x", "metric_y", "pearson"]);
    assert_eq!(corr[1][..2], ["sar_avg", "nai"]);
}

#[test]
fn analyze_orthogonal_bundles_and_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let e1 = write(dir.path(), "e1.isot", &bundle(&[("w", vec![2, 2], vec![1.0, 0.0, 0.0, 0.0])], "e1"));
    let e2 = write(dir.path(), "e2.isot", &bundle(&[("w", vec![2, 2], vec![0.0, 0.0, 0.0, 1.0])], "e2"));
    let out_dir = dir.path().join("o");
    ok(&isomerge(&["analyze", "--merged", p(&e1), "--tasks", p(&e2), "--out-dir", p(&out_dir)]));
    let rows = read_csv(&out_dir.join("alignment.csv"));
    assert_eq!(rows[1], ["e2", "w", "0"]);

    // a zero task matrix has no alignment ratio
    let z = write(dir.path(), "z.isot", &bundle(&[("w", vec![2, 2], vec![0.0; 4])], "z"));
    let res = isomerge(&["analyze", "--merged", p(&e1), "--tasks", p(&z), "--out-dir", p(&out_dir)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`w`"));

    let res = isomerge(&["analyze", "--merged", p(&e1), "--tasks", p(&e2), "--epsilon", "1.5", "--out-dir", p(&out_dir)]);
    assert_eq!(res.status.code(), Some(2));
}

fn sigma_rows(path: &Path) -> Vec<(String, f64)> {
    read_csv(path)[1..]
        .iter()
        .map(|r| (r[0].clone(), r[2].parse().unwrap()))
        .collect()
}

#[test]
fn spectrum_endpoints_and_affinity() {
    let dir = tempfile::tempdir().unwrap();
    let (base, a, b) = fixture(dir.path());
    let iso = dir.path().join("iso.isot");
    ok(&isomerge(&["merge", "--method", "iso-c", "--base", p(&base), "--tasks", p(&a), p(&b), "--out", p(&iso)]));
    let out = dir.path().join("iso.csv");
    ok(&isomerge(&["spectrum", "--input", p(&iso), "--base", p(&base), "--out", p(&out)]));
    let rows = sigma_rows(&out);
    assert_eq!(rows.len(), 3);
    for (_, s) in &rows {
        assert!((s - rows[0].1).abs() <= 1e-5 * rows[0].1);
    }

    let ta = dir.path().join("ta.isot");
    ok(&isomerge(&["merge", "--method", "ta", "--base", p(&base), "--tasks", p(&a), p(&b), "--out", p(&ta)]));
    let spec = |extra: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["spectrum", "--input", p(&ta), "--base", p(&base), "--layers", "^w$", "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&isomerge(&args));
        sigma_rows(&out)
    };
    let raw = spec(&[], "raw.csv");
    let b0 = spec(&["--beta", "0"], "b0.csv");
    let b1 = spec(&["--beta", "1"], "b1.csv");
    let half = spec(&["--beta", "0.5"], "bh.csv");
    assert_eq!(raw, b0);
    for i in 0..raw.len() {
        let mid = 0.5 * (b0[i].1 + b1[i].1);
        assert!((half[i].1 - mid).abs() <= 1e-6 * mid.max(1.0));
    }
    assert!(raw.windows(2).all(|w| w[0].1 >= w[1].1));
    let k1 = spec(&["--k", "1"], "k1.csv");
    assert!(k1[1].1.abs() < 1e-6 && k1[2].1.abs() < 1e-6);

    let res = isomerge(&["spectrum", "--input", p(&ta), "--layers", "^nothing$", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(res.status.code(), Some(2));
    let res = isomerge(&["spectrum", "--input", p(&ta), "--layers", "(", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(res.status.code(), Some(2));
}

const SMALL: [&str; 6] = ["--input-dim", "16", "--hidden-dim", "12", "--classes", "3"];

#[test]
fn synth_writes_one_block_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("suite");
    ok(&isomerge(&["synth", "--tasks", "8", "--seed", "0", "--methods", "avg,ta,iso-c,iso-cts", "--out-dir", p(&out)]));
    let rows = read_csv(&out.join("benchmark.csv"));
    assert_eq!(rows[0], ["method", "alpha", "task", "acc", "nai", "sar_avg"]);
    assert_eq!(rows.len(), 1 + 4 * 8);
    let methods: Vec<&str> = rows[1..].iter().step_by(8).map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["avg", "ta", "iso-c", "iso-cts"]);
    for i in 0..8 {
        assert!(out.join(format!("task_{i:02}.isot")).exists());
    }
    assert!(out.join("base.isot").exists() && out.join("datasets.csv").exists());
    let header = read_csv(&out.join("datasets.csv"))[0].clone();
    assert_eq!(header[..3], ["task", "split", "x0"]);
    assert_eq!(header.last().unwrap(), "label");
}

#[test]
fn synth_is_deterministic_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["synth", "--tasks", "3", "--seed", "7", "--out-dir", p(&out)];
        args.extend_from_slice(&SMALL);
        ok(&isomerge(&args));
        out
    };
    let (x, y) = (run("x"), run("y"));
    for file in ["benchmark.csv", "datasets.csv", "base.isot", "task_02.isot", "suite.json"] {
        assert_eq!(std::fs::read(x.join(file)).unwrap(), std::fs::read(y.join(file)).unwrap(), "{file}");
    }
    let res = isomerge(&["synth", "--tasks", "0", "--out-dir", p(&dir.path().join("z"))]);
    assert_eq!(res.status.code(), Some(2));
    let res = isomerge(&["synth", "--tasks", "2", "--overlap", "2", "--out-dir", p(&dir.path().join("z"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn sweep_alpha_reads_an_exported_suite() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("s");
    let mut args = vec!["synth", "--tasks", "2", "--seed", "1", "--methods", "ta", "--out-dir", p(&suite)];
    args.extend_from_slice(&SMALL);
    ok(&isomerge(&args));
    let out = dir.path().join("sweep.csv");
    let res = isomerge(&["sweep-alpha", "--suite", p(&suite), "--method", "ta", "--alpha-grid", "0.5:1.0:0.1", "--out", p(&out)]);
    ok(&res);
    let rows = read_csv(&out);
    assert_eq!(rows[0], ["alpha", "mean_accuracy", "task_00", "task_01"]);
    let alphas: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(alphas, ["0.5", "0.6", "0.7", "0.8", "0.9", "1"]);
    assert!(String::from_utf8_lossy(&res.stdout).contains("best alpha="));

    let res = isomerge(&["sweep-alpha", "--suite", p(&suite), "--method", "ta", "--alpha-grid", "1:0.5:0.1", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (base, a, b) = fixture(dir.path());
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&isomerge(&[
            "--threads", threads, "merge", "--method", "iso-cts", "--common-frac", "0.34", "--base", p(&base), "--tasks", p(&a), p(&b), "--out", p(&out),
        ]));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("1", "t1.isot"), run("4", "t4.isot"));
    let res = Command::new(env!("CARGO_BIN_EXE_isomerge"))
        .args(["merge", "--method", "ta", "--base", p(&base), "--tasks", p(&a), "--out", p(&dir.path().join("e.isot"))])
        .env("ISO_MERGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}
