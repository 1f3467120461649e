mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stagedtrees"));
    c.env_remove("STAGEDTREES_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_data(dir: &Path) -> PathBuf {
    let d = common::structured_dataset(&mut common::rng(3), 4, 300);
    let path = dir.join("data.csv");
    d.write_csv(std::fs::File::create(&path).unwrap(), true).unwrap();
    path
}

fn learn_model(dir: &Path) -> PathBuf {
    let data = write_data(dir);
    let model = dir.join("model.json");
    let o = run(&["learn", "--input", p(&data), "--order", "fixed", "--output", p(&model)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    model
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(code(&run(&["--help"])), 0);
    for sub in ["learn", "order", "bootstrap", "cv", "aldag", "whatif", "mi", "export"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["learn"])), 1);
    assert_eq!(code(&run(&["learn", "--input", "x.csv", "--algorithm", "magic"])), 1);
    assert_eq!(code(&run(&["bootstrap", "--input", "x.csv", "--replicates", "many"])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["learn", "--input", p(&dir.path().join("missing.csv"))])), 2);
    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "A,B\nx,y\nx\n").unwrap();
    let o = run(&["learn", "--input", p(&ragged)]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());

    let model = learn_model(dir.path());
    assert_eq!(code(&run(&["whatif", "--model", p(&model), "--evidence", "X1=nope"])), 2);
    assert_eq!(code(&run(&["whatif", "--model", p(&model), "--evidence", "Nope=v0"])), 2);
    assert_eq!(code(&run(&["whatif", "--model", p(&model), "--soft", "X1=0.5"])), 2);
    assert_eq!(code(&run(&["mi", "--model", p(&model), "--target", "Nope"])), 2);
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    assert_eq!(code(&run(&["aldag", "--model", p(&garbage)])), 2);
}

#[test]
fn full_workflow_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = write_data(d);
    let model = learn_model(d);

    let o = run(&["order", "--input", p(&data), "--replicates", "4", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let out = d.join("boot");
    let o = run(&["bootstrap", "--input", p(&data), "--replicates", "5", "--seed", "2", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["votes.csv", "model.json", "edges.csv", "edges.dot", "aldag.dot"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let cv = d.join("cv");
    let o = run(&[
        "cv", "--input", p(&data), "--folds", "2", "--replicates", "2", "--algorithms", "bhc,kparents:1", "--out-dir", p(&cv),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(cv.join("records.csv").exists() && cv.join("summary.csv").exists());

    let o = run(&["aldag", "--model", p(&model), "--dot", p(&d.join("g.dot")), "--json", p(&d.join("g.json"))]);
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(d.join("g.dot")).unwrap().starts_with("digraph"));

    let o = run(&["whatif", "--model", p(&model), "--evidence", "X1=v1", "--soft", "X2=0.3,0.7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["whatif", "--model", p(&model), "--target", "X4", "--sweep", "X1,X2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["mi", "--model", p(&model), "--target", "X4"]);
    assert_eq!(code(&o), 0);

    let o = run(&[
        "export", "--model", p(&model), "--tree-dot", p(&d.join("t.dot")), "--stages-csv", p(&d.join("s.csv")),
        "--sample-csv", p(&d.join("sample.csv")), "--n", "50", "--seed", "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sample = std::fs::read_to_string(d.join("sample.csv")).unwrap();
    assert_eq!(sample.lines().count(), 51);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = run(&[
            "--threads", threads, "bootstrap", "--input", p(&data), "--replicates", "6", "--seed", "9", "--out-dir", p(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["votes.csv", "model.json", "edges.csv", "edges.dot", "aldag.dot"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let learn = || run(&["learn", "--input", p(&data)]).stdout;
    assert_eq!(learn(), learn());
}
