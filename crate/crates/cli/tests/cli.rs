use std::path::Path;
use std::process::{Command, Output};

use cgc_core::dataset::write_tudataset;
use cgc_core::experiment::take_subset;
use cgc_core::synthetic::synthetic_enzymes_like;

fn cgc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgc"))
        .args(args)
        .env_remove("CGC_DATA_DIR")
        .output()
        .expect("binary runs")
}

const QUICK: [&str; 10] = [
    "--dataset",
    "synthetic-enzymes",
    "--subset",
    "60",
    "--epochs-gen",
    "3",
    "--epochs-con",
    "2",
    "--epochs-cls",
    "3",
];

fn run_into(dir: &Path) -> Output {
    let mut args = vec!["run"];
    args.extend(QUICK);
    args.extend(["--out", dir.to_str().unwrap()]);
    cgc(&args)
}

#[test]
fn repeated_runs_write_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (oa, ob) = (run_into(a.path()), run_into(b.path()));
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(oa.stdout, ob.stdout);
    assert!(String::from_utf8_lossy(&oa.stdout).starts_with("CGC  "));
    let read = |d: &Path| std::fs::read(d.join("report.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn invalid_config_exits_with_two() {
    let mut args = vec!["run"];
    args.extend(QUICK);
    args.extend(["--omega", "1.5"]);
    let out = cgc(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("omega"));

    assert_eq!(cgc(&["run", "--dataset", "ENZYMES"]).status.code(), Some(2));
    assert_eq!(cgc(&["run", "--dataset", "synthetic-enzymes", "--norm", "max"]).status.code(), Some(2));
    assert_eq!(cgc(&["ablate", "--axis", "depth", "--dataset", "synthetic-enzymes"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "omgea = 0.3\n").unwrap();
    assert_eq!(cgc(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn missing_data_exits_with_three() {
    let out = cgc(&["run", "--dataset", "ENZYMES", "--data-dir", "/nonexistent/cgc"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "dataset = \"synthetic-enzymes\"\nsubset = 60\nepochs_gen = 2\nepochs_con = 1\nepochs_cls = 2\nnorm = \"one\"\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = cgc(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--norm",
        "nuclear",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"norm\": \"nuclear\""), "{manifest}");
    assert!(manifest.contains("\"epochs_gen\": 2"));
}

#[test]
fn ablate_prints_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--axis", "negatives"];
    args.extend(QUICK);
    args.extend(["--out", dir.path().to_str().unwrap()]);
    let out = cgc(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("axis,value,f1_micro"));
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
    assert!(dir.path().join("ablation-negatives.csv").is_file());
    assert!(dir.path().join("negatives-both").join("report.json").is_file());
}

#[test]
fn stats_reads_tu_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = take_subset(&synthetic_enzymes_like(600, 0), 30, 0);
    ds.name = "TOY".into();
    write_tudataset(&ds, dir.path(), "TOY").unwrap();
    let out = cgc(&["stats", "--dataset", "TOY", "--data-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("TOY"));
}
