use std::fs;
use std::path::Path;
use std::process::Command;

use customs_select::cli::{execute, parse_cli, CliError, RESULTS_ROOT_ENV};
use customs_select::ingest::write_declarations;
use customs_select::synthgen::{generate, GeneratorConfig};

const BIN: &str = env!("CARGO_BIN_EXE_customs-select");

fn small_args(root: &Path) -> Vec<String> {
    [
        "customs-select",
        "--numweeks",
        "6",
        "--epoch",
        "2",
        "--gen",
        "num_items=4000",
        "--gen",
        "num_importers=800",
        "--output",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([root.display().to_string()])
    .collect()
}

#[test]
fn synthetic_run_writes_one_row_per_week() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_cli(small_args(dir.path())).unwrap();
    let mut out = Vec::new();
    let arts = execute(&cfg, &mut out).unwrap();
    assert_eq!(arts.len(), 1);
    let csv = fs::read_to_string(&arts[0].results_csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(arts[0].results_csv.starts_with(dir.path().join("results/performances")));
    assert!(arts[0].config_json.exists());
    assert_eq!(arts[0].plot_csvs.len(), 2);
    for p in &arts[0].plot_csvs {
        let text = fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next(), Some("week_index,raw,normalized,moving_average"));
    }
    let summary = String::from_utf8(out).unwrap();
    assert!(summary.contains("whole run"));
    assert!(summary.contains("Norm-Rev"));
}

#[test]
fn identical_invocations_produce_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |root: &Path| {
        let status = Command::new(BIN).args(&small_args(root)[1..]).output().unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    run(a.path());
    run(b.path());
    let dir_a = a.path().join("results/performances");
    let mut names: Vec<_> = fs::read_dir(&dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for name in names {
        let fa = fs::read(dir_a.join(&name)).unwrap();
        let fb = fs::read(b.path().join("results/performances").join(&name)).unwrap();
        assert_eq!(fa, fb, "{name:?}");
    }
}

#[test]
fn missing_data_file_fails_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = Command::new(BIN)
        .args(["--data", missing.to_str().unwrap(), "--output"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.csv"), "{err}");

    let cfg = parse_cli(["x", "--data", missing.to_str().unwrap()]).unwrap();
    match execute(&cfg, &mut Vec::new()) {
        Err(CliError::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("expected IO error, got {other:?}"),
    }
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = Command::new(BIN).args(["--weights", "0.5/0.6"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum"));
    let out = Command::new(BIN).args(["--bogus"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn file_input_with_bad_rows_writes_rejects_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let gen = GeneratorConfig {
        num_items: 3_000,
        num_weeks: 10,
        num_importers: 500,
        ..GeneratorConfig::default()
    };
    let mut buf = Vec::new();
    write_declarations(&generate(&gen).unwrap(), &mut buf).unwrap();
    buf.extend_from_slice(b"BAD1,2013-02-02,I,D,USA,O,1,1,10,20,5,1,0,0\n");
    let data = dir.path().join("imports.csv");
    fs::write(&data, buf).unwrap();

    let out = Command::new(BIN)
        .args(["--data", data.to_str().unwrap(), "--numweeks", "4", "--epoch", "1", "--save", "1"])
        .env(RESULTS_ROOT_ENV, dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let perf = dir.path().join("results/performances");
    let rejects: Vec<_> = fs::read_dir(&perf)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".rejects.csv"))
        .collect();
    assert_eq!(rejects.len(), 1);
    let text = fs::read_to_string(&rejects[0]).unwrap();
    assert!(text.contains("3002,cif<fob"), "{text}");
    let models: Vec<_> = fs::read_dir(dir.path().join("results/models")).unwrap().collect();
    assert_eq!(models.len(), 2);
}

#[test]
fn repeat_runs_successive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = small_args(dir.path());
    args.extend(["--repeat".into(), "2".into(), "--seed".into(), "5".into()]);
    let cfg = parse_cli(args).unwrap();
    let arts = execute(&cfg, &mut Vec::new()).unwrap();
    let seeds: Vec<u64> = arts.iter().map(|a| a.seed).collect();
    assert_eq!(seeds, vec![5, 6]);
    assert!(arts[0].results_csv.to_string_lossy().ends_with("seed5.csv"));
}
