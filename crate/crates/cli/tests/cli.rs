use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chaoslrd::stats::{Metadata, ResultTable, Row};
use chaoslrd::{Estimate, Verdict};
use proptest::prelude::*;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaoslrd")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn levycheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["levycheck", "--levy", "pareto:5", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn unwritable_out_names_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("taken");
    fs::write(&file, b"x").unwrap();
    let bad = file.join("results");
    let o = run(&["covariance", "--p", "2", "--beta", "0.3", "--n", "1024", "--reps", "50", "--out", &out_arg(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains(bad.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = run(&["covariance", "--p", "2", "--beta", "0.3", "--n", "1024", "--reps", "200", "--seed", "3", "--out", &out_arg(d.path())]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let name = "covariance.csv";
    assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
}

#[test]
fn config_file_is_merged_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# covariance run\np=2\nbeta=0.3\nn=1024\nreps=100\nseed=9\nquadrature=auto\n").unwrap();
    let out = dir.path().join("o");
    let o = run(&["covariance", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", &out_arg(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("covariance.csv")).unwrap();
    assert!(text.contains("# seed=4\n"));
    assert!(text.contains("# p=2\n"));

    fs::write(&cfg, "p=2\nbeta=0.3\nbogus=1\n").unwrap();
    let o = run(&["covariance", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn clt_outside_its_regime_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["clt", "--p", "2", "--beta", "0.8", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CLT requires p(beta-1) < -1"), "{}", stderr(&o));
}

#[test]
fn small_nclt_run_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "nclt", "--p", "1", "--beta", "0.6", "--ladder", "256,1024", "--reps", "200", "--lags", "0,1", "--out",
        &out_arg(dir.path()),
    ]);
    // Verdicts at this size are not the point; the files are.
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", stderr(&o));
    for name in ["covariance.csv", "scaling.csv", "marginal.csv", "moments.csv", "summary.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("scaling_slope"));
}

#[test]
fn moments_prints_the_formula() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["moments", "--p", "1", "--beta", "0.6", "--r", "2", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let closed = chaoslrd::gamma_product(0.6) * 2.0 / (0.6 * 1.6);
    let text = fs::read_to_string(dir.path().join("formula.csv")).unwrap();
    let row = text.lines().filter(|l| !l.starts_with('#')).nth(1).unwrap();
    let value: f64 = row.rsplit(',').nth(1).unwrap().parse().unwrap();
    assert!((value / closed - 1.0).abs() < 1e-9, "{row}");
}

#[test]
fn unresolved_hermite_grid_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["hermite", "--p", "2", "--beta", "0.6", "--cells", "200", "--reps", "100", "--out", &out_arg(dir.path())]);
    assert_ne!(o.status.code(), Some(0));
}

fn table(verdicts: &[Verdict]) -> ResultTable {
    ResultTable {
        rows: verdicts
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut r = Row::info(format!("row{i}"), Estimate::exact(1.0), 1.0, "test");
                r.verdict = *v;
                r
            })
            .collect(),
        metadata: Metadata { seed: 1, build: "test".into(), wall_time_s: 0.0, config: Vec::new() },
    }
}

#[test]
fn report_fails_on_a_failed_row() {
    let dir = tempfile::tempdir().unwrap();
    chaoslrd::report::write_summary(&dir.path().join("summary.json"), &table(&[Verdict::Pass, Verdict::Fail])).unwrap();
    let o = run(&["report", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FAILED row row1"));
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(run(&["report", "--out", &out_arg(empty.path())]).status.code(), Some(2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn report_exit_code_tracks_verdicts(v in prop::collection::vec(0u8..3, 1..6)) {
        let verdicts: Vec<Verdict> =
            v.iter().map(|&k| [Verdict::Pass, Verdict::Fail, Verdict::Info][k as usize]).collect();
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("run");
        fs::create_dir(&sub).unwrap();
        chaoslrd::report::write_summary(&sub.join("summary.json"), &table(&verdicts)).unwrap();
        let o = run(&["report", "--out", &out_arg(dir.path())]);
        let expected = if verdicts.contains(&Verdict::Fail) { 1 } else { 0 };
        prop_assert_eq!(o.status.code(), Some(expected));
    }
}
