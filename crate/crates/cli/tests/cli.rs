//! End-to-end runs of the `ivcheck` binary on generated data files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ivcheck_core::config::CONFIG_KEYS;
use ivcheck_core::sim::{generate, DgpFamily, DgpSpec};
use ivcheck_core::{data, RngSpec};

fn ivcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivcheck")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn fixture(dir: &Path, name: &str, family: DgpFamily, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let ds = generate(&DgpSpec::new(family, n), RngSpec::new(seed)).unwrap();
    data::write_csv(&ds, &path).unwrap();
    path
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let j = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[j].to_string()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn null_data_is_not_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture(dir.path(), "null.csv", DgpFamily::LinearIvNull, 1000, 1);
    let out = dir.path().join("out");
    let o = ivcheck(&["test", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z", "--seed", "5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let theta: Vec<f64> = column(&out.join("test_levels.csv"), "theta_corrected").iter().map(|t| t.parse().unwrap()).collect();
    assert_eq!(theta.len(), 3);
    assert!(theta.iter().all(|&t| t <= 0.0), "{theta:?}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("do not reject"));
}

#[test]
fn strong_violation_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture(dir.path(), "power.csv", DgpFamily::LinearIvPower { l: 1.0, sigma: 0.25 }, 2000, 2);
    let out = dir.path().join("out");
    let o = ivcheck(&["test", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z", "--seed", "5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(column(&out.join("test_levels.csv"), "reject").iter().all(|r| r == "true"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = ivcheck(&["test", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_lists_every_config_key() {
    let o = ivcheck(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for (key, _) in CONFIG_KEYS {
        assert!(text.contains(key), "help misses {key}");
    }
}

#[test]
fn result_file_schema_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture(dir.path(), "null.csv", DgpFamily::LinearIvNull, 1000, 1);
    let out = dir.path().join("out");
    ivcheck(&["test", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z", "--seed", "5", "--out", s(&out)]);
    let head = |name: &str| fs::read_to_string(out.join(name)).unwrap().lines().next().unwrap().to_string();
    let mut actual = vec!["# test_levels.csv".to_string(), head("test_levels.csv")];
    actual.push("# test_grid.csv".into());
    actual.push(head("test_grid.csv"));
    actual.push("# test_diagnostics.csv keys".into());
    actual.extend(column(&out.join("test_diagnostics.csv"), "key"));
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/test_schema.txt")).unwrap();
    assert_eq!(actual.join("\n"), golden.trim_end());
}

#[test]
fn tables_reference_the_manifest_and_replay_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture(dir.path(), "null.csv", DgpFamily::LinearIvNull, 600, 3);
    let out = dir.path().join("run");
    let o = ivcheck(&[
        "test", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z", "--seed", "11", "--jobs", "2", "--out", s(&out),
    ]);
    assert!(o.status.success());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let run_id = manifest["run_id"].as_str().unwrap();
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs, ["test_levels.csv", "test_grid.csv", "test_diagnostics.csv"]);
    for f in &outputs {
        assert!(column(&out.join(f), "run_id").iter().all(|r| r == run_id));
    }
    let again = dir.path().join("again");
    let o = ivcheck(&["replay", "--manifest", s(&out.join("manifest.json")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in &outputs {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn data_errors_name_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.csv");
    fs::write(&file, "y,x,z\n1,2,3\n4,oops,6\n").unwrap();
    let o = ivcheck(&["fit", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 2") && err.contains("`x`"), "{err}");
}

#[test]
fn simulate_writes_wide_and_cell_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = ivcheck(&["simulate", "--study", "table1", "--reps", "50", "--seed", "9", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let wide = out.join("study_table1.csv");
    assert_eq!(column(&wide, "n"), ["200", "500", "1000", "2000", "3000"]);
    assert_eq!(column(&out.join("study_table1_cells.csv"), "reps").len(), 15);
}

#[test]
fn overid_and_fit_print_their_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture(dir.path(), "null.csv", DgpFamily::LinearIvNull, 500, 4);
    let o = ivcheck(&["overid", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z", "--method", "hansen"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("dof = 2"));
    let o = ivcheck(&["fit", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("first_stage_f[x]"));
}

#[test]
fn identified_set_contains_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture(dir.path(), "null.csv", DgpFamily::LinearIvNull, 1000, 1);
    let out = dir.path().join("set");
    let o = ivcheck(&[
        "identified-set", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z", "--theta", "-0.2:0.2:3", "--theta",
        "0.5:2:4", "--draws", "300", "--seed", "1", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = out.join("identified_set.csv");
    let (t0, t1, acc) = (column(&table, "theta_0"), column(&table, "theta_1"), column(&table, "accepted"));
    assert_eq!(acc.len(), 12);
    let at = |a: &str, b: &str| acc[(0..12).find(|&i| t0[i] == a && t1[i] == b).unwrap()].as_str();
    assert_eq!(at("0", "2"), "true");
    assert_eq!(at("0", "0.5"), "false");
}

#[test]
fn mte_reports_bounds_only_when_given() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cf.csv");
    let mut w = csv::Writer::from_path(&file).unwrap();
    w.write_record(["y", "x", "z"]).unwrap();
    for i in 0..2000 {
        // Deterministic low-discrepancy draws of (Z, V).
        let z = -1.0 + 2.0 * ((i as f64 * 0.618_033_988_75) % 1.0);
        let v = (i as f64 * 0.414_213_562_37) % 1.0;
        let x = z + v;
        w.write_record([(x * (1.0 + v)).to_string(), x.to_string(), z.to_string()]).unwrap();
    }
    w.flush().unwrap();
    let out = dir.path().join("mte");
    let base = ["mte", "--data", s(&file), "--y", "y", "--x", "x", "--z", "z", "--x-values", "0.3,1.8", "--seed", "3"];
    let o = ivcheck(&[&base[..], &["--out", s(&out)]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(column(&out.join("mte_asf.csv"), "kind"), ["point", "needs-bounds"]);
    let o = ivcheck(&[&base[..], &["--y-bounds", "-1,6", "--out", s(&out)]].concat());
    assert!(o.status.success());
    assert_eq!(column(&out.join("mte_asf.csv"), "kind"), ["point", "interval"]);
    assert!(!column(&out.join("mte_effects.csv"), "mte").is_empty());
}
