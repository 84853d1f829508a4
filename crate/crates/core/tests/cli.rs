use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

fn convsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// (name, param, value, metric, result, unit) rows, header skipped.
fn rows(o: &Output) -> Vec<Vec<String>> {
    let text = stdout(o);
    assert!(text.starts_with("name,param,value,metric,result,unit\n"));
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn metric(rows: &[Vec<String>], name: &str, metric: &str) -> f64 {
    rows.iter()
        .find(|r| r[0] == name && r[3] == metric)
        .unwrap_or_else(|| panic!("no {name}/{metric} row"))[4]
        .parse()
        .unwrap()
}

#[test]
fn run_reports_gain() {
    let o = convsim(&["run", fixture("valid/fig4_ideal.cir").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = rows(&o);
    let gain = metric(&rows, "fig4-ideal", "gain(in,out)");
    assert!((gain - 100.0).abs() < 1e-6 * 100.0);
    assert!(rows.iter().any(|r| r[3] == "vpp(out)" && r[5] == "V"));
}

#[test]
fn run_op_prints_node_voltages() {
    let o = convsim(&["run", fixture("valid/divider.cir").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let rows = rows(&o);
    assert_eq!(metric(&rows, "divider", "v(2)"), 0.5);
}

#[test]
fn syntax_error_names_line() {
    let o = convsim(&[
        "run",
        fixture("malformed/syntax_line3.cir").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("syntax_line3.cir:3:"), "{}", stderr(&o));
}

#[test]
fn validation_error_exits_one() {
    let o = convsim(&["run", fixture("solver/dangling.cir").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("node `2`"));
}

#[test]
fn singular_solve_exits_two() {
    let o = convsim(&[
        "run",
        fixture("solver/parallel_sources.cir").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(".op analysis failed"), "{}", stderr(&o));
}

#[test]
fn missing_file_exits_one() {
    let o = convsim(&["run", "/nonexistent/file.cir"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fig8_experiment() {
    let o = convsim(&["experiment", "fig8"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = rows(&o);
    assert!(rows.iter().all(|r| r[0] == "fig8"));
    let vpp = metric(&rows, "fig8", "vpp_out");
    assert!((vpp - 0.13).abs() <= 0.01 * 0.13, "{vpp}");
}

#[test]
fn table2_experiment() {
    let o = convsim(&["experiment", "table2"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = rows(&o);
    let cases: Vec<(&str, &str)> = rows
        .iter()
        .filter(|r| r[3] == "case")
        .map(|r| (r[0].as_str(), r[4].as_str()))
        .collect();
    assert_eq!(
        cases,
        [
            ("table2-case1", "Case I"),
            ("table2-case2", "Case II"),
            ("table2-case3", "Case III")
        ]
    );
    let behaviors: Vec<&str> = rows
        .iter()
        .filter(|r| r[3] == "behavior")
        .map(|r| r[4].as_str())
        .collect();
    assert_eq!(behaviors, ["attenuates", "amplifies", "attenuates"]);
}

#[test]
fn all_is_deterministic_union() {
    let a = convsim(&["experiment", "all"]);
    let b = convsim(&["experiment", "all"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let names: Vec<String> = rows(&a).into_iter().map(|r| r[0].clone()).collect();
    for n in [
        "fig6-ideal",
        "fig6",
        "fig7",
        "fig8",
        "table2-case3",
        "ferri",
    ] {
        assert!(names.iter().any(|x| x == n), "missing {n}");
    }
}

#[test]
fn unknown_experiment_exits_one() {
    let o = convsim(&["experiment", "fig9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown experiment"));
}

#[test]
fn sweep_r2_log() {
    let f = fixture("valid/fig4_ideal.cir");
    let o = convsim(&[
        "sweep",
        f.to_str().unwrap(),
        "--param",
        "R2",
        "--from",
        "1k",
        "--to",
        "100k",
        "--points",
        "5",
        "--log",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let gains: Vec<(f64, f64)> = rows(&o)
        .iter()
        .filter(|r| r[3] == "gain(in,out)")
        .map(|r| (r[2].parse().unwrap(), r[4].parse().unwrap()))
        .collect();
    assert_eq!(gains.len(), 5);
    assert!(gains.windows(2).all(|w| w[0].0 < w[1].0));
    for (r2, g) in gains {
        assert!((g - r2 / 1e3).abs() <= 1e-9 * g, "{r2} {g}");
    }
}

#[test]
fn sweep_bias_raises_gain() {
    let f = fixture("valid/bias_level2.cir");
    let o = convsim(&[
        "sweep",
        f.to_str().unwrap(),
        "--param",
        "IB",
        "--from",
        "1u",
        "--to",
        "1m",
        "--points",
        "6",
        "--log",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let gains: Vec<f64> = rows(&o)
        .iter()
        .filter(|r| r[3] == "gain(in,out)")
        .map(|r| r[4].parse().unwrap())
        .collect();
    assert_eq!(gains.len(), 6);
    assert!(gains.windows(2).all(|w| w[1] > w[0]), "{gains:?}");
}

#[test]
fn sweep_experiment_base() {
    let o = convsim(&[
        "sweep", "fig8", "--param", "R1", "--from", "4k", "--to", "8k", "--points", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(rows(&o).iter().all(|r| r[0] == "fig8" && r[1] == "R1"));
}

#[test]
fn sweep_unknown_parameter() {
    let f = fixture("valid/fig4_ideal.cir");
    let o = convsim(&[
        "sweep",
        f.to_str().unwrap(),
        "--param",
        "R9",
        "--from",
        "1",
        "--to",
        "2",
        "--points",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown parameter `R9`"));
}

#[test]
fn dump_waveform() {
    let o = convsim(&[
        "run",
        fixture("valid/fig4_ideal.cir").to_str().unwrap(),
        "--dump-waveform",
        "out",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,value"));
    assert_eq!(lines.count(), 251);

    let o = convsim(&["experiment", "fig6", "--dump-waveform", "out"]);
    assert_eq!(o.status.code(), Some(0));
    let peak = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .fold(0.0f64, f64::max);
    assert!(peak < 0.5 + 0.01, "{peak}");

    let o = convsim(&["experiment", "all", "--dump-waveform", "out"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn writes_out_file_and_table() {
    let dir = std::env::temp_dir().join(format!("convsim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("fig8.txt");
    let o = convsim(&[
        "experiment",
        "fig8",
        "--format",
        "table",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("name"));
    assert!(text.lines().any(|l| l.contains("vpp_out")));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn bad_usage_exits_one() {
    assert_eq!(convsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        convsim(&["sweep", "fig8", "--param", "R1"]).status.code(),
        Some(1)
    );
    assert_eq!(convsim(&["--help"]).status.code(), Some(0));
}
