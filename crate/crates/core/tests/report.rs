mod common;

use std::fs;

use common::{golden_path, scenario_path};
use teleodd_core::mode::Policy;
use teleodd_core::runlog::{parse_log, recompute_metrics, render_report, ReportFormat, CSV_HEADER};
use teleodd_core::scenario::load_scenario;
use teleodd_core::sim::{run, RunOptions};

fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(expected, actual, "{name}");
}

fn metrics() -> Vec<teleodd_core::runlog::Metrics> {
    let mut out = Vec::new();
    for (name, policy) in [
        ("construction_zone.scn", Policy::OddT2),
        ("construction_zone.scn", Policy::OddT1),
        ("obstructed_bend.scn", Policy::OddT2),
    ] {
        let sc = load_scenario(&scenario_path(name)).unwrap();
        let o = run(&sc, &RunOptions { policy: Some(policy), ..Default::default() }).unwrap();
        out.push(recompute_metrics(&parse_log(&o.log).unwrap()));
    }
    out
}

#[test]
fn reports_match_golden_files() {
    let m = metrics();
    check_golden("report.txt", &render_report(&m, ReportFormat::Text));
    let csv = render_report(&m, ReportFormat::Csv);
    assert!(csv.starts_with(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + m.len());
    check_golden("report.csv", &csv);
}

#[test]
fn empty_reports() {
    assert!(render_report(&[], ReportFormat::Text).contains("no runs"));
    assert_eq!(render_report(&[], ReportFormat::Csv).trim_end(), CSV_HEADER.trim_end());
}
