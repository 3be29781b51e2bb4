//! End-to-end behaviour of the exports and the binary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gbm_wealth::engine;
use gbm_wealth::model::Mode;
use gbm_wealth_cli::commands::{merged_histogram, read_histograms, recording_schedule};
use gbm_wealth_cli::export::MANIFEST_FILE;
use gbm_wealth_cli::{
    analytic, correlate, parse_config, read_csv, simulate, stationary, ExperimentConfig,
    ExportManifest,
};
use tempfile::TempDir;

const SMALL: &str = "
n_agents = 120
beta = 0.1
mode = reset
seed = 11
t_max = 1500
n_runs = 3
snapshots = 8
series_stride = 10
histogram_min = 1e-6
histogram_max = 1e6
histogram_bins = 40
histogram_window = 400
";

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = parse_config(SMALL).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn listing(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != MANIFEST_FILE)
        .collect()
}

fn manifest_paths(m: &ExportManifest) -> BTreeSet<String> {
    m.entries.iter().map(|e| e.path.clone()).collect()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

#[test]
fn shipped_configs_parse() {
    let dir = repo_file("configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn series_round_trip_exactly() {
    let tmp = TempDir::new().unwrap();
    let cfg = small(tmp.path());
    simulate(&cfg).unwrap();
    let records = engine::run(&cfg.params, &recording_schedule(&cfg, true)).unwrap();
    for rec in &records {
        let table = read_csv(&tmp.path().join(format!("series_run{}.csv", rec.run_id))).unwrap();
        assert_eq!(table.meta("seed"), Some("11"));
        let t = table.column("t").unwrap();
        let mean = table.column("mean_wealth").unwrap();
        let max = table.column("max_wealth").unwrap();
        let gini = table.column("gini").unwrap();
        assert_eq!(
            t,
            rec.mean_series
                .iter()
                .map(|p| p.0 as f64)
                .collect::<Vec<_>>()
        );
        assert_eq!(
            mean,
            rec.mean_series.iter().map(|p| p.1).collect::<Vec<_>>()
        );
        assert_eq!(max, rec.max_series.iter().map(|p| p.1).collect::<Vec<_>>());
        assert_eq!(
            gini,
            rec.gini_series.iter().map(|p| p.1).collect::<Vec<_>>()
        );

        let snaps = read_csv(&tmp.path().join(format!("snapshots_run{}.csv", rec.run_id))).unwrap();
        for s in &rec.snapshots {
            assert_eq!(
                snaps.column(&format!("t_{}", s.t)).unwrap(),
                s.wealth_desc(rec.floor())
            );
        }

        let hists =
            read_histograms(&tmp.path().join(format!("histograms_run{}.csv", rec.run_id))).unwrap();
        assert_eq!(hists, rec.histograms);
    }
}

#[test]
fn manifest_lists_exactly_the_written_files() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small(tmp.path());
    for (sub, action) in [
        ("sim", simulate as fn(&ExperimentConfig) -> _),
        ("an", analytic),
        ("cor", correlate),
    ] {
        cfg.out = tmp.path().join(sub);
        let m = action(&cfg).unwrap();
        assert_eq!(manifest_paths(&m), listing(&cfg.out), "{sub}");
        assert_eq!(ExportManifest::read(&cfg.out).unwrap(), m);
        assert!(m
            .entries
            .iter()
            .all(|e| e.seed == 11 && e.params_hash.len() == 64));
    }
}

#[test]
fn rerun_replaces_previous_export() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small(tmp.path());
    simulate(&cfg).unwrap();
    cfg.params.n_runs = 1;
    let m = simulate(&cfg).unwrap();
    assert_eq!(manifest_paths(&m), listing(tmp.path()));
    assert!(!tmp.path().join("series_run2.csv").exists());
}

#[test]
fn analytic_exports_one_curve_per_k() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small(tmp.path());
    cfg.k_values = vec![0.01, 1.0, 4.0];
    let m = analytic(&cfg).unwrap();
    let curves: Vec<_> = m
        .entries
        .iter()
        .filter(|e| e.path.starts_with("quantile_k"))
        .collect();
    assert_eq!(curves.len(), 3);
    let table = read_csv(&tmp.path().join("quantile_k1.csv")).unwrap();
    assert_eq!(table.rows.len(), cfg.curve_points);
}

#[test]
fn stationary_pairs_are_ordered_and_compared() {
    let tmp = TempDir::new().unwrap();
    let sim_dir = tmp.path().join("sim");
    let mut cfg = parse_config(
        "n_agents = 3600\nbeta = 0.06\nmode = skewed\nepsilon = -0.03\nseed = 3\nt_max = 20000\n\
         histogram_min = 1e-6\nhistogram_max = 1e7\nhistogram_bins = 260\nhistogram_start = 10000\n\
         histogram_window = 10000\nhistogram_stride = 30\nexport_snapshots = false\nmodes = 2\n",
    )
    .unwrap();
    cfg.out = sim_dir.clone();
    simulate(&cfg).unwrap();
    let hist_path = sim_dir.join("histograms_run0.csv");
    assert_eq!(merged_histogram(&hist_path).unwrap().t_start, 10_000);

    cfg.out = tmp.path().join("eig");
    cfg.compare_histogram = Some(hist_path);
    stationary(&cfg).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.out.join("eigen_report.json")).unwrap())
            .unwrap();
    let entry = &report[0];
    let pairs = entry["eigenpairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    assert!(pairs[1]["eigenvalue"].as_f64().unwrap() < pairs[0]["eigenvalue"].as_f64().unwrap());
    assert_eq!(entry["classification"], "interior");
    assert!(entry["tv_distance"].as_f64().unwrap() < 0.5);
    let mode = read_csv(&cfg.out.join("eigenmode_eps-0.03_mode0.csv")).unwrap();
    assert!((mode.column("p").unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn untaxed_mode_is_flagged_non_stationary() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small(tmp.path());
    cfg.params.beta = 0.06;
    cfg.epsilons = vec![0.0];
    stationary(&cfg).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eigen_report.json")).unwrap())
            .unwrap();
    assert_eq!(report[0]["stationary"], false);
    assert_eq!(report[0]["classification"], "boundary");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gbm-wealth"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.conf");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn binary_outputs_are_byte_identical_across_invocations() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), SMALL);
    let mut outputs = Vec::new();
    for (name, parallel) in [("a", true), ("b", false), ("c", true)] {
        let text = format!("{SMALL}parallel = {parallel}\n");
        let conf = write_config(tmp.path(), &text);
        let out = tmp.path().join(name);
        let status = bin()
            .args(["simulate", "--config"])
            .arg(&conf)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success());
        outputs.push(out);
    }
    let files = listing(&outputs[0]);
    for other in &outputs[1..] {
        assert_eq!(listing(other), files);
        for f in files.iter().chain([&MANIFEST_FILE.to_string()]) {
            assert_eq!(
                fs::read(outputs[0].join(f)).unwrap(),
                fs::read(other.join(f)).unwrap(),
                "{f}"
            );
        }
    }
    // overriding the seed changes the data
    let out = tmp.path().join("seeded");
    let status = bin()
        .args(["simulate", "--seed", "12", "--runs", "1", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success());
    let table = read_csv(&out.join("series_run0.csv")).unwrap();
    assert_eq!(table.meta("seed"), Some("12"));
    assert!(!out.join("series_run1.csv").exists());
    assert_ne!(
        fs::read(out.join("series_run0.csv")).unwrap(),
        fs::read(outputs[0].join("series_run0.csv")).unwrap()
    );
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");

    let bad = write_config(
        tmp.path(),
        "n_agents = 10\nbeta = 1.5\nmode = free\nseed = 1\nt_max = 10\n",
    );
    let o = bin()
        .args(["simulate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = bin()
        .args(["simulate", "--config"])
        .arg(tmp.path().join("missing.conf"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));

    let unconverged = write_config(
        tmp.path(),
        "n_agents = 10\nbeta = 0.06\nmode = free\nseed = 1\nt_max = 10\nmax_iterations = 3\n",
    );
    let o = bin()
        .args(["stationary", "--config"])
        .arg(&unconverged)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));

    let big_k = write_config(
        tmp.path(),
        "n_agents = 10\nbeta = 0.06\nmode = free\nseed = 1\nt_max = 10\nk_values = 1, 40\n",
    );
    let o = bin()
        .args(["analytic", "--config"])
        .arg(&big_k)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k = 40"));

    let zero_runs = write_config(tmp.path(), SMALL);
    let o = bin()
        .args(["simulate", "--runs", "0", "--config"])
        .arg(&zero_runs)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mode_and_seed_come_from_config() {
    let cfg = parse_config(SMALL).unwrap();
    assert_eq!(cfg.params.mode, Mode::Reset);
    assert_eq!(cfg.params.seed, 11);
}
