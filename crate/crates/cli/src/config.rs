//! Experiment configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Lists are comma
//! separated. Every problem in a file is reported at once, each with the line
//! it comes from (line 0 for missing keys).

use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;

use gbm_wealth::model::ModelParams;
use gbm_wealth::stationary::CentroidReference;
use gbm_wealth::stats::GiniBasis;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration:\n{}", .issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
pub struct ParseError {
    pub issues: Vec<Issue>,
}

/// Everything an experiment needs: model, recording, solver and output
/// settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: ModelParams,

    pub snapshots: usize,
    pub series_stride: u64,
    pub gini_basis: GiniBasis,
    pub histogram_bins: usize,
    pub histogram_min: f64,
    pub histogram_max: f64,
    pub histogram_start: u64,
    pub histogram_window: u64,
    pub histogram_stride: u64,
    pub parallel: bool,

    pub k_values: Vec<f64>,
    pub curve_points: usize,

    pub epsilons: Vec<f64>,
    pub grid_nodes: usize,
    pub modes: usize,
    pub max_iterations: usize,
    pub centroid_reference: CentroidReference,
    pub compare_histogram: Option<PathBuf>,

    /// Write the full sorted ensemble at every snapshot day.
    pub export_snapshots: bool,
    pub out: PathBuf,
}

pub const REQUIRED_KEYS: [&str; 5] = ["n_agents", "beta", "mode", "seed", "t_max"];

pub const KEYS: [&str; 29] = [
    "n_agents",
    "beta",
    "epsilon",
    "w1",
    "wp",
    "mode",
    "t_max",
    "seed",
    "n_runs",
    "snapshots",
    "series_stride",
    "gini_basis",
    "histogram_bins",
    "histogram_min",
    "histogram_max",
    "histogram_start",
    "histogram_window",
    "histogram_stride",
    "parallel",
    "k_values",
    "curve_points",
    "epsilons",
    "grid_nodes",
    "modes",
    "max_iterations",
    "centroid_reference",
    "compare_histogram",
    "export_snapshots",
    "out",
];

impl ExperimentConfig {
    /// Defaults for everything but the model; the model keys are required in
    /// files.
    pub fn with_params(params: ModelParams) -> Self {
        Self {
            params,
            snapshots: 75,
            series_stride: 30,
            gini_basis: GiniBasis::Wealth,
            histogram_bins: 200,
            histogram_min: 1e-8,
            histogram_max: 1e8,
            histogram_start: 0,
            histogram_window: 1000,
            histogram_stride: 10,
            parallel: true,
            k_values: vec![0.01, 0.25, 1.0, 4.0, 16.0, 64.0],
            curve_points: 200,
            epsilons: Vec::new(),
            grid_nodes: 3600,
            modes: 1,
            max_iterations: 500_000,
            centroid_reference: CentroidReference::MeanWealth,
            compare_histogram: None,
            export_snapshots: true,
            out: PathBuf::from("out"),
        }
    }

    /// The epsilon sweep for `stationary`; the model epsilon when no list
    /// is given.
    pub fn stationary_epsilons(&self) -> Vec<f64> {
        if self.epsilons.is_empty() {
            vec![self.params.epsilon]
        } else {
            self.epsilons.clone()
        }
    }

    /// Canonical file form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n_agents", p.n_agents.to_string());
        kv("beta", fmt_f64(p.beta));
        kv("epsilon", fmt_f64(p.epsilon));
        kv("w1", fmt_f64(p.w1));
        kv("wp", fmt_f64(p.wp));
        kv("mode", p.mode.as_str().to_string());
        kv("t_max", p.t_max.to_string());
        kv("seed", p.seed.to_string());
        kv("n_runs", p.n_runs.to_string());
        kv("snapshots", self.snapshots.to_string());
        kv("series_stride", self.series_stride.to_string());
        kv("gini_basis", gini_basis_str(self.gini_basis).to_string());
        kv("histogram_bins", self.histogram_bins.to_string());
        kv("histogram_min", fmt_f64(self.histogram_min));
        kv("histogram_max", fmt_f64(self.histogram_max));
        kv("histogram_start", self.histogram_start.to_string());
        kv("histogram_window", self.histogram_window.to_string());
        kv("histogram_stride", self.histogram_stride.to_string());
        kv("parallel", self.parallel.to_string());
        kv("k_values", fmt_list(&self.k_values));
        kv("curve_points", self.curve_points.to_string());
        kv("epsilons", fmt_list(&self.epsilons));
        kv("grid_nodes", self.grid_nodes.to_string());
        kv("modes", self.modes.to_string());
        kv("max_iterations", self.max_iterations.to_string());
        kv(
            "centroid_reference",
            reference_str(self.centroid_reference).to_string(),
        );
        if let Some(path) = &self.compare_histogram {
            kv("compare_histogram", path.display().to_string());
        }
        kv("export_snapshots", self.export_snapshots.to_string());
        kv("out", self.out.display().to_string());
        s
    }
}

/// Shortest text that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", ")
}

fn gini_basis_str(b: GiniBasis) -> &'static str {
    match b {
        GiniBasis::Wealth => "wealth",
        GiniBasis::Excess => "excess",
    }
}

fn reference_str(r: CentroidReference) -> &'static str {
    match r {
        CentroidReference::Unit => "unit",
        CentroidReference::MeanWealth => "mean_wealth",
    }
}

struct Collector {
    issues: Vec<Issue>,
}

impl Collector {
    fn value<T: std::str::FromStr>(
        &mut self,
        line: usize,
        key: &str,
        raw: &str,
        what: &str,
    ) -> Option<T> {
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.issues.push(Issue {
                    line,
                    message: format!("{key}: expected {what}, got {raw:?}"),
                });
                None
            }
        }
    }

    fn list(&mut self, line: usize, key: &str, raw: &str) -> Option<Vec<f64>> {
        if raw.trim().is_empty() {
            return Some(Vec::new());
        }
        raw.split(',')
            .map(|item| {
                self.value::<f64>(line, key, item.trim(), "a comma-separated list of numbers")
            })
            .collect()
    }
}

/// Parses and validates a config file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ParseError> {
    let mut cfg = ExperimentConfig::with_params(ModelParams::default());
    let mut c = Collector { issues: Vec::new() };
    let mut seen: Vec<(&str, usize)> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            c.issues.push(Issue {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            c.issues.push(Issue {
                line,
                message: format!("unknown key {key:?}"),
            });
            continue;
        };
        if let Some((_, first)) = seen.iter().find(|(k, _)| *k == known) {
            c.issues.push(Issue {
                line,
                message: format!("duplicate key {key:?} (first set on line {first})"),
            });
            continue;
        }
        seen.push((known, line));
        let p = &mut cfg.params;
        match known {
            "n_agents" => {
                p.n_agents = c
                    .value(line, key, value, "a positive integer")
                    .unwrap_or(p.n_agents)
            }
            "beta" => p.beta = c.value(line, key, value, "a number").unwrap_or(p.beta),
            "epsilon" => p.epsilon = c.value(line, key, value, "a number").unwrap_or(p.epsilon),
            "w1" => p.w1 = c.value(line, key, value, "a number").unwrap_or(p.w1),
            "wp" => p.wp = c.value(line, key, value, "a number").unwrap_or(p.wp),
            "mode" => {
                p.mode = c
                    .value(line, key, value, "free, reset or skewed")
                    .unwrap_or(p.mode)
            }
            "t_max" => {
                p.t_max = c
                    .value(line, key, value, "a nonnegative integer")
                    .unwrap_or(p.t_max)
            }
            "seed" => {
                p.seed = c
                    .value(line, key, value, "an unsigned 64-bit integer")
                    .unwrap_or(p.seed)
            }
            "n_runs" => {
                p.n_runs = c
                    .value(line, key, value, "a positive integer")
                    .unwrap_or(p.n_runs)
            }
            "snapshots" => {
                cfg.snapshots = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.snapshots)
            }
            "series_stride" => {
                cfg.series_stride = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.series_stride)
            }
            "gini_basis" => match value {
                "wealth" => cfg.gini_basis = GiniBasis::Wealth,
                "excess" => cfg.gini_basis = GiniBasis::Excess,
                _ => c.issues.push(Issue {
                    line,
                    message: format!("gini_basis: expected wealth or excess, got {value:?}"),
                }),
            },
            "histogram_bins" => {
                cfg.histogram_bins = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.histogram_bins)
            }
            "histogram_min" => {
                cfg.histogram_min = c
                    .value(line, key, value, "a number")
                    .unwrap_or(cfg.histogram_min)
            }
            "histogram_max" => {
                cfg.histogram_max = c
                    .value(line, key, value, "a number")
                    .unwrap_or(cfg.histogram_max)
            }
            "histogram_start" => {
                cfg.histogram_start = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.histogram_start)
            }
            "histogram_window" => {
                cfg.histogram_window = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.histogram_window)
            }
            "histogram_stride" => {
                cfg.histogram_stride = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.histogram_stride)
            }
            "parallel" => {
                cfg.parallel = c
                    .value(line, key, value, "true or false")
                    .unwrap_or(cfg.parallel)
            }
            "k_values" => cfg.k_values = c.list(line, key, value).unwrap_or_default(),
            "curve_points" => {
                cfg.curve_points = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.curve_points)
            }
            "epsilons" => cfg.epsilons = c.list(line, key, value).unwrap_or_default(),
            "grid_nodes" => {
                cfg.grid_nodes = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.grid_nodes)
            }
            "modes" => cfg.modes = c.value(line, key, value, "an integer").unwrap_or(cfg.modes),
            "max_iterations" => {
                cfg.max_iterations = c
                    .value(line, key, value, "an integer")
                    .unwrap_or(cfg.max_iterations)
            }
            "centroid_reference" => match value {
                "unit" => cfg.centroid_reference = CentroidReference::Unit,
                "mean_wealth" => cfg.centroid_reference = CentroidReference::MeanWealth,
                _ => c.issues.push(Issue {
                    line,
                    message: format!(
                        "centroid_reference: expected unit or mean_wealth, got {value:?}"
                    ),
                }),
            },
            "compare_histogram" => cfg.compare_histogram = Some(PathBuf::from(value)),
            "export_snapshots" => {
                cfg.export_snapshots = c
                    .value(line, key, value, "true or false")
                    .unwrap_or(cfg.export_snapshots)
            }
            "out" => cfg.out = PathBuf::from(value),
            _ => unreachable!("every entry of KEYS is handled"),
        }
    }

    let missing: Vec<&str> = REQUIRED_KEYS
        .iter()
        .filter(|k| !seen.iter().any(|(s, _)| s == *k))
        .copied()
        .collect();
    if !missing.is_empty() {
        c.issues.push(Issue {
            line: 0,
            message: format!("missing required keys: {}", missing.join(", ")),
        });
    }

    // invariants, attributed to the line of the offending key
    let line_of = |key: &str| seen.iter().find(|(k, _)| *k == key).map_or(0, |(_, l)| *l);
    let invariant_keys = [
        ("n_agents", "n_agents"),
        ("beta", "beta"),
        ("(1 - beta)", "epsilon"),
        ("epsilon", "epsilon"),
        ("floor", "wp"),
        ("t_max", "t_max"),
        ("n_runs", "n_runs"),
    ];
    let parsed_ok = c.issues.is_empty();
    if parsed_ok {
        for v in cfg.params.violations() {
            let key = invariant_keys
                .iter()
                .find(|(prefix, _)| v.starts_with(prefix))
                .map_or("", |(_, k)| *k);
            c.issues.push(Issue {
                line: line_of(key),
                message: v,
            });
        }
    }
    let mut check = |ok: bool, key: &str, message: String| {
        if !ok {
            c.issues.push(Issue {
                line: line_of(key),
                message,
            });
        }
    };
    check(
        cfg.series_stride > 0,
        "series_stride",
        "series_stride must be positive".into(),
    );
    check(
        cfg.histogram_bins > 0,
        "histogram_bins",
        "histogram_bins must be positive".into(),
    );
    check(
        cfg.histogram_min > 0.0 && cfg.histogram_max > cfg.histogram_min,
        "histogram_max",
        format!(
            "histogram range needs 0 < histogram_min < histogram_max (got {} and {})",
            cfg.histogram_min, cfg.histogram_max
        ),
    );
    check(
        cfg.histogram_window > 0,
        "histogram_window",
        "histogram_window must be positive".into(),
    );
    check(
        cfg.histogram_stride > 0,
        "histogram_stride",
        "histogram_stride must be positive".into(),
    );
    check(
        cfg.k_values.iter().all(|k| *k > 0.0 && k.is_finite()),
        "k_values",
        "k_values must be positive".into(),
    );
    check(
        cfg.curve_points >= 2,
        "curve_points",
        "curve_points must be at least 2".into(),
    );
    check(
        cfg.epsilons.iter().all(|e| e.abs() < 1.0),
        "epsilons",
        "every entry of epsilons must satisfy |epsilon| < 1".into(),
    );
    check(
        cfg.grid_nodes >= 2,
        "grid_nodes",
        "grid_nodes must be at least 2".into(),
    );
    check(cfg.modes >= 1, "modes", "modes must be at least 1".into());
    check(
        cfg.max_iterations >= 1,
        "max_iterations",
        "max_iterations must be at least 1".into(),
    );

    if c.issues.is_empty() {
        Ok(cfg)
    } else {
        c.issues.sort_by_key(|i| i.line);
        Err(ParseError { issues: c.issues })
    }
}
