//! Subcommand implementations. Each one computes its datasets, writes them
//! through an [`Exporter`] and returns the manifest.

use std::f64::consts::LN_10;
use std::fs;
use std::path::Path;

use gbm_wealth::analytics::{self, AnalyticsError, GaussianEnvelope};
use gbm_wealth::engine::{
    self, EngineError, HistogramSchedule, Parallelism, RecordingSchedule, TrajectoryRecord,
};
use gbm_wealth::numeric::{mean, pearson};
use gbm_wealth::stationary::{
    self, EigenOptions, StationaryError, StationaryProblem, StationarySolution,
};
use gbm_wealth::stats::{self, flux_ranks, log_edges, FluxMatrix, LogHistogram, StatsError};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ExperimentConfig, ParseError};
use crate::export::{read_csv, ExportError, ExportManifest, Exporter, Kind, MANIFEST_FILE};

/// Leading eigenvalue below which a mode is not treated as stationary.
pub const STATIONARY_EIGENVALUE_MIN: f64 = 1.0 - 1e-6;
/// Clearance in decades a stationary peak needs from both grid edges.
pub const INTERIOR_CLEARANCE_DECADES: f64 = 2.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ParseError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("epsilon = {epsilon}: {source}")]
    Stationary {
        epsilon: f64,
        #[source]
        source: StationaryError,
    },
    #[error("{0}")]
    Comparison(String),
    #[error(transparent)]
    Export(#[from] ExportError),
}

impl CliError {
    /// 2 for configuration problems, 3 for simulation or solver failures,
    /// 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Engine(EngineError::Params(_) | EngineError::Schedule(_)) => 2,
            CliError::Engine(_)
            | CliError::Analytics(_)
            | CliError::Stationary { .. }
            | CliError::Comparison(_) => 3,
            CliError::Export(_) => 4,
        }
    }
}

pub fn recording_schedule(cfg: &ExperimentConfig, with_histograms: bool) -> RecordingSchedule {
    let p = &cfg.params;
    RecordingSchedule {
        snapshot_times: engine::log_spaced_times(p.t_max, cfg.snapshots),
        series_stride: cfg.series_stride,
        ranks: flux_ranks(p.n_agents),
        gini_basis: cfg.gini_basis,
        histograms: with_histograms.then(|| HistogramSchedule {
            edges: log_edges(cfg.histogram_min, cfg.histogram_max, cfg.histogram_bins),
            start: cfg.histogram_start,
            window: cfg.histogram_window,
            sample_stride: cfg.histogram_stride,
        }),
    }
}

fn parallelism(cfg: &ExperimentConfig) -> Parallelism {
    if cfg.parallel {
        Parallelism::Runs
    } else {
        Parallelism::Serial
    }
}

/// Opens the output directory, first removing the files a previous export
/// listed in its manifest.
fn open_output(cfg: &ExperimentConfig) -> Result<Exporter, CliError> {
    let dir = &cfg.out;
    if dir.join(MANIFEST_FILE).exists() {
        let old = ExportManifest::read(dir)?;
        for entry in old
            .entries
            .iter()
            .map(|e| dir.join(&e.path))
            .chain([dir.join(MANIFEST_FILE)])
        {
            if entry.exists() {
                fs::remove_file(&entry).map_err(|source| ExportError::Io {
                    path: entry,
                    source,
                })?;
            }
        }
    }
    Ok(Exporter::create(dir, &cfg.params)?)
}

fn series_rows(rec: &TrajectoryRecord) -> Vec<Vec<f64>> {
    let log_max = rec.max_log_excess_series();
    rec.mean_series
        .iter()
        .zip(&rec.max_series)
        .zip(&rec.gini_series)
        .zip(&log_max)
        .map(|((((t, mean), (_, max)), (_, g)), (_, lm))| vec![*t as f64, *mean, *max, *lm, *g])
        .collect()
}

const SERIES_COLUMNS: [(&str, &str); 5] = [
    ("t", "day"),
    ("mean_wealth", "wealth"),
    ("max_wealth", "wealth"),
    ("max_log_excess", "ln(wealth - floor)"),
    ("gini", "1"),
];

fn write_series(ex: &mut Exporter, rec: &TrajectoryRecord) -> Result<(), CliError> {
    ex.csv(
        &format!("series_run{}.csv", rec.run_id),
        Kind::Series,
        &SERIES_COLUMNS,
        &series_rows(rec),
    )?;
    Ok(())
}

fn write_flux(ex: &mut Exporter, run_id: u32, fm: &FluxMatrix) -> Result<(), CliError> {
    let k = fm.dim();
    let rows: Vec<Vec<f64>> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| {
            vec![
                fm.ranks[i] as f64,
                fm.ranks[j] as f64,
                fm.a(i, j),
                fm.c(i, j),
            ]
        })
        .collect();
    ex.csv(
        &format!("flux_run{run_id}.csv"),
        Kind::Matrix,
        &[
            ("rank_i", "rank"),
            ("rank_j", "rank"),
            ("a", "wealth^2"),
            ("c", "1"),
        ],
        &rows,
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimulateRun {
    run: u32,
    max_conservation_error: f64,
    final_mean_wealth: f64,
    final_max_wealth: f64,
    final_gini: f64,
}

/// Scalar series, rank series, sorted snapshots, windowed histograms and the
/// flux matrix of every run.
pub fn simulate(cfg: &ExperimentConfig) -> Result<ExportManifest, CliError> {
    let schedule = recording_schedule(cfg, true);
    let records = engine::run_with(&cfg.params, &schedule, parallelism(cfg))?;
    let mut ex = open_output(cfg)?;
    let mut report = Vec::new();
    for rec in &records {
        let r = rec.run_id;
        write_series(&mut ex, rec)?;

        let rs = &rec.rank_series;
        let mut columns = vec![("t".to_string(), "day")];
        columns.extend(
            rs.ranks
                .iter()
                .map(|k| (format!("rank_{k}"), "wealth - floor")),
        );
        let rows: Vec<Vec<f64>> = rs
            .times
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                std::iter::once(t as f64)
                    .chain(rs.values.iter().map(|v| v[ti]))
                    .collect()
            })
            .collect();
        let cols: Vec<(&str, &str)> = columns.iter().map(|(c, u)| (c.as_str(), *u)).collect();
        ex.csv(
            &format!("rank_series_run{r}.csv"),
            Kind::Series,
            &cols,
            &rows,
        )?;

        if cfg.export_snapshots && !rec.snapshots.is_empty() {
            let names: Vec<String> = rec.snapshots.iter().map(|s| format!("t_{}", s.t)).collect();
            let mut cols = vec![("rank", "rank")];
            cols.extend(names.iter().map(|n| (n.as_str(), "wealth")));
            let wealth: Vec<Vec<f64>> = rec
                .snapshots
                .iter()
                .map(|s| s.wealth_desc(rec.floor()))
                .collect();
            let rows: Vec<Vec<f64>> = (0..cfg.params.n_agents)
                .map(|i| {
                    std::iter::once((i + 1) as f64)
                        .chain(wealth.iter().map(|w| w[i]))
                        .collect()
                })
                .collect();
            ex.csv(&format!("snapshots_run{r}.csv"), Kind::Series, &cols, &rows)?;
        }

        ex.csv(
            &format!("histograms_run{r}.csv"),
            Kind::Histogram,
            &HISTOGRAM_COLUMNS,
            &histogram_rows(&rec.histograms),
        )?;

        write_flux(&mut ex, r, &stats::flux_matrix(&rec.rank_series))?;

        let last = |s: &[(u64, f64)]| s.last().map_or(f64::NAN, |&(_, v)| v);
        report.push(SimulateRun {
            run: r,
            max_conservation_error: rec.max_conservation_error,
            final_mean_wealth: last(&rec.mean_series),
            final_max_wealth: last(&rec.max_series),
            final_gini: last(&rec.gini_series),
        });
    }
    ex.json("simulate_report.json", &report)?;
    Ok(ex.finish()?)
}

const HISTOGRAM_COLUMNS: [(&str, &str); 6] = [
    ("t_start", "day"),
    ("t_end", "day"),
    ("samples", "snapshots"),
    ("bin_lo", "wealth - floor"),
    ("bin_hi", "wealth - floor"),
    ("count", "agents"),
];

fn histogram_rows(hists: &[LogHistogram]) -> Vec<Vec<f64>> {
    hists
        .iter()
        .flat_map(|h| {
            h.edges.windows(2).zip(&h.counts).map(move |(e, &c)| {
                vec![
                    h.t_start as f64,
                    h.t_end as f64,
                    h.samples as f64,
                    e[0],
                    e[1],
                    c as f64,
                ]
            })
        })
        .collect()
}

/// Reads a histogram export back into its windows.
pub fn read_histograms(path: &Path) -> Result<Vec<LogHistogram>, CliError> {
    let table = read_csv(path)?;
    let bad = |m: &str| CliError::Comparison(format!("{}: {m}", path.display()));
    if table
        .header
        .iter()
        .map(String::as_str)
        .ne(HISTOGRAM_COLUMNS.iter().map(|(c, _)| *c))
    {
        return Err(bad("not a histogram export"));
    }
    let mut out: Vec<LogHistogram> = Vec::new();
    for row in &table.rows {
        let (t0, t1, samples, lo, hi, count) = (
            row[0] as u64,
            row[1] as u64,
            row[2] as u64,
            row[3],
            row[4],
            row[5] as u64,
        );
        match out.last_mut() {
            Some(h) if h.t_start == t0 && h.t_end == t1 => {
                if *h.edges.last().unwrap() != lo {
                    return Err(bad("histogram bins are not contiguous"));
                }
                h.edges.push(hi);
                h.counts.push(count);
            }
            _ => out.push(LogHistogram {
                edges: vec![lo, hi],
                counts: vec![count],
                t_start: t0,
                t_end: t1,
                samples,
            }),
        }
    }
    Ok(out)
}

/// Sum of every window of a histogram export.
pub fn merged_histogram(path: &Path) -> Result<LogHistogram, CliError> {
    let hists = read_histograms(path)?;
    let bad = |m: &str| CliError::Comparison(format!("{}: {m}", path.display()));
    let mut iter = hists.into_iter();
    let mut total = iter.next().ok_or_else(|| bad("no histogram windows"))?;
    for h in iter {
        if h.edges != total.edges {
            return Err(bad("windows use different bins"));
        }
        total
            .counts
            .iter_mut()
            .zip(&h.counts)
            .for_each(|(a, b)| *a += b);
        total.samples += h.samples;
        total.t_end = h.t_end;
    }
    Ok(total)
}

/// Log-spaced sample days `1..=t_max`.
fn curve_times(cfg: &ExperimentConfig) -> Vec<f64> {
    let hi = (cfg.params.t_max as f64).max(1.0);
    let n = cfg.curve_points;
    (0..n).map(|i| hi.powf(i as f64 / (n - 1) as f64)).collect()
}

#[derive(Debug, Serialize)]
struct QuantileReport {
    k: f64,
    peak_time: f64,
    peak_height: f64,
    peak_height_above_x0: f64,
}

#[derive(Debug, Serialize)]
struct AnalyticReport {
    beta: f64,
    n_agents: usize,
    x0: f64,
    drift_velocity: f64,
    quantiles: Vec<QuantileReport>,
}

/// N/k-ile curves for every `k`, the spread table and the turnover report.
pub fn analytic(cfg: &ExperimentConfig) -> Result<ExportManifest, CliError> {
    let p = &cfg.params;
    let env = GaussianEnvelope::from_wealth(p.w1, p.wp, p.beta, p.n_agents);
    let times = curve_times(cfg);
    let mut curves = Vec::new();
    let mut quantiles = Vec::new();
    for &k in &cfg.k_values {
        curves.push(analytics::quantile_curve(&env, k, &times)?);
        let height = analytics::peak_height(&env, k)?;
        quantiles.push(QuantileReport {
            k,
            peak_time: analytics::peak_time(&env, k)?,
            peak_height: height,
            peak_height_above_x0: height - env.x0,
        });
    }
    let mut ex = open_output(cfg)?;
    for c in &curves {
        let rows: Vec<Vec<f64>> = c
            .samples
            .iter()
            .map(|&(t, x)| vec![t, x, x - env.x0])
            .collect();
        ex.csv(
            &format!("quantile_k{}.csv", c.k),
            Kind::QuantileCurve,
            &[
                ("t", "day"),
                ("x", "ln(wealth - floor)"),
                ("x_minus_x0", "ln"),
            ],
            &rows,
        )?;
    }
    let rows: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| vec![t, env.center(t), env.sigma(t)])
        .collect();
    ex.csv(
        "sigma_table.csv",
        Kind::Series,
        &[
            ("t", "day"),
            ("center", "ln(wealth - floor)"),
            ("sigma", "ln"),
        ],
        &rows,
    )?;
    ex.json(
        "analytic_report.json",
        &AnalyticReport {
            beta: p.beta,
            n_agents: p.n_agents,
            x0: env.x0,
            drift_velocity: analytics::drift_velocity(p.beta),
            quantiles,
        },
    )?;
    Ok(ex.finish()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    /// A bell clear of both grid edges with eigenvalue at unity.
    Interior,
    /// Piled against an edge or decaying: not a stationary state.
    Boundary,
}

/// Interior when the peak clears both edges by two decades and the
/// eigenvalue is within `1e-6` of one.
pub fn classify(sol: &StationarySolution) -> ModeClass {
    let g = &sol.grid;
    let peak = sol.peak_x();
    let clear = (peak - g.x_min).min(g.x_max - peak) / LN_10;
    if clear >= INTERIOR_CLEARANCE_DECADES && sol.eigenvalue >= STATIONARY_EIGENVALUE_MIN {
        ModeClass::Interior
    } else {
        ModeClass::Boundary
    }
}

#[derive(Debug, Serialize)]
struct EigenpairReport {
    index: usize,
    eigenvalue: f64,
    iterations: usize,
    residual: f64,
}

#[derive(Debug, Serialize)]
struct EpsilonReport {
    epsilon: f64,
    classification: ModeClass,
    stationary: bool,
    peak_log10_excess: f64,
    log_mean: f64,
    log_sd: f64,
    eigenpairs: Vec<EigenpairReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tv_distance: Option<f64>,
}

/// Eigenmodes of the transfer operator for every epsilon in the sweep.
pub fn stationary(cfg: &ExperimentConfig) -> Result<ExportManifest, CliError> {
    let p = &cfg.params;
    let compare = match &cfg.compare_histogram {
        Some(path) => Some(merged_histogram(path)?),
        None => None,
    };
    let opts = EigenOptions {
        max_iterations: cfg.max_iterations,
        ..EigenOptions::default()
    };
    // independent solves, one per epsilon
    let solved = cfg
        .stationary_epsilons()
        .par_iter()
        .map(|&epsilon| {
            let problem = StationaryProblem {
                nodes: cfg.grid_nodes,
                reference: cfg.centroid_reference,
                ..StationaryProblem::new(p.beta, epsilon, p.w1, p.wp)
            };
            let wrap = |source| CliError::Stationary { epsilon, source };
            let sols = problem.solve(cfg.modes, &opts).map_err(wrap)?;
            let tv = match &compare {
                Some(h) => Some(stationary::compare_to_simulation(&sols[0], h).map_err(wrap)?),
                None => None,
            };
            Ok((epsilon, sols, tv))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut ex = open_output(cfg)?;
    let mut report = Vec::new();
    for (epsilon, sols, tv) in &solved {
        for (j, s) in sols.iter().enumerate() {
            let rows: Vec<Vec<f64>> = s
                .mode
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    let x = s.grid.x(i);
                    vec![x, x.exp(), m]
                })
                .collect();
            ex.csv(
                &format!("eigenmode_eps{epsilon}_mode{j}.csv"),
                Kind::Eigenmode,
                &[
                    ("x", "ln(wealth - floor)"),
                    ("excess", "wealth - floor"),
                    ("p", "probability"),
                ],
                &rows,
            )?;
        }
        let lead = &sols[0];
        let class = classify(lead);
        let (log_mean, log_sd) = lead.x_moments();
        report.push(EpsilonReport {
            epsilon: *epsilon,
            classification: class,
            stationary: class == ModeClass::Interior,
            peak_log10_excess: lead.peak_x() / LN_10,
            log_mean,
            log_sd,
            eigenpairs: sols
                .iter()
                .enumerate()
                .map(|(index, s)| EigenpairReport {
                    index,
                    eigenvalue: s.eigenvalue,
                    iterations: s.iterations,
                    residual: s.residual,
                })
                .collect(),
            tv_distance: *tv,
        });
    }
    ex.json("eigen_report.json", &report)?;
    Ok(ex.finish()?)
}

#[derive(Debug, Serialize)]
struct SplitReport {
    rank: usize,
    score: f64,
    cross_negative_fraction: f64,
}

#[derive(Debug, Serialize)]
struct CorrelateRun {
    run: u32,
    /// Absent when no anticorrelated split exists.
    divide_rank: Option<usize>,
    levels: Vec<SplitReport>,
    /// Fraction of negative `C(1, j)` over the ranks below the divide.
    top_row_negative_fraction: Option<f64>,
    /// Time-averaged wealth held at the divide rank.
    divide_mean_wealth: Option<f64>,
    gini_log_max_correlation: f64,
}

/// Flux matrices, water divides and the Gini / top-wealth correlation.
pub fn correlate(cfg: &ExperimentConfig) -> Result<ExportManifest, CliError> {
    let schedule = recording_schedule(cfg, false);
    let records = engine::run_with(&cfg.params, &schedule, parallelism(cfg))?;
    let mut ex = open_output(cfg)?;
    let mut report = Vec::new();
    for rec in &records {
        write_series(&mut ex, rec)?;
        let fm = stats::flux_matrix(&rec.rank_series);
        write_flux(&mut ex, rec.run_id, &fm)?;
        let (divide_rank, levels, top_row, divide_wealth) = match stats::water_divide(&fm) {
            Ok(d) => {
                let top = fm.negative_fraction(0, d.rank() + 1, cfg.params.n_agents);
                let held = &rec.rank_series.values[d.divide().split - 1];
                let wealth = rec.floor() + mean(held);
                let levels = d
                    .levels
                    .iter()
                    .map(|s| SplitReport {
                        rank: s.rank,
                        score: s.score,
                        cross_negative_fraction: s.cross_negative_fraction,
                    })
                    .collect();
                (Some(d.rank()), levels, Some(top), Some(wealth))
            }
            Err(StatsError::NoDivideFound) => (None, Vec::new(), None, None),
            Err(source) => {
                return Err(EngineError::Stats {
                    run: rec.run_id,
                    t: cfg.params.t_max,
                    source,
                }
                .into())
            }
        };
        let gini: Vec<f64> = rec.gini_series.iter().map(|&(_, g)| g).collect();
        let log_max: Vec<f64> = rec
            .max_log_excess_series()
            .iter()
            .map(|&(_, m)| m)
            .collect();
        report.push(CorrelateRun {
            run: rec.run_id,
            divide_rank,
            levels,
            top_row_negative_fraction: top_row,
            divide_mean_wealth: divide_wealth,
            gini_log_max_correlation: pearson(&gini, &log_max),
        });
    }
    ex.json("correlate_report.json", &report)?;
    Ok(ex.finish()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cfg_err = CliError::Config(ParseError { issues: vec![] });
        assert_eq!(cfg_err.exit_code(), 2);
        let solver = CliError::Stationary {
            epsilon: 0.0,
            source: StationaryError::NoOverlap,
        };
        assert_eq!(solver.exit_code(), 3);
        let io = CliError::Export(ExportError::Duplicate("x".into()));
        assert_eq!(io.exit_code(), 4);
    }
}
