//! Multi-run simulation driver.
//!
//! Runs are independent and may execute on any number of threads. Each run
//! draws its deviates from [`CounterRng`] keyed by the master seed, so a
//! record depends only on `(params, schedule, run_id)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Ensemble, ModelError, ModelParams};
use crate::numeric::neumaier_sum;
use crate::rng::CounterRng;
use crate::stats::{flux_ranks, gini_sorted, GiniBasis, LogHistogram, RankSeries, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Params(ModelError),
    #[error("invalid recording schedule: {0}")]
    Schedule(String),
    #[error("run {run}, day {t}: {source}")]
    Step {
        run: u32,
        t: u64,
        #[source]
        source: ModelError,
    },
    #[error("run {run}, day {t}: {source}")]
    Stats {
        run: u32,
        t: u64,
        #[source]
        source: StatsError,
    },
}

/// Windowed histogram accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSchedule {
    pub edges: Vec<f64>,
    pub start: u64,
    /// Window length in days.
    pub window: u64,
    /// Days between accumulated snapshots inside a window.
    pub sample_stride: u64,
}

/// What a run records, and when.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSchedule {
    /// Days at which the full sorted ensemble is kept; strictly increasing.
    pub snapshot_times: Vec<u64>,
    /// Days between scalar-series (and rank-series) samples.
    pub series_stride: u64,
    /// Ranks (1 = wealthiest) followed in the rank series.
    pub ranks: Vec<usize>,
    pub gini_basis: GiniBasis,
    pub histograms: Option<HistogramSchedule>,
}

pub const DEFAULT_SNAPSHOTS: usize = 75;
pub const DEFAULT_SERIES_STRIDE: u64 = 30;

impl RecordingSchedule {
    /// 75 log-spaced snapshots, a 30-day stride and the flux-matrix ranks.
    pub fn default_for(params: &ModelParams) -> Self {
        Self {
            snapshot_times: log_spaced_times(params.t_max, DEFAULT_SNAPSHOTS),
            series_stride: DEFAULT_SERIES_STRIDE,
            ranks: flux_ranks(params.n_agents),
            gini_basis: GiniBasis::Wealth,
            histograms: None,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Schedule(m));
        if self.series_stride == 0 {
            return bad("series_stride must be positive".into());
        }
        if self.snapshot_times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("snapshot times must be strictly increasing".into());
        }
        if let Some(&last) = self.snapshot_times.last() {
            if last > params.t_max {
                return bad(format!(
                    "snapshot time {last} is beyond t_max = {}",
                    params.t_max
                ));
            }
        }
        if let Some(&r) = self.ranks.iter().find(|&&r| r == 0 || r > params.n_agents) {
            return bad(format!("rank {r} outside 1..={}", params.n_agents));
        }
        if self.ranks.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ranks must be strictly increasing".into());
        }
        if let Some(h) = &self.histograms {
            if h.window == 0 || h.sample_stride == 0 {
                return bad("histogram window and sample stride must be positive".into());
            }
            LogHistogram::new(h.edges.clone(), 0, 0)
                .map_err(|e| EngineError::Schedule(e.to_string()))?;
        }
        Ok(())
    }
}

/// `count` distinct days spread geometrically over `[10, t_max]` (fewer when
/// `t_max` is small).
pub fn log_spaced_times(t_max: u64, count: usize) -> Vec<u64> {
    if t_max == 0 || count == 0 {
        return vec![];
    }
    let lo = 10f64.min(t_max as f64);
    let hi = t_max as f64;
    let mut out: Vec<u64> = (0..count)
        .map(|i| {
            if count == 1 {
                t_max
            } else {
                (lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).round() as u64
            }
        })
        .collect();
    out.dedup();
    out
}

/// One sorted ensemble, wealthiest first, stored as excess above the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: u64,
    pub excess_desc: Vec<f64>,
}

impl Snapshot {
    pub fn wealth_desc(&self, floor: f64) -> Vec<f64> {
        self.excess_desc.iter().map(|e| floor + e).collect()
    }
}

/// Observables of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub params: ModelParams,
    pub run_id: u32,
    pub mean_series: Vec<(u64, f64)>,
    /// Largest wealth.
    pub max_series: Vec<(u64, f64)>,
    pub gini_series: Vec<(u64, f64)>,
    pub snapshots: Vec<Snapshot>,
    /// Sorted excess of the scheduled ranks, sampled with the series stride.
    pub rank_series: RankSeries,
    pub histograms: Vec<LogHistogram>,
    /// Largest `|sum w - N w1| / (N w1)` over every day of a coupled run;
    /// zero for free runs.
    pub max_conservation_error: f64,
}

impl TrajectoryRecord {
    pub fn floor(&self) -> f64 {
        self.params.wp
    }

    /// `(t, ln(max excess))` at the series stride.
    pub fn max_log_excess_series(&self) -> Vec<(u64, f64)> {
        self.max_series
            .iter()
            .map(|&(t, w)| (t, (w - self.params.wp).ln()))
            .collect()
    }
}

/// `(t, ln(w_max - wp))` at every snapshot.
pub fn max_log_excess(rec: &TrajectoryRecord) -> Vec<(u64, f64)> {
    rec.snapshots
        .iter()
        .filter_map(|s| s.excess_desc.first().map(|&e| (s.t, e.ln())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Serial,
    /// Runs spread over the current rayon pool.
    #[default]
    Runs,
}

/// All `params.n_runs` runs, ordered by run id.
pub fn run(
    params: &ModelParams,
    schedule: &RecordingSchedule,
) -> Result<Vec<TrajectoryRecord>, EngineError> {
    run_with(params, schedule, Parallelism::Runs)
}

pub fn run_with(
    params: &ModelParams,
    schedule: &RecordingSchedule,
    parallelism: Parallelism,
) -> Result<Vec<TrajectoryRecord>, EngineError> {
    params.validate().map_err(EngineError::Params)?;
    schedule.validate(params)?;
    let ids: Vec<u32> = (0..params.n_runs as u32).collect();
    match parallelism {
        Parallelism::Serial => ids
            .iter()
            .map(|&r| run_single(params, schedule, r))
            .collect(),
        Parallelism::Runs => ids
            .par_iter()
            .map(|&r| run_single(params, schedule, r))
            .collect(),
    }
}

struct Recorder<'a> {
    params: &'a ModelParams,
    schedule: &'a RecordingSchedule,
    record: TrajectoryRecord,
    sorted: Vec<f64>,
    scratch: Vec<f64>,
    next_snapshot: usize,
    hist: Option<LogHistogram>,
}

impl<'a> Recorder<'a> {
    fn new(params: &'a ModelParams, schedule: &'a RecordingSchedule, run_id: u32) -> Self {
        Self {
            params,
            schedule,
            record: TrajectoryRecord {
                params: params.clone(),
                run_id,
                mean_series: Vec::new(),
                max_series: Vec::new(),
                gini_series: Vec::new(),
                snapshots: Vec::new(),
                rank_series: RankSeries::new(schedule.ranks.clone()),
                histograms: Vec::new(),
                max_conservation_error: 0.0,
            },
            sorted: Vec::with_capacity(params.n_agents),
            scratch: Vec::with_capacity(params.n_agents),
            next_snapshot: 0,
            hist: None,
        }
    }

    fn sort_desc(&mut self, ens: &Ensemble) {
        self.sorted.clear();
        self.sorted.extend_from_slice(ens.excess());
        self.sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    }

    fn observe(&mut self, ens: &Ensemble) -> Result<(), EngineError> {
        let t = ens.t();
        let run = self.record.run_id;
        if self.params.mode.is_coupled() {
            let target = self.params.n_agents as f64 * self.params.w1;
            let err = (ens.total_wealth() - target).abs() / target;
            self.record.max_conservation_error = self.record.max_conservation_error.max(err);
        }
        let on_stride = t.is_multiple_of(self.schedule.series_stride) || t == self.params.t_max;
        let on_snapshot = self.schedule.snapshot_times.get(self.next_snapshot) == Some(&t);
        if on_stride || on_snapshot {
            self.sort_desc(ens);
        }
        if on_stride {
            let floor = ens.floor();
            self.record.mean_series.push((t, ens.mean_wealth()));
            self.record.max_series.push((t, floor + self.sorted[0]));
            self.scratch.clear();
            match self.schedule.gini_basis {
                GiniBasis::Wealth => self
                    .scratch
                    .extend(self.sorted.iter().rev().map(|e| floor + e)),
                GiniBasis::Excess => self.scratch.extend(self.sorted.iter().rev()),
            }
            let g = gini_sorted(&self.scratch).map_err(|source| EngineError::Stats {
                run,
                t,
                source,
            })?;
            self.record.gini_series.push((t, g));
            self.record.rank_series.push(t, &self.sorted);
        }
        if on_snapshot {
            self.record.snapshots.push(Snapshot {
                t,
                excess_desc: self.sorted.clone(),
            });
            self.next_snapshot += 1;
        }
        if let Some(h) = &self.schedule.histograms {
            if t >= h.start && (t - h.start).is_multiple_of(h.sample_stride) {
                let k = (t - h.start) / h.window;
                let t_start = h.start + k * h.window;
                if self.hist.as_ref().map(|x| x.t_start) != Some(t_start) {
                    if let Some(done) = self.hist.take() {
                        self.record.histograms.push(done);
                    }
                    let t_end = (t_start + h.window).min(self.params.t_max + 1);
                    self.hist = Some(
                        LogHistogram::new(h.edges.clone(), t_start, t_end)
                            .map_err(|source| EngineError::Stats { run, t, source })?,
                    );
                }
                self.hist.as_mut().unwrap().add(ens.excess());
            }
        }
        Ok(())
    }

    fn finish(mut self) -> TrajectoryRecord {
        if let Some(done) = self.hist.take() {
            self.record.histograms.push(done);
        }
        self.record
    }
}

/// One run from the all-at-`w1` initial condition to `t_max`.
pub fn run_single(
    params: &ModelParams,
    schedule: &RecordingSchedule,
    run_id: u32,
) -> Result<TrajectoryRecord, EngineError> {
    let rng = CounterRng::new(params.seed);
    let mut ens = Ensemble::initial(params);
    let mut draws = vec![0.0; params.n_agents];
    let mut rec = Recorder::new(params, schedule, run_id);
    rec.observe(&ens)?;
    for day in 0..params.t_max {
        rng.fill_day(run_id, day as u32, 0, &mut draws);
        ens.advance(params, &draws)
            .map_err(|source| EngineError::Step {
                run: run_id,
                t: day + 1,
                source,
            })?;
        rec.observe(&ens)?;
    }
    Ok(rec.finish())
}

/// Total of a wealth vector, compensated.
pub fn total(values: &[f64]) -> f64 {
    neumaier_sum(values.iter().copied())
}
