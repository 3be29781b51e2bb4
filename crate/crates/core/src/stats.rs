//! Post-processing of simulated ensembles: Gini coefficient, log-binned
//! histograms, the sorted-rank flux matrix and its water divide.

use thiserror::Error;

use crate::numeric::{geomspace, neumaier_sum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("histogram edges must be strictly increasing, positive and at least two")]
    BadEdges,
    #[error("no water divide: the flux matrix has no anticorrelated two-class structure")]
    NoDivideFound,
}

/// Gini coefficient `sum_ij |w_i - w_j| / (2 N^2 mean(w))`.
///
/// Evaluated in `O(N log N)` through the rank formula on a sorted copy.
pub fn gini(values: &[f64]) -> Result<f64, StatsError> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    gini_sorted(&sorted)
}

/// [`gini`] for values already sorted in ascending order.
pub fn gini_sorted(ascending: &[f64]) -> Result<f64, StatsError> {
    let n = ascending.len();
    if n == 0 {
        return Err(StatsError::DegenerateInput("empty input"));
    }
    if ascending[0] < 0.0 || !ascending[n - 1].is_finite() {
        return Err(StatsError::DegenerateInput(
            "values must be finite and nonnegative",
        ));
    }
    let total = neumaier_sum(ascending.iter().copied());
    if total <= 0.0 {
        return Err(StatsError::DegenerateInput("all values are zero"));
    }
    let nf = n as f64;
    let weighted = neumaier_sum(
        ascending
            .iter()
            .enumerate()
            .map(|(i, &x)| (2.0 * (i + 1) as f64 - nf - 1.0) * x),
    );
    Ok((weighted / (nf * total)).max(0.0))
}

/// Which quantity a Gini series is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GiniBasis {
    /// Raw wealth, floor included.
    #[default]
    Wealth,
    /// Excess above the floor.
    Excess,
}

/// Geometrically spaced bin edges.
pub fn log_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    geomspace(lo, hi, bins + 1)
}

/// Counts of excess wealth per log bin, accumulated over a time window.
///
/// Values below the first edge land in the first bin and values at or above
/// the last edge in the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct LogHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub t_start: u64,
    pub t_end: u64,
    /// Number of ensemble snapshots accumulated.
    pub samples: u64,
}

impl LogHistogram {
    pub fn new(edges: Vec<f64>, t_start: u64, t_end: u64) -> Result<Self, StatsError> {
        if edges.len() < 2 || edges[0] <= 0.0 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(StatsError::BadEdges);
        }
        let bins = edges.len() - 1;
        Ok(Self {
            edges,
            counts: vec![0; bins],
            t_start,
            t_end,
            samples: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_of(&self, value: f64) -> usize {
        let i = self.edges.partition_point(|e| *e <= value);
        i.saturating_sub(1).min(self.bins() - 1)
    }

    /// Adds one snapshot of excess values.
    pub fn add(&mut self, excess: &[f64]) {
        for &v in excess {
            let b = self.bin_of(v);
            self.counts[b] += 1;
        }
        self.samples += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts divided by their total.
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Mean and standard deviation of `ln(excess)` using bin log-centers.
    pub fn log_moments(&self) -> (f64, f64) {
        let total = self.total() as f64;
        let centers: Vec<f64> = self
            .edges
            .windows(2)
            .map(|w| 0.5 * (w[0].ln() + w[1].ln()))
            .collect();
        let m = neumaier_sum(centers.iter().zip(&self.counts).map(|(x, &c)| x * c as f64)) / total;
        let v = neumaier_sum(
            centers
                .iter()
                .zip(&self.counts)
                .map(|(x, &c)| (x - m).powi(2) * c as f64),
        ) / total;
        (m, v.sqrt())
    }
}

/// Histogram of all excess snapshots in a window.
pub fn log_histogram<'a, I>(
    snapshots: I,
    edges: &[f64],
    t_start: u64,
    t_end: u64,
) -> Result<LogHistogram, StatsError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut h = LogHistogram::new(edges.to_vec(), t_start, t_end)?;
    for s in snapshots {
        h.add(s);
    }
    Ok(h)
}

/// Sorted-wealth time series for a set of ranks (1 = wealthiest).
///
/// `values[r][t]` is the excess of rank `ranks[r]` at `times[t]`, after
/// re-sorting the whole ensemble at that time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankSeries {
    pub ranks: Vec<usize>,
    pub times: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

impl RankSeries {
    pub fn new(ranks: Vec<usize>) -> Self {
        let values = vec![Vec::new(); ranks.len()];
        Self {
            ranks,
            times: Vec::new(),
            values,
        }
    }

    /// Records one time point from an ensemble sorted in descending order.
    pub fn push(&mut self, t: u64, descending: &[f64]) {
        self.times.push(t);
        for (series, &rank) in self.values.iter_mut().zip(&self.ranks) {
            series.push(descending[rank - 1]);
        }
    }
}

/// Ranks `1..=40` followed by logarithmic steps up to `n`.
pub fn flux_ranks(n: usize) -> Vec<usize> {
    let dense = n.min(40);
    let mut ranks: Vec<usize> = (1..=dense).collect();
    if n > dense {
        let steps = 60;
        for i in 1..=steps {
            let r = (dense as f64 * (n as f64 / dense as f64).powf(i as f64 / steps as f64)).round()
                as usize;
            let r = r.clamp(dense + 1, n);
            if *ranks.last().unwrap() < r {
                ranks.push(r);
            }
        }
    }
    ranks
}

/// Accumulated products of sorted-rank increments and their log indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxMatrix {
    pub ranks: Vec<usize>,
    /// Row-major `ranks.len()` squared.
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl FluxMatrix {
    pub fn dim(&self) -> usize {
        self.ranks.len()
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim() + j]
    }

    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.dim() + j]
    }

    /// Fraction of sampled columns with rank in `[lo, hi]` where `C(row, j) < 0`.
    pub fn negative_fraction(&self, row: usize, lo: usize, hi: usize) -> f64 {
        let cols: Vec<usize> = (0..self.dim())
            .filter(|&j| self.ranks[j] >= lo && self.ranks[j] <= hi)
            .collect();
        if cols.is_empty() {
            return f64::NAN;
        }
        cols.iter().filter(|&&j| self.c(row, j) < 0.0).count() as f64 / cols.len() as f64
    }
}

/// Signed log indicator `sign(A) [ln(1 + |A|)]^2`.
pub fn log_indicator(a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.signum() * a.abs().ln_1p().powi(2)
    }
}

/// `A_ij = sum_t dw_i(t) dw_j(t)` over the sorted series, `C_ij = log_indicator(A_ij)`.
pub fn flux_matrix(series: &RankSeries) -> FluxMatrix {
    let k = series.ranks.len();
    let diffs: Vec<Vec<f64>> = series
        .values
        .iter()
        .map(|v| v.windows(2).map(|w| w[1] - w[0]).collect())
        .collect();
    let mut a = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let s = neumaier_sum(diffs[i].iter().zip(&diffs[j]).map(|(x, y)| x * y));
            a[i * k + j] = s;
            a[j * k + i] = s;
        }
    }
    let c = a.iter().map(|&x| log_indicator(x)).collect();
    FluxMatrix {
        ranks: series.ranks.clone(),
        a,
        c,
    }
}

/// Minimum fraction of negative cross-class entries for a split to count.
pub const DIVIDE_MIN_ANTICORRELATION: f64 = 0.75;

/// Split of the sampled ranks into an upper and a lower class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSplit {
    /// Last rank of the upper class (1 = only the wealthiest agent).
    pub rank: usize,
    /// Number of sampled ranks in the upper class.
    pub split: usize,
    /// Mean agreement of `sign(C)` with the partition, in `[-1, 1]`.
    pub score: f64,
    /// Fraction of cross-class entries with `C < 0`.
    pub cross_negative_fraction: f64,
}

/// The water divide and the coarser splits that led to it.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterDivide {
    /// Accepted splits, outermost first; the last one is the divide.
    pub levels: Vec<RankSplit>,
}

impl WaterDivide {
    pub fn divide(&self) -> RankSplit {
        *self.levels.last().expect("a divide has at least one level")
    }

    pub fn rank(&self) -> usize {
        self.divide().rank
    }
}

/// Best two-class split of the leading `end` sampled ranks.
///
/// Every split into `{upper, lower}` is scored by
/// `sum_{i != j} sign(C_ij) * (+1 same class, -1 across)`; the smallest split
/// wins ties.
fn best_split(fm: &FluxMatrix, end: usize) -> RankSplit {
    let sign = |i: usize, j: usize| -> i64 {
        let c = fm.c(i, j);
        (c > 0.0) as i64 - (c < 0.0) as i64
    };
    let total: i64 = (0..end)
        .map(|i| {
            (0..end)
                .filter(|&j| j != i)
                .map(|j| sign(i, j))
                .sum::<i64>()
        })
        .sum();
    // cross = sum of sign over i < s <= j; moving index s - 1 across the
    // split updates it in O(end)
    let mut cross = 0i64;
    let mut best = (0usize, i64::MIN);
    for s in 1..end {
        let m = s - 1;
        for j in 0..end {
            if j < m {
                cross -= sign(j, m);
            } else if j > m {
                cross += sign(m, j);
            }
        }
        // off-diagonal pairs are counted twice: same = total - 2 cross
        let score = total - 4 * cross;
        if score > best.1 {
            best = (s, score);
        }
    }
    let (split, score) = best;
    let negatives = (0..split)
        .flat_map(|i| (split..end).map(move |j| (i, j)))
        .filter(|&(i, j)| fm.c(i, j) < 0.0)
        .count();
    RankSplit {
        rank: fm.ranks[split - 1],
        split,
        score: score as f64 / (end * (end - 1)) as f64,
        cross_negative_fraction: negatives as f64 / (split * (end - split)) as f64,
    }
}

/// [`water_divide_with`] at [`DIVIDE_MIN_ANTICORRELATION`].
pub fn water_divide(fm: &FluxMatrix) -> Result<WaterDivide, StatsError> {
    water_divide_with(fm, DIVIDE_MIN_ANTICORRELATION)
}

/// Rank boundary between the wealthy tail and the bulk of the flux matrix.
///
/// The sampled ranks are split into the two classes that best agree with
/// `sign(C)`. While the cross block of the split is at least
/// `min_anticorrelation` negative, the upper class is split again the same
/// way; the divide is the last accepted split, the topmost boundary across
/// which wealth flows in opposite directions. Fails with
/// [`StatsError::NoDivideFound`] if even the first split is rejected.
pub fn water_divide_with(
    fm: &FluxMatrix,
    min_anticorrelation: f64,
) -> Result<WaterDivide, StatsError> {
    let mut levels = Vec::new();
    let mut end = fm.dim();
    while end >= 2 {
        let split = best_split(fm, end);
        if !(split.cross_negative_fraction >= min_anticorrelation) {
            break;
        }
        levels.push(split);
        end = split.split;
    }
    if levels.is_empty() {
        return Err(StatsError::NoDivideFound);
    }
    Ok(WaterDivide { levels })
}
