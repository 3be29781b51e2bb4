//! Stationary log-excess density of the skewed process.
//!
//! The one-day evolution of the density of `x = ln(w - wp)` is discretized on
//! a uniform grid as a banded matrix whose row `r` holds the probabilities of
//! moving from node `r` to nodes `r + n`. The band is the law of
//! `ln(lambda)`, with its centroid shifted row by row by the status bias.
//! Mass leaving the grid at either end is lost, so the operator is
//! sub-stochastic and its leading eigenvector is the quasi-stationary mode.

use std::f64::consts::LN_10;

use thiserror::Error;

use crate::analytics::drift_velocity;
use crate::model::status_of_excess;
use crate::numeric::neumaier_sum;
use crate::stats::LogHistogram;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error("grid too coarse: the multiplier band covers {points:.2} grid spacings, at least 10 are needed")]
    GridTooCoarse { points: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid operator parameters: {0}")]
    InvalidParams(String),
    #[error("power iteration did not converge after {iterations} iterations (eigenvalue change {eigenvalue_change:.3e}, L1 change {vector_change:.3e})")]
    NotConverged {
        iterations: usize,
        eigenvalue_change: f64,
        vector_change: f64,
    },
    #[error("start vector has length {got}, grid has {expected} nodes")]
    StartLength { expected: usize, got: usize },
    #[error("mode and histogram ranges do not overlap")]
    NoOverlap,
}

/// Uniform grid in `x = ln(w - wp)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryGrid {
    pub x_min: f64,
    pub x_max: f64,
    /// Number of nodes.
    pub m: usize,
    pub dx: f64,
}

pub const DEFAULT_NODES: usize = 3600;
pub const DEFAULT_DECADES: f64 = 12.0;
/// Decades between the lower grid edge and the initial excess `w1 - wp`.
pub const DEFAULT_DECADES_BELOW: f64 = 8.0;
pub const MIN_BAND_POINTS: f64 = 10.0;

impl StationaryGrid {
    pub fn new(x_min: f64, x_max: f64, m: usize) -> Result<Self, StationaryError> {
        if m < 2 || !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(StationaryError::InvalidGrid(format!(
                "need at least 2 nodes and finite x_min < x_max (got m = {m}, [{x_min}, {x_max}])"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            m,
            dx: (x_max - x_min) / (m - 1) as f64,
        })
    }

    /// 12 decades with `ln(w1 - wp)` 8 decades above the lower edge.
    pub fn default_for(w1: f64, wp: f64, m: usize) -> Result<Self, StationaryError> {
        let x_min = (w1 - wp).ln() - DEFAULT_DECADES_BELOW * LN_10;
        Self::new(x_min, x_min + DEFAULT_DECADES * LN_10, m)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.x(i)).collect()
    }

    /// Grid spacings covered by the support of `ln(lambda)`.
    pub fn band_points(&self, beta: f64) -> f64 {
        (beta.ln_1p() - (-beta).ln_1p()) / self.dx
    }
}

/// Status level whose bias the reset normalization cancels.
///
/// The skewed step multiplies every excess by `1 + eps S`; the coupled
/// normalization then divides the whole ensemble by the mean factor. With
/// `MeanWealth`, row `r` is shifted by `ln(1 + eps S(x_r)) - ln(1 + eps S(w1))`;
/// with `Unit` the second term is dropped and every shift has the sign of
/// `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CentroidReference {
    Unit,
    #[default]
    MeanWealth,
}

/// Banded matrix with per-row column offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedOperator {
    m: usize,
    /// First column of each row (may be negative before clipping).
    first: Vec<isize>,
    /// Row coefficients, one slice of `width` per row.
    coeffs: Vec<f64>,
    width: usize,
}

impl BandedOperator {
    pub fn identity(m: usize) -> Self {
        Self {
            m,
            first: (0..m as isize).collect(),
            coeffs: vec![1.0; m],
            width: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// Number of stored diagonals.
    pub fn bandwidth(&self) -> usize {
        self.width
    }

    /// `K[r, c]`, zero outside the band.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let k = c as isize - self.first[r];
        if k < 0 || k >= self.width as isize {
            0.0
        } else {
            self.coeffs[r * self.width + k as usize]
        }
    }

    /// Nonzero entries of row `r` as `(column, value)`, clipped to the grid.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let f = self.first[r];
        self.coeffs[r * self.width..(r + 1) * self.width]
            .iter()
            .enumerate()
            .filter_map(move |(k, &v)| {
                let c = f + k as isize;
                (c >= 0 && (c as usize) < self.m).then_some((c as usize, v))
            })
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        neumaier_sum(self.row(r).map(|(_, v)| v))
    }

    /// Probability-weighted mean column offset of row `r` in grid units
    /// (before clipping).
    pub fn row_centroid(&self, r: usize) -> f64 {
        let c = &self.coeffs[r * self.width..(r + 1) * self.width];
        let total = neumaier_sum(c.iter().copied());
        let first = (self.first[r] - r as isize) as f64;
        neumaier_sum(c.iter().enumerate().map(|(k, v)| (first + k as f64) * v)) / total
    }

    /// One day of density evolution, `out = K^T p`.
    pub fn evolve(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &pr) in p.iter().enumerate() {
            if pr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += v * pr;
            }
        }
    }

    /// `out = K v`, the adjoint of [`evolve`](Self::evolve).
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).map(|(c, k)| k * v[c]).sum();
        }
    }
}

/// Masses of `ln(lambda)` (density `e^l / 2 beta` on `[ln(1-b), ln(1+b)]`)
/// projected on hat functions centred at `n dx`; returns the first offset and
/// the masses. The projection keeps total mass and mean exactly.
fn base_band(beta: f64, dx: f64) -> (isize, Vec<f64>) {
    let (a, b) = ((-beta).ln_1p(), beta.ln_1p());
    // integral of e^l (alpha + gamma (l - c)) over [p, q]; five-point
    // Gauss-Legendre is exact to rounding on cells this narrow and avoids
    // the cancellation of the closed-form primitive
    const NODES: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.236_926_885_056_189_1,
        0.478_628_670_499_366_5,
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
    ];
    let lin = |c: f64, alpha: f64, gamma: f64, p: f64, q: f64| -> f64 {
        if q <= p {
            return 0.0;
        }
        let (mid, half) = (0.5 * (p + q), 0.5 * (q - p));
        half * NODES
            .iter()
            .zip(WEIGHTS)
            .map(|(z, w)| {
                let l = mid + half * z;
                w * l.exp() * (alpha + gamma * (l - c))
            })
            .sum::<f64>()
    };
    let n_lo = (a / dx).floor() as isize;
    let n_hi = (b / dx).ceil() as isize;
    let masses = (n_lo..=n_hi)
        .map(|n| {
            let c = n as f64 * dx;
            let up = lin(c, 1.0, 1.0 / dx, (c - dx).max(a), c.min(b));
            let down = lin(c, 1.0, -1.0 / dx, c.max(a), (c + dx).min(b));
            (up + down) / (2.0 * beta)
        })
        .collect();
    (n_lo, masses)
}

/// Discretized one-day operator of the skewed process.
pub fn build_operator(
    grid: &StationaryGrid,
    beta: f64,
    epsilon: f64,
    w1: f64,
    wp: f64,
    reference: CentroidReference,
) -> Result<BandedOperator, StationaryError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(StationaryError::InvalidParams(format!(
            "beta = {beta} must lie in (0, 1)"
        )));
    }
    if !(epsilon.abs() < 1.0) {
        return Err(StationaryError::InvalidParams(format!(
            "|epsilon| = {} must be below 1",
            epsilon.abs()
        )));
    }
    if !(wp >= 0.0 && w1 > wp) {
        return Err(StationaryError::InvalidParams(format!(
            "need 0 <= wp < w1 (wp = {wp}, w1 = {w1})"
        )));
    }
    let points = grid.band_points(beta);
    if points < MIN_BAND_POINTS {
        return Err(StationaryError::GridTooCoarse { points });
    }
    let (n_lo, mut band) = base_band(beta, grid.dx);
    let total = neumaier_sum(band.iter().copied());
    band.iter_mut().for_each(|v| *v /= total);

    let reference_shift = match reference {
        CentroidReference::Unit => 0.0,
        CentroidReference::MeanWealth => (epsilon * status_of_excess(w1 - wp, w1)).ln_1p(),
    };
    let shifts: Vec<f64> = (0..grid.m)
        .map(|r| {
            if epsilon == 0.0 {
                0.0
            } else {
                let s = status_of_excess(grid.x(r).exp(), w1);
                ((epsilon * s).ln_1p() - reference_shift) / grid.dx
            }
        })
        .collect();
    let max_shift = shifts.iter().fold(0.0f64, |m, s| m.max(s.abs())).ceil() as isize;
    // every row shares one window: base band widened by the largest shift
    // plus one slot for the fractional split
    let lo = n_lo - max_shift;
    let width = band.len() + 2 * max_shift as usize + 1;
    let mut first = Vec::with_capacity(grid.m);
    let mut coeffs = vec![0.0; grid.m * width];
    for (r, &shift) in shifts.iter().enumerate() {
        first.push(r as isize + lo);
        let row = &mut coeffs[r * width..(r + 1) * width];
        let whole = shift.floor();
        let frac = shift - whole;
        let base = (n_lo - lo) + whole as isize;
        for (k, &v) in band.iter().enumerate() {
            let at = (base + k as isize) as usize;
            row[at] += (1.0 - frac) * v;
            if frac > 0.0 {
                row[at + 1] += frac * v;
            }
        }
    }
    Ok(BandedOperator {
        m: grid.m,
        first,
        coeffs,
        width,
    })
}

/// Stopping rule and limits for [`leading_eigenpairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    pub eigenvalue_tol: f64,
    pub vector_tol: f64,
    pub max_iterations: usize,
    /// Start vector; a unit Gaussian bump at `ln(w1 - wp)` when absent.
    pub start: Option<Vec<f64>>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            eigenvalue_tol: 1e-10,
            vector_tol: 1e-8,
            max_iterations: 100_000,
            start: None,
        }
    }
}

/// One converged eigenpair of the evolution operator.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub grid: StationaryGrid,
    pub eigenvalue: f64,
    /// Leading mode: nonnegative with unit sum. Deflated modes change sign
    /// and are scaled to unit L1 norm, largest component positive.
    pub mode: Vec<f64>,
    /// `|K^T v - lambda v|_1` at the returned vector.
    pub residual: f64,
    pub iterations: usize,
}

impl StationarySolution {
    /// Mean and standard deviation of `x` under the (leading) mode.
    pub fn x_moments(&self) -> (f64, f64) {
        let xs = self.grid.xs();
        let total = neumaier_sum(self.mode.iter().copied());
        let mean = neumaier_sum(xs.iter().zip(&self.mode).map(|(x, p)| x * p)) / total;
        let var = neumaier_sum(
            xs.iter()
                .zip(&self.mode)
                .map(|(x, p)| (x - mean).powi(2) * p),
        ) / total;
        (mean, var.sqrt())
    }

    /// Grid coordinate of the largest mode component.
    pub fn peak_x(&self) -> f64 {
        let i = self
            .mode
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.grid.x(i)
    }

    /// Mode mass with `x` in `[lo, hi]`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        neumaier_sum(
            self.mode
                .iter()
                .enumerate()
                .filter(|(i, _)| (lo..=hi).contains(&self.grid.x(*i)))
                .map(|(_, p)| *p),
        )
    }
}

fn gaussian_start(grid: &StationaryGrid, center: f64) -> Vec<f64> {
    let mut v: Vec<f64> = grid
        .xs()
        .iter()
        .map(|x| (-0.5 * (x - center).powi(2)).exp())
        .collect();
    if v.iter().all(|p| *p == 0.0) {
        v.iter_mut().for_each(|p| *p = 1.0);
    }
    v
}

/// `pairs[k] = (lambda_k, right mode, left mode)` already found; removes
/// their components from `v`'s image.
struct Deflation {
    pairs: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

impl Deflation {
    fn apply(&self, op: &BandedOperator, v: &[f64], out: &mut [f64]) {
        op.evolve(v, out);
        for (lambda, right, left) in &self.pairs {
            let num: f64 = left.iter().zip(v).map(|(l, x)| l * x).sum();
            let den: f64 = left.iter().zip(right).map(|(l, r)| l * r).sum();
            let c = lambda * num / den;
            out.iter_mut().zip(right).for_each(|(o, r)| *o -= c * r);
        }
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Power iteration with per-step normalization.
///
/// `step` maps `v` to the operator image; the iterate is kept at unit L1
/// norm with its largest component positive.
fn power_iterate<F>(
    mut v: Vec<f64>,
    opts: &EigenOptions,
    mut step: F,
) -> Result<(f64, Vec<f64>, usize), StationaryError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    normalize_signed(&mut v);
    let mut next = vec![0.0; v.len()];
    let mut lambda = f64::NAN;
    let mut d_lambda = f64::INFINITY;
    let mut d_vec = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        step(&v, &mut next);
        // Rayleigh-style estimate on the unit-L1 iterate: the image's norm,
        // signed by its alignment with v
        let dot: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
        let norm = l1(&next);
        if norm == 0.0 {
            return Ok((0.0, v, it));
        }
        let estimate = norm * dot.signum();
        next.iter_mut().for_each(|x| *x /= estimate);
        d_lambda = (estimate - lambda).abs();
        d_vec = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        lambda = estimate;
        std::mem::swap(&mut v, &mut next);
        if d_lambda < opts.eigenvalue_tol && d_vec < opts.vector_tol {
            normalize_signed(&mut v);
            return Ok((lambda, v, it));
        }
    }
    Err(StationaryError::NotConverged {
        iterations: opts.max_iterations,
        eigenvalue_change: d_lambda,
        vector_change: d_vec,
    })
}

/// Unit L1 norm, largest-magnitude component positive.
fn normalize_signed(v: &mut [f64]) {
    let n = l1(v);
    if n == 0.0 {
        return;
    }
    let lead = v
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap();
    let s = lead.signum() / n;
    v.iter_mut().for_each(|x| *x *= s);
}

/// Leading eigenpair of the evolution operator `K^T`.
pub fn leading_eigenpair(
    op: &BandedOperator,
    grid: &StationaryGrid,
    center: f64,
    opts: &EigenOptions,
) -> Result<StationarySolution, StationaryError> {
    Ok(leading_eigenpairs(op, grid, center, 1, opts)?.remove(0))
}

/// The `m` leading eigenpairs, eigenvalues descending; pairs beyond the first
/// come from deflating the ones already found with their left eigenvectors.
pub fn leading_eigenpairs(
    op: &BandedOperator,
    grid: &StationaryGrid,
    center: f64,
    m: usize,
    opts: &EigenOptions,
) -> Result<Vec<StationarySolution>, StationaryError> {
    if op.dim() != grid.m {
        return Err(StationaryError::StartLength {
            expected: op.dim(),
            got: grid.m,
        });
    }
    let start = match &opts.start {
        Some(s) if s.len() != grid.m => {
            return Err(StationaryError::StartLength {
                expected: grid.m,
                got: s.len(),
            })
        }
        Some(s) => s.clone(),
        None => gaussian_start(grid, center),
    };
    let mut deflation = Deflation { pairs: Vec::new() };
    let mut out = Vec::with_capacity(m);
    for k in 0..m.max(1) {
        let mut v0 = start.clone();
        if k > 0 {
            // an odd perturbation so the start has a component along the
            // excited modes
            let n = v0.len() as f64;
            v0.iter_mut().enumerate().for_each(|(i, x)| {
                *x *= 1.0 + (std::f64::consts::PI * (k as f64) * i as f64 / n).cos()
            });
        }
        let (lambda, mut mode, iterations) =
            power_iterate(v0, opts, |v, o| deflation.apply(op, v, o))?;
        if k == 0 {
            // the leading mode of a nonnegative operator is nonnegative;
            // clear rounding-level negatives and return it with unit sum
            mode.iter_mut().for_each(|p| *p = p.max(0.0));
            let s = neumaier_sum(mode.iter().copied());
            mode.iter_mut().for_each(|p| *p /= s);
        }
        let mut image = vec![0.0; mode.len()];
        deflation.apply(op, &mode, &mut image);
        let residual = image
            .iter()
            .zip(&mode)
            .map(|(a, b)| (a - lambda * b).abs())
            .sum();
        if k + 1 < m {
            let (_, left, _) = power_iterate(vec![1.0; op.dim()], opts, |v, o| {
                op.apply(v, o);
                for (lam, right, left) in &deflation.pairs {
                    // adjoint deflation: remove the found left modes
                    let num: f64 = right.iter().zip(v).map(|(r, x)| r * x).sum();
                    let den: f64 = left.iter().zip(right).map(|(l, r)| l * r).sum();
                    let c = lam * num / den;
                    o.iter_mut().zip(left).for_each(|(oo, l)| *oo -= c * l);
                }
            })?;
            deflation.pairs.push((lambda, mode.clone(), left));
        }
        out.push(StationarySolution {
            grid: grid.clone(),
            eigenvalue: lambda,
            mode,
            residual,
            iterations,
        });
    }
    Ok(out)
}

/// Solver inputs bundled for the CLI and the tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryProblem {
    pub beta: f64,
    pub epsilon: f64,
    pub w1: f64,
    pub wp: f64,
    pub nodes: usize,
    pub reference: CentroidReference,
}

impl StationaryProblem {
    pub fn new(beta: f64, epsilon: f64, w1: f64, wp: f64) -> Self {
        Self {
            beta,
            epsilon,
            w1,
            wp,
            nodes: DEFAULT_NODES,
            reference: CentroidReference::default(),
        }
    }

    pub fn grid(&self) -> Result<StationaryGrid, StationaryError> {
        StationaryGrid::default_for(self.w1, self.wp, self.nodes)
    }

    pub fn operator(&self, grid: &StationaryGrid) -> Result<BandedOperator, StationaryError> {
        build_operator(
            grid,
            self.beta,
            self.epsilon,
            self.w1,
            self.wp,
            self.reference,
        )
    }

    pub fn solve(
        &self,
        modes: usize,
        opts: &EigenOptions,
    ) -> Result<Vec<StationarySolution>, StationaryError> {
        let grid = self.grid()?;
        let op = self.operator(&grid)?;
        leading_eigenpairs(&op, &grid, (self.w1 - self.wp).ln(), modes, opts)
    }
}

/// Per-day drift of `ln(lambda)` on a grid row, including the status shift.
pub fn row_drift(
    beta: f64,
    epsilon: f64,
    w1: f64,
    wp: f64,
    x: f64,
    reference: CentroidReference,
) -> f64 {
    let r = match reference {
        CentroidReference::Unit => 0.0,
        CentroidReference::MeanWealth => (epsilon * status_of_excess(w1 - wp, w1)).ln_1p(),
    };
    drift_velocity(beta) + (epsilon * status_of_excess(x.exp(), w1)).ln_1p() - r
}

/// Rebins the mode onto histogram edges (in excess), assigning each node the
/// cell `[x - dx/2, x + dx/2]` and splitting it by log-length overlap.
pub fn rebin_mode(sol: &StationarySolution, edges: &[f64]) -> Vec<f64> {
    let g = &sol.grid;
    let log_edges: Vec<f64> = edges.iter().map(|e| e.ln()).collect();
    let mut out = vec![0.0; edges.len().saturating_sub(1)];
    for (i, &p) in sol.mode.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let (a, b) = (g.x(i) - 0.5 * g.dx, g.x(i) + 0.5 * g.dx);
        let start = log_edges.partition_point(|&e| e <= a).saturating_sub(1);
        for k in start..out.len() {
            let (lo, hi) = (log_edges[k], log_edges[k + 1]);
            if lo >= b {
                break;
            }
            let overlap = (hi.min(b) - lo.max(a)).max(0.0);
            out[k] += p * overlap / g.dx;
        }
    }
    out
}

/// Total-variation distance between the mode and a histogram on the
/// histogram's edges, both normalized to unit mass over the bins the grid
/// covers.
///
/// Fails with [`StationaryError::NoOverlap`] when the grid range and the
/// histogram range are disjoint; disjoint supports inside a common range
/// give a distance of 1.
pub fn compare_to_simulation(
    sol: &StationarySolution,
    hist: &LogHistogram,
) -> Result<f64, StationaryError> {
    let g = &sol.grid;
    let (lo, hi) = (g.x_min - 0.5 * g.dx, g.x_max + 0.5 * g.dx);
    let e = &hist.edges;
    if e[0].ln() >= hi || e[e.len() - 1].ln() <= lo {
        return Err(StationaryError::NoOverlap);
    }
    let p = rebin_mode(sol, e);
    // histogram bins that lie inside the grid's range
    let inside: Vec<bool> = e
        .windows(2)
        .map(|w| w[1].ln() > lo && w[0].ln() < hi)
        .collect();
    let q: Vec<f64> = hist
        .counts
        .iter()
        .zip(&inside)
        .map(|(&c, &keep)| if keep { c as f64 } else { 0.0 })
        .collect();
    let (sp, sq) = (
        neumaier_sum(p.iter().copied()),
        neumaier_sum(q.iter().copied()),
    );
    if sp == 0.0 || sq == 0.0 {
        return Ok(1.0);
    }
    Ok(0.5 * neumaier_sum(p.iter().zip(&q).map(|(a, b)| (a / sp - b / sq).abs())))
}
