//! Closed-form predictions for independent agents.
//!
//! In `x = ln(w - wp)` space each agent performs an additive random walk
//! with per-day drift [`drift_velocity`] and a Gaussian spread
//! [`sigma_t`]. The largest of `N` agents is located with the "N/k-ile"
//! slice approximation: the edge above which the expected Gaussian mass is
//! `k / N`.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("inverse erfc argument {0} outside (0, 2)")]
    Domain(f64),
    #[error("quantile rank k = {k} outside (0, {n_agents}]")]
    RankOutOfRange { k: f64, n_agents: usize },
}

/// Per-day drift of `ln(lambda)` for `lambda` uniform on `[1 - beta, 1 + beta]`:
/// `((1+b) ln(1+b) - (1-b) ln(1-b)) / (2b) - 1`.
///
/// Always negative for `0 < beta < 1` and `~ -beta^2 / 6` for small `beta`.
pub fn drift_velocity(beta: f64) -> f64 {
    if beta < 0.2 {
        // -sum_k beta^(2k) / ((2k + 1)(2k)); avoids the cancellation of the
        // closed form near zero.
        let b2 = beta * beta;
        let mut term = 1.0;
        let mut acc = 0.0;
        for k in 1..40 {
            term *= b2;
            let c = term / ((2 * k + 1) * (2 * k)) as f64;
            acc += c;
            if c < acc * 1e-18 {
                break;
            }
        }
        -acc
    } else {
        ((1.0 + beta) * beta.ln_1p() - (1.0 - beta) * (-beta).ln_1p()) / (2.0 * beta) - 1.0
    }
}

/// Standard deviation of the log-excess after `t` days, `2 beta sqrt(t / 4 pi)`.
pub fn sigma_t(beta: f64, t: f64) -> f64 {
    2.0 * beta * (t / (4.0 * PI)).sqrt()
}

/// Solves `erfc(x) = y` for `y` in `(0, 2)`.
///
/// Bisection on `[-10, 10]` down to a `1e-3` bracket, then Newton steps until
/// the residual is below `1e-12` (or stops improving at machine precision).
pub fn inv_erfc(y: f64) -> Result<f64, AnalyticsError> {
    if !(y > 0.0 && y < 2.0) {
        return Err(AnalyticsError::Domain(y));
    }
    if y == 1.0 {
        return Ok(0.0);
    }
    if y > 1.0 {
        // erfc(-x) = 2 - erfc(x); 2 - y is exact here and keeps the flat
        // upper branch well conditioned
        return inv_erfc(2.0 - y).map(|x| -x);
    }
    // erfc is decreasing: erfc(-10) = 2, erfc(10) ~ 2e-45
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if erfc(mid) > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    let two_over_sqrt_pi = 2.0 / PI.sqrt();
    for _ in 0..50 {
        let r = erfc(x) - y;
        if r.abs() <= 1e-12 * y.clamp(1e-300, 1.0) || r == 0.0 {
            break;
        }
        let slope = -two_over_sqrt_pi * (-x * x).exp();
        let next = (x - r / slope).clamp(lo - 1e-3, hi + 1e-3);
        if next == x {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Gaussian envelope of the log-excess distribution of `N` independent agents
/// started together at `x0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEnvelope {
    pub x0: f64,
    pub drift: f64,
    pub beta: f64,
    pub n_agents: usize,
}

impl GaussianEnvelope {
    /// Envelope with the exact drift for `beta`.
    pub fn new(x0: f64, beta: f64, n_agents: usize) -> Self {
        Self {
            x0,
            drift: drift_velocity(beta),
            beta,
            n_agents,
        }
    }

    /// Envelope of agents all starting at `w1` above a floor `wp`.
    pub fn from_wealth(w1: f64, wp: f64, beta: f64, n_agents: usize) -> Self {
        Self::new((w1 - wp).ln(), beta, n_agents)
    }

    pub fn center(&self, t: f64) -> f64 {
        self.x0 + self.drift * t
    }

    pub fn sigma(&self, t: f64) -> f64 {
        sigma_t(self.beta, t)
    }

    fn erfc_inv_of_rank(&self, k: f64) -> Result<f64, AnalyticsError> {
        let n = self.n_agents as f64;
        if !(k > 0.0 && k <= n) {
            return Err(AnalyticsError::RankOutOfRange {
                k,
                n_agents: self.n_agents,
            });
        }
        inv_erfc(k / n)
    }
}

/// Samples of the N/k-ile edge for one `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurve {
    pub k: f64,
    pub samples: Vec<(f64, f64)>,
}

/// `x_{N/k}(t) = x0 + drift t + sqrt(2) sigma(t) erfc^-1(k / N)`.
pub fn quantile_edge(env: &GaussianEnvelope, k: f64, t: f64) -> Result<f64, AnalyticsError> {
    let c = env.erfc_inv_of_rank(k)?;
    Ok(env.center(t) + SQRT_2 * env.sigma(t) * c)
}

pub fn quantile_curve(
    env: &GaussianEnvelope,
    k: f64,
    times: &[f64],
) -> Result<QuantileCurve, AnalyticsError> {
    let samples = times
        .iter()
        .map(|&t| quantile_edge(env, k, t).map(|x| (t, x)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantileCurve { k, samples })
}

/// Day at which the N/k-ile edge turns over, `18 / (pi beta^2) [erfc^-1(k/N)]^2`.
///
/// Uses the small-`beta` drift `-beta^2 / 6`.
pub fn peak_time(env: &GaussianEnvelope, k: f64) -> Result<f64, AnalyticsError> {
    let c = env.erfc_inv_of_rank(k)?;
    Ok(18.0 / (PI * env.beta * env.beta) * c * c)
}

/// Height of the N/k-ile edge at its turnover, `x0 + (3 / pi) [erfc^-1(k/N)]^2`.
pub fn peak_height(env: &GaussianEnvelope, k: f64) -> Result<f64, AnalyticsError> {
    let c = env.erfc_inv_of_rank(k)?;
    Ok(env.x0 + 3.0 / PI * c * c)
}

/// Unit-normalized Gaussian density of the log-excess at day `t > 0`.
pub fn log_density(env: &GaussianEnvelope, x: f64, t: f64) -> f64 {
    let s = env.sigma(t);
    let z = (x - env.center(t)) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Oracle: composite Simpson on E[ln lambda], lambda uniform on [1-b, 1+b].
    fn drift_by_quadrature(beta: f64) -> f64 {
        let n = 20_000;
        let (a, b) = (1.0 - beta, 1.0 + beta);
        let h = (b - a) / n as f64;
        let mut s = a.ln() + b.ln();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * (a + i as f64 * h).ln();
        }
        s * h / 3.0 / (b - a)
    }

    // Oracle: plain bisection on statrs' erfc.
    fn inv_erfc_by_bisection(y: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if erfc(mid) > y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn drift_matches_quadrature() {
        for beta in [0.01, 0.06, 0.15, 0.3, 0.6, 0.9] {
            let q = drift_by_quadrature(beta);
            assert_abs_diff_eq!(drift_velocity(beta), q, epsilon = 1e-11);
            assert!(drift_velocity(beta) < 0.0);
        }
        // value frozen from the quadrature oracle
        assert_abs_diff_eq!(
            drift_velocity(0.06),
            -6.006_491_131_954_5e-4,
            epsilon = 1e-16
        );
        assert_abs_diff_eq!(drift_velocity(0.06), -6.0065e-4, epsilon = 1e-8);
    }

    #[test]
    fn drift_small_beta_limit() {
        assert_eq!(drift_velocity(0.0), 0.0);
        let b = 1e-4;
        assert_abs_diff_eq!(drift_velocity(b) / (-b * b / 6.0), 1.0, epsilon = 1e-8);
        let rel = (drift_velocity(0.06) - (-0.0036 / 6.0)).abs() / (0.0036 / 6.0);
        assert!(rel < 0.002);
        // both branches agree at the switch point
        let b = 0.2 - 1e-12;
        let closed = ((1.0 + b) * f64::ln_1p(b) - (1.0 - b) * f64::ln_1p(-b)) / (2.0 * b) - 1.0;
        assert_abs_diff_eq!(drift_velocity(b), closed, epsilon = 1e-14);
    }

    #[test]
    fn sigma_examples() {
        assert_abs_diff_eq!(sigma_t(0.06, 1000.0), 1.0705, epsilon = 1e-4);
        assert_eq!(sigma_t(0.06, 0.0), 0.0);
        assert_abs_diff_eq!(sigma_t(0.12, 250.0), sigma_t(0.06, 1000.0), epsilon = 1e-14);
    }

    #[test]
    fn inv_erfc_examples() {
        assert_eq!(inv_erfc(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(inv_erfc(0.5).unwrap(), 0.476_936, epsilon = 1e-5);
        let c = inv_erfc(1.0 / 3600.0).unwrap();
        assert_abs_diff_eq!(c, 2.5718, epsilon = 2e-3);
        assert_abs_diff_eq!(3.0 * c * c / PI, 6.31, epsilon = 0.01);
        for y in [1e-9, 1e-4, 0.3, 0.5, 1.0 / 3600.0, 1.2, 1.9, 2.0 - 1e-9] {
            let oracle = if y > 1.0 {
                -inv_erfc_by_bisection(2.0 - y)
            } else {
                inv_erfc_by_bisection(y)
            };
            assert_abs_diff_eq!(inv_erfc(y).unwrap(), oracle, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(
            inv_erfc(1e-9).unwrap(),
            4.320_005_384_913_445,
            epsilon = 1e-9
        );
    }

    #[test]
    fn inv_erfc_domain() {
        for y in [0.0, 2.0, -1.0, 3.0, f64::NAN] {
            assert!(matches!(inv_erfc(y), Err(AnalyticsError::Domain(_))));
        }
    }

    #[test]
    fn inv_erfc_residual_on_grid() {
        let n = 1000;
        let (a, b) = (1e-9, 2.0 - 1e-9);
        for i in 0..n {
            let y = a + (b - a) * i as f64 / (n - 1) as f64;
            let x = inv_erfc(y).unwrap();
            assert!((erfc(x) - y).abs() <= 1e-12, "y = {y}");
        }
    }

    fn reference_envelope() -> GaussianEnvelope {
        GaussianEnvelope::from_wealth(1000.0, 400.0, 0.06, 3600)
    }

    #[test]
    fn quantile_edge_center_and_ordering() {
        let env = reference_envelope();
        assert_abs_diff_eq!(
            quantile_edge(&env, 3600.0, 700.0).unwrap(),
            env.center(700.0),
            epsilon = 1e-12
        );
        let ks = [0.01, 0.25, 1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 3600.0];
        for t in [10.0, 1000.0, 30_000.0] {
            let xs: Vec<f64> = ks
                .iter()
                .map(|&k| quantile_edge(&env, k, t).unwrap())
                .collect();
            assert!(xs.windows(2).all(|w| w[0] > w[1]));
        }
        assert!(matches!(
            quantile_edge(&env, 0.0, 1.0),
            Err(AnalyticsError::RankOutOfRange { .. })
        ));
        assert!(quantile_edge(&env, 3601.0, 1.0).is_err());
    }

    fn numeric_peak(env: &GaussianEnvelope, k: f64) -> (f64, f64) {
        // golden-section search on t in [1, 1e6]
        let f = |t: f64| quantile_edge(env, k, t).unwrap();
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (1.0f64, 1e6f64);
        while b - a > 1e-3 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let t = 0.5 * (a + b);
        (t, f(t))
    }

    #[test]
    fn peak_examples() {
        let env = reference_envelope();
        let t = peak_time(&env, 1.0).unwrap();
        let h = peak_height(&env, 1.0).unwrap() - env.x0;
        // frozen from a 30-digit evaluation with erfc^-1(1/3600) = 2.570466
        assert_abs_diff_eq!(t, 10_515.9, epsilon = 0.1);
        assert_abs_diff_eq!(h, 6.3096, epsilon = 1e-4);
        assert!((t - 10_520.0).abs() < 0.01 * 10_520.0);
        assert_eq!(peak_time(&env, 3600.0).unwrap(), 0.0);
        assert_eq!(peak_height(&env, 3600.0).unwrap(), env.x0);
    }

    #[test]
    fn peak_agrees_with_numeric_maximum() {
        let env = reference_envelope();
        for k in [0.01, 0.25, 1.0, 4.0, 16.0, 100.0] {
            let (tn, xn) = numeric_peak(&env, k);
            let t = peak_time(&env, k).unwrap();
            let h = peak_height(&env, k).unwrap();
            assert!((t - tn).abs() / tn < 5e-3, "k = {k}: {t} vs {tn}");
            assert!(
                (h - xn).abs() / (xn - env.x0) < 5e-3,
                "k = {k}: {h} vs {xn}"
            );
        }
    }

    #[test]
    fn squaring_population_roughly_doubles_peak() {
        let n = 3600usize;
        let small = GaussianEnvelope::new(0.0, 0.06, n);
        let big = GaussianEnvelope::new(0.0, 0.06, n * n);
        let rt = peak_time(&big, 1.0).unwrap() / peak_time(&small, 1.0).unwrap();
        let rh = peak_height(&big, 1.0).unwrap() / peak_height(&small, 1.0).unwrap();
        // both ratios equal c(N^2)^2 / c(N)^2 with c = erfc^-1(1/N); the
        // doubling is only asymptotic, at N = 3600 the exact ratio is 2.18516
        assert_abs_diff_eq!(rt, 2.185_164_936_460_434, epsilon = 1e-9);
        assert_abs_diff_eq!(rh, 2.185_164_936_460_434, epsilon = 1e-9);
    }

    #[test]
    fn density_normalization_and_mode() {
        for (beta, t) in [(0.06, 1.0), (0.06, 1000.0), (0.02, 50.0), (0.3, 10_000.0)] {
            let env = GaussianEnvelope::new(2.0, beta, 100);
            let (c, s) = (env.center(t), env.sigma(t));
            let n = 20_000;
            let (a, b) = (c - 12.0 * s, c + 12.0 * s);
            let h = (b - a) / n as f64;
            let mut acc = log_density(&env, a, t) + log_density(&env, b, t);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * log_density(&env, a + i as f64 * h, t);
            }
            assert_abs_diff_eq!(acc * h / 3.0, 1.0, epsilon = 1e-6);
            let peak = log_density(&env, c, t);
            assert!(peak > log_density(&env, c + 1e-3 * s, t));
            assert!(peak > log_density(&env, c - 1e-3 * s, t));
        }
    }

    #[test]
    fn one_sigma_interval_in_wealth() {
        // an agent at w = 600 (excess 200) after 1000 days
        let s = sigma_t(0.06, 1000.0);
        let lo = 400.0 + 200.0 * (-s).exp();
        let hi = 400.0 + 200.0 * s.exp();
        assert!(
            (lo - 469.0).abs() < 1.0 && (hi - 983.0).abs() < 1.0,
            "[{lo}, {hi}]"
        );
    }
}
