//! Agent state, the multiplier law and the single-day update rules.
//!
//! Wealth lives above a poverty floor `wp`; the multiplicative dynamics act
//! on the excess `w - wp`. An [`Ensemble`] therefore stores excesses rather
//! than raw wealth: an excess of `1e-12` next to a floor of `400` would be
//! rounded away if it were kept as a wealth value.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numeric::neumaier_sum;

/// Total excess below `N (w1 - wp) * DEGENERATE_FRACTION` halts a coupled run.
pub const DEGENERATE_FRACTION: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error("total excess wealth {total_excess:e} fell below {threshold:e}; normalization is degenerate")]
    NormalizationDegenerate { total_excess: f64, threshold: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("wealth {wealth} of agent {agent} is not above the floor {floor}")]
    BelowFloor {
        agent: usize,
        wealth: f64,
        floor: f64,
    },
}

/// Coupling between agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Independent agents.
    Free,
    /// Mean wealth reset to `w1` after every day.
    Reset,
    /// Reset plus a status-dependent bias of the multiplier.
    Skewed,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Free => "free",
            Mode::Reset => "reset",
            Mode::Skewed => "skewed",
        }
    }

    pub fn is_coupled(self) -> bool {
        !matches!(self, Mode::Free)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "free" => Ok(Mode::Free),
            "reset" => Ok(Mode::Reset),
            "skewed" => Ok(Mode::Skewed),
            other => Err(format!(
                "unknown mode '{other}' (expected free, reset or skewed)"
            )),
        }
    }
}

/// All scalars defining one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n_agents: usize,
    /// Fraction of the excess engaged every day.
    pub beta: f64,
    /// Status skew of the multiplier; only meaningful in [`Mode::Skewed`].
    pub epsilon: f64,
    /// Initial and target mean wealth.
    pub w1: f64,
    /// Poverty floor.
    pub wp: f64,
    pub mode: Mode,
    pub t_max: u64,
    pub seed: u64,
    pub n_runs: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            n_agents: 3600,
            beta: 0.06,
            epsilon: 0.0,
            w1: 1000.0,
            wp: 400.0,
            mode: Mode::Free,
            t_max: 55_000,
            seed: 0,
            n_runs: 1,
        }
    }
}

impl ModelParams {
    /// Every violated invariant, in a fixed order.
    ///
    /// `beta = 0` is accepted: it is the degenerate constant-wealth case.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_agents == 0 {
            v.push("n_agents must be positive".to_string());
        }
        if !(self.beta.is_finite() && (0.0..1.0).contains(&self.beta)) {
            v.push(format!("beta = {} must lie in (0, 1)", self.beta));
        }
        if !(self.epsilon.is_finite() && self.epsilon.abs() < 1.0) {
            v.push(format!("epsilon = {} must lie in (-1, 1)", self.epsilon));
        } else if (1.0 - self.beta) * (1.0 - self.epsilon.abs()) <= 0.0 {
            v.push("(1 - beta)(1 - |epsilon|) must be positive".to_string());
        }
        if !self.mode.eq(&Mode::Skewed) && self.epsilon != 0.0 {
            v.push(format!(
                "epsilon = {} requires mode = skewed (mode {} forces epsilon = 0)",
                self.epsilon, self.mode
            ));
        }
        if !(self.wp.is_finite() && self.w1.is_finite() && self.wp >= 0.0 && self.wp < self.w1) {
            v.push(format!(
                "floor wp = {} and mean w1 = {} must satisfy 0 <= wp < w1",
                self.wp, self.w1
            ));
        }
        if self.t_max > u64::from(u32::MAX) {
            v.push(format!("t_max = {} exceeds {}", self.t_max, u32::MAX));
        }
        if self.n_runs == 0 || self.n_runs > u32::MAX as usize {
            v.push(format!(
                "n_runs = {} must lie in [1, {}]",
                self.n_runs,
                u32::MAX
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidParams(v))
        }
    }

    pub fn law(&self) -> MultiplierLaw {
        match self.mode {
            Mode::Skewed => MultiplierLaw::skewed(self.beta, self.epsilon),
            _ => MultiplierLaw::plain(self.beta),
        }
    }

    /// `w1 - wp`, the excess every agent starts with.
    pub fn initial_excess(&self) -> f64 {
        self.w1 - self.wp
    }
}

/// Distribution of the daily multiplier.
///
/// Without the status hook the multiplier is uniform on `[1 - beta, 1 + beta]`.
/// With it, the uniform draw is scaled as a whole by `1 + epsilon * S`, so the
/// support becomes `[(1 - beta)(1 + eps S), (1 + beta)(1 + eps S)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierLaw {
    pub beta: f64,
    pub epsilon: f64,
    pub status_hook: bool,
}

impl MultiplierLaw {
    pub fn plain(beta: f64) -> Self {
        Self {
            beta,
            epsilon: 0.0,
            status_hook: false,
        }
    }

    pub fn skewed(beta: f64, epsilon: f64) -> Self {
        Self {
            beta,
            epsilon,
            status_hook: true,
        }
    }

    #[inline]
    fn scale(&self, status: f64) -> f64 {
        if self.status_hook {
            1.0 + self.epsilon * status
        } else {
            1.0
        }
    }

    /// Expected multiplier at the given status.
    pub fn mean(&self, status: f64) -> f64 {
        self.scale(status)
    }

    /// Closed support of the multiplier at the given status.
    pub fn support(&self, status: f64) -> (f64, f64) {
        let s = self.scale(status);
        ((1.0 - self.beta) * s, (1.0 + self.beta) * s)
    }

    /// Density of `l = ln(lambda)` for the unscaled law: `e^l / (2 beta)` on
    /// `[ln(1 - beta), ln(1 + beta)]`.
    pub fn log_density(&self, l: f64) -> f64 {
        let (lo, hi) = ((1.0 - self.beta).ln(), (1.0 + self.beta).ln());
        if l < lo || l > hi {
            0.0
        } else {
            l.exp() / (2.0 * self.beta)
        }
    }
}

/// `(1 + beta (1 - 2u)) (1 + eps S)`; without the status hook the second
/// factor is one.
#[inline]
pub fn draw_multiplier(law: &MultiplierLaw, status: f64, u: f64) -> f64 {
    (1.0 + law.beta * (1.0 - 2.0 * u)) * law.scale(status)
}

/// Floor-shifted multiplicative step `wp + lambda (w - wp)`.
#[inline]
pub fn step_free(w: f64, lambda: f64, wp: f64) -> f64 {
    wp + lambda * (w - wp)
}

/// Homographic status `(w - wp) / (w1 + w - wp)`, in `[0, 1)`.
#[inline]
pub fn status(w: f64, w1: f64, wp: f64) -> f64 {
    status_of_excess(w - wp, w1)
}

#[inline]
pub fn status_of_excess(excess: f64, w1: f64) -> f64 {
    excess / (w1 + excess)
}

/// The wealth vector at one day, stored as excesses above the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    t: u64,
    floor: f64,
    excess: Vec<f64>,
}

impl Ensemble {
    /// Every agent at `w1` on day 0.
    pub fn initial(params: &ModelParams) -> Self {
        Self {
            t: 0,
            floor: params.wp,
            excess: vec![params.initial_excess(); params.n_agents],
        }
    }

    pub fn from_wealth(t: u64, wealth: &[f64], floor: f64) -> Result<Self, ModelError> {
        let mut excess = Vec::with_capacity(wealth.len());
        for (agent, &w) in wealth.iter().enumerate() {
            if !(w > floor) || !w.is_finite() {
                return Err(ModelError::BelowFloor {
                    agent,
                    wealth: w,
                    floor,
                });
            }
            excess.push(w - floor);
        }
        Ok(Self { t, floor, excess })
    }

    pub fn from_excess(t: u64, excess: Vec<f64>, floor: f64) -> Result<Self, ModelError> {
        if let Some(agent) = excess.iter().position(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(ModelError::BelowFloor {
                agent,
                wealth: floor + excess[agent],
                floor,
            });
        }
        Ok(Self { t, floor, excess })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.excess.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excess.is_empty()
    }

    pub fn excess(&self) -> &[f64] {
        &self.excess
    }

    pub fn wealth(&self) -> Vec<f64> {
        self.excess.iter().map(|e| self.floor + e).collect()
    }

    pub fn total_excess(&self) -> f64 {
        neumaier_sum(self.excess.iter().copied())
    }

    pub fn total_wealth(&self) -> f64 {
        self.floor * self.excess.len() as f64 + self.total_excess()
    }

    pub fn mean_wealth(&self) -> f64 {
        self.total_wealth() / self.excess.len() as f64
    }

    /// Advances one day in place with one uniform deviate per agent.
    ///
    /// All multipliers are drawn from start-of-day states (statuses
    /// included); coupled modes then rescale the excess vector so the total
    /// excess is `N (w1 - wp)` again.
    pub fn advance(&mut self, params: &ModelParams, draws: &[f64]) -> Result<(), ModelError> {
        if draws.len() != self.excess.len() {
            return Err(ModelError::LengthMismatch {
                expected: self.excess.len(),
                got: draws.len(),
            });
        }
        let law = params.law();
        match params.mode {
            Mode::Free | Mode::Reset => {
                for (e, &u) in self.excess.iter_mut().zip(draws) {
                    *e *= draw_multiplier(&law, 0.0, u);
                }
            }
            Mode::Skewed => {
                let w1 = params.w1;
                for (e, &u) in self.excess.iter_mut().zip(draws) {
                    *e *= draw_multiplier(&law, status_of_excess(*e, w1), u);
                }
            }
        }
        if params.mode.is_coupled() {
            self.normalize(params)?;
        }
        self.t += 1;
        Ok(())
    }

    fn normalize(&mut self, params: &ModelParams) -> Result<(), ModelError> {
        let target = self.excess.len() as f64 * params.initial_excess();
        let total = self.total_excess();
        let threshold = target * DEGENERATE_FRACTION;
        if !(total >= threshold) || !total.is_finite() {
            return Err(ModelError::NormalizationDegenerate {
                total_excess: total,
                threshold,
            });
        }
        let factor = target / total;
        for e in &mut self.excess {
            *e *= factor;
        }
        Ok(())
    }
}

/// Functional form of [`Ensemble::advance`].
pub fn step_ensemble(
    ens: &Ensemble,
    params: &ModelParams,
    draws: &[f64],
) -> Result<Ensemble, ModelError> {
    let mut next = ens.clone();
    next.advance(params, draws)?;
    Ok(next)
}
