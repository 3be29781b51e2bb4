//! Full-size eigenmode solves and their agreement with simulation.

use std::f64::consts::LN_10;
use std::sync::OnceLock;

use gbm_wealth::engine::{run_single, HistogramSchedule, RecordingSchedule};
use gbm_wealth::model::{Mode, ModelParams};
use gbm_wealth::stationary::{
    compare_to_simulation, CentroidReference, EigenOptions, StationaryProblem, StationarySolution,
};
use gbm_wealth::stats::log_edges;

const BETA: f64 = 0.06;
const W1: f64 = 1000.0;
const WP: f64 = 400.0;

fn solve(epsilon: f64, reference: CentroidReference, max_iterations: usize) -> StationarySolution {
    let problem = StationaryProblem {
        reference,
        ..StationaryProblem::new(BETA, epsilon, W1, WP)
    };
    let opts = EigenOptions {
        max_iterations,
        ..EigenOptions::default()
    };
    problem.solve(1, &opts).unwrap().remove(0)
}

/// Leading modes for the bell-shaped sweep, computed once.
fn bells() -> &'static [StationarySolution; 3] {
    static CELL: OnceLock<[StationarySolution; 3]> = OnceLock::new();
    CELL.get_or_init(|| {
        [-0.005, -0.015, -0.03].map(|e| solve(e, CentroidReference::MeanWealth, 100_000))
    })
}

fn decades_from_edges(s: &StationarySolution) -> (f64, f64) {
    let peak = s.peak_x();
    ((peak - s.grid.x_min) / LN_10, (s.grid.x_max - peak) / LN_10)
}

#[test]
fn strong_tax_gives_interior_bell() {
    let s = &bells()[2];
    assert!(
        (0.999..=1.0 + 1e-9).contains(&s.eigenvalue),
        "{}",
        s.eigenvalue
    );
    let (low, high) = decades_from_edges(s);
    assert!(
        low >= 2.0 && high >= 2.0,
        "peak {low} / {high} decades from the edges"
    );
    // single-peaked: increasing up to the peak, decreasing after it
    let i = s
        .mode
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    let rises = s.mode[..=i]
        .windows(2)
        .filter(|w| w[1] < w[0] - 1e-15)
        .count();
    let falls = s.mode[i..]
        .windows(2)
        .filter(|w| w[1] > w[0] + 1e-15)
        .count();
    assert_eq!((rises, falls), (0, 0));
}

#[test]
fn bells_narrow_as_the_tax_grows() {
    let widths: Vec<f64> = bells().iter().map(|s| s.x_moments().1).collect();
    assert!(widths.windows(2).all(|w| w[1] < w[0]), "{widths:?}");
}

#[test]
fn modes_are_distributions_and_eigenvalues_bounded() {
    for s in bells() {
        assert!(s.eigenvalue <= 1.0 + 1e-9);
        assert!(s.mode.iter().all(|p| *p >= -1e-14));
        assert!((s.mode.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.residual <= 1e-7, "{}", s.residual);
        // the upper edge never matters
        let top = s.mass_between(s.grid.x_max - LN_10, s.grid.x_max);
        assert!(top < 1e-6, "{top}");
    }
}

#[test]
fn weak_tax_piles_against_the_floor() {
    // measured against the unit reference the status shift has the sign of
    // epsilon everywhere, and a small tax cannot hold mass off the floor
    let s = solve(-0.001, CentroidReference::Unit, 500_000);
    let (low, _) = decades_from_edges(&s);
    assert!(low < 1.0, "peak {low} decades above the lower edge");
    assert!(s.eigenvalue < 1.0 - 1e-6);
}

#[test]
fn eigenmode_matches_late_simulated_histogram() {
    let params = ModelParams {
        mode: Mode::Skewed,
        epsilon: -0.03,
        seed: 7,
        ..ModelParams::default()
    };
    let schedule = RecordingSchedule {
        snapshot_times: vec![],
        series_stride: 1000,
        ranks: vec![1],
        histograms: Some(HistogramSchedule {
            edges: log_edges(1e-6, 1e7, 260),
            start: 40_000,
            window: 15_000,
            sample_stride: 30,
        }),
        ..RecordingSchedule::default_for(&params)
    };
    let rec = run_single(&params, &schedule, 0).unwrap();
    let hist = &rec.histograms[0];
    assert_eq!((hist.t_start, hist.t_end), (40_000, 55_000));
    let tv = compare_to_simulation(&bells()[2], hist).unwrap();
    assert!(tv < 0.5, "total variation {tv}");
}
