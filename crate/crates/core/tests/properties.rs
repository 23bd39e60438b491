//! Statistical properties that need many simulated replicates.

use rayon::prelude::*;
use stix_core::simulation::{replicate_seed, SimSpec};
use stix_core::{fit_panel, simulate_panel, size_power_study, FitOptions, Interaction, StudyCell, StudyConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Median sup-norm estimation error over `reps` replicates of one size.
fn median_error(n_sites: usize, n_weeks: usize, reps: u64) -> f64 {
    let cell = StudyCell { n_sites, n_weeks, interaction: Interaction::Linear };
    let spec = SimSpec::new(n_sites, n_weeks, Interaction::Linear);
    let errors: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let sim = simulate_panel(&spec, replicate_seed(17, &cell, r)).unwrap();
            let model = fit_panel(&sim.panel, &sim.design, spec.phi_s, spec.phi_t, &FitOptions::default()).unwrap();
            model
                .theta
                .iter()
                .zip(&sim.truth.theta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    median(errors)
}

#[test]
fn estimation_error_shrinks_with_panel_size() {
    let small = median_error(10, 52, 100);
    let large = median_error(20, 261, 100);
    assert!(large < small, "median sup error {large} at (20, 261) vs {small} at (10, 52)");
}

#[test]
fn power_does_not_drop_with_longer_panels() {
    for n_sites in [10, 20] {
        let rate = |n_weeks| {
            let cell = StudyCell { n_sites, n_weeks, interaction: Interaction::Linear };
            size_power_study(&[cell], &StudyConfig::new(100, 23)).unwrap().cells[0].rejection_rate
        };
        let (short, long) = (rate(52), rate(261));
        assert!(long >= short - 0.05, "n = {n_sites}: power {long} at T = 261 vs {short} at T = 52");
    }
}
