use std::time::Instant;

use elastolab_core::phantom::{Edge, Excitation, Inclusion, PhantomClass, PhantomSpec};
use elastolab_core::wavesolve::{
    analytic_wavelength_mm, assemble, simulate, solve_with_report, zero_crossing_wavelength, BoundaryCondition,
    ComplexModulusField, RESIDUAL_TOL,
};
use elastolab_core::ComplexField;
use num_complex::Complex64;

fn homogeneous(mu: f64, damping: f64, spacing: f64) -> PhantomSpec {
    PhantomSpec {
        class: PhantomClass::Homogeneous,
        side_mm: 128.0,
        spacing_mm: spacing,
        background_mu: mu,
        background_damping: damping,
        inclusions: vec![],
        gradient: None,
        excitation: Excitation { edge: Edge::Left, amplitude: 0.5 },
        seed: 0,
    }
}

fn centre_row_wavelength(u: &ComplexField) -> f64 {
    let mid = u.height() / 2;
    zero_crossing_wavelength(u, mid, 2..u.width() - 2).expect("at least two zero crossings")
}

#[test]
fn homogeneous_wavelength_matches_dispersion() {
    for (mu, tol) in [(4000.0, 1.0), (1000.0, 1.0)] {
        let start = Instant::now();
        let (u, _) = simulate(&homogeneous(mu, 0.05, 1.0), 60.0, 1000.0).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        let measured = centre_row_wavelength(&u);
        let expected = analytic_wavelength_mm(mu, 1000.0, 60.0);
        assert!((measured - expected).abs() <= tol, "mu {mu}: {measured} vs {expected}");
        assert!(elapsed < 5.0, "solve took {elapsed} s");
    }
}

#[test]
fn grid_halving_changes_wavelength_little() {
    let (coarse, _) = simulate(&homogeneous(4000.0, 0.05, 1.0), 60.0, 1000.0).unwrap();
    let (fine, _) = simulate(&homogeneous(4000.0, 0.05, 0.5), 60.0, 1000.0).unwrap();
    assert_eq!(fine.shape(), coarse.shape());
    let (a, b) = (centre_row_wavelength(&coarse), centre_row_wavelength(&fine));
    assert!(((a - b) / b).abs() < 0.005, "{a} vs {b}");
}

#[test]
fn solution_is_linear_in_excitation() {
    let mu = ComplexModulusField::homogeneous(40, 1.0, 3000.0, 0.1).unwrap();
    let solve_for = |amp: f64| {
        let bc = BoundaryCondition::excited(Edge::Top, Complex64::new(amp, 0.0));
        let (u, report) = solve_with_report(&assemble(&mu, 1000.0, 60.0, &bc).unwrap()).unwrap();
        assert!(report.relative_residual <= RESIDUAL_TOL);
        u
    };
    let (u1, u2) = (solve_for(0.4), solve_for(0.8));
    let scale = u1.values().iter().map(|z| z.norm()).fold(0.0, f64::max);
    for (a, b) in u1.values().iter().zip(u2.values()) {
        assert!((2.0 * a - b).norm() <= 1e-7 * scale);
    }
}

#[test]
fn stronger_damping_attenuates_more() {
    let far_amplitude = |damping| {
        let (u, _) = simulate(&homogeneous(4000.0, damping, 1.0), 60.0, 1000.0).unwrap();
        let col = u.width() - 4;
        (2..u.height() - 2).map(|r| u.get(r, col).norm()).sum::<f64>()
    };
    assert!(far_amplitude(0.3) < far_amplitude(0.05));
}

#[test]
fn zero_excitation_gives_zero_field() {
    let mu = ComplexModulusField::homogeneous(20, 1.0, 4000.0, 0.05).unwrap();
    let system = assemble(&mu, 1000.0, 60.0, &BoundaryCondition::fixed()).unwrap();
    let (u, _) = solve_with_report(&system).unwrap();
    assert!(u.values().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
}

#[test]
fn stiff_inclusion_stretches_wavelength() {
    let mut spec = homogeneous(2000.0, 0.05, 1.0);
    spec.side_mm = 256.0;
    spec.inclusions = vec![Inclusion { center: (128.0, 128.0), radius: 60.0, mu: 8000.0, damping: 0.05 }];
    let (u, _) = simulate(&spec, 60.0, 1000.0).unwrap();
    let background = zero_crossing_wavelength(&u, 128, 2..66).unwrap();
    let inside = zero_crossing_wavelength(&u, 128, 70..186).unwrap();
    let ratio = inside / background;
    assert!((ratio - 2.0).abs() <= 0.3, "wavelength ratio {ratio}");
}

#[test]
fn displacement_is_continuous_across_interface() {
    let mut spec = homogeneous(2000.0, 0.1, 1.0);
    spec.inclusions = vec![Inclusion { center: (64.0, 64.0), radius: 20.0, mu: 8000.0, damping: 0.1 }];
    let (u, _) = simulate(&spec, 60.0, 1000.0).unwrap();
    let labels = spec.region_labels().unwrap();
    let mut max_jump_across: f64 = 0.0;
    let mut max_step_within: f64 = 0.0;
    for r in 1..u.height() - 1 {
        for c in 1..u.width() - 2 {
            let step = (u.get(r, c + 1) - u.get(r, c)).norm();
            if labels.get(r, c) != labels.get(r, c + 1) {
                max_jump_across = max_jump_across.max(step);
            } else {
                max_step_within = max_step_within.max(step);
            }
        }
    }
    assert!(max_jump_across > 0.0);
    assert!(max_jump_across <= max_step_within, "{max_jump_across} > {max_step_within}");
}
