//! Deterministic fixtures for the benchmarks.

use nalgebra::DMatrix;
use qlc_core::chaining::{HFieldSpec, RandomFieldSpec};
use qlc_core::glm::GlmModel;
use qlc_core::mc::{gaussian_location_config, SimConfig};
use qlc_core::{EfcFamily, GridDomain, ParamBox};

/// Poisson regression with an intercept and `p - 1` smooth covariates.
pub fn poisson_model(n: usize, p: usize) -> GlmModel {
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { ((i * (j + 3)) as f64 * 0.37).sin() });
    let responses = (0..n).map(|i| ((i * 7) % 5) as f64).collect();
    GlmModel::new(design, responses, EfcFamily::Poisson, 0.5, ParamBox::unbounded(p)).unwrap()
}

pub fn simulation(reps: usize) -> SimConfig {
    gaussian_location_config(50, 0.5, reps, 7)
}

/// Radial field on a square grid with `pts` points per axis.
pub fn radial_field(pts: usize) -> RandomFieldSpec {
    let g = GridDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![pts, pts]).unwrap();
    RandomFieldSpec::new(g, HFieldSpec::Radial { a: 1.0, b: 1.0, power: 0.5 }.build(2).unwrap()).unwrap()
}
