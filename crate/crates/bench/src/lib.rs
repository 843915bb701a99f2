//! Model builders shared by the benchmarks.

use std::f64::consts::PI;

use adiabatic_core::models::{build_fibered_model, build_flat_model};
use adiabatic_core::{FiberedTorusModel, FlatLinearFoliation};

/// Line of slope √2 on T².
pub fn kronecker() -> FlatLinearFoliation {
    build_flat_model(2, &[vec![1.0, 2f64.sqrt()]]).expect("valid span")
}

/// Line through (1, √2, √3) in T³.
pub fn kronecker_3d() -> FlatLinearFoliation {
    build_flat_model(3, &[vec![1.0, 2f64.sqrt(), 3f64.sqrt()]]).expect("valid span")
}

/// `a = 1 + 0.3 cos 2πx cos 2πy`, `b = 1 + 0.5 sin² 2πy` on an `n × n` grid.
pub fn varying_fibered(n: usize) -> FiberedTorusModel {
    build_fibered_model(
        n,
        n,
        |x, y| 1.0 + 0.3 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos(),
        |_, y| 1.0 + 0.5 * (2.0 * PI * y).sin().powi(2),
    )
    .expect("positive, bundle-like coefficients")
}
