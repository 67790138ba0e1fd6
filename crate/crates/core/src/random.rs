//! Seeded random band-limited fields for self-tests and property checks.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::field::{Representation, SpectralField};
use crate::grid::Grid;

/// Random complex field whose Fourier support is `|k_a| <= max_index` on
/// every axis (lattice index units), with Gaussian coefficients.
pub fn band_limited<R: Rng + ?Sized>(grid: &Arc<Grid>, max_index: i64, rng: &mut R) -> SpectralField {
    let mut data = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (idx, c) in data.iter_mut().enumerate() {
        let ii = grid.unflatten(idx);
        let inside = (0..grid.dim()).all(|a| grid.signed_index(a, ii[a]).abs() <= max_index);
        if inside {
            *c = Complex64::new(gaussian(rng), gaussian(rng));
        }
    }
    SpectralField::from_data(grid, data, Representation::Fourier)
        .expect("length matches grid")
        .into_physical()
}

/// Real-valued variant of [`band_limited`] (Hermitian-symmetric spectrum).
pub fn band_limited_real<R: Rng + ?Sized>(grid: &Arc<Grid>, max_index: i64, rng: &mut R) -> SpectralField {
    band_limited(grid, max_index, rng).real_part()
}

/// Random field with every lattice mode populated.
pub fn white<R: Rng + ?Sized>(grid: &Arc<Grid>, rng: &mut R) -> SpectralField {
    let data = (0..grid.len()).map(|_| Complex64::new(gaussian(rng), gaussian(rng))).collect();
    SpectralField::from_data(grid, data, Representation::Physical).expect("length matches grid")
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
