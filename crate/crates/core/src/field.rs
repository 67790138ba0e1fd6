//! Complex fields on a periodic grid, carried in either physical or Fourier
//! representation, plus the Fourier-multiplier operators built on them.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{EkError, Result};
use crate::fft;
use crate::grid::Grid;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Physical,
    Fourier,
}

#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Arc<Grid>,
    data: Vec<Complex64>,
    repr: Representation,
}

impl SpectralField {
    pub fn zeros(grid: &Arc<Grid>, repr: Representation) -> Self {
        SpectralField { grid: grid.clone(), data: vec![ZERO; grid.len()], repr }
    }

    pub fn from_data(grid: &Arc<Grid>, data: Vec<Complex64>, repr: Representation) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(EkError::InvalidGrid(format!(
                "{} values for a grid of {} nodes",
                data.len(),
                grid.len()
            )));
        }
        Ok(SpectralField { grid: grid.clone(), data, repr })
    }

    pub fn from_real(grid: &Arc<Grid>, values: &[f64]) -> Result<Self> {
        Self::from_data(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect(), Representation::Physical)
    }

    /// Samples `f` at the nodes; the closure receives the position measured
    /// from the box center.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.centered_position(i))).collect();
        SpectralField { grid: grid.clone(), data, repr: Representation::Physical }
    }

    /// Builds a Fourier-space field from a function of the wavevector.
    pub fn from_spectrum(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.xi(i))).collect();
        SpectralField { grid: grid.clone(), data, repr: Representation::Fourier }
    }

    pub fn constant(grid: &Arc<Grid>, c: Complex64) -> Self {
        SpectralField { grid: grid.clone(), data: vec![c; grid.len()], repr: Representation::Physical }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn to_fourier(&self) -> Self {
        self.clone().into_fourier()
    }

    pub fn to_physical(&self) -> Self {
        self.clone().into_physical()
    }

    pub fn into_fourier(mut self) -> Self {
        if self.repr == Representation::Physical {
            fft::forward(&self.grid, &mut self.data);
            self.repr = Representation::Fourier;
        }
        self
    }

    pub fn into_physical(mut self) -> Self {
        if self.repr == Representation::Fourier {
            fft::inverse(&self.grid, &mut self.data);
            self.repr = Representation::Physical;
        }
        self
    }

    pub fn into_representation(self, repr: Representation) -> Self {
        match repr {
            Representation::Physical => self.into_physical(),
            Representation::Fourier => self.into_fourier(),
        }
    }

    fn check_grid(&self, other: &SpectralField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(EkError::GridMismatch)
        }
    }

    /// Applies `m(xi)` in Fourier space, returning the result in the input's
    /// representation.
    pub fn apply_multiplier(&self, m: impl Fn([f64; 3]) -> Complex64) -> Self {
        let repr = self.repr;
        let mut f = self.to_fourier();
        for (i, c) in f.data.iter_mut().enumerate() {
            *c *= m(f.grid.xi(i));
        }
        f.into_representation(repr)
    }

    /// Applies a precomputed per-mode multiplier (storage order).
    pub fn apply_mode_weights(&self, w: &[f64]) -> Self {
        let repr = self.repr;
        let mut f = self.to_fourier();
        f.data.iter_mut().zip(w).for_each(|(c, &w)| *c *= w);
        f.into_representation(repr)
    }

    /// Applies `prod_a (i xi_a)^{m_a}`. Odd orders zero the Nyquist mode of
    /// their axis so that real fields stay real.
    pub fn derivative(&self, multi_index: [u32; 3]) -> Self {
        let repr = self.repr;
        let mut f = self.to_fourier();
        let grid = f.grid.clone();
        for (idx, c) in f.data.iter_mut().enumerate() {
            let ii = grid.unflatten(idx);
            let xi = grid.xi(idx);
            let mut m = Complex64::new(1.0, 0.0);
            for a in 0..3 {
                let order = multi_index[a];
                if order == 0 {
                    continue;
                }
                if order % 2 == 1 && grid.is_nyquist(a, ii[a]) {
                    m = ZERO;
                    break;
                }
                m *= (I * xi[a]).powu(order);
            }
            *c *= m;
        }
        f.into_representation(repr)
    }

    pub fn partial(&self, axis: usize) -> Self {
        let mut mi = [0u32; 3];
        mi[axis] = 1;
        self.derivative(mi)
    }

    pub fn gradient(&self) -> Vec<SpectralField> {
        (0..self.grid.dim()).map(|a| self.partial(a)).collect()
    }

    pub fn laplacian(&self) -> Self {
        self.apply_multiplier(|xi| Complex64::new(-(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]), 0.0))
    }

    /// Divergence of a vector field given by its components.
    pub fn divergence(components: &[SpectralField]) -> Result<SpectralField> {
        let first = components
            .first()
            .ok_or_else(|| EkError::DegenerateInput("divergence of an empty vector field".into()))?;
        let mut acc = SpectralField::zeros(first.grid(), Representation::Fourier);
        for (a, c) in components.iter().enumerate() {
            acc.check_grid(c)?;
            let d = c.partial(a).into_fourier();
            acc.data.iter_mut().zip(&d.data).for_each(|(x, y)| *x += y);
        }
        Ok(acc.into_representation(first.repr))
    }

    /// Exact free Schrödinger flow `e^{it Laplacian}`, the multiplier
    /// `exp(-i t |xi|^2)`.
    pub fn free_propagate(&self, t: f64) -> Self {
        if t == 0.0 {
            return self.clone();
        }
        self.apply_multiplier(|xi| {
            let k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            Complex64::from_polar(1.0, -t * k2)
        })
    }

    /// Fourier coefficient of the zero mode.
    pub fn zero_mode(&self) -> Complex64 {
        match self.repr {
            Representation::Fourier => self.data[0],
            Representation::Physical => {
                let sum: Complex64 = self.data.iter().sum();
                sum * (self.grid.volume().sqrt() / self.grid.len() as f64)
            }
        }
    }

    /// Spatial mean value.
    pub fn mean(&self) -> Complex64 {
        self.zero_mode() / self.grid.volume().sqrt()
    }

    /// Returns a copy with the zero Fourier mode removed.
    pub fn without_mean(&self) -> Self {
        let m = self.mean();
        match self.repr {
            Representation::Fourier => {
                let mut f = self.clone();
                f.data[0] = ZERO;
                f
            }
            Representation::Physical => self.map(|z| z - m),
        }
    }

    /// `H^s` (multiplier `(1+|xi|^2)^{s/2}`) or `\dot H^s` (`|xi|^s`) norm.
    /// Homogeneous norms skip the zero mode; for `s < 0` it must vanish.
    pub fn sobolev_norm(&self, s: f64, homogeneous: bool) -> Result<f64> {
        let f = self.to_fourier();
        let l2 = f.l2_norm();
        if homogeneous && s < 0.0 {
            let z = f.data[0].norm();
            if z > 1e-12 * l2.max(f64::MIN_POSITIVE) && z > 1e-300 {
                return Err(EkError::DegenerateInput(format!(
                    "homogeneous norm of order {s} needs a vanishing zero mode (|c_0| = {z:.3e})"
                )));
            }
        }
        if s == 0.0 && !homogeneous {
            return Ok(l2);
        }
        let grid = &f.grid;
        let mut acc = 0.0;
        for (idx, c) in f.data.iter().enumerate() {
            let xi = grid.xi(idx);
            let k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            let w = if homogeneous {
                if idx == 0 {
                    continue;
                }
                k2.powf(s)
            } else {
                (1.0 + k2).powf(s)
            };
            acc += w * c.norm_sqr();
        }
        Ok(acc.sqrt())
    }

    /// Trapezoid (lattice-exact) `L^p` norm; `p = f64::INFINITY` gives the
    /// maximum modulus.
    pub fn lebesgue_norm(&self, p: f64) -> f64 {
        assert!(p >= 1.0, "L^p norm needs p >= 1, got {p}");
        let f = self.to_physical();
        if p.is_infinite() {
            return f.data.iter().map(|c| c.norm()).fold(0.0, f64::max);
        }
        let dv = f.grid.cell_volume();
        if p == 2.0 {
            return (f.data.iter().map(|c| c.norm_sqr()).sum::<f64>() * dv).sqrt();
        }
        if p == 1.0 {
            return f.data.iter().map(|c| c.norm()).sum::<f64>() * dv;
        }
        (f.data.iter().map(|c| c.norm().powf(p)).sum::<f64>() * dv).powf(1.0 / p)
    }

    /// `L^2` norm computed in whichever representation the field is held -
    /// the two agree by Parseval.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.data.iter().map(|c| c.norm_sqr()).sum();
        match self.repr {
            Representation::Fourier => s.sqrt(),
            Representation::Physical => (s * self.grid.cell_volume()).sqrt(),
        }
    }

    /// Sum of squared Fourier coefficients, the discrete `l^2` norm.
    pub fn coefficient_norm(&self) -> f64 {
        self.to_fourier().data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        SpectralField { grid: self.grid.clone(), data: self.data.iter().map(|&z| f(z)).collect(), repr: self.repr }
    }

    /// Pointwise map in physical space.
    pub fn map_physical(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let p = self.to_physical();
        p.map(f)
    }

    pub fn real_part(&self) -> Self {
        self.map_physical(|z| Complex64::new(z.re, 0.0))
    }

    pub fn imag_part(&self) -> Self {
        self.map_physical(|z| Complex64::new(z.im, 0.0))
    }

    pub fn conj(&self) -> Self {
        self.map_physical(|z| z.conj())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    fn zip_with(&self, other: &SpectralField, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        self.check_grid(other)?;
        let b = other.clone().into_representation(self.repr);
        let data = self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(SpectralField { grid: self.grid.clone(), data, repr: self.repr })
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise product, returned in physical representation.
    pub fn mul(&self, other: &SpectralField) -> Result<Self> {
        self.to_physical().zip_with(other, |a, b| a * b)
    }

    /// Relative `L^2` distance `|a - b| / max(|a|, |b|)`; zero when both vanish.
    pub fn relative_distance(&self, other: &SpectralField) -> Result<f64> {
        let d = self.sub(other)?.l2_norm();
        let scale = self.l2_norm().max(other.l2_norm());
        Ok(if scale == 0.0 { d } else { d / scale })
    }

    /// Maximum modulus of the pointwise difference, in physical space.
    pub fn max_abs_difference(&self, other: &SpectralField) -> Result<f64> {
        Ok(self.to_physical().sub(other)?.lebesgue_norm(f64::INFINITY))
    }

    /// Zeroes every mode outside the two-thirds band.
    pub fn dealiased(&self) -> Self {
        let repr = self.repr;
        let mut f = self.to_fourier();
        for (c, keep) in f.data.iter_mut().zip(f.grid.dealias_mask()) {
            if !keep {
                *c = ZERO;
            }
        }
        f.into_representation(repr)
    }

    /// Real parts of the physical samples.
    pub fn real_values(&self) -> Vec<f64> {
        self.to_physical().data.iter().map(|c| c.re).collect()
    }

    /// Largest imaginary part in physical space, a reality diagnostic.
    pub fn max_imag(&self) -> f64 {
        self.to_physical().data.iter().map(|c| c.im.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn constant_maps_to_scaled_zero_mode() {
        let g = Grid::new(&[16, 8], &[2.0, 3.0]).unwrap();
        let f = SpectralField::constant(&g, c(1.5)).into_fourier();
        let expected = 1.5 * g.volume().sqrt();
        assert!((f.data()[0] - c(expected)).norm() < 1e-13);
        assert!(f.data()[1..].iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn plane_wave_is_a_single_coefficient() {
        let g = Grid::cube(2, 16, 2.0 * PI).unwrap();
        // e^{i(3x - 2y)}, positions measured from the corner for a clean phase
        let mut f = SpectralField::zeros(&g, Representation::Physical);
        for idx in 0..g.len() {
            let ii = g.unflatten(idx);
            let x = g.coordinate(0, ii[0]);
            let y = g.coordinate(1, ii[1]);
            f.data_mut()[idx] = Complex64::from_polar(1.0, 3.0 * x - 2.0 * y);
        }
        let f = f.into_fourier();
        let target = g.flatten([3, 16 - 2, 0]);
        for (idx, z) in f.data().iter().enumerate() {
            if idx == target {
                assert!((z.norm() - g.volume().sqrt()).abs() < 1e-12);
            } else {
                assert!(z.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_derivative() {
        let l = 3.0;
        let g = Grid::cube(1, 32, l).unwrap();
        let k = 2.0 * PI / l;
        let f = SpectralField::from_fn(&g, |x| c((k * x[0]).sin()));
        let df = f.partial(0);
        let expected = SpectralField::from_fn(&g, |x| c(k * (k * x[0]).cos()));
        assert!(df.max_abs_difference(&expected).unwrap() < 1e-12);
        let constant = SpectralField::constant(&g, c(2.0));
        assert!(constant.partial(0).lebesgue_norm(f64::INFINITY) < 1e-12);
    }

    #[test]
    fn odd_derivative_keeps_real_fields_real() {
        let g = Grid::cube(1, 16, 1.0).unwrap();
        // alternating sequence lives entirely on the Nyquist mode
        let f = SpectralField::from_real(&g, &(0..16).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>())
            .unwrap();
        assert!(f.partial(0).lebesgue_norm(f64::INFINITY) < 1e-12);
        assert!(f.laplacian().lebesgue_norm(f64::INFINITY) > 1.0);
    }

    #[test]
    fn homogeneous_negative_norm_needs_mean_zero() {
        let g = Grid::cube(1, 16, 2.0 * PI).unwrap();
        let f = SpectralField::from_fn(&g, |x| c(1.0 + x[0].sin()));
        assert!(matches!(f.sobolev_norm(-2.0, true), Err(EkError::DegenerateInput(_))));
        assert!(f.without_mean().sobolev_norm(-2.0, true).is_ok());
        assert!(f.sobolev_norm(-2.0, false).is_ok());
    }

    #[test]
    fn plane_wave_sobolev_weight() {
        let g = Grid::cube(1, 32, 2.0 * PI).unwrap();
        let f = SpectralField::from_fn(&g, |x| Complex64::from_polar(1.0, 3.0 * x[0]));
        let l2 = f.lebesgue_norm(2.0);
        let h = f.sobolev_norm(1.5, true).unwrap();
        assert!((h - 3f64.powf(1.5) * l2).abs() < 1e-10 * h);
    }

    #[test]
    fn constant_lebesgue_norms() {
        let g = Grid::new(&[8, 8, 8], &[1.0, 2.0, 0.5]).unwrap();
        let f = SpectralField::constant(&g, Complex64::new(0.0, -3.0));
        for p in [1.0, 2.0, 3.5] {
            let expected = 3.0 * g.volume().powf(1.0 / p);
            assert!((f.lebesgue_norm(p) - expected).abs() < 1e-12 * expected);
        }
        assert!((f.lebesgue_norm(f64::INFINITY) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = SpectralField::zeros(&Grid::cube(1, 8, 1.0).unwrap(), Representation::Physical);
        let b = SpectralField::zeros(&Grid::cube(1, 16, 1.0).unwrap(), Representation::Physical);
        assert!(matches!(a.add(&b), Err(EkError::GridMismatch)));
    }
}
