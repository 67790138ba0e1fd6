//! Precomputed per-mode multipliers for the hot loops of the integrators,
//! operating on raw coefficient arrays.

use std::sync::Arc;

use num_complex::Complex64;

use crate::fft;
use crate::grid::Grid;

pub(crate) type Buf = Vec<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    pub grid: Arc<Grid>,
    /// `xi_a` per mode with the Nyquist mode of axis `a` zeroed.
    pub dxi: Vec<Vec<f64>>,
    pub k2: Vec<f64>,
    pub keep: Vec<bool>,
    pub dealias: bool,
}

impl Kernel {
    pub fn new(grid: &Arc<Grid>, dealias: bool) -> Self {
        let d = grid.dim();
        let mut dxi = vec![vec![0.0; grid.len()]; d];
        let mut k2 = vec![0.0; grid.len()];
        for idx in 0..grid.len() {
            let ii = grid.unflatten(idx);
            let xi = grid.xi(idx);
            for a in 0..d {
                dxi[a][idx] = if grid.is_nyquist(a, ii[a]) { 0.0 } else { xi[a] };
            }
            k2[idx] = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        }
        Kernel { grid: grid.clone(), dxi, k2, keep: grid.dealias_mask(), dealias }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn forward(&self, mut v: Buf) -> Buf {
        fft::forward(&self.grid, &mut v);
        v
    }

    pub fn inverse(&self, mut v: Buf) -> Buf {
        fft::inverse(&self.grid, &mut v);
        v
    }

    /// Physical-space `d_a f` from Fourier coefficients.
    pub fn partial_phys(&self, hat: &[Complex64], a: usize) -> Buf {
        let v = hat.iter().zip(&self.dxi[a]).map(|(c, &k)| Complex64::new(-k * c.im, k * c.re)).collect();
        self.inverse(v)
    }

    /// Fourier coefficients of `d_a f`.
    pub fn partial_hat(&self, hat: &[Complex64], a: usize) -> Buf {
        hat.iter().zip(&self.dxi[a]).map(|(c, &k)| Complex64::new(-k * c.im, k * c.re)).collect()
    }

    pub fn gradient_phys(&self, hat: &[Complex64]) -> Vec<Buf> {
        (0..self.dim()).map(|a| self.partial_phys(hat, a)).collect()
    }

    pub fn laplacian_phys(&self, hat: &[Complex64]) -> Buf {
        self.inverse(hat.iter().zip(&self.k2).map(|(c, &k)| -c * k).collect())
    }

    /// Fourier coefficients of `div v` from physical components.
    pub fn divergence_hat(&self, comps: Vec<Buf>) -> Buf {
        let mut acc = vec![ZERO; self.len()];
        for (a, c) in comps.into_iter().enumerate() {
            let h = self.forward(c);
            for ((o, c), &k) in acc.iter_mut().zip(&h).zip(&self.dxi[a]) {
                *o += Complex64::new(-k * c.im, k * c.re);
            }
        }
        acc
    }

    /// Zeroes modes outside the two-thirds band when dealiasing is on.
    pub fn project(&self, v: &mut [Complex64]) {
        if self.dealias {
            v.iter_mut().zip(&self.keep).filter(|(_, &k)| !k).for_each(|(c, _)| *c = ZERO);
        }
    }
}

pub(crate) fn axpy(y: &mut [Complex64], a: f64, x: &[Complex64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += x * a);
}

pub(crate) fn combine(base: &[Complex64], terms: &[(f64, &[Complex64])]) -> Buf {
    let mut out = base.to_vec();
    for (a, x) in terms {
        axpy(&mut out, *a, x);
    }
    out
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}
