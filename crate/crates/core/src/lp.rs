//! Littlewood-Paley dyadic blocks, Besov norms, Bony paraproducts and
//! Bernstein-ratio measurements on the periodic lattice.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{EkError, Result};
use crate::field::{Representation, SpectralField};
use crate::grid::Grid;

const INNER: f64 = 3.0 / 4.0;
const OUTER: f64 = 4.0 / 3.0;

/// Radial low-frequency cutoff: 1 on `r <= 3/4`, 0 on `r >= 4/3`, with the
/// transition `exp(1 - 1/(1 - t^2))` in between.
pub fn chi(r: f64) -> f64 {
    if r <= INNER {
        1.0
    } else if r >= OUTER {
        0.0
    } else {
        let t = (r - INNER) / (OUTER - INNER);
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

/// Shell bump `chi(r/2) - chi(r)`, supported in `[3/4, 8/3]`.
pub fn ring_bump(r: f64) -> f64 {
    chi(0.5 * r) - chi(r)
}

/// Range of dyadic indices that resolves a given lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DyadicCutoffs {
    pub j_min: i32,
    pub j_max: i32,
}

impl DyadicCutoffs {
    /// Smallest interval `[j_min, j_max]` whose ring bumps sum to one on every
    /// nonzero lattice wavevector.
    pub fn for_grid(grid: &Grid) -> Self {
        let j_min = (INNER * grid.min_wavenumber()).log2().floor() as i32;
        let j_max = (grid.max_wavenumber() / (2.0 * INNER)).log2().ceil() as i32;
        DyadicCutoffs { j_min, j_max }
    }

    pub fn indices(&self) -> impl Iterator<Item = i32> {
        self.j_min..=self.j_max
    }

    pub fn contains(&self, j: i32) -> bool {
        (self.j_min..=self.j_max).contains(&j)
    }

    /// Largest deviation of `sum_j ring_bump(2^{-j}|xi|)` from one over the
    /// nonzero lattice modes.
    pub fn partition_residual(&self, grid: &Grid) -> f64 {
        let mut worst = 0.0f64;
        for (idx, k2) in grid.xi_squared().into_iter().enumerate() {
            if idx == 0 {
                continue;
            }
            let r = k2.sqrt();
            let sum: f64 = self.indices().map(|j| ring_bump(r * 2f64.powi(-j))).sum();
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }
}

fn radial_weights(grid: &Grid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    grid.xi_squared().into_iter().map(|k2| f(k2.sqrt())).collect()
}

/// `\dot\Delta_j f`; zero outside the grid's dyadic range.
pub fn dyadic_block(f: &SpectralField, j: i32) -> SpectralField {
    let cut = DyadicCutoffs::for_grid(f.grid());
    if !cut.contains(j) {
        return SpectralField::zeros(f.grid(), f.representation());
    }
    let scale = 2f64.powi(-j);
    let w = radial_weights(f.grid(), |r| ring_bump(r * scale));
    f.apply_mode_weights(&w)
}

/// `\dot S_j f`, the multiplier `chi(2^{-j} xi)`. Includes the zero mode.
pub fn low_pass(f: &SpectralField, j: i32) -> SpectralField {
    let scale = 2f64.powi(-j);
    let w = radial_weights(f.grid(), |r| chi(r * scale));
    f.apply_mode_weights(&w)
}

/// All blocks of `f` over the grid's dyadic range, in increasing `j`.
pub fn all_blocks(f: &SpectralField) -> Vec<(i32, SpectralField)> {
    let cut = DyadicCutoffs::for_grid(f.grid());
    let fourier = f.to_fourier();
    cut.indices().map(|j| (j, dyadic_block(&fourier, j))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesovIndex {
    pub s: f64,
    pub p: f64,
    pub r: f64,
}

impl BesovIndex {
    pub fn new(s: f64, p: f64, r: f64) -> Result<Self> {
        if p < 1.0 || r < 1.0 || p.is_nan() || r.is_nan() {
            return Err(EkError::DegenerateInput(format!("Besov index needs p, r >= 1 (p = {p}, r = {r})")));
        }
        Ok(BesovIndex { s, p, r })
    }
}

/// Per-block contribution `2^{js} |Delta_j f|_{L^p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockNorm {
    pub j: i32,
    pub weighted: f64,
}

/// Block profile behind [`besov_norm`].
pub fn besov_blocks(f: &SpectralField, idx: BesovIndex) -> Result<Vec<BlockNorm>> {
    if idx.s < 0.0 {
        check_mean_zero(f, "negative-regularity Besov norm")?;
    }
    Ok(all_blocks(f)
        .into_iter()
        .map(|(j, b)| BlockNorm { j, weighted: 2f64.powf(j as f64 * idx.s) * b.lebesgue_norm(idx.p) })
        .collect())
}

/// Homogeneous `\dot B^s_{p,r}` norm over the lattice's dyadic range.
pub fn besov_norm(f: &SpectralField, idx: BesovIndex) -> Result<f64> {
    let blocks = besov_blocks(f, idx)?;
    Ok(sequence_norm(blocks.iter().map(|b| b.weighted), idx.r))
}

/// Inhomogeneous `B^1_{1,1}`: `|S_{j0} f|_{L^1} + sum_{j >= j0} 2^j |Delta_j f|_{L^1}`
/// with `j0` the smallest usable block.
pub fn besov_b111(f: &SpectralField) -> f64 {
    let cut = DyadicCutoffs::for_grid(f.grid());
    let low = low_pass(f, cut.j_min).lebesgue_norm(1.0);
    low + all_blocks(f).into_iter().map(|(j, b)| 2f64.powi(j) * b.lebesgue_norm(1.0)).sum::<f64>()
}

fn sequence_norm(values: impl Iterator<Item = f64>, r: f64) -> f64 {
    if r.is_infinite() {
        values.fold(0.0, f64::max)
    } else {
        values.map(|v| v.powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

fn check_mean_zero(f: &SpectralField, what: &str) -> Result<()> {
    let z = f.zero_mode().norm();
    let scale = f.l2_norm();
    if z > 1e-12 * scale && z > 1e-300 {
        return Err(EkError::DegenerateInput(format!("{what} needs a vanishing zero mode (|c_0| = {z:.3e})")));
    }
    Ok(())
}

/// The three pieces of `fg = T_f g + R(f, g) + T_g f + f_0 g_0`, where
/// `f_0`, `g_0` are the spatial means.
#[derive(Debug, Clone)]
pub struct BonyParts {
    pub paraproduct_fg: SpectralField,
    pub remainder: SpectralField,
    pub paraproduct_gf: SpectralField,
}

impl BonyParts {
    pub fn sum(&self) -> SpectralField {
        self.paraproduct_fg
            .add(&self.remainder)
            .and_then(|s| s.add(&self.paraproduct_gf))
            .expect("parts share a grid")
    }
}

/// Bony decomposition with `T_f g = sum_j S_{j-1} f Delta_j g` and
/// `R(f,g) = sum_j (Delta_{j-1} + Delta_j + Delta_{j+1}) f Delta_j g`.
pub fn bony_decompose(f: &SpectralField, g: &SpectralField) -> Result<BonyParts> {
    if !f.grid().same_as(g.grid()) {
        return Err(EkError::GridMismatch);
    }
    let grid = f.grid().clone();
    let fb: Vec<SpectralField> = all_blocks(f).into_iter().map(|(_, b)| b.into_physical()).collect();
    let gb: Vec<SpectralField> = all_blocks(g).into_iter().map(|(_, b)| b.into_physical()).collect();
    let cut = DyadicCutoffs::for_grid(&grid);
    let f_fourier = f.to_fourier();
    let g_fourier = g.to_fourier();

    let mut t_fg = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut t_gf = t_fg.clone();
    let mut rem = t_fg.clone();
    for (pos, j) in cut.indices().enumerate() {
        let sf = low_pass(&f_fourier, j - 1).into_physical();
        let sg = low_pass(&g_fourier, j - 1).into_physical();
        accumulate_product(&mut t_fg, sf.data(), gb[pos].data());
        accumulate_product(&mut t_gf, sg.data(), fb[pos].data());
        let lo = pos.saturating_sub(1);
        let hi = (pos + 1).min(fb.len() - 1);
        for k in lo..=hi {
            accumulate_product(&mut rem, fb[k].data(), gb[pos].data());
        }
    }
    let wrap = |d| SpectralField::from_data(&grid, d, Representation::Physical).expect("grid length");
    Ok(BonyParts { paraproduct_fg: wrap(t_fg), remainder: wrap(rem), paraproduct_gf: wrap(t_gf) })
}

fn accumulate_product(acc: &mut [Complex64], a: &[Complex64], b: &[Complex64]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}

/// `fg - f_0 g_0`, the target of the Bony reconstruction.
pub fn product_minus_means(f: &SpectralField, g: &SpectralField) -> Result<SpectralField> {
    let prod = f.mul(g)?;
    let m = f.mean() * g.mean();
    Ok(prod.map(|z| z - m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernsteinReport {
    pub j: i32,
    pub p: f64,
    pub q: f64,
    /// `|f|_{L^q} / (2^{dj(1/p - 1/q)} |f|_{L^p})`
    pub embedding_ratio: f64,
    /// `| |grad f| |_{L^p} / (2^j |f|_{L^p})`
    pub derivative_ratio: f64,
}

/// Bernstein ratios for a field whose spectrum sits in the `j`-th shell.
pub fn bernstein_check(block: &SpectralField, j: i32, p: f64, q: f64) -> BernsteinReport {
    let d = block.grid().dim() as f64;
    let lp = block.lebesgue_norm(p);
    let lq = block.lebesgue_norm(q);
    let inv = |x: f64| if x.is_infinite() { 0.0 } else { 1.0 / x };
    let scale = 2f64.powf(d * j as f64 * (inv(p) - inv(q)));
    let grad = block.gradient();
    let grid = block.grid().clone();
    let modulus: Vec<f64> = {
        let phys: Vec<SpectralField> = grad.into_iter().map(|g| g.into_physical()).collect();
        (0..grid.len()).map(|i| phys.iter().map(|g| g.data()[i].norm_sqr()).sum::<f64>().sqrt()).collect()
    };
    let grad_norm = SpectralField::from_real(&grid, &modulus).expect("grid length").lebesgue_norm(p);
    let nz = |x: f64| if x == 0.0 { f64::MIN_POSITIVE } else { x };
    BernsteinReport {
        j,
        p,
        q,
        embedding_ratio: lq / nz(scale * lp),
        derivative_ratio: grad_norm / nz(2f64.powi(j) * lp),
    }
}

/// CSV rows `j,ratio,bound` for block norms or Bernstein ratios.
pub fn csv_rows(rows: &[(i32, f64, f64)]) -> String {
    let mut out = String::from("j,ratio,bound\n");
    for (j, r, b) in rows {
        out.push_str(&format!("{j},{r:.12e},{b:.12e}\n"));
    }
    out
}

/// Convenience for grids: the dyadic range in use.
pub fn cutoffs(grid: &Arc<Grid>) -> DyadicCutoffs {
    DyadicCutoffs::for_grid(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn chi_profile() {
        assert_eq!(chi(0.0), 1.0);
        assert_eq!(chi(0.75), 1.0);
        assert_eq!(chi(4.0 / 3.0), 0.0);
        let mut prev = 1.0;
        for i in 0..200 {
            let v = chi(0.7 + i as f64 * 0.004);
            assert!(v <= prev + 1e-15 && (0.0..=1.0).contains(&v));
            prev = v;
        }
        assert_eq!(ring_bump(0.7), 0.0);
        assert_eq!(ring_bump(2.7), 0.0);
    }

    #[test]
    fn partition_of_unity() {
        for g in [Grid::cube(1, 64, 10.0).unwrap(), Grid::cube(3, 16, 2.0 * PI).unwrap()] {
            let cut = DyadicCutoffs::for_grid(&g);
            assert!(cut.partition_residual(&g) < 1e-12, "{cut:?}");
        }
    }

    #[test]
    fn reconstruction_and_full_band() {
        let g = Grid::cube(2, 32, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random::white(&g, &mut rng);
        let mut sum = SpectralField::zeros(&g, Representation::Fourier);
        for (_, b) in all_blocks(&f) {
            sum = sum.add(&b).unwrap();
        }
        let target = f.without_mean();
        assert!(sum.sub(&target).unwrap().l2_norm() < 1e-10 * target.l2_norm());
        let cut = DyadicCutoffs::for_grid(&g);
        assert!(low_pass(&f, cut.j_max + 2).sub(&f).unwrap().l2_norm() < 1e-12 * f.l2_norm());
        assert_eq!(dyadic_block(&f, cut.j_max + 1).l2_norm(), 0.0);
    }

    #[test]
    fn plane_wave_spreads_over_adjacent_blocks() {
        let g = Grid::cube(1, 128, 2.0 * PI).unwrap();
        // |xi0| = 2^4
        let f = SpectralField::from_fn(&g, |x| Complex64::from_polar(1.0, 16.0 * (x[0] + PI)));
        let total: f64 = [3, 4, 5].iter().map(|&j| dyadic_block(&f, j).l2_norm()).sum();
        assert!((total - f.l2_norm()).abs() < 1e-10 * f.l2_norm());
        assert!(dyadic_block(&f, 2).l2_norm() < 1e-14);
        assert!(dyadic_block(&f, 6).l2_norm() < 1e-14);
    }

    #[test]
    fn besov_rejects_bad_index_and_mean() {
        assert!(BesovIndex::new(1.0, 0.5, 1.0).is_err());
        let g = Grid::cube(1, 16, 1.0).unwrap();
        let f = SpectralField::constant(&g, Complex64::new(1.0, 0.0));
        assert!(besov_norm(&f, BesovIndex::new(-1.0, 2.0, 2.0).unwrap()).is_err());
        let zero = SpectralField::zeros(&g, Representation::Physical);
        assert_eq!(besov_norm(&zero, BesovIndex::new(1.0, 2.0, 2.0).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn constant_factor_paraproduct() {
        let g = Grid::cube(2, 32, 2.0 * PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = SpectralField::constant(&g, Complex64::new(2.5, 0.0));
        let h = random::band_limited(&g, 8, &mut rng);
        let parts = bony_decompose(&f, &h).unwrap();
        let expected = h.without_mean().scale_real(2.5);
        assert!(parts.paraproduct_fg.sub(&expected).unwrap().l2_norm() < 1e-10 * expected.l2_norm());
        assert!(parts.remainder.l2_norm() < 1e-12);
        let target = product_minus_means(&f, &h).unwrap();
        assert!(parts.sum().sub(&target).unwrap().l2_norm() < 1e-10 * target.l2_norm());
    }

    #[test]
    fn csv_has_header() {
        let s = csv_rows(&[(1, 0.5, 1.0)]);
        assert!(s.starts_with("j,ratio,bound\n1,"));
    }
}
