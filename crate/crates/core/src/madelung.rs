//! Change of variables between the primitive fluid state `(rho, u)` and the
//! complex field `z = L(rho) + i psi`, `u = grad psi`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{EkError, Result};
use crate::field::{Representation, SpectralField};
use crate::grid::Grid;
use crate::model::CapillarityModel;

/// Curl tolerance accepted by [`to_complex`].
pub const CURL_TOLERANCE: f64 = 1e-8;

/// Primitive variables on a grid, held in physical representation.
#[derive(Debug, Clone)]
pub struct FluidState {
    pub rho: SpectralField,
    pub u: Vec<SpectralField>,
}

impl FluidState {
    pub fn new(rho: SpectralField, u: Vec<SpectralField>) -> Result<Self> {
        let grid = rho.grid().clone();
        if u.len() != grid.dim() {
            return Err(EkError::DegenerateInput(format!(
                "{} velocity components on a {}-D grid",
                u.len(),
                grid.dim()
            )));
        }
        if u.iter().any(|c| !c.grid().same_as(&grid)) {
            return Err(EkError::GridMismatch);
        }
        let rho = rho.real_part();
        if let Some(bad) = rho.data().iter().map(|c| c.re).find(|r| !(*r > 0.0)) {
            return Err(EkError::DegenerateInput(format!("density {bad} is not positive")));
        }
        Ok(FluidState { rho, u: u.iter().map(|c| c.real_part()).collect() })
    }

    /// The constant state `rho = 1`, `u = 0`.
    pub fn equilibrium(grid: &Arc<Grid>) -> Self {
        FluidState {
            rho: SpectralField::constant(grid, Complex64::new(1.0, 0.0)),
            u: (0..grid.dim()).map(|_| SpectralField::zeros(grid, Representation::Physical)).collect(),
        }
    }

    /// Linearized reconstruction `rho = 1 + delta Re z`, `u = grad Im z`,
    /// without range checks.
    pub fn linearized(model: &CapillarityModel, z: &SpectralField) -> Self {
        let delta = model.delta();
        let rho = z.map_physical(|c| Complex64::new(1.0 + delta * c.re, 0.0));
        let psi = z.imag_part();
        FluidState { rho, u: psi.gradient().into_iter().map(|c| c.into_physical().real_part()).collect() }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.rho.grid()
    }

    pub fn density_values(&self) -> Vec<f64> {
        self.rho.real_values()
    }

    /// `(min rho, max rho)`.
    pub fn density_range(&self) -> (f64, f64) {
        self.rho.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.re), hi.max(c.re)))
    }

    /// `int rho`.
    pub fn total_mass(&self) -> f64 {
        self.rho.mean().re * self.grid().volume()
    }

    /// `int (rho - 1)`.
    pub fn mass_excess(&self) -> f64 {
        (self.rho.mean().re - 1.0) * self.grid().volume()
    }

    pub fn velocity_divergence(&self) -> SpectralField {
        SpectralField::divergence(&self.u).expect("components share a grid").into_physical()
    }
}

/// Complex field `z = ell + i psi`.
#[derive(Debug, Clone)]
pub struct MadelungState {
    pub z: SpectralField,
}

impl MadelungState {
    pub fn new(z: SpectralField) -> Self {
        MadelungState { z }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.z.grid()
    }

    pub fn ell(&self) -> SpectralField {
        self.z.real_part()
    }

    pub fn psi(&self) -> SpectralField {
        self.z.imag_part()
    }
}

/// `||curl u|| / max(||grad u||, tiny)`; zero in one dimension.
pub fn curl_diagnostic(u: &[SpectralField]) -> f64 {
    let d = u.len();
    if d < 2 {
        return 0.0;
    }
    let du: Vec<Vec<SpectralField>> = u.iter().map(|c| c.gradient()).collect();
    let grad_sq: f64 = du.iter().flatten().map(|f| f.l2_norm().powi(2)).sum();
    let mut curl_sq = 0.0;
    for a in 0..d {
        for b in a + 1..d {
            // d_a u_b - d_b u_a
            let w = du[b][a].sub(&du[a][b]).expect("shared grid");
            curl_sq += w.l2_norm().powi(2);
        }
    }
    curl_sq.sqrt() / grad_sq.sqrt().max(1e-300)
}

/// `(rho, u) -> z = L(rho) + i psi` with `psi = Lap^{-1} div u`, zero mean.
pub fn to_complex(model: &CapillarityModel, state: &FluidState) -> Result<MadelungState> {
    let grid = state.grid().clone();
    let u_norm: f64 = state.u.iter().map(|c| c.l2_norm().powi(2)).sum::<f64>().sqrt();
    let curl = curl_diagnostic(&state.u);
    if curl > CURL_TOLERANCE {
        return Err(EkError::NonIrrotational { curl });
    }
    let mean_u: f64 = state.u.iter().map(|c| c.mean().norm_sqr()).sum::<f64>().sqrt() * grid.volume().sqrt();
    if u_norm > 0.0 && mean_u > CURL_TOLERANCE * u_norm {
        // a uniform drift is not the gradient of a periodic potential
        return Err(EkError::NonIrrotational { curl: mean_u / u_norm });
    }

    let div = SpectralField::divergence(&state.u)?.into_fourier();
    let psi = div
        .apply_multiplier(|xi| {
            let k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            if k2 == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-1.0 / k2, 0.0)
            }
        })
        .into_physical()
        .real_part();

    if u_norm > 0.0 {
        let grad = psi.gradient();
        let res: f64 = grad
            .iter()
            .zip(&state.u)
            .map(|(g, u)| g.sub(u).expect("shared grid").l2_norm().powi(2))
            .sum::<f64>()
            .sqrt();
        if res > CURL_TOLERANCE * u_norm {
            return Err(EkError::NonIrrotational { curl: res / u_norm });
        }
    }

    let mut data = Vec::with_capacity(grid.len());
    for (r, p) in state.rho.data().iter().zip(psi.data()) {
        data.push(Complex64::new(model.ell_of_rho(r.re)?, p.re));
    }
    Ok(MadelungState { z: SpectralField::from_data(&grid, data, Representation::Physical)? })
}

/// `z -> (rho, u) = (L^{-1}(Re z), grad Im z)`.
pub fn from_complex(model: &CapillarityModel, m: &MadelungState) -> Result<FluidState> {
    let z = m.z.to_physical();
    let mut rho = Vec::with_capacity(z.data().len());
    for c in z.data() {
        rho.push(model.rho_of_ell(c.re)?);
    }
    let rho = SpectralField::from_real(z.grid(), &rho)?;
    let u = z.imag_part().gradient().into_iter().map(|c| c.real_part()).collect();
    Ok(FluidState { rho, u })
}

/// Removes the additive constant of `psi` (the imaginary part of the zero
/// mode), which carries no physical information.
pub fn fix_potential_constant(z: &SpectralField) -> SpectralField {
    let repr = z.representation();
    let mut f = z.to_fourier();
    let c0 = f.data()[0];
    f.data_mut()[0] = Complex64::new(c0.re, 0.0);
    f.into_representation(repr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn equilibrium_maps_to_zero() {
        let g = Grid::cube(3, 8, 2.0 * PI).unwrap();
        let m = CapillarityModel::unit_normalized();
        let z = to_complex(&m, &FluidState::equilibrium(&g)).unwrap();
        assert!(z.z.lebesgue_norm(f64::INFINITY) < 1e-15);
        let back = from_complex(&m, &z).unwrap();
        assert!(back.rho.max_abs_difference(&SpectralField::constant(&g, re(1.0))).unwrap() < 1e-15);
    }

    #[test]
    fn gradient_of_sine_recovers_potential() {
        let l = 3.0;
        let g = Grid::new(&[16, 8], &[l, 2.0]).unwrap();
        let k = 2.0 * PI / l;
        let m = CapillarityModel::unit_normalized();
        let psi = SpectralField::from_fn(&g, |x| re((k * x[0]).sin()));
        let state = FluidState::new(SpectralField::constant(&g, re(1.0)), psi.gradient()).unwrap();
        let z = to_complex(&m, &state).unwrap();
        assert!(z.psi().max_abs_difference(&psi).unwrap() < 1e-12);
        assert!(z.ell().lebesgue_norm(f64::INFINITY) < 1e-15);
    }

    #[test]
    fn random_round_trip() {
        let g = Grid::cube(3, 16, 2.0 * PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = CapillarityModel::unit_normalized();
        let chi = random::band_limited_real(&g, 4, &mut rng).scale_real(1e-3);
        let r = random::band_limited_real(&g, 4, &mut rng);
        let r = r.scale_real(0.1 / r.lebesgue_norm(f64::INFINITY));
        let rho = r.map(|c| c + 1.0);
        let state = FluidState::new(rho, chi.gradient()).unwrap();
        let back = from_complex(&m, &to_complex(&m, &state).unwrap()).unwrap();
        assert!(back.rho.max_abs_difference(&state.rho).unwrap() < 1e-10);
        for (a, b) in back.u.iter().zip(&state.u) {
            assert!(a.max_abs_difference(b).unwrap() < 1e-10);
        }
        assert!(curl_diagnostic(&back.u) < 1e-12);
    }

    #[test]
    fn solenoidal_field_rejected() {
        let g = Grid::cube(2, 16, 2.0 * PI).unwrap();
        let chi = SpectralField::from_fn(&g, |x| re(x[0].sin() * x[1].cos()));
        let u = vec![chi.partial(1).scale_real(-1.0), chi.partial(0)];
        assert!(curl_diagnostic(&u) > 0.5);
        let state = FluidState::new(SpectralField::constant(&g, re(1.0)), u).unwrap();
        let m = CapillarityModel::unit_normalized();
        assert!(matches!(to_complex(&m, &state), Err(EkError::NonIrrotational { .. })));
        let zero = vec![SpectralField::zeros(&g, Representation::Physical); 2];
        assert_eq!(curl_diagnostic(&zero), 0.0);
    }

    #[test]
    fn density_out_of_range() {
        let g = Grid::cube(1, 8, 1.0).unwrap();
        let m = CapillarityModel::unit_normalized();
        let state = FluidState::new(SpectralField::constant(&g, re(0.1)), vec![SpectralField::zeros(&g, Representation::Physical)])
            .unwrap();
        assert!(matches!(to_complex(&m, &state), Err(EkError::DensityRange { .. })));
    }

    #[test]
    fn potential_constant_removed() {
        let g = Grid::cube(1, 8, 1.0).unwrap();
        let z = SpectralField::constant(&g, Complex64::new(0.5, 2.0));
        let f = fix_potential_constant(&z);
        assert!((f.mean() - re(0.5)).norm() < 1e-15);
    }
}
