//! Final-data scattering construction: the free profile `z1 = e^{it Lap} phi`,
//! the Duhamel second approximation `z2` and its split, the backward solve
//! from `T_n`, the bootstrap norm, the vector field `J` and decay fits.

use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Direction, SolverConfig, ZSolver};
use crate::energy::{self, EnergyReport};
use crate::error::{EkError, Result};
use crate::field::{Representation, SpectralField};
use crate::grid::Grid;
use crate::kernel::{Buf, Kernel};
use crate::lp;
use crate::madelung::{self, FluidState, MadelungState};
use crate::model::CapillarityModel;
use crate::snapshot;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Threshold, relative to the spectral peak, that defines the bandwidth used
/// by [`wraparound_horizon`].
pub const BANDWIDTH_THRESHOLD: f64 = 1e-3;
/// Boundary-tail level below which a profile counts as interior-supported.
pub const TAIL_TOLERANCE: f64 = 1e-10;
/// Default smallness threshold for the profile norm aggregate.
pub const DEFAULT_SMALLNESS: f64 = 1.0;

/// Default lattice for 3-D experiments: `64^3` nodes on a box of side `40 pi`.
pub const DEFAULT_POINTS: usize = 64;
pub const DEFAULT_BOX_LENGTH: f64 = 40.0 * std::f64::consts::PI;
pub const DEFAULT_T_N: [f64; 3] = [8.0, 16.0, 32.0];
pub const DEFAULT_S_REG: f64 = 2.6;

// ---------------------------------------------------------------------------
// Profiles

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum ProfileGenerator {
    /// `A (x_axis / w) exp(-|x|^2 / (2 w^2))`, `x` measured from `center`
    /// relative to the box center.
    GaussianDipole {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: [f64; 3],
        #[serde(default)]
        axis: usize,
    },
    /// `A exp(-|x|^2 / (2 w^2)) e^{i k0 . x}`.
    RingPacket {
        amplitude: f64,
        width: f64,
        wavenumber: [f64; 3],
        #[serde(default)]
        center: [f64; 3],
    },
    /// A field read from a snapshot file.
    UserSnapshot { path: PathBuf },
}

impl ProfileGenerator {
    /// The default 3-D profile: a Gaussian packet of width 1.5 carried at
    /// wavenumber `(1/2, 0, 0)`, amplitude `1e-2`.
    pub fn default_packet() -> Self {
        ProfileGenerator::RingPacket { amplitude: 1e-2, width: 1.5, wavenumber: [0.5, 0.0, 0.0], center: [0.0; 3] }
    }

    /// The same generator with its amplitude replaced.
    pub fn with_amplitude(&self, a: f64) -> Self {
        let mut g = self.clone();
        match &mut g {
            ProfileGenerator::GaussianDipole { amplitude, .. } | ProfileGenerator::RingPacket { amplitude, .. } => *amplitude = a,
            ProfileGenerator::UserSnapshot { .. } => {}
        }
        g
    }
}

impl Default for ProfileGenerator {
    fn default() -> Self {
        ProfileGenerator::default_packet()
    }
}

/// Admissibility diagnostics of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileFlags {
    pub mean_zero: bool,
    /// Largest modulus on the box faces relative to the overall maximum.
    pub boundary_tail: f64,
    pub interior_supported: bool,
    pub band_limited: bool,
}

/// The scattering datum `phi`, mean-zero.
#[derive(Debug, Clone)]
pub struct Profile {
    pub generator: Option<ProfileGenerator>,
    pub field: SpectralField,
    pub flags: ProfileFlags,
}

fn boundary_tail(f: &SpectralField) -> f64 {
    let p = f.to_physical();
    let g = p.grid();
    let max = p.lebesgue_norm(f64::INFINITY);
    if max == 0.0 {
        return 0.0;
    }
    let mut tail: f64 = 0.0;
    for (idx, c) in p.data().iter().enumerate() {
        let ii = g.unflatten(idx);
        if (0..g.dim()).any(|a| ii[a] == 0) {
            tail = tail.max(c.norm());
        }
    }
    tail / max
}

impl Profile {
    /// Realizes a generator on `grid`. With `band_limit` the field is
    /// restricted to the two-thirds band, so that quadratic products of its
    /// free evolution are resolved exactly by the dealiased solver.
    pub fn build(grid: &Arc<Grid>, generator: &ProfileGenerator, band_limit: bool) -> Result<Profile> {
        let field = match generator {
            ProfileGenerator::GaussianDipole { amplitude, width, center, axis } => {
                if !(*width > 0.0) || *axis >= grid.dim() {
                    return Err(EkError::DegenerateInput(format!("dipole width {width} / axis {axis} invalid")));
                }
                let (a, w, c, ax) = (*amplitude, *width, *center, *axis);
                SpectralField::from_fn(grid, |x| {
                    let y = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
                    let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
                    Complex64::new(a * y[ax] / w * (-r2 / (2.0 * w * w)).exp(), 0.0)
                })
            }
            ProfileGenerator::RingPacket { amplitude, width, wavenumber, center } => {
                if !(*width > 0.0) {
                    return Err(EkError::DegenerateInput(format!("packet width {width} invalid")));
                }
                let (a, w, k, c) = (*amplitude, *width, *wavenumber, *center);
                SpectralField::from_fn(grid, |x| {
                    let y = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
                    let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
                    Complex64::from_polar(a * (-r2 / (2.0 * w * w)).exp(), k[0] * y[0] + k[1] * y[1] + k[2] * y[2])
                })
            }
            ProfileGenerator::UserSnapshot { path } => {
                let (f, _) = snapshot::read(path)?;
                if !f.grid().same_as(grid) {
                    return Err(EkError::GridMismatch);
                }
                f
            }
        };
        let mut p = Profile::from_field(field, band_limit);
        p.generator = Some(generator.clone());
        Ok(p)
    }

    /// Wraps an arbitrary field, removing its mean.
    pub fn from_field(field: SpectralField, band_limit: bool) -> Profile {
        let field = if band_limit { field.dealiased() } else { field };
        let field = field.without_mean().into_physical();
        let tail = boundary_tail(&field);
        Profile {
            generator: None,
            flags: ProfileFlags {
                mean_zero: true,
                boundary_tail: tail,
                interior_supported: tail <= TAIL_TOLERANCE,
                band_limited: band_limit,
            },
            field,
        }
    }

    pub fn zero(grid: &Arc<Grid>) -> Profile {
        Profile::from_field(SpectralField::zeros(grid, Representation::Physical), true)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.field.grid()
    }

    pub fn is_zero(&self) -> bool {
        self.field.data().iter().all(|c| *c == ZERO)
    }

    /// `eps * phi`.
    pub fn scaled(&self, eps: f64) -> Profile {
        Profile { generator: self.generator.clone(), field: self.field.scale_real(eps), flags: self.flags }
    }
}

/// Norm ingredients of the smallness parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileNorms {
    pub s_reg: f64,
    /// Order `3 s + 7` of the top Sobolev norm.
    pub top_order: f64,
    pub h_top: f64,
    pub h_minus2: f64,
    pub b111: f64,
    pub x2_h1: f64,
    pub epsilon0: f64,
    pub threshold: f64,
    pub admissible: bool,
    /// The weight `|x|^2` sees the box boundary.
    pub wraparound_caveat: bool,
}

/// `H^{3s+7}`, `\dot H^{-2}`, `B^1_{1,1}` and `|| |x|^2 phi ||_{H^1}` (x from
/// the box center) and their sum `eps0`.
pub fn profile_norms(phi: &SpectralField, s_reg: f64, threshold: f64) -> Result<ProfileNorms> {
    let top_order = 3.0 * s_reg + 7.0;
    let h_minus2 = phi.sobolev_norm(-2.0, true)?;
    let h_top = phi.sobolev_norm(top_order, false)?;
    let b111 = lp::besov_b111(phi);
    let weighted = SpectralField::from_fn(phi.grid(), |x| Complex64::new(x[0] * x[0] + x[1] * x[1] + x[2] * x[2], 0.0))
        .mul(phi)?;
    let x2_h1 = weighted.sobolev_norm(1.0, false)?;
    let epsilon0 = h_top + h_minus2 + b111 + x2_h1;
    Ok(ProfileNorms {
        s_reg,
        top_order,
        h_top,
        h_minus2,
        b111,
        x2_h1,
        epsilon0,
        threshold,
        admissible: epsilon0 < threshold,
        wraparound_caveat: boundary_tail(&weighted) > 1e-6,
    })
}

/// Wrap-around horizon `t* = L / (2 xi_b)` (equivalently
/// `L^2 / (4 pi k_b)` in lattice units), with `xi_b` the largest `|xi|`
/// whose coefficient exceeds [`BANDWIDTH_THRESHOLD`] times the peak and `L`
/// the shortest box side.
pub fn wraparound_horizon(phi: &SpectralField) -> f64 {
    let f = phi.to_fourier();
    let peak = f.data().iter().map(|c| c.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return f64::INFINITY;
    }
    let g = f.grid();
    let mut xb: f64 = 0.0;
    for (idx, c) in f.data().iter().enumerate() {
        if c.norm() >= BANDWIDTH_THRESHOLD * peak {
            let xi = g.xi(idx);
            xb = xb.max((xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt());
        }
    }
    let l = g.box_length().iter().copied().fold(f64::INFINITY, f64::min);
    if xb == 0.0 {
        f64::INFINITY
    } else {
        l / (2.0 * xb)
    }
}

/// Default fit window `[2, min(T_n, t*)/2]`.
pub fn default_window(t_n: f64, t_star: f64) -> (f64, f64) {
    (2.0, 0.5 * t_n.min(t_star))
}

/// `z1(t) = e^{it Lap} phi`.
pub fn linear_profile_z1(phi: &Profile, t: f64) -> SpectralField {
    phi.field.free_propagate(t).into_physical()
}

/// Samples `(t, ||e^{it Lap} phi||_{L^inf})`.
pub fn linear_sup_decay(phi: &Profile, times: &[f64]) -> Vec<(f64, f64)> {
    times.iter().map(|&t| (t, linear_profile_z1(phi, t).lebesgue_norm(f64::INFINITY))).collect()
}

/// Dispersive ratio `||e^{it Lap} g||_{L^p} / (|t|^{d/p - d/2} ||g||_{L^{p'}})`
/// for `2 <= p <= inf`, one entry per time.
pub fn dispersive_ratios(g: &SpectralField, times: &[f64], p: f64) -> Result<Vec<(f64, f64)>> {
    if !(p >= 2.0) {
        return Err(EkError::DegenerateInput(format!("exponent p = {p} must be at least 2")));
    }
    let d = g.grid().dim() as f64;
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let dual = if p.is_infinite() { 1.0 } else { p / (p - 1.0) };
    let base = g.lebesgue_norm(dual);
    if base == 0.0 {
        return Err(EkError::DegenerateInput("zero datum".into()));
    }
    Ok(times
        .iter()
        .map(|&t| {
            let num = g.free_propagate(t).lebesgue_norm(p);
            (t, num / (t.abs().powf(d * inv_p - 0.5 * d) * base))
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Experiment plan

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Gauss-Legendre nodes per panel.
    pub order: usize,
    /// Largest panel width in time.
    pub panel_width: f64,
    /// Accepted relative change under node doubling.
    pub tolerance: f64,
    pub check_doubling: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { order: 16, panel_width: 0.5, tolerance: 1e-8, check_doubling: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub t_n: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub s_reg: f64,
    pub quadrature: QuadratureConfig,
    pub t_star: f64,
}

impl ExperimentPlan {
    pub fn new(t_n: Vec<f64>, t_grid: Vec<f64>, s_reg: f64, quadrature: QuadratureConfig, t_star: f64) -> Result<Self> {
        if t_n.is_empty() || t_n.iter().any(|&t| !(t >= 1.0)) || t_n.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EkError::DegenerateInput(format!("T_n sequence {t_n:?} must be increasing and >= 1")));
        }
        let top = t_n.last().copied().unwrap_or(1.0).min(t_star);
        if let Some(bad) = t_grid.iter().find(|&&t| !(t >= 1.0 && t <= top + 1e-12)) {
            return Err(EkError::DegenerateInput(format!("sample time {bad} outside [1, {top}]")));
        }
        if !(s_reg > 0.0) || quadrature.order == 0 || !(quadrature.panel_width > 0.0) {
            return Err(EkError::DegenerateInput("invalid regularity or quadrature settings".into()));
        }
        Ok(ExperimentPlan { t_n, t_grid, s_reg, quadrature, t_star })
    }

    /// Sample times for the run ending at `t_n`.
    pub fn times_for(&self, t_n: f64) -> Vec<f64> {
        self.t_grid.iter().copied().filter(|&t| t <= t_n + 1e-12).collect()
    }
}

/// Uniform grid `1, 1 + step, ..., up to last`.
pub fn uniform_times(first: f64, last: f64, step: f64) -> Vec<f64> {
    let n = ((last - first) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| first + step * i as f64).collect()
}

// ---------------------------------------------------------------------------
// Duhamel quadrature

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pm) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            let dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let (pn, pm) = if n == 1 { (z, 1.0) } else { (p1, p0) };
                let dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// Nodes and weights of the composite rule on `[a, b]`.
fn composite_nodes(a: f64, b: f64, q: &QuadratureConfig, panel_width: f64) -> Vec<(f64, f64)> {
    let len = b - a;
    if len <= 0.0 {
        return Vec::new();
    }
    let panels = (len / panel_width - 1e-9).ceil().max(1.0) as usize;
    let h = len / panels as f64;
    let (x, w) = gauss_legendre(q.order);
    let mut out = Vec::with_capacity(panels * q.order);
    for p in 0..panels {
        let lo = a + h * p as f64;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

/// Integrands of the second approximation at one time node.
struct NodeTerms {
    full: Buf,
    quasi: Buf,
    display: Option<Buf>,
}

fn node_terms(model: &CapillarityModel, k: &Kernel, z1hat: &[Complex64], display: bool) -> Result<NodeTerms> {
    let z = k.inverse(z1hat.to_vec());
    let grad = k.gradient_phys(z1hat);
    let lap = k.laplacian_phys(z1hat);
    let (lo, hi) = model.ell_interval();
    let (ca, cg) = (model.c_a(), model.c_g());
    let d = grad.len();
    let n = z.len();
    let mut full = Vec::with_capacity(n);
    let mut quasi = Vec::with_capacity(n);
    let mut disp = if display { Vec::with_capacity(n) } else { Vec::new() };
    for i in 0..n {
        let zi = z[i];
        if zi.re < lo || zi.re > hi {
            return Err(EkError::DensityRange { value: model.rho_of_ell_unchecked(zi.re), lo: model.interval().0, hi: model.interval().1 });
        }
        let (mut dot, mut gl2, mut gp2) = (0.0, 0.0, 0.0);
        let mut gz2 = ZERO;
        for g in grad.iter().map(|g| g[i]) {
            dot += g.re * g.im;
            gl2 += g.re * g.re;
            gp2 += g.im * g.im;
            gz2 += g * g;
        }
        let (a, gt) = model.atilde_gtilde(zi.re);
        let f = Complex64::new(-dot, 0.5 * gl2 - 0.5 * gp2 - gt) + I * a * lap[i];
        full.push(f);
        quasi.push(Complex64::new(cg * zi.norm_sqr() + ca * (gl2 + gp2), 0.0));
        if display {
            let zb = zi.conj();
            let n2 = I * 0.25 * (2.0 * gz2 - cg * (zi * zi + zb * zb + 2.0 * zi.norm_sqr()) + 2.0 * ca * (zi + zb) * lap[i]);
            let local = I * 0.25 * (-cg * zi * zi - cg * zb * zb + 2.0 * gz2 + 2.0 * ca * zi * lap[i]);
            disp.push(local + (f - n2));
        }
    }
    let mut full = k.forward(full);
    k.project(&mut full);
    let mut quasi = k.forward(quasi);
    k.project(&mut quasi);
    let display = if display {
        // (i/4) 2 c_a div(zbar grad z)
        let flux: Vec<Buf> = (0..d).map(|a| z.iter().zip(&grad[a]).map(|(z, g)| z.conj() * g).collect()).collect();
        let div = k.divergence_hat(flux);
        let mut out = k.forward(disp);
        out.iter_mut().zip(&div).for_each(|(o, dv)| *o += I * 0.5 * ca * dv);
        k.project(&mut out);
        Some(out)
    } else {
        None
    };
    Ok(NodeTerms { full, quasi, display })
}

fn apply_phase(k: &Kernel, v: &[Complex64], tau: f64) -> Buf {
    v.iter().zip(&k.k2).map(|(c, &k2)| c * Complex64::from_polar(1.0, -tau * k2)).collect()
}

struct Accumulated {
    full: Vec<Buf>,
    quasi: Vec<Buf>,
    display: Option<Vec<Buf>>,
    nodes: usize,
}

/// Interaction-picture integrals `G(t) = int_{T_n}^t e^{-is Lap} N(s) ds` at
/// each requested time, accumulated downward from `T_n`.
fn accumulate(
    model: &CapillarityModel,
    k: &Kernel,
    phi_hat: &[Complex64],
    t_n: f64,
    times: &[f64],
    q: &QuadratureConfig,
    panel_width: f64,
    display: bool,
) -> Result<Accumulated> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let n = k.len();
    let mut g_full = vec![ZERO; n];
    let mut g_quasi = vec![ZERO; n];
    let mut g_disp = vec![ZERO; if display { n } else { 0 }];
    let mut out_full = vec![Vec::new(); times.len()];
    let mut out_quasi = vec![Vec::new(); times.len()];
    let mut out_disp = vec![Vec::new(); times.len()];
    let mut upper = t_n;
    let mut nodes = 0;
    for idx in order {
        let t = times[idx];
        for (s, w) in composite_nodes(t, upper, q, panel_width) {
            let z1 = apply_phase(k, phi_hat, s);
            let terms = node_terms(model, k, &z1, display)?;
            nodes += 1;
            // G(t) = G(upper) - int_t^upper
            for i in 0..n {
                let back = Complex64::from_polar(w, s * k.k2[i]);
                g_full[i] -= back * terms.full[i];
                g_quasi[i] -= back * terms.quasi[i];
                if let Some(d) = &terms.display {
                    g_disp[i] -= back * d[i];
                }
            }
        }
        upper = upper.min(t);
        out_full[idx] = g_full.clone();
        out_quasi[idx] = g_quasi.clone();
        if display {
            out_disp[idx] = g_disp.clone();
        }
    }
    Ok(Accumulated { full: out_full, quasi: out_quasi, display: display.then_some(out_disp), nodes })
}

/// `z2`, `z22` (and optionally the displayed form of `z21`) on a set of
/// times in `[1, T_n]`.
#[derive(Debug, Clone)]
pub struct SecondApproximation {
    pub t_n: f64,
    pub times: Vec<f64>,
    pub z2: Vec<SpectralField>,
    pub z22: Vec<SpectralField>,
    pub z21_display: Option<Vec<SpectralField>>,
    /// Largest relative change of `z2` under node doubling.
    pub doubling_change: f64,
    pub converged: bool,
    pub nodes: usize,
}

impl SecondApproximation {
    pub fn at(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()))
    }

    /// `z21 = z2 - z22`.
    pub fn z21(&self, i: usize) -> SpectralField {
        self.z2[i].sub(&self.z22[i]).expect("shared grid")
    }
}

fn check_times(t_n: f64, times: &[f64]) -> Result<()> {
    if let Some(bad) = times.iter().find(|&&t| !(t >= 1.0 && t <= t_n)) {
        return Err(EkError::DegenerateInput(format!("time {bad} outside [1, {t_n}]")));
    }
    Ok(())
}

/// Evaluates `z2(t) = int_{T_n}^t e^{i(t-s) Lap} (N2 + N3)(z1(s)) ds` and
/// `z22(t) = -(i/2) int_{T_n}^t e^{i(t-s) Lap}(c_g |z1|^2 + c_a |grad z1|^2) ds`
/// by composite Gauss-Legendre quadrature with exact propagators at the
/// nodes. With `check_doubling`, the panel width is halved and the two
/// results must agree to the configured tolerance.
pub fn second_approximation(
    model: &CapillarityModel,
    phi: &Profile,
    t_n: f64,
    times: &[f64],
    q: &QuadratureConfig,
    with_display: bool,
) -> Result<SecondApproximation> {
    check_times(t_n, times)?;
    let grid = phi.grid().clone();
    let k = Kernel::new(&grid, true);
    let phi_hat = phi.field.to_fourier().into_data();
    let coarse = accumulate(model, &k, &phi_hat, t_n, times, q, q.panel_width, with_display)?;
    let (acc, change) = if q.check_doubling {
        let fine = accumulate(model, &k, &phi_hat, t_n, times, q, 0.5 * q.panel_width, with_display)?;
        let mut change: f64 = 0.0;
        for (a, b) in coarse.full.iter().zip(&fine.full) {
            let nb = crate::kernel::norm(b);
            let d = crate::kernel::distance(a, b);
            change = change.max(if nb == 0.0 { d } else { d / nb });
        }
        let nodes = coarse.nodes + fine.nodes;
        (Accumulated { nodes, ..fine }, change)
    } else {
        (coarse, 0.0)
    };
    let converged = change <= q.tolerance;
    if !converged {
        return Err(EkError::QuadratureNotConverged { rel_change: change });
    }
    let to_field = |hat: Buf, t: f64, scale: Complex64| -> SpectralField {
        let v: Buf = apply_phase(&k, &hat, t).into_iter().map(|c| c * scale).collect();
        SpectralField::from_data(&grid, v, Representation::Fourier).expect("length matches grid").into_physical()
    };
    let one = Complex64::new(1.0, 0.0);
    let z2 = acc.full.into_iter().zip(times).map(|(h, &t)| to_field(h, t, one)).collect();
    let z22 = acc.quasi.into_iter().zip(times).map(|(h, &t)| to_field(h, t, -0.5 * I)).collect();
    let z21_display = acc.display.map(|d| d.into_iter().zip(times).map(|(h, &t)| to_field(h, t, one)).collect());
    Ok(SecondApproximation {
        t_n,
        times: times.to_vec(),
        z2,
        z22,
        z21_display,
        doubling_change: change,
        converged,
        nodes: acc.nodes,
    })
}

/// `z2(t)` at a single time.
pub fn duhamel_z2(model: &CapillarityModel, phi: &Profile, t_n: f64, t: f64, q: &QuadratureConfig) -> Result<SpectralField> {
    Ok(second_approximation(model, phi, t_n, &[t], q, false)?.z2.remove(0))
}

/// `z22(t)` at a single time.
pub fn z22_part(model: &CapillarityModel, phi: &Profile, t_n: f64, t: f64, q: &QuadratureConfig) -> Result<SpectralField> {
    Ok(second_approximation(model, phi, t_n, &[t], q, false)?.z22.remove(0))
}

/// `Re z22(t)` through `(1/2) Im int_{T_n}^t (e^{i(t-s) Lap} - 1) R(s) ds`
/// with `R = c_g |z1|^2 + c_a |grad z1|^2` real, propagating each node
/// separately.
pub fn re_z22_minus_identity(model: &CapillarityModel, phi: &Profile, t_n: f64, t: f64, q: &QuadratureConfig) -> Result<SpectralField> {
    check_times(t_n, &[t])?;
    let grid = phi.grid().clone();
    let k = Kernel::new(&grid, true);
    let phi_hat = phi.field.to_fourier().into_data();
    let mut acc = vec![ZERO; k.len()];
    for (s, w) in composite_nodes(t, t_n, q, q.panel_width) {
        let r_hat = node_terms(model, &k, &apply_phase(&k, &phi_hat, s), false)?.quasi;
        let r = k.inverse(r_hat.clone());
        let moved = k.inverse(apply_phase(&k, &r_hat, t - s));
        // int_{T_n}^t = - int_t^{T_n}
        acc.iter_mut().zip(moved.iter().zip(&r)).for_each(|(a, (m, r))| *a -= (m - r) * w);
    }
    let re: Vec<f64> = acc.iter().map(|c| 0.5 * c.im).collect();
    SpectralField::from_real(&grid, &re)
}

// ---------------------------------------------------------------------------
// Final-data problem

/// Backward solution from `z(T_n) = z1(T_n)` sampled on `[1, T_n]`.
#[derive(Debug, Clone)]
pub struct FinalDataRun {
    pub t_n: f64,
    /// Increasing sample times, ending at `T_n`.
    pub times: Vec<f64>,
    pub z: Vec<SpectralField>,
    pub monitor: EnergyReport,
    pub rejections: u32,
}

impl FinalDataRun {
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()))
    }

    /// Primitive variables of sample `i`.
    pub fn fluid(&self, model: &CapillarityModel, i: usize) -> Result<FluidState> {
        madelung::from_complex(model, &MadelungState::new(self.z[i].clone()))
    }
}

/// Sets `z(T_n) = e^{i T_n Lap} phi` and integrates backward to `t = 1`,
/// recording `t_grid`; every record is mapped to primitive variables and the
/// continuation monitor must stay clean.
pub fn final_data_solve(
    model: &CapillarityModel,
    config: &SolverConfig,
    phi: &Profile,
    t_n: f64,
    t_grid: &[f64],
) -> Result<FinalDataRun> {
    if !(t_n >= 1.0) {
        return Err(EkError::DegenerateInput(format!("T_n = {t_n} must be >= 1")));
    }
    check_times(t_n, t_grid)?;
    let cfg = SolverConfig { direction: Direction::Backward, ..config.clone() };
    let solver = ZSolver::new(model, &cfg, phi.grid())?;
    let z_final = linear_profile_z1(phi, t_n);
    let traj = solver.evolve(&z_final, t_n, 1.0, t_grid)?;
    let mut rows: Vec<(f64, SpectralField)> = traj.times.into_iter().zip(traj.states).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut times = Vec::with_capacity(rows.len());
    let mut z = Vec::with_capacity(rows.len());
    for (t, f) in rows {
        times.push(t);
        z.push(f);
    }
    let monitor = energy::monitor_stream(model, &times, |i| madelung::from_complex(model, &MadelungState::new(z[i].clone())), None, energy::DEFAULT_INTEGRAL_CEILING)?;
    if !monitor.continuation_ok {
        return Err(EkError::BlowUp {
            t: times[0],
            reason: format!(
                "continuation criterion failed (range ok: {}, integral {:.3e})",
                monitor.range_ok,
                monitor.total_integral()
            ),
        });
    }
    Ok(FinalDataRun { t_n, times, z, monitor, rejections: traj.rejections })
}

// ---------------------------------------------------------------------------
// Decay series

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS misfit of the logarithms.
    pub residual: f64,
    pub samples: usize,
}

/// Least squares of `log value` against `log t` over the samples in
/// `window`.
pub fn decay_fit(samples: &[(f64, f64)], window: (f64, f64)) -> Result<Fit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(t, _)| *t >= window.0 - 1e-12 && *t <= window.1 + 1e-12)
        .copied()
        .collect();
    let usable: Vec<(f64, f64)> = pts.iter().filter(|(t, v)| *t > 0.0 && *v > 0.0).map(|(t, v)| (t.ln(), v.ln())).collect();
    if usable.len() < 5 || usable.len() != pts.len() {
        return Err(EkError::InsufficientSamples { got: usable.len(), need: 5 });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(EkError::InsufficientSamples { got: 1, need: 5 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (usable.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Fit { slope, intercept, residual, samples: usable.len() })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecaySeries {
    pub label: String,
    pub samples: Vec<(f64, f64)>,
    pub window: (f64, f64),
    pub t_star: f64,
    pub fit: Option<Fit>,
}

impl DecaySeries {
    pub fn new(label: &str, samples: Vec<(f64, f64)>, window: (f64, f64), t_star: f64) -> Self {
        let fit = decay_fit(&samples, window).ok();
        DecaySeries { label: label.to_string(), samples, window, t_star, fit }
    }

    pub fn in_window(&self) -> impl Iterator<Item = &(f64, f64)> {
        let (a, b) = self.window;
        self.samples.iter().filter(move |(t, _)| *t >= a - 1e-12 && *t <= b + 1e-12)
    }

    /// `max / min` of the values inside the window.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self.in_window().fold((f64::INFINITY, 0.0f64), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v)));
        hi / lo
    }

    pub fn sup(&self) -> f64 {
        self.samples.iter().map(|s| s.1).fold(0.0, f64::max)
    }

    /// The series multiplied by `t^p`.
    pub fn weighted(&self, label: &str, p: f64) -> DecaySeries {
        DecaySeries::new(label, self.samples.iter().map(|&(t, v)| (t, v * t.powf(p))).collect(), self.window, self.t_star)
    }

    pub fn csv(&self) -> String {
        let mut out = format!("t,{}\n", self.label);
        for (t, v) in &self.samples {
            out.push_str(&format!("{t},{v:e}\n"));
        }
        out
    }
}

/// `||rho - 1 - delta Re z1||_{L^2}` and `||u - Im grad z1||_{L^2}` along a
/// run.
pub fn scattering_error(model: &CapillarityModel, run: &FinalDataRun, phi: &Profile) -> Result<(DecaySeries, DecaySeries)> {
    let t_star = wraparound_horizon(&phi.field);
    let window = default_window(run.t_n, t_star);
    let delta = model.delta();
    let mut rho_err = Vec::with_capacity(run.times.len());
    let mut u_err = Vec::with_capacity(run.times.len());
    for (i, t) in run.times.iter().enumerate() {
        let state = run.fluid(model, i)?;
        let z1 = linear_profile_z1(phi, *t);
        let lead = z1.map(|c| Complex64::new(1.0 + delta * c.re, 0.0));
        rho_err.push((*t, state.rho.sub(&lead)?.l2_norm()));
        let gz = z1.gradient();
        let mut acc = 0.0;
        for (u, g) in state.u.iter().zip(&gz) {
            acc += u.sub(&g.imag_part())?.l2_norm().powi(2);
        }
        u_err.push((*t, acc.sqrt()));
    }
    Ok((
        DecaySeries::new("rho_error_l2", rho_err, window, t_star),
        DecaySeries::new("u_error_l2", u_err, window, t_star),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct Bootstrap {
    /// `t^{3/2} ||z - z1 - z2||_{H^{s_reg + 1}}`.
    pub series: DecaySeries,
    /// Running supremum over the samples.
    pub z_sup: f64,
}

/// Bootstrap quantity along a run; `second` must contain every run time.
/// The additive constant of `psi` is removed from the remainder.
pub fn bootstrap_z(run: &FinalDataRun, second: &SecondApproximation, phi: &Profile, s_reg: f64) -> Result<Bootstrap> {
    let t_star = wraparound_horizon(&phi.field);
    let mut samples = Vec::with_capacity(run.times.len());
    for (t, z) in run.times.iter().zip(&run.z) {
        let i = second
            .at(*t)
            .ok_or_else(|| EkError::DegenerateInput(format!("second approximation missing time {t}")))?;
        let rem = z.sub(&linear_profile_z1(phi, *t))?.sub(&second.z2[i])?;
        let norm = madelung::fix_potential_constant(&rem).sobolev_norm(s_reg + 1.0, false)?;
        samples.push((*t, t.powf(1.5) * norm));
    }
    let z_sup = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    Ok(Bootstrap {
        series: DecaySeries::new("bootstrap", samples, default_window(run.t_n, t_star), t_star),
        z_sup,
    })
}

/// `max_t ||z^{(b)} - z^{(a)}||_{H^{s_reg+1}}` over the common samples in
/// `window` for each consecutive pair of runs, potential constant removed.
pub fn tn_consistency(runs: &[FinalDataRun], window: (f64, f64), s_reg: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for pair in runs.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let mut worst: f64 = 0.0;
        let mut common = 0;
        for (i, t) in a.times.iter().enumerate() {
            if *t < window.0 - 1e-12 || *t > window.1 + 1e-12 {
                continue;
            }
            if let Some(j) = b.index_of(*t) {
                let d = madelung::fix_potential_constant(&b.z[j].sub(&a.z[i])?).sobolev_norm(s_reg + 1.0, false)?;
                worst = worst.max(d);
                common += 1;
            }
        }
        if common == 0 {
            return Err(EkError::InsufficientSamples { got: 0, need: 1 });
        }
        out.push(worst);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Vector field

#[derive(Debug, Clone)]
pub struct VectorField {
    pub components: Vec<SpectralField>,
    /// Boundary tails of the pulled-back field exceed `1e-6`.
    pub wraparound_warning: bool,
}

/// `J(t) f = e^{it Lap} (x . e^{-it Lap} f)` componentwise, `x` from the box
/// center.
pub fn vector_field_j(f: &SpectralField, t: f64) -> VectorField {
    let back = f.free_propagate(-t).into_physical();
    let grid = f.grid();
    let components = (0..grid.dim())
        .map(|a| {
            let data = back.data().iter().enumerate().map(|(i, c)| c * grid.centered_position(i)[a]).collect();
            SpectralField::from_data(grid, data, Representation::Physical)
                .expect("length matches grid")
                .free_propagate(t)
                .into_physical()
        })
        .collect();
    VectorField { components, wraparound_warning: boundary_tail(&back) > 1e-6 }
}

/// `(x + 2 i t grad) f`.
pub fn vector_field_j_direct(f: &SpectralField, t: f64) -> Vec<SpectralField> {
    let grid = f.grid();
    let p = f.to_physical();
    let grad = p.gradient();
    (0..grid.dim())
        .map(|a| {
            let g = grad[a].to_physical();
            let data = p
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(i, (c, d))| c * grid.centered_position(i)[a] + 2.0 * I * t * d)
                .collect();
            SpectralField::from_data(grid, data, Representation::Physical).expect("length matches grid")
        })
        .collect()
}

/// Measured constant `C` in `(1/(it))(fbar J g - g conj(J f)) = C grad(fbar g)`
/// (least squares over all components), for fields at time `t`.
pub fn j_identity_constant(f: &SpectralField, g: &SpectralField, t: f64) -> Result<Complex64> {
    let jf = vector_field_j(f, t).components;
    let jg = vector_field_j(g, t).components;
    let fb = f.conj();
    let prod = fb.mul(g)?;
    let grad = prod.gradient();
    let (mut num, mut den) = (ZERO, 0.0);
    for a in 0..f.grid().dim() {
        let lhs = fb.mul(&jg[a])?.sub(&g.mul(&jf[a].conj())?)?.scale(Complex64::new(0.0, -1.0 / t));
        let rhs = grad[a].to_physical();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            num += r.conj() * l;
            den += r.norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(EkError::DegenerateInput("grad(fbar g) vanishes".into()));
    }
    Ok(num / den)
}
