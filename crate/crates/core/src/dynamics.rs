//! Integrators for the primitive Euler-Korteweg system and for the complex
//! form `d_t z = i Lap z + F(z)`, with the nonlinearity split
//! `F = N2 + N3`, the Korteweg stress and the Hamiltonian.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{EkError, Result};
use crate::field::{Representation, SpectralField};
use crate::grid::Grid;
use crate::kernel::{self, Buf, Kernel};
use crate::madelung::{self, FluidState, MadelungState};
use crate::model::CapillarityModel;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `e^{i Lap h/2}`, classical RK4 on `F`, `e^{i Lap h/2}`.
    StrangSplitRk4,
    /// Cox-Matthews exponential RK4 with the free flow as linear part.
    EtdRk4,
    /// Classical RK4 on the primitive variables.
    Rk4Pseudospectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Which part of `F` the complex-form integrator keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearMode {
    Full,
    QuadraticOnly,
    LinearOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Step magnitude; the sign comes from `direction`.
    pub dt: f64,
    pub scheme: Scheme,
    pub dealias: bool,
    pub direction: Direction,
    pub max_step_rejections: u32,
    /// Relative one-step defect (`h` against two `h/2` steps) above which a
    /// step is halved; `None` disables the comparison.
    pub defect_tolerance: Option<f64>,
    /// Record every `n`-th step in addition to requested times (0: never).
    pub snapshot_every: usize,
    pub nonlinearity: NonlinearMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-3,
            scheme: Scheme::StrangSplitRk4,
            dealias: true,
            direction: Direction::Forward,
            max_step_rejections: 8,
            defect_tolerance: Some(1e-8),
            snapshot_every: 0,
            nonlinearity: NonlinearMode::Full,
        }
    }
}

/// Upper bound on the quasi-linear coefficient `|atilde(ell)|` assumed by
/// the split and exponential schemes.
pub const QUASILINEAR_BOUND: f64 = 1e-2;
const SAFETY: f64 = 0.9;

/// Largest stable step. The explicit schemes are bounded by the RK4 stability
/// interval `2 sqrt 2` on the imaginary axis applied to the fastest
/// frequency: `sqrt(kappa(1)) |xi|^2_max` for the primitive system, and
/// `QUASILINEAR_BOUND |xi|^2_max` for the split/exponential complex form,
/// whose dispersive part is exact.
pub fn stability_dt(model: &CapillarityModel, grid: &Grid, scheme: Scheme, dealias: bool) -> f64 {
    let k2 = if dealias {
        grid.dealiased_max_xi_squared()
    } else {
        let m = grid.max_wavenumber();
        m * m
    };
    let rate = match scheme {
        Scheme::Rk4Pseudospectral => model.kappa(1.0).sqrt() * k2,
        Scheme::StrangSplitRk4 | Scheme::EtdRk4 => QUASILINEAR_BOUND * k2,
    };
    SAFETY * 2.0 * 2f64.sqrt() / rate
}

// ---------------------------------------------------------------------------
// Pointwise algebra

struct Derivs {
    z: Buf,
    grad: Vec<Buf>,
    lap: Buf,
}

fn derivs(z: &SpectralField) -> Derivs {
    let k = Kernel::new(z.grid(), false);
    let hat = z.to_fourier().into_data();
    Derivs { z: k.inverse(hat.clone()), grad: k.gradient_phys(&hat), lap: k.laplacian_phys(&hat) }
}

fn check_ell(model: &CapillarityModel, z: &[Complex64], t: f64) -> Result<()> {
    let (lo, hi) = model.ell_interval();
    for c in z {
        if !c.re.is_finite() || !c.im.is_finite() {
            return Err(EkError::BlowUp { t, reason: "non-finite field value".into() });
        }
        if c.re < lo || c.re > hi {
            let rho = model.rho_of_ell_unchecked(c.re);
            return Err(EkError::StepRejected {
                t,
                reason: format!("ell = {:.4} (rho = {rho:.4}) leaves L(J) = [{lo:.4}, {hi:.4}]", c.re),
            });
        }
    }
    Ok(())
}

#[inline]
fn f_point(model: &CapillarityModel, z: Complex64, g: &[Complex64], lap: Complex64) -> Complex64 {
    let (mut dot, mut gl2, mut gp2) = (0.0, 0.0, 0.0);
    for c in g {
        dot += c.re * c.im;
        gl2 += c.re * c.re;
        gp2 += c.im * c.im;
    }
    let (a, gt) = model.atilde_gtilde(z.re);
    Complex64::new(-dot, 0.5 * gl2 - 0.5 * gp2 - gt) + I * a * lap
}

#[inline]
fn n2_point(ca: f64, cg: f64, z: Complex64, g: &[Complex64], lap: Complex64) -> Complex64 {
    let gz2: Complex64 = g.iter().map(|c| c * c).sum();
    let zb = z.conj();
    let inner = 2.0 * gz2 - cg * (z * z + zb * zb + 2.0 * z.norm_sqr()) + 2.0 * ca * (z * lap + zb * lap);
    I * 0.25 * inner
}

fn pointwise(d: &Derivs, f: impl Fn(Complex64, &[Complex64], Complex64) -> Complex64) -> Buf {
    let dim = d.grad.len();
    let mut g = vec![ZERO; dim];
    (0..d.z.len())
        .map(|i| {
            for a in 0..dim {
                g[a] = d.grad[a][i];
            }
            f(d.z[i], &g, d.lap[i])
        })
        .collect()
}

fn physical(grid: &Arc<Grid>, data: Buf) -> SpectralField {
    SpectralField::from_data(grid, data, Representation::Physical).expect("length matches grid")
}

/// `F(z) = -grad psi . grad ell + i(|grad ell|^2/2 - |grad psi|^2/2 -
/// gtilde(ell)) + i atilde(ell) Lap z`, pointwise at the nodes.
pub fn full_nonlinearity(model: &CapillarityModel, z: &SpectralField) -> Result<SpectralField> {
    let d = derivs(z);
    check_ell(model, &d.z, f64::NAN)?;
    Ok(physical(z.grid(), pointwise(&d, |z, g, l| f_point(model, z, g, l))))
}

/// Right-hand sides `(d_t ell, d_t psi)` of the two scalar equations,
/// evaluated directly in the real variables.
pub fn scalar_equations(model: &CapillarityModel, z: &SpectralField) -> Result<(SpectralField, SpectralField)> {
    let ell = z.real_part();
    let psi = z.imag_part();
    let gl = ell.gradient();
    let gp = psi.gradient();
    let ll = ell.laplacian().into_physical();
    let lp = psi.laplacian().into_physical();
    let (lo, hi) = model.ell_interval();
    let n = z.grid().len();
    let mut de = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    for i in 0..n {
        let e = ell.data()[i].re;
        if e < lo || e > hi {
            return Err(EkError::DensityRange {
                value: model.rho_of_ell_unchecked(e),
                lo: model.interval().0,
                hi: model.interval().1,
            });
        }
        let dot: f64 = (0..gl.len()).map(|a| gl[a].data()[i].re * gp[a].data()[i].re).sum();
        let gl2: f64 = gl.iter().map(|f| f.data()[i].re.powi(2)).sum();
        let gp2: f64 = gp.iter().map(|f| f.data()[i].re.powi(2)).sum();
        let a = model.atilde(e);
        let g = model.gtilde(e);
        de.push(-lp.data()[i].re - dot - a * lp.data()[i].re);
        dp.push(ll.data()[i].re + 0.5 * gl2 - 0.5 * gp2 + a * ll.data()[i].re - g);
    }
    Ok((SpectralField::from_real(z.grid(), &de)?, SpectralField::from_real(z.grid(), &dp)?))
}

/// `N2(z) = (i/4)(2 (grad z)^2 - c_g (z^2 + zbar^2 + 2|z|^2) + 2 c_a (z Lap z
/// + zbar Lap z))`, with `c_a = atilde'(0)`, `c_g = gtilde''(0)/2`.
pub fn quadratic_part(model: &CapillarityModel, z: &SpectralField) -> SpectralField {
    quadratic_part_with(model.c_a(), model.c_g(), z)
}

/// [`quadratic_part`] with explicit coefficients.
pub fn quadratic_part_with(ca: f64, cg: f64, z: &SpectralField) -> SpectralField {
    let d = derivs(z);
    physical(z.grid(), pointwise(&d, |z, g, l| n2_point(ca, cg, z, g, l)))
}

/// Real-variable form of `N2`: `-grad psi . grad ell + i(|grad ell|^2/2 -
/// |grad psi|^2/2 - c_g ell^2 + c_a ell Lap z)`.
pub fn quadratic_part_real_form(ca: f64, cg: f64, z: &SpectralField) -> SpectralField {
    let d = derivs(z);
    physical(
        z.grid(),
        pointwise(&d, |z, g, l| {
            let (mut dot, mut gl2, mut gp2) = (0.0, 0.0, 0.0);
            for c in g {
                dot += c.re * c.im;
                gl2 += c.re * c.re;
                gp2 += c.im * c.im;
            }
            Complex64::new(-dot, 0.5 * gl2 - 0.5 * gp2 - cg * z.re * z.re) + I * ca * z.re * l
        }),
    )
}

/// `N3 = F - N2`.
pub fn cubic_remainder(model: &CapillarityModel, z: &SpectralField) -> Result<SpectralField> {
    let d = derivs(z);
    check_ell(model, &d.z, f64::NAN)?;
    let (ca, cg) = (model.c_a(), model.c_g());
    Ok(physical(z.grid(), pointwise(&d, |z, g, l| f_point(model, z, g, l) - n2_point(ca, cg, z, g, l))))
}

/// `div K = rho grad(kappa Lap rho + kappa'|grad rho|^2/2)`, dealiased.
pub fn korteweg_div_k(model: &CapillarityModel, rho: &SpectralField) -> Result<Vec<SpectralField>> {
    let grid = rho.grid().clone();
    let k = Kernel::new(&grid, true);
    let mut hat = rho.to_fourier().into_data();
    k.project(&mut hat);
    let r = k.inverse(hat.clone());
    let gr = k.gradient_phys(&hat);
    let lr = k.laplacian_phys(&hat);
    for c in &r {
        model.check_density(c.re)?;
    }
    let q: Buf = (0..r.len())
        .map(|i| {
            let rho = r[i].re;
            let g2: f64 = gr.iter().map(|g| g[i].re * g[i].re).sum();
            Complex64::new(model.kappa(rho) * lr[i].re + 0.5 * model.kappa_prime(rho) * g2, 0.0)
        })
        .collect();
    let mut qh = k.forward(q);
    k.project(&mut qh);
    let mut out = Vec::with_capacity(grid.dim());
    for a in 0..grid.dim() {
        let dq = k.partial_phys(&qh, a);
        let prod: Buf = dq.iter().zip(&r).map(|(d, r)| Complex64::new(d.re * r.re, 0.0)).collect();
        let mut ph = k.forward(prod);
        k.project(&mut ph);
        out.push(SpectralField::from_data(&grid, ph, Representation::Fourier)?.into_physical().real_part());
    }
    Ok(out)
}

/// `E = int rho|u|^2/2 + W(rho) + kappa(rho)|grad rho|^2/2`.
pub fn hamiltonian(model: &CapillarityModel, state: &FluidState) -> Result<f64> {
    let grid = state.grid();
    let rho = state.rho.to_physical();
    let gr = rho.gradient();
    let u: Vec<SpectralField> = state.u.iter().map(|c| c.to_physical()).collect();
    let gr: Vec<SpectralField> = gr.into_iter().map(|c| c.into_physical()).collect();
    let mut acc = 0.0;
    for i in 0..grid.len() {
        let r = rho.data()[i].re;
        model.check_density(r)?;
        let u2: f64 = u.iter().map(|c| c.data()[i].re.powi(2)).sum();
        let g2: f64 = gr.iter().map(|c| c.data()[i].re.powi(2)).sum();
        acc += 0.5 * r * u2 + model.w_of_rho(r) + 0.5 * model.kappa(r) * g2;
    }
    Ok(acc * grid.cell_volume())
}

// ---------------------------------------------------------------------------
// Time marching

/// Recorded samples of a run in time order.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub rejections: u32,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State at a recorded time (exact match up to `1e-9`).
    pub fn at(&self, t: f64) -> Option<&S> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs())).map(|i| &self.states[i])
    }
}

trait Stepper {
    fn step(&self, s: &[Buf], t: f64, h: f64) -> Result<Vec<Buf>>;
}

fn rel_defect(a: &[Buf], b: &[Buf]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| kernel::distance(x, y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| kernel::norm(y).powi(2)).sum::<f64>().sqrt();
    if n == 0.0 {
        d
    } else {
        d / n
    }
}

fn advance<St: Stepper>(st: &St, cfg: &SolverConfig, s: &[Buf], t: f64, h: f64, depth: u32, rej: &mut u32) -> Result<Vec<Buf>> {
    let Some(tol) = cfg.defect_tolerance else {
        return st.step(s, t, h);
    };
    let full = st.step(s, t, h)?;
    let half = st.step(s, t, 0.5 * h)?;
    let two = st.step(&half, t + 0.5 * h, 0.5 * h)?;
    let defect = rel_defect(&full, &two);
    if defect <= tol {
        return Ok(two);
    }
    *rej += 1;
    if depth >= cfg.max_step_rejections {
        return Err(EkError::StepRejected {
            t,
            reason: format!("one-step defect {defect:.3e} above {tol:.1e} after {depth} halvings"),
        });
    }
    let mid = advance(st, cfg, s, t, 0.5 * h, depth + 1, rej)?;
    advance(st, cfg, &mid, t + 0.5 * h, 0.5 * h, depth + 1, rej)
}

fn march<St: Stepper>(
    st: &St,
    cfg: &SolverConfig,
    s0: Vec<Buf>,
    t0: f64,
    t1: f64,
    record: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<Buf>>, u32)> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(EkError::DegenerateInput(format!("time step {} must be positive", cfg.dt)));
    }
    let sign = match cfg.direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    if (t1 - t0) * sign < 0.0 {
        return Err(EkError::DegenerateInput(format!(
            "direction {:?} cannot integrate from {t0} to {t1}",
            cfg.direction
        )));
    }
    let span = (t1 - t0).abs();
    let mut targets: Vec<f64> = record.iter().copied().filter(|&r| (r - t0) * sign > 0.0 && (t1 - r) * sign > 0.0).collect();
    targets.sort_by(|a, b| (a * sign).total_cmp(&(b * sign)));
    targets.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    targets.push(t1);

    let mut times = vec![t0];
    let mut states = vec![s0.clone()];
    let mut rej = 0;
    let mut s = s0;
    let mut t = t0;
    let mut count = 0usize;
    if span == 0.0 {
        return Ok((times, states, rej));
    }
    for target in targets {
        let dist = (target - t).abs();
        let n = ((dist / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
        let h = (target - t) / n as f64;
        for i in 0..n {
            s = advance(st, cfg, &s, t, h, 0, &mut rej)?;
            t = if i + 1 == n { target } else { t + h };
            count += 1;
            if cfg.snapshot_every > 0 && count % cfg.snapshot_every == 0 && i + 1 != n {
                times.push(t);
                states.push(s.clone());
            }
        }
        times.push(t);
        states.push(s.clone());
    }
    Ok((times, states, rej))
}

struct StepCoefficients {
    e: Buf,
    e2: Buf,
    q: Buf,
    f1: Buf,
    f2: Buf,
    f3: Buf,
}

/// Integrator for `d_t z = i Lap z + F(z)`.
pub struct ZSolver<'m> {
    model: &'m CapillarityModel,
    config: SolverConfig,
    kernel: Kernel,
    coefficients: RefCell<HashMap<u64, Arc<StepCoefficients>>>,
}

impl<'m> ZSolver<'m> {
    pub fn new(model: &'m CapillarityModel, config: &SolverConfig, grid: &Arc<Grid>) -> Result<Self> {
        if config.scheme == Scheme::Rk4Pseudospectral {
            return Err(EkError::DegenerateInput("rk4_pseudospectral integrates the primitive system".into()));
        }
        Ok(ZSolver {
            model,
            config: config.clone(),
            kernel: Kernel::new(grid, config.dealias),
            coefficients: RefCell::new(HashMap::new()),
        })
    }

    fn coefficients(&self, h: f64) -> Arc<StepCoefficients> {
        let key = h.to_bits();
        if let Some(c) = self.coefficients.borrow().get(&key) {
            return c.clone();
        }
        let c = Arc::new(self.build_coefficients(h));
        let mut cache = self.coefficients.borrow_mut();
        if cache.len() > 16 {
            cache.clear();
        }
        cache.insert(key, c.clone());
        c
    }

    fn build_coefficients(&self, h: f64) -> StepCoefficients {
        const M: usize = 32;
        let roots: Vec<Complex64> = (0..M).map(|j| Complex64::from_polar(1.0, PI * (j as f64 + 0.5) * 2.0 / M as f64)).collect();
        let etd = self.config.scheme == Scheme::EtdRk4;
        let mut memo: HashMap<u64, [Complex64; 6]> = HashMap::new();
        let n = self.kernel.len();
        let mut out = StepCoefficients {
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
        };
        for &k2 in &self.kernel.k2 {
            let c = *memo.entry(k2.to_bits()).or_insert_with(|| {
                let lh = Complex64::new(0.0, -k2 * h);
                let e = lh.exp();
                let e2 = (lh * 0.5).exp();
                if !etd {
                    return [e, e2, ZERO, ZERO, ZERO, ZERO];
                }
                let (mut q, mut f1, mut f2, mut f3) = (ZERO, ZERO, ZERO, ZERO);
                for r in &roots {
                    let z = lh + r;
                    let ez = z.exp();
                    let z3 = z * z * z;
                    q += ((z * 0.5).exp() - 1.0) / z;
                    f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                    f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                    f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
                }
                let s = h / M as f64;
                [e, e2, q * s, f1 * s, f2 * s, f3 * s]
            });
            out.e.push(c[0]);
            out.e2.push(c[1]);
            out.q.push(c[2]);
            out.f1.push(c[3]);
            out.f2.push(c[4]);
            out.f3.push(c[5]);
        }
        out
    }

    /// Dealiased Fourier coefficients of the retained nonlinearity.
    fn nonlinear_hat(&self, zhat: &[Complex64], t: f64) -> Result<Buf> {
        let k = &self.kernel;
        if self.config.nonlinearity == NonlinearMode::LinearOnly {
            return Ok(vec![ZERO; k.len()]);
        }
        let d = Derivs { z: k.inverse(zhat.to_vec()), grad: k.gradient_phys(zhat), lap: k.laplacian_phys(zhat) };
        let f = match self.config.nonlinearity {
            NonlinearMode::Full => {
                check_ell(self.model, &d.z, t)?;
                pointwise(&d, |z, g, l| f_point(self.model, z, g, l))
            }
            _ => {
                for c in &d.z {
                    if !c.re.is_finite() || !c.im.is_finite() {
                        return Err(EkError::BlowUp { t, reason: "non-finite field value".into() });
                    }
                }
                let (ca, cg) = (self.model.c_a(), self.model.c_g());
                pointwise(&d, |z, g, l| n2_point(ca, cg, z, g, l))
            }
        };
        let mut fh = k.forward(f);
        k.project(&mut fh);
        Ok(fh)
    }

    fn step_hat(&self, u: &[Complex64], t: f64, h: f64) -> Result<Buf> {
        let c = self.coefficients(h);
        let mul = |a: &[Complex64], b: &[Complex64]| -> Buf { a.iter().zip(b).map(|(x, y)| x * y).collect() };
        match self.config.scheme {
            Scheme::StrangSplitRk4 => {
                let v = mul(u, &c.e2);
                let k1 = self.nonlinear_hat(&v, t)?;
                let k2 = self.nonlinear_hat(&kernel::combine(&v, &[(0.5 * h, &k1)]), t)?;
                let k3 = self.nonlinear_hat(&kernel::combine(&v, &[(0.5 * h, &k2)]), t)?;
                let k4 = self.nonlinear_hat(&kernel::combine(&v, &[(h, &k3)]), t)?;
                let w = kernel::combine(&v, &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)]);
                Ok(mul(&w, &c.e2))
            }
            Scheme::EtdRk4 => {
                let nu = self.nonlinear_hat(u, t)?;
                let eu = mul(u, &c.e2);
                let a: Buf = (0..u.len()).map(|i| eu[i] + c.q[i] * nu[i]).collect();
                let na = self.nonlinear_hat(&a, t + 0.5 * h)?;
                let b: Buf = (0..u.len()).map(|i| eu[i] + c.q[i] * na[i]).collect();
                let nb = self.nonlinear_hat(&b, t + 0.5 * h)?;
                let cc: Buf = (0..u.len()).map(|i| c.e2[i] * a[i] + c.q[i] * (2.0 * nb[i] - nu[i])).collect();
                let nc = self.nonlinear_hat(&cc, t + h)?;
                Ok((0..u.len())
                    .map(|i| c.e[i] * u[i] + c.f1[i] * nu[i] + 2.0 * c.f2[i] * (na[i] + nb[i]) + c.f3[i] * nc[i])
                    .collect())
            }
            Scheme::Rk4Pseudospectral => unreachable!("rejected at construction"),
        }
    }

    fn prepare(&self, z: &SpectralField) -> Result<Buf> {
        if !z.grid().same_as(&self.kernel.grid) {
            return Err(EkError::GridMismatch);
        }
        let mut hat = z.to_fourier().into_data();
        self.kernel.project(&mut hat);
        Ok(hat)
    }

    fn field(&self, hat: Buf) -> SpectralField {
        SpectralField::from_data(&self.kernel.grid, hat, Representation::Fourier).expect("length matches grid").into_physical()
    }

    /// One step of signed size `h` from time `t`.
    pub fn step(&self, z: &SpectralField, t: f64, h: f64) -> Result<SpectralField> {
        let hat = self.prepare(z)?;
        let mut rej = 0;
        let out = advance(self, &self.config, &[hat], t, h, 0, &mut rej)?;
        Ok(self.field(out.into_iter().next().expect("one component")))
    }

    /// Integrates from `t0` to `t1`, landing exactly on every requested time
    /// inside the interval; the endpoints are always recorded.
    pub fn evolve(&self, z0: &SpectralField, t0: f64, t1: f64, record: &[f64]) -> Result<Trajectory<SpectralField>> {
        let hat = self.prepare(z0)?;
        let (times, states, rejections) = march(self, &self.config, vec![hat], t0, t1, record)?;
        Ok(Trajectory {
            times,
            states: states.into_iter().map(|mut s| self.field(s.remove(0))).collect(),
            rejections,
        })
    }
}

impl Stepper for ZSolver<'_> {
    fn step(&self, s: &[Buf], t: f64, h: f64) -> Result<Vec<Buf>> {
        Ok(vec![self.step_hat(&s[0], t, h)?])
    }
}

/// One step of the complex form.
pub fn step_z(model: &CapillarityModel, config: &SolverConfig, z: &SpectralField, t: f64) -> Result<SpectralField> {
    let sign = if config.direction == Direction::Forward { 1.0 } else { -1.0 };
    ZSolver::new(model, config, z.grid())?.step(z, t, sign * config.dt)
}

/// Complex-form trajectory from `t0` to `t1`.
pub fn evolve_z(
    model: &CapillarityModel,
    config: &SolverConfig,
    z0: &SpectralField,
    t0: f64,
    t1: f64,
    record: &[f64],
) -> Result<Trajectory<SpectralField>> {
    ZSolver::new(model, config, z0.grid())?.evolve(z0, t0, t1, record)
}

/// RK4 integrator for the velocity form of the primitive system:
/// `d_t rho + div(rho u) = 0`,
/// `d_t u + u.grad u + grad g(rho) = grad(kappa Lap rho + kappa'|grad rho|^2/2)`.
pub struct PrimitiveSolver<'m> {
    model: &'m CapillarityModel,
    config: SolverConfig,
    kernel: Kernel,
}

impl<'m> PrimitiveSolver<'m> {
    pub fn new(model: &'m CapillarityModel, config: &SolverConfig, grid: &Arc<Grid>) -> Result<Self> {
        if config.scheme != Scheme::Rk4Pseudospectral {
            return Err(EkError::DegenerateInput(format!("{:?} integrates the complex form", config.scheme)));
        }
        Ok(PrimitiveSolver { model, config: config.clone(), kernel: Kernel::new(grid, config.dealias) })
    }

    fn rhs(&self, s: &[Buf], t: f64) -> Result<Vec<Buf>> {
        let k = &self.kernel;
        let d = k.dim();
        let rho = k.inverse(s[0].clone());
        for c in &rho {
            if !c.re.is_finite() {
                return Err(EkError::BlowUp { t, reason: "non-finite density".into() });
            }
            if !self.model.in_interval(c.re) {
                let (lo, hi) = self.model.interval();
                return Err(EkError::StepRejected { t, reason: format!("rho = {:.4} leaves J = [{lo}, {hi}]", c.re) });
            }
        }
        let gr = k.gradient_phys(&s[0]);
        let lr = k.laplacian_phys(&s[0]);
        let u: Vec<Buf> = (0..d).map(|a| k.inverse(s[1 + a].clone())).collect();

        let flux: Vec<Buf> = (0..d).map(|a| rho.iter().zip(&u[a]).map(|(r, v)| Complex64::new(r.re * v.re, 0.0)).collect()).collect();
        let mut rho_t: Buf = k.divergence_hat(flux).into_iter().map(|c| -c).collect();
        k.project(&mut rho_t);

        let q: Buf = (0..rho.len())
            .map(|i| {
                let r = rho[i].re;
                let g2: f64 = gr.iter().map(|g| g[i].re * g[i].re).sum();
                let m = self.model;
                Complex64::new(m.g_of_rho(r) - m.kappa(r) * lr[i].re - 0.5 * m.kappa_prime(r) * g2, 0.0)
            })
            .collect();
        let qh = k.forward(q);
        let mut out = vec![rho_t];
        for a in 0..d {
            let mut adv = vec![ZERO; rho.len()];
            for b in 0..d {
                let dub = k.partial_phys(&s[1 + a], b);
                adv.iter_mut().zip(&u[b]).zip(&dub).for_each(|((o, ub), du)| o.re += ub.re * du.re);
            }
            let advh = k.forward(adv);
            let dq = k.partial_hat(&qh, a);
            let mut ut: Buf = advh.iter().zip(&dq).map(|(x, y)| -x - y).collect();
            k.project(&mut ut);
            out.push(ut);
        }
        Ok(out)
    }

    fn prepare(&self, state: &FluidState) -> Result<Vec<Buf>> {
        if !state.grid().same_as(&self.kernel.grid) {
            return Err(EkError::GridMismatch);
        }
        let mut out = Vec::with_capacity(1 + state.u.len());
        for f in std::iter::once(&state.rho).chain(&state.u) {
            let mut h = f.to_fourier().into_data();
            self.kernel.project(&mut h);
            out.push(h);
        }
        Ok(out)
    }

    fn state(&self, s: Vec<Buf>) -> FluidState {
        let g = &self.kernel.grid;
        let mut it = s.into_iter().map(|h| {
            SpectralField::from_data(g, h, Representation::Fourier).expect("length matches grid").into_physical().real_part()
        });
        let rho = it.next().expect("density component");
        FluidState { rho, u: it.collect() }
    }

    pub fn step(&self, state: &FluidState, t: f64, h: f64) -> Result<FluidState> {
        let s = self.prepare(state)?;
        let mut rej = 0;
        Ok(self.state(advance(self, &self.config, &s, t, h, 0, &mut rej)?))
    }

    pub fn evolve(&self, state: &FluidState, t0: f64, t1: f64, record: &[f64]) -> Result<Trajectory<FluidState>> {
        let s = self.prepare(state)?;
        let (times, states, rejections) = march(self, &self.config, s, t0, t1, record)?;
        Ok(Trajectory { times, states: states.into_iter().map(|s| self.state(s)).collect(), rejections })
    }
}

impl Stepper for PrimitiveSolver<'_> {
    fn step(&self, s: &[Buf], t: f64, h: f64) -> Result<Vec<Buf>> {
        let add = |base: &[Buf], k: &[Buf], c: f64| -> Vec<Buf> {
            base.iter().zip(k).map(|(b, k)| kernel::combine(b, &[(c, k)])).collect()
        };
        let k1 = self.rhs(s, t)?;
        let k2 = self.rhs(&add(s, &k1, 0.5 * h), t + 0.5 * h)?;
        let k3 = self.rhs(&add(s, &k2, 0.5 * h), t + 0.5 * h)?;
        let k4 = self.rhs(&add(s, &k3, h), t + h)?;
        Ok((0..s.len())
            .map(|c| kernel::combine(&s[c], &[(h / 6.0, &k1[c]), (h / 3.0, &k2[c]), (h / 3.0, &k3[c]), (h / 6.0, &k4[c])]))
            .collect())
    }
}

pub fn step_primitive(model: &CapillarityModel, config: &SolverConfig, state: &FluidState, t: f64) -> Result<FluidState> {
    let sign = if config.direction == Direction::Forward { 1.0 } else { -1.0 };
    PrimitiveSolver::new(model, config, state.grid())?.step(state, t, sign * config.dt)
}

pub fn evolve_primitive(
    model: &CapillarityModel,
    config: &SolverConfig,
    state: &FluidState,
    t0: f64,
    t1: f64,
    record: &[f64],
) -> Result<Trajectory<FluidState>> {
    PrimitiveSolver::new(model, config, state.grid())?.evolve(state, t0, t1, record)
}

/// One CSV row per sample: `t,mass,hamiltonian,ell_inf,div_u_inf`.
pub fn trajectory_csv(model: &CapillarityModel, times: &[f64], states: &[FluidState]) -> Result<String> {
    let mut out = String::from("t,mass,hamiltonian,ell_inf,div_u_inf\n");
    for (t, s) in times.iter().zip(states) {
        let ell_inf = s.rho.data().iter().map(|c| model.ell_of_rho(c.re).map(f64::abs)).try_fold(0.0, |m, v| v.map(|v| f64::max(m, v)))?;
        let div = s.velocity_divergence().lebesgue_norm(f64::INFINITY);
        out.push_str(&format!("{t},{:e},{:e},{:e},{:e}\n", s.mass_excess(), hamiltonian(model, s)?, ell_inf, div));
    }
    Ok(out)
}

/// Converts a complex-form trajectory to primitive variables.
pub fn to_fluid_trajectory(model: &CapillarityModel, traj: &Trajectory<SpectralField>) -> Result<Vec<FluidState>> {
    traj.states.iter().map(|z| madelung::from_complex(model, &MadelungState::new(z.clone()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KappaFamily, PressureLaw, DEFAULT_INTERVAL};
    use crate::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_field(grid: &Arc<Grid>, seed: u64, amp: f64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random::band_limited(grid, 3, &mut rng);
        f.scale_real(amp / f.lebesgue_norm(f64::INFINITY))
    }

    #[test]
    fn zero_field_has_no_nonlinearity() {
        let g = Grid::cube(3, 8, 6.0).unwrap();
        let m = CapillarityModel::unit_normalized();
        let z = SpectralField::zeros(&g, Representation::Physical);
        assert_eq!(full_nonlinearity(&m, &z).unwrap().lebesgue_norm(f64::INFINITY), 0.0);
        assert_eq!(quadratic_part(&m, &z).lebesgue_norm(f64::INFINITY), 0.0);
        assert_eq!(cubic_remainder(&m, &z).unwrap().lebesgue_norm(f64::INFINITY), 0.0);
    }

    #[test]
    fn real_constant_nonlinearity() {
        let g = Grid::cube(2, 8, 6.0).unwrap();
        let m = CapillarityModel::unit_normalized();
        let c = 0.05;
        let z = SpectralField::constant(&g, Complex64::new(c, 0.0));
        let f = full_nonlinearity(&m, &z).unwrap();
        let expected = Complex64::new(0.0, -m.gtilde(c));
        assert!(f.data().iter().all(|v| (v - expected).norm() < 1e-14));
        let n2 = quadratic_part(&m, &z);
        assert!(n2.data().iter().all(|v| (v - Complex64::new(0.0, -c * c)).norm() < 1e-14));
    }

    #[test]
    fn nonlinearity_matches_scalar_equations() {
        let g = Grid::cube(3, 8, 6.0).unwrap();
        let m = CapillarityModel::new(KappaFamily::Constant { kappa0: 1.0 }, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL)
            .unwrap();
        let z = small_field(&g, 3, 0.05);
        let f = full_nonlinearity(&m, &z).unwrap();
        let (de, dp) = scalar_equations(&m, &z).unwrap();
        let lin = z.laplacian().scale(I);
        for i in 0..g.len() {
            let expected = Complex64::new(de.data()[i].re, dp.data()[i].re) - lin.to_physical().data()[i];
            assert!((f.data()[i] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn quadratic_forms_agree() {
        let g = Grid::cube(3, 8, 6.0).unwrap();
        for (seed, (ca, cg)) in [(1, (1.0, 1.0)), (2, (0.5, 0.0)), (3, (0.0, 2.0))] {
            let z = small_field(&g, seed, 0.3);
            let a = quadratic_part_with(ca, cg, &z);
            let b = quadratic_part_real_form(ca, cg, &z);
            assert!(a.max_abs_difference(&b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn exact_truncation_model_has_no_cubic_part() {
        let g = Grid::cube(3, 8, 6.0).unwrap();
        let m = CapillarityModel::exact_quadratic();
        let z = small_field(&g, 5, 0.1);
        assert!(cubic_remainder(&m, &z).unwrap().lebesgue_norm(f64::INFINITY) < 1e-12);
    }

    #[test]
    fn cubic_remainder_order() {
        let g = Grid::cube(2, 16, 6.0).unwrap();
        let m = CapillarityModel::unit_normalized();
        let z = small_field(&g, 9, 1.0);
        let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&e| cubic_remainder(&m, &z.scale_real(e)).unwrap().l2_norm() / (e * e * e))
            .collect();
        assert!((ratios[1] / ratios[2] - 1.0).abs() < 1e-2, "{ratios:?}");
        assert!((ratios[0] / ratios[1] - 1.0).abs() < 0.1, "{ratios:?}");
    }

    #[test]
    fn linear_only_is_free_flow() {
        let g = Grid::cube(2, 16, 2.0 * PI).unwrap();
        let m = CapillarityModel::unit_normalized();
        let z = small_field(&g, 4, 0.1).dealiased();
        for scheme in [Scheme::StrangSplitRk4, Scheme::EtdRk4] {
            let cfg = SolverConfig { dt: 0.05, scheme, nonlinearity: NonlinearMode::LinearOnly, ..Default::default() };
            let out = evolve_z(&m, &cfg, &z, 0.0, 0.7, &[]).unwrap();
            let exact = z.free_propagate(0.7);
            assert!(out.states.last().unwrap().max_abs_difference(&exact).unwrap() < 1e-10);
        }
    }

    #[test]
    fn equilibrium_is_fixed() {
        let g = Grid::cube(3, 8, 2.0 * PI).unwrap();
        let m = CapillarityModel::unit_normalized();
        let cfg = SolverConfig { scheme: Scheme::Rk4Pseudospectral, dt: 1e-2, ..Default::default() };
        let eq = FluidState::equilibrium(&g);
        let out = evolve_primitive(&m, &cfg, &eq, 0.0, 0.1, &[]).unwrap();
        let last = out.states.last().unwrap();
        assert!(last.rho.max_abs_difference(&eq.rho).unwrap() < 1e-14);
        assert!(last.u.iter().all(|c| c.lebesgue_norm(f64::INFINITY) < 1e-14));
        assert_eq!(hamiltonian(&m, &eq).unwrap(), 0.0);
    }

    #[test]
    fn velocity_only_hamiltonian() {
        let g = Grid::cube(2, 16, 2.0 * PI).unwrap();
        let m = CapillarityModel::unit_normalized();
        let psi = SpectralField::from_fn(&g, |x| Complex64::new(x[0].sin() * x[1].cos(), 0.0));
        let u = psi.gradient();
        let expected: f64 = 0.5 * u.iter().map(|c| c.l2_norm().powi(2)).sum::<f64>();
        let state = FluidState::new(SpectralField::constant(&g, Complex64::new(1.0, 0.0)), u).unwrap();
        assert!((hamiltonian(&m, &state).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn stability_bounds() {
        let m = CapillarityModel::unit_normalized();
        let l = 2.0 * PI;
        let dts: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| stability_dt(&m, &Grid::cube(3, n, l).unwrap(), Scheme::Rk4Pseudospectral, true))
            .collect();
        assert!((dts[0] / dts[1] - 4.0).abs() < 0.5 && (dts[1] / dts[2] - 4.0).abs() < 0.5, "{dts:?}");
        let g = Grid::cube(3, 16, l).unwrap();
        assert!(stability_dt(&m, &g, Scheme::EtdRk4, true) > stability_dt(&m, &g, Scheme::Rk4Pseudospectral, true));
        // 16^3 on a 2 pi box keeps |k| <= 5 per axis
        assert!((dts[0] - 0.9 * 2.0 * 2f64.sqrt() / 75.0).abs() < 1e-12);
    }

    #[test]
    fn korteweg_linearization() {
        let l = 2.0 * PI;
        let g = Grid::cube(1, 32, l).unwrap();
        let m = CapillarityModel::new(KappaFamily::Constant { kappa0: 1.0 }, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL)
            .unwrap();
        let eps = 1e-6;
        let k = 2.0;
        let rho = SpectralField::from_fn(&g, |x| Complex64::new(1.0 + eps * (k * x[0]).sin(), 0.0));
        let dk = korteweg_div_k(&m, &rho).unwrap();
        let leading = SpectralField::from_fn(&g, |x| Complex64::new(-eps * k.powi(3) * (k * x[0]).cos(), 0.0));
        assert!(dk[0].max_abs_difference(&leading).unwrap() < 1e-8);
        // for constant kappa the expression is exactly rho * (-eps k^3 cos)
        let exact = SpectralField::from_fn(&g, |x| {
            Complex64::new(-(1.0 + eps * (k * x[0]).sin()) * eps * k.powi(3) * (k * x[0]).cos(), 0.0)
        });
        let err = dk[0].max_abs_difference(&exact).unwrap();
        assert!(err < 1e-8 * eps * k.powi(3), "{err:e}");
    }

    #[test]
    fn quantum_korteweg_matches_bohm_form() {
        let l = 2.0 * PI;
        let g = Grid::cube(2, 32, l).unwrap();
        let m = CapillarityModel::new(KappaFamily::Quantum { kappa0: 1.0 }, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL)
            .unwrap();
        let rho = SpectralField::from_fn(&g, |x| Complex64::new(1.0 + 0.1 * x[0].sin() * x[1].cos(), 0.0));
        let dk = korteweg_div_k(&m, &rho).unwrap();
        // 2 rho grad(Lap sqrt(rho) / sqrt(rho))
        let s = rho.map_physical(|c| Complex64::new(c.re.sqrt(), 0.0));
        let ratio = s.laplacian().into_physical().zip_div(&s);
        let bohm: Vec<_> = ratio.gradient().into_iter().map(|c| c.mul(&rho).unwrap().scale_real(2.0)).collect();
        for (a, b) in dk.iter().zip(&bohm) {
            assert!(a.max_abs_difference(b).unwrap() < 1e-8, "{}", a.max_abs_difference(b).unwrap());
        }
    }

    trait ZipDiv {
        fn zip_div(&self, other: &SpectralField) -> SpectralField;
    }

    impl ZipDiv for SpectralField {
        fn zip_div(&self, other: &SpectralField) -> SpectralField {
            let o = other.to_physical();
            let data = self.to_physical().data().iter().zip(o.data()).map(|(a, b)| a / b).collect();
            SpectralField::from_data(self.grid(), data, Representation::Physical).unwrap()
        }
    }

    #[test]
    fn forward_backward_reversibility() {
        let g = Grid::cube(2, 16, 2.0 * PI).unwrap();
        let m = CapillarityModel::unit_normalized();
        let z = small_field(&g, 11, 1e-2).dealiased();
        let fwd = SolverConfig { dt: 1e-2, scheme: Scheme::StrangSplitRk4, defect_tolerance: None, ..Default::default() };
        let bwd = SolverConfig { direction: Direction::Backward, ..fwd.clone() };
        let a = evolve_z(&m, &fwd, &z, 0.0, 1.0, &[]).unwrap();
        let b = evolve_z(&m, &bwd, a.states.last().unwrap(), 1.0, 0.0, &[]).unwrap();
        assert!(b.states.last().unwrap().max_abs_difference(&z).unwrap() < 1e-6);
        assert!(matches!(evolve_z(&m, &fwd, &z, 1.0, 0.0, &[]), Err(EkError::DegenerateInput(_))));
    }

    #[test]
    fn records_requested_times() {
        let g = Grid::cube(1, 16, 2.0 * PI).unwrap();
        let m = CapillarityModel::unit_normalized();
        let z = small_field(&g, 1, 1e-2).dealiased();
        let cfg = SolverConfig { dt: 0.03, defect_tolerance: None, ..Default::default() };
        let out = evolve_z(&m, &cfg, &z, 0.0, 1.0, &[0.5, 0.25, 2.0]).unwrap();
        assert_eq!(out.times, vec![0.0, 0.25, 0.5, 1.0]);
        assert!(out.at(0.5).is_some());
    }

    #[test]
    fn density_leaving_interval_rejects_step() {
        let g = Grid::cube(1, 16, 2.0 * PI).unwrap();
        let m = CapillarityModel::unit_normalized();
        let z = SpectralField::from_fn(&g, |x| Complex64::new(-0.9 * x[0].cos().powi(2), 0.0));
        let cfg = SolverConfig { dt: 0.01, ..Default::default() };
        assert!(matches!(step_z(&m, &cfg, &z, 0.0), Err(EkError::StepRejected { .. })));
    }
}
