//! Constitutive layer: capillarity `kappa(rho)`, pressure `P(rho)` with a
//! vanishing sound speed at `rho = 1`, the change of variables
//! `ell = L(rho) = int_1^rho sqrt(kappa(s)/s) ds`, and the composite
//! functions that appear in the complex formulation.

use serde::{Deserialize, Serialize};

use crate::error::{EkError, Result};

/// Capillarity law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KappaFamily {
    /// `kappa0 / rho`, the quantum (Bohm potential) fluid.
    Quantum { kappa0: f64 },
    /// `kappa0`.
    Constant { kappa0: f64 },
    /// `kappa0 * rho^m`.
    Power { kappa0: f64, m: f64 },
}

impl KappaFamily {
    /// `(kappa, kappa', kappa'', kappa''')` at `rho`.
    fn derivatives(&self, rho: f64) -> [f64; 4] {
        match *self {
            KappaFamily::Quantum { kappa0 } => {
                let r = 1.0 / rho;
                [kappa0 * r, -kappa0 * r * r, 2.0 * kappa0 * r * r * r, -6.0 * kappa0 * r.powi(4)]
            }
            KappaFamily::Constant { kappa0 } => [kappa0, 0.0, 0.0, 0.0],
            KappaFamily::Power { kappa0, m } if m == 1.0 => [kappa0 * rho, kappa0, 0.0, 0.0],
            KappaFamily::Power { kappa0, m } => [
                kappa0 * rho.powf(m),
                kappa0 * m * rho.powf(m - 1.0),
                kappa0 * m * (m - 1.0) * rho.powf(m - 2.0),
                kappa0 * m * (m - 1.0) * (m - 2.0) * rho.powf(m - 3.0),
            ],
        }
    }

    fn value(&self, rho: f64) -> f64 {
        match *self {
            KappaFamily::Quantum { kappa0 } => kappa0 / rho,
            KappaFamily::Constant { kappa0 } => kappa0,
            KappaFamily::Power { kappa0, m } if m == 1.0 => kappa0 * rho,
            KappaFamily::Power { kappa0, m } => kappa0 * rho.powf(m),
        }
    }

    fn kappa0(&self) -> f64 {
        match *self {
            KappaFamily::Quantum { kappa0 } | KappaFamily::Constant { kappa0 } | KappaFamily::Power { kappa0, .. } => {
                kappa0
            }
        }
    }

    /// Exponent `beta` with `L(rho) = sqrt(kappa0) (rho^beta - 1) / beta`;
    /// `beta = 0` is the logarithmic (quantum) case.
    fn beta(&self) -> f64 {
        match *self {
            KappaFamily::Quantum { .. } => 0.0,
            KappaFamily::Constant { .. } => 0.5,
            KappaFamily::Power { m, .. } => 0.5 * (m + 1.0),
        }
    }
}

/// Pressure polynomial `P(rho) = sum_k c_k (rho - 1)^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureLaw {
    pub coefficients: Vec<f64>,
}

impl PressureLaw {
    /// `P0 + (rho - 1)^3`.
    pub fn cubic_default(p0: f64) -> Self {
        PressureLaw { coefficients: vec![p0, 0.0, 0.0, 1.0] }
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        PressureLaw { coefficients }
    }

    fn coeff(&self, k: usize) -> f64 {
        self.coefficients.get(k).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, rho: f64) -> f64 {
        horner(&self.coefficients, rho - 1.0)
    }

    /// `P'(rho)`.
    pub fn derivative(&self, rho: f64) -> f64 {
        horner(&self.derivative_coefficients(), rho - 1.0)
    }

    /// Coefficients of `P'` in powers of `rho - 1`.
    fn derivative_coefficients(&self) -> Vec<f64> {
        self.coefficients.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
}

fn integrate_poly(c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    out.extend(c.iter().enumerate().map(|(k, ck)| ck / (k as f64 + 1.0)));
    out
}

/// Default working interval for the density.
pub const DEFAULT_INTERVAL: (f64, f64) = (0.2, 5.0);

/// Bundle of constitutive functions for one fluid, immutable after
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct CapillarityModel {
    kappa: KappaFamily,
    pressure: PressureLaw,
    interval: (f64, f64),
    // g(1+q) = G(q) + r log1p(q), W(1+q) = GG(q) + r ((1+q) log1p(q) - q)
    g_poly: Vec<f64>,
    w_poly: Vec<f64>,
    g_log: f64,
    derived: Derived,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Derived {
    delta: f64,
    // L^{-1} derivatives at 0
    r2: f64,
    r3: f64,
    atilde: [f64; 3],
    gtilde: [f64; 3],
    ell_lo: f64,
    ell_hi: f64,
}

/// Serialized description of a model (the config file's `[model]` block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kappa: KappaFamily,
    pub pressure: Vec<f64>,
    #[serde(default = "default_interval")]
    pub interval: [f64; 2],
}

fn default_interval() -> [f64; 2] {
    [DEFAULT_INTERVAL.0, DEFAULT_INTERVAL.1]
}

impl TryFrom<ModelSpec> for CapillarityModel {
    type Error = EkError;
    fn try_from(s: ModelSpec) -> Result<Self> {
        CapillarityModel::new(s.kappa, PressureLaw::polynomial(s.pressure), (s.interval[0], s.interval[1]))
    }
}

impl From<CapillarityModel> for ModelSpec {
    fn from(m: CapillarityModel) -> Self {
        ModelSpec { kappa: m.kappa, pressure: m.pressure.coefficients, interval: [m.interval.0, m.interval.1] }
    }
}

impl CapillarityModel {
    pub fn new(kappa: KappaFamily, pressure: PressureLaw, interval: (f64, f64)) -> Result<Self> {
        let (lo, hi) = interval;
        if !(lo > 0.0 && lo < 1.0 && hi > 1.0 && hi.is_finite()) {
            return Err(EkError::DegenerateInput(format!(
                "working interval [{lo}, {hi}] must satisfy 0 < lo < 1 < hi"
            )));
        }
        if kappa.kappa0() <= 0.0 {
            return Err(EkError::DegenerateInput("capillarity must be positive".into()));
        }
        for i in 0..=64 {
            let rho = lo + (hi - lo) * i as f64 / 64.0;
            let k = kappa.derivatives(rho)[0];
            if !(k > 0.0 && k.is_finite()) {
                return Err(EkError::DegenerateInput(format!("kappa({rho}) = {k} is not positive")));
            }
        }
        let sound = pressure.derivative(1.0);
        if sound.abs() > 1e-10 {
            return Err(EkError::DegenerateInput(format!("P'(1) = {sound:.3e}, the sound speed must vanish")));
        }

        // P'(1+q)/(1+q) = G'(q) + r/(1+q)
        let dp = pressure.derivative_coefficients();
        let (quot, rem) = divide_by_q_plus_one(&dp);
        let g_poly = integrate_poly(&quot);
        let w_poly = integrate_poly(&g_poly);

        let mut model = CapillarityModel {
            kappa,
            pressure,
            interval,
            g_poly,
            w_poly,
            g_log: rem,
            derived: Derived {
                delta: 0.0,
                r2: 0.0,
                r3: 0.0,
                atilde: [0.0; 3],
                gtilde: [0.0; 3],
                ell_lo: 0.0,
                ell_hi: 0.0,
            },
        };
        model.derived = model.derive();
        Ok(model)
    }

    /// `kappa = rho` and `P = P0 + (rho - 1)^2`: the normalization in which
    /// `atilde'(0) = 1` and `gtilde''(0)/2 = 1`, so the quadratic part takes
    /// its unit-coefficient form.
    pub fn unit_normalized() -> Self {
        CapillarityModel::new(
            KappaFamily::Power { kappa0: 1.0, m: 1.0 },
            PressureLaw::polynomial(vec![0.0, 0.0, 1.0]),
            DEFAULT_INTERVAL,
        )
        .expect("valid model")
    }

    /// `kappa = rho`, `P = -1/3 + (rho-1)^2 + 2/3 (rho-1)^3`: here
    /// `atilde(ell) = ell` and `gtilde(ell) = ell^2` exactly, so the complex
    /// nonlinearity has no cubic remainder.
    pub fn exact_quadratic() -> Self {
        CapillarityModel::new(
            KappaFamily::Power { kappa0: 1.0, m: 1.0 },
            PressureLaw::polynomial(vec![-1.0 / 3.0, 0.0, 1.0, 2.0 / 3.0]),
            DEFAULT_INTERVAL,
        )
        .expect("valid model")
    }

    pub fn kappa_family(&self) -> KappaFamily {
        self.kappa
    }

    pub fn pressure(&self) -> &PressureLaw {
        &self.pressure
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    /// Image `L(J)` of the working interval.
    pub fn ell_interval(&self) -> (f64, f64) {
        (self.derived.ell_lo, self.derived.ell_hi)
    }

    pub fn in_interval(&self, rho: f64) -> bool {
        rho >= self.interval.0 && rho <= self.interval.1
    }

    pub fn check_density(&self, rho: f64) -> Result<()> {
        if self.in_interval(rho) {
            Ok(())
        } else {
            Err(EkError::DensityRange { value: rho, lo: self.interval.0, hi: self.interval.1 })
        }
    }

    fn check_ell(&self, ell: f64) -> Result<()> {
        let (lo, hi) = self.ell_interval();
        if ell >= lo && ell <= hi {
            Ok(())
        } else {
            // report in density units, clamped to the nearest admissible L^{-1}
            let value = self.rho_of_ell_closed(ell).unwrap_or(if ell < lo { 0.0 } else { f64::INFINITY });
            Err(EkError::DensityRange { value, lo: self.interval.0, hi: self.interval.1 })
        }
    }

    pub fn kappa(&self, rho: f64) -> f64 {
        self.kappa.value(rho)
    }

    pub fn kappa_prime(&self, rho: f64) -> f64 {
        self.kappa.derivatives(rho)[1]
    }

    /// `a(rho) = sqrt(rho kappa(rho))` and its first three derivatives.
    fn a_derivatives(&self, rho: f64) -> [f64; 4] {
        let [k, k1, k2, k3] = self.kappa.derivatives(rho);
        let h = rho * k;
        let h1 = k + rho * k1;
        let h2 = 2.0 * k1 + rho * k2;
        let h3 = 3.0 * k2 + rho * k3;
        let s = h.sqrt();
        [
            s,
            h1 / (2.0 * s),
            h2 / (2.0 * s) - h1 * h1 / (4.0 * h * s),
            h3 / (2.0 * s) - 3.0 * h1 * h2 / (4.0 * h * s) + 3.0 * h1.powi(3) / (8.0 * h * h * s),
        ]
    }

    pub fn a(&self, rho: f64) -> f64 {
        (rho * self.kappa(rho)).sqrt()
    }

    pub fn a_prime(&self, rho: f64) -> f64 {
        self.a_derivatives(rho)[1]
    }

    /// `L'(rho) = sqrt(kappa/rho)` and two further derivatives.
    fn lambda_derivatives(&self, rho: f64) -> [f64; 3] {
        let [k, k1, k2, _] = self.kappa.derivatives(rho);
        let q = k / rho;
        let q1 = (k1 * rho - k) / (rho * rho);
        let q2 = k2 / rho - 2.0 * k1 / (rho * rho) + 2.0 * k / rho.powi(3);
        let s = q.sqrt();
        [s, q1 / (2.0 * s), q2 / (2.0 * s) - q1 * q1 / (4.0 * q * s)]
    }

    fn derive(&self) -> Derived {
        let [l0, l1, l2] = self.lambda_derivatives(1.0);
        let delta = 1.0 / l0;
        let r2 = -l1 / l0.powi(3);
        let r3 = -delta * (l2 / l0.powi(3) - 3.0 * l1 * l1 / l0.powi(4));
        let [_, a1, a2, a3] = self.a_derivatives(1.0);
        let atilde = [a1 * delta, a2 * delta * delta + a1 * r2, a3 * delta.powi(3) + 3.0 * a2 * delta * r2 + a1 * r3];
        let p1 = self.pressure.coeff(1);
        let p2 = 2.0 * self.pressure.coeff(2);
        let p3 = 6.0 * self.pressure.coeff(3);
        let g1 = p1;
        let g2 = p2 - p1;
        let g3 = p3 - 2.0 * p2 + 2.0 * p1;
        let gtilde = [g1 * delta, g2 * delta * delta + g1 * r2, g3 * delta.powi(3) + 3.0 * g2 * delta * r2 + g1 * r3];
        Derived {
            delta,
            r2,
            r3,
            atilde,
            gtilde,
            ell_lo: self.ell_closed(self.interval.0),
            ell_hi: self.ell_closed(self.interval.1),
        }
    }

    fn ell_closed(&self, rho: f64) -> f64 {
        let s = self.kappa.kappa0().sqrt();
        let beta = self.kappa.beta();
        if beta == 0.0 {
            s * rho.ln()
        } else {
            s * (rho.powf(beta) - 1.0) / beta
        }
    }

    fn rho_of_ell_closed(&self, ell: f64) -> Option<f64> {
        let s = self.kappa.kappa0().sqrt();
        let beta = self.kappa.beta();
        if beta == 0.0 {
            Some((ell / s).exp())
        } else {
            let base = 1.0 + beta * ell / s;
            (base > 0.0).then(|| {
                if beta == 1.0 {
                    base
                } else if beta == 0.5 {
                    base * base
                } else {
                    base.powf(1.0 / beta)
                }
            })
        }
    }

    /// `L(rho)`.
    pub fn ell_of_rho(&self, rho: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(self.ell_closed(rho))
    }

    /// `L^{-1}(ell)`.
    pub fn rho_of_ell(&self, ell: f64) -> Result<f64> {
        self.check_ell(ell)?;
        Ok(self.rho_of_ell_unchecked(ell))
    }

    /// `L^{-1}` without the range check; callers validate `ell` first.
    #[inline]
    pub fn rho_of_ell_unchecked(&self, ell: f64) -> f64 {
        self.rho_of_ell_closed(ell).unwrap_or(self.interval.0)
    }

    /// `L^{-1}` by Newton iteration on the monotone map `L`, safeguarded by
    /// bisection on the working interval. Tolerance `1e-12`.
    pub fn rho_of_ell_newton(&self, ell: f64) -> Result<f64> {
        self.check_ell(ell)?;
        let (mut lo, mut hi) = self.interval;
        let mut rho = (1.0 + self.derived.delta * ell).clamp(lo, hi);
        for _ in 0..200 {
            let f = self.ell_closed(rho) - ell;
            if f.abs() <= 1e-14 * (1.0 + ell.abs()) {
                return Ok(rho);
            }
            if f > 0.0 {
                hi = rho;
            } else {
                lo = rho;
            }
            let slope = (self.kappa(rho) / rho).sqrt();
            let mut next = rho - f / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - rho).abs() <= 1e-12 * rho {
                return Ok(next);
            }
            rho = next;
        }
        Ok(rho)
    }

    /// `delta = (L^{-1})'(0) = kappa(1)^{-1/2}`.
    pub fn delta(&self) -> f64 {
        self.derived.delta
    }

    /// `c_a = atilde'(0)`.
    pub fn c_a(&self) -> f64 {
        self.derived.atilde[0]
    }

    /// `c_g = gtilde''(0) / 2`.
    pub fn c_g(&self) -> f64 {
        0.5 * self.derived.gtilde[1]
    }

    /// True when the quadratic nonlinearity has unit coefficients.
    pub fn is_unit_normalized(&self) -> bool {
        (self.c_a() - 1.0).abs() < 1e-12 && (self.c_g() - 1.0).abs() < 1e-12
    }

    /// `(L^{-1})''(0)`.
    pub fn inverse_second_derivative(&self) -> f64 {
        self.derived.r2
    }

    /// `(L^{-1})'''(0)`.
    pub fn inverse_third_derivative(&self) -> f64 {
        self.derived.r3
    }

    /// `P(rho)`.
    pub fn pressure_at(&self, rho: f64) -> f64 {
        self.pressure.eval(rho)
    }

    /// Bulk chemical potential `g(rho) = int_1^rho P'(s)/s ds`.
    pub fn g_of_rho(&self, rho: f64) -> f64 {
        let q = rho - 1.0;
        horner(&self.g_poly, q) + self.g_log * q.ln_1p()
    }

    /// `g'(rho) = P'(rho)/rho`.
    pub fn g_prime(&self, rho: f64) -> f64 {
        self.pressure.derivative(rho) / rho
    }

    /// Potential energy density `W` with `W' = g`, `W(1) = 0`.
    pub fn w_of_rho(&self, rho: f64) -> f64 {
        let q = rho - 1.0;
        let l = q.ln_1p();
        horner(&self.w_poly, q) + self.g_log * ((1.0 + q) * l - q)
    }

    /// `gtilde(ell) = g(L^{-1}(ell))`.
    pub fn gtilde(&self, ell: f64) -> f64 {
        self.g_of_rho(self.rho_of_ell_unchecked(ell))
    }

    /// `gbar(ell) = gtilde(ell)/ell`, continued by `gbar(0) = 0`.
    pub fn gbar(&self, ell: f64) -> f64 {
        if ell.abs() < 1e-4 {
            let [_, g2, g3] = self.derived.gtilde;
            ell * (0.5 * g2 + ell * g3 / 6.0)
        } else {
            self.gtilde(ell) / ell
        }
    }

    /// `atilde(ell) = a(L^{-1}(ell)) - 1`.
    pub fn atilde(&self, ell: f64) -> f64 {
        self.a(self.rho_of_ell_unchecked(ell)) - 1.0
    }

    /// `(atilde(ell), gtilde(ell))` from a single inversion of `L`.
    #[inline]
    pub fn atilde_gtilde(&self, ell: f64) -> (f64, f64) {
        let rho = self.rho_of_ell_unchecked(ell);
        (self.a(rho) - 1.0, self.g_of_rho(rho))
    }

    /// `abar(ell) = atilde(ell)/ell - 1`, continued at zero by
    /// `a'(1) delta - 1`.
    pub fn abar(&self, ell: f64) -> f64 {
        if ell.abs() < 1e-4 {
            let [a1, a2, a3] = self.derived.atilde;
            a1 - 1.0 + ell * (0.5 * a2 + ell * a3 / 6.0)
        } else {
            self.atilde(ell) / ell - 1.0
        }
    }

    /// Gauge weight `phi(rho) = sqrt(rho) (a(rho)/a(1))^gamma`, the solution
    /// of `a/rho + 2 gamma a' - 2 a phi'/phi = 0` with `phi(1) = 1`.
    pub fn gauge_phi(&self, rho: f64, gamma: f64) -> f64 {
        rho.sqrt() * (self.a(rho) / self.a(1.0)).powf(gamma)
    }

    /// Residual of the gauge equation at `rho`, with `phi'` taken from an
    /// eighth-order central difference of [`Self::gauge_phi`] and `a'` in
    /// closed form.
    pub fn gauge_ode_residual(&self, rho: f64, gamma: f64) -> f64 {
        const W: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let h = 1e-2 * rho.min(1.0);
        let dphi: f64 = W
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let s = (i + 1) as f64 * h;
                w * (self.gauge_phi(rho + s, gamma) - self.gauge_phi(rho - s, gamma))
            })
            .sum::<f64>()
            / h;
        let a = self.a(rho);
        a / rho + 2.0 * gamma * self.a_prime(rho) - 2.0 * a * dphi / self.gauge_phi(rho, gamma)
    }
}

/// Divides a polynomial in `q` by `q + 1`, returning quotient and remainder.
fn divide_by_q_plus_one(c: &[f64]) -> (Vec<f64>, f64) {
    if c.is_empty() {
        return (Vec::new(), 0.0);
    }
    let deg = c.len() - 1;
    let mut quot = vec![0.0; deg];
    let mut carry = 0.0;
    for k in (0..=deg).rev() {
        let v = c[k] - carry;
        if k == 0 {
            return (quot, v);
        }
        quot[k - 1] = v;
        carry = v;
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantum() -> CapillarityModel {
        CapillarityModel::new(KappaFamily::Quantum { kappa0: 1.0 }, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL)
            .unwrap()
    }

    fn constant() -> CapillarityModel {
        CapillarityModel::new(KappaFamily::Constant { kappa0: 1.0 }, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL)
            .unwrap()
    }

    #[test]
    fn polynomial_division() {
        // 3q^2 = (q+1)(3q-3) + 3
        let (q, r) = divide_by_q_plus_one(&[0.0, 0.0, 3.0]);
        assert_eq!(q, vec![-3.0, 3.0]);
        assert_eq!(r, 3.0);
    }

    #[test]
    fn closed_form_ell() {
        let m = quantum();
        assert!((m.ell_of_rho(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-14);
        let c = constant();
        assert!((c.ell_of_rho(4.0).unwrap() - 2.0).abs() < 1e-14);
        for model in [quantum(), constant(), CapillarityModel::unit_normalized()] {
            assert_eq!(model.ell_of_rho(1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn out_of_interval_density() {
        let m = quantum();
        assert!(matches!(m.ell_of_rho(0.1), Err(EkError::DensityRange { .. })));
        assert!(matches!(m.ell_of_rho(6.0), Err(EkError::DensityRange { .. })));
        let (_, hi) = m.ell_interval();
        assert!(matches!(m.rho_of_ell(hi + 0.1), Err(EkError::DensityRange { .. })));
    }

    #[test]
    fn newton_matches_closed_inverse() {
        for model in [quantum(), constant(), CapillarityModel::unit_normalized()] {
            let (lo, hi) = model.interval();
            for i in 0..=100 {
                let rho = lo + (hi - lo) * i as f64 / 100.0;
                let ell = model.ell_of_rho(rho).unwrap();
                let back = model.rho_of_ell_newton(ell).unwrap();
                assert!((back - rho).abs() < 1e-10, "{rho} {back}");
                assert!((model.rho_of_ell(ell).unwrap() - rho).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cubic_chemical_potential() {
        let m = constant();
        for rho in [0.5, 1.0, 1.7, 3.0] {
            let expected = 3.0 * (rho * rho / 2.0 - 2.0 * rho + f64::ln(rho) + 1.5);
            assert!((m.g_of_rho(rho) - expected).abs() < 1e-12);
        }
        assert_eq!(m.g_of_rho(1.0), 0.0);
    }

    #[test]
    fn zero_sound_speed_enforced() {
        let bad = CapillarityModel::new(
            KappaFamily::Constant { kappa0: 1.0 },
            PressureLaw::polynomial(vec![0.0, 0.5, 1.0]),
            DEFAULT_INTERVAL,
        );
        assert!(matches!(bad, Err(EkError::DegenerateInput(_))));
        let m = CapillarityModel::unit_normalized();
        assert!(m.pressure().derivative(1.0).abs() < 1e-10);
    }

    #[test]
    fn gtilde_vanishes_to_second_order() {
        for model in [quantum(), constant(), CapillarityModel::unit_normalized()] {
            assert_eq!(model.gtilde(0.0), 0.0);
            let h = 1e-5;
            let d = (model.gtilde(h) - model.gtilde(-h)) / (2.0 * h);
            assert!(d.abs() <= 1e-8);
            for ell in [0.1, -0.1, 0.01, -0.01] {
                assert!((model.gbar(ell) * ell - model.gtilde(ell)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalization_and_delta() {
        let m = CapillarityModel::unit_normalized();
        assert_eq!(m.delta(), 1.0);
        assert!(m.is_unit_normalized());
        let k4 = CapillarityModel::new(KappaFamily::Constant { kappa0: 4.0 }, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL)
            .unwrap();
        assert!((k4.delta() - 0.5).abs() < 1e-15);
        // quantum fluids have a constant a, so the quasi-linear term vanishes
        assert_eq!(quantum().c_a(), 0.0);
        assert!((constant().c_a() - 0.5).abs() < 1e-15);
        // cubic pressure has no quadratic chemical potential
        assert!(constant().c_g().abs() < 1e-15);
    }

    #[test]
    fn exact_quadratic_model() {
        let m = CapillarityModel::exact_quadratic();
        for ell in [-0.3, -0.01, 0.0, 0.02, 0.5] {
            assert!((m.atilde(ell) - ell).abs() < 1e-14);
            assert!((m.gtilde(ell) - ell * ell).abs() < 1e-14);
        }
    }

    #[test]
    fn abar_series_matches_finite_difference() {
        let models = [
            quantum(),
            constant(),
            CapillarityModel::unit_normalized(),
            CapillarityModel::new(KappaFamily::Power { kappa0: 1.0, m: 2.5 }, PressureLaw::cubic_default(1.0), DEFAULT_INTERVAL)
                .unwrap(),
        ];
        for m in models {
            // route 1: closed-form derivatives of a and L^{-1}
            let series = m.abar(0.0);
            let symbolic = m.a_prime(1.0) * m.delta() - 1.0;
            // route 2: central difference of atilde at zero
            let h = 1e-4;
            let fd = (m.atilde(h) - m.atilde(-h)) / (2.0 * h) - 1.0;
            assert!((series - symbolic).abs() < 1e-14);
            assert!((series - fd).abs() < 1e-7, "{series} {fd}");
            // continuity across the series branch
            let (below, above) = (1e-4 - 1e-12, 1e-4 + 1e-12);
            assert!((m.abar(below) - m.abar(above)).abs() < 1e-10);
            assert!((m.gbar(below) - m.gbar(above)).abs() < 1e-10);
        }
    }

    #[test]
    fn gauge_closed_forms() {
        let c = constant();
        assert!((c.gauge_phi(4.0, 0.0) - 2.0).abs() < 1e-15);
        let q = quantum();
        for gamma in [0.0, 1.0, 3.75] {
            assert!((q.gauge_phi(2.5, gamma) - 2.5f64.sqrt()).abs() < 1e-14);
            assert!((c.gauge_phi(1.0, gamma) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gauge_residual_small() {
        for m in [quantum(), constant(), CapillarityModel::unit_normalized()] {
            for gamma in [0.0, 1.0, 2.0, 3.75] {
                for i in 0..=30 {
                    let rho = 0.5 + 1.5 * i as f64 / 30.0;
                    let r = m.gauge_ode_residual(rho, gamma);
                    assert!(r.abs() <= 1e-10, "{rho} {gamma} {r}");
                }
            }
        }
    }

    #[test]
    fn potential_integrates_chemical_potential() {
        let m = CapillarityModel::unit_normalized();
        assert_eq!(m.w_of_rho(1.0), 0.0);
        let h = 1e-5;
        for rho in [0.6, 1.3, 2.0] {
            let d = (m.w_of_rho(rho + h) - m.w_of_rho(rho - h)) / (2.0 * h);
            assert!((d - m.g_of_rho(rho)).abs() < 1e-8);
        }
    }

    #[test]
    fn model_spec_round_trip() {
        let m = CapillarityModel::unit_normalized();
        let spec: ModelSpec = m.clone().into();
        let back = CapillarityModel::try_from(spec).unwrap();
        assert_eq!(back, m);
    }
}
