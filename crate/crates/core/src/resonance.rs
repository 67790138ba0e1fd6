//! Bilinear phases `Omega(xi, eta) = |xi|^2 + s1 |eta|^2 + s2 |xi - eta|^2`
//! and their time, space and space-time resonance sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn parse(s: &str) -> Option<Sign> {
        match s.trim() {
            "+" | "plus" => Some(Sign::Plus),
            "-" | "minus" => Some(Sign::Minus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResonanceSymbol {
    pub eta: Sign,
    pub xi_minus_eta: Sign,
}

impl ResonanceSymbol {
    pub const PLUS_PLUS: ResonanceSymbol = ResonanceSymbol { eta: Sign::Plus, xi_minus_eta: Sign::Plus };
    pub const PLUS_MINUS: ResonanceSymbol = ResonanceSymbol { eta: Sign::Plus, xi_minus_eta: Sign::Minus };
    pub const MINUS_PLUS: ResonanceSymbol = ResonanceSymbol { eta: Sign::Minus, xi_minus_eta: Sign::Plus };
    pub const MINUS_MINUS: ResonanceSymbol = ResonanceSymbol { eta: Sign::Minus, xi_minus_eta: Sign::Minus };

    pub fn all() -> [ResonanceSymbol; 4] {
        [Self::PLUS_PLUS, Self::PLUS_MINUS, Self::MINUS_PLUS, Self::MINUS_MINUS]
    }

    /// Parses `"+-"`-style sign pairs.
    pub fn parse(s: &str) -> Option<ResonanceSymbol> {
        let s = s.trim();
        let mut chars = s.chars();
        let a = Sign::parse(&chars.next()?.to_string())?;
        let b = Sign::parse(&chars.next()?.to_string())?;
        chars.next().is_none().then_some(ResonanceSymbol { eta: a, xi_minus_eta: b })
    }

    pub fn label(&self) -> String {
        let c = |s: Sign| if s == Sign::Plus { '+' } else { '-' };
        format!("{}{}", c(self.eta), c(self.xi_minus_eta))
    }

    /// Conventional index: `1` for the phase of the `zbar zbar` interaction
    /// `(+,+)`, `3` for the `(-,-)` phase; mixed pairs carry none.
    pub fn conventional_index(&self) -> Option<u8> {
        match (self.eta, self.xi_minus_eta) {
            (Sign::Plus, Sign::Plus) => Some(1),
            (Sign::Minus, Sign::Minus) => Some(3),
            _ => None,
        }
    }
}

pub fn omega_eval(sym: ResonanceSymbol, xi: Vec3, eta: Vec3) -> f64 {
    let z = sub(xi, eta);
    dot(xi, xi) + sym.eta.value() * dot(eta, eta) + sym.xi_minus_eta.value() * dot(z, z)
}

/// `grad_eta Omega = 2 s1 eta - 2 s2 (xi - eta)`.
pub fn omega_grad_eta(sym: ResonanceSymbol, xi: Vec3, eta: Vec3) -> Vec3 {
    let (s1, s2) = (sym.eta.value(), sym.xi_minus_eta.value());
    let z = sub(xi, eta);
    [0, 1, 2].map(|a| 2.0 * s1 * eta[a] - 2.0 * s2 * z[a])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resonance {
    TimeResonant,
    SpaceResonant,
    SpacetimeResonant,
    Nonresonant,
}

impl Resonance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resonance::TimeResonant => "time_resonant",
            Resonance::SpaceResonant => "space_resonant",
            Resonance::SpacetimeResonant => "spacetime_resonant",
            Resonance::Nonresonant => "nonresonant",
        }
    }
}

/// Membership with tolerances relative to the scale of `(xi, eta)`:
/// time resonant when `|Omega| <= tol (|xi|^2 + |eta|^2 + |xi - eta|^2)`,
/// space resonant when `|grad_eta Omega| <= sqrt(tol) (|xi| + |eta|)`.
pub fn classify(sym: ResonanceSymbol, xi: Vec3, eta: Vec3, tol: f64) -> Resonance {
    let z = sub(xi, eta);
    let scale2 = dot(xi, xi) + dot(eta, eta) + dot(z, z);
    let scale1 = norm(xi) + norm(eta);
    let time = omega_eval(sym, xi, eta).abs() <= tol * scale2;
    let space = norm(omega_grad_eta(sym, xi, eta)) <= tol.sqrt() * scale1;
    match (time, space) {
        (true, true) => Resonance::SpacetimeResonant,
        (true, false) => Resonance::TimeResonant,
        (false, true) => Resonance::SpaceResonant,
        (false, false) => Resonance::Nonresonant,
    }
}

/// A two-dimensional slice of `(xi, eta)` space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Section {
    /// `xi` fixed, `eta` scanned over the plane spanned by two coordinate
    /// axes, `[-extent, extent]^2`.
    EtaPlane { xi: Vec3, axes: [usize; 2], extent: f64, points: usize },
    /// `xi = r e1`, `eta = s (cos(angle) e1 + sin(angle) e2)` with
    /// `r, s in [0, extent]`.
    Radial { angle: f64, extent: f64, points: usize },
}

impl Section {
    fn points(&self) -> usize {
        match self {
            Section::EtaPlane { points, .. } | Section::Radial { points, .. } => (*points).max(1),
        }
    }

    fn sample(&self, i: usize, j: usize) -> (Vec3, Vec3) {
        let n = self.points();
        let frac = |k: usize| if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
        match self {
            Section::EtaPlane { xi, axes, extent, .. } => {
                let mut eta = [0.0; 3];
                eta[axes[0]] = -extent + 2.0 * extent * frac(i);
                eta[axes[1]] = -extent + 2.0 * extent * frac(j);
                (*xi, eta)
            }
            Section::Radial { angle, extent, .. } => {
                let (r, s) = (extent * frac(i), extent * frac(j));
                ([r, 0.0, 0.0], [s * angle.cos(), s * angle.sin(), 0.0])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapPoint {
    pub xi: Vec3,
    pub eta: Vec3,
    pub omega: f64,
    pub grad_norm: f64,
    /// `min(1/|Omega|, cap)`.
    pub inverse_omega: f64,
    pub label: Resonance,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonanceMap {
    pub symbol: ResonanceSymbol,
    pub tol: f64,
    pub cap: f64,
    pub points: Vec<MapPoint>,
}

impl ResonanceMap {
    pub fn count(&self, label: Resonance) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }

    /// Columns `xi1,xi2,xi3,eta1,eta2,eta3,omega,grad_eta_norm,inv_omega_capped,label`.
    pub fn csv(&self) -> String {
        let mut out = String::from("xi1,xi2,xi3,eta1,eta2,eta3,omega,grad_eta_norm,inv_omega_capped,label\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:e},{:e},{:e},{}\n",
                p.xi[0],
                p.xi[1],
                p.xi[2],
                p.eta[0],
                p.eta[1],
                p.eta[2],
                p.omega,
                p.grad_norm,
                p.inverse_omega,
                p.label.as_str()
            ));
        }
        out
    }
}

/// Evaluates and labels every node of a section; rows run in parallel.
pub fn resonance_map(sym: ResonanceSymbol, section: &Section, tol: f64, cap: f64) -> ResonanceMap {
    let n = section.points();
    let points = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                let (xi, eta) = section.sample(i, j);
                let omega = omega_eval(sym, xi, eta);
                MapPoint {
                    xi,
                    eta,
                    omega,
                    grad_norm: norm(omega_grad_eta(sym, xi, eta)),
                    inverse_omega: if omega == 0.0 { cap } else { (1.0 / omega.abs()).min(cap) },
                    label: classify(sym, xi, eta, tol),
                }
            })
        })
        .collect();
    ResonanceMap { symbol: sym, tol, cap, points }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let xi = [0.3, -1.2, 0.7];
        let eta = [1.1, 0.4, -0.2];
        let z = sub(xi, eta);
        assert!((omega_eval(ResonanceSymbol::MINUS_MINUS, xi, eta) - 2.0 * dot(eta, z)).abs() < 1e-14);
        let g = omega_grad_eta(ResonanceSymbol::MINUS_MINUS, xi, eta);
        for a in 0..3 {
            assert!((g[a] - (2.0 * xi[a] - 4.0 * eta[a])).abs() < 1e-14);
        }
        assert_eq!(omega_eval(ResonanceSymbol::PLUS_PLUS, [0.0; 3], [0.0; 3]), 0.0);
    }

    #[test]
    fn documented_labels() {
        for s in ResonanceSymbol::all() {
            assert_eq!(classify(s, [0.0; 3], [0.0; 3], 1e-6), Resonance::SpacetimeResonant);
        }
        let xi = [1.0, 0.5, -0.25];
        let half = [0.5, 0.25, -0.125];
        assert_eq!(classify(ResonanceSymbol::MINUS_MINUS, xi, half, 1e-6), Resonance::SpaceResonant);
        assert!((omega_eval(ResonanceSymbol::MINUS_MINUS, xi, half) - 0.5 * dot(xi, xi)).abs() < 1e-14);
        assert_eq!(classify(ResonanceSymbol::PLUS_PLUS, xi, [0.3, -0.7, 0.2], 1e-6), Resonance::Nonresonant);
        // eta perpendicular to xi - eta
        assert_eq!(classify(ResonanceSymbol::MINUS_MINUS, [1.0, 1.0, 0.0], [1.0, 0.0, 0.0], 1e-6), Resonance::TimeResonant);
    }

    #[test]
    fn parse_and_index() {
        assert_eq!(ResonanceSymbol::parse("-+"), Some(ResonanceSymbol::MINUS_PLUS));
        assert_eq!(ResonanceSymbol::parse("++-"), None);
        assert_eq!(ResonanceSymbol::MINUS_MINUS.label(), "--");
        assert_eq!(ResonanceSymbol::PLUS_PLUS.conventional_index(), Some(1));
        assert_eq!(ResonanceSymbol::PLUS_MINUS.conventional_index(), None);
    }

    #[test]
    fn maps() {
        let zero = Section::EtaPlane { xi: [0.0; 3], axes: [0, 1], extent: 0.0, points: 5 };
        let m = resonance_map(ResonanceSymbol::PLUS_MINUS, &zero, 1e-6, 1e8);
        assert_eq!(m.count(Resonance::SpacetimeResonant), 25);
        assert!(m.points.iter().all(|p| p.inverse_omega == 1e8));

        let plane = Section::EtaPlane { xi: [2.0, 0.0, 0.0], axes: [0, 1], extent: 3.0, points: 61 };
        let pp = resonance_map(ResonanceSymbol::PLUS_PLUS, &plane, 1e-6, 1e8);
        assert_eq!(pp.count(Resonance::TimeResonant) + pp.count(Resonance::SpacetimeResonant), 0);
        // the only space-resonant node is eta = xi / 2
        let space: Vec<_> = pp.points.iter().filter(|p| p.label == Resonance::SpaceResonant).collect();
        assert_eq!(space.len(), 1);
        assert!(norm(sub(space[0].eta, [1.0, 0.0, 0.0])) < 1e-12);
        let mm = resonance_map(ResonanceSymbol::MINUS_MINUS, &plane, 1e-3, 1e8);
        // every time-resonant node lies on the circle |eta - xi/2| = |xi|/2
        let on_sphere: Vec<_> = mm.points.iter().filter(|p| matches!(p.label, Resonance::TimeResonant)).collect();
        assert!(!on_sphere.is_empty());
        for p in on_sphere {
            let r = norm(sub(p.eta, [1.0, 0.0, 0.0]));
            assert!((r - 1.0).abs() < 0.05, "{r}");
        }
        let csv = mm.csv();
        assert_eq!(csv.lines().count(), 61 * 61 + 1);
        assert!(csv.lines().next().unwrap().ends_with("label"));
        let radial = resonance_map(ResonanceSymbol::MINUS_MINUS, &Section::Radial { angle: 0.3, extent: 2.0, points: 9 }, 1e-6, 1e8);
        assert_eq!(radial.points.len(), 81);
    }
}
