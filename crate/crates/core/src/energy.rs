//! Gauge-weighted high-order energy and the continuation (blow-up) monitor.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::Result;
use crate::field::SpectralField;
use crate::madelung::FluidState;
use crate::model::CapillarityModel;

/// Default ceiling above which the blow-up integral counts as divergent.
pub const DEFAULT_INTEGRAL_CEILING: f64 = 1e6;

fn fractional_laplacian(f: &SpectralField, gamma: f64) -> SpectralField {
    if gamma == 0.0 {
        return f.to_physical();
    }
    f.apply_multiplier(|xi| {
        let k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        Complex64::new(if k2 == 0.0 { 0.0 } else { k2.powf(gamma) }, 0.0)
    })
    .into_physical()
}

/// `E_gamma = ||phi(rho) Lap^gamma v||^2 + ||phi(rho) Lap^gamma u||^2` with
/// `v = grad L(rho)`, `Lap^gamma` the multiplier `|xi|^{2 gamma}` and `phi`
/// the gauge weight. With a reference state, `v` and `u` are replaced by
/// their differences from it before weighting.
pub fn weighted_energy(
    model: &CapillarityModel,
    state: &FluidState,
    gamma: f64,
    reference: Option<&FluidState>,
) -> Result<f64> {
    let grid = state.grid();
    let rho = state.rho.real_values();
    let mut ell = Vec::with_capacity(rho.len());
    let mut weight = Vec::with_capacity(rho.len());
    for &r in &rho {
        ell.push(model.ell_of_rho(r)?);
        weight.push(model.gauge_phi(r, gamma));
    }
    let mut v = SpectralField::from_real(grid, &ell)?.gradient();
    let mut u = state.u.clone();
    if let Some(r) = reference {
        let ell_ref = r.rho.real_values().iter().map(|&x| model.ell_of_rho(x)).collect::<Result<Vec<_>>>()?;
        let v_ref = SpectralField::from_real(grid, &ell_ref)?.gradient();
        v = v.iter().zip(&v_ref).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
        u = u.iter().zip(&r.u).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
    }
    let mut acc = 0.0;
    for comp in v.iter().chain(&u) {
        let d = fractional_laplacian(comp, gamma);
        acc += d.data().iter().zip(&weight).map(|(c, w)| (c * w).norm_sqr()).sum::<f64>();
    }
    Ok(acc * grid.cell_volume())
}

/// Online record of the continuation criterion.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub gamma: f64,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// Running `int (||Lap rho||_inf + ||div u||_inf) dt` from the first sample.
    pub blowup_integral: Vec<f64>,
    pub rho_min: Vec<f64>,
    pub rho_max: Vec<f64>,
    pub interval: (f64, f64),
    pub ceiling: f64,
    pub range_ok: bool,
    pub integral_ok: bool,
    pub continuation_ok: bool,
}

impl EnergyReport {
    /// Rows `t,energy,blowup_integral,rho_min,rho_max,flags`.
    pub fn csv(&self) -> String {
        let mut out = String::from("t,energy,blowup_integral,rho_min,rho_max,flags\n");
        let (lo, hi) = self.interval;
        for i in 0..self.times.len() {
            let mut flags = Vec::new();
            if self.rho_min[i] < lo || self.rho_max[i] > hi {
                flags.push("range");
            }
            if self.blowup_integral[i] > self.ceiling {
                flags.push("integral");
            }
            let flags = if flags.is_empty() { "ok".to_string() } else { flags.join("+") };
            out.push_str(&format!(
                "{},{:e},{:e},{},{},{}\n",
                self.times[i], self.energy[i], self.blowup_integral[i], self.rho_min[i], self.rho_max[i], flags
            ));
        }
        out
    }

    /// Final value of the accumulated integral.
    pub fn total_integral(&self) -> f64 {
        self.blowup_integral.last().copied().unwrap_or(0.0)
    }
}

/// `||Lap rho||_inf + ||div u||_inf` for one snapshot.
pub fn continuation_rate(state: &FluidState) -> f64 {
    state.rho.laplacian().lebesgue_norm(f64::INFINITY) + state.velocity_divergence().lebesgue_norm(f64::INFINITY)
}

/// Trapezoid accumulation of the continuation rate over the samples taken in
/// increasing time order, with density-range tracking. When `gamma` is given
/// the weighted energy is recorded as well (zero where the density leaves
/// the working interval).
pub fn blowup_monitor(
    model: &CapillarityModel,
    times: &[f64],
    states: &[FluidState],
    gamma: Option<f64>,
    ceiling: f64,
) -> EnergyReport {
    monitor_stream(model, times, |i| Ok(states[i].clone()), gamma, ceiling).expect("states are given")
}

/// [`blowup_monitor`] over states produced on demand by `state(i)`, so that
/// only one snapshot is held at a time.
pub fn monitor_stream<F>(model: &CapillarityModel, times: &[f64], mut state: F, gamma: Option<f64>, ceiling: f64) -> Result<EnergyReport>
where
    F: FnMut(usize) -> Result<FluidState>,
{
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let interval = model.interval();
    let mut report = EnergyReport {
        gamma: gamma.unwrap_or(0.0),
        times: Vec::with_capacity(times.len()),
        energy: Vec::with_capacity(times.len()),
        blowup_integral: Vec::with_capacity(times.len()),
        rho_min: Vec::with_capacity(times.len()),
        rho_max: Vec::with_capacity(times.len()),
        interval,
        ceiling,
        range_ok: true,
        integral_ok: true,
        continuation_ok: true,
    };
    let mut acc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for i in order {
        let s = state(i)?;
        let t = times[i];
        let rate = continuation_rate(&s);
        if let Some((tp, rp)) = prev {
            acc += 0.5 * (t - tp) * (rate + rp);
        }
        prev = Some((t, rate));
        let (lo, hi) = s.density_range();
        if lo < interval.0 || hi > interval.1 {
            report.range_ok = false;
        }
        if !(acc <= ceiling) {
            report.integral_ok = false;
        }
        let e = gamma.map(|g| weighted_energy(model, &s, g, None).unwrap_or(0.0)).unwrap_or(0.0);
        report.times.push(t);
        report.energy.push(e);
        report.blowup_integral.push(acc);
        report.rho_min.push(lo);
        report.rho_max.push(hi);
    }
    report.continuation_ok = report.range_ok && report.integral_ok;
    Ok(report)
}
