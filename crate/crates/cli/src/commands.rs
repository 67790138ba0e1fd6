//! Subcommand bodies. Each returns the `results` object of the report.

use eklab::dynamics::{self, Scheme};
use eklab::energy;
use eklab::lp;
use eklab::madelung::{self, MadelungState};
use eklab::model::{KappaFamily, PressureLaw};
use eklab::random;
use eklab::resonance::{self, Resonance, ResonanceSymbol};
use eklab::scattering::{self as sc, DecaySeries, FinalDataRun, Profile};
use eklab::snapshot;
use eklab::{CapillarityModel, Grid, SpectralField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Format};
use crate::report::{to_value, CliError, CliResult, Out};

fn profile(cfg: &ExperimentConfig, grid: &std::sync::Arc<Grid>) -> CliResult<Profile> {
    Ok(Profile::build(grid, &cfg.profile.generator, cfg.profile.band_limit)?)
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

fn fmt_label(t: f64) -> String {
    format!("{t}").replace('.', "p")
}

fn window_for(cfg: &ExperimentConfig, t_n: f64, t_star: f64) -> (f64, f64) {
    cfg.plan.fit_window.map(|w| (w[0], w[1])).unwrap_or_else(|| sc::default_window(t_n, t_star))
}

fn rewindow(s: DecaySeries, window: (f64, f64)) -> DecaySeries {
    DecaySeries::new(&s.label, s.samples, window, s.t_star)
}

fn write_snapshots(out: &mut Out, cfg: &ExperimentConfig, prefix: &str, times: &[f64], fields: &[SpectralField]) -> CliResult<()> {
    if !cfg.output.wants(Format::Field) || cfg.output.snapshot_cadence == 0 {
        return Ok(());
    }
    for (i, (t, f)) in times.iter().zip(fields).enumerate() {
        if i % cfg.output.snapshot_cadence == 0 {
            let name = format!("{prefix}_{i:04}.field");
            snapshot::write(&out.path(&name), f, *t)?;
            out.record(&name);
            out.record(&format!("{name}.meta"));
        }
    }
    Ok(())
}

fn csv_enabled(cfg: &ExperimentConfig) -> bool {
    cfg.output.wants(Format::Csv)
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut Out) -> CliResult<Value> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let phi = profile(cfg, &grid)?;
    let solver = cfg.solver.solver_config();
    let t_end = cfg.solver.t_end;
    let record = sc::uniform_times(0.0, t_end, cfg.solver.record_step);
    let initial = madelung::from_complex(&model, &MadelungState::new(phi.field.clone()))?;
    let (times, states, rejections, formulation) = if cfg.solver.scheme == Scheme::Rk4Pseudospectral {
        let traj = dynamics::evolve_primitive(&model, &solver, &initial, 0.0, t_end, &record)?;
        (traj.times, traj.states, traj.rejections, "primitive")
    } else {
        let traj = dynamics::evolve_z(&model, &solver, &phi.field, 0.0, t_end, &record)?;
        write_snapshots(out, cfg, "z", &traj.times, &traj.states)?;
        let states = dynamics::to_fluid_trajectory(&model, &traj)?;
        (traj.times, states, traj.rejections, "complex")
    };
    let monitor = energy::blowup_monitor(&model, &times, &states, Some(cfg.solver.gamma), energy::DEFAULT_INTEGRAL_CEILING);
    if csv_enabled(cfg) {
        out.write("trajectory.csv", &dynamics::trajectory_csv(&model, &times, &states)?)?;
        out.write("monitor.csv", &monitor.csv())?;
    }
    let last = states.last().unwrap_or(&initial);
    let h0 = dynamics::hamiltonian(&model, &initial)?;
    let h1 = dynamics::hamiltonian(&model, last)?;
    Ok(json!({
        "formulation": formulation,
        "t_end": t_end,
        "samples": times.len(),
        "rejections": rejections,
        "mass_drift": rel(last.total_mass(), initial.total_mass()),
        "hamiltonian_drift": rel(h1, h0),
        "density_range": last.density_range(),
        "blowup_integral": monitor.total_integral(),
        "range_ok": monitor.range_ok,
        "continuation_ok": monitor.continuation_ok,
    }))
}

struct ScatterRun {
    t_n: f64,
    run: FinalDataRun,
    result: Value,
    csv: Vec<(String, String)>,
}

fn scatter_one(cfg: &ExperimentConfig, model: &CapillarityModel, phi: &Profile, t_n: f64, t_star: f64) -> CliResult<ScatterRun> {
    let solver = cfg.solver.solver_config();
    let times = sc::uniform_times(1.0, t_n, cfg.plan.sample_step);
    let run = sc::final_data_solve(model, &solver, phi, t_n, &times)?;
    let second = sc::second_approximation(model, phi, t_n, &run.times, &cfg.plan.quadrature, false)?;
    let window = window_for(cfg, t_n, t_star);
    let boot = sc::bootstrap_z(&run, &second, phi, cfg.plan.s_reg)?;
    let z_series = rewindow(boot.series.clone(), window);
    let (rho, u) = sc::scattering_error(model, &run, phi)?;
    let (rho, u) = (rewindow(rho, window), rewindow(u, window));
    let re_z2: Vec<(f64, f64)> = run.times.iter().zip(&second.z2).map(|(&t, z)| (t, z.real_part().l2_norm())).collect();
    let re_z2 = DecaySeries::new("re_z2_l2", re_z2, window, t_star);
    let tag = fmt_label(t_n);
    let csv = vec![
        (format!("scatter_tn{tag}_rho.csv"), rho.csv()),
        (format!("scatter_tn{tag}_u.csv"), u.csv()),
        (format!("scatter_tn{tag}_bootstrap.csv"), z_series.csv()),
        (format!("scatter_tn{tag}_re_z2.csv"), re_z2.csv()),
        (format!("scatter_tn{tag}_monitor.csv"), run.monitor.csv()),
    ];
    let result = json!({
        "t_n": t_n,
        "window": window,
        "rho_error": { "fit": to_value(&rho.fit), "sup": rho.sup() },
        "u_error": { "fit": to_value(&u.fit), "sup": u.sup() },
        "re_z2": { "fit": to_value(&re_z2.fit), "weighted_spread": re_z2.weighted("w", 1.5).spread() },
        "bootstrap": { "spread": z_series.spread(), "sup": z_series.sup() },
        "sup_z2_l2": second.z2.iter().map(|z| z.l2_norm()).fold(0.0, f64::max),
        "quadrature_nodes": second.nodes,
        "quadrature_doubling_change": second.doubling_change,
        "blowup_integral": run.monitor.total_integral(),
        "range_ok": run.monitor.range_ok,
        "continuation_ok": run.monitor.continuation_ok,
        "rejections": run.rejections,
    });
    Ok(ScatterRun { t_n, run, result, csv })
}

pub fn scatter(cfg: &ExperimentConfig, out: &mut Out) -> CliResult<Value> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let phi = profile(cfg, &grid)?;
    let t_star = sc::wraparound_horizon(&phi.field);
    let norms = sc::profile_norms(&phi.field, cfg.plan.s_reg, sc::DEFAULT_SMALLNESS)?;
    let runs: Vec<ScatterRun> =
        cfg.plan.t_n.par_iter().map(|&t_n| scatter_one(cfg, &model, &phi, t_n, t_star)).collect::<CliResult<_>>()?;
    for r in &runs {
        if csv_enabled(cfg) {
            for (name, body) in &r.csv {
                out.write(name, body)?;
            }
        }
        write_snapshots(out, cfg, &format!("scatter_tn{}_z", fmt_label(r.t_n)), &r.run.times, &r.run.z)?;
    }
    let common = (1.0, cfg.plan.t_n[0]);
    let finals: Vec<FinalDataRun> = runs.iter().map(|r| r.run.clone()).collect();
    let consistency = if finals.len() > 1 { sc::tn_consistency(&finals, common, cfg.plan.s_reg)? } else { Vec::new() };
    Ok(json!({
        "t_star": t_star,
        "profile_flags": to_value(&phi.flags),
        "profile_norms": to_value(&norms),
        "runs": runs.iter().map(|r| r.result.clone()).collect::<Vec<_>>(),
        "tn_consistency": { "window": common, "differences": consistency },
    }))
}

pub fn second_approx(cfg: &ExperimentConfig, out: &mut Out) -> CliResult<Value> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let phi = profile(cfg, &grid)?;
    let t_star = sc::wraparound_horizon(&phi.field);
    let t_n = cfg.plan.t_n[0];
    let times = sc::uniform_times(1.0, t_n, cfg.plan.sample_step);
    let sa = sc::second_approximation(&model, &phi, t_n, &times, &cfg.plan.quadrature, true)?;
    let mut rows = String::from("t,z2_l2,re_z2_l2,weighted_re_z2,z22_l2,z21_l2\n");
    let mut display = 0.0f64;
    for (i, &t) in times.iter().enumerate() {
        let re = sa.z2[i].real_part().l2_norm();
        let z21 = sa.z21(i);
        rows.push_str(&format!(
            "{t},{:e},{re:e},{:e},{:e},{:e}\n",
            sa.z2[i].l2_norm(),
            re * t.powf(1.5),
            sa.z22[i].l2_norm(),
            z21.l2_norm()
        ));
        if let Some(d) = &sa.z21_display {
            let scale = z21.l2_norm();
            if scale > 0.0 {
                display = display.max(d[i].sub(&z21)?.l2_norm() / scale);
            }
        }
    }
    let picks: Vec<f64> = (0..5).map(|k| times[k * (times.len() - 1) / 4]).collect();
    let mut identity = 0.0f64;
    for &t in &picks {
        let direct = sa.z22[sa.at(t).expect("sampled")].real_part();
        let other = sc::re_z22_minus_identity(&model, &phi, t_n, t, &cfg.plan.quadrature)?;
        let scale = direct.l2_norm();
        if scale > 0.0 {
            identity = identity.max(direct.sub(&other)?.l2_norm() / scale);
        }
    }
    let samples: Vec<(f64, f64)> = times.iter().zip(&sa.z2).map(|(&t, z)| (t, z.real_part().l2_norm())).collect();
    let series = DecaySeries::new("re_z2_l2", samples, window_for(cfg, t_n, t_star), t_star);
    if csv_enabled(cfg) {
        out.write("second_approx.csv", &rows)?;
    }
    write_snapshots(out, cfg, "z2", &times, &sa.z2)?;
    Ok(json!({
        "t_n": t_n,
        "t_star": t_star,
        "window": series.window,
        "re_z2_fit": to_value(&series.fit),
        "weighted_spread": series.weighted("w", 1.5).spread(),
        "re_z22_identity_times": picks,
        "re_z22_identity_max_relative": identity,
        "z21_display_max_relative": display,
        "quadrature_nodes": sa.nodes,
        "quadrature_doubling_change": sa.doubling_change,
    }))
}

pub fn verify_dispersive(cfg: &ExperimentConfig, out: &mut Out) -> CliResult<Value> {
    let grid = cfg.grid()?;
    let phi = profile(cfg, &grid)?;
    let t_star = sc::wraparound_horizon(&phi.field);
    if !t_star.is_finite() || t_star <= 2.0 {
        return Err(CliError::new("degenerate-input", format!("wrap-around horizon {t_star} leaves no decay window")));
    }
    let top = 0.5 * t_star;
    let n = cfg.dispersive.samples.max(5);
    let times: Vec<f64> = (0..n).map(|i| top.powf(i as f64 / (n - 1) as f64)).collect();
    let mut header = String::from("t");
    let mut columns = Vec::new();
    let mut per_p = Vec::new();
    for &p in &cfg.dispersive.p {
        let ratios = sc::dispersive_ratios(&phi.field, &times, p)?;
        let norms: Vec<(f64, f64)> = times.iter().map(|&t| (t, phi.field.free_propagate(t).lebesgue_norm(p))).collect();
        let fit = sc::decay_fit(&norms, (1.0, top)).ok();
        let d = grid.dim() as f64;
        let expected = if p.is_infinite() { -0.5 * d } else { d / p - 0.5 * d };
        per_p.push(json!({
            "p": if p.is_infinite() { json!("inf") } else { json!(p) },
            "expected_slope": expected,
            "fit": to_value(&fit),
            "max_ratio": ratios.iter().map(|r| r.1).fold(0.0, f64::max),
        }));
        header.push_str(&format!(",ratio_p{p}"));
        columns.push(ratios);
    }
    let mut rows = header + "\n";
    for (i, t) in times.iter().enumerate() {
        rows.push_str(&t.to_string());
        for c in &columns {
            rows.push_str(&format!(",{:e}", c[i].1));
        }
        rows.push('\n');
    }
    if csv_enabled(cfg) {
        out.write("dispersive.csv", &rows)?;
    }
    Ok(json!({ "t_star": t_star, "window": [1.0, top], "exponents": per_p }))
}

pub fn verify_besov(cfg: &ExperimentConfig, out: &mut Out) -> CliResult<Value> {
    let grid = cfg.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let cut = lp::DyadicCutoffs::for_grid(&grid);
    let partition = cut.partition_residual(&grid);
    let mut bony = 0.0f64;
    for _ in 0..cfg.besov.trials {
        let f = random::band_limited(&grid, cfg.besov.max_index, &mut rng);
        let g = random::band_limited(&grid, cfg.besov.max_index, &mut rng);
        let target = lp::product_minus_means(&f, &g)?;
        let parts = lp::bony_decompose(&f, &g)?;
        let scale = target.l2_norm();
        if scale > 0.0 {
            bony = bony.max(parts.sum().sub(&target)?.l2_norm() / scale);
        }
    }
    let top = (grid.points_per_axis()[0] / 2) as i64 - 1;
    let sample = random::band_limited(&grid, top.max(1), &mut rng).to_fourier();
    let (lo, hi) = (0.75, 8.0 / 3.0);
    let mut derivative = Vec::new();
    let mut embedding = Vec::new();
    let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
    for j in cut.indices() {
        let block = lp::dyadic_block(&sample, j);
        if block.l2_norm() == 0.0 {
            continue;
        }
        let rep = lp::bernstein_check(&block, j, 2.0, f64::INFINITY);
        rmin = rmin.min(rep.derivative_ratio);
        rmax = rmax.max(rep.derivative_ratio);
        derivative.push((j, rep.derivative_ratio, hi));
        embedding.push((j, rep.embedding_ratio, 1.0));
    }
    if csv_enabled(cfg) {
        out.write("bernstein_derivative.csv", &lp::csv_rows(&derivative))?;
        out.write("bernstein_embedding.csv", &lp::csv_rows(&embedding))?;
    }
    let bernstein_ok = rmin >= lo * 0.9 && rmax <= hi * 1.1;
    Ok(json!({
        "dyadic_range": [cut.j_min, cut.j_max],
        "partition_residual": partition,
        "bony_relative_residual": bony,
        "bernstein_derivative_range": [rmin, rmax],
        "bernstein_bounds": [lo * 0.9, hi * 1.1],
        "pass": partition <= 1e-10 && bony <= 1e-10 && bernstein_ok,
    }))
}

pub fn gauge(cfg: &ExperimentConfig, out: &mut Out) -> CliResult<Value> {
    let model = cfg.model()?;
    let g = &cfg.gauge;
    let n = g.points.max(2);
    let mut rows = String::from("rho,gamma,phi,phi_over_sqrt_rho,residual\n");
    let mut worst = Vec::new();
    for &gamma in &g.gamma {
        let mut w = 0.0f64;
        for i in 0..n {
            let rho = g.rho_min + (g.rho_max - g.rho_min) * i as f64 / (n - 1) as f64;
            model.check_density(rho)?;
            let phi = model.gauge_phi(rho, gamma);
            let res = model.gauge_ode_residual(rho, gamma);
            w = w.max(res.abs());
            rows.push_str(&format!("{rho},{gamma},{phi:e},{:e},{res:e}\n", phi / rho.sqrt()));
        }
        worst.push(json!({ "gamma": gamma, "max_residual": w }));
    }
    if csv_enabled(cfg) {
        out.write("gauge.csv", &rows)?;
    }
    Ok(json!({ "kappa": to_value(&model.kappa_family()), "residuals": worst }))
}

fn symbol_tag(s: &str) -> String {
    s.chars().map(|c| if c == '+' { 'p' } else { 'm' }).collect()
}

pub fn resonance_map(cfg: &ExperimentConfig, out: &mut Out) -> CliResult<Value> {
    let r = &cfg.resonance;
    let mut maps = Vec::new();
    for s in &r.symbols {
        let sym = ResonanceSymbol::parse(s).ok_or_else(|| CliError::new("config", format!("unknown symbol {s:?}")))?;
        let map = resonance::resonance_map(sym, &r.section, r.tol, r.cap);
        if csv_enabled(cfg) {
            out.write(&format!("resonance_{}.csv", symbol_tag(s)), &map.csv())?;
        }
        let counts: serde_json::Map<String, Value> = [
            Resonance::TimeResonant,
            Resonance::SpaceResonant,
            Resonance::SpacetimeResonant,
            Resonance::Nonresonant,
        ]
        .iter()
        .map(|l| (l.as_str().to_string(), json!(map.count(*l))))
        .collect();
        maps.push(json!({
            "symbol": sym.label(),
            "conventional_index": sym.conventional_index(),
            "points": map.points.len(),
            "counts": counts,
        }));
    }
    Ok(json!({ "section": to_value(&r.section), "tol": r.tol, "maps": maps }))
}

struct Suite {
    name: &'static str,
    value: f64,
    bound: f64,
}

impl Suite {
    fn pass(&self) -> bool {
        self.value <= self.bound
    }
}

pub fn selftest(cfg: &ExperimentConfig, out: &mut Out) -> CliResult<Value> {
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut suites = Vec::new();

    let (mut parseval, mut unitary, mut group) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let f = random::white(&grid, &mut rng);
        let s = rng.gen_range(-192..=192) as f64 / 64.0;
        let t = rng.gen_range(-192..=192) as f64 / 64.0;
        parseval = parseval.max(rel(f.to_fourier().l2_norm(), f.l2_norm()));
        let ft = f.free_propagate(t);
        unitary = unitary.max(rel(ft.l2_norm(), f.l2_norm()));
        group = group.max(ft.free_propagate(s).sub(&f.free_propagate(s + t))?.l2_norm() / f.l2_norm());
    }
    suites.push(Suite { name: "parseval", value: parseval, bound: 1e-12 });
    suites.push(Suite { name: "propagator_unitarity", value: unitary, bound: 1e-12 });
    suites.push(Suite { name: "propagator_group_law", value: group, bound: 1e-12 });

    let band = (grid.points_per_axis()[0] / 6).max(1) as i64;
    let mut dual = 0.0f64;
    for _ in 0..10 {
        let z = random::band_limited(&grid, band, &mut rng);
        let a = dynamics::quadratic_part_with(1.0, 1.0, &z);
        let b = dynamics::quadratic_part_real_form(1.0, 1.0, &z);
        dual = dual.max(a.max_abs_difference(&b)? / a.lebesgue_norm(f64::INFINITY).max(f64::MIN_POSITIVE));
    }
    suites.push(Suite { name: "quadratic_dual_form", value: dual, bound: 1e-12 });

    let mut trip = 0.0f64;
    for _ in 0..5 {
        let z = random::band_limited(&grid, band, &mut rng);
        let z = madelung::fix_potential_constant(&z.scale_real(1e-2 / z.lebesgue_norm(f64::INFINITY)));
        let back = madelung::to_complex(&model, &madelung::from_complex(&model, &MadelungState::new(z.clone()))?)?;
        trip = trip.max(back.z.sub(&z)?.l2_norm() / z.l2_norm());
    }
    suites.push(Suite { name: "madelung_round_trip", value: trip, bound: 1e-10 });

    let mut gauge = 0.0f64;
    for kappa in [KappaFamily::Quantum { kappa0: 1.0 }, KappaFamily::Constant { kappa0: 1.0 }, KappaFamily::Power { kappa0: 1.0, m: 2.0 }] {
        let m = CapillarityModel::new(kappa, PressureLaw::cubic_default(0.0), eklab::model::DEFAULT_INTERVAL)?;
        for gamma in [0.0, 1.0, 2.0, 3.75] {
            for i in 0..=30 {
                gauge = gauge.max(m.gauge_ode_residual(0.5 + 1.5 * i as f64 / 30.0, gamma).abs());
            }
        }
    }
    suites.push(Suite { name: "gauge_ode", value: gauge, bound: 1e-10 });

    let cut = lp::DyadicCutoffs::for_grid(&grid);
    suites.push(Suite { name: "partition_of_unity", value: cut.partition_residual(&grid), bound: 1e-10 });
    let f = random::band_limited(&grid, band, &mut rng);
    let g = random::band_limited(&grid, band, &mut rng);
    let target = lp::product_minus_means(&f, &g)?;
    let bony = lp::bony_decompose(&f, &g)?.sum().sub(&target)?.l2_norm() / target.l2_norm();
    suites.push(Suite { name: "bony_reconstruction", value: bony, bound: 1e-10 });

    let mut symbol = 0.0f64;
    for _ in 0..1000 {
        let xi: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0));
        let eta: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0));
        let dot: f64 = (0..3).map(|a| eta[a] * (xi[a] - eta[a])).sum();
        symbol = symbol.max((resonance::omega_eval(ResonanceSymbol::MINUS_MINUS, xi, eta) - 2.0 * dot).abs());
    }
    suites.push(Suite { name: "resonance_closed_form", value: symbol, bound: 1e-12 });

    let snap = out.path("selftest_snapshot.field");
    let field = random::white(&grid, &mut rng);
    snapshot::write(&snap, &field, 0.5)?;
    let (back, _) = snapshot::read(&snap)?;
    let snap_err = back.max_abs_difference(&field)?;
    std::fs::remove_file(&snap)?;
    std::fs::remove_file(snapshot::meta_path(&snap))?;
    suites.push(Suite { name: "snapshot_round_trip", value: snap_err, bound: 0.0 });

    let rows: Vec<Value> = suites
        .iter()
        .map(|s| json!({ "suite": s.name, "value": s.value, "bound": s.bound, "pass": s.pass() }))
        .collect();
    if csv_enabled(cfg) {
        let mut csv = String::from("suite,value,bound,pass\n");
        for s in &suites {
            csv.push_str(&format!("{},{:e},{:e},{}\n", s.name, s.value, s.bound, s.pass()));
        }
        out.write("selftest.csv", &csv)?;
    }
    let failed: Vec<&str> = suites.iter().filter(|s| !s.pass()).map(|s| s.name).collect();
    if !failed.is_empty() {
        return Err(CliError::new("selftest-failed", format!("failing suites: {}", failed.join(", "))));
    }
    Ok(json!({ "suites": rows, "all_pass": true }))
}
