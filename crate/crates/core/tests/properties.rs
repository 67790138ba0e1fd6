use std::sync::Arc;

use eklab::dynamics::{self, Direction, Scheme, SolverConfig};
use eklab::energy;
use eklab::lp::{self, BesovIndex, DyadicCutoffs};
use eklab::madelung::{self, curl_diagnostic, FluidState, MadelungState};
use eklab::model::{KappaFamily, PressureLaw, DEFAULT_INTERVAL};
use eklab::random;
use eklab::resonance::{self, ResonanceSymbol};
use eklab::{CapillarityModel, Grid, Representation, SpectralField};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn grid3(n: usize, l: f64) -> Arc<Grid> {
    Grid::cube(3, n, l).unwrap()
}

fn small_field(g: &Arc<Grid>, seed: u64, amp: f64) -> SpectralField {
    let z = random::band_limited(g, 2, &mut rng(seed)).without_mean();
    madelung::fix_potential_constant(&z.scale_real(amp / z.lebesgue_norm(f64::INFINITY)))
}

fn family() -> impl Strategy<Value = KappaFamily> {
    prop_oneof![
        (0.5f64..2.0).prop_map(|k| KappaFamily::Quantum { kappa0: k }),
        (0.5f64..2.0).prop_map(|k| KappaFamily::Constant { kappa0: k }),
        ((0.5f64..2.0), (-1.5f64..2.5)).prop_map(|(k, m)| KappaFamily::Power { kappa0: k, m }),
    ]
}

fn shifted(f: &SpectralField, shift: usize) -> SpectralField {
    let g = f.grid().clone();
    let f = f.to_physical();
    let n = g.shape();
    let mut out = vec![Complex64::new(0.0, 0.0); g.len()];
    for idx in 0..g.len() {
        let [i, j, k] = g.unflatten(idx);
        out[g.flatten([(i + shift) % n[0], j, k])] = f.data()[idx];
    }
    SpectralField::from_data(&g, out, Representation::Physical).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parseval_and_unitarity(seed in any::<u64>(), t in -4.0f64..4.0, s in 0.0f64..3.0) {
        let g = grid3(8, 5.0);
        let f = random::white(&g, &mut rng(seed));
        prop_assert!((f.to_fourier().l2_norm() / f.l2_norm() - 1.0).abs() < 1e-12);
        let ft = f.free_propagate(t);
        let a = f.sobolev_norm(s, true).unwrap();
        let b = ft.sobolev_norm(s, true).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn group_law(seed in any::<u64>(), s in -256i32..256, t in -256i32..256) {
        let g = Grid::new(&[16, 8], &[6.0, 2.0]).unwrap();
        let f = random::white(&g, &mut rng(seed));
        let (s, t) = (s as f64 / 64.0, t as f64 / 64.0);
        let two = f.free_propagate(s).free_propagate(t);
        prop_assert!(two.sub(&f.free_propagate(s + t)).unwrap().l2_norm() <= 1e-12 * f.l2_norm());
    }

    #[test]
    fn derivative_commutes_with_propagator(seed in any::<u64>(), t in -2.0f64..2.0, axis in 0usize..3) {
        let g = grid3(8, 7.0);
        let f = random::white(&g, &mut rng(seed));
        let a = f.partial(axis).free_propagate(t);
        let b = f.free_propagate(t).partial(axis);
        prop_assert!(a.sub(&b).unwrap().l2_norm() <= 1e-12 * a.l2_norm().max(1.0));
    }

    #[test]
    fn partition_and_reconstruction(n in prop::sample::select(vec![8usize, 16, 32]), l in 1.0f64..200.0, seed in any::<u64>()) {
        let g = grid3(n, l);
        prop_assert!(DyadicCutoffs::for_grid(&g).partition_residual(&g) <= 1e-10);
        let f = random::white(&g, &mut rng(seed));
        let mut sum = SpectralField::zeros(&g, Representation::Physical);
        for (_, b) in lp::all_blocks(&f) {
            sum = sum.add(&b.into_physical()).unwrap();
        }
        let target = f.without_mean();
        prop_assert!(sum.sub(&target).unwrap().l2_norm() <= 1e-10 * target.l2_norm());
    }

    #[test]
    fn bony_reconstruction(seed in any::<u64>()) {
        let g = grid3(16, 6.0);
        let mut r = rng(seed);
        let f = random::band_limited(&g, 5, &mut r);
        let h = random::band_limited(&g, 5, &mut r);
        let target = lp::product_minus_means(&f, &h).unwrap();
        let parts = lp::bony_decompose(&f, &h).unwrap();
        prop_assert!(parts.sum().sub(&target).unwrap().l2_norm() <= 1e-10 * target.l2_norm());
        let bound = f.lebesgue_norm(f64::INFINITY) * h.l2_norm();
        prop_assert!(parts.paraproduct_fg.l2_norm() <= 10.0 * bound);
    }

    #[test]
    fn besov_interpolation(seed in any::<u64>(), s1 in -1.0f64..1.0, s2 in 1.0f64..3.0, p in prop::sample::select(vec![1.0, 2.0, f64::INFINITY])) {
        let g = grid3(16, 10.0);
        let f = random::band_limited(&g, 6, &mut rng(seed)).without_mean();
        let b = |s: f64| lp::besov_norm(&f, BesovIndex::new(s, p, f64::INFINITY).unwrap()).unwrap();
        let mid = b(0.5 * (s1 + s2));
        prop_assert!(mid <= 2.0 * (b(s1) * b(s2)).sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn change_of_variables_round_trip(kappa in family(), frac in 0.0f64..1.0) {
        let m = CapillarityModel::new(kappa, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL).unwrap();
        let (lo, hi) = DEFAULT_INTERVAL;
        let rho = lo + (hi - lo) * frac;
        let back = m.rho_of_ell(m.ell_of_rho(rho).unwrap()).unwrap();
        prop_assert!((back - rho).abs() <= 1e-10 * rho);
        prop_assert!((m.delta() - m.kappa(1.0).powf(-0.5)).abs() <= 1e-12);
    }

    #[test]
    fn gauge_residual(kappa in family(), rho in 0.5f64..2.0, gamma in 0.0f64..4.0) {
        let m = CapillarityModel::new(kappa, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL).unwrap();
        prop_assert!(m.gauge_ode_residual(rho, gamma).abs() <= 1e-10);
    }

    #[test]
    fn small_argument_branches_are_continuous(which in 0usize..3, power in -1.5f64..2.5, ell in 1e-4f64..5e-3) {
        let kappa = [
            KappaFamily::Quantum { kappa0: 1.0 },
            KappaFamily::Constant { kappa0: 1.0 },
            KappaFamily::Power { kappa0: 1.0, m: power },
        ][which];
        let m = CapillarityModel::new(kappa, PressureLaw::cubic_default(0.0), DEFAULT_INTERVAL).unwrap();
        let (below, above) = (1e-4 * (1.0 - 1e-9), 1e-4 * (1.0 + 1e-9));
        prop_assert!((m.abar(below) - m.abar(above)).abs() <= 1e-7);
        prop_assert!((m.gbar(below) - m.gbar(above)).abs() <= 1e-7);
        prop_assert!(((m.abar(ell) + 1.0) * ell - m.atilde(ell)).abs() <= 1e-14);
    }

    #[test]
    fn madelung_round_trip(seed in any::<u64>(), amp in 1e-3f64..0.2) {
        let g = grid3(8, 6.0);
        let m = CapillarityModel::unit_normalized();
        let z = small_field(&g, seed, amp);
        let state = madelung::from_complex(&m, &MadelungState::new(z.clone())).unwrap();
        prop_assert!(curl_diagnostic(&state.u) <= 1e-12);
        let back = madelung::to_complex(&m, &state).unwrap();
        prop_assert!(back.z.sub(&z).unwrap().l2_norm() <= 1e-10 * z.l2_norm());
    }

    #[test]
    fn nonlinearity_split_and_scaling(seed in any::<u64>()) {
        let g = grid3(8, 6.0);
        let m = CapillarityModel::unit_normalized();
        let z = small_field(&g, seed, 1.0);
        let eps = 1e-3;
        let ze = z.scale_real(eps);
        let f = dynamics::full_nonlinearity(&m, &ze).unwrap();
        let n2 = dynamics::quadratic_part(&m, &ze);
        let n3 = dynamics::cubic_remainder(&m, &ze).unwrap();
        prop_assert!(f.sub(&n2.add(&n3).unwrap()).unwrap().l2_norm() <= 1e-14 * f.l2_norm());
        let half = dynamics::quadratic_part(&m, &z.scale_real(0.5 * eps));
        prop_assert!((n2.l2_norm() / half.l2_norm() - 4.0).abs() <= 1e-10);
        let n3_half = dynamics::cubic_remainder(&m, &z.scale_real(0.5 * eps)).unwrap();
        prop_assert!((n3.l2_norm() / n3_half.l2_norm() - 8.0).abs() <= 0.1);
    }

    #[test]
    fn classification_is_scale_invariant(
        xi in prop::array::uniform3(-3.0f64..3.0),
        eta in prop::array::uniform3(-3.0f64..3.0),
        lambda in 0.01f64..100.0,
        idx in 0usize..4,
    ) {
        let sym = ResonanceSymbol::all()[idx];
        let a = resonance::classify(sym, xi, eta, 1e-6);
        let b = resonance::classify(sym, xi.map(|x| lambda * x), eta.map(|x| lambda * x), 1e-6);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn gradient_matches_finite_differences(
        xi in prop::array::uniform3(-3.0f64..3.0),
        eta in prop::array::uniform3(-3.0f64..3.0),
        idx in 0usize..4,
    ) {
        let sym = ResonanceSymbol::all()[idx];
        let grad = resonance::omega_grad_eta(sym, xi, eta);
        let h = 1e-4;
        for a in 0..3 {
            let (mut up, mut dn) = (eta, eta);
            up[a] += h;
            dn[a] -= h;
            let fd = (resonance::omega_eval(sym, xi, up) - resonance::omega_eval(sym, xi, dn)) / (2.0 * h);
            prop_assert!((fd - grad[a]).abs() <= 1e-8);
        }
    }

    #[test]
    fn energy_weights_and_translation(seed in any::<u64>(), gamma in prop::sample::select(vec![0.0, 0.5, 1.0, 1.3]), shift in 1usize..8) {
        let g = grid3(8, 6.0);
        let m = CapillarityModel::unit_normalized();
        let state = madelung::from_complex(&m, &MadelungState::new(small_field(&g, seed, 0.1))).unwrap();
        let e = energy::weighted_energy(&m, &state, gamma, None).unwrap();
        let moved = FluidState::new(shifted(&state.rho, shift), state.u.iter().map(|u| shifted(u, shift)).collect()).unwrap();
        let e_moved = energy::weighted_energy(&m, &moved, gamma, None).unwrap();
        prop_assert!((e - e_moved).abs() <= 1e-12 * e);
        if gamma == 0.0 {
            let rho = state.rho.real_values();
            let ell: Vec<f64> = rho.iter().map(|&r| m.ell_of_rho(r).unwrap()).collect();
            let v = SpectralField::from_real(&g, &ell).unwrap().gradient();
            let mut direct = 0.0;
            for comp in v.iter().chain(&state.u) {
                let c = comp.to_physical();
                direct += c.data().iter().zip(&rho).map(|(x, r)| r * x.norm_sqr()).sum::<f64>();
            }
            direct *= g.cell_volume();
            prop_assert!((e - direct).abs() <= 1e-12 * e);
        }
    }
}

#[test]
fn blowup_integral_is_additive() {
    let g = grid3(8, 6.0);
    let m = CapillarityModel::unit_normalized();
    let z0 = small_field(&g, 3, 0.05);
    let cfg = SolverConfig { dt: 0.02, scheme: Scheme::EtdRk4, defect_tolerance: None, ..Default::default() };
    let times: Vec<f64> = (0..=10).map(|i| 0.1 * i as f64).collect();
    let traj = dynamics::evolve_z(&m, &cfg, &z0, 0.0, 1.0, &times).unwrap();
    let states = dynamics::to_fluid_trajectory(&m, &traj).unwrap();
    let whole = energy::blowup_monitor(&m, &traj.times, &states, None, 1e6).total_integral();
    let a = energy::blowup_monitor(&m, &traj.times[..6], &states[..6], None, 1e6).total_integral();
    let b = energy::blowup_monitor(&m, &traj.times[5..], &states[5..], None, 1e6).total_integral();
    assert!((whole - a - b).abs() <= 1e-12 * whole);
}

#[test]
fn backward_integration_inverts_forward() {
    let g = grid3(8, 6.0);
    let m = CapillarityModel::unit_normalized();
    let z0 = small_field(&g, 5, 0.01);
    let fwd = SolverConfig { dt: 0.01, scheme: Scheme::EtdRk4, defect_tolerance: None, ..Default::default() };
    let there = dynamics::evolve_z(&m, &fwd, &z0, 0.0, 0.5, &[]).unwrap().states.pop().unwrap();
    let back_cfg = SolverConfig { direction: Direction::Backward, ..fwd };
    let back = dynamics::evolve_z(&m, &back_cfg, &there, 0.5, 0.0, &[]).unwrap().states.pop().unwrap();
    assert!(back.sub(&z0).unwrap().l2_norm() <= 1e-9 * z0.l2_norm());
}

#[test]
fn equilibrium_is_fixed() {
    let g = grid3(8, 6.0);
    let m = CapillarityModel::unit_normalized();
    let eq = FluidState::equilibrium(&g);
    assert_eq!(madelung::to_complex(&m, &eq).unwrap().z.l2_norm(), 0.0);
    let pc = SolverConfig { dt: 0.01, scheme: Scheme::Rk4Pseudospectral, defect_tolerance: None, ..Default::default() };
    let after = dynamics::evolve_primitive(&m, &pc, &eq, 0.0, 0.1, &[]).unwrap().states.pop().unwrap();
    assert!(after.rho.sub(&eq.rho).unwrap().l2_norm() == 0.0);
    let zero = SpectralField::zeros(&g, Representation::Physical);
    let zc = SolverConfig { scheme: Scheme::EtdRk4, ..pc };
    let z1 = dynamics::evolve_z(&m, &zc, &zero, 0.0, 0.1, &[]).unwrap().states.pop().unwrap();
    assert_eq!(z1.l2_norm(), 0.0);
}
