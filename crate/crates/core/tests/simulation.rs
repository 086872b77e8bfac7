use proptest::prelude::*;

use sbstab_core::model::{validate_spec, Nonlinearity, ProblemSpec, ValidatedProblem};
use sbstab_core::simulate::{InitialCondition, NormKind, SimulationOptions, Simulator, Startup};
use sbstab_core::spectral::{project, Spectrum};
use sbstab_core::synthesis::{build_gains, GainSet};

fn setup(c: f64, m: usize, period: f64, horizon: usize) -> (ValidatedProblem, Spectrum, GainSet, SimulationOptions) {
    let p = validate_spec(&ProblemSpec::new(m, Nonlinearity::LinearOnly { a: c }, period, 1.0)).unwrap();
    let s = Spectrum::compute(&p).unwrap();
    let gammas: Vec<f64> = (0..s.unstable_count()).map(|k| 2.0 + k as f64).collect();
    let g = build_gains(&s, &gammas, period).unwrap();
    let opts = SimulationOptions::for_problem(&p, horizon);
    (p, s, g, opts)
}

fn random(sim: &Simulator, seed: u64) -> Vec<f64> {
    InitialCondition::Random {
        seed,
        modes: 10,
        amplitude: 1.0,
        norm: NormKind::L2,
    }
    .realize(sim)
    .unwrap()
}

#[test]
fn identical_inputs_give_identical_trajectories() {
    let (p, s, g, opts) = setup(15.0, 64, 0.2, 10);
    let sim = Simulator::new(&p, &s, opts).unwrap();
    let w0 = random(&sim, 3);
    let a = sim.linear_closed_loop(&g, &w0).unwrap();
    let b = sim.linear_closed_loop(&g, &w0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.metadata.problem_hash, b.metadata.problem_hash);
}

#[test]
fn stable_mode_decays_at_its_eigenvalue() {
    let (p, s, _, mut opts) = setup(15.0, 200, 0.1, 3);
    opts.snapshot_stride = 4;
    let sim = Simulator::new(&p, &s, opts).unwrap();
    let phi2 = InitialCondition::Mode {
        index: 2,
        amplitude: 1.0,
    }
    .realize(&sim)
    .unwrap();
    let tr = sim.open_loop(&phi2).unwrap();
    let rate = sbstab_core::analysis::fit_exponential(&tr.times, &tr.l2_norms, 0.0).unwrap().rate;
    // 4 pi^2 - 15
    assert!((rate - 24.478).abs() < 0.01 * 24.478, "{rate}");
    assert!((rate - s.lambda(1)).abs() < 1e-3 * s.lambda(1), "{rate} vs {}", s.lambda(1));
}

#[test]
fn single_mode_sample_multiplier_matches_target() {
    let (p, s, g, opts) = setup(15.0, 200, 0.2, 12);
    let sim = Simulator::new(&p, &s, opts).unwrap();
    let phi1 = InitialCondition::Mode {
        index: 1,
        amplitude: 1.0,
    }
    .realize(&sim)
    .unwrap();
    let tr = sim.linear_closed_loop(&g, &phi1).unwrap();
    let coords: Vec<f64> = tr.sample_states().map(|y| project(y, &s, 1).0[0]).collect();
    let ratio = coords[11] / coords[10];
    assert!((ratio - (-0.4f64).exp()).abs() < 1e-3, "{ratio}");
}

#[test]
fn zero_state_stays_zero_in_closed_loop() {
    let (p, s, g, opts) = setup(15.0, 40, 0.2, 5);
    let sim = Simulator::new(&p, &s, opts).unwrap();
    let tr = sim.linear_closed_loop(&g, &vec![0.0; 40]).unwrap();
    assert!(tr.l2_norms.iter().all(|n| *n == 0.0));
    assert!(tr.schedule.held_values.iter().all(|u| *u == 0.0));
}

#[test]
fn decomposition_relations() {
    let (p, s, g, opts) = setup(15.0, 100, 0.2, 10);
    let sim = Simulator::new(&p, &s, opts).unwrap();
    let tr = sim.linear_closed_loop(&g, &random(&sim, 5)).unwrap();
    let z = sim.decompose_z(&tr, &g).unwrap();
    assert_eq!(z.sample_times.len(), 11);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    assert!(max(&z.jump_residuals) < 1e-9, "{:e}", max(&z.jump_residuals));
    assert!(max(&z.half_residuals) < 1e-3);
    assert!(max(&z.doubling_residuals) < 1e-3);
}

#[test]
fn plain_crank_nicolson_agrees_at_moderate_period() {
    let (p, s, g, opts) = setup(15.0, 100, 0.2, 10);
    let cn = SimulationOptions {
        startup: Startup::CrankNicolson,
        ..opts.clone()
    };
    let a = Simulator::new(&p, &s, opts).unwrap();
    let b = Simulator::new(&p, &s, cn).unwrap();
    let w0 = random(&a, 9);
    let ta = a.linear_closed_loop(&g, &w0).unwrap();
    let tb = b.linear_closed_loop(&g, &w0).unwrap();
    let last = ta.len() - 1;
    let rel = (ta.l2_norms[last] - tb.l2_norms[last]).abs() / ta.l2_norms[last];
    assert!(rel < 1e-2, "{rel}");
}

#[test]
fn semilinear_blow_up_is_recorded() {
    let p = validate_spec(&ProblemSpec::new(64, Nonlinearity::Fisher { a: 15.0 }, 0.2, 1.0)).unwrap();
    let s = Spectrum::compute(&p).unwrap();
    let g = build_gains(&s, &[2.0], 0.2).unwrap();
    let sim = Simulator::new(&p, &s, SimulationOptions::for_problem(&p, 20)).unwrap();
    let y0 = InitialCondition::Random {
        seed: 1,
        modes: 10,
        amplitude: 50.0,
        norm: NormKind::Sobolev,
    }
    .realize(&sim)
    .unwrap();
    let tr = sim.semilinear_closed_loop(&g, &y0).unwrap();
    let b = tr.blow_up.expect("large data should leave the basin");
    assert!(b.time > 0.0 && b.time < 4.0);
    assert_eq!(tr.times.len(), tr.l2_norms.len());
}

#[test]
fn open_loop_growth_is_data_not_error() {
    let (p, s, _, mut opts) = setup(15.0, 64, 0.5, 20);
    opts.guard = 1e3;
    let sim = Simulator::new(&p, &s, opts).unwrap();
    let tr = sim.open_loop(&random(&sim, 1)).unwrap();
    assert!(tr.blow_up.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_closed_loop_superposes(a in -2.0f64..2.0, b in -2.0f64..2.0, s1 in 0u64..50, s2 in 50u64..100) {
        let (p, s, g, opts) = setup(15.0, 32, 0.2, 4);
        let sim = Simulator::new(&p, &s, opts).unwrap();
        let w1 = random(&sim, s1);
        let w2 = random(&sim, s2);
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        let t1 = sim.linear_closed_loop(&g, &w1).unwrap();
        let t2 = sim.linear_closed_loop(&g, &w2).unwrap();
        let tm = sim.linear_closed_loop(&g, &mix).unwrap();
        for j in 0..tm.len() {
            for i in 0..32 {
                let want = a * t1.states[j][i] + b * t2.states[j][i];
                prop_assert!((tm.states[j][i] - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn closed_loop_is_homogeneous(alpha in 1e-6f64..1e3, seed in 0u64..100) {
        let (p, s, g, opts) = setup(95.0, 32, 0.05, 3);
        let sim = Simulator::new(&p, &s, opts).unwrap();
        let w = random(&sim, seed);
        let scaled: Vec<f64> = w.iter().map(|v| alpha * v).collect();
        let t1 = sim.linear_closed_loop(&g, &w).unwrap();
        let t2 = sim.linear_closed_loop(&g, &scaled).unwrap();
        for (n1, n2) in t1.l2_norms.iter().zip(&t2.l2_norms) {
            prop_assert!((alpha * n1 - n2).abs() <= 1e-9 * n2.abs().max(1e-300));
        }
    }
}
