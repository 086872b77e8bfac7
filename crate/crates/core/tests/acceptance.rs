//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;

use sbstab_core::analysis::{check_contraction, check_modal_recursion, fit_exponential, lift_modal_defect};
use sbstab_core::model::{validate_spec, Nonlinearity, ProblemSpec, ValidatedProblem};
use sbstab_core::simulate::{InitialCondition, NormKind, SimulationOptions, Simulator, Trajectory};
use sbstab_core::spectral::Spectrum;
use sbstab_core::synthesis::{build_gains, continuous_limit, GainSet};

const SEED: u64 = 20;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn problem(c: f64, m: usize, period: f64) -> ValidatedProblem {
    validate_spec(&ProblemSpec::new(m, Nonlinearity::LinearOnly { a: c }, period, 1.0)).unwrap()
}

fn gammas(c: f64) -> Vec<f64> {
    if c == 15.0 {
        vec![2.0]
    } else {
        vec![2.0, 3.0, 4.0]
    }
}

fn gains(c: f64, m: usize, period: f64) -> (Spectrum, GainSet) {
    let p = problem(c, m, period);
    let s = Spectrum::compute(&p).unwrap();
    let g = build_gains(&s, &gammas(c), period).unwrap();
    (s, g)
}

fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

/// Linear closed loop for `c = 15` from a seeded random state, with the
/// quantities criteria 3, 4 and 6 need.
struct LinearRun {
    trajectory: Trajectory,
    recursion: f64,
    half: f64,
}

fn linear_run(m: usize, substeps: usize, period: f64, t_end: f64) -> LinearRun {
    let p = problem(15.0, m, period).with_substeps(substeps).unwrap();
    let s = Spectrum::compute(&p).unwrap();
    let g = build_gains(&s, &[2.0], period).unwrap();
    let horizon = (t_end / period).round() as usize;
    let sim = Simulator::new(&p, &s, SimulationOptions::for_problem(&p, horizon)).unwrap();
    let w0 = InitialCondition::Random {
        seed: SEED,
        modes: 10,
        amplitude: 1.0,
        norm: NormKind::L2,
    }
    .realize(&sim)
    .unwrap();
    let trajectory = sim.linear_closed_loop(&g, &w0).unwrap();
    let recursion = check_modal_recursion(&g, &s, &trajectory).unwrap().max_step_residual;
    let z = sim.decompose_z(&trajectory, &g).unwrap();
    let half = z.half_residuals.iter().copied().fold(0.0, f64::max);
    LinearRun {
        trajectory,
        recursion,
        half,
    }
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_rounded = 0.0f64;
    for c in [15.0, 95.0] {
        for t in [0.05, 0.2, 1.0] {
            let (_, g) = gains(c, 200, t);
            worst = worst.max(g.identity_residual());
            worst_rounded = worst_rounded.max(g.identity_residual_f64());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max residual {worst:.3e} <= 1e-10 (with f64-rounded gains: {worst_rounded:.3e})"),
    )
}

fn criterion_2() -> Outcome {
    let mut ok = true;
    let mut worst_ratio = 0.0f64;
    let mut single_gap = 0.0f64;
    for c in [15.0, 95.0] {
        for t in [0.05, 0.2, 1.0] {
            let (_, g) = gains(c, 200, t);
            let chk = check_contraction(&g);
            ok &= chk.passed;
            worst_ratio = worst_ratio.max(chk.lambda_max / chk.bound);
            if c == 15.0 {
                single_gap = single_gap.max((chk.lambda_max / chk.bound - 1.0).abs());
            }
        }
    }
    let passed = ok && single_gap <= 1e-12;
    outcome(
        passed,
        format!("max lambda_max/bound = {worst_ratio:.15}, single-mode |ratio - 1| = {single_gap:.3e}"),
    )
}

fn criterion_3(coarse: &[LinearRun; 2], fine: &[LinearRun; 2]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for ((c, f), t) in coarse.iter().zip(fine).zip([0.05, 0.2]) {
        let ratio = c.recursion / f.recursion;
        passed &= c.recursion <= 5e-3 && ratio >= 3.0;
        parts.push(format!("T={t}: {:.3e} (M=200), ratio {ratio:.3}", c.recursion));
    }
    outcome(passed, parts.join("; "))
}

fn criterion_4(run: &LinearRun) -> Outcome {
    let tr = &run.trajectory;
    let closed = fit_exponential(&tr.times, &tr.l2_norms, 0.4).unwrap();
    let p = problem(15.0, 200, 0.2);
    let s = Spectrum::compute(&p).unwrap();
    let sim = Simulator::new(&p, &s, SimulationOptions::for_problem(&p, 5)).unwrap();
    let phi1 = InitialCondition::Mode {
        index: 1,
        amplitude: 1.0,
    }
    .realize(&sim)
    .unwrap();
    let open = sim.open_loop(&phi1).unwrap();
    let growth = -fit_exponential(&open.times, &open.l2_norms, 0.0).unwrap().rate;
    let oracle = 15.0 - std::f64::consts::PI.powi(2);
    let rel = (growth - oracle).abs() / oracle;
    outcome(
        closed.rate >= 0.9 && rel <= 0.05 && tr.times.last().copied() >= Some(10.0 - 1e-9),
        format!(
            "closed-loop rate {:.4} on [0.4, 10]; open-loop growth {growth:.4} vs {oracle:.4} ({:.2}%)",
            closed.rate,
            rel * 100.0
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for c in [15.0, 95.0] {
        let (s1, g1) = gains(c, 200, 0.2);
        let (s2, g2) = gains(c, 400, 0.2);
        let d1 = lift_modal_defect(&s1, &g1).unwrap();
        let d2 = lift_modal_defect(&s2, &g2).unwrap();
        let ratio = d1 / d2;
        passed &= d1 <= 1e-2 && (3.5..=4.5).contains(&ratio);
        parts.push(format!("c={c}: {d1:.3e}, ratio {ratio:.3}"));
    }
    outcome(passed, parts.join("; "))
}

fn criterion_6(coarse: &[LinearRun; 2], fine: &[LinearRun; 2]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for ((c, f), t) in coarse.iter().zip(fine).zip([0.05, 0.2]) {
        passed &= c.half <= 1e-2 && f.half < c.half;
        parts.push(format!("T={t}: {:.3e} (M=200) -> {:.3e} (M=400)", c.half, f.half));
    }
    outcome(passed, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let p = problem(15.0, 200, 0.2);
    let s = Spectrum::compute(&p).unwrap();
    let limit = continuous_limit(&s, &[2.0]).unwrap();
    let gap = |t: f64| relative_distance(build_gains(&s, &[2.0], t).unwrap().gain_row(), limit.gain_row());
    let small = gap(1e-6);
    let ratio = gap(1e-2) / gap(5e-3);
    outcome(
        small <= 1e-5 && (1.6..=2.4).contains(&ratio),
        format!("gap at T=1e-6 {small:.4e}; gap ratio 1e-2 : 5e-3 = {ratio:.4}"),
    )
}

fn criterion_8() -> Outcome {
    let p = problem(15.0, 800, 2.0);
    let s = Spectrum::compute(&p).unwrap();
    let g = build_gains(&s, &[2.0], 2.0).unwrap();
    let sim = Simulator::new(&p, &s, SimulationOptions::for_problem(&p, 10)).unwrap();
    let w0 = InitialCondition::Random {
        seed: SEED,
        modes: 10,
        amplitude: 1.0,
        norm: NormKind::L2,
    }
    .realize(&sim)
    .unwrap();
    match sim.linear_closed_loop(&g, &w0) {
        Ok(tr) => {
            let r = fit_exponential(&tr.times, &tr.l2_norms, 4.0).unwrap();
            outcome(r.rate > 0.0, format!("M=800: fitted rate {:.4} on [4, 20]", r.rate))
        }
        Err(e) => outcome(false, format!("M=800: {e}")),
    }
}

fn criterion_9() -> Outcome {
    let p = validate_spec(&ProblemSpec::new(200, Nonlinearity::Fisher { a: 15.0 }, 0.2, 1.0)).unwrap();
    let s = Spectrum::compute(&p).unwrap();
    let g = build_gains(&s, &[2.0], 0.2).unwrap();
    let sim = Simulator::new(&p, &s, SimulationOptions::for_problem(&p, 50)).unwrap();
    let run = |amplitude: f64| {
        let y0 = InitialCondition::Random {
            seed: SEED,
            modes: 10,
            amplitude,
            norm: NormKind::Sobolev,
        }
        .realize(&sim)
        .unwrap();
        sim.semilinear_closed_loop(&g, &y0)
    };
    let small = run(0.01).unwrap();
    let rate = fit_exponential(&small.times, &small.sobolev_norms, 0.4).unwrap().rate;
    let large = run(50.0);
    let large_desc = match &large {
        Ok(tr) => match tr.blow_up {
            Some(b) => format!("blow-up reported at t = {:.4}", b.time),
            None => format!("no blow-up, final norm {:.3e}", tr.sobolev_norms.last().unwrap()),
        },
        Err(e) => format!("error {e}"),
    };
    let large_ok = large.is_ok_and(|tr| tr.blow_up.is_some() || tr.sobolev_norms.iter().all(|v| v.is_finite()));
    outcome(
        small.blow_up.is_none() && rate >= 0.9 && large_ok,
        format!("amplitude 0.01: rate {rate:.4}; amplitude 50: {large_desc}"),
    )
}

/// Coarse-grid behaviour of the configurations the criteria avoid, printed for reference.
fn coarse_grid_notes() -> Vec<String> {
    let mut notes = Vec::new();
    for (c, t, horizon) in [(15.0, 2.0, 10), (95.0, 0.05, 400)] {
        let p = problem(c, 200, t);
        let s = Spectrum::compute(&p).unwrap();
        let g = build_gains(&s, &gammas(c), t).unwrap();
        let sim = Simulator::new(&p, &s, SimulationOptions::for_problem(&p, horizon)).unwrap();
        let w0 = InitialCondition::Random {
            seed: SEED,
            modes: 10,
            amplitude: 1.0,
            norm: NormKind::L2,
        }
        .realize(&sim)
        .unwrap();
        let tr = sim.linear_closed_loop_recorded(&g, &w0).unwrap();
        let desc = match tr.blow_up {
            Some(b) => format!("guard exceeded at t = {:.3}", b.time),
            None => {
                let r = fit_exponential(&tr.times, &tr.l2_norms, 2.0 * t).unwrap();
                format!("fitted rate {:.4}", r.rate)
            }
        };
        notes.push(format!("c={c}, T={t}, M=200 linear closed loop: {desc}"));
    }
    notes
}

fn main() -> ExitCode {
    let started = std::time::Instant::now();
    let coarse = [linear_run(200, 64, 0.05, 10.0), linear_run(200, 64, 0.2, 10.0)];
    let fine = [linear_run(400, 128, 0.05, 10.0), linear_run(400, 128, 0.2, 10.0)];
    let results = [
        ("1 closed-loop matrix identity", criterion_1()),
        ("2 contraction bound", criterion_2()),
        ("3 sampled-trajectory recursion", criterion_3(&coarse, &fine)),
        ("4 linear closed-loop decay and open-loop growth", criterion_4(&coarse[1])),
        ("5 lifting identity", criterion_5()),
        ("6 half identity", criterion_6(&coarse, &fine)),
        ("7 small-period limit", criterion_7()),
        ("8 stabilization at T = 2", criterion_8()),
        ("9 semilinear local decay", criterion_9()),
    ];
    let mut all = true;
    for (name, o) in &results {
        all &= o.passed;
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    for n in coarse_grid_notes() {
        println!("note: {n}");
    }
    println!("acceptance finished in {:.1}s", started.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
