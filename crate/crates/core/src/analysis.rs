//! Runtime verification of the closed-loop identities, decay-rate fits,
//! parameter sweeps and the assembled verification report.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifting::{modal_identity_defects, UnitLifts};
use crate::model::ValidatedProblem;
use crate::simulate::{gains_hash, problem_hash, InitialCondition, NormKind, SimulationOptions, Simulator, Trajectory};
use crate::spectral::{project, Spectrum};
use crate::synthesis::{build_gains, continuous_limit, GainSet};

/// Minimum number of snapshots a decay fit needs inside its window.
pub const MIN_FIT_POINTS: usize = 10;
/// Relative slack on the contraction bound.
pub const CONTRACTION_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecursionCheck {
    /// `||e^{-A_N T} - I_N b g^T - sum_k e^{-gamma_k T} B_k B||_F / ||sum_k e^{-gamma_k T} B_k B||_F`.
    pub matrix_residual: f64,
    /// Per interval `||y^N((i+1)T) - M y^N(iT)|| / ||y^N(iT)||`.
    pub step_residuals: Vec<f64>,
    pub max_step_residual: f64,
}

pub fn check_modal_recursion(gains: &GainSet, spectrum: &Spectrum, trajectory: &Trajectory) -> Result<RecursionCheck> {
    let n = gains.unstable_count();
    if spectrum.unstable_count() != n {
        return Err(Error::DimensionMismatch {
            expected: spectrum.unstable_count(),
            found: n,
        });
    }
    let m = gains.closed_loop_matrix();
    let samples: Vec<Vec<f64>> = trajectory
        .sample_states()
        .map(|y| project(y, spectrum, n).0)
        .collect();
    let step_residuals: Vec<f64> = samples
        .windows(2)
        .filter_map(|w| {
            let prev = nalgebra::DVector::from_column_slice(&w[0]);
            let next = nalgebra::DVector::from_column_slice(&w[1]);
            let scale = prev.norm();
            (scale > 0.0).then(|| (next - &m * prev).norm() / scale)
        })
        .collect();
    let max_step_residual = step_residuals.iter().copied().fold(0.0, f64::max);
    Ok(RecursionCheck {
        matrix_residual: gains.identity_residual(),
        step_residuals,
        max_step_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionCheck {
    pub lambda_max: f64,
    pub bound: f64,
    pub passed: bool,
}

pub fn check_contraction(gains: &GainSet) -> ContractionCheck {
    let lambda_max = gains.contraction_lambda_max();
    let bound = gains.contraction_bound();
    ContractionCheck {
        lambda_max,
        bound,
        passed: lambda_max <= bound * (1.0 + CONTRACTION_SLACK),
    }
}

/// Least-squares fit of `log norm = a - rate * t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    /// Decay rate; negative for growth.
    pub rate: f64,
    pub std_error: f64,
    /// Normal-approximation 95% interval.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub residual_rms: f64,
    pub points: usize,
    pub t_start: f64,
    pub t_end: f64,
}

pub fn fit_exponential(times: &[f64], norms: &[f64], t_start: f64) -> Result<RateEstimate> {
    fit_window(times, norms, t_start, f64::INFINITY)
}

/// Fit restricted to `t_start <= t <= t_end`.
pub fn fit_window(times: &[f64], norms: &[f64], t_start: f64, t_end: f64) -> Result<RateEstimate> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t >= t_start - 1e-12 && **t <= t_end + 1e-12)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::DegenerateFit(format!(
            "{} snapshots in the fit window, need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| *v <= 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateFit(format!("norm {v} at t = {t} cannot be logged")));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all snapshots share one time".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1.ln() - lm)).sum();
    let slope = sxy / sxx;
    let intercept = lm - slope * tm;
    let ssr: f64 = pts
        .iter()
        .map(|p| (p.1.ln() - intercept - slope * p.0).powi(2))
        .sum();
    let std_error = (ssr / (n - 2.0) / sxx).sqrt();
    let rate = -slope;
    Ok(RateEstimate {
        rate,
        std_error,
        ci_low: rate - 1.96 * std_error,
        ci_high: rate + 1.96 * std_error,
        residual_rms: (ssr / n).sqrt(),
        points: pts.len(),
        t_start,
        t_end: pts.last().map(|p| p.0).unwrap_or(t_start),
    })
}

pub fn fit_decay_rate(trajectory: &Trajectory, norm: NormKind, t_start: f64) -> Result<RateEstimate> {
    let values = match norm {
        NormKind::L2 => &trajectory.l2_norms,
        NormKind::Sobolev => &trajectory.sobolev_norms,
    };
    fit_exponential(&trajectory.times, values, t_start)
}

/// Default fit start: two sampling periods.
pub fn default_fit_start(period: f64) -> f64 {
    2.0 * period
}

/// Largest relative lifting defect `|<psi_k, phi_i> + Lambda_ik b_i| / |Lambda_ik b_i|`.
pub fn lift_modal_defect(spectrum: &Spectrum, gains: &GainSet) -> Result<f64> {
    let lifts = UnitLifts::new(spectrum, gains)?;
    Ok((0..lifts.len())
        .flat_map(|k| modal_identity_defects(spectrum, gains, lifts.get(k)))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOptions {
    /// Simulated time per run; the interval count is `ceil(horizon_time / T)`.
    pub horizon_time: f64,
    pub initial: InitialCondition,
    pub simulation: SimulationOptions,
    pub norm: NormKind,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            horizon_time: 20.0,
            initial: InitialCondition::Random {
                seed: 1,
                modes: 10,
                amplitude: 1.0,
                norm: NormKind::L2,
            },
            simulation: SimulationOptions::default(),
            norm: NormKind::L2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub period: f64,
    pub gammas: Vec<f64>,
    pub gain_row: Vec<f64>,
    /// `||g(T) - g0|| / ||g0||`.
    pub gain_distance: Option<f64>,
    pub contraction_bound: Option<f64>,
    pub condition_number: Option<f64>,
    pub coercivity: Option<f64>,
    pub rate: Option<f64>,
    pub blew_up: bool,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(period: f64, gammas: Vec<f64>, err: &Error) -> SweepRow {
        SweepRow {
            period,
            gammas,
            gain_row: Vec::new(),
            gain_distance: None,
            contraction_bound: None,
            condition_number: None,
            coercivity: None,
            rate: None,
            blew_up: false,
            error: Some(err.to_string()),
        }
    }
}

fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn sweep_row(problem: &ValidatedProblem, spectrum: &Spectrum, gammas: &[f64], opts: &SweepOptions) -> SweepRow {
    let period = problem.period();
    let result = (|| -> Result<SweepRow> {
        let gains = build_gains(spectrum, gammas, period)?;
        let limit = continuous_limit(spectrum, gammas)?;
        let horizon = (opts.horizon_time / period).ceil().max(1.0) as usize;
        let sim_opts = SimulationOptions {
            horizon,
            ..opts.simulation.clone()
        };
        let sim = Simulator::new(problem, spectrum, sim_opts)?;
        let w0 = opts.initial.realize(&sim)?;
        let coercivity = (0..gains.unstable_count())
            .map(|k| crate::lifting::coercivity_check(spectrum, Some(&gains), k))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let (rate, blew_up) = match sim.linear_closed_loop(&gains, &w0) {
            Ok(traj) => (fit_decay_rate(&traj, opts.norm, default_fit_start(period)).ok().map(|r| r.rate), false),
            Err(Error::UnstableStep { .. }) => (None, true),
            Err(e) => return Err(e),
        };
        Ok(SweepRow {
            period,
            gammas: gammas.to_vec(),
            gain_distance: Some(relative_distance(gains.gain_row(), limit.gain_row())),
            gain_row: gains.gain_row().to_vec(),
            contraction_bound: Some(gains.contraction_bound()),
            condition_number: Some(gains.condition_number()),
            coercivity: Some(coercivity),
            rate,
            blew_up,
            error: None,
        })
    })();
    result.unwrap_or_else(|e| SweepRow::failed(period, gammas.to_vec(), &e))
}

/// Gains, distance to the continuous limit and fitted closed-loop rate per `T`.
/// Rows come back in input order regardless of scheduling.
pub fn sweep_sampling_period(problem: &ValidatedProblem, periods: &[f64], opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if periods.is_empty() {
        return Err(Error::InvalidArgument("empty sampling-period list".into()));
    }
    let spectrum = Spectrum::compute(problem)?;
    let gammas = problem.gammas_for(spectrum.unstable_count());
    Ok(periods
        .par_iter()
        .map(|&t| match problem.with_period(t) {
            Ok(p) => sweep_row(&p, &spectrum, &gammas, opts),
            Err(e) => SweepRow::failed(t, gammas.clone(), &e),
        })
        .collect())
}

/// Same as [`sweep_sampling_period`] but over `gamma_1`, with `gamma_k = gamma_1 + (k - 1)`.
pub fn sweep_gamma(problem: &ValidatedProblem, gamma_firsts: &[f64], opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if gamma_firsts.is_empty() {
        return Err(Error::InvalidArgument("empty gamma list".into()));
    }
    let spectrum = Spectrum::compute(problem)?;
    let n = spectrum.unstable_count();
    Ok(gamma_firsts
        .par_iter()
        .map(|&g1| {
            let gammas: Vec<f64> = (0..n).map(|k| g1 + k as f64).collect();
            sweep_row(problem, &spectrum, &gammas, opts)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinRow {
    /// Initial deviation size in the surrogate norm.
    pub amplitude: f64,
    pub decayed: bool,
    pub rate: Option<f64>,
    pub blow_up_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinReport {
    pub rows: Vec<BasinRow>,
    /// Largest tested amplitude whose run decayed.
    pub largest_decaying: Option<f64>,
    /// Bracket `[decays, fails]` refined by bisection, if one was found.
    pub bracket: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinOptions {
    pub seed: u64,
    pub simulation: SimulationOptions,
    pub bisection_steps: usize,
}

impl Default for BasinOptions {
    fn default() -> Self {
        BasinOptions {
            seed: 1,
            simulation: SimulationOptions::default(),
            bisection_steps: 20,
        }
    }
}

fn basin_run(sim: &Simulator, gains: &GainSet, seed: u64, amplitude: f64) -> Result<BasinRow> {
    let w0 = InitialCondition::Random {
        seed,
        modes: 10,
        amplitude,
        norm: NormKind::Sobolev,
    }
    .realize(sim)?;
    let y0: Vec<f64> = w0.iter().zip(sim.problem().equilibrium()).map(|(w, e)| w + e).collect();
    let traj = sim.semilinear_closed_loop(gains, &y0)?;
    if let Some(b) = traj.blow_up {
        return Ok(BasinRow {
            amplitude,
            decayed: false,
            rate: None,
            blow_up_time: Some(b.time),
        });
    }
    if amplitude == 0.0 {
        return Ok(BasinRow {
            amplitude,
            decayed: true,
            rate: None,
            blow_up_time: None,
        });
    }
    let rate = fit_decay_rate(&traj, NormKind::Sobolev, default_fit_start(sim.problem().period()))
        .ok()
        .map(|r| r.rate);
    Ok(BasinRow {
        amplitude,
        decayed: rate.is_some_and(|r| r > 0.0),
        rate,
        blow_up_time: None,
    })
}

/// Semilinear closed-loop runs over initial amplitudes, plus a bisection
/// between the largest decaying amplitude and the next failing one.
pub fn estimate_basin(
    problem: &ValidatedProblem,
    gains: &GainSet,
    amplitudes: &[f64],
    opts: &BasinOptions,
) -> Result<BasinReport> {
    if amplitudes.is_empty() {
        return Err(Error::InvalidArgument("empty amplitude list".into()));
    }
    let spectrum = Spectrum::compute(problem)?;
    let sim = Simulator::new(problem, &spectrum, opts.simulation.clone())?;
    let rows = amplitudes
        .par_iter()
        .map(|&a| basin_run(&sim, gains, opts.seed, a))
        .collect::<Result<Vec<_>>>()?;
    let largest_decaying = rows
        .iter()
        .filter(|r| r.decayed)
        .map(|r| r.amplitude)
        .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.max(a))));
    let mut bracket = None;
    if let Some(lo) = largest_decaying {
        let hi = rows
            .iter()
            .filter(|r| !r.decayed && r.amplitude > lo)
            .map(|r| r.amplitude)
            .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.min(a))));
        if let Some(mut hi) = hi {
            let mut lo = lo;
            for _ in 0..opts.bisection_steps.min(20) {
                let mid = 0.5 * (lo + hi);
                if basin_run(&sim, gains, opts.seed, mid)?.decayed {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            bracket = Some((lo, hi));
        }
    }
    Ok(BasinReport {
        rows,
        largest_decaying,
        bracket,
    })
}

/// One named identity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// The relation being tested, written out.
    pub identity: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub note: Option<String>,
}

impl Check {
    /// Passes iff `residual <= tolerance`. Tolerances below the double
    /// precision unit roundoff are treated as unattainable.
    pub fn at_most(name: &str, identity: &str, residual: f64, tolerance: f64) -> Check {
        let attainable = tolerance >= f64::EPSILON;
        Check {
            name: name.into(),
            identity: identity.into(),
            residual,
            tolerance,
            passed: attainable && residual <= tolerance,
            note: (!attainable).then(|| "tolerance is below double-precision roundoff".to_string()),
        }
    }

    /// Passes iff `value >= threshold`; `residual` holds the value.
    pub fn at_least(name: &str, identity: &str, value: f64, threshold: f64) -> Check {
        Check {
            name: name.into(),
            identity: identity.into(),
            residual: value,
            tolerance: threshold,
            passed: value >= threshold,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Check {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRecord {
    pub name: String,
    pub estimate: RateEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constant {
    pub name: String,
    pub value: f64,
}

/// Append-only collection of checks, fitted rates and measured constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    pub problem_hash: String,
    pub gains_hash: Option<String>,
    checks: Vec<Check>,
    rates: Vec<RateRecord>,
    constants: Vec<Constant>,
    warnings: Vec<String>,
    sweep: Vec<SweepRow>,
}

impl VerificationReport {
    pub fn new(problem_hash: String) -> Self {
        VerificationReport {
            problem_hash,
            ..Default::default()
        }
    }

    pub fn push_check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn push_rate(&mut self, name: &str, estimate: RateEstimate) {
        self.rates.push(RateRecord {
            name: name.into(),
            estimate,
        });
    }

    pub fn push_constant(&mut self, name: &str, value: f64) {
        self.constants.push(Constant {
            name: name.into(),
            value,
        });
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn push_sweep(&mut self, rows: Vec<SweepRow>) {
        self.sweep.extend(rows);
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    pub fn rates(&self) -> &[RateRecord] {
        &self.rates
    }

    pub fn constants(&self) -> &[Constant] {
        &self.constants
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn sweep(&self) -> &[SweepRow] {
        &self.sweep
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub orthonormality: f64,
    pub resolution: f64,
    pub identity: f64,
    pub contraction: f64,
    pub lift: f64,
    pub lift_order: f64,
    pub half: f64,
    pub jump: f64,
    pub doubling: f64,
    pub recursion: f64,
    pub recursion_order: f64,
    pub rate_fraction: f64,
    /// Allowed `|gap(2T)/gap(T) - 2|` for the first-order approach to the continuous gains.
    pub small_period_order: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            orthonormality: 1e-12,
            resolution: 1e-10,
            identity: 1e-10,
            contraction: CONTRACTION_SLACK,
            lift: 1e-2,
            lift_order: 3.0,
            half: 1e-2,
            jump: 1e-6,
            doubling: 1e-2,
            recursion: 5e-3,
            recursion_order: 3.0,
            rate_fraction: 0.9,
            small_period_order: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub tolerances: Tolerances,
    /// Extra grid doublings beyond the first (the suite always runs `M` and `2M`).
    pub extra_refinements: usize,
    pub horizon: usize,
    pub seed: u64,
    pub simulation: SimulationOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tolerances: Tolerances::default(),
            extra_refinements: 0,
            horizon: 25,
            seed: 1,
            simulation: SimulationOptions::default(),
        }
    }
}

const IDENT_ORTHO: &str = "<phi_i, phi_j>_h = delta_ij";
const IDENT_RESOLUTION: &str = "(sum_k B_k) B = I";
const IDENT_CLOSED_LOOP: &str = "e^{-A_N T} - I_N b g^T = sum_k e^{-gamma_k T} B_k B";
const IDENT_CONTRACTION: &str = "lambda_max(B^{1/2} (sum_k e^{-gamma_k T} B_k) B^{1/2}) <= e^{-gamma_1 T}";
const IDENT_LIFT: &str = "<D_{gamma_k} v, phi_i>_h = -Lambda_ik v b_i";
const IDENT_HALF: &str = "Q_N y(iT) = Q_N z(iT) / 2";
const IDENT_JUMP: &str = "z(iT) = z(iT-) + sum_k h_k((i-1)T) - sum_k h_k(iT)";
const IDENT_DOUBLING: &str = "z^N(iT) = 2 z^N(iT-) - z^N((i-1)T)";
const IDENT_RECURSION: &str = "y^N((i+1)T) = sum_k e^{-gamma_k T} B_k B y^N(iT)";
const IDENT_DECAY: &str = "||y(t)|| <= C e^{-rho t} ||y(0)||";
const IDENT_LIMIT: &str = "g(T) -> g0 as T -> 0";

/// Grid-independent algebraic checks on a gain set: resolution of the
/// identity, the closed-loop matrix identity and the contraction bound.
pub fn synthesis_checks(gains: &GainSet, tol: &Tolerances) -> Vec<Check> {
    let contraction = check_contraction(gains);
    vec![
        Check::at_most(
            "synthesis.resolution_of_identity",
            IDENT_RESOLUTION,
            gains.resolution_residual(),
            tol.resolution,
        ),
        Check::at_most("synthesis.closed_loop_identity", IDENT_CLOSED_LOOP, gains.identity_residual(), tol.identity)
            .with_note(format!(
                "same residual with f64-rounded gains: {:.3e}",
                gains.identity_residual_f64()
            )),
        Check::at_most(
            "analysis.contraction",
            IDENT_CONTRACTION,
            (contraction.lambda_max / contraction.bound - 1.0).max(0.0),
            tol.contraction,
        )
        .with_note(format!(
            "lambda_max = {:.16e}, bound = {:.16e}",
            contraction.lambda_max, contraction.bound
        )),
    ]
}

/// Orthonormality of the computed modes.
pub fn spectral_check(spectrum: &Spectrum, tol: &Tolerances) -> Check {
    Check::at_most(
        "spectral.orthonormality",
        IDENT_ORTHO,
        spectrum.orthonormality_defect(),
        tol.orthonormality,
    )
}

/// Trajectory-level diagnostics on one grid.
#[derive(Debug, Clone, PartialEq)]
struct GridRun {
    m: usize,
    lift_defect: f64,
    recursion: Option<f64>,
    half: Option<f64>,
    jump: Option<f64>,
    doubling: Option<f64>,
    rate: Option<RateEstimate>,
    failure: Option<String>,
}

fn grid_run(problem: &ValidatedProblem, gammas: &[f64], opts: &VerifyOptions, substeps: usize) -> Result<GridRun> {
    let spectrum = Spectrum::compute(problem)?;
    let gains = build_gains(&spectrum, gammas, problem.period())?;
    let lift_defect = lift_modal_defect(&spectrum, &gains)?;
    let sim_opts = SimulationOptions {
        horizon: opts.horizon,
        substeps,
        ..opts.simulation.clone()
    };
    let sim = Simulator::new(problem, &spectrum, sim_opts)?;
    let w0 = InitialCondition::Random {
        seed: opts.seed,
        modes: 10,
        amplitude: 1.0,
        norm: NormKind::L2,
    }
    .realize(&sim)?;
    let mut run = GridRun {
        m: problem.grid_points(),
        lift_defect,
        recursion: None,
        half: None,
        jump: None,
        doubling: None,
        rate: None,
        failure: None,
    };
    match sim.linear_closed_loop(&gains, &w0) {
        Ok(traj) => {
            run.recursion = Some(check_modal_recursion(&gains, &spectrum, &traj)?.max_step_residual);
            let z = sim.decompose_z(&traj, &gains)?;
            let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
            run.half = Some(max(&z.half_residuals));
            run.jump = Some(max(&z.jump_residuals));
            run.doubling = Some(max(&z.doubling_residuals));
            run.rate = fit_decay_rate(&traj, NormKind::L2, default_fit_start(problem.period())).ok();
        }
        Err(Error::UnstableStep { time, norm }) => {
            run.failure = Some(format!("closed loop exceeded the guard at t = {time} (norm {norm:e})"));
        }
        Err(e) => return Err(e),
    }
    Ok(run)
}

/// Full identity suite on the problem's grid and its refinements.
pub fn verify_problem(problem: &ValidatedProblem, opts: &VerifyOptions) -> Result<VerificationReport> {
    let tol = &opts.tolerances;
    let mut report = VerificationReport::new(problem_hash(problem));
    let spectrum = Spectrum::compute(problem)?;
    report.push_check(spectral_check(&spectrum, tol));
    let n = spectrum.unstable_count();
    report.push_constant("unstable_modes", n as f64);
    report.push_constant("lambda_1", spectrum.lambda(0));
    if n == 0 {
        report.warn("no unstable modes below rho: the feedback vanishes and only spectral checks apply");
        return Ok(report);
    }
    let gammas = problem.gammas_for(n);
    let period = problem.period();
    let gains = build_gains(&spectrum, &gammas, period)?;
    report.gains_hash = Some(gains_hash(&gains));
    if gains.ill_conditioned() {
        report.warn(format!(
            "sum of B_k has condition number {:.3e}; gains were computed at {} bits",
            gains.condition_number(),
            gains.precision_bits()
        ));
    }
    report.push_constant("condition_number", gains.condition_number());
    report.push_constant("modal_constant_C", gains.modal_constant());
    report.push_constant("precision_bits", gains.precision_bits() as f64);

    for c in synthesis_checks(&gains, tol) {
        report.push_check(c);
    }

    let limit = continuous_limit(&spectrum, &gammas)?;
    let gap = |t: f64| -> Result<f64> {
        let g = GainSet::from_modal_data(spectrum.unstable_lambdas(), spectrum.unstable_fluxes(), &gammas, t)?;
        Ok(relative_distance(g.gain_row(), limit.gain_row()))
    };
    report.push_constant("small_period_gap_T1e-6", gap(1e-6)?);
    let order = gap(1e-2)? / gap(5e-3)?;
    report.push_check(
        Check::at_most("synthesis.small_period_order", IDENT_LIMIT, (order - 2.0).abs(), tol.small_period_order)
            .with_note(format!("gap(1e-2) / gap(5e-3) = {order:.6}")),
    );

    let base_substeps = opts.simulation.substeps.max(1);
    let runs = (0..=(1 + opts.extra_refinements))
        .into_par_iter()
        .map(|level| {
            let factor = 1usize << level;
            let p = problem.refined(problem.grid_points() * factor)?;
            grid_run(&p, &gammas, opts, base_substeps * factor)
        })
        .collect::<Result<Vec<_>>>()?;
    let base = &runs[0];
    let fine = &runs[1];
    for r in &runs {
        if let Some(f) = &r.failure {
            report.warn(format!("M = {}: {f}", r.m));
        }
    }
    let or_inf = |v: Option<f64>| v.unwrap_or(f64::INFINITY);

    report.push_check(Check::at_most("lifting.modal_identity", IDENT_LIFT, base.lift_defect, tol.lift));
    report.push_check(
        Check::at_least(
            "lifting.modal_identity_order",
            IDENT_LIFT,
            base.lift_defect / fine.lift_defect,
            tol.lift_order,
        )
        .with_note(format!("defect ratio between M = {} and M = {}", base.m, fine.m)),
    );
    report.push_check(Check::at_most("simulate.half_identity", IDENT_HALF, or_inf(base.half), tol.half));
    report.push_check(
        Check::at_least(
            "simulate.half_identity_refines",
            IDENT_HALF,
            or_inf(base.half) / or_inf(fine.half),
            1.0,
        )
        .with_note("ratio of residuals under one grid doubling"),
    );
    report.push_check(Check::at_most("simulate.jump_relation", IDENT_JUMP, or_inf(base.jump), tol.jump));
    report.push_check(Check::at_most(
        "simulate.doubling_relation",
        IDENT_DOUBLING,
        or_inf(base.doubling),
        tol.doubling,
    ));
    report.push_check(Check::at_most(
        "analysis.modal_recursion",
        IDENT_RECURSION,
        or_inf(base.recursion),
        tol.recursion,
    ));
    report.push_check(
        Check::at_least(
            "analysis.modal_recursion_order",
            IDENT_RECURSION,
            or_inf(base.recursion) / or_inf(fine.recursion),
            tol.recursion_order,
        )
        .with_note("grid and substeps doubled together"),
    );
    let rate = base.rate.map(|r| r.rate).unwrap_or(f64::NEG_INFINITY);
    report.push_check(Check::at_least(
        "analysis.decay_rate",
        IDENT_DECAY,
        rate,
        tol.rate_fraction * problem.rate(),
    ));
    for r in &runs {
        if let Some(est) = r.rate {
            report.push_rate(&format!("linear_closed_loop_l2_M{}", r.m), est);
        }
    }
    Ok(report)
}
