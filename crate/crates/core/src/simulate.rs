//! Zero-order-hold trajectories of the linearized and semilinear problems.
//!
//! All runs work in the deviation `w = y - y_e` from the equilibrium. The
//! uncontrolled end keeps `w(0) = 0`; the controlled end holds `w(L) = u_i`
//! on `[iT, (i+1)T)`. The interior is advanced by Crank-Nicolson with the
//! linear part implicit and the Taylor remainder of `f` explicit. Each hold
//! interval may open with two backward-Euler half steps (Rannacher startup),
//! which damp the stiff components excited by the jump in boundary data and
//! reuse the Crank-Nicolson factorization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lifting::UnitLifts;
use crate::model::ValidatedProblem;
use crate::spectral::{l2_norm, project, sobolev_norm, Spectrum, SymTridiagonal};
use crate::synthesis::GainSet;

pub const DEFAULT_GUARD: f64 = 1e12;
pub const DEFAULT_EPSILON: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Startup {
    /// Plain Crank-Nicolson throughout.
    CrankNicolson,
    /// Two backward-Euler half steps at the start of every hold interval.
    #[default]
    Rannacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationOptions {
    /// Number of hold intervals.
    pub horizon: usize,
    /// Time steps per hold interval.
    pub substeps: usize,
    /// Record a snapshot every `snapshot_stride` substeps (sample instants always).
    pub snapshot_stride: usize,
    /// Norm beyond which the state counts as blown up.
    pub guard: f64,
    /// The surrogate norm is `H^{1/2 - epsilon}`.
    pub epsilon: f64,
    pub startup: Startup,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            horizon: 50,
            substeps: 64,
            snapshot_stride: 8,
            guard: DEFAULT_GUARD,
            epsilon: DEFAULT_EPSILON,
            startup: Startup::Rannacher,
        }
    }
}

impl SimulationOptions {
    pub fn for_problem(problem: &ValidatedProblem, horizon: usize) -> Self {
        SimulationOptions {
            horizon,
            substeps: problem.substeps(),
            ..Default::default()
        }
    }

    pub fn sobolev_exponent(&self) -> f64 {
        0.5 - self.epsilon
    }
}

/// Held control values `u_i` on `[iT, (i+1)T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldSchedule {
    pub period: f64,
    pub held_values: Vec<f64>,
}

impl HoldSchedule {
    pub fn horizon(&self) -> usize {
        self.held_values.len()
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (0..self.held_values.len()).map(|i| i as f64 * self.period).collect()
    }

    /// Control in force at time `t` (right-open intervals).
    pub fn value_at(&self, t: f64) -> Option<f64> {
        if t < 0.0 {
            return None;
        }
        let i = (t / self.period).floor() as usize;
        self.held_values.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    LinearClosedLoop,
    SemilinearClosedLoop,
    OpenLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowUp {
    pub time: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMetadata {
    pub kind: RunKind,
    pub problem_hash: String,
    pub gains_hash: Option<String>,
    pub substeps: usize,
    pub startup: Startup,
    pub sobolev_exponent: f64,
}

/// Snapshots of `w = y - y_e` on the interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `sample_indices[i]` is the snapshot taken at `t = iT`.
    pub sample_indices: Vec<usize>,
    pub schedule: HoldSchedule,
    /// Boundary value of the full state `y(L)` for each hold interval.
    pub boundary_values: Vec<f64>,
    pub l2_norms: Vec<f64>,
    pub sobolev_norms: Vec<f64>,
    pub blow_up: Option<BlowUp>,
    pub metadata: TrajectoryMetadata,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sample_states(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.sample_indices.iter().map(|&i| &self.states[i])
    }

    /// Control held at snapshot `j` (the one in force just after `times[j]`).
    pub fn held_at(&self, j: usize) -> f64 {
        self.schedule
            .value_at(self.times[j])
            .or_else(|| self.schedule.held_values.last().copied())
            .unwrap_or(0.0)
    }

    pub fn decayed(&self) -> bool {
        self.blow_up.is_none()
    }
}

/// Factorized `I + (dt/2) A` plus the explicit half `I - (dt/2) A`.
#[derive(Debug, Clone)]
struct Stepper {
    dt: f64,
    h: f64,
    a: SymTridiagonal,
    /// Thomas sweep coefficients for `I + (dt/2) A`.
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Stepper {
    fn new(a: &SymTridiagonal, h: f64, dt: f64) -> Stepper {
        let m = a.dim();
        let half = 0.5 * dt;
        let mut upper = vec![0.0; m];
        let mut inv_pivot = vec![0.0; m];
        for j in 0..m {
            let diag = 1.0 + half * a.diag[j];
            let sub = if j > 0 { half * a.off[j - 1] } else { 0.0 };
            let pivot = diag - if j > 0 { sub * upper[j - 1] } else { 0.0 };
            inv_pivot[j] = 1.0 / pivot;
            if j + 1 < m {
                upper[j] = half * a.off[j] * inv_pivot[j];
            }
        }
        Stepper {
            dt,
            h,
            a: a.clone(),
            upper,
            inv_pivot,
        }
    }

    /// Solves `(I + (dt/2) A) x = rhs` in place.
    fn solve(&self, rhs: &mut [f64]) {
        let m = rhs.len();
        let half = 0.5 * self.dt;
        rhs[0] *= self.inv_pivot[0];
        for j in 1..m {
            let sub = half * self.a.off[j - 1];
            rhs[j] = (rhs[j] - sub * rhs[j - 1]) * self.inv_pivot[j];
        }
        for j in (0..m - 1).rev() {
            rhs[j] -= self.upper[j] * rhs[j + 1];
        }
    }

    /// `rhs += scale * (u/h^2 e_M + forcing)`.
    fn add_sources(&self, rhs: &mut [f64], scale: f64, u: f64, forcing: Option<&[f64]>) {
        let m = rhs.len();
        rhs[m - 1] += scale * u / (self.h * self.h);
        if let Some(f) = forcing {
            for (r, fj) in rhs.iter_mut().zip(f) {
                *r += scale * fj;
            }
        }
    }

    fn crank_nicolson(&self, w: &mut Vec<f64>, u: f64, forcing: Option<&[f64]>) {
        let half = 0.5 * self.dt;
        let aw = self.a.mul_vec(w);
        let mut rhs: Vec<f64> = w.iter().zip(&aw).map(|(wj, awj)| wj - half * awj).collect();
        self.add_sources(&mut rhs, self.dt, u, forcing);
        self.solve(&mut rhs);
        *w = rhs;
    }

    fn backward_euler_half(&self, w: &mut Vec<f64>, u: f64, forcing: Option<&[f64]>) {
        let mut rhs = w.clone();
        self.add_sources(&mut rhs, 0.5 * self.dt, u, forcing);
        self.solve(&mut rhs);
        *w = rhs;
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn problem_hash(problem: &ValidatedProblem) -> String {
    sha_hex(&serde_json::to_vec(problem.spec()).expect("spec serializes"))
}

pub fn gains_hash(gains: &GainSet) -> String {
    let mut bytes = Vec::new();
    for v in std::iter::once(gains.period())
        .chain(gains.gammas().iter().copied())
        .chain(gains.gain_row().iter().copied())
    {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    sha_hex(&bytes)
}

enum Control<'a> {
    None,
    Feedback(&'a GainSet),
}

/// Owns everything a run needs: operator, modes, Laplacian modes for the
/// surrogate norm, and the factorized stepper.
#[derive(Debug, Clone)]
pub struct Simulator {
    problem: ValidatedProblem,
    spectrum: Spectrum,
    laplacian: Spectrum,
    options: SimulationOptions,
    stepper: Stepper,
}

impl Simulator {
    pub fn new(problem: &ValidatedProblem, spectrum: &Spectrum, options: SimulationOptions) -> Result<Simulator> {
        if spectrum.dim() != problem.grid_points() {
            return Err(Error::DimensionMismatch {
                expected: problem.grid_points(),
                found: spectrum.dim(),
            });
        }
        if options.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        if !(options.epsilon > 0.0 && options.epsilon <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 1/2], got {}",
                options.epsilon
            )));
        }
        let laplacian = Spectrum::laplacian(problem)?;
        let dt = problem.period() / options.substeps as f64;
        let stepper = Stepper::new(spectrum.operator(), problem.h(), dt);
        Ok(Simulator {
            problem: problem.clone(),
            spectrum: spectrum.clone(),
            laplacian,
            options,
            stepper,
        })
    }

    pub fn problem(&self) -> &ValidatedProblem {
        &self.problem
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn laplacian(&self) -> &Spectrum {
        &self.laplacian
    }

    pub fn options(&self) -> &SimulationOptions {
        &self.options
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt
    }

    pub fn sobolev_norm(&self, w: &[f64]) -> f64 {
        sobolev_norm(w, self.options.sobolev_exponent(), &self.laplacian)
    }

    fn check_state(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.spectrum.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spectrum.dim(),
                found: w.len(),
            });
        }
        Ok(())
    }

    fn check_gains(&self, gains: &GainSet) -> Result<()> {
        if gains.unstable_count() != self.spectrum.unstable_count() {
            return Err(Error::DimensionMismatch {
                expected: self.spectrum.unstable_count(),
                found: gains.unstable_count(),
            });
        }
        if (gains.period() - self.problem.period()).abs() > 1e-14 * self.problem.period() {
            return Err(Error::InvalidArgument(format!(
                "gains were built for T = {}, problem has T = {}",
                gains.period(),
                self.problem.period()
            )));
        }
        Ok(())
    }

    /// Linearized closed loop; exceeding the guard is an error.
    pub fn linear_closed_loop(&self, gains: &GainSet, w0: &[f64]) -> Result<Trajectory> {
        self.check_gains(gains)?;
        let traj = self.run(w0, Control::Feedback(gains), false, RunKind::LinearClosedLoop)?;
        match traj.blow_up {
            Some(b) => Err(Error::UnstableStep {
                time: b.time,
                norm: b.norm,
            }),
            None => Ok(traj),
        }
    }

    /// Linearized closed loop that records guard crossings instead of failing.
    pub fn linear_closed_loop_recorded(&self, gains: &GainSet, w0: &[f64]) -> Result<Trajectory> {
        self.check_gains(gains)?;
        self.run(w0, Control::Feedback(gains), false, RunKind::LinearClosedLoop)
    }

    /// Semilinear closed loop from the full state `y0`; blow-up is recorded.
    pub fn semilinear_closed_loop(&self, gains: &GainSet, y0: &[f64]) -> Result<Trajectory> {
        self.check_gains(gains)?;
        self.check_state(y0)?;
        let w0: Vec<f64> = y0.iter().zip(self.problem.equilibrium()).map(|(y, e)| y - e).collect();
        self.run(&w0, Control::Feedback(gains), true, RunKind::SemilinearClosedLoop)
    }

    /// Linearized dynamics with `u = 0`; growth past the guard is recorded.
    pub fn open_loop(&self, w0: &[f64]) -> Result<Trajectory> {
        self.run(w0, Control::None, false, RunKind::OpenLoop)
    }

    fn remainder(&self, w: &[f64]) -> Vec<f64> {
        let f = self.problem.nonlinearity();
        self.problem
            .nodes()
            .iter()
            .zip(self.problem.equilibrium())
            .zip(w)
            .map(|((x, ye), wj)| f.remainder(*x, *ye, *wj))
            .collect()
    }

    fn run(&self, w0: &[f64], control: Control<'_>, nonlinear: bool, kind: RunKind) -> Result<Trajectory> {
        self.check_state(w0)?;
        let opts = &self.options;
        let period = self.problem.period();
        let h = self.problem.h();
        let n = self.spectrum.unstable_count();
        let stride = opts.snapshot_stride.max(1);

        let mut w = w0.to_vec();
        let mut times = vec![0.0];
        let mut states = vec![w.clone()];
        let mut sample_indices = vec![0];
        let mut held = Vec::with_capacity(opts.horizon);
        let mut blow_up = None;

        'intervals: for i in 0..opts.horizon {
            let u = match control {
                Control::None => 0.0,
                Control::Feedback(g) => g.feedback(&project(&w, &self.spectrum, n).0),
            };
            held.push(u);
            let t0 = i as f64 * period;
            for s in 0..opts.substeps {
                if s == 0 && opts.startup == Startup::Rannacher {
                    for _ in 0..2 {
                        let g = nonlinear.then(|| self.remainder(&w));
                        self.stepper.backward_euler_half(&mut w, u, g.as_deref());
                    }
                } else {
                    let g = nonlinear.then(|| self.remainder(&w));
                    self.stepper.crank_nicolson(&mut w, u, g.as_deref());
                }
                let t = t0 + (s + 1) as f64 * self.stepper.dt;
                let norm = l2_norm(&w, h);
                if !norm.is_finite() || norm > opts.guard {
                    blow_up = Some(BlowUp { time: t, norm });
                    log::info!("{kind:?} run exceeded the guard at t = {t:.6} (norm {norm:e})");
                    break 'intervals;
                }
                let last = s + 1 == opts.substeps;
                if last || (s + 1) % stride == 0 {
                    // Sample instants land exactly on multiples of T.
                    times.push(if last { (i + 1) as f64 * period } else { t });
                    states.push(w.clone());
                    if last {
                        sample_indices.push(states.len() - 1);
                    }
                }
            }
        }

        let l2_norms = states.iter().map(|s| l2_norm(s, h)).collect();
        let sobolev_norms = states.iter().map(|s| self.sobolev_norm(s)).collect();
        let ye_right = if nonlinear { self.problem.equilibrium_right() } else { 0.0 };
        let boundary_values = held.iter().map(|u| u + ye_right).collect();
        let gains_hash = match control {
            Control::None => None,
            Control::Feedback(g) => Some(gains_hash(g)),
        };
        Ok(Trajectory {
            times,
            states,
            sample_indices,
            schedule: HoldSchedule {
                period,
                held_values: held,
            },
            boundary_values,
            l2_norms,
            sobolev_norms,
            blow_up,
            metadata: TrajectoryMetadata {
                kind,
                problem_hash: problem_hash(&self.problem),
                gains_hash,
                substeps: opts.substeps,
                startup: opts.startup,
                sobolev_exponent: opts.sobolev_exponent(),
            },
        })
    }

    /// Splits a linear closed-loop trajectory as `y = z + sum_k h_k`.
    pub fn decompose_z(&self, trajectory: &Trajectory, gains: &GainSet) -> Result<ZDecomposition> {
        decompose_with(self, trajectory, gains)
    }
}

pub fn run_linear_closed_loop(
    problem: &ValidatedProblem,
    spectrum: &Spectrum,
    gains: &GainSet,
    y0: &[f64],
    horizon: usize,
) -> Result<Trajectory> {
    Simulator::new(problem, spectrum, SimulationOptions::for_problem(problem, horizon))?.linear_closed_loop(gains, y0)
}

pub fn run_semilinear_closed_loop(
    problem: &ValidatedProblem,
    spectrum: &Spectrum,
    gains: &GainSet,
    y0: &[f64],
    horizon: usize,
) -> Result<Trajectory> {
    Simulator::new(problem, spectrum, SimulationOptions::for_problem(problem, horizon))?
        .semilinear_closed_loop(gains, y0)
}

pub fn run_open_loop(problem: &ValidatedProblem, spectrum: &Spectrum, y0: &[f64], horizon: usize) -> Result<Trajectory> {
    Simulator::new(problem, spectrum, SimulationOptions::for_problem(problem, horizon))?.open_loop(y0)
}

/// `z` at sample instants with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZDecomposition {
    pub sample_times: Vec<f64>,
    /// `z(iT) = y(iT) - sum_k h_k(iT)`.
    pub z_samples: Vec<Vec<f64>>,
    /// `z(iT-)`, obtained by stepping `z` itself across the previous interval.
    pub z_before: Vec<Option<Vec<f64>>>,
    /// `sum_k h_k(iT)`.
    pub hold_sums: Vec<Vec<f64>>,
    /// `||z(iT) - z(iT-) - sum h((i-1)T) + sum h(iT)|| / ||z(iT)||`, from `i = 1`.
    pub jump_residuals: Vec<f64>,
    /// `||Q_N y(iT) - Q_N z(iT) / 2|| / ||Q_N y(iT)||`.
    pub half_residuals: Vec<f64>,
    /// `||z^N(iT) - 2 z^N(iT-) + z^N((i-1)T)|| / ||z^N(iT)||`, from `i = 1`.
    pub doubling_residuals: Vec<f64>,
}

fn rel(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn decompose_with(sim: &Simulator, trajectory: &Trajectory, gains: &GainSet) -> Result<ZDecomposition> {
    let samples = trajectory.sample_indices.len();
    if samples < 2 {
        return Err(Error::MissingSampleSnapshots {
            found: samples,
            needed: 2,
        });
    }
    sim.check_gains(gains)?;
    let spectrum = &sim.spectrum;
    let n = gains.unstable_count();
    let h = sim.problem.h();
    let lifts = UnitLifts::new(spectrum, gains)?;

    // Constant modal forcing R_i = sum_k sum_j (1/Lambda_jk - lambda_j) <phi_j, h_k> phi_j
    // that z feels on an interval where the h_k are frozen.
    let forcing_for = |holds: &[crate::lifting::LiftProfile]| -> Vec<f64> {
        let mut r = vec![0.0; spectrum.dim()];
        for lift in holds {
            let coords = project(&lift.profile, spectrum, n);
            for j in 0..n {
                let shift = 1.0 / gains.lambda_diags()[lift.k][j] - spectrum.lambda(j);
                let c = shift * coords.0[j];
                for (rm, p) in r.iter_mut().zip(spectrum.modes().column(j).iter()) {
                    *rm += c * p;
                }
            }
        }
        r
    };

    let mut sample_times = Vec::with_capacity(samples);
    let mut z_samples = Vec::with_capacity(samples);
    let mut z_before = Vec::with_capacity(samples);
    let mut hold_sums = Vec::with_capacity(samples);
    let mut jump_residuals = Vec::new();
    let mut half_residuals = Vec::new();
    let mut doubling_residuals = Vec::new();
    let mut previous: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;

    for (i, &idx) in trajectory.sample_indices.iter().enumerate() {
        let y = &trajectory.states[idx];
        let holds = lifts.hold_profiles(gains, spectrum, y)?;
        let mut sum = vec![0.0; y.len()];
        for l in &holds {
            for (s, p) in sum.iter_mut().zip(&l.profile) {
                *s += p;
            }
        }
        let z = diff(y, &sum);

        let yn = project(y, spectrum, n).0;
        let zn = project(&z, spectrum, n).0;
        let half: Vec<f64> = zn.iter().map(|v| 0.5 * v).collect();
        half_residuals.push(rel(norm2(&diff(&yn, &half)), norm2(&yn)));

        let before = if let Some((z_prev, sum_prev, forcing)) = &previous {
            let mut zb = z_prev.clone();
            for s in 0..sim.options.substeps {
                if s == 0 && sim.options.startup == Startup::Rannacher {
                    sim.stepper.backward_euler_half(&mut zb, 0.0, Some(forcing));
                    sim.stepper.backward_euler_half(&mut zb, 0.0, Some(forcing));
                } else {
                    sim.stepper.crank_nicolson(&mut zb, 0.0, Some(forcing));
                }
            }
            let predicted: Vec<f64> = zb.iter().zip(sum_prev).zip(&sum).map(|((a, b), c)| a + b - c).collect();
            jump_residuals.push(rel(norm2(&diff(&z, &predicted)) * h.sqrt(), l2_norm(&z, h)));

            let zb_n = project(&zb, spectrum, n).0;
            let zp_n = project(z_prev, spectrum, n).0;
            let doubled: Vec<f64> = zb_n.iter().zip(&zp_n).map(|(a, b)| 2.0 * a - b).collect();
            doubling_residuals.push(rel(norm2(&diff(&zn, &doubled)), norm2(&zn)));
            Some(zb)
        } else {
            None
        };

        if i + 1 < samples {
            previous = Some((z.clone(), sum.clone(), forcing_for(&holds)));
        }
        sample_times.push(trajectory.times[idx]);
        z_samples.push(z);
        z_before.push(before);
        hold_sums.push(sum);
    }

    Ok(ZDecomposition {
        sample_times,
        z_samples,
        z_before,
        hold_sums,
        jump_residuals,
        half_residuals,
        doubling_residuals,
    })
}

/// Prescription for an initial deviation `w0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// `amplitude * phi_index` (1-based mode index of the linearized operator).
    Mode { index: usize, amplitude: f64 },
    /// Uniform `[-1, 1]` coefficients on the first `modes` modes, rescaled to
    /// `amplitude` in the chosen norm.
    Random {
        seed: u64,
        #[serde(default = "default_random_modes")]
        modes: usize,
        amplitude: f64,
        #[serde(default)]
        norm: NormKind,
    },
    /// Explicit interior values.
    Values { values: Vec<f64> },
}

fn default_random_modes() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    #[default]
    L2,
    Sobolev,
}

impl InitialCondition {
    pub fn realize(&self, sim: &Simulator) -> Result<Vec<f64>> {
        let spectrum = sim.spectrum();
        let m = spectrum.dim();
        match self {
            InitialCondition::Zero => Ok(vec![0.0; m]),
            InitialCondition::Mode { index, amplitude } => {
                if *index == 0 || *index > m {
                    return Err(Error::InvalidArgument(format!("mode index {index} outside 1..={m}")));
                }
                Ok(spectrum.mode(index - 1).iter().map(|p| p * amplitude).collect())
            }
            InitialCondition::Random {
                seed,
                modes,
                amplitude,
                norm,
            } => {
                let k = (*modes).clamp(1, m);
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut w = vec![0.0; m];
                for i in 0..k {
                    let c: f64 = rng.gen_range(-1.0..=1.0);
                    for (wj, p) in w.iter_mut().zip(spectrum.modes().column(i).iter()) {
                        *wj += c * p;
                    }
                }
                let current = match norm {
                    NormKind::L2 => l2_norm(&w, spectrum.h()),
                    NormKind::Sobolev => sim.sobolev_norm(&w),
                };
                if current == 0.0 {
                    return Ok(w);
                }
                Ok(w.iter().map(|v| v * amplitude / current).collect())
            }
            InitialCondition::Values { values } => {
                if values.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        found: values.len(),
                    });
                }
                Ok(values.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_spec, Nonlinearity, ProblemSpec};

    fn stepper_matrix(m: usize) -> (SymTridiagonal, f64) {
        let h = 1.0 / (m as f64 + 1.0);
        let inv = 1.0 / (h * h);
        (
            SymTridiagonal {
                diag: vec![2.0 * inv - 3.0; m],
                off: vec![-inv; m - 1],
            },
            h,
        )
    }

    #[test]
    fn thomas_solve_inverts_lhs() {
        let (a, h) = stepper_matrix(20);
        let st = Stepper::new(&a, h, 0.01);
        let x: Vec<f64> = (0..20).map(|j| (j as f64 * 0.7).sin()).collect();
        let ax = a.mul_vec(&x);
        let mut rhs: Vec<f64> = x.iter().zip(&ax).map(|(xi, ai)| xi + 0.005 * ai).collect();
        st.solve(&mut rhs);
        for (r, xi) in rhs.iter().zip(&x) {
            assert!((r - xi).abs() < 1e-12);
        }
    }

    #[test]
    fn hold_schedule_is_right_open() {
        let s = HoldSchedule {
            period: 0.5,
            held_values: vec![1.0, 2.0],
        };
        assert_eq!(s.value_at(0.0), Some(1.0));
        assert_eq!(s.value_at(0.4999), Some(1.0));
        assert_eq!(s.value_at(0.5), Some(2.0));
        assert_eq!(s.value_at(1.0), None);
        assert_eq!(s.sample_times(), vec![0.0, 0.5]);
    }

    #[test]
    fn zero_initial_state_stays_zero_open_loop() {
        let p = validate_spec(&ProblemSpec::new(32, Nonlinearity::LinearOnly { a: 15.0 }, 0.1, 1.0)).unwrap();
        let s = Spectrum::compute(&p).unwrap();
        let t = run_open_loop(&p, &s, &[0.0; 32], 3).unwrap();
        assert!(t.states.iter().all(|w| w.iter().all(|v| *v == 0.0)));
        assert_eq!(t.sample_indices.len(), 4);
        assert_eq!(t.times[t.sample_indices[3]], 3.0 * 0.1);
    }

    #[test]
    fn random_initial_condition_is_seeded_and_normalized() {
        let p = validate_spec(&ProblemSpec::new(32, Nonlinearity::LinearOnly { a: 15.0 }, 0.1, 1.0)).unwrap();
        let s = Spectrum::compute(&p).unwrap();
        let sim = Simulator::new(&p, &s, SimulationOptions::default()).unwrap();
        let ic = InitialCondition::Random {
            seed: 7,
            modes: 10,
            amplitude: 0.5,
            norm: NormKind::Sobolev,
        };
        let a = ic.realize(&sim).unwrap();
        let b = ic.realize(&sim).unwrap();
        assert_eq!(a, b);
        assert!((sim.sobolev_norm(&a) - 0.5).abs() < 1e-12);
    }
}
