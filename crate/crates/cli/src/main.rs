mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{Dynamics, Format, RunConfig};
use sbstab_core::analysis::{
    estimate_basin, fit_decay_rate, spectral_check, sweep_gamma, sweep_sampling_period, synthesis_checks,
    verify_problem, BasinOptions, RateEstimate, SweepOptions, VerificationReport, VerifyOptions,
};
use sbstab_core::io::{self, GainsExport, Series};
use sbstab_core::lifting::UnitLifts;
use sbstab_core::model::{validate_spec, ValidatedProblem};
use sbstab_core::simulate::{problem_hash, BlowUp, NormKind, Simulator, Trajectory};
use sbstab_core::spectral::Spectrum;
use sbstab_core::synthesis::{build_gains, continuous_limit};
use sbstab_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_SINGULAR: u8 = 3;
const EXIT_BLOW_UP: u8 = 4;
const EXIT_CHECKS: u8 = 5;

#[derive(Parser)]
#[command(name = "sbstab", version, about = "Sampled-data boundary stabilization of 1-D parabolic equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum, gains and algebraic checks.
    Synthesize(Common),
    /// Closed-loop trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also run the uncontrolled linearized system.
        #[arg(long)]
        open_loop: bool,
        /// Exit with status 4 if the closed loop blows up.
        #[arg(long)]
        expect_decay: bool,
    },
    /// Identity suite on the grid and its refinement.
    Verify {
        #[command(flatten)]
        common: Common,
        /// One extra grid doubling.
        #[arg(long)]
        refine: bool,
    },
    /// Parameter sweep along one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum Axis {
    #[value(name = "T")]
    #[serde(rename = "T")]
    Period,
    #[value(name = "gamma")]
    #[serde(rename = "gamma")]
    Gamma,
    #[value(name = "amplitude")]
    #[serde(rename = "amplitude")]
    Amplitude,
}

/// An error carrying its exit status.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit(code: u8, message: impl Into<String>) -> anyhow::Error {
    Exit {
        code,
        message: message.into(),
    }
    .into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Exit>() {
        return e.code;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::InvalidProblem(_)
            | Error::RhoOnEigenvalue { .. }
            | Error::GammaArityMismatch { .. }
            | Error::GammaOrdering(_)
            | Error::NonFiniteCoefficient { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_),
        ) => EXIT_VALIDATION,
        Some(Error::SingularBSum { .. }) => EXIT_SINGULAR,
        _ => 1,
    }
}

struct RunContext {
    config: RunConfig,
    config_dir: PathBuf,
    out: PathBuf,
}

impl RunContext {
    fn load(common: &Common) -> anyhow::Result<RunContext> {
        let config = RunConfig::load(&common.config).map_err(|e| exit(EXIT_VALIDATION, format!("{e:#}")))?;
        let config_dir = common
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let out = common
            .out
            .clone()
            .unwrap_or_else(|| config_dir.join(&config.output.directory));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(RunContext {
            config,
            config_dir,
            out,
        })
    }

    fn problem(&self) -> anyhow::Result<ValidatedProblem> {
        let spec = self.config.problem_spec().map_err(|e| exit(EXIT_VALIDATION, format!("{e:#}")))?;
        Ok(validate_spec(&spec)?)
    }

    fn write(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> sbstab_core::Result<()>) -> anyhow::Result<()> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write(name, |w| io::write_json(w, value))
    }

    fn write_text(&self, name: &str, text: &str) -> anyhow::Result<()> {
        self.write(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    fn wants(&self, f: Format) -> bool {
        self.config.output.wants(f)
    }

    /// Resolved configuration with every default filled in.
    fn write_metadata<E: Serialize>(&self, command: &str, problem: &ValidatedProblem, extra: E) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Meta<'a, E> {
            command: &'a str,
            version: &'a str,
            problem_hash: String,
            flags: E,
            config: &'a RunConfig,
        }
        self.write_json(
            "run.json",
            &Meta {
                command,
                version: env!("CARGO_PKG_VERSION"),
                problem_hash: problem_hash(problem),
                flags: extra,
                config: &self.config,
            },
        )
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synthesize(common) => cmd_synthesize(common),
        Command::Simulate {
            common,
            open_loop,
            expect_decay,
        } => cmd_simulate(common, *open_loop, *expect_decay),
        Command::Verify { common, refine } => cmd_verify(common, *refine),
        Command::Sweep { common, axis } => cmd_sweep(common, *axis),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn finish_report(report: &VerificationReport) -> anyhow::Result<()> {
    for w in report.warnings() {
        eprintln!("warning: {w}");
    }
    if report.all_passed() {
        return Ok(());
    }
    let failed: Vec<String> = report
        .failed()
        .map(|c| format!("{} (residual {:.3e}, tolerance {:.3e})", c.name, c.residual, c.tolerance))
        .collect();
    Err(exit(EXIT_CHECKS, format!("failed checks: {}", failed.join("; "))))
}

fn cmd_synthesize(common: &Common) -> anyhow::Result<()> {
    let ctx = RunContext::load(common)?;
    let problem = ctx.problem()?;
    ctx.write_metadata("synthesize", &problem, ())?;
    let spectrum = Spectrum::compute(&problem)?;
    ctx.write("spectrum.csv", |w| io::write_spectrum_csv(w, &spectrum))?;
    if ctx.config.output.matrices {
        ctx.write("modes.csv", |w| io::write_modes_csv(w, &problem, &spectrum, spectrum.dim()))?;
    }
    let tol = &ctx.config.verify.tolerances;
    let mut report = VerificationReport::new(problem_hash(&problem));
    report.push_check(spectral_check(&spectrum, tol));
    let n = spectrum.unstable_count();
    println!("unstable modes: {n}");
    if n == 0 {
        report.warn("no unstable modes below rho: no feedback is needed");
        ctx.write_json("verification.json", &report)?;
        return finish_report(&report);
    }
    let gammas = problem.gammas_for(n);
    let gains = build_gains(&spectrum, &gammas, problem.period())?;
    let continuous = continuous_limit(&spectrum, &gammas)?;
    report.gains_hash = Some(sbstab_core::simulate::gains_hash(&gains));
    if gains.ill_conditioned() {
        report.warn(format!(
            "sum of B_k has condition number {:.3e}; gains computed at {} bits",
            gains.condition_number(),
            gains.precision_bits()
        ));
    }
    report.push_constant("condition_number", gains.condition_number());
    report.push_constant("modal_constant_C", gains.modal_constant());
    for c in synthesis_checks(&gains, tol) {
        report.push_check(c);
    }
    ctx.write_json("gains.json", &GainsExport::new(&gains, &continuous))?;
    let lifts = UnitLifts::new(&spectrum, &gains)?;
    let profiles: Vec<_> = (0..lifts.len()).map(|k| lifts.get(k).clone()).collect();
    ctx.write("lifts.csv", |w| io::write_lifts_csv(w, &problem, &profiles))?;
    if ctx.config.output.matrices {
        ctx.write("b.csv", |w| io::write_matrix_csv(w, gains.b()))?;
        ctx.write("b0.csv", |w| io::write_matrix_csv(w, gains.b0()))?;
        for (k, bk) in gains.bk().iter().enumerate() {
            ctx.write(&format!("b_{}.csv", k + 1), |w| io::write_matrix_csv(w, bk))?;
        }
    }
    ctx.write_json("verification.json", &report)?;
    println!("gain_row: {:?}", gains.gain_row());
    println!("condition number: {:.6e}", gains.condition_number());
    finish_report(&report)
}

#[derive(Serialize)]
struct RunSummary {
    kind: String,
    intervals: usize,
    initial_l2: f64,
    final_l2: f64,
    initial_sob: f64,
    final_sob: f64,
    blow_up: Option<BlowUp>,
    rate_l2: Option<RateEstimate>,
    rate_sob: Option<RateEstimate>,
}

fn summarize(kind: &str, traj: &Trajectory, t_start: f64) -> RunSummary {
    let last = traj.len().saturating_sub(1);
    let fit = |norm| {
        if traj.blow_up.is_some() {
            None
        } else {
            fit_decay_rate(traj, norm, t_start).ok()
        }
    };
    RunSummary {
        kind: kind.into(),
        intervals: traj.schedule.horizon(),
        initial_l2: traj.l2_norms[0],
        final_l2: traj.l2_norms[last],
        initial_sob: traj.sobolev_norms[0],
        final_sob: traj.sobolev_norms[last],
        blow_up: traj.blow_up,
        rate_l2: fit(NormKind::L2),
        rate_sob: fit(NormKind::Sobolev),
    }
}

fn cmd_simulate(common: &Common, open_loop: bool, expect_decay: bool) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Flags {
        open_loop: bool,
        expect_decay: bool,
    }
    let ctx = RunContext::load(common)?;
    let problem = ctx.problem()?;
    ctx.write_metadata(
        "simulate",
        &problem,
        Flags {
            open_loop,
            expect_decay,
        },
    )?;
    let spectrum = Spectrum::compute(&problem)?;
    let sim = Simulator::new(&problem, &spectrum, ctx.config.simulation_options())?;
    let w0 = ctx.config.simulation.initial.resolve(&ctx.config_dir)?.realize(&sim)?;
    let n = spectrum.unstable_count();
    let closed = if n == 0 {
        log::warn!("no unstable modes below rho: running with u = 0");
        sim.open_loop(&w0)?
    } else {
        let gains = build_gains(&spectrum, &problem.gammas_for(n), problem.period())?;
        match ctx.config.simulation.dynamics {
            Dynamics::Linearized => sim.linear_closed_loop_recorded(&gains, &w0)?,
            Dynamics::Full => {
                let y0: Vec<f64> = w0.iter().zip(problem.equilibrium()).map(|(w, e)| w + e).collect();
                sim.semilinear_closed_loop(&gains, &y0)?
            }
        }
    };
    let t_start = 2.0 * problem.period();
    let mut summaries = vec![summarize("closed-loop", &closed, t_start)];
    ctx.write("trajectory.csv", |w| io::write_trajectory_csv(w, &closed))?;
    if ctx.config.output.matrices {
        ctx.write("states.csv", |w| io::write_states_csv(w, &problem, &closed))?;
    }
    let open = if open_loop {
        let traj = sim.open_loop(&w0)?;
        ctx.write("open_loop.csv", |w| io::write_trajectory_csv(w, &traj))?;
        summaries.push(summarize("open-loop", &traj, 0.0));
        Some(traj)
    } else {
        None
    };
    if ctx.wants(Format::Svg) {
        let mut series = vec![Series {
            label: "closed loop".into(),
            times: &closed.times,
            norms: &closed.l2_norms,
        }];
        if let Some(o) = &open {
            series.push(Series {
                label: "open loop".into(),
                times: &o.times,
                norms: &o.l2_norms,
            });
        }
        ctx.write_text("norms.svg", &io::log_norm_svg(&series))?;
    }
    ctx.write_json("summary.json", &summaries)?;
    for s in &summaries {
        match (&s.blow_up, &s.rate_l2) {
            (Some(b), _) => println!("{}: blow-up at t = {:.6} (norm {:.3e})", s.kind, b.time, b.norm),
            (None, Some(r)) => println!("{}: final l2 norm {:.6e}, fitted rate {:.6}", s.kind, s.final_l2, r.rate),
            (None, None) => println!("{}: final l2 norm {:.6e}", s.kind, s.final_l2),
        }
    }
    if let (true, Some(b)) = (expect_decay, closed.blow_up) {
        return Err(exit(EXIT_BLOW_UP, format!("closed loop blew up at t = {}", b.time)));
    }
    Ok(())
}

fn cmd_verify(common: &Common, refine: bool) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Flags {
        refine: bool,
    }
    let ctx = RunContext::load(common)?;
    let problem = ctx.problem()?;
    ctx.write_metadata("verify", &problem, Flags { refine })?;
    let opts = VerifyOptions {
        tolerances: ctx.config.verify.tolerances.clone(),
        extra_refinements: usize::from(refine),
        horizon: ctx.config.verify.horizon,
        seed: ctx.config.verify.seed,
        simulation: ctx.config.simulation_options(),
    };
    let report = verify_problem(&problem, &opts)?;
    ctx.write_json("verification.json", &report)?;
    for c in report.checks() {
        println!(
            "{} {} residual={:.3e} tolerance={:.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.residual,
            c.tolerance
        );
    }
    finish_report(&report)
}

fn cmd_sweep(common: &Common, axis: Axis) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Flags {
        axis: Axis,
    }
    let ctx = RunContext::load(common)?;
    let problem = ctx.problem()?;
    ctx.write_metadata("sweep", &problem, Flags { axis })?;
    let sweep = &ctx.config.sweep;
    let values = match axis {
        Axis::Period => &sweep.periods,
        Axis::Gamma => &sweep.gamma_firsts,
        Axis::Amplitude => &sweep.amplitudes,
    };
    if values.is_empty() {
        return Err(exit(EXIT_VALIDATION, format!("sweep list for axis {axis:?} is empty")));
    }
    if let Axis::Amplitude = axis {
        let spectrum = Spectrum::compute(&problem)?;
        let gains = build_gains(&spectrum, &problem.gammas_for(spectrum.unstable_count()), problem.period())?;
        let opts = BasinOptions {
            seed: sweep.seed,
            simulation: ctx.config.simulation_options(),
            bisection_steps: sweep.bisection_steps,
        };
        let basin = estimate_basin(&problem, &gains, values, &opts)?;
        ctx.write("basin.csv", |w| io::write_basin_csv(w, &basin))?;
        ctx.write_json("basin.json", &basin)?;
        match basin.bracket {
            Some((lo, hi)) => println!("basin edge between {lo:.6e} and {hi:.6e}"),
            None => match basin.largest_decaying {
                Some(a) => println!("all failures below {a:.6e} or none above; largest decaying amplitude {a:.6e}"),
                None => println!("no tested amplitude decayed"),
            },
        }
        return Ok(());
    }
    let opts = SweepOptions {
        horizon_time: sweep.horizon_time,
        initial: ctx.config.simulation.initial.resolve(&ctx.config_dir)?,
        simulation: ctx.config.simulation_options(),
        norm: NormKind::L2,
    };
    let rows = match axis {
        Axis::Period => sweep_sampling_period(&problem, values, &opts)?,
        _ => sweep_gamma(&problem, values, &opts)?,
    };
    ctx.write("sweep.csv", |w| io::write_sweep_csv(w, &rows))?;
    ctx.write_json("sweep.json", &rows)?;
    for r in &rows {
        match (&r.error, r.rate) {
            (Some(e), _) => println!("T={} gamma_1={:?}: {e}", r.period, r.gammas.first()),
            (None, rate) => println!("T={} gamma_1={:?}: rate {:?}", r.period, r.gammas.first(), rate),
        }
    }
    Ok(())
}
