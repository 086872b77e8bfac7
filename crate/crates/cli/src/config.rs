//! TOML run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use sbstab_core::analysis::Tolerances;
use sbstab_core::model::{Equilibrium, Nonlinearity, ProblemSpec};
use sbstab_core::simulate::{InitialCondition, NormKind, SimulationOptions, Startup, DEFAULT_EPSILON, DEFAULT_GUARD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default = "one")]
    pub interval_length: f64,
    pub grid_points: usize,
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub equilibrium: Equilibrium,
    #[serde(default = "default_substeps")]
    pub substeps_per_hold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    List(Vec<f64>),
    Keyword(String),
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Keyword("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub rho: f64,
    /// Sampling period `T`.
    pub period: f64,
    /// `"auto"` (`rho + k`) or an explicit list.
    #[serde(default)]
    pub gammas: GammaSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    /// Linearized closed loop.
    Linearized,
    /// Full semilinear closed loop.
    #[default]
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    Zero,
    Mode {
        index: usize,
        amplitude: f64,
    },
    Random {
        seed: u64,
        #[serde(default = "ten")]
        modes: usize,
        amplitude: f64,
        #[serde(default)]
        norm: NormKind,
    },
    /// Interior deviation values, whitespace or comma separated, one file.
    File {
        path: PathBuf,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Random {
            seed: 1,
            modes: 10,
            amplitude: 1.0,
            norm: NormKind::L2,
        }
    }
}

impl InitialSpec {
    /// Resolves file-based values relative to `base`.
    pub fn resolve(&self, base: &Path) -> anyhow::Result<InitialCondition> {
        Ok(match self {
            InitialSpec::Zero => InitialCondition::Zero,
            InitialSpec::Mode { index, amplitude } => InitialCondition::Mode {
                index: *index,
                amplitude: *amplitude,
            },
            InitialSpec::Random {
                seed,
                modes,
                amplitude,
                norm,
            } => InitialCondition::Random {
                seed: *seed,
                modes: *modes,
                amplitude: *amplitude,
                norm: *norm,
            },
            InitialSpec::File { path } => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full)
                    .with_context(|| format!("reading initial condition {}", full.display()))?;
                let values = text
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().with_context(|| format!("bad number `{s}` in {}", full.display())))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                InitialCondition::Values { values }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Number of hold intervals.
    pub horizon: usize,
    pub dynamics: Dynamics,
    pub initial: InitialSpec,
    pub guard: f64,
    pub epsilon: f64,
    pub startup: Startup,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            horizon: 50,
            dynamics: Dynamics::Full,
            initial: InitialSpec::default(),
            guard: DEFAULT_GUARD,
            epsilon: DEFAULT_EPSILON,
            startup: Startup::Rannacher,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Used when `--out` is absent; relative to the config file.
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    pub snapshot_stride: usize,
    /// Write full state snapshots and, for `synthesize`, the mode matrix and `B` matrices.
    pub matrices: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
            snapshot_stride: 8,
            matrices: false,
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub horizon: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            horizon: 25,
            seed: 1,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub periods: Vec<f64>,
    /// First target rate; the others follow at unit spacing.
    pub gamma_firsts: Vec<f64>,
    /// Initial sizes in the surrogate norm.
    pub amplitudes: Vec<f64>,
    /// Simulated time per run on the `T` and `gamma` axes.
    pub horizon_time: f64,
    pub seed: u64,
    pub bisection_steps: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            periods: vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
            gamma_firsts: vec![1.5, 2.0, 3.0, 4.0],
            amplitudes: vec![0.01, 0.1, 1.0, 10.0, 50.0],
            horizon_time: 20.0,
            seed: 1,
            bisection_steps: 20,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}

fn default_substeps() -> usize {
    64
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.gammas()?;
        Ok(cfg)
    }

    pub fn gammas(&self) -> anyhow::Result<Option<Vec<f64>>> {
        match &self.synthesis.gammas {
            GammaSpec::List(v) => Ok(Some(v.clone())),
            GammaSpec::Keyword(k) if k == "auto" => Ok(None),
            GammaSpec::Keyword(k) => bail!("synthesis.gammas must be \"auto\" or a list, got \"{k}\""),
        }
    }

    pub fn problem_spec(&self) -> anyhow::Result<ProblemSpec> {
        let p = &self.problem;
        Ok(ProblemSpec {
            interval_length: p.interval_length,
            grid_points: p.grid_points,
            nonlinearity: p.nonlinearity.clone(),
            equilibrium: p.equilibrium.clone(),
            sampling_period: self.synthesis.period,
            target_rate: self.synthesis.rho,
            gammas: self.gammas()?,
            substeps_per_hold: p.substeps_per_hold,
        })
    }

    pub fn simulation_options(&self) -> SimulationOptions {
        SimulationOptions {
            horizon: self.simulation.horizon,
            substeps: self.problem.substeps_per_hold,
            snapshot_stride: self.output.snapshot_stride,
            guard: self.simulation.guard,
            epsilon: self.simulation.epsilon,
            startup: self.simulation.startup,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
grid_points = 64
nonlinearity = { kind = "fisher", a = 15.0 }

[synthesis]
rho = 1.0
period = 0.2
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.simulation.horizon, 50);
        assert_eq!(cfg.gammas().unwrap(), None);
        assert_eq!(cfg.problem.substeps_per_hold, 64);
        assert_eq!(cfg.output.snapshot_stride, 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[verify]\nhorizon = 3\nbogus = 1\n");
        assert!(RunConfig::parse(&text).is_err());
        let text = MINIMAL.replace("rho = 1.0", "rho = 1.0\nrate = 2.0");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn gamma_keyword_must_be_auto() {
        let text = MINIMAL.replace("period = 0.2", "period = 0.2\ngammas = \"fast\"");
        assert!(RunConfig::parse(&text).is_err());
        let text = MINIMAL.replace("period = 0.2", "period = 0.2\ngammas = [2.0, 3.0]");
        assert_eq!(RunConfig::parse(&text).unwrap().gammas().unwrap(), Some(vec![2.0, 3.0]));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}
