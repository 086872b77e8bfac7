//! Problem definition: the interval, the reaction term, the equilibrium being
//! stabilized and the sampling parameters.
//!
//! The domain is `(0, L)`. The control acts through the Dirichlet value at
//! `x = L`; the value at `x = 0` is held at zero. Interior nodes are
//! `x_j = j h`, `j = 1..=M`, with `h = L / (M + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation, Violations};

/// Smallest admissible number of interior grid points.
pub const MIN_GRID_POINTS: usize = 16;

/// Reaction term `f(x, y)` together with its closed-form derivative `f_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Nonlinearity {
    /// `f(x, y) = a y`
    LinearOnly { a: f64 },
    /// `f(x, y) = a y (1 - y)`
    Fisher { a: f64 },
    /// `f(x, y) = y - y^3`
    Cubic,
    /// `f(x, y) = sum_k c_k y^k`, coefficients in ascending degree.
    CustomPolynomial { coefficients: Vec<f64> },
}

impl Nonlinearity {
    pub fn f(&self, _x: f64, y: f64) -> f64 {
        match self {
            Nonlinearity::LinearOnly { a } => a * y,
            Nonlinearity::Fisher { a } => a * y * (1.0 - y),
            Nonlinearity::Cubic => y - y * y * y,
            Nonlinearity::CustomPolynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * y + c)
            }
        }
    }

    pub fn f_y(&self, _x: f64, y: f64) -> f64 {
        match self {
            Nonlinearity::LinearOnly { a } => *a,
            Nonlinearity::Fisher { a } => a * (1.0 - 2.0 * y),
            Nonlinearity::Cubic => 1.0 - 3.0 * y * y,
            Nonlinearity::CustomPolynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * y + k as f64 * c),
        }
    }

    /// Taylor remainder `f(x, y_e + w) - f(x, y_e) - f_y(x, y_e) w`.
    pub fn remainder(&self, x: f64, ye: f64, w: f64) -> f64 {
        match self {
            Nonlinearity::LinearOnly { .. } => 0.0,
            // Exact expansions avoid cancellation for tiny w.
            Nonlinearity::Fisher { a } => -a * w * w,
            Nonlinearity::Cubic => -(3.0 * ye + w) * w * w,
            Nonlinearity::CustomPolynomial { .. } => {
                self.f(x, ye + w) - self.f(x, ye) - self.f_y(x, ye) * w
            }
        }
    }

    fn parameters_finite(&self) -> bool {
        match self {
            Nonlinearity::LinearOnly { a } | Nonlinearity::Fisher { a } => a.is_finite(),
            Nonlinearity::Cubic => true,
            Nonlinearity::CustomPolynomial { coefficients } => {
                coefficients.iter().all(|c| c.is_finite())
            }
        }
    }
}

/// Equilibrium `y_e`, given in closed form or as a grid table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Equilibrium {
    #[default]
    Zero,
    Constant { value: f64 },
    /// Interior samples at `x_1..x_M` plus the two boundary values.
    Table {
        interior: Vec<f64>,
        left: f64,
        right: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default = "default_length")]
    pub interval_length: f64,
    pub grid_points: usize,
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub equilibrium: Equilibrium,
    pub sampling_period: f64,
    pub target_rate: f64,
    #[serde(default)]
    pub gammas: Option<Vec<f64>>,
    #[serde(default = "default_substeps")]
    pub substeps_per_hold: usize,
}

fn default_length() -> f64 {
    1.0
}

fn default_substeps() -> usize {
    64
}

impl ProblemSpec {
    /// Unit interval, zero equilibrium, 64 substeps, gammas left to default.
    pub fn new(grid_points: usize, nonlinearity: Nonlinearity, period: f64, rate: f64) -> Self {
        ProblemSpec {
            interval_length: 1.0,
            grid_points,
            nonlinearity,
            equilibrium: Equilibrium::Zero,
            sampling_period: period,
            target_rate: rate,
            gammas: None,
            substeps_per_hold: default_substeps(),
        }
    }

    pub fn with_gammas(mut self, gammas: Vec<f64>) -> Self {
        self.gammas = Some(gammas);
        self
    }

    pub fn with_equilibrium(mut self, equilibrium: Equilibrium) -> Self {
        self.equilibrium = equilibrium;
        self
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps_per_hold = substeps;
        self
    }
}

/// A spec that passed validation, with the grid laid out.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProblem {
    spec: ProblemSpec,
    h: f64,
    nodes: Vec<f64>,
    equilibrium: Vec<f64>,
    equilibrium_left: f64,
    equilibrium_right: f64,
}

impl ValidatedProblem {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid_points(&self) -> usize {
        self.spec.grid_points
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn length(&self) -> f64 {
        self.spec.interval_length
    }

    /// Interior node coordinates `x_1..x_M`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn period(&self) -> f64 {
        self.spec.sampling_period
    }

    pub fn rate(&self) -> f64 {
        self.spec.target_rate
    }

    pub fn substeps(&self) -> usize {
        self.spec.substeps_per_hold
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.spec.nonlinearity
    }

    /// Equilibrium at the interior nodes.
    pub fn equilibrium(&self) -> &[f64] {
        &self.equilibrium
    }

    /// Equilibrium value at the controlled end `x = L`.
    pub fn equilibrium_right(&self) -> f64 {
        self.equilibrium_right
    }

    pub fn equilibrium_left(&self) -> f64 {
        self.equilibrium_left
    }

    /// Explicit gammas if given, otherwise `rho + k` for `k = 1..=n` when absent.
    pub fn gammas_for(&self, n: usize) -> Vec<f64> {
        match &self.spec.gammas {
            Some(g) => g.clone(),
            None => default_gammas(self.spec.target_rate, n),
        }
    }

    /// Same problem on a different grid. Table equilibria cannot be resampled.
    pub fn refined(&self, grid_points: usize) -> Result<ValidatedProblem> {
        let mut spec = self.spec.clone();
        spec.grid_points = grid_points;
        validate_spec(&spec)
    }

    pub fn with_period(&self, period: f64) -> Result<ValidatedProblem> {
        let mut spec = self.spec.clone();
        spec.sampling_period = period;
        validate_spec(&spec)
    }

    pub fn with_substeps(&self, substeps: usize) -> Result<ValidatedProblem> {
        let mut spec = self.spec.clone();
        spec.substeps_per_hold = substeps;
        validate_spec(&spec)
    }

    pub fn with_gammas(&self, gammas: Option<Vec<f64>>) -> Result<ValidatedProblem> {
        let mut spec = self.spec.clone();
        spec.gammas = gammas;
        validate_spec(&spec)
    }
}

pub fn default_gammas(rho: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| rho + k as f64).collect()
}

pub fn validate_spec(spec: &ProblemSpec) -> Result<ValidatedProblem> {
    let mut violations = Vec::new();
    let period = spec.sampling_period;
    if period <= 0.0 || !period.is_finite() {
        violations.push(Violation::NonPositivePeriod(period));
    }
    let rho = spec.target_rate;
    if rho <= 0.0 || !rho.is_finite() {
        violations.push(Violation::NonPositiveRate(rho));
    }
    let length = spec.interval_length;
    if length <= 0.0 || !length.is_finite() {
        violations.push(Violation::NonPositiveLength(length));
    }
    if spec.grid_points < MIN_GRID_POINTS {
        violations.push(Violation::GridTooCoarse {
            grid_points: spec.grid_points,
            minimum: MIN_GRID_POINTS,
        });
    }
    if spec.substeps_per_hold == 0 {
        violations.push(Violation::ZeroSubsteps);
    }
    if !spec.nonlinearity.parameters_finite() {
        violations.push(Violation::NonFiniteParameter("nonlinearity"));
    }
    if let Some(gammas) = &spec.gammas {
        if let Some(v) = gamma_ordering_violation(rho, gammas) {
            violations.push(v);
        }
    }
    if let Equilibrium::Table { interior, .. } = &spec.equilibrium {
        if interior.len() != spec.grid_points {
            violations.push(Violation::EquilibriumLength {
                expected: spec.grid_points,
                found: interior.len(),
            });
        }
    }
    if !violations.is_empty() {
        return Err(Error::InvalidProblem(Violations(violations)));
    }

    let m = spec.grid_points;
    let h = length / (m as f64 + 1.0);
    let nodes: Vec<f64> = (1..=m).map(|j| j as f64 * h).collect();
    let (equilibrium, left, right) = match &spec.equilibrium {
        Equilibrium::Zero => (vec![0.0; m], 0.0, 0.0),
        Equilibrium::Constant { value } => (vec![*value; m], *value, *value),
        Equilibrium::Table {
            interior,
            left,
            right,
        } => (interior.clone(), *left, *right),
    };
    if !equilibrium.iter().chain([&left, &right]).all(|v| v.is_finite()) {
        return Err(Error::InvalidProblem(Violations(vec![
            Violation::NonFiniteParameter("equilibrium"),
        ])));
    }
    Ok(ValidatedProblem {
        spec: spec.clone(),
        h,
        nodes,
        equilibrium,
        equilibrium_left: left,
        equilibrium_right: right,
    })
}

/// Checks `rho < gamma_1 < gamma_2 < ...`.
pub fn gamma_ordering_violation(rho: f64, gammas: &[f64]) -> Option<Violation> {
    let mut prev = rho;
    for (i, &g) in gammas.iter().enumerate() {
        if !g.is_finite() || g <= prev {
            let detail = if i == 0 {
                format!("gamma_1 = {g} must exceed rho = {rho}")
            } else {
                format!("gamma_{} = {g} must exceed gamma_{} = {prev}", i + 1, i)
            };
            return Some(Violation::GammaOrderingViolation { index: i + 1, detail });
        }
        prev = g;
    }
    None
}

/// `c(x_j) = f_y(x_j, y_e(x_j))` on the interior nodes.
pub fn linearized_coefficient(problem: &ValidatedProblem) -> Result<Vec<f64>> {
    let f = problem.nonlinearity();
    problem
        .nodes()
        .iter()
        .zip(problem.equilibrium())
        .map(|(&x, &ye)| {
            let c = f.f_y(x, ye);
            if c.is_finite() {
                Ok(c)
            } else {
                Err(Error::NonFiniteCoefficient { x })
            }
        })
        .collect()
}
