//! Sampled-data gain synthesis and its continuous-time limit.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::gamma_ordering_violation;
use crate::precise::{self, one_minus_exp_neg, real, to_f64, PMatrix, Real};
use crate::spectral::{project, Spectrum};

/// Condition numbers of `sum_k B_k` above this are flagged in reports.
pub const CONDITION_WARNING: f64 = 1e12;
/// Working precision ceiling for the gain algebra.
pub const MAX_PRECISION_BITS: usize = 8192;

const START_BITS: usize = 128;
const HEADROOM_BITS: f64 = 96.0;
const SERIES_SWITCH: f64 = 1e-4;
const MIN_DENOMINATOR: f64 = 1e-300;

/// `E(x) = (1 - e^{-x}) / x`, `E(0) = 1`.
pub fn exp_ratio(x: f64) -> f64 {
    if x.abs() < SERIES_SWITCH {
        1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `int_0^T e^{-lambda s} ds`.
pub fn integral_exp(lambda: f64, period: f64) -> f64 {
    period * exp_ratio(lambda * period)
}

/// Diagonal entry of `Lambda_{gamma}`:
/// `int_0^T e^{-lambda s} ds / (e^{-lambda T} - e^{-gamma T})`.
pub fn lambda_entry(lambda: f64, gamma: f64, period: f64) -> Result<f64> {
    if period <= 0.0 || !period.is_finite() {
        return Err(Error::InvalidArgument(format!("sampling period must be > 0, got {period}")));
    }
    if !(lambda < gamma) {
        return Err(Error::InvalidArgument(format!(
            "lambda_entry needs lambda < gamma, got lambda = {lambda}, gamma = {gamma}"
        )));
    }
    let gap = -(-(gamma - lambda) * period).exp_m1();
    let denom = (-lambda * period).exp() * gap;
    if !(denom >= MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator {
            lambda,
            gamma,
            period,
            value: denom,
        });
    }
    // Dividing numerator and denominator by e^{-lambda T} avoids overflow
    // for strongly unstable modes.
    Ok(period * exp_ratio(-lambda * period) / gap)
}

/// Multiprecision gain algebra shared by the sampled and continuous gains.
#[derive(Debug)]
struct Algebra {
    bits: usize,
    n: usize,
    /// `[k][i]` diagonal of `Lambda_k`.
    lambda: Vec<Vec<Real>>,
    flux: Vec<Real>,
    b0: PMatrix,
    bk: Vec<PMatrix>,
    bsum_values: Vec<Real>,
    bsum_vectors: PMatrix,
    binv: PMatrix,
    components: Vec<Vec<Real>>,
    gain: Vec<Real>,
    log2_condition: f64,
}

impl Algebra {
    fn condition_number(&self) -> f64 {
        2f64.powf(self.log2_condition)
    }
}

fn round_up_bits(bits: f64) -> usize {
    ((bits / 64.0).ceil() as usize) * 64
}

/// Runs the algebra at increasing precision until the condition number of
/// `sum_k B_k` leaves `HEADROOM_BITS + extra_bits` bits to spare.
fn assemble(
    fluxes: &[f64],
    extra_bits: f64,
    diagonals: impl Fn(usize) -> Vec<Vec<Real>>,
) -> Result<Algebra> {
    let n = fluxes.len();
    let mut bits = START_BITS.max(round_up_bits(extra_bits + HEADROOM_BITS + 32.0));
    loop {
        let lambda = diagonals(bits);
        let flux: Vec<Real> = fluxes.iter().map(|&b| real(b, bits)).collect();
        let vs: Vec<Vec<Real>> = lambda
            .iter()
            .map(|d| d.iter().zip(&flux).map(|(l, b)| l * b).collect())
            .collect();
        let mut bsum = PMatrix::zeros(n, bits);
        let bk: Vec<PMatrix> = vs.iter().map(|v| PMatrix::outer(v, v)).collect();
        for m in &bk {
            bsum = bsum.add(m);
        }
        let (values, vectors) = bsum.sym_eigen(bits);
        let lo = precise::min_real(&values);
        let hi = precise::max_real(&values);
        let log2_condition = if lo > Real::ZERO {
            precise::log2_ratio(&hi, &lo).unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        let needed = log2_condition + HEADROOM_BITS + extra_bits;
        if needed <= bits as f64 {
            let binv = PMatrix::sym_function(&values, &vectors, |d| precise::one(bits) / d);
            let components: Vec<Vec<Real>> = vs.iter().map(|v| binv.mul_vec(v)).collect();
            let mut gain = components[0].clone();
            for c in &components[1..] {
                for (g, ci) in gain.iter_mut().zip(c) {
                    *g += ci;
                }
            }
            return Ok(Algebra {
                bits,
                n,
                lambda,
                b0: PMatrix::outer(&flux, &flux),
                flux,
                bk,
                bsum_values: values,
                bsum_vectors: vectors,
                binv,
                components,
                gain,
                log2_condition,
            });
        }
        let next = if needed.is_finite() {
            round_up_bits(needed + 32.0).max(2 * bits)
        } else {
            2 * bits
        };
        if next > MAX_PRECISION_BITS {
            return Err(Error::SingularBSum {
                condition: 2f64.powf(log2_condition),
                bits,
            });
        }
        log::debug!("gain algebra: condition 2^{log2_condition:.1}, raising precision to {next} bits");
        bits = next;
    }
}

fn diag_to_f64(lambda: &[Vec<Real>]) -> Vec<Vec<f64>> {
    lambda.iter().map(|d| d.iter().map(to_f64).collect()).collect()
}

fn vec_to_f64(v: &[Real]) -> Vec<f64> {
    v.iter().map(to_f64).collect()
}

fn check_gammas(spectrum: &Spectrum, gammas: &[f64]) -> Result<usize> {
    let n = spectrum.unstable_count();
    if n == 0 {
        return Err(Error::NoUnstableModes);
    }
    if gammas.len() != n {
        return Err(Error::GammaArityMismatch {
            given: gammas.len(),
            unstable: n,
        });
    }
    let rho = spectrum.rho().unwrap_or(spectrum.lambda(n - 1));
    if let Some(v) = gamma_ordering_violation(rho, gammas) {
        return Err(Error::GammaOrdering(v.to_string()));
    }
    if let Some(&lam) = spectrum.unstable_lambdas().iter().find(|&&l| l >= gammas[0]) {
        return Err(Error::GammaOrdering(format!(
            "gamma_1 = {} does not exceed unstable eigenvalue {lam}",
            gammas[0]
        )));
    }
    Ok(n)
}

/// Sampled-data feedback `u(t) = <g, Q_N y(iT)>` on `[iT, (i+1)T)`.
///
/// Matrix fields are `f64` roundings of a multiprecision computation; the
/// consistency checks below evaluate against the multiprecision originals.
#[derive(Debug, Clone)]
pub struct GainSet {
    period: f64,
    gammas: Vec<f64>,
    lambdas: Vec<f64>,
    fluxes: Vec<f64>,
    lambda_diags: Vec<Vec<f64>>,
    lambda_sum: Vec<f64>,
    b0: DMatrix<f64>,
    bk: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
    component_rows: Vec<Vec<f64>>,
    gain_row: Vec<f64>,
    condition_number: f64,
    exact: Arc<Algebra>,
}

pub fn build_gains(spectrum: &Spectrum, gammas: &[f64], period: f64) -> Result<GainSet> {
    check_gammas(spectrum, gammas)?;
    GainSet::from_modal_data(spectrum.unstable_lambdas(), spectrum.unstable_fluxes(), gammas, period)
}

impl GainSet {
    /// Builds gains directly from unstable eigenvalues and their fluxes.
    pub fn from_modal_data(lambdas: &[f64], fluxes: &[f64], gammas: &[f64], period: f64) -> Result<GainSet> {
        let n = lambdas.len();
        if n == 0 {
            return Err(Error::NoUnstableModes);
        }
        if fluxes.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: fluxes.len(),
            });
        }
        if gammas.len() != n {
            return Err(Error::GammaArityMismatch {
                given: gammas.len(),
                unstable: n,
            });
        }
        let mut lambda_diags = Vec::with_capacity(n);
        for &g in gammas {
            lambda_diags.push(
                lambdas
                    .iter()
                    .map(|&l| lambda_entry(l, g, period))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        if let Some(i) = fluxes.iter().position(|b| *b == 0.0 || !b.is_finite()) {
            return Err(Error::SingularBSum {
                condition: f64::INFINITY,
                bits: 0,
            })
            .inspect_err(|_| log::warn!("boundary flux of unstable mode {} is {}", i + 1, fluxes[i]));
        }

        // Bits lost to cancellation in e^{-lambda T} - I b g^T.
        let growth = lambdas
            .iter()
            .map(|l| (-l * period / std::f64::consts::LN_2).max(0.0))
            .fold(0.0, f64::max);
        let exact = assemble(fluxes, growth, |bits| {
            let t = real(period, bits);
            gammas
                .iter()
                .map(|&g| {
                    lambdas
                        .iter()
                        .map(|&l| {
                            let lr = real(l, bits);
                            let gap = &(real(g, bits) - &lr) * &t;
                            // I / (x - y) = T E(-lambda T) / (1 - e^{-(gamma - lambda) T})
                            let num = &t * &precise::exp_ratio(&(-(&lr * &t)), bits);
                            num / one_minus_exp_neg(&gap, bits)
                        })
                        .collect()
                })
                .collect()
        })?;

        let condition_number = exact.condition_number();
        if condition_number > CONDITION_WARNING {
            log::warn!(
                "sum of B_k has condition number {condition_number:.3e} (T = {period}); gains computed at {} bits",
                exact.bits
            );
        }
        let lambda_sum = (0..n).map(|i| lambda_diags.iter().map(|d| d[i]).sum()).collect();
        Ok(GainSet {
            period,
            gammas: gammas.to_vec(),
            lambdas: lambdas.to_vec(),
            fluxes: fluxes.to_vec(),
            lambda_diags,
            lambda_sum,
            b0: exact.b0.to_dmatrix(),
            bk: exact.bk.iter().map(PMatrix::to_dmatrix).collect(),
            b: exact.binv.to_dmatrix(),
            component_rows: exact.components.iter().map(|c| vec_to_f64(c)).collect(),
            gain_row: vec_to_f64(&exact.gain),
            condition_number,
            exact: Arc::new(exact),
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn fluxes(&self) -> &[f64] {
        &self.fluxes
    }

    pub fn unstable_count(&self) -> usize {
        self.lambdas.len()
    }

    /// `lambda_diags()[k][i]` is entry `i` of `Lambda_{gamma_k}`.
    pub fn lambda_diags(&self) -> &[Vec<f64>] {
        &self.lambda_diags
    }

    pub fn lambda_sum(&self) -> &[f64] {
        &self.lambda_sum
    }

    pub fn b0(&self) -> &DMatrix<f64> {
        &self.b0
    }

    pub fn bk(&self) -> &[DMatrix<f64>] {
        &self.bk
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Row `k` is `B Lambda_k b`; the feedback component `F_k`.
    pub fn component_rows(&self) -> &[Vec<f64>] {
        &self.component_rows
    }

    pub fn gain_row(&self) -> &[f64] {
        &self.gain_row
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn ill_conditioned(&self) -> bool {
        self.condition_number > CONDITION_WARNING
    }

    pub fn precision_bits(&self) -> usize {
        self.exact.bits
    }

    /// `F(y) = <g, y^N>` for modal coordinates `y^N`.
    pub fn feedback(&self, coords: &[f64]) -> f64 {
        dot(&self.gain_row, coords)
    }

    /// `F_k(y) = <B Lambda_k b, y^N>`.
    pub fn component_feedback(&self, k: usize, coords: &[f64]) -> f64 {
        dot(&self.component_rows[k], coords)
    }

    /// `sum_k e^{-gamma_k T} B_k B`, rounded from the multiprecision product.
    pub fn closed_loop_matrix(&self) -> DMatrix<f64> {
        self.closed_loop_exact().to_dmatrix()
    }

    fn closed_loop_exact(&self) -> PMatrix {
        let e = &self.exact;
        let mut sum = PMatrix::zeros(e.n, e.bits);
        for (k, g) in self.gammas.iter().enumerate() {
            let y = decay(*g, self.period, e.bits);
            sum = sum.add(&e.bk[k].scale(&y));
        }
        sum.mul(&e.binv)
    }

    /// Relative Frobenius residual of
    /// `e^{-A_N T} - I_N b g^T = sum_k e^{-gamma_k T} B_k B`.
    pub fn identity_residual(&self) -> f64 {
        let e = &self.exact;
        let bits = e.bits;
        let t = real(self.period, bits);
        let mut lhs = PMatrix::zeros(e.n, bits);
        for i in 0..e.n {
            let lr = real(self.lambdas[i], bits);
            let x = (-(&lr * &t)).exp();
            let integ = &t * &precise::exp_ratio(&(&lr * &t), bits);
            let ib = &integ * &e.flux[i];
            for j in 0..e.n {
                let mut v = -(&ib * &e.gain[j]);
                if i == j {
                    v += &x;
                }
                lhs.set(i, j, v);
            }
        }
        let rhs = self.closed_loop_exact();
        to_f64(&(lhs.sub(&rhs).frobenius() / rhs.frobenius()))
    }

    /// The same residual evaluated entirely in `f64` from the rounded fields.
    pub fn identity_residual_f64(&self) -> f64 {
        let n = self.unstable_count();
        let mut lhs = DMatrix::zeros(n, n);
        for i in 0..n {
            let ib = integral_exp(self.lambdas[i], self.period) * self.fluxes[i];
            for j in 0..n {
                lhs[(i, j)] = -ib * self.gain_row[j];
            }
            lhs[(i, i)] += (-self.lambdas[i] * self.period).exp();
        }
        let mut rhs = DMatrix::zeros(n, n);
        for (k, g) in self.gammas.iter().enumerate() {
            rhs += &self.bk[k] * (-g * self.period).exp();
        }
        let rhs = rhs * &self.b;
        (lhs - &rhs).norm() / rhs.norm()
    }

    /// `||(sum_k B_k) B - I||_F`.
    pub fn resolution_residual(&self) -> f64 {
        resolution_residual(&self.exact)
    }

    /// Largest eigenvalue of `B^{1/2} (sum_k e^{-gamma_k T} B_k) B^{1/2}`.
    pub fn contraction_lambda_max(&self) -> f64 {
        let e = &self.exact;
        let mut weighted = PMatrix::zeros(e.n, e.bits);
        for (k, g) in self.gammas.iter().enumerate() {
            weighted = weighted.add(&e.bk[k].scale(&decay(*g, self.period, e.bits)));
        }
        let half = PMatrix::sym_function(&e.bsum_values, &e.bsum_vectors, |d| {
            precise::one(e.bits) / d.sqrt()
        });
        let c = half.mul(&weighted).mul(&half);
        let (values, _) = c.sym_eigen(e.bits);
        to_f64(&precise::max_real(&values))
    }

    /// `e^{-gamma_1 T}`.
    pub fn contraction_bound(&self) -> f64 {
        (-self.gammas[0] * self.period).exp()
    }

    /// `sqrt(cond(B))`, the constant relating the `B^{1/2}` norm to the
    /// Euclidean norm of `y^N`.
    pub fn modal_constant(&self) -> f64 {
        self.condition_number.sqrt()
    }
}

fn decay(gamma: f64, period: f64, bits: usize) -> Real {
    (-(real(gamma, bits) * real(period, bits))).exp()
}

fn resolution_residual(e: &Algebra) -> f64 {
    let mut bsum = PMatrix::zeros(e.n, e.bits);
    for m in &e.bk {
        bsum = bsum.add(m);
    }
    let r = bsum.mul(&e.binv).sub(&PMatrix::identity(e.n, e.bits));
    to_f64(&r.frobenius())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `u = <g, Q_N y>` for a full grid state `y`.
pub fn apply_feedback(gains: &GainSet, y: &[f64], spectrum: &Spectrum) -> Result<f64> {
    if gains.unstable_count() != spectrum.unstable_count() {
        return Err(Error::DimensionMismatch {
            expected: spectrum.unstable_count(),
            found: gains.unstable_count(),
        });
    }
    if y.len() != spectrum.dim() {
        return Err(Error::DimensionMismatch {
            expected: spectrum.dim(),
            found: y.len(),
        });
    }
    let coords = project(y, spectrum, gains.unstable_count());
    Ok(gains.feedback(&coords.0))
}

/// The `T -> 0` limit with `Lambda0_{gamma_k} = diag(1 / (gamma_k - lambda_i))`.
#[derive(Debug, Clone)]
pub struct ContinuousGainSet {
    gammas: Vec<f64>,
    lambdas: Vec<f64>,
    fluxes: Vec<f64>,
    lambda0_diags: Vec<Vec<f64>>,
    b0: DMatrix<f64>,
    b: DMatrix<f64>,
    gain_row: Vec<f64>,
    condition_number: f64,
    exact: Arc<Algebra>,
}

pub fn continuous_limit(spectrum: &Spectrum, gammas: &[f64]) -> Result<ContinuousGainSet> {
    check_gammas(spectrum, gammas)?;
    ContinuousGainSet::from_modal_data(spectrum.unstable_lambdas(), spectrum.unstable_fluxes(), gammas)
}

impl ContinuousGainSet {
    pub fn from_modal_data(lambdas: &[f64], fluxes: &[f64], gammas: &[f64]) -> Result<ContinuousGainSet> {
        let n = lambdas.len();
        if n == 0 {
            return Err(Error::NoUnstableModes);
        }
        if fluxes.len() != n || gammas.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if fluxes.len() != n { fluxes.len() } else { gammas.len() },
            });
        }
        for &g in gammas {
            if let Some(&l) = lambdas.iter().find(|&&l| !(l < g)) {
                return Err(Error::GammaOrdering(format!("gamma = {g} does not exceed lambda = {l}")));
            }
        }
        let exact = assemble(fluxes, 0.0, |bits| {
            gammas
                .iter()
                .map(|&g| {
                    lambdas
                        .iter()
                        .map(|&l| precise::one(bits) / (real(g, bits) - real(l, bits)))
                        .collect()
                })
                .collect()
        })?;
        let condition_number = exact.condition_number();
        if condition_number > CONDITION_WARNING {
            log::warn!("continuous-limit Gram matrix has condition number {condition_number:.3e}");
        }
        Ok(ContinuousGainSet {
            gammas: gammas.to_vec(),
            lambdas: lambdas.to_vec(),
            fluxes: fluxes.to_vec(),
            lambda0_diags: diag_to_f64(&exact.lambda),
            b0: exact.b0.to_dmatrix(),
            b: exact.binv.to_dmatrix(),
            gain_row: vec_to_f64(&exact.gain),
            condition_number,
            exact: Arc::new(exact),
        })
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn fluxes(&self) -> &[f64] {
        &self.fluxes
    }

    pub fn lambda0_diags(&self) -> &[Vec<f64>] {
        &self.lambda0_diags
    }

    pub fn b0(&self) -> &DMatrix<f64> {
        &self.b0
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn gain_row(&self) -> &[f64] {
        &self.gain_row
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn resolution_residual(&self) -> f64 {
        resolution_residual(&self.exact)
    }
}
