//! Shifted Dirichlet lifts `D_{gamma_k}` of a boundary value at `x = L`.
//!
//! The lift solves `[A_h + sum_{i<N} (1/Lambda_ik - lambda_i) phi_i <phi_i, .>_h] psi = (v/h^2) e_M`,
//! i.e. the finite-difference operator whose first `N` eigenvalues are moved
//! from `lambda_i` to `1/Lambda_ik`, with `psi(L) = v` eliminated into the
//! right-hand side.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spectral::{inner, project, Spectrum};
use crate::synthesis::GainSet;

/// Interior values of a lift together with its boundary datum.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftProfile {
    pub k: usize,
    pub gamma: f64,
    pub boundary_value: f64,
    /// Values at interior nodes `x_1..x_M`; `psi(0) = 0`, `psi(L) = boundary_value`.
    pub profile: Vec<f64>,
}

impl LiftProfile {
    pub fn scaled(&self, v: f64) -> LiftProfile {
        LiftProfile {
            k: self.k,
            gamma: self.gamma,
            boundary_value: self.boundary_value * v,
            profile: self.profile.iter().map(|p| p * v).collect(),
        }
    }
}

fn check_index(gains: &GainSet, k: usize) -> Result<()> {
    if k >= gains.unstable_count() {
        return Err(Error::InvalidArgument(format!(
            "lift index {k} out of range for {} gammas",
            gains.unstable_count()
        )));
    }
    Ok(())
}

fn check_consistent(spectrum: &Spectrum, gains: &GainSet) -> Result<()> {
    if spectrum.unstable_count() != gains.unstable_count() {
        return Err(Error::DimensionMismatch {
            expected: spectrum.unstable_count(),
            found: gains.unstable_count(),
        });
    }
    Ok(())
}

/// Dense matrix of the shifted operator for gamma index `k`.
pub fn lift_operator(spectrum: &Spectrum, gains: &GainSet, k: usize) -> Result<DMatrix<f64>> {
    check_consistent(spectrum, gains)?;
    check_index(gains, k)?;
    let h = spectrum.h();
    let mut a = spectrum.operator().to_dense();
    for i in 0..gains.unstable_count() {
        let shift = 1.0 / gains.lambda_diags()[k][i] - spectrum.lambda(i);
        let phi = spectrum.modes().column(i);
        a.ger(shift * h, &phi, &phi, 1.0);
    }
    Ok(a)
}

fn boundary_rhs(m: usize, h: f64, v: f64) -> DVector<f64> {
    let mut r = DVector::zeros(m);
    r[m - 1] = v / (h * h);
    r
}

/// Solves the lift system for gamma index `k` (0-based) and boundary value `v`.
pub fn dirichlet_lift(spectrum: &Spectrum, gains: &GainSet, k: usize, v: f64) -> Result<LiftProfile> {
    let a = lift_operator(spectrum, gains, k)?;
    let m = spectrum.dim();
    let rhs = boundary_rhs(m, spectrum.h(), v);
    let psi = a.lu().solve(&rhs).ok_or(Error::SingularLiftSystem { k })?;
    if psi.iter().any(|p| !p.is_finite()) {
        return Err(Error::SingularLiftSystem { k });
    }
    Ok(LiftProfile {
        k,
        gamma: gains.gammas()[k],
        boundary_value: v,
        profile: psi.as_slice().to_vec(),
    })
}

/// `||K psi - (v/h^2) e_M|| / ||(v/h^2) e_M||` for the discrete lift equation.
pub fn lift_equation_residual(spectrum: &Spectrum, gains: &GainSet, lift: &LiftProfile) -> Result<f64> {
    let a = lift_operator(spectrum, gains, lift.k)?;
    let rhs = boundary_rhs(spectrum.dim(), spectrum.h(), lift.boundary_value);
    let r = a * DVector::from_column_slice(&lift.profile) - &rhs;
    let scale = rhs.norm();
    Ok(if scale == 0.0 { r.norm() } else { r.norm() / scale })
}

/// Smallest eigenvalue of the shifted operator. Its eigenvectors are the
/// modes of `A_h`, so the spectrum is `{1/Lambda_ik : i < N} ∪ {lambda_i : i >= N}`.
/// With no gains (`N = 0`) this is `lambda_1`.
pub fn coercivity_check(spectrum: &Spectrum, gains: Option<&GainSet>, k: usize) -> Result<f64> {
    let Some(gains) = gains else {
        return Ok(spectrum.lambda(0));
    };
    check_consistent(spectrum, gains)?;
    check_index(gains, k)?;
    let n = gains.unstable_count();
    let shifted = gains.lambda_diags()[k].iter().map(|l| 1.0 / l);
    let rest = spectrum.lambdas()[n..].iter().copied();
    Ok(shifted.chain(rest).fold(f64::INFINITY, f64::min))
}

/// Unit-datum lifts `D_{gamma_k} 1` for every `k`, computed once per gain set.
#[derive(Debug, Clone)]
pub struct UnitLifts {
    lifts: Vec<LiftProfile>,
}

impl UnitLifts {
    pub fn new(spectrum: &Spectrum, gains: &GainSet) -> Result<UnitLifts> {
        let lifts = (0..gains.unstable_count())
            .map(|k| {
                if coercivity_check(spectrum, Some(gains), k)? <= 0.0 {
                    return Err(Error::SingularLiftSystem { k });
                }
                dirichlet_lift(spectrum, gains, k, 1.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(UnitLifts { lifts })
    }

    pub fn get(&self, k: usize) -> &LiftProfile {
        &self.lifts[k]
    }

    pub fn len(&self) -> usize {
        self.lifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lifts.is_empty()
    }

    /// `h_k = D_{gamma_k} F_k(y_sample)` for every `k`.
    pub fn hold_profiles(&self, gains: &GainSet, spectrum: &Spectrum, y_sample: &[f64]) -> Result<Vec<LiftProfile>> {
        check_consistent(spectrum, gains)?;
        if y_sample.len() != spectrum.dim() {
            return Err(Error::DimensionMismatch {
                expected: spectrum.dim(),
                found: y_sample.len(),
            });
        }
        let coords = project(y_sample, spectrum, gains.unstable_count());
        Ok(self
            .lifts
            .iter()
            .enumerate()
            .map(|(k, unit)| unit.scaled(gains.component_feedback(k, &coords.0)))
            .collect())
    }
}

/// Convenience wrapper computing the unit lifts on the fly.
pub fn hold_profiles(gains: &GainSet, spectrum: &Spectrum, y_sample: &[f64]) -> Result<Vec<LiftProfile>> {
    UnitLifts::new(spectrum, gains)?.hold_profiles(gains, spectrum, y_sample)
}

/// Relative defects `|<psi_k, phi_i>_h + Lambda_ik v b_i| / |Lambda_ik v b_i|`,
/// indexed `[i]` for the given lift.
pub fn modal_identity_defects(spectrum: &Spectrum, gains: &GainSet, lift: &LiftProfile) -> Vec<f64> {
    let h = spectrum.h();
    (0..gains.unstable_count())
        .map(|i| {
            let want = -gains.lambda_diags()[lift.k][i] * lift.boundary_value * spectrum.boundary_fluxes()[i];
            let got = inner(&lift.profile, spectrum.modes().column(i).as_slice(), h);
            ((got - want) / want).abs()
        })
        .collect()
}
