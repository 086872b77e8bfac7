//! Discrete linearized operator `A = -d^2/dx^2 - c(x)` with homogeneous
//! Dirichlet conditions, its eigen-decomposition and the modal projections
//! and norms built on it.
//!
//! Grid functions live on the interior nodes only. The inner product is
//! `<u, v>_h = h * sum_j u_j v_j`, which makes the assembled matrix symmetric
//! and its eigenvectors orthonormal without a mass matrix.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{linearized_coefficient, ValidatedProblem};

/// Tolerance on `|rho - lambda_i|` below which the unstable count is ill-posed.
pub const RHO_GAP_TOL: f64 = 1e-9;
/// Eigenvalue gaps below this trigger a warning (1-D theory says they are simple).
pub const DEGENERATE_GAP: f64 = 1e-8;

/// Symmetric tridiagonal matrix; `off[j]` couples rows `j` and `j + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for j in 0..n {
            let mut acc = self.diag[j] * x[j];
            if j > 0 {
                acc += self.off[j - 1] * x[j - 1];
            }
            if j + 1 < n {
                acc += self.off[j] * x[j + 1];
            }
            y[j] = acc;
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(j, j)] = self.diag[j];
            if j + 1 < n {
                a[(j, j + 1)] = self.off[j];
                a[(j + 1, j)] = self.off[j];
            }
        }
        a
    }
}

/// `A_h`: diagonal `2/h^2 - c(x_j)`, off-diagonal `-1/h^2`, boundary rows eliminated.
pub fn assemble_operator(problem: &ValidatedProblem, c: &[f64]) -> SymTridiagonal {
    let m = problem.grid_points();
    debug_assert_eq!(c.len(), m);
    let inv_h2 = 1.0 / (problem.h() * problem.h());
    SymTridiagonal {
        diag: c.iter().map(|cj| 2.0 * inv_h2 - cj).collect(),
        off: vec![-inv_h2; m - 1],
    }
}

/// Eigenpairs of the discrete operator plus the unstable-mode selection.
#[derive(Debug, Clone)]
pub struct Spectrum {
    lambdas: Vec<f64>,
    /// Column `i` is mode `i`, h-orthonormal, first component positive.
    modes: DMatrix<f64>,
    boundary_flux: Vec<f64>,
    unstable: usize,
    rho: Option<f64>,
    h: f64,
    operator: SymTridiagonal,
}

impl Spectrum {
    /// Linearize, assemble, decompose and select with the problem's `rho`.
    pub fn compute(problem: &ValidatedProblem) -> Result<Spectrum> {
        let c = linearized_coefficient(problem)?;
        let a = assemble_operator(problem, &c);
        eigendecompose(&a, problem.h())?.with_rho(problem.rate())
    }

    /// Spectrum of the pure Dirichlet Laplacian on the same grid, in closed
    /// form: `mu_j = (4/h^2) sin^2(j pi h / 2L)`, `phi_j(x) = sqrt(2/L) sin(j pi x / L)`.
    pub fn laplacian(problem: &ValidatedProblem) -> Result<Spectrum> {
        let m = problem.grid_points();
        let h = problem.h();
        let len = problem.length();
        let zero = vec![0.0; m];
        let operator = assemble_operator(problem, &zero);
        let norm = (2.0 / len).sqrt();
        let lambdas: Vec<f64> = (1..=m)
            .map(|j| {
                let s = (j as f64 * std::f64::consts::PI * h / (2.0 * len)).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        let modes = DMatrix::from_fn(m, m, |k, j| {
            norm * ((j + 1) as f64 * std::f64::consts::PI * problem.nodes()[k] / len).sin()
        });
        let boundary_flux = (0..m)
            .map(|i| boundary_flux(modes.column(i).as_slice(), h))
            .collect();
        Ok(Spectrum {
            lambdas,
            modes,
            boundary_flux,
            unstable: 0,
            rho: None,
            h,
            operator,
        })
    }

    /// Fixes `N` from `lambda_N < rho <= lambda_{N+1}`.
    pub fn with_rho(mut self, rho: f64) -> Result<Spectrum> {
        self.unstable = select_unstable(&self.lambdas, rho)?;
        self.rho = Some(rho);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.lambdas[i]
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> Vec<f64> {
        self.modes.column(i).iter().copied().collect()
    }

    pub fn boundary_fluxes(&self) -> &[f64] {
        &self.boundary_flux
    }

    /// Number of modes with `lambda_i < rho` (zero before `with_rho`).
    pub fn unstable_count(&self) -> usize {
        self.unstable
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn operator(&self) -> &SymTridiagonal {
        &self.operator
    }

    pub fn unstable_lambdas(&self) -> &[f64] {
        &self.lambdas[..self.unstable]
    }

    pub fn unstable_fluxes(&self) -> &[f64] {
        &self.boundary_flux[..self.unstable]
    }

    /// `max |<phi_i, phi_j>_h - delta_ij|` over all pairs.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.modes.tr_mul(&self.modes) * self.h;
        let n = gram.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// All `M` modal coefficients `<y, phi_i>_h`.
    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(y);
        (self.modes.tr_mul(&v) * self.h).iter().copied().collect()
    }
}

/// Ascending eigenvalues and h-orthonormal eigenvectors of a tridiagonal operator.
pub fn eigendecompose(a: &SymTridiagonal, h: f64) -> Result<Spectrum> {
    let n = a.dim();
    let (values, vectors) = tridiagonal_eigen(&a.diag, &a.off)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));

    let scale = 1.0 / h.sqrt();
    let mut lambdas = Vec::with_capacity(n);
    let mut modes = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        lambdas.push(values[src]);
        let col = &vectors[src * n..(src + 1) * n];
        let pivot = col.iter().copied().find(|v| v.abs() > 1e-300).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -scale } else { scale };
        for (k, v) in col.iter().enumerate() {
            modes[(k, dst)] = sign * v;
        }
    }
    for w in lambdas.windows(2) {
        if w[1] - w[0] < DEGENERATE_GAP {
            log::warn!(
                "near-degenerate eigenvalues {} and {}: the grid may be under-resolved",
                w[0],
                w[1]
            );
        }
    }
    let boundary_flux = (0..n)
        .map(|i| boundary_flux(modes.column(i).as_slice(), h))
        .collect();
    Ok(Spectrum {
        lambdas,
        modes,
        boundary_flux,
        unstable: 0,
        rho: None,
        h,
        operator: a.clone(),
    })
}

/// Largest `N` with `lambda_N < rho`.
pub fn select_unstable(lambdas: &[f64], rho: f64) -> Result<usize> {
    if let Some((index, &lambda)) = lambdas
        .iter()
        .enumerate()
        .find(|(_, &l)| (l - rho).abs() < RHO_GAP_TOL)
    {
        return Err(Error::RhoOnEigenvalue {
            rho,
            index: index + 1,
            lambda,
        });
    }
    let n = lambdas.iter().take_while(|&&l| l < rho).count();
    if n == 0 {
        log::warn!("no eigenvalue below rho = {rho}; the feedback is identically zero");
    }
    Ok(n)
}

/// Outward normal derivative at `x = L` from the one-sided second-order stencil
/// `(3 phi(L) - 4 phi_M + phi_{M-1}) / (2h)` with `phi(L) = 0`.
pub fn boundary_flux(mode: &[f64], h: f64) -> f64 {
    let m = mode.len();
    match m {
        0 => 0.0,
        1 => -mode[0] / h,
        _ => (-4.0 * mode[m - 1] + mode[m - 2]) / (2.0 * h),
    }
}

/// Coordinates `<y, phi_i>_h` of `y` on the first `N` modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalCoordinates(pub Vec<f64>);

impl ModalCoordinates {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn project(y: &[f64], spectrum: &Spectrum, n: usize) -> ModalCoordinates {
    let h = spectrum.h();
    ModalCoordinates(
        (0..n)
            .map(|i| h * spectrum.modes.column(i).iter().zip(y).map(|(p, v)| p * v).sum::<f64>())
            .collect(),
    )
}

pub fn embed(coords: &ModalCoordinates, spectrum: &Spectrum) -> Vec<f64> {
    let mut y = vec![0.0; spectrum.dim()];
    for (i, &c) in coords.0.iter().enumerate() {
        for (yj, p) in y.iter_mut().zip(spectrum.modes.column(i).iter()) {
            *yj += c * p;
        }
    }
    y
}

pub fn inner(u: &[f64], v: &[f64], h: f64) -> f64 {
    h * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
}

pub fn l2_norm(u: &[f64], h: f64) -> f64 {
    inner(u, u, h).sqrt()
}

/// Surrogate `H^s` norm `sqrt(sum_i mu_i^s <y, e_i>_h^2)` over the Laplacian modes.
pub fn sobolev_norm(y: &[f64], s: f64, laplacian: &Spectrum) -> f64 {
    laplacian
        .coefficients(y)
        .iter()
        .zip(laplacian.lambdas())
        .map(|(c, mu)| mu.powf(s) * c * c)
        .sum::<f64>()
        .sqrt()
}

/// Implicit QL with Wilkinson-type shifts on a symmetric tridiagonal matrix
/// (the EISPACK `tql2` scheme). Returns eigenvalues in no particular order and
/// the eigenvectors as consecutive unit columns of a column-major buffer.
fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&off[..n.saturating_sub(1)]);
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::EigenSolverFailure { index: l });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut hh = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= hh;
                }
                f += hh;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    hh = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = hh + s * (c * g + s * d[i]);

                    let (left, right) = z.split_at_mut((i + 1) * n);
                    let zi = &mut left[i * n..];
                    let zi1 = &mut right[..n];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let t = *b;
                        *b = s * *a + c * t;
                        *a = c * *a - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok((d, z))
}
