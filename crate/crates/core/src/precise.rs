//! Small dense linear algebra in arbitrary binary precision.
//!
//! The gain Gram matrix `sum_k B_k` is a sum of `N` rank-one terms whose
//! generating vectors become nearly parallel when `exp(-lambda_i T)` dwarfs
//! `exp(-gamma_k T)`; its condition number routinely exceeds `1e15`. All
//! `N x N` gain algebra therefore runs here, with the precision raised until
//! the condition number leaves ample headroom, and only the results are
//! rounded to `f64`.

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use nalgebra::DMatrix;

pub type Real = FBig<HalfEven, 2>;

pub fn real(x: f64, bits: usize) -> Real {
    Real::try_from(x)
        .expect("finite f64")
        .with_precision(bits)
        .value()
}

pub fn zero(bits: usize) -> Real {
    real(0.0, bits)
}

pub fn one(bits: usize) -> Real {
    real(1.0, bits)
}

pub fn to_f64(x: &Real) -> f64 {
    x.to_f64().value()
}

pub fn abs(x: &Real) -> Real {
    if x < &Real::ZERO {
        -x.clone()
    } else {
        x.clone()
    }
}

/// `log2 |x|`, or `None` for zero.
fn log2_abs(x: &Real) -> Option<f64> {
    if *x == Real::ZERO {
        return None;
    }
    let v = to_f64(x);
    if v != 0.0 && v.is_finite() {
        return Some(v.abs().log2());
    }
    // Outside the f64 range: exponent + bit length of the significand.
    let repr = x.repr();
    Some(repr.exponent() as f64 + repr.digits() as f64 - 1.0)
}

/// `1 - exp(-d)` to `bits` bits of relative accuracy, also for tiny `|d|`.
pub fn one_minus_exp_neg(d: &Real, bits: usize) -> Real {
    let extra = match log2_abs(d) {
        None => return zero(bits),
        Some(l) if l < 0.0 => (-l).ceil() as usize + 16,
        Some(_) => 16,
    };
    let wide = bits + extra;
    let dw = d.clone().with_precision(wide).value();
    let r = one(wide) - (-dw).exp();
    r.with_precision(bits).value()
}

/// `(1 - exp(-x)) / x` with the removable singularity at zero filled in.
pub fn exp_ratio(x: &Real, bits: usize) -> Real {
    if *x == Real::ZERO {
        return one(bits);
    }
    one_minus_exp_neg(x, bits) / x.clone().with_precision(bits).value()
}

/// Row-major square matrix of [`Real`].
#[derive(Clone, Debug)]
pub struct PMatrix {
    n: usize,
    data: Vec<Real>,
}

impl PMatrix {
    pub fn zeros(n: usize, bits: usize) -> Self {
        PMatrix {
            n,
            data: vec![zero(bits); n * n],
        }
    }

    pub fn identity(n: usize, bits: usize) -> Self {
        let mut m = Self::zeros(n, bits);
        for i in 0..n {
            m.data[i * n + i] = one(bits);
        }
        m
    }

    pub fn diag(d: &[Real], bits: usize) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, bits);
        for i in 0..n {
            m.data[i * n + i] = d[i].clone();
        }
        m
    }

    pub fn outer(u: &[Real], v: &[Real]) -> Self {
        let n = u.len();
        let mut data = Vec::with_capacity(n * n);
        for ui in u {
            for vj in v {
                data.push(ui * vj);
            }
        }
        PMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &Real {
        &self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Real) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul(&self, other: &PMatrix) -> PMatrix {
        let n = self.n;
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = self.get(i, 0) * other.get(0, j);
                for k in 1..n {
                    acc += self.get(i, k) * other.get(k, j);
                }
                data.push(acc);
            }
        }
        PMatrix { n, data }
    }

    pub fn mul_vec(&self, v: &[Real]) -> Vec<Real> {
        (0..self.n)
            .map(|i| {
                let mut acc = self.get(i, 0) * &v[0];
                for k in 1..self.n {
                    acc += self.get(i, k) * &v[k];
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, other: &PMatrix) -> PMatrix {
        PMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &PMatrix) -> PMatrix {
        PMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: &Real) -> PMatrix {
        PMatrix {
            n: self.n,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// `D self D` for diagonal `D`.
    pub fn congruence_diag(&self, d: &[Real]) -> PMatrix {
        let n = self.n;
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = &(&d[i] * self.get(i, j)) * &d[j];
            }
        }
        out
    }

    pub fn frobenius(&self) -> Real {
        let mut acc = self.data[0].clone() * &self.data[0];
        for a in &self.data[1..] {
            acc += a * a;
        }
        acc.sqrt()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| to_f64(self.get(i, j)))
    }

    /// Symmetric eigen-decomposition by cyclic Jacobi rotations with a
    /// relative off-diagonal threshold. Returns `(values, V)` with the
    /// eigenvectors in the columns of `V`.
    pub fn sym_eigen(&self, bits: usize) -> (Vec<Real>, PMatrix) {
        let n = self.n;
        let mut a = self.clone();
        let mut v = PMatrix::identity(n, bits);
        let tol = real(2f64.powi(-(bits as i32 - 8).min(1000)), bits);
        for _sweep in 0..100 {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.get(p, q).clone();
                    if apq == Real::ZERO {
                        continue;
                    }
                    let scale = (abs(a.get(p, p)) * abs(a.get(q, q))).sqrt();
                    if abs(&apq) <= &tol * &scale {
                        a.set(p, q, zero(bits));
                        a.set(q, p, zero(bits));
                        continue;
                    }
                    rotated = true;
                    let two = real(2.0, bits);
                    let theta = (a.get(q, q) - a.get(p, p)) / (&two * &apq);
                    let root = (&theta * &theta + one(bits)).sqrt();
                    let t = if theta >= Real::ZERO {
                        one(bits) / (&theta + &root)
                    } else {
                        -(one(bits) / (abs(&theta) + &root))
                    };
                    let c = one(bits) / (&t * &t + one(bits)).sqrt();
                    let s = &t * &c;

                    let app = a.get(p, p) - &t * &apq;
                    let aqq = a.get(q, q) + &t * &apq;
                    for r in 0..n {
                        if r == p || r == q {
                            continue;
                        }
                        let arp = a.get(r, p).clone();
                        let arq = a.get(r, q).clone();
                        let new_rp = &c * &arp - &s * &arq;
                        let new_rq = &s * &arp + &c * &arq;
                        a.set(r, p, new_rp.clone());
                        a.set(p, r, new_rp);
                        a.set(r, q, new_rq.clone());
                        a.set(q, r, new_rq);
                    }
                    a.set(p, p, app);
                    a.set(q, q, aqq);
                    a.set(p, q, zero(bits));
                    a.set(q, p, zero(bits));
                    for r in 0..n {
                        let vrp = v.get(r, p).clone();
                        let vrq = v.get(r, q).clone();
                        v.set(r, p, &c * &vrp - &s * &vrq);
                        v.set(r, q, &s * &vrp + &c * &vrq);
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let values = (0..n).map(|i| a.get(i, i).clone()).collect();
        (values, v)
    }

    /// `V f(D) V^T` for the symmetric eigen-decomposition of `self`.
    pub fn sym_function(values: &[Real], vectors: &PMatrix, f: impl Fn(&Real) -> Real) -> PMatrix {
        let n = vectors.n;
        let fd: Vec<Real> = values.iter().map(f).collect();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = vectors.get(i, 0) * &fd[0] * vectors.get(j, 0);
                for k in 1..n {
                    acc += vectors.get(i, k) * &fd[k] * vectors.get(j, k);
                }
                out.push(acc);
            }
        }
        PMatrix { n, data: out }
    }
}

pub fn max_real(values: &[Real]) -> Real {
    values
        .iter()
        .cloned()
        .reduce(|a, b| if b > a { b } else { a })
        .expect("non-empty")
}

pub fn min_real(values: &[Real]) -> Real {
    values
        .iter()
        .cloned()
        .reduce(|a, b| if b < a { b } else { a })
        .expect("non-empty")
}

/// `log2` of a positive ratio that may exceed the f64 range.
pub fn log2_ratio(num: &Real, den: &Real) -> Option<f64> {
    Some(log2_abs(num)? - log2_abs(den)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_minus_exp_keeps_relative_accuracy() {
        for &d in &[1e-300, 1e-20, 1e-5, 0.3, 7.0, -2.0] {
            let r = to_f64(&one_minus_exp_neg(&real(d, 128), 128));
            let want = -(-d).exp_m1();
            assert!((r - want).abs() <= 4.0 * f64::EPSILON * want.abs(), "{d}: {r} vs {want}");
        }
    }

    #[test]
    fn exp_ratio_at_zero_is_one() {
        assert_eq!(to_f64(&exp_ratio(&real(0.0, 64), 64)), 1.0);
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let bits = 160;
        // Q diag(1e-30, 2, 5) Q^T with a fixed rotation Q.
        let (c, s) = (0.6, 0.8);
        let q = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let d = [1e-30, 2.0, 5.0];
        let mut a = PMatrix::zeros(3, bits);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = zero(bits);
                for k in 0..3 {
                    acc += real(q[i][k], bits) * real(d[k], bits) * real(q[j][k], bits);
                }
                a.set(i, j, acc);
            }
        }
        let (vals, vecs) = a.sym_eigen(bits);
        let mut got: Vec<f64> = vals.iter().map(to_f64).collect();
        got.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(d) {
            assert!((g - w).abs() <= 1e-14 * w, "{g} vs {w}");
        }
        let back = PMatrix::sym_function(&vals, &vecs, |x| x.clone());
        assert!(to_f64(&back.sub(&a).frobenius()) < 1e-40);
    }

    #[test]
    fn log2_beyond_f64_range() {
        let big = real(2f64.powi(1000), 64) * real(2f64.powi(1000), 64);
        let l = log2_ratio(&big, &one(64)).unwrap();
        assert!((l - 2000.0).abs() < 1.0);
    }
}
