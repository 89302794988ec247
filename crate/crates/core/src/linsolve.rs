//! Direct solution of the global system and condition number estimates.
//!
//! The block-tridiagonal matrix is factored as a band matrix with
//! `kl = ku = 2 * block - 1` using LU with partial pivoting (the layout of
//! LAPACK's `gbtrf`, unblocked). Row interchanges widen the upper band of
//! `U` to `kl + ku`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::assembly::{BlockTridiagonal, GlobalSystem};
use crate::error::{Error, Result};

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major band storage, `ldab = 2 kl + ku + 1` rows per column;
    /// `A(i, j)` lives at `ab[(kl + ku + i - j) + j * ldab]`.
    ab: Vec<C>,
    ipiv: Vec<usize>,
}

impl BandLu {
    fn ldab(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Factors `matrix`. A pivot with modulus at most `n * EPSILON * ||A||_1`
    /// is reported as [`Error::Singular`].
    pub fn factor(matrix: &BlockTridiagonal) -> Result<Self> {
        let n = matrix.dim();
        let bw = (2 * matrix.block_size()).saturating_sub(1).min(n.saturating_sub(1));
        let (kl, ku) = (bw, bw);
        let ldab = 2 * kl + ku + 1;
        let kv = kl + ku;
        let mut ab = vec![ZERO; ldab * n];
        for r in 0..n {
            for (c, v) in matrix.row_entries(r) {
                ab[kv + r - c + c * ldab] = v;
            }
        }
        let tolerance = n as f64 * f64::EPSILON * matrix.norm_one();
        let mut lu = Self {
            n,
            kl,
            ku,
            ab,
            ipiv: vec![0; n],
        };
        lu.factor_in_place(tolerance)?;
        Ok(lu)
    }

    fn factor_in_place(&mut self, tolerance: f64) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ldab = self.ldab();
        let kv = kl + ku;
        let ab = &mut self.ab;
        // last column touched by the current stage
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab;
            let mut jp = 0;
            let mut best = -1.0;
            for p in 0..=km {
                let a = ab[col + kv + p].norm();
                if a > best {
                    best = a;
                    jp = p;
                }
            }
            self.ipiv[j] = j + jp;
            if !(best > tolerance) {
                return Err(Error::Singular {
                    pivot_index: j,
                    modulus: best.max(0.0),
                    tolerance,
                });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * ldab + kv - (c - j);
                    ab.swap(base + jp, base);
                }
            }
            if km > 0 {
                let inv = ab[col + kv].inv();
                for r in 1..=km {
                    ab[col + kv + r] *= inv;
                }
                for c in j + 1..=ju {
                    let ccol = c * ldab;
                    let top = ccol + kv - (c - j);
                    let t = ab[top];
                    if t != ZERO {
                        for r in 1..=km {
                            let l = ab[col + kv + r];
                            ab[top + r] -= l * t;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [C]) {
        let (n, kl) = (self.n, self.kl);
        let ldab = self.ldab();
        let kv = kl + self.ku;
        for j in 0..n.saturating_sub(1) {
            let lm = kl.min(n - 1 - j);
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let bj = b[j];
            if bj != ZERO {
                for r in 1..=lm {
                    b[j + r] -= self.ab[j * ldab + kv + r] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let col = j * ldab;
            b[j] /= self.ab[col + kv];
            let t = b[j];
            if t != ZERO {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.ab[col + kv + i - j] * t;
                }
            }
        }
    }

    /// Solves `A^H x = b` in place.
    pub fn solve_adjoint_in_place(&self, b: &mut [C]) {
        let (n, kl) = (self.n, self.kl);
        let ldab = self.ldab();
        let kv = kl + self.ku;
        for j in 0..n {
            let col = j * ldab;
            let mut s = b[j];
            for i in j.saturating_sub(kv)..j {
                s -= self.ab[col + kv + i - j].conj() * b[i];
            }
            b[j] = s / self.ab[col + kv].conj();
        }
        for j in (0..n.saturating_sub(1)).rev() {
            let lm = kl.min(n - 1 - j);
            let mut s = b[j];
            for r in 1..=lm {
                s -= self.ab[j * ldab + kv + r].conj() * b[j + r];
            }
            b[j] = s;
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
        }
    }

    /// Estimate of `||A^{-1}||_1` by Higham's refinement of Hager's method
    /// (the iteration of LAPACK's `zlacn2`).
    pub fn inverse_norm_one_estimate(&self) -> f64 {
        let n = self.n;
        let nf = n as f64;
        let sign = |y: &[C]| -> Vec<C> {
            y.iter()
                .map(|z| {
                    let a = z.norm();
                    if a > f64::MIN_POSITIVE {
                        z / a
                    } else {
                        C::new(1.0, 0.0)
                    }
                })
                .collect()
        };
        let norm1 = |y: &[C]| y.iter().map(|z| z.norm()).sum::<f64>();
        let argmax = |z: &[C]| {
            let mut best = (0, -1.0);
            for (i, v) in z.iter().enumerate() {
                if v.norm() > best.1 {
                    best = (i, v.norm());
                }
            }
            best.0
        };

        let mut x = vec![C::new(1.0 / nf, 0.0); n];
        self.solve_in_place(&mut x);
        let mut est = norm1(&x);
        if n == 1 {
            return est;
        }
        let mut z = sign(&x);
        self.solve_adjoint_in_place(&mut z);
        let mut j = argmax(&z);
        for _ in 2..=5 {
            let mut y = vec![ZERO; n];
            y[j] = C::new(1.0, 0.0);
            self.solve_in_place(&mut y);
            let old = est;
            est = norm1(&y);
            if est <= old {
                est = old;
                break;
            }
            let mut z = sign(&y);
            self.solve_adjoint_in_place(&mut z);
            let jlast = j;
            j = argmax(&z);
            if z[jlast].norm() == z[j].norm() {
                break;
            }
        }
        // alternating test vector guards against underestimation
        let mut alt: Vec<C> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                C::new(s * (1.0 + i as f64 / (nf - 1.0)), 0.0)
            })
            .collect();
        self.solve_in_place(&mut alt);
        let temp = 2.0 * norm1(&alt) / (3.0 * nf);
        est.max(temp)
    }
}

/// Solves the assembled system by banded LU with partial pivoting.
pub fn solve(sys: &GlobalSystem) -> Result<Vec<C>> {
    solve_matrix(&sys.matrix, &sys.rhs)
}

pub fn solve_matrix(matrix: &BlockTridiagonal, rhs: &[C]) -> Result<Vec<C>> {
    if rhs.len() != matrix.dim() {
        return Err(Error::InvalidParameter(format!(
            "right-hand side has length {}, matrix dimension is {}",
            rhs.len(),
            matrix.dim()
        )));
    }
    let lu = BandLu::factor(matrix)?;
    let mut x = rhs.to_vec();
    lu.solve_in_place(&mut x);
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CondMethod {
    /// `sigma_max / sigma_min` from a dense SVD.
    Dense2Norm,
    /// `||A||_1 * est(||A^{-1}||_1)` from the LU factors.
    OneNormEstimate,
}

impl CondMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CondMethod::Dense2Norm => "dense_2norm",
            CondMethod::OneNormEstimate => "onenorm_estimate",
        }
    }
}

impl fmt::Display for CondMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CondMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense_2norm" => Ok(CondMethod::Dense2Norm),
            "onenorm_estimate" => Ok(CondMethod::OneNormEstimate),
            _ => Err(Error::Parse(format!("unknown condition method `{s}`"))),
        }
    }
}

/// Method choice including the size-based automatic selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CondChoice {
    /// Dense SVD up to [`DENSE_AUTO_LIMIT`] unknowns, 1-norm estimate above.
    #[default]
    Auto,
    Dense,
    OneNorm,
}

/// Largest dimension for which `Auto` uses the dense SVD.
pub const DENSE_AUTO_LIMIT: usize = 800;
/// Largest dimension accepted by the dense method.
pub const DENSE_MAX_DIM: usize = 4000;

impl CondChoice {
    pub fn resolve(self, dim: usize) -> CondMethod {
        match self {
            CondChoice::Auto if dim <= DENSE_AUTO_LIMIT => CondMethod::Dense2Norm,
            CondChoice::Auto | CondChoice::OneNorm => CondMethod::OneNormEstimate,
            CondChoice::Dense => CondMethod::Dense2Norm,
        }
    }
}

impl FromStr for CondChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(CondChoice::Auto),
            "dense" => Ok(CondChoice::Dense),
            "onenorm" => Ok(CondChoice::OneNorm),
            _ => Err(Error::Parse(format!("unknown condition method `{s}` (auto|dense|onenorm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    /// `+inf` when the matrix is singular to working precision.
    pub value: f64,
    pub method: CondMethod,
    pub dimension: usize,
    pub singular: bool,
}

pub fn condition_estimate(sys: &GlobalSystem, method: CondMethod) -> Result<ConditionReport> {
    condition_of(&sys.matrix, method)
}

pub fn condition_of(matrix: &BlockTridiagonal, method: CondMethod) -> Result<ConditionReport> {
    let dimension = matrix.dim();
    let singular = |method| ConditionReport {
        value: f64::INFINITY,
        method,
        dimension,
        singular: true,
    };
    match method {
        CondMethod::Dense2Norm => {
            if dimension > DENSE_MAX_DIM {
                return Err(Error::InvalidParameter(format!(
                    "dense condition number limited to dimension {DENSE_MAX_DIM}, got {dimension}"
                )));
            }
            let dense = DMatrix::from_fn(dimension, dimension, |r, c| matrix.get(r, c));
            let sv = dense.singular_values();
            let max = sv.iter().cloned().fold(0.0, f64::max);
            let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(min > 0.0) {
                return Ok(singular(method));
            }
            Ok(ConditionReport {
                value: max / min,
                method,
                dimension,
                singular: false,
            })
        }
        CondMethod::OneNormEstimate => match BandLu::factor(matrix) {
            Ok(lu) => Ok(ConditionReport {
                value: matrix.norm_one() * lu.inverse_norm_one_estimate(),
                method,
                dimension,
                singular: false,
            }),
            Err(Error::Singular { .. }) => Ok(singular(method)),
            Err(e) => Err(e),
        },
    }
}
