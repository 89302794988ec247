//! Local approximation spaces and element quadrature.
//!
//! On element `I_j` with midpoint `x_j`, half-width `h_j/2` and wave number
//! `k_j = sqrt(f(x_j))/eps`, with `s = x - x_j` and `t = s / (h_j/2)`:
//!
//! * `E^1`: `{e^{iks}, e^{-iks}}`
//! * `E^p`, `p >= 2`: `{e^{iks}, e^{-iks}, 1, t, ..., t^{p-2}}`
//! * `T^{2p-1}`: `{e^{iks}, e^{-iks}, e^{2iks}, e^{-2iks}, ..., e^{ipks}, e^{-ipks}}`
//! * `P^k`: `{1, t, ..., t^k}`
//!
//! Monomials are centered and scaled to the element; they span the same
//! space as the raw powers of `x`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Exponential pair plus polynomials.
    Ep,
    /// Exponential pairs `e^{±imks}`, `m = 1..p`.
    T2pm1,
    /// Plain polynomials.
    Poly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpaceKind {
    pub family: Family,
    /// `p` for `Ep`/`T2pm1`, polynomial degree for `Poly`.
    pub order: usize,
}

impl SpaceKind {
    pub fn new(family: Family, order: usize) -> Result<Self> {
        if order == 0 && family != Family::Poly {
            return Err(Error::InvalidParameter(format!(
                "{family:?} requires order >= 1"
            )));
        }
        Ok(Self { family, order })
    }

    pub fn ep(p: usize) -> Self {
        Self::new(Family::Ep, p).expect("p >= 1")
    }

    /// `T^{2p-1}`.
    pub fn t(p: usize) -> Self {
        Self::new(Family::T2pm1, p).expect("p >= 1")
    }

    pub fn poly(k: usize) -> Self {
        Self { family: Family::Poly, order: k }
    }

    pub fn dim(&self) -> usize {
        match self.family {
            Family::Ep if self.order == 1 => 2,
            Family::Ep => self.order + 1,
            Family::T2pm1 => 2 * self.order,
            Family::Poly => self.order + 1,
        }
    }

    pub fn is_multiscale(&self) -> bool {
        self.family != Family::Poly
    }
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Ep => write!(f, "E{}", self.order),
            Family::T2pm1 => write!(f, "T{}", 2 * self.order - 1),
            Family::Poly => write!(f, "P{}", self.order),
        }
    }
}

impl FromStr for SpaceKind {
    type Err = Error;

    /// Accepts `E<p>`, `T<2p-1>` (odd) and `P<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("unknown space `{s}` (expected E<p>, T<2p-1> or P<k>)"));
        let mut chars = s.chars();
        let head = chars.next().ok_or_else(bad)?;
        let n: usize = chars.as_str().parse().map_err(|_| bad())?;
        match head.to_ascii_uppercase() {
            'E' if n >= 1 => Ok(Self::ep(n)),
            'T' if n % 2 == 1 => Ok(Self::t(n.div_ceil(2))),
            'P' => Ok(Self::poly(n)),
            _ => Err(bad()),
        }
    }
}

/// `k_j = sqrt(f(x_j)) / eps`.
pub fn wave_number(f: &Coefficient, x_j: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    Ok(f.eval_positive(x_j)?.sqrt() / eps)
}

/// Nodes added to the wavelength-based count so that products of the
/// fastest modes (frequency `2 p k`) are integrated to rounding level even
/// when an element holds only a fraction of a wavelength.
pub const OSCILLATION_MARGIN: usize = 16;

/// Controls the node count of element quadrature rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub points_per_wavelength: f64,
    /// Added to every rule; used to probe quadrature sensitivity.
    pub extra_nodes: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            points_per_wavelength: 10.0,
            extra_nodes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss-Legendre rule with `n` nodes mapped to `[center - half, center + half]`.
    pub fn mapped(center: f64, half_width: f64, n: usize) -> Self {
        let gl = gauss_legendre(n);
        let nodes = gl.nodes.iter().map(|t| center + half_width * t).collect();
        let weights = gl.weights.iter().map(|w| w * half_width).collect();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<T>(&self, mut g: impl FnMut(f64) -> T) -> T
    where
        T: std::ops::Mul<f64, Output = T> + std::iter::Sum<T>,
    {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| g(x) * w)
            .sum()
    }
}

/// One element's local basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementBasis {
    pub kind: SpaceKind,
    /// Local wave number; zero for polynomial spaces.
    pub k: f64,
    /// Element midpoint `x_j`.
    pub center: f64,
    pub half_width: f64,
}

impl ElementBasis {
    /// Basis for element `(left, right)`; evaluates `f` at the midpoint for
    /// multiscale spaces.
    pub fn for_element(kind: SpaceKind, left: f64, right: f64, f: &Coefficient, eps: f64) -> Result<Self> {
        let center = 0.5 * (left + right);
        let k = if kind.is_multiscale() {
            wave_number(f, center, eps)?
        } else {
            0.0
        };
        Ok(Self {
            kind,
            k,
            center,
            half_width: 0.5 * (right - left),
        })
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Number of exponential members at the front of the basis.
    fn n_exp(&self) -> usize {
        match self.kind.family {
            Family::Ep => 2,
            Family::T2pm1 => 2 * self.kind.order,
            Family::Poly => 0,
        }
    }

    /// Values of all members at `x`.
    pub fn eval_all(&self, x: f64, out: &mut [Complex64]) {
        self.fill(x, out, None);
    }

    /// Values and first derivatives of all members at `x`.
    pub fn eval_with_deriv(&self, x: f64, values: &mut [Complex64], derivs: &mut [Complex64]) {
        self.fill(x, values, Some(derivs));
    }

    fn fill(&self, x: f64, values: &mut [Complex64], mut derivs: Option<&mut [Complex64]>) {
        let dim = self.dim();
        debug_assert!(values.len() >= dim);
        let s = x - self.center;
        let n_exp = self.n_exp();
        for pair in 0..n_exp / 2 {
            let m = (pair + 1) as f64;
            let e = Complex64::from_polar(1.0, m * self.k * s);
            let ec = e.conj();
            values[2 * pair] = e;
            values[2 * pair + 1] = ec;
            if let Some(d) = derivs.as_deref_mut() {
                let ik = Complex64::new(0.0, m * self.k);
                d[2 * pair] = ik * e;
                d[2 * pair + 1] = -ik * ec;
            }
        }
        let t = s / self.half_width;
        let scale = 1.0 / self.half_width;
        let mut pow = 1.0;
        let mut pow_prev = 0.0;
        for (n, idx) in (n_exp..dim).enumerate() {
            values[idx] = Complex64::new(pow, 0.0);
            if let Some(d) = derivs.as_deref_mut() {
                d[idx] = Complex64::new(n as f64 * pow_prev * scale, 0.0);
            }
            pow_prev = pow;
            pow *= t;
        }
    }

    /// Value of member `m` (1-based) at `x`.
    pub fn eval(&self, m: usize, x: f64) -> Result<Complex64> {
        self.check(m)?;
        let mut v = vec![Complex64::default(); self.dim()];
        self.eval_all(x, &mut v);
        Ok(v[m - 1])
    }

    /// First derivative of member `m` (1-based) at `x`.
    pub fn deriv(&self, m: usize, x: f64) -> Result<Complex64> {
        self.check(m)?;
        let mut v = vec![Complex64::default(); self.dim()];
        let mut d = vec![Complex64::default(); self.dim()];
        self.eval_with_deriv(x, &mut v, &mut d);
        Ok(d[m - 1])
    }

    fn check(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.dim() {
            return Err(Error::BasisIndex { index: m, dim: self.dim() });
        }
        Ok(())
    }

    /// Node count `max(2 dim + 2, ceil(ppw * p * k * width / 2pi) + OSCILLATION_MARGIN) + extra`,
    /// the margin applying only when `k > 0`.
    pub fn quadrature_nodes(&self, opts: &QuadratureOptions) -> usize {
        let width = 2.0 * self.half_width;
        let floor = 2 * self.dim() + 2;
        let p = self.kind.order as f64;
        let wave = (opts.points_per_wavelength * p * self.k * width / (2.0 * PI)).ceil();
        let wave = if wave.is_finite() && wave > 0.0 {
            wave as usize + OSCILLATION_MARGIN
        } else {
            0
        };
        floor.max(wave) + opts.extra_nodes
    }

    pub fn quadrature(&self, opts: &QuadratureOptions) -> QuadratureRule {
        QuadratureRule::mapped(self.center, self.half_width, self.quadrature_nodes(opts))
    }
}

pub fn quadrature_rule(basis: &ElementBasis, element_width: f64) -> Result<QuadratureRule> {
    if !(element_width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "element width must be positive, got {element_width}"
        )));
    }
    let b = ElementBasis {
        half_width: 0.5 * element_width,
        ..*basis
    };
    Ok(b.quadrature(&QuadratureOptions::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn basis(kind: SpaceKind, k: f64, h: f64) -> ElementBasis {
        ElementBasis {
            kind,
            k,
            center: 0.3,
            half_width: 0.5 * h,
        }
    }

    #[test]
    fn dimensions() {
        assert_eq!(SpaceKind::ep(1).dim(), 2);
        assert_eq!(SpaceKind::ep(2).dim(), 3);
        assert_eq!(SpaceKind::ep(3).dim(), 4);
        assert_eq!(SpaceKind::t(1).dim(), 2);
        assert_eq!(SpaceKind::t(2).dim(), 4);
        assert_eq!(SpaceKind::t(3).dim(), 6);
        assert_eq!(SpaceKind::poly(3).dim(), 4);
    }

    #[test]
    fn names_round_trip() {
        for name in ["E1", "E2", "E3", "T1", "T3", "T5", "P3"] {
            let s: SpaceKind = name.parse().unwrap();
            assert_eq!(s.to_string(), name);
        }
        assert!("T4".parse::<SpaceKind>().is_err());
        assert!("E0".parse::<SpaceKind>().is_err());
        assert!("Q2".parse::<SpaceKind>().is_err());
    }

    #[test]
    fn wave_numbers() {
        let k = wave_number(&Coefficient::Constant(10.0), 0.7, 0.005).unwrap();
        assert!((k - 632.455_532_033_675_9).abs() < 1e-9);
        assert_eq!(wave_number(&Coefficient::Constant(1.0), 0.0, 1.0).unwrap(), 1.0);
        // sqrt(sin(0.5) + 2) / 0.001, evaluated with 50-digit arithmetic
        let k = wave_number(&Coefficient::SinPlusTwo, 0.5, 0.001).unwrap();
        assert!((k - 1_574.619_172_563_386_2).abs() < 1e-9, "{k}");
        assert!(wave_number(&Coefficient::Constant(-1.0), 0.0, 1.0).is_err());
        assert!(wave_number(&Coefficient::Constant(0.0), 0.0, 1.0).is_err());
        assert!(wave_number(&Coefficient::Constant(1.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn exponential_members_at_center() {
        let b = basis(SpaceKind::t(3), 40.0, 0.2);
        for m in 1..=6 {
            assert!((b.eval(m, b.center).unwrap() - 1.0).norm() < 1e-15);
        }
        let d = b.deriv(1, b.center).unwrap();
        assert!((d - Complex64::new(0.0, 40.0)).norm() < 1e-13);
        // e^{-3iks} at s = pi / (3k)
        let v = b.eval(6, b.center + PI / (3.0 * b.k)).unwrap();
        assert!((v + 1.0).norm() < 1e-14);
        assert!(b.eval(0, 0.0).is_err());
        assert!(b.eval(7, 0.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in [SpaceKind::ep(3), SpaceKind::t(3), SpaceKind::poly(3)] {
            let b = basis(kind, 25.0, 0.1);
            let x = b.center + 0.013;
            let dx = 1e-6;
            for m in 1..=b.dim() {
                let fd = (b.eval(m, x + dx).unwrap() - b.eval(m, x - dx).unwrap()) / (2.0 * dx);
                let d = b.deriv(m, x).unwrap();
                assert!((fd - d).norm() < 1e-6 * (1.0 + d.norm()), "{kind} m={m}");
            }
        }
    }

    #[test]
    fn e1_and_t1_coincide() {
        let e = basis(SpaceKind::ep(1), 17.0, 0.4);
        let t = basis(SpaceKind::t(1), 17.0, 0.4);
        for i in 0..50 {
            let x = e.center - e.half_width + i as f64 * 0.4 / 49.0;
            for m in 1..=2 {
                assert_eq!(e.eval(m, x).unwrap(), t.eval(m, x).unwrap());
                assert_eq!(e.deriv(m, x).unwrap(), t.deriv(m, x).unwrap());
            }
        }
        let opts = QuadratureOptions::default();
        assert_eq!(e.quadrature_nodes(&opts), t.quadrature_nodes(&opts));
    }

    #[test]
    fn node_counts() {
        let opts = QuadratureOptions::default();
        assert_eq!(basis(SpaceKind::poly(3), 0.0, 0.1).quadrature_nodes(&opts), 10);
        // 10 * p k h / 2pi = 999.5 -> 1000 nodes plus the margin
        let b = basis(SpaceKind::t(2), 49.975 * PI, 2.0);
        assert_eq!(b.quadrature_nodes(&opts), 1000 + OSCILLATION_MARGIN);
        let opts4 = QuadratureOptions { extra_nodes: 4, ..opts };
        assert_eq!(b.quadrature_nodes(&opts4), 1004 + OSCILLATION_MARGIN);
        // k h = 0.001: the polynomial floor wins
        assert_eq!(basis(SpaceKind::ep(3), 0.01, 0.1).quadrature_nodes(&opts), 17);
    }

    #[test]
    fn rules_integrate_constants_and_plane_wave_products() {
        let b = basis(SpaceKind::ep(1), 632.455_532_033_675_9, 0.1);
        let rule = quadrature_rule(&b, 1.0).unwrap();
        let one: f64 = rule.weights.iter().sum();
        assert!((one - 1.0).abs() < 1e-14);
        let rule = b.quadrature(&QuadratureOptions::default());
        let prod: Complex64 = rule.integrate(|x| {
            let s = x - b.center;
            Complex64::from_polar(1.0, b.k * s) * Complex64::from_polar(1.0, -b.k * s)
        });
        assert!((prod - 0.1).norm() / 0.1 <= 1e-12);
        assert!(quadrature_rule(&b, 0.0).is_err());
    }

    fn gram(b: &ElementBasis) -> DMatrix<Complex64> {
        let d = b.dim();
        let rule = b.quadrature(&QuadratureOptions::default());
        let mut g = DMatrix::zeros(d, d);
        let mut v = vec![Complex64::default(); d];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            b.eval_all(x, &mut v);
            for m in 0..d {
                for n in 0..d {
                    g[(m, n)] += v[n] * v[m].conj() * w;
                }
            }
        }
        g
    }

    #[test]
    fn gram_matrices_are_hermitian_positive_definite() {
        let h = 0.1;
        for kind in [SpaceKind::ep(1), SpaceKind::ep(2), SpaceKind::ep(3), SpaceKind::t(2), SpaceKind::t(3)] {
            for kh in [0.5, 1.0, 5.0, 50.0] {
                let g = gram(&basis(kind, kh / h, h));
                let herm = (&g - g.adjoint()).norm();
                assert!(herm <= 1e-14 * g.norm(), "{kind} kh={kh}");
                let eig = g.symmetric_eigenvalues();
                let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(min > 0.0, "{kind} kh={kh}: min eigenvalue {min}");
            }
        }
    }

    #[test]
    fn doubling_nodes_leaves_local_integrals_unchanged() {
        // Example 2 configurations: f = sin x + 2 on [0,1], eps in {0.005, 0.001}
        let f = Coefficient::SinPlusTwo;
        let opts = QuadratureOptions::default();
        for eps in [0.005, 0.001] {
            for n in [5usize, 30, 140, 640] {
                for kind in [SpaceKind::ep(1), SpaceKind::ep(3), SpaceKind::t(3)] {
                    let h = 1.0 / n as f64;
                    let j = n / 2;
                    let b = ElementBasis::for_element(kind, j as f64 * h, (j + 1) as f64 * h, &f, eps).unwrap();
                    let nq = b.quadrature_nodes(&opts);
                    let r1 = QuadratureRule::mapped(b.center, b.half_width, nq);
                    let r2 = QuadratureRule::mapped(b.center, b.half_width, 2 * nq);
                    let d = b.dim();
                    let mut v = vec![Complex64::default(); d];
                    let mut dv = vec![Complex64::default(); d];
                    for m in 0..d {
                        for l in 0..d {
                            let mut integrals = |r: &QuadratureRule| {
                                let mut acc = [Complex64::default(); 3];
                                for (&x, &w) in r.nodes.iter().zip(&r.weights) {
                                    b.eval_with_deriv(x, &mut v, &mut dv);
                                    acc[0] += v[l] * v[m].conj() * w;
                                    acc[1] += v[l] * dv[m].conj() * w;
                                    acc[2] += v[l] * v[m].conj() * (f.eval(x) * w);
                                }
                                acc
                            };
                            let (a1, a2) = (integrals(&r1), integrals(&r2));
                            for c in 0..3 {
                                let scale = a2[c].norm().max(1e-300);
                                let rel = (a1[c] - a2[c]).norm() / scale;
                                // entries that vanish analytically are compared absolutely
                                let abs_scale = if c == 1 { b.k.max(1.0 / b.half_width) * h } else { h };
                                assert!(
                                    rel <= 1e-10 || (a1[c] - a2[c]).norm() <= 1e-13 * abs_scale,
                                    "eps={eps} N={n} {kind} ({m},{l}) integral {c}: rel {rel:e}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}
