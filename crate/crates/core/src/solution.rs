//! Discrete solutions, L2 errors, the constant-`f` plane wave and the
//! fine-mesh polynomial reference used when no closed form exists.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::assembly::{assemble_global, dof_index, GlobalSystem, SolveConfig, Var};
use crate::basis::{ElementBasis, QuadratureOptions, QuadratureRule, SpaceKind};
use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::linsolve::BandLu;
use crate::mesh::MeshPartition;
use crate::trace::{self, TraceParams, TraceValues};

type C = Complex64;

/// Something that can be compared against a discrete solution.
pub trait Oracle: Sync {
    fn u(&self, x: f64) -> C;
    fn q(&self, x: f64) -> C;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DGSolution {
    pub mesh: MeshPartition,
    pub space: SpaceKind,
    pub bases: Vec<ElementBasis>,
    /// Global coefficient vector in assembly order.
    pub coeffs: Vec<C>,
    pub quad: QuadratureOptions,
}

impl DGSolution {
    pub fn new(
        mesh: MeshPartition,
        space: SpaceKind,
        bases: Vec<ElementBasis>,
        coeffs: Vec<C>,
        quad: QuadratureOptions,
    ) -> Result<Self> {
        let n = mesh.len();
        if bases.len() != n || coeffs.len() != 2 * space.dim() * n {
            return Err(Error::InvalidParameter(format!(
                "solution layout mismatch: {} elements, {} bases, {} coefficients for local dimension {}",
                n,
                bases.len(),
                coeffs.len(),
                space.dim()
            )));
        }
        Ok(Self {
            mesh,
            space,
            bases,
            coeffs,
            quad,
        })
    }

    pub fn from_system(cfg: &SolveConfig, sys: &GlobalSystem, coeffs: Vec<C>) -> Result<Self> {
        Self::new(cfg.mesh.clone(), cfg.space, sys.bases.clone(), coeffs, cfg.quad)
    }

    fn local_dim(&self) -> usize {
        self.space.dim()
    }

    /// Coefficients of `var` on element `j` (1-based).
    pub fn element_coeffs(&self, j: usize, var: Var) -> &[C] {
        let d = self.local_dim();
        let start = dof_index(d, j, var, 1);
        &self.coeffs[start..start + d]
    }

    /// `(u_h, q_h)` on element `j` (1-based) at `x`, without locating.
    fn eval_on(&self, j: usize, x: f64, scratch: &mut [C]) -> (C, C) {
        self.bases[j - 1].eval_all(x, scratch);
        let u = self.element_coeffs(j, Var::U);
        let q = self.element_coeffs(j, Var::Q);
        let mut su = C::default();
        let mut sq = C::default();
        for (n, phi) in scratch.iter().enumerate() {
            su += u[n] * phi;
            sq += q[n] * phi;
        }
        (su, sq)
    }

    /// `(u_h(x), q_h(x))`; interior breakpoints take the left limit.
    pub fn eval(&self, x: f64) -> Result<(C, C)> {
        let j = self.mesh.locate(x)?;
        let mut scratch = vec![C::default(); self.local_dim()];
        Ok(self.eval_on(j, x, &mut scratch))
    }

    /// Error quadrature on element `j`: the element's own rule with twice
    /// the nodes.
    fn error_rule(&self, j: usize) -> QuadratureRule {
        let b = &self.bases[j - 1];
        QuadratureRule::mapped(b.center, b.half_width, 2 * b.quadrature_nodes(&self.quad))
    }

    fn squared_error(&self, var: Var, oracle: &(dyn Fn(f64) -> C + Sync)) -> f64 {
        let per_element: Vec<f64> = (1..=self.mesh.len())
            .into_par_iter()
            .map(|j| {
                let rule = self.error_rule(j);
                let mut scratch = vec![C::default(); self.local_dim()];
                let terms: Vec<f64> = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| {
                        let (u, q) = self.eval_on(j, x, &mut scratch);
                        let v = if var == Var::U { u } else { q };
                        w * (v - oracle(x)).norm_sqr()
                    })
                    .collect();
                pairwise_sum(&terms)
            })
            .collect();
        pairwise_sum(&per_element)
    }

    /// `||u_h - u||_{L2}` against a pointwise oracle for `u`.
    pub fn l2_error(&self, oracle: impl Fn(f64) -> C + Sync) -> f64 {
        self.squared_error(Var::U, &oracle).sqrt()
    }

    /// `||q_h - q||_{L2}`.
    pub fn l2_error_q(&self, oracle: impl Fn(f64) -> C + Sync) -> f64 {
        self.squared_error(Var::Q, &oracle).sqrt()
    }

    /// Errors of `(u, q)` against an [`Oracle`].
    pub fn l2_errors(&self, oracle: &dyn Oracle) -> (f64, f64) {
        (
            self.l2_error(|x| oracle.u(x)),
            self.l2_error_q(|x| oracle.q(x)),
        )
    }

    /// Numerical traces at `a` and `b` built from the one-sided values of
    /// this solution.
    pub fn boundary_traces(&self, f: &Coefficient, gamma: f64) -> Result<(TraceValues, TraceValues)> {
        let (a, b) = (self.mesh.a(), self.mesh.b());
        let mut scratch = vec![C::default(); self.local_dim()];
        let (ua, qa) = self.eval_on(1, a, &mut scratch);
        let (ub, qb) = self.eval_on(self.mesh.len(), b, &mut scratch);
        Ok((
            trace::boundary_trace_left(ua, qa, f.eval_positive(a)?, gamma)?,
            trace::boundary_trace_right(ub, qb, f.eval_positive(b)?, gamma)?,
        ))
    }
}

impl Oracle for DGSolution {
    fn u(&self, x: f64) -> C {
        self.eval(x).map(|v| v.0).unwrap_or(C::new(f64::NAN, f64::NAN))
    }

    fn q(&self, x: f64) -> C {
        self.eval(x).map(|v| v.1).unwrap_or(C::new(f64::NAN, f64::NAN))
    }
}

/// Sum with error growing like `log n`; fixed association order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Assembles and solves `cfg`.
pub fn solve_config(cfg: &SolveConfig) -> Result<DGSolution> {
    let sys = assemble_global(cfg)?;
    let coeffs = crate::linsolve::solve(&sys)?;
    DGSolution::from_system(cfg, &sys, coeffs)
}

/// Exact solution for constant `f = f0`: `u = e^{i sqrt(f0) (x - a) / eps}`,
/// `q = eps u' = i sqrt(f0) u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWave {
    pub k: f64,
    pub sqrt_f: f64,
    pub a: f64,
}

pub fn exact_plane_wave(f0: f64, eps: f64, a: f64) -> Result<PlaneWave> {
    if !(f0 > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "plane wave needs f0 > 0 and eps > 0, got f0 = {f0}, eps = {eps}"
        )));
    }
    Ok(PlaneWave {
        k: f0.sqrt() / eps,
        sqrt_f: f0.sqrt(),
        a,
    })
}

impl Oracle for PlaneWave {
    fn u(&self, x: f64) -> C {
        C::from_polar(1.0, self.k * (x - self.a))
    }

    fn q(&self, x: f64) -> C {
        C::new(0.0, self.sqrt_f) * self.u(x)
    }
}

pub const REFERENCE_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MSDGREF\0";

pub fn generator_version() -> String {
    format!("msdg-core {}", env!("CARGO_PKG_VERSION"))
}

/// Describes how a reference was produced; must match the query before the
/// reference is used.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMeta {
    pub f_descriptor: String,
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    pub n_ref: usize,
    pub space: SpaceKind,
    pub params: TraceParams,
    pub generator: String,
}

/// What a caller needs from a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceQuery {
    pub f_descriptor: String,
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    pub n_ref: usize,
}

impl ReferenceMeta {
    pub fn matches(&self, q: &ReferenceQuery) -> std::result::Result<(), String> {
        if self.f_descriptor != q.f_descriptor {
            return Err(format!("f is `{}`, expected `{}`", self.f_descriptor, q.f_descriptor));
        }
        if self.eps.to_bits() != q.eps.to_bits() {
            return Err(format!("eps is {}, expected {}", self.eps, q.eps));
        }
        if self.a.to_bits() != q.a.to_bits() || self.b.to_bits() != q.b.to_bits() {
            return Err(format!(
                "domain is [{}, {}], expected [{}, {}]",
                self.a, self.b, q.a, q.b
            ));
        }
        if self.n_ref != q.n_ref {
            return Err(format!("N_ref is {}, expected {}", self.n_ref, q.n_ref));
        }
        if self.generator != generator_version() {
            return Err(format!(
                "generated by `{}`, this is `{}`",
                self.generator,
                generator_version()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub meta: ReferenceMeta,
    pub solution: DGSolution,
}

impl Oracle for ReferenceSolution {
    fn u(&self, x: f64) -> C {
        self.solution.u(x)
    }

    fn q(&self, x: f64) -> C {
        self.solution.q(x)
    }
}

/// Smallest admissible fine mesh: 20 elements per shortest wavelength.
pub fn minimum_reference_elements(f: &Coefficient, eps: f64, a: f64, b: f64) -> usize {
    (20.0 * (b - a) * f.max_on(a, b).sqrt() / (2.0 * PI * eps)).ceil() as usize
}

/// Default fine mesh: `250 (b - a) / eps` elements, and never below the
/// minimum.
pub fn default_reference_elements(f: &Coefficient, eps: f64, a: f64, b: f64) -> usize {
    let n = (250.0 * (b - a) / eps).round() as usize;
    n.max(minimum_reference_elements(f, eps, a, b))
}

/// Cubic-polynomial MD-LDG solution (`alpha = beta = 0`, default `gamma`)
/// on `n_ref` uniform elements.
pub fn generate_reference(f: &Coefficient, eps: f64, a: f64, b: f64, n_ref: usize) -> Result<ReferenceSolution> {
    generate_reference_with(f, eps, a, b, n_ref, QuadratureOptions::default())
}

pub fn generate_reference_with(
    f: &Coefficient,
    eps: f64,
    a: f64,
    b: f64,
    n_ref: usize,
    quad: QuadratureOptions,
) -> Result<ReferenceSolution> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let min = minimum_reference_elements(f, eps, a, b);
    if n_ref < min {
        return Err(Error::InvalidParameter(format!(
            "reference mesh too coarse: N_ref = {n_ref} < {min} (20 elements per wavelength)"
        )));
    }
    let space = SpaceKind::poly(3);
    let params = TraceParams::default();
    let mut cfg = SolveConfig::new(MeshPartition::uniform(a, b, n_ref)?, space, eps, f.clone(), params);
    cfg.quad = quad;
    let GlobalSystem { matrix, rhs, bases, .. } = assemble_global(&cfg)?;
    let lu = BandLu::factor(&matrix)?;
    drop(matrix);
    let mut coeffs = rhs;
    lu.solve_in_place(&mut coeffs);
    drop(lu);
    let solution = DGSolution::new(cfg.mesh, space, bases, coeffs, quad)?;
    Ok(ReferenceSolution {
        meta: ReferenceMeta {
            f_descriptor: f.descriptor(),
            eps,
            a,
            b,
            n_ref,
            space,
            params,
            generator: generator_version(),
        },
        solution,
    })
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Binary cache: magic, format version, metadata, then interleaved
/// little-endian `(re, im)` coefficient pairs.
pub fn save_reference(r: &ReferenceSolution, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let m = &r.meta;
        w.write_all(MAGIC)?;
        w.write_all(&REFERENCE_FORMAT_VERSION.to_le_bytes())?;
        write_str(&mut w, &m.f_descriptor)?;
        write_f64(&mut w, m.eps)?;
        write_f64(&mut w, m.a)?;
        write_f64(&mut w, m.b)?;
        w.write_all(&(m.n_ref as u64).to_le_bytes())?;
        write_str(&mut w, &m.space.to_string())?;
        write_f64(&mut w, m.params.alpha)?;
        write_f64(&mut w, m.params.beta)?;
        write_f64(&mut w, m.params.gamma)?;
        write_str(&mut w, &m.generator)?;
        let q = &r.solution.quad;
        write_f64(&mut w, q.points_per_wavelength)?;
        w.write_all(&(q.extra_nodes as u64).to_le_bytes())?;
        w.write_all(&(r.solution.coeffs.len() as u64).to_le_bytes())?;
        for c in &r.solution.coeffs {
            write_f64(&mut w, c.re)?;
            write_f64(&mut w, c.im)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err("truncated file".into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 in metadata".to_string())
    }
}

/// Reads a cached reference without checking it against a query.
pub fn read_reference(path: &Path) -> Result<ReferenceSolution> {
    let err = |reason: String| Error::Reference {
        path: path.to_path_buf(),
        reason,
    };
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    (|| -> std::result::Result<ReferenceSolution, String> {
        if c.take(8)? != MAGIC {
            return Err("not a reference file (bad magic)".into());
        }
        let version = c.u32()?;
        if version != REFERENCE_FORMAT_VERSION {
            return Err(format!("format version {version}, expected {REFERENCE_FORMAT_VERSION}"));
        }
        let f_descriptor = c.string()?;
        let eps = c.f64()?;
        let a = c.f64()?;
        let b = c.f64()?;
        let n_ref = c.u64()? as usize;
        let space: SpaceKind = c.string()?.parse().map_err(|e: Error| e.to_string())?;
        let (alpha, beta, gamma) = (c.f64()?, c.f64()?, c.f64()?);
        let params = TraceParams::new(alpha, beta, gamma).map_err(|e| e.to_string())?;
        let generator = c.string()?;
        let quad = QuadratureOptions {
            points_per_wavelength: c.f64()?,
            extra_nodes: c.u64()? as usize,
        };
        let count = c.u64()? as usize;
        if space.is_multiscale() {
            return Err(format!("reference space must be polynomial, got {space}"));
        }
        let expected = 2 * space.dim() * n_ref;
        if count != expected {
            return Err(format!("payload holds {count} coefficients, expected {expected}"));
        }
        if buf.len() - c.pos != 16 * count {
            return Err(format!(
                "payload is {} bytes, expected {}",
                buf.len() - c.pos,
                16 * count
            ));
        }
        let coeffs: Vec<C> = (0..count)
            .map(|_| Ok(C::new(c.f64()?, c.f64()?)))
            .collect::<std::result::Result<_, String>>()?;
        let mesh = MeshPartition::uniform(a, b, n_ref).map_err(|e| e.to_string())?;
        let f = Coefficient::Constant(1.0); // unused by polynomial bases
        let bases = (1..=n_ref)
            .map(|j| {
                let (l, r) = mesh.element(j)?;
                ElementBasis::for_element(space, l, r, &f, eps)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let solution = DGSolution::new(mesh, space, bases, coeffs, quad).map_err(|e| e.to_string())?;
        Ok(ReferenceSolution {
            meta: ReferenceMeta {
                f_descriptor,
                eps,
                a,
                b,
                n_ref,
                space,
                params,
                generator,
            },
            solution,
        })
    })()
    .map_err(err)
}

/// Reads a cached reference and rejects it unless it matches `query`.
pub fn load_reference(path: &Path, query: &ReferenceQuery) -> Result<ReferenceSolution> {
    let r = read_reference(path)?;
    r.meta.matches(query).map_err(|reason| Error::Reference {
        path: path.to_path_buf(),
        reason: format!("stale or mismatched cache: {reason}"),
    })?;
    Ok(r)
}
