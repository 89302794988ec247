//! Experiment engine: single cases, sweeps, convergence rates, resonance
//! detection, CSV tables and plot data.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;

use crate::assembly::{assemble_global, SolveConfig};
use crate::basis::{QuadratureOptions, SpaceKind};
use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::linsolve::{condition_of, BandLu, CondChoice, CondMethod, ConditionReport};
use crate::mesh::MeshPartition;
use crate::solution::{
    default_reference_elements, exact_plane_wave, generate_reference_with, load_reference, save_reference,
    DGSolution, Oracle, ReferenceQuery, ReferenceSolution,
};
use crate::trace::TraceParams;

pub const CSV_HEADER: &str =
    "space,eps,alpha,beta,gamma,N,h,l2_error_u,l2_error_q,cond,cond_method,singular,wall_time";

/// Environment variable naming the reference cache directory.
pub const REF_CACHE_ENV: &str = "MSDG_REF_CACHE";

/// Errors below this are dominated by rounding; rates between them are not
/// meaningful.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;

/// Parses `const10`, `sinp2` (also `sin_plus_2`, `sin(x)+2`) and
/// `const:<value>`.
pub fn parse_fcase(s: &str) -> Result<Coefficient> {
    let s = s.trim();
    match s {
        "const10" => return Ok(Coefficient::Constant(10.0)),
        "sinp2" | "sin_plus_2" | "sin(x)+2" => return Ok(Coefficient::SinPlusTwo),
        _ => {}
    }
    if let Some(v) = s.strip_prefix("const:") {
        let c: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad constant in f case `{s}`")))?;
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::NonPositiveCoefficient { x: f64::NAN, value: c });
        }
        return Ok(Coefficient::Constant(c));
    }
    Err(Error::Parse(format!(
        "unknown f case `{s}` (const10 | sinp2 | const:<value>)"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub space: SpaceKind,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n: usize,
    pub h: f64,
    pub l2_error_u: f64,
    pub l2_error_q: f64,
    pub condition: ConditionReport,
    /// Seconds; zero unless timing was requested.
    pub wall_time: f64,
    pub singular: bool,
}

fn sci(v: f64) -> String {
    format!("{v:.5e}")
}

fn round_sci(v: f64) -> f64 {
    sci(v).parse().unwrap_or(v)
}

impl ExperimentRecord {
    /// The record as it reads back from CSV.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        for v in [
            &mut r.eps,
            &mut r.alpha,
            &mut r.beta,
            &mut r.gamma,
            &mut r.h,
            &mut r.l2_error_u,
            &mut r.l2_error_q,
            &mut r.condition.value,
            &mut r.wall_time,
        ] {
            *v = round_sci(*v);
        }
        r
    }

    pub fn params(&self) -> (f64, f64, f64) {
        (self.alpha, self.beta, self.gamma)
    }

    fn csv_row(&self) -> String {
        [
            self.space.to_string(),
            sci(self.eps),
            sci(self.alpha),
            sci(self.beta),
            sci(self.gamma),
            self.n.to_string(),
            sci(self.h),
            sci(self.l2_error_u),
            sci(self.l2_error_q),
            sci(self.condition.value),
            self.condition.method.as_str().to_string(),
            self.singular.to_string(),
            sci(self.wall_time),
        ]
        .join(",")
    }

    fn from_csv_row(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| Error::Parse(format!("CSV line {lineno}: bad {what}"));
        if fields.len() != 13 {
            return Err(Error::Parse(format!(
                "CSV line {lineno}: expected 13 fields, found {}",
                fields.len()
            )));
        }
        let num = |i: usize, what: &str| fields[i].parse::<f64>().map_err(|_| bad(what));
        let space: SpaceKind = fields[0].parse().map_err(|_| bad("space"))?;
        let n: usize = fields[5].parse().map_err(|_| bad("N"))?;
        let singular: bool = fields[11].parse().map_err(|_| bad("singular flag"))?;
        Ok(Self {
            space,
            eps: num(1, "eps")?,
            alpha: num(2, "alpha")?,
            beta: num(3, "beta")?,
            gamma: num(4, "gamma")?,
            n,
            h: num(6, "h")?,
            l2_error_u: num(7, "l2_error_u")?,
            l2_error_q: num(8, "l2_error_q")?,
            condition: ConditionReport {
                value: num(9, "cond")?,
                method: fields[10].parse().map_err(|_| bad("cond_method"))?,
                dimension: 2 * space.dim() * n,
                singular,
            },
            wall_time: num(12, "wall_time")?,
            singular,
        })
    }
}

/// Serializes records to CSV text (header plus one row per record).
pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::with_capacity(128 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Parse("CSV header missing or unexpected".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| ExperimentRecord::from_csv_row(l, i + 1))
        .collect()
}

pub fn write_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, records_to_csv(records))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    records_from_csv(&std::fs::read_to_string(path)?)
}

/// Curves keyed by `(space, eps, alpha, beta, gamma)`, in first-appearance
/// order, each sorted by `N`.
pub fn group_curves(records: &[ExperimentRecord]) -> Vec<Vec<ExperimentRecord>> {
    let mut keys: Vec<(SpaceKind, [u64; 4])> = Vec::new();
    let mut groups: Vec<Vec<ExperimentRecord>> = Vec::new();
    for r in records {
        let key = (
            r.space,
            [r.eps.to_bits(), r.alpha.to_bits(), r.beta.to_bits(), r.gamma.to_bits()],
        );
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r.clone()),
            None => {
                keys.push(key);
                groups.push(vec![r.clone()]);
            }
        }
    }
    for g in &mut groups {
        g.sort_by_key(|r| r.n);
    }
    groups
}

fn curve_stem(r: &ExperimentRecord) -> String {
    format!(
        "{}_eps{}_a{}_b{}_g{}",
        r.space, r.eps, r.alpha, r.beta, r.gamma
    )
}

/// Writes `<stem>_err.dat` and `<stem>_cond.dat` with columns
/// `log10(N) log10(value)` for every curve; non-finite points are skipped.
/// Returns the files written.
pub fn emit_plot_data(records: &[ExperimentRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for curve in group_curves(records) {
        let stem = curve_stem(&curve[0]);
        for (suffix, label, get) in [
            ("err", "l2_error_u", (|r: &ExperimentRecord| r.l2_error_u) as fn(&ExperimentRecord) -> f64),
            ("cond", "cond", |r: &ExperimentRecord| r.condition.value),
        ] {
            let mut text = format!("# log10(N) log10({label})\n");
            for r in &curve {
                let v = get(r);
                if v.is_finite() && v > 0.0 {
                    let _ = writeln!(text, "{:.6} {:.6}", (r.n as f64).log10(), v.log10());
                }
            }
            let path = dir.join(format!("{stem}_{suffix}.dat"));
            std::fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePair {
    pub n1: usize,
    pub n2: usize,
    pub rate: f64,
    /// False when either error is below [`ROUNDOFF_FLOOR`].
    pub reliable: bool,
}

/// Observed orders `log(e1/e2) / log(N2/N1)` for consecutive `N`.
pub fn convergence_rates(records: &[ExperimentRecord]) -> Vec<RatePair> {
    let mut pts: Vec<(usize, f64)> = records.iter().map(|r| (r.n, r.l2_error_u)).collect();
    pts.sort_by_key(|p| p.0);
    rates_from_points(&pts)
}

pub fn rates_from_points(pts: &[(usize, f64)]) -> Vec<RatePair> {
    pts.windows(2)
        .map(|w| {
            let ((n1, e1), (n2, e2)) = (w[0], w[1]);
            RatePair {
                n1,
                n2,
                rate: (e1 / e2).ln() / (n2 as f64 / n1 as f64).ln(),
                reliable: e1 >= ROUNDOFF_FLOOR && e2 >= ROUNDOFF_FLOOR,
            }
        })
        .collect()
}

/// Rate between two specific mesh sizes of a curve.
pub fn rate_between(records: &[ExperimentRecord], n1: usize, n2: usize) -> Option<RatePair> {
    let e = |n| records.iter().find(|r| r.n == n).map(|r| r.l2_error_u);
    rates_from_points(&[(n1, e(n1)?), (n2, e(n2)?)]).pop()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceOptions {
    pub spike_factor: f64,
    pub window: usize,
}

impl Default for ResonanceOptions {
    fn default() -> Self {
        Self {
            spike_factor: 10.0,
            window: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRegion {
    pub peak_n: usize,
    pub peak_error: f64,
    /// Every flagged `N` in the region, ascending.
    pub members: Vec<usize>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Flags `N` whose error is at least `spike_factor` times the median error
/// of its `window` nearest neighbours in `N`; runs of flagged points that
/// are adjacent in the sorted sample merge into one region.
pub fn resonance_report(records: &[ExperimentRecord], opts: ResonanceOptions) -> Result<Vec<SpikeRegion>> {
    let pts: Vec<(usize, f64)> = records.iter().map(|r| (r.n, r.l2_error_u)).collect();
    spikes_from_points(&pts, opts)
}

pub fn spikes_from_points(points: &[(usize, f64)], opts: ResonanceOptions) -> Result<Vec<SpikeRegion>> {
    if points.len() < 5 {
        return Err(Error::InvalidParameter(format!(
            "resonance detection needs at least 5 points, got {}",
            points.len()
        )));
    }
    if opts.window == 0 || !(opts.spike_factor > 0.0) {
        return Err(Error::InvalidParameter("resonance window and factor must be positive".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by_key(|p| p.0);
    let flagged: Vec<bool> = (0..pts.len())
        .map(|i| {
            let mut others: Vec<usize> = (0..pts.len()).filter(|&k| k != i).collect();
            others.sort_by_key(|&k| (pts[k].0.abs_diff(pts[i].0), pts[k].0));
            let mut near: Vec<f64> = others.iter().take(opts.window).map(|&k| pts[k].1).collect();
            let med = median(&mut near);
            let e = pts[i].1;
            e.is_infinite() || e >= opts.spike_factor * med
        })
        .collect();
    let mut regions: Vec<SpikeRegion> = Vec::new();
    let mut prev = false;
    for (i, &(n, e)) in pts.iter().enumerate() {
        if flagged[i] {
            if prev {
                let r = regions.last_mut().unwrap();
                r.members.push(n);
                if e > r.peak_error {
                    r.peak_error = e;
                    r.peak_n = n;
                }
            } else {
                regions.push(SpikeRegion {
                    peak_n: n,
                    peak_error: e,
                    members: vec![n],
                });
            }
        }
        prev = flagged[i];
    }
    Ok(regions)
}

/// `N` at which `value` is largest (first occurrence on ties).
pub fn argmax_n(records: &[ExperimentRecord], value: impl Fn(&ExperimentRecord) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    let mut sorted: Vec<&ExperimentRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.n);
    for r in sorted {
        let v = value(r);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((r.n, v));
        }
    }
    best.map(|b| b.0)
}

type Slot = Arc<Mutex<Option<Arc<ReferenceSolution>>>>;

/// In-memory and on-disk cache of fine-mesh references. Generation is
/// serialized per `(f, eps, domain, N_ref)` key.
pub struct ReferenceStore {
    dir: Option<PathBuf>,
    n_ref: Option<usize>,
    slots: Mutex<HashMap<String, Slot>>,
}

impl ReferenceStore {
    pub fn in_memory() -> Self {
        Self::with_dir(None)
    }

    pub fn with_dir(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            n_ref: None,
            slots: Mutex::new(HashMap::new()),
        }
    }

    /// Uses `dir` when given, else `$MSDG_REF_CACHE` when set, else memory
    /// only.
    pub fn from_env(dir: Option<PathBuf>) -> Self {
        Self::with_dir(dir.or_else(|| std::env::var_os(REF_CACHE_ENV).map(PathBuf::from)))
    }

    /// Overrides the default fine-mesh size.
    pub fn with_n_ref(mut self, n_ref: Option<usize>) -> Self {
        self.n_ref = n_ref;
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn query(&self, f: &Coefficient, eps: f64, a: f64, b: f64) -> ReferenceQuery {
        ReferenceQuery {
            f_descriptor: f.descriptor(),
            eps,
            a,
            b,
            n_ref: self.n_ref.unwrap_or_else(|| default_reference_elements(f, eps, a, b)),
        }
    }

    pub fn cache_path(&self, q: &ReferenceQuery) -> Option<PathBuf> {
        let tag: String = q
            .f_descriptor
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
            .collect();
        self.dir.as_ref().map(|d| {
            d.join(format!(
                "ref_{tag}_eps{}_a{}_b{}_n{}.bin",
                q.eps, q.a, q.b, q.n_ref
            ))
        })
    }

    /// Returns the reference for `(f, eps, [a, b])`, loading it from disk or
    /// generating (and saving) it on first use. A cached file whose metadata
    /// does not match is regenerated and overwritten.
    pub fn get(&self, f: &Coefficient, eps: f64, a: f64, b: f64) -> Result<Arc<ReferenceSolution>> {
        let q = self.query(f, eps, a, b);
        let key = format!("{}|{:x}|{:x}|{:x}|{}", q.f_descriptor, eps.to_bits(), a.to_bits(), b.to_bits(), q.n_ref);
        let slot = {
            let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
            slots.entry(key).or_default().clone()
        };
        let mut guard = slot.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(r) = guard.as_ref() {
            return Ok(r.clone());
        }
        let path = self.cache_path(&q);
        let loaded = path
            .as_ref()
            .filter(|p| p.exists())
            .and_then(|p| load_reference(p, &q).ok());
        let r = match loaded {
            Some(r) => r,
            None => {
                let r = generate_reference_with(f, eps, a, b, q.n_ref, QuadratureOptions::default())?;
                if let Some(p) = &path {
                    save_reference(&r, p)?;
                }
                r
            }
        };
        let r = Arc::new(r);
        *guard = Some(r.clone());
        Ok(r)
    }
}

/// One point of a sweep.
#[derive(Debug, Clone)]
pub struct CasePoint {
    pub f: Coefficient,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub space: SpaceKind,
    pub params: TraceParams,
    pub n: usize,
    pub cond: CondChoice,
    pub quad: QuadratureOptions,
    pub timing: bool,
}

impl CasePoint {
    pub fn config(&self) -> Result<SolveConfig> {
        let mut cfg = SolveConfig::new(
            MeshPartition::uniform(self.a, self.b, self.n)?,
            self.space,
            self.eps,
            self.f.clone(),
            self.params,
        );
        cfg.quad = self.quad;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Assembles, solves, measures the error against the analytic plane wave
/// (constant `f`) or the cached reference, and estimates the condition
/// number. A singular system yields a record with infinite errors and
/// condition instead of an error.
pub fn run_case(p: &CasePoint, store: &ReferenceStore) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let cfg = p.config()?;
    let oracle: Box<dyn Oracle> = match p.f.constant_value() {
        Some(f0) => Box::new(exact_plane_wave(f0, p.eps, p.a)?),
        None => Box::new(ArcOracle(store.get(&p.f, p.eps, p.a, p.b)?)),
    };
    let sys = assemble_global(&cfg)?;
    let method = p.cond.resolve(sys.dim());
    let mut record = ExperimentRecord {
        space: p.space,
        eps: p.eps,
        alpha: p.params.alpha,
        beta: p.params.beta,
        gamma: p.params.gamma,
        n: p.n,
        h: cfg.mesh.h(),
        l2_error_u: f64::INFINITY,
        l2_error_q: f64::INFINITY,
        condition: ConditionReport {
            value: f64::INFINITY,
            method,
            dimension: sys.dim(),
            singular: true,
        },
        wall_time: 0.0,
        singular: true,
    };
    let lu = match BandLu::factor(&sys.matrix) {
        Ok(lu) => lu,
        Err(Error::Singular { .. }) => {
            if p.timing {
                record.wall_time = start.elapsed().as_secs_f64();
            }
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    let mut coeffs = sys.rhs.clone();
    lu.solve_in_place(&mut coeffs);
    record.condition = match method {
        CondMethod::OneNormEstimate => ConditionReport {
            value: sys.matrix.norm_one() * lu.inverse_norm_one_estimate(),
            method,
            dimension: sys.dim(),
            singular: false,
        },
        CondMethod::Dense2Norm => condition_of(&sys.matrix, method)?,
    };
    drop(lu);
    let sol = DGSolution::from_system(&cfg, &sys, coeffs)?;
    let (eu, eq) = sol.l2_errors(oracle.as_ref());
    record.l2_error_u = eu;
    record.l2_error_q = eq;
    record.singular = record.condition.singular;
    if p.timing {
        record.wall_time = start.elapsed().as_secs_f64();
    }
    Ok(record)
}

struct ArcOracle(Arc<ReferenceSolution>);

impl Oracle for ArcOracle {
    fn u(&self, x: f64) -> num_complex::Complex64 {
        self.0.u(x)
    }

    fn q(&self, x: f64) -> num_complex::Complex64 {
        self.0.q(x)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub f: Coefficient,
    pub a: f64,
    pub b: f64,
    pub eps: Vec<f64>,
    pub spaces: Vec<SpaceKind>,
    /// `(alpha, beta)` pairs.
    pub penalties: Vec<(f64, f64)>,
    pub gamma: f64,
    pub n: Vec<usize>,
    pub cond: CondChoice,
    pub quad: QuadratureOptions,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    /// Record wall time per case. Off by default so output is reproducible
    /// byte for byte.
    pub timing: bool,
    pub n_ref: Option<usize>,
    pub csv_out: Option<PathBuf>,
    pub plot_dir: Option<PathBuf>,
    pub ref_cache: Option<PathBuf>,
}

impl SweepSpec {
    pub fn new(f: Coefficient, eps: Vec<f64>, spaces: Vec<SpaceKind>, penalties: Vec<(f64, f64)>, n: Vec<usize>) -> Self {
        Self {
            f,
            a: 0.0,
            b: 1.0,
            eps,
            spaces,
            penalties,
            gamma: TraceParams::DEFAULT_GAMMA,
            n,
            cond: CondChoice::Auto,
            quad: QuadratureOptions::default(),
            workers: None,
            timing: false,
            n_ref: None,
            csv_out: None,
            plot_dir: None,
            ref_cache: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a < self.b) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidParameter(format!("domain [{}, {}] is empty", self.a, self.b)));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {e}")));
        }
        if self.n.contains(&0) {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        for &(al, be) in &self.penalties {
            TraceParams::new(al, be, self.gamma)?;
        }
        if self.penalties.is_empty() {
            TraceParams::new(0.0, 0.0, self.gamma)?;
        }
        Ok(())
    }

    /// Cartesian product in the order eps, space, penalty, N.
    pub fn points(&self) -> Result<Vec<CasePoint>> {
        self.validate()?;
        let mut out = Vec::new();
        for &eps in &self.eps {
            for &space in &self.spaces {
                for &(alpha, beta) in &self.penalties {
                    for &n in &self.n {
                        out.push(CasePoint {
                            f: self.f.clone(),
                            a: self.a,
                            b: self.b,
                            eps,
                            space,
                            params: TraceParams::new(alpha, beta, self.gamma)?,
                            n,
                            cond: self.cond,
                            quad: self.quad,
                            timing: self.timing,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Parses the flat `key = value` config format. Lists are
    /// comma-separated; `N` items may be ranges `lo..hi` or `lo..hi:step`
    /// (inclusive); penalties are `p` (alpha = beta = p) or `alpha:beta`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: HashMap<String, (usize, String)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected `key = value`", i + 1)))?;
            let k = k.trim().to_ascii_lowercase();
            if map.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse(format!("config line {}: duplicate key `{k}`", i + 1)));
            }
        }
        const KEYS: &[&str] = &[
            "f", "fcase", "a", "b", "eps", "space", "spaces", "penalty", "penalties", "gamma", "n", "nelems", "cond",
            "quad_ppw", "quad_extra", "workers", "timing", "n_ref", "out", "plot_dir", "ref_cache",
        ];
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        if let Some(k) = keys.into_iter().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Parse(format!("config line {}: unknown key `{k}`", map[k].0)));
        }
        let get = |names: &[&str]| names.iter().find_map(|n| map.get(*n)).map(|(l, v)| (*l, v.as_str()));
        let require = |names: &[&str]| get(names).ok_or_else(|| Error::Parse(format!("config: missing `{}`", names[0])));
        let real = |l: usize, s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("config line {l}: `{s}` is not a number")))
        };
        let list = |s: &str| -> Vec<String> {
            s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
        };

        let f = parse_fcase(require(&["f", "fcase"])?.1)?;
        let (l, v) = require(&["eps"])?;
        let eps = list(v).iter().map(|x| real(l, x)).collect::<Result<Vec<_>>>()?;
        let spaces = list(require(&["space", "spaces"])?.1)
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<SpaceKind>>>()?;
        let n = match get(&["n", "nelems"]) {
            Some((l, v)) => parse_n_list(v).map_err(|e| Error::Parse(format!("config line {l}: {e}")))?,
            None => return Err(Error::Parse("config: missing `n`".into())),
        };
        let mut spec = SweepSpec::new(f, eps, spaces, vec![(0.0, 0.0)], n);
        if let Some((l, v)) = get(&["penalty", "penalties"]) {
            spec.penalties = parse_penalty_list(v).map_err(|e| Error::Parse(format!("config line {l}: {e}")))?;
        }
        if let Some((l, v)) = get(&["a"]) {
            spec.a = real(l, v)?;
        }
        if let Some((l, v)) = get(&["b"]) {
            spec.b = real(l, v)?;
        }
        if let Some((l, v)) = get(&["gamma"]) {
            spec.gamma = real(l, v)?;
        }
        if let Some((_, v)) = get(&["cond"]) {
            spec.cond = v.parse()?;
        }
        if let Some((l, v)) = get(&["quad_ppw"]) {
            spec.quad.points_per_wavelength = real(l, v)?;
        }
        let int = |l: usize, s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Parse(format!("config line {l}: `{s}` is not a non-negative integer")))
        };
        if let Some((l, v)) = get(&["quad_extra"]) {
            spec.quad.extra_nodes = int(l, v)?;
        }
        if let Some((l, v)) = get(&["workers"]) {
            spec.workers = Some(int(l, v)?);
        }
        if let Some((l, v)) = get(&["n_ref"]) {
            spec.n_ref = Some(int(l, v)?);
        }
        if let Some((l, v)) = get(&["timing"]) {
            spec.timing = match v {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => return Err(Error::Parse(format!("config line {l}: `{v}` is not a boolean"))),
            };
        }
        spec.csv_out = get(&["out"]).map(|(_, v)| PathBuf::from(v));
        spec.plot_dir = get(&["plot_dir"]).map(|(_, v)| PathBuf::from(v));
        spec.ref_cache = get(&["ref_cache"]).map(|(_, v)| PathBuf::from(v));
        if !(spec.quad.points_per_wavelength > 0.0) {
            return Err(Error::InvalidParameter("quad_ppw must be positive".into()));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Parses `0, 0.1:1` into `(alpha, beta)` pairs; a single value sets both.
pub fn parse_penalty_list(s: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    let real = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", t.trim()));
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|p| match p.split_once(':') {
            Some((al, be)) => Ok((real(al)?, real(be)?)),
            None => real(p).map(|x| (x, x)),
        })
        .collect()
}

/// Parses `10,20,40` / `5..100` / `110..200:10` (ranges inclusive); the
/// result keeps the given order and drops repeats.
pub fn parse_n_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out: Vec<usize> = Vec::new();
    let int = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a non-negative integer"));
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let values: Vec<usize> = match item.split_once("..") {
            Some((lo, rest)) => {
                let (hi, step) = match rest.split_once(':') {
                    Some((hi, st)) => (int(hi)?, int(st)?),
                    None => (int(rest)?, 1),
                };
                let lo = int(lo)?;
                if step == 0 || lo > hi {
                    return Err(format!("bad range `{item}`"));
                }
                (lo..=hi).step_by(step).collect()
            }
            None => vec![int(item)?],
        };
        for v in values {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    Ok(out)
}

/// Runs every point, concurrently up to the worker limit; records come back
/// in sweep order regardless of completion order.
pub fn run_sweep(spec: &SweepSpec, store: &ReferenceStore) -> Result<Vec<ExperimentRecord>> {
    let points = spec.points()?;
    if spec.f.constant_value().is_none() {
        for &eps in &spec.eps {
            if !spec.n.is_empty() && !spec.spaces.is_empty() {
                store.get(&spec.f, eps, spec.a, spec.b)?;
            }
        }
    }
    let run = || points.par_iter().map(|p| run_case(p, store)).collect::<Result<Vec<_>>>();
    match spec.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Runs a sweep and writes the CSV and plot files it names.
pub fn run_sweep_to_outputs(spec: &SweepSpec, store: &ReferenceStore) -> Result<Vec<ExperimentRecord>> {
    let records = run_sweep(spec, store)?;
    if let Some(p) = &spec.csv_out {
        write_csv(&records, p)?;
    }
    if let Some(d) = &spec.plot_dir {
        emit_plot_data(&records, d)?;
    }
    Ok(records)
}

pub const EXAMPLE1_N: [usize; 6] = [10, 20, 40, 80, 160, 200];
pub const EXAMPLE2_PENALTIES: [f64; 4] = [0.0, 0.1, 0.5, 1.0];

pub fn all_spaces() -> Vec<SpaceKind> {
    vec![SpaceKind::ep(1), SpaceKind::ep(2), SpaceKind::ep(3), SpaceKind::t(2), SpaceKind::t(3)]
}

/// `f = 10` on `[0, 1]`, every space, both eps, penalties `{0, 0.5, 1}`.
pub fn example1_spec() -> SweepSpec {
    SweepSpec::new(
        Coefficient::Constant(10.0),
        vec![0.005, 0.001],
        all_spaces(),
        [0.0, 0.5, 1.0].iter().map(|&p| (p, p)).collect(),
        EXAMPLE1_N.to_vec(),
    )
}

/// Mesh sizes for the `f = sin x + 2` study: dense near the resonance band
/// `h ~ eps`, coarse elsewhere. For eps = 0.005: every N in [5, 100], then
/// 110..200 by 10 and {240, 320, 480, 640}. For eps = 0.001: 25..95 by 5
/// (the same smallest `N eps` as above), every N in [100, 200], 220..400 by
/// 20 and {480, 560, 640}. Other eps get the eps = 0.005 grid.
pub fn example2_n_grid(eps: f64) -> Vec<usize> {
    let grid = if eps == 0.001 {
        "25..95:5, 100..200, 220..400:20, 480, 560, 640"
    } else {
        "5..100, 110..200:10, 240, 320, 480, 640"
    };
    parse_n_list(grid).expect("static grid")
}

pub fn example2_spec(eps: f64, spaces: Vec<SpaceKind>, penalties: &[f64]) -> SweepSpec {
    SweepSpec::new(
        Coefficient::SinPlusTwo,
        vec![eps],
        spaces,
        penalties.iter().map(|&p| (p, p)).collect(),
        example2_n_grid(eps),
    )
}

impl FromStr for SweepSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(n: usize, err: f64) -> ExperimentRecord {
        ExperimentRecord {
            space: SpaceKind::ep(1),
            eps: 0.005,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.5,
            n,
            h: 1.0 / n as f64,
            l2_error_u: err,
            l2_error_q: 2.0 * err,
            condition: ConditionReport {
                value: 1e3 + n as f64,
                method: CondMethod::OneNormEstimate,
                dimension: 4 * n,
                singular: false,
            },
            wall_time: 0.0,
            singular: false,
        }
    }

    #[test]
    fn rates_from_exact_ratios() {
        let r = convergence_rates(&[record(10, 1e-2), record(20, 2.5e-3)]);
        assert_eq!(r.len(), 1);
        assert!((r[0].rate - 2.0).abs() < 1e-14);
        assert!(r[0].reliable);
        let r = convergence_rates(&[record(200, 1.5625e-5), record(100, 1e-3)]);
        assert!((r[0].rate - 6.0).abs() < 1e-13);
        assert_eq!((r[0].n1, r[0].n2), (100, 200));
    }

    #[test]
    fn roundoff_pairs_are_flagged() {
        let recs: Vec<_> = [(10, 4.0e-12), (20, 3.1e-12), (40, 5.2e-12), (80, 2.0e-11)]
            .iter()
            .map(|&(n, e)| record(n, e))
            .collect();
        assert!(convergence_rates(&recs).iter().all(|p| !p.reliable));
        assert_eq!(rate_between(&recs, 10, 80).map(|p| p.reliable), Some(false));
        assert!(rate_between(&recs, 10, 30).is_none());
    }

    #[test]
    fn single_spike_is_found() {
        let recs: Vec<_> = (5..=60)
            .map(|n| record(n, if n == 30 { 0.6 } else { 1.0 / (n * n) as f64 }))
            .collect();
        let s = resonance_report(&recs, ResonanceOptions::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].peak_n, 30);
        assert_eq!(s[0].members, vec![30]);
    }

    #[test]
    fn adjacent_spikes_merge() {
        let recs: Vec<_> = (5..=60)
            .map(|n| {
                let e = match n {
                    30 => 0.3,
                    31 => 0.9,
                    32 => 0.2,
                    _ => 1e-3,
                };
                record(n, e)
            })
            .collect();
        let s = resonance_report(&recs, ResonanceOptions::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].peak_n, 31);
        assert_eq!(s[0].members, vec![30, 31, 32]);
    }

    #[test]
    fn smooth_curve_has_no_spikes() {
        let recs: Vec<_> = (5..=100).map(|n| record(n, 1.0 / (n as f64).powi(2))).collect();
        assert!(resonance_report(&recs, ResonanceOptions::default()).unwrap().is_empty());
        assert!(resonance_report(&recs[..4], ResonanceOptions::default()).is_err());
    }

    #[test]
    fn singular_points_count_as_spikes() {
        let recs: Vec<_> = (5..=20)
            .map(|n| record(n, if n == 12 { f64::INFINITY } else { 1e-3 }))
            .collect();
        let s = resonance_report(&recs, ResonanceOptions::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].peak_n, 12);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let recs = vec![record(7, 1.0), record(3, 2.0), record(5, 2.0)];
        assert_eq!(argmax_n(&recs, |r| r.l2_error_u), Some(3));
        assert_eq!(argmax_n(&[], |r| r.l2_error_u), None);
    }

    #[test]
    fn csv_single_record() {
        let text = records_to_csv(&[record(10, 4.0e-12)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[1],
            "E1,5.00000e-3,0.00000e0,0.00000e0,5.00000e-1,10,1.00000e-1,4.00000e-12,8.00000e-12,1.01000e3,onenorm_estimate,false,0.00000e0"
        );
    }

    #[test]
    fn csv_keeps_infinite_values() {
        let mut r = record(4, f64::INFINITY);
        r.condition.value = f64::INFINITY;
        r.singular = true;
        r.condition.singular = true;
        let back = records_from_csv(&records_to_csv(&[r.clone()])).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(records_from_csv("a,b\n").is_err());
        assert!(records_from_csv(&format!("{CSV_HEADER}\nE1,1,2\n")).is_err());
        assert!(records_from_csv(&format!("{CSV_HEADER}\n")).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            n in 1usize..5000,
            err in 1e-15f64..10.0,
            cond in 1.0f64..1e12,
            p in 0.0f64..2.0,
            space in prop::sample::select(vec!["E1", "E2", "E3", "T3", "T5", "P3"]),
        ) {
            let mut r = record(n, err);
            r.space = space.parse().unwrap();
            r.condition.dimension = 2 * r.space.dim() * n;
            r.condition.value = cond;
            r.alpha = p;
            r.beta = p / 3.0;
            let recs = vec![r.clone(), record(n + 1, err / 7.0)];
            let text = records_to_csv(&recs);
            let back = records_from_csv(&text).unwrap();
            let expected: Vec<_> = recs.iter().map(|r| r.rounded()).collect();
            prop_assert_eq!(&back, &expected);
            prop_assert_eq!(records_to_csv(&back), text);
        }
    }

    #[test]
    fn n_list_syntax() {
        assert_eq!(parse_n_list("10, 20,40").unwrap(), vec![10, 20, 40]);
        assert_eq!(parse_n_list("5..8").unwrap(), vec![5, 6, 7, 8]);
        assert_eq!(parse_n_list("110..140:10, 120, 240").unwrap(), vec![110, 120, 130, 140, 240]);
        assert!(parse_n_list("").unwrap().is_empty());
        assert!(parse_n_list("9..3").is_err());
        assert!(parse_n_list("1..3:0").is_err());
        assert!(parse_n_list("x").is_err());
    }

    #[test]
    fn penalty_list_syntax() {
        assert_eq!(parse_penalty_list("0, 0.1:1").unwrap(), vec![(0.0, 0.0), (0.1, 1.0)]);
        assert!(parse_penalty_list("a").is_err());
        assert!(parse_penalty_list("1:").is_err());
    }

    #[test]
    fn example2_grids() {
        let g = example2_n_grid(0.005);
        assert_eq!(g.len(), 96 + 10 + 4);
        assert_eq!((g[0], *g.last().unwrap()), (5, 640));
        assert!((20..=80).all(|n| g.contains(&n)));
        let g = example2_n_grid(0.001);
        assert!((100..=200).all(|n| g.contains(&n)));
        assert_eq!((g[0], *g.last().unwrap()), (25, 640));
    }

    #[test]
    fn config_parsing() {
        let spec = SweepSpec::parse(
            "# demo\nf = sinp2\neps = 0.005, 0.001\nspace = E1, T5\npenalty = 0, 0.1:1\nn = 5..7, 640\ngamma = 0.25\ncond = onenorm\nworkers = 2\nout = x.csv\n",
        )
        .unwrap();
        assert_eq!(spec.eps, vec![0.005, 0.001]);
        assert_eq!(spec.spaces, vec![SpaceKind::ep(1), SpaceKind::t(3)]);
        assert_eq!(spec.penalties, vec![(0.0, 0.0), (0.1, 1.0)]);
        assert_eq!(spec.n, vec![5, 6, 7, 640]);
        assert_eq!(spec.gamma, 0.25);
        assert_eq!(spec.cond, CondChoice::OneNorm);
        assert_eq!(spec.workers, Some(2));
        assert_eq!(spec.csv_out, Some(PathBuf::from("x.csv")));
        let pts = spec.points().unwrap();
        assert_eq!(pts.len(), 2 * 2 * 2 * 4);
        assert_eq!((pts[0].eps, pts[0].n, pts[1].n), (0.005, 5, 6));
        assert_eq!(pts[4].params.beta, 1.0);
        assert_eq!(pts[8].space, SpaceKind::t(3));
    }

    #[test]
    fn config_errors() {
        let base = "f = const10\neps = 0.01\nspace = E1\nn = 10\n";
        assert!(SweepSpec::parse(base).is_ok());
        for bad in [
            "eps = 0.01\nspace = E1\nn = 10\n",
            "f = const10\neps = -1\nspace = E1\nn = 10\n",
            "f = const10\neps = 0.01\nspace = E4x\nn = 10\n",
            "f = const10\neps = 0.01\nspace = E1\nn = 0\n",
            "f = const10\neps = 0.01\nspace = E1\nn = 10\nbogus = 1\n",
            "f = const10\neps = 0.01\nspace = E1\nn = 10\ngamma = 1.5\n",
            "f = const10\neps = 0.01\nspace = E1\nn = 10\nn = 20\n",
            "f = nope\neps = 0.01\nspace = E1\nn = 10\n",
            "f = const10\neps = 0.01\nspace = E1\nn = 10\nworkers = 0\n",
            "f = const10\neps = 0.01\nspace = E1\nn = 10\njunk line\n",
        ] {
            assert!(SweepSpec::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn fcase_names() {
        assert_eq!(parse_fcase("const10").unwrap().constant_value(), Some(10.0));
        assert_eq!(parse_fcase("const:2.5").unwrap().constant_value(), Some(2.5));
        assert_eq!(parse_fcase("sinp2").unwrap().descriptor(), "sin(x)+2");
        assert!(parse_fcase("const:-1").is_err());
        assert!(parse_fcase("cos").is_err());
    }

    fn point(space: &str, eps: f64, penalty: f64, n: usize) -> CasePoint {
        CasePoint {
            f: Coefficient::Constant(10.0),
            a: 0.0,
            b: 1.0,
            eps,
            space: space.parse().unwrap(),
            params: TraceParams::symmetric(penalty).unwrap(),
            n,
            cond: CondChoice::Auto,
            quad: QuadratureOptions::default(),
            timing: false,
        }
    }

    #[test]
    fn constant_f_cases() {
        let store = ReferenceStore::in_memory();
        let r = run_case(&point("E1", 0.005, 0.0, 10), &store).unwrap();
        assert!(r.l2_error_u <= 1e-8, "{:e}", r.l2_error_u);
        assert!(!r.singular && r.condition.value.is_finite());
        assert_eq!(r.condition.method, CondMethod::Dense2Norm);
        assert_eq!(r.wall_time, 0.0);
        let r = run_case(&point("T5", 0.001, 1.0, 200), &store).unwrap();
        assert!(r.l2_error_u <= 1e-8, "{:e}", r.l2_error_u);
        assert_eq!(r.condition.method, CondMethod::OneNormEstimate);
    }

    #[test]
    fn e1_and_t1_records_agree() {
        let store = ReferenceStore::in_memory();
        let mut p = point("E1", 0.02, 0.5, 13);
        p.f = Coefficient::SinPlusTwo;
        let r1 = run_case(&p, &store).unwrap();
        p.space = "T1".parse().unwrap();
        let r2 = run_case(&p, &store).unwrap();
        assert!((r1.l2_error_u - r2.l2_error_u).abs() <= 1e-14);
        assert!((r1.condition.value - r2.condition.value).abs() <= 1e-9 * r1.condition.value);
    }

    #[test]
    fn empty_n_list_gives_no_records() {
        let spec = SweepSpec::new(Coefficient::SinPlusTwo, vec![0.005], all_spaces(), vec![(0.0, 0.0)], vec![]);
        assert!(run_sweep(&spec, &ReferenceStore::in_memory()).unwrap().is_empty());
    }

    #[test]
    fn sweep_order_and_worker_independence() {
        let mut spec = SweepSpec::new(
            Coefficient::SinPlusTwo,
            vec![0.05, 0.02],
            vec![SpaceKind::ep(1), SpaceKind::ep(2)],
            vec![(0.0, 0.0), (1.0, 1.0)],
            vec![8, 4, 16],
        );
        spec.n_ref = None;
        let store = ReferenceStore::in_memory();
        spec.workers = Some(1);
        let a = run_sweep(&spec, &store).unwrap();
        spec.workers = Some(3);
        let b = run_sweep(&spec, &store).unwrap();
        assert_eq!(records_to_csv(&a), records_to_csv(&b));
        assert_eq!(a.len(), 24);
        let order: Vec<(u64, String, u64, usize)> = a
            .iter()
            .map(|r| (r.eps.to_bits(), r.space.to_string(), r.alpha.to_bits(), r.n))
            .collect();
        assert_eq!(order[0], (0.05f64.to_bits(), "E1".to_string(), 0f64.to_bits(), 8));
        assert_eq!(order[1].3, 4);
        assert_eq!(order[3].2, 1f64.to_bits());
        assert_eq!(order[6].1, "E2");
        assert_eq!(order[12].0, 0.02f64.to_bits());
    }

    #[test]
    fn reference_store_uses_disk_cache() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReferenceStore::with_dir(Some(dir.path().to_path_buf())).with_n_ref(Some(400));
        let f = Coefficient::SinPlusTwo;
        let r1 = store.get(&f, 0.05, 0.0, 1.0).unwrap();
        let path = store.cache_path(&store.query(&f, 0.05, 0.0, 1.0)).unwrap();
        assert!(path.exists());
        let again = ReferenceStore::with_dir(Some(dir.path().to_path_buf())).with_n_ref(Some(400));
        let r2 = again.get(&f, 0.05, 0.0, 1.0).unwrap();
        assert_eq!(*r1, *r2);
        // corrupt cache is regenerated
        std::fs::write(&path, b"junk").unwrap();
        let third = ReferenceStore::with_dir(Some(dir.path().to_path_buf())).with_n_ref(Some(400));
        assert_eq!(*third.get(&f, 0.05, 0.0, 1.0).unwrap(), *r1);
        assert!(store.get(&f, 0.05, 0.0, 1.0).is_ok());
        // below the resolution floor
        let coarse = ReferenceStore::in_memory().with_n_ref(Some(10));
        assert!(coarse.get(&f, 0.005, 0.0, 1.0).is_err());
    }

    #[test]
    fn plot_files_per_curve() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs: Vec<_> = (5..10).map(|n| record(n, 1.0 / n as f64)).collect();
        let mut other = record(5, f64::INFINITY);
        other.alpha = 1.0;
        other.beta = 1.0;
        recs.push(other);
        let files = emit_plot_data(&recs, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let name = files[0].file_name().unwrap().to_str().unwrap();
        assert_eq!(name, "E1_eps0.005_a0_b0_g0.5_err.dat");
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], format!("{:.6} {:.6}", 5f64.log10(), (0.2f64).log10()));
        let singular = std::fs::read_to_string(&files[2]).unwrap();
        assert_eq!(singular.lines().count(), 1);
    }
}
