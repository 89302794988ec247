use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use msdg::harness::{
    self, convergence_rates, example1_spec, example2_n_grid, group_curves, parse_fcase, parse_n_list, parse_penalty_list, read_csv,
    records_to_csv, resonance_report, run_case, run_sweep, write_csv, CasePoint, ReferenceStore, ResonanceOptions,
    SweepSpec,
};
use msdg::linsolve::CondChoice;
use msdg::solution::save_reference;
use msdg::{QuadratureOptions, SpaceKind, TraceParams};

#[derive(Parser)]
#[command(name = "msdg", version, about = "Multiscale DG experiments for -eps^2 u'' - f u = 0")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and print its record as CSV.
    Run(RunArgs),
    /// Run a sweep from a config file and/or flags.
    Sweep(SweepArgs),
    /// Build (or load) and cache a fine-mesh reference solution.
    Reference(ReferenceArgs),
    /// Convergence rates and resonance spikes for every curve in a CSV.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Coefficient: const10, sinp2 or const:<value>.
    #[arg(long, default_value = "sinp2")]
    fcase: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    b: f64,
    /// Reference cache directory (falls back to $MSDG_REF_CACHE).
    #[arg(long)]
    ref_cache: Option<PathBuf>,
    /// Override the fine-mesh size used for references.
    #[arg(long)]
    n_ref: Option<usize>,
    /// auto, dense or onenorm.
    #[arg(long, default_value = "auto")]
    cond: String,
    /// Quadrature points per wavelength.
    #[arg(long, default_value_t = 10.0)]
    quad_ppw: f64,
    /// Record wall time (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// E1, E2, E3, T3, T5, P3, ...
    #[arg(long)]
    space: String,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = TraceParams::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long)]
    nelems: usize,
    /// Append the record to this CSV instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Flat `key = value` config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset grid: example1 (f=10, every space) or example2 (f=sin x+2,
    /// dense N around the resonance band).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    fcase: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    b: Option<f64>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',')]
    space: Vec<String>,
    /// Comma-separated; `p` for alpha = beta = p or `alpha:beta`.
    #[arg(long)]
    penalty: Option<String>,
    /// Single penalty pair (alternative to --penalty).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// N list: `10,20,40`, `5..100`, `110..200:10`.
    #[arg(long)]
    nelems: Option<String>,
    #[arg(long)]
    cond: Option<String>,
    #[arg(long)]
    quad_ppw: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    n_ref: Option<usize>,
    #[arg(long)]
    ref_cache: Option<PathBuf>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for two-column plot files.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReferenceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    eps: f64,
    /// Write the reference to this file instead of the cache directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// CSV written by `run` or `sweep`.
    input: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    spike_factor: f64,
    #[arg(long, default_value_t = 8)]
    window: usize,
}

fn store(ref_cache: Option<PathBuf>, n_ref: Option<usize>) -> ReferenceStore {
    ReferenceStore::from_env(ref_cache).with_n_ref(n_ref)
}

fn quad(ppw: f64) -> Result<QuadratureOptions> {
    if !(ppw > 0.0) {
        bail!("--quad-ppw must be positive, got {ppw}");
    }
    Ok(QuadratureOptions {
        points_per_wavelength: ppw,
        ..QuadratureOptions::default()
    })
}

fn run(args: RunArgs) -> Result<()> {
    let c = &args.common;
    let point = CasePoint {
        f: parse_fcase(&c.fcase)?,
        a: c.a,
        b: c.b,
        eps: args.eps,
        space: args.space.parse()?,
        params: TraceParams::new(args.alpha, args.beta, args.gamma)?,
        n: args.nelems,
        cond: c.cond.parse()?,
        quad: quad(c.quad_ppw)?,
        timing: c.timing,
    };
    let record = run_case(&point, &store(c.ref_cache.clone(), c.n_ref))?;
    match &args.out {
        Some(path) => {
            let mut records = if path.exists() { read_csv(path)? } else { Vec::new() };
            records.push(record);
            write_csv(&records, path)?;
        }
        None => print!("{}", records_to_csv(&[record])),
    }
    Ok(())
}

fn sweep_spec(args: &SweepArgs) -> Result<Vec<SweepSpec>> {
    let mut spec = match (&args.config, args.preset.as_deref()) {
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (Some(path), None) => {
            SweepSpec::from_file(path).with_context(|| format!("reading config {}", path.display()))?
        }
        (None, Some("example1")) => example1_spec(),
        (None, Some("example2")) => {
            let eps = if args.eps.is_empty() { vec![0.005, 0.001] } else { args.eps.clone() };
            let mut s = SweepSpec::new(
                msdg::Coefficient::SinPlusTwo,
                eps,
                harness::all_spaces(),
                harness::EXAMPLE2_PENALTIES.iter().map(|&p| (p, p)).collect(),
                Vec::new(),
            );
            s.cond = CondChoice::OneNorm;
            s
        }
        (None, Some(other)) => bail!("unknown preset `{other}` (example1 | example2)"),
        (None, None) => {
            let fcase = args.fcase.as_deref().context("--fcase is required without --config")?;
            if args.eps.is_empty() || args.space.is_empty() || args.nelems.is_none() {
                bail!("--eps, --space and --nelems are required without --config");
            }
            SweepSpec::new(parse_fcase(fcase)?, Vec::new(), Vec::new(), vec![(0.0, 0.0)], Vec::new())
        }
    };
    if let Some(f) = &args.fcase {
        spec.f = parse_fcase(f)?;
    }
    if let Some(a) = args.a {
        spec.a = a;
    }
    if let Some(b) = args.b {
        spec.b = b;
    }
    if !args.eps.is_empty() {
        spec.eps = args.eps.clone();
    }
    if !args.space.is_empty() {
        spec.spaces = args.space.iter().map(|s| s.parse()).collect::<msdg::Result<Vec<SpaceKind>>>()?;
    }
    if let Some(p) = &args.penalty {
        spec.penalties = parse_penalty_list(p).map_err(|e| anyhow::anyhow!("--penalty: {e}"))?;
    } else if args.alpha.is_some() || args.beta.is_some() {
        spec.penalties = vec![(args.alpha.unwrap_or(0.0), args.beta.unwrap_or(0.0))];
    }
    if let Some(g) = args.gamma {
        spec.gamma = g;
    }
    if let Some(n) = &args.nelems {
        spec.n = parse_n_list(n).map_err(|e| anyhow::anyhow!("--nelems: {e}"))?;
    }
    if let Some(c) = &args.cond {
        spec.cond = c.parse()?;
    }
    if let Some(p) = args.quad_ppw {
        spec.quad = quad(p)?;
    }
    if args.workers.is_some() {
        spec.workers = args.workers;
    }
    spec.timing |= args.timing;
    if args.n_ref.is_some() {
        spec.n_ref = args.n_ref;
    }
    if args.ref_cache.is_some() {
        spec.ref_cache = args.ref_cache.clone();
    }
    if args.out.is_some() {
        spec.csv_out = args.out.clone();
    }
    if args.plot_dir.is_some() {
        spec.plot_dir = args.plot_dir.clone();
    }
    // the example2 preset uses a different N grid per eps
    if args.preset.as_deref() == Some("example2") && args.nelems.is_none() {
        return spec
            .eps
            .iter()
            .map(|&e| {
                let mut s = spec.clone();
                s.eps = vec![e];
                s.n = example2_n_grid(e);
                s.validate()?;
                Ok(s)
            })
            .collect();
    }
    spec.validate()?;
    Ok(vec![spec])
}

fn sweep(args: SweepArgs) -> Result<()> {
    let specs = sweep_spec(&args)?;
    let first = &specs[0];
    let store = store(first.ref_cache.clone(), first.n_ref);
    let mut records = Vec::new();
    for spec in &specs {
        records.extend(run_sweep(spec, &store)?);
    }
    match &first.csv_out {
        Some(path) => {
            write_csv(&records, path)?;
            eprintln!("wrote {} records to {}", records.len(), path.display());
        }
        None => print!("{}", records_to_csv(&records)),
    }
    if let Some(dir) = &first.plot_dir {
        let files = harness::emit_plot_data(&records, dir)?;
        eprintln!("wrote {} plot files to {}", files.len(), dir.display());
    }
    Ok(())
}

fn reference(args: ReferenceArgs) -> Result<()> {
    let c = &args.common;
    let f = parse_fcase(&c.fcase)?;
    if f.constant_value().is_some() {
        eprintln!("note: constant f has a closed-form solution; the reference is only a cross-check");
    }
    let store = store(c.ref_cache.clone(), c.n_ref);
    let r = store.get(&f, args.eps, c.a, c.b)?;
    let path = match (&args.out, store.cache_path(&store.query(&f, args.eps, c.a, c.b))) {
        (Some(p), _) => {
            save_reference(&r, p)?;
            p.clone()
        }
        (None, Some(p)) => p,
        (None, None) => bail!("no output: pass --out or --ref-cache (or set {})", harness::REF_CACHE_ENV),
    };
    let m = &r.meta;
    println!(
        "{}: f={} eps={} [{}, {}] N_ref={} space={} alpha={} beta={} gamma={} ({})",
        path.display(),
        m.f_descriptor,
        m.eps,
        m.a,
        m.b,
        m.n_ref,
        m.space,
        m.params.alpha,
        m.params.beta,
        m.params.gamma,
        m.generator
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let records = read_csv(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let opts = ResonanceOptions {
        spike_factor: args.spike_factor,
        window: args.window,
    };
    let mut out = std::io::stdout().lock();
    for curve in group_curves(&records) {
        let r0 = &curve[0];
        writeln!(
            out,
            "{} eps={} alpha={} beta={} gamma={} ({} points)",
            r0.space,
            r0.eps,
            r0.alpha,
            r0.beta,
            r0.gamma,
            curve.len()
        )?;
        for p in convergence_rates(&curve) {
            writeln!(
                out,
                "  rate N={}->{}: {:.3}{}",
                p.n1,
                p.n2,
                p.rate,
                if p.reliable { "" } else { " (round-off, unreliable)" }
            )?;
        }
        match resonance_report(&curve, opts) {
            Ok(spikes) if spikes.is_empty() => writeln!(out, "  spikes: none")?,
            Ok(spikes) => {
                for s in spikes {
                    writeln!(out, "  spike: peak N={} error={:.3e} members={:?}", s.peak_n, s.peak_error, s.members)?;
                }
            }
            Err(_) => writeln!(out, "  spikes: too few points")?,
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Reference(a) => reference(a),
        Command::Report(a) => report(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
