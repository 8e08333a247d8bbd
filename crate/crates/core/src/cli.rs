//! Command-line entry points.
//!
//! Every command writes its human-readable report to the supplied writer
//! and returns an exit code: `0` success, `1` runtime failure (including a
//! failed gradient check), `2` configuration or usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::export::{export_masks, read_params, write_params, write_pgm};
use crate::field::{ComplexField, Grid};
use crate::objective::gradient_check;
use crate::propagation::{propagate_as, propagate_direct, working_set_elements, Method, Segment, DIRECT_SIZE_LIMIT};
use crate::regularizers::rho_schedule;
use crate::train::{train, Metrics};
use crate::C64;

/// Largest grid accepted by `gradcheck`.
pub const GRADCHECK_SIZE_LIMIT: usize = 16;
/// Gradient-check pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Samples evaluated by `gradcheck`.
pub const GRADCHECK_SAMPLES: usize = 4;
/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "WAVECODER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "wavecoder", version, about = "Differentiable wave-optics design engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write report.csv, masks and the resolved config.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Push a stored field through the configured stack.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input field (WFLD).
        #[arg(long)]
        input: PathBuf,
        /// Output field (WFLD); the intensity image goes next to it as `.pgm`.
        #[arg(long)]
        output: PathBuf,
        /// Trained parameters to load instead of the initial ones.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Time direct and angular-spectrum propagation.
    Bench {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        w: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Grid used for the direct timing (at most 64).
        #[arg(long, default_value_t = 32)]
        direct_n: usize,
    },
    /// Write mask images and realized fields.
    ExportMasks {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns its exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Train { cfg, out: dir } => cmd_train(&cfg.config, dir.as_deref(), cfg.seed, out),
        Command::Simulate {
            cfg,
            input,
            output,
            params,
        } => cmd_simulate(&cfg.config, &input, &output, params.as_deref(), out),
        Command::Gradcheck { cfg } => cmd_gradcheck(&cfg.config, cfg.seed, out),
        Command::Bench { n, w, reps, direct_n } => cmd_bench(n, w, reps, direct_n, out).map(|_| 0),
        Command::ExportMasks { cfg, params, out: dir } => cmd_export_masks(&cfg.config, params.as_deref(), &dir, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Path {
        path: dir.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })
}

fn unix_time() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn describe_metrics(m: &Metrics) -> String {
    match m {
        Metrics::Accuracy(a) => format!("accuracy {a}"),
        Metrics::Imaging { mse, psnr } => format!("mse {mse} psnr {psnr}"),
    }
}

/// Trains and writes `report.csv`, `resolved.cfg`, `params.bin`,
/// `metrics.txt`, `masks/` and `snapshots/epoch_<k>/` into the output
/// directory. Wall-clock timestamps go only to `train.log`.
pub fn cmd_train(config: &Path, out_dir: Option<&Path>, seed: Option<u64>, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(config, seed)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output.dir".into()))?;
    let mut model = cfg.build_model()?;
    let (train_set, test_set) = cfg.load_data()?;
    ensure_dir(&dir)?;
    write_file(&dir.join("resolved.cfg"), cfg.to_resolved_string().as_bytes())?;

    let started = Instant::now();
    let mut log = format!("{:.3} start {}\n", unix_time(), config.display());
    let val = (!test_set.is_empty()).then_some(&test_set);
    let report = train(&mut model, &train_set, val, &cfg.train);
    log.push_str(&format!("{:.3} finished in {:.3} s\n", unix_time(), started.elapsed().as_secs_f64()));
    write_file(&dir.join("train.log"), log.as_bytes())?;
    let report = report?;

    write_file(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    write_params(&dir.join("params.bin"), &model.params())?;
    let summary = match &report.final_metrics {
        Some(m) => describe_metrics(m),
        None => "no test split".to_string(),
    };
    write_file(&dir.join("metrics.txt"), format!("{summary}\n").as_bytes())?;
    export_masks(&model, &dir.join("masks"))?;
    for snap in &report.snapshots {
        let mut m = model.clone();
        m.set_params(&snap.params)?;
        export_masks(&m, &dir.join("snapshots").join(format!("epoch_{:04}", snap.epoch)))?;
    }
    let last = report.epochs.last().map_or(f64::NAN, |e| e.train_loss);
    writeln!(out, "trained {} epochs, final loss {last}, {summary}", report.epochs.len())?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(0)
}

/// Propagates a stored input field through the configured stack and writes
/// the detector-plane field plus its intensity image (peak mapped to 255).
pub fn cmd_simulate(config: &Path, input: &Path, output: &Path, params: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(config, None)?;
    let mut model = cfg.build_model()?;
    if let Some(p) = params {
        model.set_params(&read_params(p)?)?;
    }
    let bytes = fs::read(input).map_err(|source| Error::Path {
        path: input.display().to_string(),
        source,
    })?;
    let field = ComplexField::from_binary(&bytes)?;
    let (g, c) = (field.grid(), model.grid());
    if g != c {
        return Err(Error::InvalidArgument(format!(
            "{} holds a {}x{} field (dx {}, wavelength {}) but the config grid is {}x{} (dx {}, wavelength {})",
            input.display(),
            g.n(),
            g.n(),
            g.dx(),
            g.wavelength(),
            c.n(),
            c.n(),
            c.dx(),
            c.wavelength()
        )));
    }
    let result = ComplexField::new(*c, model.propagate_field(field.values())?)?;
    let mut buf = Vec::new();
    result.write_binary(&mut buf)?;
    write_file(output, &buf)?;
    let intensity = result.intensity();
    let peak = intensity.iter().cloned().fold(0.0, f64::max);
    let img: Vec<u8> = intensity
        .iter()
        .map(|&v| if peak > 0.0 { (v / peak * 255.0).round() as u8 } else { 0 })
        .collect();
    let pgm = output.with_extension("pgm");
    write_pgm(&pgm, c.n(), c.n(), &img)?;
    writeln!(out, "energy in {} out {}", field.energy(), result.energy())?;
    writeln!(out, "wrote {} and {}", output.display(), pgm.display())?;
    Ok(0)
}

/// Runs the gradient check on the first training samples; exit code 0 iff
/// the maximum relative error is below [`GRADCHECK_TOLERANCE`].
pub fn cmd_gradcheck(config: &Path, seed: Option<u64>, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(config, seed)?;
    let n = cfg.grid.n();
    if n > GRADCHECK_SIZE_LIMIT {
        return Err(Error::SizeLimit {
            what: "gradient check grid",
            n,
            limit: GRADCHECK_SIZE_LIMIT,
        });
    }
    let model = cfg.build_model()?;
    let (train_set, _) = cfg.load_data()?;
    let indices: Vec<usize> = (0..train_set.len().min(GRADCHECK_SAMPLES)).collect();
    let rho = rho_schedule(0, &cfg.train.objective.regularizer);
    let report = gradient_check(&model, &train_set, &indices, &cfg.train.objective, rho)?;
    for (id, e) in &report.per_block {
        writeln!(out, "block {id}: relative error {e:.3e}")?;
    }
    for id in &report.exempt {
        writeln!(out, "block {id}: exempt (straight-through surrogate gradient)")?;
    }
    writeln!(out, "max elementwise relative error {:.3e}", report.max_elementwise_error)?;
    writeln!(out, "max relative error {:.3e}", report.max_rel_error)?;
    let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
    writeln!(out, "{} (tolerance {GRADCHECK_TOLERANCE:e})", if pass { "PASS" } else { "FAIL" })?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchReport {
    pub n: usize,
    pub pad_factor: usize,
    pub direct_elements: u128,
    pub as_elements: u128,
    /// `N⁴ / (wN)²`.
    pub ratio: f64,
    /// Seconds per angular-spectrum propagation at `n`.
    pub as_seconds: f64,
    pub direct_n: usize,
    /// Seconds per direct propagation at `direct_n`.
    pub direct_seconds: f64,
    /// Direct time scaled to `n` by the `N⁴` law.
    pub direct_extrapolated_seconds: f64,
}

fn time_per_call(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let t = Instant::now();
    for _ in 0..reps {
        f()?;
    }
    Ok(t.elapsed().as_secs_f64() / reps as f64)
}

fn bench_field(n: usize) -> Result<ComplexField> {
    let grid = Grid::new(n, 1.0, 1.0)?;
    let c = n as f64 / 2.0;
    let s = n as f64 / 8.0;
    ComplexField::from_fn(grid, |i, j| {
        let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
        C64::new((-r2 / (2.0 * s * s)).exp(), 0.0)
    })
}

/// Working-set accounting and timing of both propagation methods.
pub fn run_bench(n: usize, w: usize, reps: usize, direct_n: usize) -> Result<BenchReport> {
    if n == 0 || w == 0 || reps == 0 {
        return Err(Error::InvalidArgument("n, w and reps must be >= 1".into()));
    }
    if direct_n == 0 || direct_n > DIRECT_SIZE_LIMIT {
        return Err(Error::SizeLimit {
            what: "direct propagation",
            n: direct_n,
            limit: DIRECT_SIZE_LIMIT,
        });
    }
    let z = 50.0;
    let direct_elements = working_set_elements(Method::Direct, n, 1);
    let as_elements = working_set_elements(Method::AngularSpectrum, n, w);
    let field = bench_field(n)?;
    let seg = Segment::new(z, Method::AngularSpectrum, w)?;
    let as_seconds = time_per_call(reps, || propagate_as(&field, &seg).map(|_| ()))?;
    let small = bench_field(direct_n)?;
    let dseg = Segment::direct(z)?;
    let direct_seconds = time_per_call(reps, || propagate_direct(&small, &dseg).map(|_| ()))?;
    Ok(BenchReport {
        n,
        pad_factor: w,
        direct_elements,
        as_elements,
        ratio: direct_elements as f64 / as_elements as f64,
        as_seconds,
        direct_n,
        direct_seconds,
        direct_extrapolated_seconds: direct_seconds * (n as f64 / direct_n as f64).powi(4),
    })
}

fn format_ratio(num: u128, den: u128) -> String {
    if num % den == 0 {
        (num / den).to_string()
    } else {
        format!("{}", num as f64 / den as f64)
    }
}

pub fn cmd_bench(n: usize, w: usize, reps: usize, direct_n: usize, out: &mut dyn Write) -> Result<BenchReport> {
    let r = run_bench(n, w, reps, direct_n)?;
    writeln!(out, "n = {n}, w = {w}, repetitions = {reps}")?;
    writeln!(out, "direct working set N^4 = {}", r.direct_elements)?;
    writeln!(out, "angular spectrum working set (wN)^2 = {}", r.as_elements)?;
    writeln!(out, "memory ratio = {}", format_ratio(r.direct_elements, r.as_elements))?;
    writeln!(out, "angular spectrum time at n = {n}: {:.6e} s", r.as_seconds)?;
    writeln!(out, "direct time at n = {}: {:.6e} s", r.direct_n, r.direct_seconds)?;
    writeln!(out, "direct time extrapolated to n = {n}: {:.6e} s", r.direct_extrapolated_seconds)?;
    writeln!(out, "speedup = {:.3e}", r.direct_extrapolated_seconds / r.as_seconds)?;
    Ok(r)
}

pub fn cmd_export_masks(config: &Path, params: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(config, None)?;
    let mut model = cfg.build_model()?;
    if let Some(p) = params {
        model.set_params(&read_params(p)?)?;
    }
    for path in export_masks(&model, dir)? {
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(0)
}
