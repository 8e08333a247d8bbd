//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Set `WAVECODER_ACCEPTANCE=1,3,9` to run a subset.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecoder::autodiff::Tape;
use wavecoder::cli::{cmd_bench, cmd_train};
use wavecoder::config::ExperimentConfig;
use wavecoder::data::{load_idx_dataset, Dataset, Target};
use wavecoder::elements::{BinaryMask, BinaryMode, CodedElement, PhaseMask};
use wavecoder::fft::centered_idft2;
use wavecoder::field::{plane_wave, ComplexField, Grid};
use wavecoder::model::{detector_grid, default_detectors, Layer, Model, Readout};
use wavecoder::objective::{gradient_check, DecoderPenalty, ObjectiveConfig};
use wavecoder::propagation::{propagate_as, propagate_direct, Method, Segment};
use wavecoder::regularizers::{reg_binary, reg_correlation, reg_shots, reg_transmittance, RegularizerConfig, WeightNorm};
use wavecoder::sensing::materialize_sensing_matrix;
use wavecoder::train::{train, Metrics, TrainConfig};
use wavecoder::C64;

type Outcome = Result<String, String>;

/// Frozen bound on the direct vs angular-spectrum disagreement; the first
/// verified build measured a worst case of 3.6e-2 over these 20 fields.
const DIRECT_AS_TOLERANCE: f64 = 5e-2;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel_l2(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn plane_wave_eigenfunction() -> Outcome {
    let (n, wavelength) = (64, 1.0);
    let dx = 0.6 * wavelength;
    let grid = Grid::new(n, dx, wavelength).map_err(err)?;
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let half = (n / 2) as i64;
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 50 {
        let (mx, my) = (r.gen_range(-half..half), r.gen_range(-half..half));
        let (fx, fy) = (mx as f64 / (n as f64 * dx), my as f64 / (n as f64 * dx));
        let radicand = 1.0 / (wavelength * wavelength) - fx * fx - fy * fy;
        if radicand < 0.0 {
            continue;
        }
        let z = r.gen_range(1.0..200.0) * wavelength;
        let f = plane_wave(&grid, fx, fy).map_err(err)?;
        let out = propagate_as(&f, &Segment::new(z, Method::AngularSpectrum, 1).map_err(err)?).map_err(err)?;
        let factor = C64::from_polar(1.0, 2.0 * PI * z * radicand.sqrt());
        for (a, b) in out.values().iter().zip(f.values()) {
            worst = worst.max((a - b * factor).norm() / b.norm());
        }
        tested += 1;
    }
    check(worst <= 1e-10, format!("50 frequencies, max relative error {worst:.2e} (bound 1e-10)"))
}

fn band_limited(grid: Grid, cutoff: f64, r: &mut ChaCha8Rng) -> ComplexField {
    let n = grid.n();
    let fg = grid.frequency_grid(1);
    let mut spec = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let (fy, fx) = (fg.freq(i), fg.freq(j));
            if (fx * fx + fy * fy).sqrt() * grid.dx() <= cutoff {
                spec[i * n + j] = C64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            }
        }
    }
    ComplexField::new(grid, centered_idft2(&spec, n)).expect("n x n spectrum")
}

fn direct_vs_as() -> Outcome {
    let wavelength = 1.0;
    let grid = Grid::new(32, wavelength, wavelength).map_err(err)?;
    let z = 50.0 * wavelength;
    let as_seg = Segment::new(z, Method::AngularSpectrum, 4).map_err(err)?;
    let direct_seg = Segment::direct(z).map_err(err)?;
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = band_limited(grid, 0.25, &mut r);
        let a = propagate_as(&f, &as_seg).map_err(err)?;
        let d = propagate_direct(&f, &direct_seg).map_err(err)?;
        worst = worst.max(rel_l2(d.values(), a.values()));
    }
    check(
        worst < DIRECT_AS_TOLERANCE,
        format!("20 fields, worst relative L2 {worst:.3e} (frozen bound {DIRECT_AS_TOLERANCE:e})"),
    )
}

fn random_images(r: &mut ChaCha8Rng, count: usize, n: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..n * n).map(|_| r.gen_range(0.0..1.0)).collect()).collect()
}

fn gradient_fidelity() -> Outcome {
    let n = 8;
    let grid = Grid::new(n, 1e-6, 0.5e-6).map_err(err)?;
    let seg = Segment::new(4e-6, Method::AngularSpectrum, 2).map_err(err)?;
    let mut r = ChaCha8Rng::seed_from_u64(3);

    let psi = (0..2).map(|_| (0..n * n).map(|_| r.gen_range(0.0..2.0 * PI)).collect()).collect();
    let readout = Readout::DetectorRegions {
        regions: detector_grid(n, 2, 2, 2).map_err(err)?,
        gain: 5.0,
    };
    let d2nn = Model::d2nn(grid, 2, seg, seg, seg, readout, psi).map_err(err)?;
    let images = random_images(&mut r, 4, n);
    let labels = (0..4).map(|k| Target::Label(k % 4)).collect();
    let data = Dataset::new(n, images, labels).map_err(err)?;
    let a = gradient_check(&d2nn, &data, &[0, 1, 2, 3], &ObjectiveConfig::plain(), 0.0).map_err(err)?;

    let mask = BinaryMask::new(n, (0..n * n).map(|_| r.gen_range(-2.0..2.0)).collect()).map_err(err)?;
    let weights = (0..n * n * n * n).map(|_| r.gen_range(-0.2..0.2)).collect();
    let e2e = Model::new(
        grid,
        seg,
        vec![Layer {
            element: CodedElement::Binary {
                mask,
                mode: BinaryMode::Soft,
            },
            segment: Segment::identity(),
        }],
        seg,
        Readout::LinearDecoder { rows: n * n, weights },
    )
    .map_err(err)?;
    let images = random_images(&mut r, 3, n);
    let targets = images.iter().map(|x| Target::Image(x.clone())).collect();
    let data = Dataset::new(n, images, targets).map_err(err)?;
    let cfg = ObjectiveConfig {
        regularizer: RegularizerConfig::binary(1e-2, 1.0),
        decoder: Some(DecoderPenalty {
            sigma: 1e-3,
            norm: WeightNorm::L2,
        }),
    };
    let b = gradient_check(&e2e, &data, &[0, 1, 2], &cfg, 1e-2).map_err(err)?;
    check(
        a.max_rel_error < 1e-4 && b.max_rel_error < 1e-4 && a.per_block.len() == 2 && b.per_block.len() == 2,
        format!(
            "D2NN max relative error {:.2e}, E2E (binary mask + decoder) {:.2e} (bound 1e-4)",
            a.max_rel_error, b.max_rel_error
        ),
    )
}

fn brute_binary(phi: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..phi.len() {
        let p = phi[i];
        let q = 1.0 - p;
        acc += p * p * q * q;
    }
    acc / phi.len() as f64
}

fn brute_correlation(shots: &[Vec<f64>]) -> f64 {
    let n = shots[0].len();
    let mut acc = 0.0;
    for l in 0..n {
        let mut prod = 1.0;
        for s in shots {
            prod *= s[l];
        }
        acc += prod;
    }
    acc / n as f64
}

fn brute_transmittance(phi: &[f64], target: f64) -> f64 {
    let mut sum = 0.0;
    for v in phi {
        sum += v;
    }
    let d = sum / phi.len() as f64 - target;
    d * d
}

fn brute_shots(shots: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for s in shots {
        let mut sq = 0.0;
        for v in s {
            sq += v * v;
        }
        total += sq.sqrt();
    }
    total
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-14 * b.abs().max(1.0)
}

fn regularizer_exactness() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    for trial in 0..100 {
        let len = r.gen_range(1..64);
        let shots_n = r.gen_range(2..5);
        let shots: Vec<Vec<f64>> = (0..shots_n).map(|_| (0..len).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = shots.iter().map(|s| s.as_slice()).collect();
        let target = r.gen_range(0.0..1.0);
        let pairs = [
            ("binary", reg_binary(&shots[0]), brute_binary(&shots[0])),
            ("correlation", reg_correlation(&refs).map_err(err)?, brute_correlation(&shots)),
            ("transmittance", reg_transmittance(&shots[0], target).map_err(err)?, brute_transmittance(&shots[0], target)),
            ("shots", reg_shots(&refs).map_err(err)?, brute_shots(&shots)),
        ];
        let tape = Tape::new();
        let vars: Vec<_> = shots.iter().enumerate().map(|(k, s)| tape.param(k, s.clone())).collect();
        let taped = [
            tape.reg_binary(vars[0]).and_then(|v| tape.scalar(v)),
            tape.reg_correlation(&vars).and_then(|v| tape.scalar(v)),
            tape.reg_transmittance(vars[0], target).and_then(|v| tape.scalar(v)),
            tape.reg_shots(&vars).and_then(|v| tape.scalar(v)),
        ];
        for ((name, lib, brute), t) in pairs.iter().zip(taped) {
            let t = t.map_err(err)?;
            if !close(*lib, *brute) || !close(t, *brute) {
                failures.push(format!("trial {trial} {name}: {lib} / {t} vs {brute}"));
            }
        }
    }
    let mut nonzero = 0;
    for bits in 0u32..256 {
        let v: Vec<f64> = (0..8).map(|k| ((bits >> k) & 1) as f64).collect();
        if reg_binary(&v) != 0.0 {
            nonzero += 1;
        }
    }
    check(
        failures.is_empty() && nonzero == 0,
        format!(
            "400 random evaluations, {} mismatches; reg_binary nonzero on {nonzero}/256 binary vectors{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

const BINARIZATION_BASE: &str = "
grid.n = 16
grid.dx = 1e-6
grid.wavelength = 0.5e-6
model.layers = 1
model.element = binary
model.distance_in = 0
model.distance_out = 0
model.readout = decoder
model.init_scale = 1.0
model.init_seed = 5
objective.task = reconstruction
objective.rho0 = 1e-6
objective.growth = 1.3
objective.rho_max = 1e6
train.epochs = 200
train.batch_size = 32
train.learning_rate = 0.01
train.seed = 7
data.source = random
data.seed = 11
data.train_count = 64
data.test_count = 16
";

fn train_mask(extra: &str) -> Result<Vec<f64>, String> {
    let cfg = ExperimentConfig::parse(&format!("{BINARIZATION_BASE}{extra}"), Path::new(".")).map_err(err)?;
    let mut model = cfg.build_model().map_err(err)?;
    let (tr, te) = cfg.load_data().map_err(err)?;
    train(&mut model, &tr, Some(&te), &cfg.train).map_err(err)?;
    model.layers()[0]
        .element
        .soft_transmission()
        .ok_or_else(|| "layer 0 is not a binary mask".to_string())
}

fn binarization_convergence() -> Outcome {
    let soft = train_mask("objective.regularizer = binary\n")?;
    let near = soft.iter().filter(|&&v| v.min(1.0 - v) <= 0.05).count() as f64 / soft.len() as f64;
    let soft_t = train_mask(
        "objective.regularizer = binary_transmittance\nobjective.target_transmittance = 0.5\nobjective.secondary_weight = 10\n",
    )?;
    let mean = soft_t.iter().sum::<f64>() / soft_t.len() as f64;
    check(
        near >= 0.99 && (mean - 0.5).abs() < 0.01,
        format!(
            "Binary: {:.2}% of entries within 0.05 of {{0,1}} (need 99%); BinaryTransmittance: mean {mean:.4} (need |mean - 0.5| < 0.01)",
            100.0 * near
        ),
    )
}

fn mnist_dir() -> PathBuf {
    manifest().join("tests").join("data")
}

fn d2nn_classification() -> Outcome {
    let n = 64;
    let dir = mnist_dir();
    let load = |images: &str, labels: &str, count: usize| -> Result<Dataset, String> {
        let d = load_idx_dataset(&dir.join(images), &dir.join(labels), Some(count)).map_err(err)?;
        if d.len() != count {
            return Err(format!("{images} holds {} samples, need {count}", d.len()));
        }
        d.embed(n, n).map_err(err)
    };
    let train_set = load("mnist-10k-train-images-idx3-ubyte.gz", "mnist-10k-train-labels-idx1-ubyte.gz", 10_000)?;
    let test_set = load("mnist-2k-test-images-idx3-ubyte.gz", "mnist-2k-test-labels-idx1-ubyte.gz", 2_000)?;

    let grid = Grid::new(n, 0.4e-3, 0.75e-3).map_err(err)?;
    let seg = Segment::new(0.02, Method::AngularSpectrum, 2).map_err(err)?;
    let readout = Readout::DetectorRegions {
        regions: default_detectors(n).map_err(err)?,
        gain: 1.0,
    };
    let psi = vec![vec![0.0; n * n]; 3];
    let mut model = Model::d2nn(grid, 3, seg, seg, seg, readout, psi).map_err(err)?;
    if !model.layers().iter().all(|l| matches!(l.element, CodedElement::Phase(PhaseMask { .. }))) {
        return Err("layers are not phase-only".into());
    }
    let cfg = TrainConfig::new(20, 0.05, 7);
    let report = train(&mut model, &train_set, None, &cfg).map_err(err)?;
    let acc = match wavecoder::train::evaluate(&model, &test_set).map_err(err)? {
        Metrics::Accuracy(a) => a,
        other => return Err(format!("unexpected metrics {other:?}")),
    };
    let last = report.epochs.last().map_or(f64::NAN, |e| e.train_loss);
    check(
        acc >= 0.70,
        format!("test accuracy {:.2}% on 2000 digits after 20 epochs (need 70%), final train loss {last:.4}", 100.0 * acc),
    )
}

fn memory_accounting() -> Outcome {
    let mut out = Vec::new();
    let r = cmd_bench(200, 4, 3, 32, &mut out).map_err(err)?;
    let text = String::from_utf8(out).map_err(err)?;
    let printed = text.lines().any(|l| l == "memory ratio = 2500");
    let speedup = r.direct_extrapolated_seconds / r.as_seconds;
    check(
        printed && r.direct_elements == 200u128.pow(4) && r.as_elements == 800u128.pow(2) && speedup >= 10.0,
        format!(
            "ratio line printed: {printed}; AS at n=200 {:.3e} s vs direct extrapolated {:.3e} s ({speedup:.0}x, need 10x)",
            r.as_seconds, r.direct_extrapolated_seconds
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = manifest().join("examples").join("d2nn_mnist_small.cfg");
    let dir = tempfile::tempdir().map_err(err)?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        cmd_train(&cfg, Some(&out), Some(7), &mut std::io::sink()).map_err(err)?;
        reports.push(std::fs::read(out.join("report.csv")).map_err(err)?);
    }
    check(
        reports[0] == reports[1] && !reports[0].is_empty(),
        format!("two seed-7 runs, report.csv {} bytes, identical: {}", reports[0].len(), reports[0] == reports[1]),
    )
}

fn sensing_equivalence() -> Outcome {
    let n = 8;
    let grid = Grid::new(n, 1e-6, 0.5e-6).map_err(err)?;
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let seg = Segment::new(5e-6, Method::AngularSpectrum, 2).map_err(err)?;
    let layers = (0..2)
        .map(|_| {
            Ok(Layer {
                element: CodedElement::Binary {
                    mask: BinaryMask::new(n, (0..n * n).map(|_| r.gen_range(-3.0..3.0)).collect())?,
                    mode: BinaryMode::Soft,
                },
                segment: seg,
            })
        })
        .collect::<wavecoder::Result<Vec<_>>>()
        .map_err(err)?;
    let model = Model::new(grid, seg, layers, seg, Readout::IntensityImage).map_err(err)?;
    let h = materialize_sensing_matrix(&model).map_err(err)?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let u0: Vec<C64> = (0..n * n).map(|_| C64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect();
        let via_h = h.apply(&u0).map_err(err)?;
        let direct = model.propagate_field(&u0).map_err(err)?;
        worst = worst.max(rel_l2(&via_h, &direct));
    }
    let empty = Model::new(grid, Segment::identity(), vec![], Segment::identity(), Readout::IntensityImage).map_err(err)?;
    let id = materialize_sensing_matrix(&empty).map_err(err)?;
    let size = n * n;
    let exact_identity =
        (0..size).all(|i| (0..size).all(|j| id.get(i, j) == C64::new(if i == j { 1.0 } else { 0.0 }, 0.0)));
    check(
        worst <= 1e-10 && exact_identity,
        format!("20 inputs, worst relative error {worst:.2e} (bound 1e-10); identity pipeline gives H = I exactly: {exact_identity}"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "plane-wave eigenfunction", plane_wave_eigenfunction),
        (2, "direct vs angular spectrum", direct_vs_as),
        (3, "gradient fidelity", gradient_fidelity),
        (4, "regularizer exactness", regularizer_exactness),
        (5, "binarization convergence", binarization_convergence),
        (6, "desk-scale D2NN classification", d2nn_classification),
        (7, "memory/perf accounting", memory_accounting),
        (8, "determinism", determinism),
        (9, "sensing-matrix equivalence", sensing_equivalence),
    ];
    let selected: Option<Vec<u32>> = std::env::var("WAVECODER_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, f) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id} [{tag}] {name} ({secs:.1} s): {detail}");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
