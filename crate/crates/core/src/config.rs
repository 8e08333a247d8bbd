//! Plain-text `key = value` experiment configuration with dotted section
//! keys and strict unknown-key rejection.
//!
//! ```text
//! # comment
//! grid.n = 64
//! train.seed = 7
//! ```
//!
//! `train.epochs`, `train.seed`, `data.train_count` and `data.test_count`
//! are mandatory. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{load_idx_dataset, Dataset, Target};
use crate::elements::{BinaryMask, BinaryMode, CodedElement, PhaseMask, SelectorMask, ZernikeDoe, DEFAULT_DELTA_N};
use crate::error::{Error, Result};
use crate::field::Grid;
use crate::model::{default_detectors, Encoding, Layer, Model, Readout};
use crate::objective::{record_regularizer, DecoderPenalty, ObjectiveConfig};
use crate::propagation::{Method, Segment, DEFAULT_PAD_FACTOR};
use crate::regularizers::{RegularizerConfig, RegularizerKind, WeightNorm, DEFAULT_RHO_MAX};
use crate::train::{TrainConfig, DEFAULT_BATCH_SIZE};

/// Raw `key = value` pairs with their line numbers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected 'key = value'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(Error::Config(format!("line {line_no}: invalid key '{k}'")));
            }
            if entries.insert(k.to_string(), (v.to_string(), line_no)).is_some() {
                return Err(Error::Config(format!("line {line_no}: duplicate key '{k}'")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn take_raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: cannot parse '{v}' for '{key}'"))),
        }
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::Config(format!("missing mandatory key '{key}'")))
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (_, line))) => Err(Error::Config(format!("line {line}: unknown key '{k}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Phase,
    Zernike,
    Binary,
    BinaryHard,
    Selector,
}

impl ElementKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "phase" => Self::Phase,
            "zernike" => Self::Zernike,
            "binary" => Self::Binary,
            "binary_hard" => Self::BinaryHard,
            "selector" => Self::Selector,
            other => return Err(Error::Config(format!("unknown element kind '{other}'"))),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Phase => "phase",
            Self::Zernike => "zernike",
            Self::Binary => "binary",
            Self::BinaryHard => "binary_hard",
            Self::Selector => "selector",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadoutKind {
    Detectors,
    Image,
    Decoder,
}

impl ReadoutKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "detectors" => Self::Detectors,
            "image" => Self::Image,
            "decoder" => Self::Decoder,
            other => return Err(Error::Config(format!("unknown readout '{other}'"))),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Detectors => "detectors",
            Self::Image => "image",
            Self::Decoder => "decoder",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification,
    Reconstruction,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Self::Classification),
            "reconstruction" => Ok(Self::Reconstruction),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Classification => "classification",
            Self::Reconstruction => "reconstruction",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// IDX image/label files.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Uniform random images drawn from `seed`, ten random labels.
    Random { side: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: usize,
    pub element: ElementKind,
    pub distance_in: f64,
    pub distance_layer: f64,
    pub distance_out: f64,
    pub method: Method,
    pub pad_factor: usize,
    pub encoding: Encoding,
    pub readout: ReadoutKind,
    pub detector_gain: f64,
    pub decoder_rows: usize,
    /// Parameters start uniform in `[0, init_scale)` (phase) or
    /// `[-init_scale, init_scale]` (logits, coefficients, weights).
    pub init_scale: f64,
    pub init_seed: u64,
    pub zernike_terms: usize,
    pub delta_n: f64,
    pub outside_amplitude: f64,
    /// Rows are filters, columns are wavelength samples.
    pub selector_bank: Vec<Vec<f64>>,
    pub selector_temperature: f64,
    pub selector_channel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub train_count: usize,
    pub test_count: usize,
    /// Inputs are resized to `image_size` and centered on the grid.
    pub image_size: usize,
}

/// A fully validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub grid: Grid,
    pub model: ModelSpec,
    pub task: Task,
    pub train: TrainConfig,
    pub data: DataSpec,
    pub output_dir: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method> {
    match s {
        "as" | "angular_spectrum" => Ok(Method::AngularSpectrum),
        "direct" => Ok(Method::Direct),
        other => Err(Error::Config(format!("unknown propagation method '{other}'"))),
    }
}

fn method_str(m: Method) -> &'static str {
    match m {
        Method::AngularSpectrum => "as",
        Method::Direct => "direct",
    }
}

fn parse_bank(s: &str) -> Result<Vec<Vec<f64>>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|row| {
            row.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("bad selector bank value '{v}'"))))
                .collect()
        })
        .collect()
}

fn bank_str(bank: &[Vec<f64>]) -> String {
    bank.iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("; ")
}

fn resolve(base: &Path, p: String) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Path {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;

        let n: usize = kv.take_or("grid.n", 200)?;
        let dx: f64 = kv.take_or("grid.dx", 0.4e-3)?;
        let wavelength: f64 = kv.take_or("grid.wavelength", 749.48e-6)?;
        let grid = Grid::new(n, dx, wavelength).map_err(|e| Error::Config(e.to_string()))?;

        let layers: usize = kv.take_or("model.layers", 5)?;
        let element = ElementKind::parse(&kv.take_or("model.element", "phase".to_string())?)?;
        let distance_layer: f64 = kv.take_or("model.distance_layer", 0.03)?;
        let distance_in: f64 = kv.take_or("model.distance_in", distance_layer)?;
        let distance_out: f64 = kv.take_or("model.distance_out", distance_layer)?;
        let method = parse_method(&kv.take_or("model.method", "as".to_string())?)?;
        let pad_factor: usize = kv.take_or("model.pad_factor", DEFAULT_PAD_FACTOR)?;
        let encoding = Encoding::parse(&kv.take_or("model.encoding", "amplitude".to_string())?)?;
        let readout = ReadoutKind::parse(&kv.take_or("model.readout", "detectors".to_string())?)?;
        let detector_gain: f64 = kv.take_or("model.detector_gain", 1.0)?;
        let decoder_rows: usize = kv.take_or("model.decoder_rows", n * n)?;
        let init_scale: f64 = kv.take_or("model.init_scale", 0.0)?;
        let init_seed: u64 = kv.take_or("model.init_seed", 0)?;
        let zernike_terms: usize = kv.take_or("model.zernike_terms", 15)?;
        let delta_n: f64 = kv.take_or("model.delta_n", DEFAULT_DELTA_N)?;
        let outside_amplitude: f64 = kv.take_or("model.outside_amplitude", 0.0)?;
        let selector_bank = parse_bank(&kv.take_or("model.selector_bank", String::new())?)?;
        let selector_temperature: f64 = kv.take_or("model.selector_temperature", 1.0)?;
        let selector_channel: usize = kv.take_or("model.selector_channel", 0)?;

        let task = Task::parse(&kv.take_or("objective.task", "classification".to_string())?)?;
        let reg_kind = RegularizerKind::parse(&kv.take_or("objective.regularizer", "none".to_string())?)?;
        let regularizer = RegularizerConfig {
            kind: reg_kind,
            rho0: kv.take_or("objective.rho0", 0.0)?,
            growth: kv.take_or("objective.growth", 1.0)?,
            rho_max: kv.take_or("objective.rho_max", DEFAULT_RHO_MAX)?,
            secondary_weight: kv.take_or("objective.secondary_weight", 1.0)?,
            target_transmittance: kv.take("objective.target_transmittance")?,
            shot_count: kv.take("objective.shot_count")?,
        };
        let sigma: f64 = kv.take_or("objective.decoder_sigma", 0.0)?;
        let norm = WeightNorm::parse(&kv.take_or("objective.decoder_norm", "l2".to_string())?)?;
        let decoder = (sigma != 0.0).then_some(DecoderPenalty { sigma, norm });

        let snapshot_every: usize = kv.take_or("train.snapshot_every", 0)?;
        let train = TrainConfig {
            epochs: kv.require("train.epochs")?,
            batch_size: kv.take_or("train.batch_size", DEFAULT_BATCH_SIZE)?,
            learning_rate: kv.take_or("train.learning_rate", 0.01)?,
            seed: kv.require("train.seed")?,
            objective: ObjectiveConfig { regularizer, decoder },
            snapshot_every: (snapshot_every > 0).then_some(snapshot_every),
        };

        let source = match kv.take_or("data.source", "idx".to_string())?.as_str() {
            "idx" => {
                let mut path = |key: &str| -> Result<PathBuf> { Ok(resolve(base, kv.require::<String>(key)?)) };
                DataSource::Idx {
                    train_images: path("data.train_images")?,
                    train_labels: path("data.train_labels")?,
                    test_images: path("data.test_images")?,
                    test_labels: path("data.test_labels")?,
                }
            }
            "random" => DataSource::Random {
                side: kv.take_or("data.random_side", n)?,
                seed: kv.require("data.seed")?,
            },
            other => return Err(Error::Config(format!("unknown data source '{other}'"))),
        };
        let data = DataSpec {
            source,
            train_count: kv.require("data.train_count")?,
            test_count: kv.require("data.test_count")?,
            image_size: kv.take_or("data.image_size", n)?,
        };
        let output_dir = kv.take::<String>("output.dir")?.map(|p| resolve(base, p));
        kv.finish()?;

        let cfg = Self {
            grid,
            model: ModelSpec {
                layers,
                element,
                distance_in,
                distance_layer,
                distance_out,
                method,
                pad_factor,
                encoding,
                readout,
                detector_gain,
                decoder_rows,
                init_scale,
                init_seed,
                zernike_terms,
                delta_n,
                outside_amplitude,
                selector_bank,
                selector_temperature,
                selector_channel,
            },
            task,
            train,
            data,
            output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching data files.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let m = &self.model;
        let n = self.grid.n();
        if self.data.train_count == 0 {
            return Err(Error::Config("data.train_count must be >= 1".into()));
        }
        if self.data.image_size == 0 || self.data.image_size > n {
            return Err(Error::Config(format!("data.image_size must be in 1..={n}")));
        }
        if let DataSource::Random { side, .. } = self.data.source {
            if side == 0 {
                return Err(Error::Config("data.random_side must be >= 1".into()));
            }
        }
        match (self.task, m.readout) {
            (Task::Classification, ReadoutKind::Image) => {
                return Err(Error::Config("classification needs a detectors or decoder readout".into()))
            }
            (Task::Reconstruction, ReadoutKind::Detectors) => {
                return Err(Error::Config("reconstruction needs an image or decoder readout".into()))
            }
            (Task::Reconstruction, ReadoutKind::Decoder) if m.decoder_rows != n * n => {
                return Err(Error::Config(format!("reconstruction decoder needs {} rows", n * n)))
            }
            _ => {}
        }
        if !(m.init_scale >= 0.0 && m.init_scale.is_finite()) {
            return Err(Error::Config("model.init_scale must be finite and >= 0".into()));
        }
        if !(m.detector_gain > 0.0 && m.detector_gain.is_finite()) {
            return Err(Error::Config("model.detector_gain must be > 0".into()));
        }
        if let Some(p) = self.train.objective.decoder {
            if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
                return Err(Error::Config("objective.decoder_sigma must be >= 0".into()));
            }
            if m.readout != ReadoutKind::Decoder {
                return Err(Error::Config("objective.decoder_sigma needs a decoder readout".into()));
            }
        }
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        let model = self.build_model().map_err(as_config)?;
        record_regularizer(&Tape::new(), &model, &self.train.objective.regularizer, 1.0).map_err(as_config)?;
        Ok(())
    }

    fn segment(&self, distance: f64) -> Result<Segment> {
        if distance == 0.0 {
            Ok(Segment::identity())
        } else {
            let pad = if self.model.method == Method::Direct { 1 } else { self.model.pad_factor };
            Segment::new(distance, self.model.method, pad)
        }
    }

    fn element(&self, rng: &mut ChaCha8Rng) -> Result<CodedElement> {
        let m = &self.model;
        let n = self.grid.n();
        let s = m.init_scale;
        let mut sym = |len: usize| -> Vec<f64> { (0..len).map(|_| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 }).collect() };
        Ok(match m.element {
            ElementKind::Phase => {
                let psi = sym(n * n).into_iter().map(|v| (v + s) / 2.0).collect();
                CodedElement::Phase(PhaseMask::phase_only(n, psi)?)
            }
            ElementKind::Zernike => CodedElement::Zernike(ZernikeDoe {
                coeffs: sym(m.zernike_terms),
                delta_n: m.delta_n,
                outside_amplitude: m.outside_amplitude,
            }),
            ElementKind::Binary | ElementKind::BinaryHard => CodedElement::Binary {
                mask: BinaryMask::new(n, sym(n * n))?,
                mode: if m.element == ElementKind::Binary { BinaryMode::Soft } else { BinaryMode::Hard },
            },
            ElementKind::Selector => {
                let filters = m.selector_bank.len();
                CodedElement::Selector {
                    mask: SelectorMask::new(n, sym(n * n * filters), m.selector_bank.clone())?,
                    temperature: m.selector_temperature,
                    channel: m.selector_channel,
                }
            }
        })
    }

    /// The initial model; parameters are drawn from `model.init_seed`.
    pub fn build_model(&self) -> Result<Model> {
        let m = &self.model;
        let n = self.grid.n();
        let mut rng = ChaCha8Rng::seed_from_u64(m.init_seed);
        let mut layers = Vec::with_capacity(m.layers);
        for k in 0..m.layers {
            layers.push(Layer {
                element: self.element(&mut rng)?,
                segment: if k + 1 < m.layers { self.segment(m.distance_layer)? } else { Segment::identity() },
            });
        }
        let readout = match m.readout {
            ReadoutKind::Detectors => Readout::DetectorRegions {
                regions: default_detectors(n)?,
                gain: m.detector_gain,
            },
            ReadoutKind::Image => Readout::IntensityImage,
            ReadoutKind::Decoder => {
                let cols = n * n;
                let weights = if m.decoder_rows == cols && m.init_scale == 0.0 {
                    (0..cols * cols).map(|k| if k % (cols + 1) == 0 { 1.0 } else { 0.0 }).collect()
                } else {
                    (0..m.decoder_rows * cols)
                        .map(|_| if m.init_scale > 0.0 { rng.gen_range(-m.init_scale..=m.init_scale) } else { 0.0 })
                        .collect()
                };
                Readout::LinearDecoder {
                    rows: m.decoder_rows,
                    weights,
                }
            }
        };
        Ok(Model::new(self.grid, self.segment(m.distance_in)?, layers, self.segment(m.distance_out)?, readout)?
            .with_encoding(m.encoding))
    }

    /// `(train, test)` embedded on the grid; reconstruction targets are
    /// the embedded inputs themselves.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        let (train, test) = match &d.source {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = load_idx_dataset(train_images, train_labels, Some(d.train_count))?;
                let test = if d.test_count > 0 {
                    load_idx_dataset(test_images, test_labels, Some(d.test_count))?
                } else {
                    train.slice(0, 0)?
                };
                (train, test)
            }
            DataSource::Random { side, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut draw = |count: usize| -> Result<Dataset> {
                    let inputs: Vec<Vec<f64>> = (0..count).map(|_| (0..side * side).map(|_| rng.gen()).collect()).collect();
                    let targets = (0..count).map(|_| Target::Label(rng.gen_range(0..10))).collect();
                    Dataset::new(*side, inputs, targets)
                };
                (draw(d.train_count)?, draw(d.test_count)?)
            }
        };
        let n = self.grid.n();
        let prepare = |ds: Dataset| -> Result<Dataset> {
            let ds = ds.embed(d.image_size, n)?;
            match self.task {
                Task::Classification => Ok(ds),
                Task::Reconstruction => {
                    let targets = ds.inputs().iter().map(|x| Target::Image(x.clone())).collect();
                    Dataset::new(n, ds.inputs().to_vec(), targets)
                }
            }
        };
        Ok((prepare(train)?, prepare(test)?))
    }

    /// Canonical text with every key spelled out; parses back to `self`.
    pub fn to_resolved_string(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let m = &self.model;
        let t = &self.train;
        let r = &t.objective.regularizer;
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("grid.n", g.n().to_string());
        kv("grid.dx", g.dx().to_string());
        kv("grid.wavelength", g.wavelength().to_string());
        kv("model.layers", m.layers.to_string());
        kv("model.element", m.element.as_str().into());
        kv("model.distance_in", m.distance_in.to_string());
        kv("model.distance_layer", m.distance_layer.to_string());
        kv("model.distance_out", m.distance_out.to_string());
        kv("model.method", method_str(m.method).into());
        kv("model.pad_factor", m.pad_factor.to_string());
        kv(
            "model.encoding",
            match m.encoding {
                Encoding::Amplitude => "amplitude",
                Encoding::Phase => "phase",
            }
            .into(),
        );
        kv("model.readout", m.readout.as_str().into());
        kv("model.detector_gain", m.detector_gain.to_string());
        kv("model.decoder_rows", m.decoder_rows.to_string());
        kv("model.init_scale", m.init_scale.to_string());
        kv("model.init_seed", m.init_seed.to_string());
        kv("model.zernike_terms", m.zernike_terms.to_string());
        kv("model.delta_n", m.delta_n.to_string());
        kv("model.outside_amplitude", m.outside_amplitude.to_string());
        kv("model.selector_bank", bank_str(&m.selector_bank));
        kv("model.selector_temperature", m.selector_temperature.to_string());
        kv("model.selector_channel", m.selector_channel.to_string());
        kv("objective.task", self.task.as_str().into());
        kv("objective.regularizer", r.kind.as_str().into());
        kv("objective.rho0", r.rho0.to_string());
        kv("objective.growth", r.growth.to_string());
        kv("objective.rho_max", r.rho_max.to_string());
        kv("objective.secondary_weight", r.secondary_weight.to_string());
        if let Some(tr) = r.target_transmittance {
            kv("objective.target_transmittance", tr.to_string());
        }
        if let Some(k) = r.shot_count {
            kv("objective.shot_count", k.to_string());
        }
        let (sigma, norm) = t.objective.decoder.map_or((0.0, WeightNorm::L2), |p| (p.sigma, p.norm));
        kv("objective.decoder_sigma", sigma.to_string());
        kv(
            "objective.decoder_norm",
            match norm {
                WeightNorm::L1 => "l1",
                WeightNorm::L2 => "l2",
            }
            .into(),
        );
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.snapshot_every", t.snapshot_every.unwrap_or(0).to_string());
        match &self.data.source {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                kv("data.source", "idx".into());
                kv("data.train_images", train_images.display().to_string());
                kv("data.train_labels", train_labels.display().to_string());
                kv("data.test_images", test_images.display().to_string());
                kv("data.test_labels", test_labels.display().to_string());
            }
            DataSource::Random { side, seed } => {
                kv("data.source", "random".into());
                kv("data.random_side", side.to_string());
                kv("data.seed", seed.to_string());
            }
        }
        kv("data.train_count", self.data.train_count.to_string());
        kv("data.test_count", self.data.test_count.to_string());
        kv("data.image_size", self.data.image_size.to_string());
        if let Some(dir) = &self.output_dir {
            kv("output.dir", dir.display().to_string());
        }
        s
    }
}
