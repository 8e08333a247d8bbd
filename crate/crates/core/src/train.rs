//! Mini-batch training loop and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::ParamId;
use crate::data::{Dataset, Target};
use crate::error::{Error, Result};
use crate::loss::{argmax, mse, psnr};
use crate::model::Model;
use crate::objective::{batch_gradient, ObjectiveConfig};
use crate::optim::Adam;
use crate::regularizers::rho_schedule;

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    /// Keep a copy of the element parameters every this many epochs.
    pub snapshot_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate,
            seed,
            objective: ObjectiveConfig::plain(),
            snapshot_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::Config("snapshot interval must be >= 1".into()));
        }
        self.objective.regularizer.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metrics {
    Accuracy(f64),
    /// Mean per-sample MSE and PSNR; PSNR is `+inf` when every prediction is exact.
    Imaging { mse: f64, psnr: f64 },
}

impl Metrics {
    /// Accuracy, or PSNR for imaging tasks.
    pub fn headline(&self) -> f64 {
        match self {
            Metrics::Accuracy(a) => *a,
            Metrics::Imaging { psnr, .. } => *psnr,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSnapshot {
    pub epoch: usize,
    pub params: BTreeMap<ParamId, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    pub final_metrics: Option<Metrics>,
    pub snapshots: Vec<MaskSnapshot>,
}

fn format_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "exact".to_string()
    } else {
        format!("{v}")
    }
}

impl TrainingReport {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// `epoch,train_loss,val_metric,rho`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric,rho\n");
        for e in &self.epochs {
            let val = e.val_metric.map(format_metric).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, val, e.rho);
        }
        out
    }
}

fn optical_params(model: &Model) -> BTreeMap<ParamId, Vec<f64>> {
    let mut p = model.params();
    if let Some(id) = model.decoder_id() {
        p.remove(&id);
    }
    p
}

/// Runs `config.epochs` epochs of shuffled mini-batches with Adam.
///
/// The shuffle order derives from `config.seed` alone, and per-sample
/// gradients are merged in a fixed order, so results do not depend on the
/// number of worker threads.
pub fn train(model: &mut Model, train_set: &Dataset, val_set: Option<&Dataset>, config: &TrainConfig) -> Result<TrainingReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainingReport {
        epochs: Vec::with_capacity(config.epochs),
        final_metrics: None,
        snapshots: Vec::new(),
    };
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let rho = rho_schedule(epoch, &config.objective.regularizer);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradient(model, train_set, batch, &config.objective, rho)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let mut params = model.params();
            adam.step(&mut params, &grads)?;
            model.set_params(&params)?;
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let val_metric = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate(model, v)?.headline()),
            _ => None,
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_metric,
            rho,
        });
        if let Some(every) = config.snapshot_every {
            if (epoch + 1) % every == 0 {
                report.snapshots.push(MaskSnapshot {
                    epoch,
                    params: optical_params(model),
                });
            }
        }
    }
    if let Some(v) = val_set.filter(|v| !v.is_empty()) {
        report.final_metrics = Some(evaluate(model, v)?);
    }
    Ok(report)
}

/// Accuracy for labelled data, mean MSE/PSNR for image targets.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outputs: Vec<Vec<f64>> = data
        .inputs()
        .par_iter()
        .map(|x| model.forward(x))
        .collect::<Result<_>>()?;
    if let Some(labels) = data.labels() {
        let predicted: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
        return Ok(Metrics::Accuracy(accuracy(&predicted, &labels)));
    }
    let mut mse_sum = 0.0;
    let mut psnr_sum = 0.0;
    for (o, t) in outputs.iter().zip(data.targets()) {
        let Target::Image(t) = t else {
            return Err(Error::InvalidArgument("dataset mixes labels and images".into()));
        };
        mse_sum += mse(o, t)?;
        psnr_sum += psnr(o, t)?;
    }
    let k = data.len() as f64;
    Ok(Metrics::Imaging {
        mse: mse_sum / k,
        psnr: psnr_sum / k,
    })
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(predicted: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        if p < classes && l < classes {
            m[l][p] += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Region;
    use crate::elements::{BinaryMask, BinaryMode, CodedElement};
    use crate::field::Grid;
    use crate::model::{Layer, Readout};
    use crate::propagation::Segment;
    use rand::Rng;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 1.0, 1.0).unwrap()
    }

    fn toy_model(n: usize, seed: u64) -> Model {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..n * n).map(|_| r.gen_range(-0.5..0.5)).collect();
        let weights = (0..n * n * n * n).map(|_| r.gen_range(-0.1..0.1)).collect();
        Model::new(
            grid(n),
            Segment::identity(),
            vec![Layer {
                element: CodedElement::Binary {
                    mask: BinaryMask::new(n, logits).unwrap(),
                    mode: BinaryMode::Soft,
                },
                segment: Segment::identity(),
            }],
            Segment::identity(),
            Readout::LinearDecoder {
                rows: n * n,
                weights,
            },
        )
        .unwrap()
    }

    fn toy_data(n: usize, count: usize, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Vec<f64>> = (0..count).map(|_| (0..n * n).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
        let targets = inputs.iter().map(|x| Target::Image(x.clone())).collect();
        Dataset::new(n, inputs, targets).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut model = toy_model(3, 1);
        let before = model.params();
        let data = toy_data(3, 10, 2);
        let mut cfg = TrainConfig::new(3, 0.0, 7);
        cfg.batch_size = 4;
        train(&mut model, &data, None, &cfg).unwrap();
        assert_eq!(model.params(), before);
    }

    #[test]
    fn same_seed_same_curve() {
        let data = toy_data(3, 12, 3);
        let mut cfg = TrainConfig::new(4, 0.01, 11);
        cfg.batch_size = 5;
        let run = || {
            let mut m = toy_model(3, 4);
            train(&mut m, &data, Some(&data), &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.epochs.len(), 4);
    }

    #[test]
    fn loss_decreases_on_toy_problem() {
        let data = toy_data(3, 16, 5);
        let mut cfg = TrainConfig::new(5, 0.02, 1);
        cfg.batch_size = 4;
        let mut m = toy_model(3, 6);
        let rep = train(&mut m, &data, None, &cfg).unwrap();
        let c = rep.loss_curve();
        // Two-epoch moving average.
        let smooth: Vec<f64> = c.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        assert!(smooth.windows(2).all(|w| w[1] <= w[0]), "{c:?}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut m = toy_model(2, 1);
        let empty = Dataset::new(2, vec![], vec![]).unwrap();
        assert!(matches!(train(&mut m, &empty, None, &TrainConfig::new(1, 0.1, 0)), Err(Error::EmptyDataset)));
        assert!(matches!(evaluate(&m, &empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut m = toy_model(2, 1);
        m.param_mut(1).unwrap()[0] = f64::INFINITY;
        let data = toy_data(2, 2, 1);
        match train(&mut m, &data, None, &TrainConfig::new(2, 0.1, 0)) {
            Err(Error::NonFiniteLoss { epoch: 0, step: 0 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_classifier_accuracy() {
        // A single detector region always wins the argmax with index 0.
        let n = 4;
        let model = Model::new(
            grid(n),
            Segment::identity(),
            vec![],
            Segment::identity(),
            Readout::DetectorRegions {
                regions: vec![Region {
                    row0: 0,
                    col0: 0,
                    rows: n,
                    cols: n,
                }],
                gain: 1.0,
            },
        )
        .unwrap();
        let inputs = (0..20).map(|k| vec![k as f64 / 20.0; n * n]).collect();
        let targets = (0..20).map(|k| Target::Label(k % 10)).collect();
        let data = Dataset::new(n, inputs, targets).unwrap();
        assert_eq!(evaluate(&model, &data).unwrap(), Metrics::Accuracy(0.1));
    }

    #[test]
    fn accuracy_is_confusion_trace() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<usize> = (0..20).map(|_| r.gen_range(0..4)).collect();
        let predicted: Vec<usize> = labels
            .iter()
            .map(|&l| if r.gen_bool(0.6) { l } else { r.gen_range(0..4) })
            .collect();
        let m = confusion_matrix(&predicted, &labels, 4);
        let trace: usize = (0..4).map(|k| m[k][k]).sum();
        assert_eq!(accuracy(&predicted, &labels), trace as f64 / 20.0);
    }

    #[test]
    fn exact_imaging_reports_infinite_psnr() {
        let n = 3;
        let model = Model::new(grid(n), Segment::identity(), vec![], Segment::identity(), Readout::IntensityImage).unwrap();
        let data = toy_data(n, 3, 1);
        match evaluate(&model, &data).unwrap() {
            Metrics::Imaging { mse, psnr } => {
                assert!(mse < 1e-30);
                assert!(psnr > 250.0 || psnr == f64::INFINITY);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(format_metric(f64::INFINITY), "exact");
    }
}
