//! Training objectives, batched gradients and the finite-difference check.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::autodiff::{finite_diff_gradient, relative_error, GradientMap, ParamId, Tape, Var};
use crate::data::{Dataset, Target};
use crate::error::{shape_err, Error, Result};
use crate::model::{Model, Readout};
use crate::regularizers::{RegularizerConfig, RegularizerKind, WeightNorm};

/// `σ·‖θ‖` on the decoder weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderPenalty {
    pub sigma: f64,
    pub norm: WeightNorm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub regularizer: RegularizerConfig,
    pub decoder: Option<DecoderPenalty>,
}

impl ObjectiveConfig {
    /// Task loss only.
    pub fn plain() -> Self {
        Self {
            regularizer: RegularizerConfig::none(),
            decoder: None,
        }
    }
}

/// Loss of one recorded readout against its target.
pub fn task_loss(tape: &Tape, model: &Model, output: Var, target: &Target) -> Result<Var> {
    match target {
        Target::Label(l) => {
            if matches!(model.readout(), Readout::IntensityImage) {
                return Err(Error::InvalidArgument("labels need a detector or decoder readout".into()));
            }
            tape.softmax_xent(output, *l)
        }
        Target::Image(img) => {
            if img.len() != model.output_len() {
                return Err(shape_err(model.output_len(), img.len()));
            }
            tape.mse(output, std::sync::Arc::new(img.clone()))
        }
    }
}

/// `R_ρ` over the soft realizations of the model's amplitude masks,
/// recorded with their own parameter leaves, or `None` when inactive.
pub fn record_regularizer(tape: &Tape, model: &Model, cfg: &RegularizerConfig, rho: f64) -> Result<Option<Var>> {
    if cfg.kind == RegularizerKind::None || rho == 0.0 {
        return Ok(None);
    }
    let mut softs = Vec::new();
    for (id, layer) in model.layers().iter().enumerate() {
        if layer.element.is_amplitude_mask() {
            let rec = layer
                .element
                .record(tape, id, layer.element.params(), model.grid(), None)?;
            if let Some(s) = rec.soft {
                softs.push(s);
            }
        }
    }
    if softs.is_empty() {
        return Err(Error::Config(format!(
            "regularizer '{}' needs at least one binary mask in the model",
            cfg.kind.as_str()
        )));
    }
    if let Some(s) = cfg.shot_count {
        if s != softs.len() {
            return Err(Error::Config(format!(
                "shot count {s} does not match the {} binary masks of the model",
                softs.len()
            )));
        }
    }
    let mut binary = tape.reg_binary(softs[0])?;
    for s in &softs[1..] {
        let b = tape.reg_binary(*s)?;
        binary = tape.add(binary, b)?;
    }
    let second = match cfg.kind {
        RegularizerKind::None | RegularizerKind::Binary => None,
        RegularizerKind::BinaryCorrelation => Some(tape.reg_correlation(&softs)?),
        RegularizerKind::BinaryShots => Some(tape.reg_shots(&softs)?),
        RegularizerKind::BinaryTransmittance => {
            let tr = cfg
                .target_transmittance
                .ok_or_else(|| Error::Config("missing target transmittance".into()))?;
            let mut acc = tape.reg_transmittance(softs[0], tr)?;
            for s in &softs[1..] {
                let t = tape.reg_transmittance(*s, tr)?;
                acc = tape.add(acc, t)?;
            }
            Some(acc)
        }
    };
    let mut total = tape.scale(binary, rho)?;
    if let Some(v) = second {
        let w = tape.scale(v, rho * cfg.secondary_weight)?;
        total = tape.add(total, w)?;
    }
    Ok(Some(total))
}

/// `σ‖θ‖` recorded on its own decoder leaf.
pub fn record_decoder_penalty(tape: &Tape, model: &Model, penalty: Option<&DecoderPenalty>) -> Result<Option<Var>> {
    let (Some(p), Some(id)) = (penalty, model.decoder_id()) else {
        return Ok(None);
    };
    if p.sigma == 0.0 {
        return Ok(None);
    }
    let theta = tape.param(id, model.param(id).unwrap_or_default().to_vec());
    let norm = match p.norm {
        WeightNorm::L1 => tape.norm_l1(theta)?,
        WeightNorm::L2 => tape.norm_l2(theta)?,
    };
    tape.scale(norm, p.sigma).map(Some)
}

fn check_batch(data: &Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(bad) = indices.iter().find(|&&k| k >= data.len()) {
        return Err(Error::InvalidArgument(format!("sample {bad} outside dataset of {}", data.len())));
    }
    Ok(())
}

/// Mean task loss over the batch plus `ρ·R_ρ(φ) + σ·R_σ(θ)`, on one tape.
pub fn objective_e2e(tape: &Tape, model: &Model, data: &Dataset, indices: &[usize], cfg: &ObjectiveConfig, rho: f64) -> Result<Var> {
    check_batch(data, indices)?;
    let mut total: Option<Var> = None;
    for &k in indices {
        let rec = model.record(tape, data.input(k))?;
        let l = task_loss(tape, model, rec.output, data.target(k))?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let mut loss = tape.scale(total.expect("non-empty batch"), 1.0 / indices.len() as f64)?;
    if let Some(r) = record_regularizer(tape, model, &cfg.regularizer, rho)? {
        loss = tape.add(loss, r)?;
    }
    if let Some(d) = record_decoder_penalty(tape, model, cfg.decoder.as_ref())? {
        loss = tape.add(loss, d)?;
    }
    Ok(loss)
}

/// Mean task loss with only optical parameters trainable.
pub fn objective_d2nn(tape: &Tape, model: &Model, data: &Dataset, indices: &[usize]) -> Result<Var> {
    if model.has_decoder() {
        return Err(Error::InvalidArgument("diffractive objective with a trainable decoder".into()));
    }
    objective_e2e(tape, model, data, indices, &ObjectiveConfig::plain(), 0.0)
}

/// Objective value and parameter gradients, with one tape per sample
/// evaluated in parallel and merged in sample order.
pub fn batch_gradient(model: &Model, data: &Dataset, indices: &[usize], cfg: &ObjectiveConfig, rho: f64) -> Result<(f64, GradientMap)> {
    check_batch(data, indices)?;
    let per_sample: Vec<(f64, GradientMap)> = indices
        .par_iter()
        .map(|&k| -> Result<(f64, GradientMap)> {
            let tape = Tape::new();
            let rec = model.record(&tape, data.input(k))?;
            let l = task_loss(&tape, model, rec.output, data.target(k))?;
            let value = tape.scalar(l)?;
            Ok((value, tape.backward(l)?.into_params()))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / indices.len() as f64;
    let mut grads = GradientMap::default();
    let mut loss = 0.0;
    for (v, g) in &per_sample {
        loss += v;
        grads.accumulate(g, scale);
    }
    loss *= scale;

    let tape = Tape::new();
    let reg = record_regularizer(&tape, model, &cfg.regularizer, rho)?;
    let dec = record_decoder_penalty(&tape, model, cfg.decoder.as_ref())?;
    for term in [reg, dec].into_iter().flatten() {
        loss += tape.scalar(term)?;
        grads.accumulate(&tape.backward(term)?.into_params(), 1.0);
    }
    Ok((loss, grads))
}

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-block error `max|a - n| / max(max|a|, max|n|, 1e-12)`.
    pub max_rel_error: f64,
    /// Largest per-coordinate error `|a - n| / max(|a|, |n|, 1e-12)`.
    pub max_elementwise_error: f64,
    pub per_block: Vec<(ParamId, f64)>,
    /// Straight-through blocks, whose analytic gradient is a surrogate.
    pub exempt: Vec<ParamId>,
}

/// Step used by [`gradient_check`].
pub const GRADCHECK_STEP: f64 = 1e-6;

/// Checks the gradient of [`objective_e2e`] at the model's current
/// parameters against central differences with step `1e-6`.
pub fn gradient_check(model: &Model, data: &Dataset, indices: &[usize], cfg: &ObjectiveConfig, rho: f64) -> Result<GradCheckReport> {
    let tape = Tape::new();
    let loss = objective_e2e(&tape, model, data, indices, cfg, rho)?;
    let analytic = tape.backward(loss)?.into_params();
    let exempt = model.straight_through_ids();
    let base: BTreeMap<ParamId, Vec<f64>> = model.params();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_elementwise_error: 0.0,
        per_block: Vec::new(),
        exempt: exempt.clone(),
    };
    let mut probe = model.clone();
    for (id, values) in &base {
        if exempt.contains(id) {
            continue;
        }
        let a = analytic.get(*id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; values.len()]);
        let mut failure = None;
        let numeric = finite_diff_gradient(
            |p| {
                probe.param_mut(*id).expect("known block").copy_from_slice(p);
                let t = Tape::new();
                match objective_e2e(&t, &probe, data, indices, cfg, rho).and_then(|l| t.scalar(l)) {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            values,
            GRADCHECK_STEP,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        probe.param_mut(*id).expect("known block").copy_from_slice(values);
        let block = relative_error(&a, &numeric);
        for (x, y) in a.iter().zip(&numeric) {
            let e = (x - y).abs() / x.abs().max(y.abs()).max(1e-12);
            report.max_elementwise_error = report.max_elementwise_error.max(e);
        }
        report.max_rel_error = report.max_rel_error.max(block);
        report.per_block.push((*id, block));
    }
    Ok(report)
}
