//! Coded-aperture regularizers, decoder weight norms and the exponential
//! penalty schedule.
//!
//! All coded-aperture terms take the physical transmission values in
//! `[0, 1]`, i.e. the soft realization of a mask, never its logits.

use crate::error::{shape_err, Error, Result};

/// Default upper bound on the scheduled penalty weight.
pub const DEFAULT_RHO_MAX: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegularizerKind {
    None,
    Binary,
    /// Binary term plus inter-shot correlation.
    BinaryCorrelation,
    /// Binary term plus squared deviation from a target transmittance.
    BinaryTransmittance,
    /// Binary term plus the ℓ2,1 shot-count penalty.
    BinaryShots,
}

impl RegularizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "binary" => Self::Binary,
            "binary_correlation" => Self::BinaryCorrelation,
            "binary_transmittance" => Self::BinaryTransmittance,
            "binary_shots" => Self::BinaryShots,
            other => return Err(Error::Config(format!("unknown regularizer '{other}'"))),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Binary => "binary",
            Self::BinaryCorrelation => "binary_correlation",
            Self::BinaryTransmittance => "binary_transmittance",
            Self::BinaryShots => "binary_shots",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    pub rho0: f64,
    pub growth: f64,
    pub rho_max: f64,
    /// Weight of the second term of a composed regularizer, relative to
    /// the scheduled `rho` of the binary term.
    pub secondary_weight: f64,
    pub target_transmittance: Option<f64>,
    pub shot_count: Option<usize>,
}

impl RegularizerConfig {
    pub fn none() -> Self {
        Self {
            kind: RegularizerKind::None,
            rho0: 0.0,
            growth: 1.0,
            rho_max: DEFAULT_RHO_MAX,
            secondary_weight: 1.0,
            target_transmittance: None,
            shot_count: None,
        }
    }

    pub fn binary(rho0: f64, growth: f64) -> Self {
        Self {
            kind: RegularizerKind::Binary,
            rho0,
            growth,
            ..Self::none()
        }
    }

    pub fn binary_transmittance(rho0: f64, growth: f64, target: f64) -> Self {
        Self {
            kind: RegularizerKind::BinaryTransmittance,
            target_transmittance: Some(target),
            ..Self::binary(rho0, growth)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 >= 0.0) || !(self.growth >= 1.0) || !(self.rho_max >= 0.0) || !(self.secondary_weight >= 0.0) {
            return Err(Error::Config("regularizer needs rho0 >= 0, growth >= 1, rho_max >= 0".into()));
        }
        let needs_tr = self.kind == RegularizerKind::BinaryTransmittance;
        if needs_tr != self.target_transmittance.is_some() {
            return Err(Error::Config(
                "target transmittance is required exactly for binary_transmittance".into(),
            ));
        }
        if let Some(tr) = self.target_transmittance {
            if !(0.0..=1.0).contains(&tr) {
                return Err(Error::Config(format!("target transmittance {tr} outside [0, 1]")));
            }
        }
        let needs_s = matches!(self.kind, RegularizerKind::BinaryCorrelation | RegularizerKind::BinaryShots);
        if needs_s != self.shot_count.is_some() {
            return Err(Error::Config(
                "shot count is required exactly for binary_correlation and binary_shots".into(),
            ));
        }
        match (self.kind, self.shot_count) {
            (RegularizerKind::BinaryCorrelation, Some(s)) if s < 2 => {
                Err(Error::Config("correlation needs at least 2 shots".into()))
            }
            (_, Some(0)) => Err(Error::Config("shot count must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

/// `(1/n) Σ φ²(φ - 1)²`.
pub fn reg_binary(phi: &[f64]) -> f64 {
    if phi.is_empty() {
        return 0.0;
    }
    phi.iter().map(|&p| p * p * (p - 1.0) * (p - 1.0)).sum::<f64>() / phi.len() as f64
}

/// `(1/n) Σ_l Π_j φ_l^j` over `S >= 2` shots.
pub fn reg_correlation(shots: &[&[f64]]) -> Result<f64> {
    if shots.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 shots".into()));
    }
    let n = shots[0].len();
    if let Some(bad) = shots.iter().find(|s| s.len() != n) {
        return Err(shape_err(n, bad.len()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok((0..n).map(|l| shots.iter().map(|s| s[l]).product::<f64>()).sum::<f64>() / n as f64)
}

/// `(mean(φ) - Tr)²`.
pub fn reg_transmittance(phi: &[f64], target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!("target transmittance {target} outside [0, 1]")));
    }
    if phi.is_empty() {
        return Err(Error::InvalidArgument("transmittance of empty mask".into()));
    }
    let d = phi.iter().sum::<f64>() / phi.len() as f64 - target;
    Ok(d * d)
}

/// `Σ_j ||φ^j||₂`, the ℓ2,1 norm across shots.
pub fn reg_shots(shots: &[&[f64]]) -> Result<f64> {
    if shots.is_empty() {
        return Err(Error::InvalidArgument("shot penalty needs at least one shot".into()));
    }
    Ok(shots.iter().map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt()).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightNorm {
    L1,
    L2,
}

impl WeightNorm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            other => Err(Error::Config(format!("unknown decoder norm '{other}'"))),
        }
    }
}

pub fn reg_decoder_weights(theta: &[f64], norm: WeightNorm) -> f64 {
    match norm {
        WeightNorm::L1 => theta.iter().map(|v| v.abs()).sum(),
        WeightNorm::L2 => theta.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// `min(rho0 · growth^epoch, rho_max)`.
pub fn rho_schedule(epoch: usize, config: &RegularizerConfig) -> f64 {
    let exp = i32::try_from(epoch).unwrap_or(i32::MAX);
    (config.rho0 * config.growth.powi(exp)).min(config.rho_max)
}
