//! Trainable coding elements and their realization into transmission
//! coefficients.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::autodiff::{sigmoid, ParamId, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::field::{ComplexField, Grid};
use crate::loss::softmax;
use crate::zernike::ZernikeBasis;
use crate::C64;

/// Default refractive-index contrast of a diffractive surface.
pub const DEFAULT_DELTA_N: f64 = 0.5;

/// Amplitude `a` and phase `psi` per pixel, realized as `a·exp(j·psi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMask {
    n: usize,
    pub psi: Vec<f64>,
    amplitude: Arc<Vec<f64>>,
    phase_only: bool,
}

impl PhaseMask {
    pub fn new(n: usize, psi: Vec<f64>, amplitude: Vec<f64>) -> Result<Self> {
        if psi.len() != n * n {
            return Err(shape_err(n * n, psi.len()));
        }
        if amplitude.len() != n * n {
            return Err(shape_err(n * n, amplitude.len()));
        }
        if let Some(a) = amplitude.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidArgument(format!("amplitude {a} outside [0, 1]")));
        }
        let phase_only = amplitude.iter().all(|&a| a == 1.0);
        Ok(Self {
            n,
            psi,
            amplitude: Arc::new(amplitude),
            phase_only,
        })
    }

    /// Unit amplitude everywhere.
    pub fn phase_only(n: usize, psi: Vec<f64>) -> Result<Self> {
        Self::new(n, psi, vec![1.0; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn realize(&self) -> Vec<C64> {
        self.psi
            .iter()
            .zip(self.amplitude.iter())
            .map(|(&p, &a)| C64::from_polar(a, p))
            .collect()
    }
}

/// Surface-relief element whose height is a sum of Zernike terms.
#[derive(Clone, Debug, PartialEq)]
pub struct ZernikeDoe {
    /// Surface sag per term in meters, Noll order starting at piston.
    pub coeffs: Vec<f64>,
    pub delta_n: f64,
    /// Amplitude transmitted outside the inscribed disk.
    pub outside_amplitude: f64,
}

impl ZernikeDoe {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs,
            delta_n: DEFAULT_DELTA_N,
            outside_amplitude: 0.0,
        }
    }

    pub fn basis_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn basis(&self, grid: &Grid) -> Result<ZernikeBasis> {
        ZernikeBasis::new(grid, self.coeffs.len())
    }

    /// `2π·Δn/λ`, the phase per meter of sag.
    pub fn phase_scale(&self, wavelength: f64) -> Result<f64> {
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::InvalidArgument(format!("wavelength {wavelength} must be positive")));
        }
        Ok(2.0 * PI * self.delta_n / wavelength)
    }

    pub fn aperture(&self, basis: &ZernikeBasis) -> Vec<f64> {
        basis
            .inside
            .iter()
            .map(|&inside| if inside { 1.0 } else { self.outside_amplitude })
            .collect()
    }

    pub fn height_map(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.basis(grid)?.height(&self.coeffs)
    }

    pub fn realize(&self, grid: &Grid, wavelength: f64) -> Result<Vec<C64>> {
        let basis = self.basis(grid)?;
        self.realize_with(&basis, wavelength)
    }

    pub fn realize_with(&self, basis: &ZernikeBasis, wavelength: f64) -> Result<Vec<C64>> {
        let scale = self.phase_scale(wavelength)?;
        let h = basis.height(&self.coeffs)?;
        Ok(h.iter()
            .zip(self.aperture(basis))
            .map(|(&h, a)| C64::from_polar(a, scale * h))
            .collect())
    }
}

/// Amplitude mask parametrized by unconstrained logits.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    n: usize,
    pub logits: Vec<f64>,
}

impl BinaryMask {
    pub fn new(n: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n * n {
            return Err(shape_err(n * n, logits.len()));
        }
        Ok(Self { n, logits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `sigmoid(logits)`.
    pub fn soft(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }

    /// `1` where the logit is `>= 0`, else `0`.
    pub fn hard(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| if l >= 0.0 { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryMode {
    Soft,
    /// Hard threshold with a straight-through gradient.
    Hard,
}

/// Per-pixel softmax selection over a bank of spectral filters.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorMask {
    n: usize,
    filters: usize,
    samples: usize,
    /// `n² x F` selection scores, pixel-major.
    pub weights: Vec<f64>,
    bank: Arc<Vec<f64>>,
}

impl SelectorMask {
    /// `bank` holds one row of `samples` responses per filter.
    pub fn new(n: usize, weights: Vec<f64>, bank: Vec<Vec<f64>>) -> Result<Self> {
        let filters = bank.len();
        if filters == 0 {
            return Err(Error::InvalidArgument("filter bank is empty".into()));
        }
        let samples = bank[0].len();
        if let Some(row) = bank.iter().find(|r| r.len() != samples) {
            return Err(shape_err(samples, row.len()));
        }
        if weights.len() != n * n * filters {
            return Err(shape_err(n * n * filters, weights.len()));
        }
        Ok(Self {
            n,
            filters,
            samples,
            weights,
            bank: Arc::new(bank.into_iter().flatten().collect()),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn bank(&self) -> &[f64] {
        &self.bank
    }

    /// Per-pixel response, `n² x W`, pixel-major.
    pub fn realize(&self, temperature: f64) -> Result<Vec<f64>> {
        selector_forward(&self.weights, &self.bank, self.filters, self.samples, temperature)
    }
}

/// `Σ_f softmax(x_p / τ)_f · bank[f]` for every pixel `p`.
pub fn selector_forward(x: &[f64], bank: &[f64], filters: usize, samples: usize, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    if filters == 0 || x.len() % filters != 0 || bank.len() != filters * samples {
        return Err(shape_err(filters * samples, bank.len()));
    }
    let mut out = Vec::with_capacity(x.len() / filters * samples);
    for scores in x.chunks_exact(filters) {
        let s = softmax(&scores.iter().map(|v| v / temperature).collect::<Vec<_>>());
        for l in 0..samples {
            out.push((0..filters).map(|k| s[k] * bank[k * samples + l]).sum());
        }
    }
    Ok(out)
}

/// `field ∘ phi`.
pub fn modulate(field: &ComplexField, phi: &[C64]) -> Result<ComplexField> {
    if phi.len() != field.values().len() {
        return Err(shape_err(field.values().len(), phi.len()));
    }
    let values = field.values().iter().zip(phi).map(|(u, p)| u * p).collect();
    ComplexField::new(*field.grid(), values)
}

/// Any trainable element that can sit in an optical stack.
#[derive(Clone, Debug, PartialEq)]
pub enum CodedElement {
    Phase(PhaseMask),
    Zernike(ZernikeDoe),
    Binary { mask: BinaryMask, mode: BinaryMode },
    /// Amplitude transmission of the selected filters at wavelength sample `channel`.
    Selector { mask: SelectorMask, temperature: f64, channel: usize },
}

/// Element values recorded on a tape.
pub struct RecordedElement {
    pub param: Var,
    /// Complex transmission coefficients.
    pub phi: Var,
    /// Soft transmission in `[0, 1]` for amplitude masks.
    pub soft: Option<Var>,
}

impl CodedElement {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CodedElement::Phase(_) => "phase",
            CodedElement::Zernike(_) => "zernike",
            CodedElement::Binary { .. } => "binary",
            CodedElement::Selector { .. } => "selector",
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            CodedElement::Phase(m) => &m.psi,
            CodedElement::Zernike(d) => &d.coeffs,
            CodedElement::Binary { mask, .. } => &mask.logits,
            CodedElement::Selector { mask, .. } => &mask.weights,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            CodedElement::Phase(m) => &mut m.psi,
            CodedElement::Zernike(d) => &mut d.coeffs,
            CodedElement::Binary { mask, .. } => &mut mask.logits,
            CodedElement::Selector { mask, .. } => &mut mask.weights,
        }
    }

    /// True when the parameter gradient is a straight-through surrogate.
    pub fn is_straight_through(&self) -> bool {
        matches!(
            self,
            CodedElement::Binary {
                mode: BinaryMode::Hard,
                ..
            }
        )
    }

    pub fn is_amplitude_mask(&self) -> bool {
        matches!(self, CodedElement::Binary { .. })
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let n = grid.n();
        let element_n = match self {
            CodedElement::Phase(m) => m.n(),
            CodedElement::Zernike(d) => {
                if d.coeffs.len() > crate::zernike::MAX_NOLL {
                    return Err(Error::InvalidArgument(format!(
                        "{} Zernike terms requested, at most {} are implemented",
                        d.coeffs.len(),
                        crate::zernike::MAX_NOLL
                    )));
                }
                n
            }
            CodedElement::Binary { mask, .. } => mask.n(),
            CodedElement::Selector {
                mask,
                temperature,
                channel,
            } => {
                if !(*temperature > 0.0) {
                    return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
                }
                if *channel >= mask.samples() {
                    return Err(Error::InvalidArgument(format!(
                        "channel {channel} outside {} wavelength samples",
                        mask.samples()
                    )));
                }
                mask.n()
            }
        };
        if element_n != n {
            return Err(shape_err(format!("{n}x{n} element"), format!("{element_n}x{element_n}")));
        }
        Ok(())
    }

    /// Transmission in `[0, 1]` seen by the coded-aperture regularizers.
    pub fn soft_transmission(&self) -> Option<Vec<f64>> {
        match self {
            CodedElement::Binary { mask, .. } => Some(mask.soft()),
            _ => None,
        }
    }

    /// Complex transmission coefficients; `basis` is required for Zernike elements.
    pub fn realize(&self, grid: &Grid, basis: Option<&ZernikeBasis>) -> Result<Vec<C64>> {
        match self {
            CodedElement::Phase(m) => Ok(m.realize()),
            CodedElement::Zernike(d) => match basis {
                Some(b) => d.realize_with(b, grid.wavelength()),
                None => d.realize(grid, grid.wavelength()),
            },
            CodedElement::Binary { mask, mode } => {
                let v = match mode {
                    BinaryMode::Soft => mask.soft(),
                    BinaryMode::Hard => mask.hard(),
                };
                Ok(v.into_iter().map(|a| C64::new(a, 0.0)).collect())
            }
            CodedElement::Selector {
                mask,
                temperature,
                channel,
            } => {
                let r = mask.realize(*temperature)?;
                Ok(r.chunks_exact(mask.samples())
                    .map(|p| C64::new(p[*channel], 0.0))
                    .collect())
            }
        }
    }

    /// Records the realization of this element with parameters taken from `params`.
    pub fn record(
        &self,
        tape: &Tape,
        id: ParamId,
        params: &[f64],
        grid: &Grid,
        basis: Option<&Arc<ZernikeBasis>>,
    ) -> Result<RecordedElement> {
        if params.len() != self.params().len() {
            return Err(shape_err(self.params().len(), params.len()));
        }
        let param = tape.param(id, params.to_vec());
        let (phi, soft) = match self {
            CodedElement::Phase(m) => {
                let amp = if m.phase_only { None } else { Some(m.amplitude.clone()) };
                (tape.exp_j(param, 1.0, amp)?, None)
            }
            CodedElement::Zernike(d) => {
                let owned;
                let b = match basis {
                    Some(b) => b.as_ref(),
                    None => {
                        owned = d.basis(grid)?;
                        &owned
                    }
                };
                let n2 = grid.len();
                let height = tape.linear(param, b.matrix.clone(), n2, b.count)?;
                let aperture = Arc::new(d.aperture(b));
                (tape.exp_j(height, d.phase_scale(grid.wavelength())?, Some(aperture))?, None)
            }
            CodedElement::Binary { mode, .. } => {
                let soft = tape.sigmoid(param)?;
                let amp = match mode {
                    BinaryMode::Soft => soft,
                    BinaryMode::Hard => tape.straight_through(param)?,
                };
                (tape.to_complex(amp)?, Some(soft))
            }
            CodedElement::Selector {
                mask,
                temperature,
                channel,
            } => {
                let r = tape.selector(param, mask.bank.clone(), mask.filters(), mask.samples(), *temperature)?;
                let idx: Vec<usize> = (0..grid.len()).map(|p| p * mask.samples() + channel).collect();
                let a = tape.gather(r, Arc::new(idx))?;
                (tape.to_complex(a)?, None)
            }
        };
        Ok(RecordedElement { param, phi, soft })
    }
}
