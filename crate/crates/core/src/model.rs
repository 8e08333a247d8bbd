//! Optical stacks: input encoding, propagation/modulation layers, intensity
//! detection and readout.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::{ParamId, Region, Tape, Tensor, Var};
use crate::elements::{CodedElement, PhaseMask, RecordedElement};
use crate::error::{shape_err, Error, Result};
use crate::field::{ComplexField, Grid};
use crate::propagation::{Propagator, Segment};
use crate::zernike::ZernikeBasis;
use crate::C64;

/// One coding element followed by the free-space segment behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub element: CodedElement,
    pub segment: Segment,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Readout {
    /// `gain · Σ intensity` over each region, one score per class.
    DetectorRegions { regions: Vec<Region>, gain: f64 },
    IntensityImage,
    /// Trainable `rows x n²` matrix applied to the vectorized intensity.
    LinearDecoder { rows: usize, weights: Vec<f64> },
}

/// How an input image enters the optical field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    /// `U⁰ = √image`, zero phase.
    Amplitude,
    /// `U⁰ = exp(j·π·image)`, unit amplitude.
    Phase,
}

impl Encoding {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "amplitude" => Ok(Self::Amplitude),
            "phase" => Ok(Self::Phase),
            other => Err(Error::Config(format!("unknown encoding '{other}'"))),
        }
    }
}

/// `n_rows x n_cols` equal rectangles tiling a centered block of the
/// `n x n` plane, separated by one-cell gaps of size `cell/2`.
pub fn detector_grid(n: usize, n_rows: usize, n_cols: usize, cell: usize) -> Result<Vec<Region>> {
    let gap = (cell / 2).max(1);
    let span_w = n_cols * cell + (n_cols - 1) * gap;
    let span_h = n_rows * cell + (n_rows - 1) * gap;
    if cell == 0 || span_w > n || span_h > n {
        return Err(Error::InvalidArgument(format!(
            "{n_rows}x{n_cols} detectors of size {cell} do not fit a {n}x{n} plane"
        )));
    }
    let (r0, c0) = ((n - span_h) / 2, (n - span_w) / 2);
    Ok((0..n_rows)
        .flat_map(|r| {
            (0..n_cols).map(move |c| Region {
                row0: r0 + r * (cell + gap),
                col0: c0 + c * (cell + gap),
                rows: cell,
                cols: cell,
            })
        })
        .collect())
}

/// Default classifier layout: ten square detectors in two rows of five.
pub fn default_detectors(n: usize) -> Result<Vec<Region>> {
    let cell = (2 * n / 15).max(1);
    detector_grid(n, 2, 5, cell)
}

/// Optical stack with cached propagators.
#[derive(Clone, Debug)]
pub struct Model {
    grid: Grid,
    input: Segment,
    layers: Vec<Layer>,
    output: Segment,
    readout: Readout,
    encoding: Encoding,
    input_prop: Arc<Propagator>,
    layer_props: Vec<Arc<Propagator>>,
    output_prop: Arc<Propagator>,
    bases: Vec<Option<Arc<ZernikeBasis>>>,
}

/// Forward pass recorded on a tape.
pub struct RecordedForward {
    pub output: Var,
    pub field: Var,
    pub elements: Vec<RecordedElement>,
    pub decoder: Option<Var>,
}

impl Model {
    pub fn new(grid: Grid, input: Segment, layers: Vec<Layer>, output: Segment, readout: Readout) -> Result<Self> {
        let n2 = grid.len();
        for layer in &layers {
            layer.element.validate(&grid)?;
        }
        match &readout {
            Readout::DetectorRegions { regions, gain } => {
                if regions.is_empty() {
                    return Err(Error::InvalidArgument("no detector regions".into()));
                }
                if !(gain.is_finite() && *gain > 0.0) {
                    return Err(Error::InvalidArgument(format!("detector gain {gain} must be positive")));
                }
                for (k, r) in regions.iter().enumerate() {
                    if r.rows == 0 || r.cols == 0 || r.row0 + r.rows > grid.n() || r.col0 + r.cols > grid.n() {
                        return Err(Error::InvalidArgument(format!("detector region {k} leaves the grid")));
                    }
                    if regions[..k].iter().any(|o| o.overlaps(r)) {
                        return Err(Error::InvalidArgument(format!("detector region {k} overlaps another")));
                    }
                }
            }
            Readout::IntensityImage => {}
            Readout::LinearDecoder { rows, weights } => {
                if weights.len() != rows * n2 {
                    return Err(shape_err(rows * n2, weights.len()));
                }
            }
        }
        let input_prop = Arc::new(Propagator::new(&grid, &input)?);
        let output_prop = Arc::new(Propagator::new(&grid, &output)?);
        let layer_props = layers
            .iter()
            .map(|l| Propagator::new(&grid, &l.segment).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let bases = layers
            .iter()
            .map(|l| match &l.element {
                CodedElement::Zernike(d) => d.basis(&grid).map(|b| Some(Arc::new(b))),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            input,
            layers,
            output,
            readout,
            encoding: Encoding::Amplitude,
            input_prop,
            layer_props,
            output_prop,
            bases,
        })
    }

    /// Phase-only diffractive network: `d_in`, then `count` layers spaced
    /// `d_layer` apart, then `d_out` to the detector.
    pub fn d2nn(grid: Grid, count: usize, d_in: Segment, d_layer: Segment, d_out: Segment, readout: Readout, psi: Vec<Vec<f64>>) -> Result<Self> {
        if psi.len() != count {
            return Err(shape_err(count, psi.len()));
        }
        let layers = psi
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                Ok(Layer {
                    element: CodedElement::Phase(PhaseMask::phase_only(grid.n(), p)?),
                    segment: if k + 1 < count { d_layer } else { Segment::identity() },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, d_in, layers, d_out, readout)
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn input_segment(&self) -> &Segment {
        &self.input
    }

    pub fn output_segment(&self) -> &Segment {
        &self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn readout(&self) -> &Readout {
        &self.readout
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    /// Parameter id of the decoder weights, if the readout has any.
    pub fn decoder_id(&self) -> Option<ParamId> {
        matches!(self.readout, Readout::LinearDecoder { .. }).then_some(self.layers.len())
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder_id().is_some()
    }

    pub fn output_len(&self) -> usize {
        match &self.readout {
            Readout::DetectorRegions { regions, .. } => regions.len(),
            Readout::IntensityImage => self.grid.len(),
            Readout::LinearDecoder { rows, .. } => *rows,
        }
    }

    /// All trainable blocks, keyed by parameter id.
    pub fn params(&self) -> BTreeMap<ParamId, Vec<f64>> {
        let mut map: BTreeMap<ParamId, Vec<f64>> = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| (k, l.element.params().to_vec()))
            .collect();
        if let (Some(id), Readout::LinearDecoder { weights, .. }) = (self.decoder_id(), &self.readout) {
            map.insert(id, weights.clone());
        }
        map
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        if id < self.layers.len() {
            return Some(self.layers[id].element.params());
        }
        match (&self.readout, self.decoder_id()) {
            (Readout::LinearDecoder { weights, .. }, Some(d)) if d == id => Some(weights),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        let decoder = self.decoder_id();
        if id < self.layers.len() {
            return Some(self.layers[id].element.params_mut());
        }
        match &mut self.readout {
            Readout::LinearDecoder { weights, .. } if decoder == Some(id) => Some(weights),
            _ => None,
        }
    }

    pub fn set_params(&mut self, params: &BTreeMap<ParamId, Vec<f64>>) -> Result<()> {
        for (id, values) in params {
            let slot = self
                .param_mut(*id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter block {id}")))?;
            if slot.len() != values.len() {
                return Err(shape_err(slot.len(), values.len()));
            }
            slot.copy_from_slice(values);
        }
        Ok(())
    }

    /// Ids of blocks whose gradient is a straight-through surrogate.
    pub fn straight_through_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.element.is_straight_through())
            .map(|(k, _)| k)
            .collect()
    }

    pub fn encode(&self, image: &[f64]) -> Result<ComplexField> {
        if image.len() != self.grid.len() {
            return Err(shape_err(self.grid.len(), image.len()));
        }
        match self.encoding {
            Encoding::Amplitude => ComplexField::from_intensity(self.grid, image),
            Encoding::Phase => ComplexField::new(
                self.grid,
                image.iter().map(|&v| C64::from_polar(1.0, std::f64::consts::PI * v)).collect(),
            ),
        }
    }

    /// Field in the detector plane for an input field.
    pub fn propagate_field(&self, u0: &[C64]) -> Result<Vec<C64>> {
        if u0.len() != self.grid.len() {
            return Err(shape_err(self.grid.len(), u0.len()));
        }
        let mut u = self.input_prop.apply(u0);
        for (k, layer) in self.layers.iter().enumerate() {
            let phi = layer.element.realize(&self.grid, self.bases[k].as_deref())?;
            u.iter_mut().zip(&phi).for_each(|(a, p)| *a *= p);
            u = self.layer_props[k].apply(&u);
        }
        Ok(self.output_prop.apply(&u))
    }

    /// Pre-detector field for an input image.
    pub fn forward_field(&self, image: &[f64]) -> Result<ComplexField> {
        let u0 = self.encode(image)?;
        ComplexField::new(self.grid, self.propagate_field(u0.values())?)
    }

    /// Detector intensity `|U|²`.
    pub fn sense(&self, image: &[f64]) -> Result<Vec<f64>> {
        Ok(sense_intensity(&self.forward_field(image)?))
    }

    /// Readout: class scores, intensity image or decoded vector.
    pub fn forward(&self, image: &[f64]) -> Result<Vec<f64>> {
        let g = self.sense(image)?;
        Ok(self.read(&g))
    }

    fn read(&self, g: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        match &self.readout {
            Readout::DetectorRegions { regions, gain } => regions
                .iter()
                .map(|r| {
                    gain * (r.row0..r.row0 + r.rows)
                        .map(|i| g[i * n + r.col0..i * n + r.col0 + r.cols].iter().sum::<f64>())
                        .sum::<f64>()
                })
                .collect(),
            Readout::IntensityImage => g.to_vec(),
            Readout::LinearDecoder { rows, weights } => {
                let cols = g.len();
                (0..*rows)
                    .map(|r| weights[r * cols..(r + 1) * cols].iter().zip(g).map(|(w, x)| w * x).sum())
                    .collect()
            }
        }
    }

    /// Records the forward pass on `tape`; parameter `k` of the model is
    /// registered under id `k`.
    pub fn record(&self, tape: &Tape, image: &[f64]) -> Result<RecordedForward> {
        let u0 = self.encode(image)?;
        let mut u = tape.constant(Tensor::Complex(u0.into_values()));
        u = tape.propagate(u, self.input_prop.clone())?;
        let mut elements = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let rec = layer
                .element
                .record(tape, k, layer.element.params(), &self.grid, self.bases[k].as_ref())?;
            u = tape.mul(u, rec.phi)?;
            u = tape.propagate(u, self.layer_props[k].clone())?;
            elements.push(rec);
        }
        let field = tape.propagate(u, self.output_prop.clone())?;
        let g = tape.abs_sq(field)?;
        let (output, decoder) = match &self.readout {
            Readout::DetectorRegions { regions, gain } => {
                let s = tape.region_sum(g, Arc::new(regions.clone()), self.grid.n())?;
                (tape.scale(s, *gain)?, None)
            }
            Readout::IntensityImage => (g, None),
            Readout::LinearDecoder { rows, weights } => {
                let id = self.layers.len();
                let w = tape.param(id, weights.clone());
                (tape.matvec(w, g, *rows, self.grid.len())?, Some(w))
            }
        };
        Ok(RecordedForward {
            output,
            field,
            elements,
            decoder,
        })
    }
}

/// `|U|²` per pixel.
pub fn sense_intensity(field: &ComplexField) -> Vec<f64> {
    field.intensity()
}
