//! Linear-system views of an optical stack: point spread functions,
//! shift-invariant convolution and the explicit sensing matrix.

use crate::error::{shape_err, Error, Result};
use crate::fft;
use crate::field::point_source;
use crate::model::Model;
use crate::C64;

/// Largest grid for which the `n² x n²` sensing matrix is materialized.
pub const SENSING_MATRIX_LIMIT: usize = 16;

/// Intensity response of the optical stack to a point source at `(i, j)`,
/// normalized to unit sum.
pub fn compute_psf(model: &Model, source: (usize, usize)) -> Result<Vec<f64>> {
    if model.has_decoder() {
        return Err(Error::InvalidArgument("PSF of a model with a trainable decoder".into()));
    }
    let delta = point_source(model.grid(), source.0, source.1)?;
    let g: Vec<f64> = model
        .propagate_field(delta.values())?
        .iter()
        .map(|z| z.norm_sqr())
        .collect();
    let total: f64 = g.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("optical stack blocks the point source entirely".into()));
    }
    Ok(g.into_iter().map(|v| v / total).collect())
}

/// Circular convolution of an `n x n` image with a PSF whose origin is the
/// center pixel `(n/2, n/2)`.
///
/// Valid as an imaging model only while the PSF support stays well inside
/// the window, since energy leaving one edge wraps around to the other.
pub fn sense_psf_convolution(image: &[f64], psf: &[f64], n: usize) -> Result<Vec<f64>> {
    if image.len() != n * n {
        return Err(shape_err(n * n, image.len()));
    }
    if psf.len() != n * n {
        return Err(shape_err(n * n, psf.len()));
    }
    if image.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("image must be non-negative".into()));
    }
    let to_c = |v: &[f64]| v.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>();
    let mut a = to_c(image);
    let mut k = fft::ifftshift2(&to_c(psf), n);
    fft::fft2(&mut a, n);
    fft::fft2(&mut k, n);
    a.iter_mut().zip(&k).for_each(|(x, y)| *x *= y);
    fft::ifft2(&mut a, n);
    Ok(a.into_iter().map(|z| z.re.max(0.0)).collect())
}

/// Explicit `n² x n²` complex system matrix mapping the input field to the
/// pre-detector field.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingMatrix {
    size: usize,
    /// Row-major, `size x size`.
    values: Vec<C64>,
}

impl SensingMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.values[row * self.size + col]
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.size {
            return Err(shape_err(self.size, x.len()));
        }
        Ok(self
            .values
            .chunks_exact(self.size)
            .map(|row| row.iter().zip(x).map(|(h, v)| h * v).sum())
            .collect())
    }

    /// Transpose lifting `Hᵀg` of a measurement back to the scene's dimensions.
    pub fn transpose_apply(&self, g: &[C64]) -> Result<Vec<C64>> {
        if g.len() != self.size {
            return Err(shape_err(self.size, g.len()));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.size];
        for (row, gv) in self.values.chunks_exact(self.size).zip(g) {
            for (o, h) in out.iter_mut().zip(row) {
                *o += h * gv;
            }
        }
        Ok(out)
    }

    /// Transpose lifting of a real measurement vector, keeping the real part.
    pub fn lift(&self, g: &[f64]) -> Result<Vec<f64>> {
        let gc: Vec<C64> = g.iter().map(|&v| C64::new(v, 0.0)).collect();
        Ok(self.transpose_apply(&gc)?.into_iter().map(|z| z.re).collect())
    }
}

/// Column `k` is the pre-detector field produced by a unit input at pixel `k`.
pub fn materialize_sensing_matrix(model: &Model) -> Result<SensingMatrix> {
    let n = model.grid().n();
    if n > SENSING_MATRIX_LIMIT {
        return Err(Error::SizeLimit {
            what: "sensing matrix",
            n,
            limit: SENSING_MATRIX_LIMIT,
        });
    }
    let size = n * n;
    let mut values = vec![C64::new(0.0, 0.0); size * size];
    let mut basis = vec![C64::new(0.0, 0.0); size];
    for k in 0..size {
        basis[k] = C64::new(1.0, 0.0);
        let col = model.propagate_field(&basis)?;
        basis[k] = C64::new(0.0, 0.0);
        for (row, v) in col.into_iter().enumerate() {
            values[row * size + k] = v;
        }
    }
    Ok(SensingMatrix { size, values })
}
