//! Sampling grids and complex wavefronts.
//!
//! Pixel `i` of an `n`-point axis sits at `x_i = (i - n/2)·dx` (integer
//! division), so index `n/2` is the optical axis for both odd and even `n`.
//! Arrays are row-major with the first index running along `x`.

use std::io::{Read, Write};

use crate::error::{shape_err, Error, Result};
use crate::C64;

/// Square sampling geometry shared by every field and mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    dx: f64,
    wavelength: f64,
}

impl Grid {
    pub fn new(n: usize, dx: f64, wavelength: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("grid size must be >= 2, got {n}")));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidArgument(format!("pixel pitch must be positive, got {dx}")));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        Ok(Self { n, dx, wavelength })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn center(&self) -> usize {
        self.n / 2
    }

    /// Spatial coordinate of pixel index `i` in meters.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.center() as f64) * self.dx
    }

    pub fn with_size(&self, n: usize) -> Result<Self> {
        Self::new(n, self.dx, self.wavelength)
    }

    /// Frequency grid of this grid zero-padded by `pad_factor`.
    pub fn frequency_grid(&self, pad_factor: usize) -> FrequencyGrid {
        let n_pad = self.n * pad_factor.max(1);
        FrequencyGrid {
            n_pad,
            df: 1.0 / (n_pad as f64 * self.dx),
        }
    }
}

/// Centered spatial-frequency sampling of a (padded) grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencyGrid {
    pub n_pad: usize,
    /// Bin spacing in cycles per meter.
    pub df: f64,
}

impl FrequencyGrid {
    pub fn freq(&self, k: usize) -> f64 {
        (k as f64 - (self.n_pad / 2) as f64) * self.df
    }
}

/// `n x n` complex wavefront samples on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<C64>,
}

impl ComplexField {
    pub fn new(grid: Grid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(shape_err(grid.len(), values.len()));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidArgument("field contains non-finite samples".into()));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness scan; lengths are still checked.
    pub(crate) fn from_parts(grid: Grid, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![C64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> C64) -> Result<Self> {
        let n = grid.n();
        let values = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self::new(grid, values)
    }

    /// Amplitude encoding of a non-negative intensity image: `U = sqrt(image)`, zero phase.
    pub fn from_intensity(grid: Grid, image: &[f64]) -> Result<Self> {
        if image.len() != grid.len() {
            return Err(shape_err(grid.len(), image.len()));
        }
        if let Some(v) = image.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "amplitude encoding needs non-negative pixels, found {v}"
            )));
        }
        let values = image.iter().map(|&v| C64::new(v.sqrt(), 0.0)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[i * self.grid.n() + j]
    }

    /// `Σ|U|²·dx²`.
    pub fn energy(&self) -> f64 {
        let dx = self.grid.dx();
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dx * dx
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Embeds the field in the center of a `(w·n) x (w·n)` zero window.
    pub fn pad(&self, w: usize) -> Result<Self> {
        if w < 1 {
            return Err(Error::InvalidArgument("pad factor must be >= 1".into()));
        }
        let n = self.n();
        let grid = self.grid.with_size(n * w)?;
        Ok(Self::from_parts(grid, pad_values(&self.values, n, n * w)))
    }

    /// Central `n_out x n_out` block; exact inverse of [`ComplexField::pad`].
    pub fn crop(&self, n_out: usize) -> Result<Self> {
        let n = self.n();
        if n_out > n {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {n}x{n} field to {n_out}x{n_out}"
            )));
        }
        let grid = self.grid.with_size(n_out)?;
        Ok(Self::from_parts(grid, crop_values(&self.values, n, n_out)))
    }

    /// Writes the little-endian `WFLD` binary representation.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.n() as u32).to_le_bytes())?;
        w.write_all(&self.grid.dx().to_le_bytes())?;
        w.write_all(&self.grid.wavelength().to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 16);
        for v in &self.values {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_binary(&bytes)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, message: &str| Error::Format {
            kind: "field",
            offset,
            message: message.to_string(),
        };
        if bytes.len() < 24 {
            return Err(fmt(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != FIELD_MAGIC {
            return Err(fmt(0, "bad magic, expected WFLD"));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dx = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let wavelength = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let grid = Grid::new(n, dx, wavelength).map_err(|e| fmt(4, &e.to_string()))?;
        let body = &bytes[24..];
        if body.len() != n * n * 16 {
            return Err(fmt(
                24 + body.len().min(n * n * 16),
                &format!("expected {} sample bytes, found {}", n * n * 16, body.len()),
            ));
        }
        let values = body
            .chunks_exact(16)
            .map(|c| {
                C64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Self::new(grid, values)
    }
}

const FIELD_MAGIC: &[u8; 4] = b"WFLD";

fn pad_offset(n_big: usize, n_small: usize) -> usize {
    n_big / 2 - n_small / 2
}

pub(crate) fn pad_values<T: Copy + Default>(values: &[T], n: usize, n_big: usize) -> Vec<T> {
    let off = pad_offset(n_big, n);
    let mut out = vec![T::default(); n_big * n_big];
    for i in 0..n {
        let dst = (i + off) * n_big + off;
        out[dst..dst + n].copy_from_slice(&values[i * n..(i + 1) * n]);
    }
    out
}

pub(crate) fn crop_values<T: Copy>(values: &[T], n_big: usize, n: usize) -> Vec<T> {
    let off = pad_offset(n_big, n);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let src = (i + off) * n_big + off;
        out.extend_from_slice(&values[src..src + n]);
    }
    out
}

/// Unit-amplitude plane wave `exp(j2π(fx·x + fy·y))`.
///
/// `fx` and `fy` must be bins of the unpadded frequency grid, i.e. integer
/// multiples of `1/(n·dx)` in `[-n/2, n - 1 - n/2]`.
pub fn plane_wave(grid: &Grid, fx: f64, fy: f64) -> Result<ComplexField> {
    let n = grid.n();
    let bin = |f: f64| -> Option<i64> {
        let m = f * n as f64 * grid.dx();
        let r = m.round();
        let lo = -((n / 2) as i64);
        let hi = (n - 1 - n / 2) as i64;
        ((m - r).abs() <= 1e-9 * r.abs().max(1.0) && (lo..=hi).contains(&(r as i64))).then_some(r as i64)
    };
    let (Some(mx), Some(my)) = (bin(fx), bin(fy)) else {
        return Err(Error::OffGridFrequency { fx, fy, n });
    };
    let c = grid.center() as i64;
    let nn = n as i64;
    // Phase reduced modulo n in integers keeps every sample exact to rounding.
    ComplexField::from_fn(*grid, |i, j| {
        let p = (mx * (i as i64 - c) + my * (j as i64 - c)).rem_euclid(nn);
        C64::from_polar(1.0, 2.0 * std::f64::consts::PI * p as f64 / n as f64)
    })
}

/// Unit sample at pixel `(i, j)`, zero elsewhere.
pub fn point_source(grid: &Grid, i: usize, j: usize) -> Result<ComplexField> {
    let n = grid.n();
    if i >= n || j >= n {
        return Err(Error::IndexOutOfRange { i, j, n });
    }
    let mut f = ComplexField::zeros(*grid);
    f.values[i * n + j] = C64::new(1.0, 0.0);
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexField::from_fn(grid, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
        .unwrap()
    }

    #[test]
    fn grid_construction() {
        let g = Grid::new(200, 400e-6, 749.48e-6).unwrap();
        assert_eq!(g.n(), 200);
        assert_eq!(g.coord(100), 0.0);
        assert!(Grid::new(2, 1.0, 1.0).is_ok());
        assert!(Grid::new(0, 1.0, 1.0).is_err());
        assert!(Grid::new(4, -1.0, 1.0).is_err());
        assert!(Grid::new(4, 1.0, f64::NAN).is_err());
        assert!(Grid::new(4, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn odd_grid_centers_on_floor() {
        let g = Grid::new(5, 1.0, 1.0).unwrap();
        assert_eq!(g.center(), 2);
        assert_eq!(g.coord(0), -2.0);
        assert_eq!(g.coord(4), 2.0);
    }

    #[test]
    fn plane_wave_zero_frequency_is_ones() {
        let g = Grid::new(6, 1e-6, 0.5e-6).unwrap();
        let f = plane_wave(&g, 0.0, 0.0).unwrap();
        assert!(f.values().iter().all(|v| *v == C64::new(1.0, 0.0)));
    }

    #[test]
    fn plane_wave_period_four_ramp() {
        let g = Grid::new(4, 1.0, 1.0).unwrap();
        let f = plane_wave(&g, 0.25, 0.0).unwrap();
        for i in 0..4 {
            let expected = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * 0.25 * g.coord(i));
            for j in 0..4 {
                assert!((f.get(i, j) - expected).norm() < 1e-15);
            }
        }
        // half a period apart along x
        assert!((f.get(0, 0) + f.get(2, 0)).norm() < 1e-15);
    }

    #[test]
    fn plane_wave_rejects_off_grid() {
        let g = Grid::new(8, 1.0, 1.0).unwrap();
        let edge = 1.0 / 8.0 * 4.0 + 1e-3;
        assert!(matches!(plane_wave(&g, edge, 0.0), Err(Error::OffGridFrequency { .. })));
        assert!(plane_wave(&g, 0.5 / 8.0, 0.0).is_err());
        // bin n/2 does not exist in the centered ordering for even n
        assert!(plane_wave(&g, 4.0 / 8.0, 0.0).is_err());
        assert!(plane_wave(&g, -4.0 / 8.0, 0.0).is_ok());
    }

    #[test]
    fn point_source_energy_and_range() {
        let g = Grid::new(4, 0.5, 1.0).unwrap();
        let f = point_source(&g, 2, 2).unwrap();
        assert_eq!(f.get(2, 2), C64::new(1.0, 0.0));
        assert_eq!(f.energy(), 0.25);
        assert!(matches!(point_source(&g, 5, 0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn energy_matches_loop() {
        let g = Grid::new(7, 0.3, 1.0).unwrap();
        assert_eq!(ComplexField::zeros(g).energy(), 0.0);
        let ones = ComplexField::from_fn(g, |_, _| C64::new(1.0, 0.0)).unwrap();
        assert!((ones.energy() - 49.0 * 0.09).abs() < 1e-14);
        let f = random_field(g, 5);
        let mut acc = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                let v = f.get(i, j);
                acc += (v.re * v.re + v.im * v.im) * 0.3 * 0.3;
            }
        }
        assert!(((f.energy() - acc) / acc).abs() < 1e-15);
    }

    #[test]
    fn pad_examples() {
        let g = Grid::new(2, 1.0, 1.0).unwrap();
        let ones = ComplexField::from_fn(g, |_, _| C64::new(1.0, 0.0)).unwrap();
        let p = ones.pad(2).unwrap();
        assert_eq!(p.n(), 4);
        for i in 0..4 {
            for j in 0..4 {
                let inside = (1..3).contains(&i) && (1..3).contains(&j);
                assert_eq!(p.get(i, j).re, if inside { 1.0 } else { 0.0 });
            }
        }
        let f = random_field(Grid::new(4, 1.0, 1.0).unwrap(), 1);
        assert_eq!(f.pad(1).unwrap(), f);
        assert!(f.pad(0).is_err());
        assert!(f.crop(8).is_err());
        assert_eq!(f.crop(4).unwrap(), f);
    }

    #[test]
    fn pad_keeps_center_on_axis() {
        for n in [4usize, 5] {
            let g = Grid::new(n, 1.0, 1.0).unwrap();
            let f = point_source(&g, g.center(), g.center()).unwrap();
            let p = f.pad(4).unwrap();
            let c = p.grid().center();
            assert_eq!(p.get(c, c), C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn binary_round_trip_and_errors() {
        let f = random_field(Grid::new(5, 2e-6, 6e-7).unwrap(), 9);
        let mut bytes = Vec::new();
        f.write_binary(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"WFLD");
        assert_eq!(bytes.len(), 24 + 25 * 16);
        assert_eq!(ComplexField::from_binary(&bytes).unwrap(), f);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ComplexField::from_binary(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(ComplexField::from_binary(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn crop_pad_round_trip(n in 2usize..12, w in prop::sample::select(vec![1usize, 2, 4, 8]), seed in any::<u64>()) {
            let f = random_field(Grid::new(n, 1.0, 1.0).unwrap(), seed);
            let p = f.pad(w).unwrap();
            prop_assert_eq!(p.energy(), f.energy());
            prop_assert_eq!(p.crop(n).unwrap(), f);
        }

        #[test]
        fn plane_waves_have_unit_modulus(n in 2usize..20, a in 0usize..20, b in 0usize..20) {
            let g = Grid::new(n, 1e-6, 5e-7).unwrap();
            let fg = g.frequency_grid(1);
            let f = plane_wave(&g, fg.freq(a % n), fg.freq(b % n)).unwrap();
            for v in f.values() {
                prop_assert!((v.norm() - 1.0).abs() < 1e-15);
            }
        }
    }
}
