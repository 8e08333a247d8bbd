//! Datasets, IDX ingestion and image resampling.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{shape_err, Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Label(usize),
    Image(Vec<f64>),
}

/// Square real images with labels or target images.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    side: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Target>,
}

impl Dataset {
    pub fn new(side: usize, inputs: Vec<Vec<f64>>, targets: Vec<Target>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for x in &inputs {
            if x.len() != side * side {
                return Err(shape_err(side * side, x.len()));
            }
            if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument("input images must be finite and non-negative".into()));
            }
        }
        Ok(Self { side, inputs, targets })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k]
    }

    pub fn target(&self, k: usize) -> &Target {
        &self.targets[k]
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.targets
            .iter()
            .map(|t| match t {
                Target::Label(l) => Some(*l),
                Target::Image(_) => None,
            })
            .collect()
    }

    /// Samples `[start, start + count)`.
    pub fn slice(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} exceeds {} samples",
                start + count,
                self.len()
            )));
        }
        Ok(Self {
            side: self.side,
            inputs: self.inputs[start..start + count].to_vec(),
            targets: self.targets[start..start + count].to_vec(),
        })
    }

    /// Bilinearly resizes every input to `size x size` and centers it in an
    /// `n x n` zero canvas. Target images are transformed the same way.
    pub fn embed(&self, size: usize, n: usize) -> Result<Self> {
        let map = |x: &[f64]| -> Result<Vec<f64>> { embed_center(&resize_bilinear(x, self.side, size)?, size, n) };
        let inputs = self.inputs.iter().map(|x| map(x)).collect::<Result<Vec<_>>>()?;
        let targets = self
            .targets
            .iter()
            .map(|t| match t {
                Target::Label(l) => Ok(Target::Label(*l)),
                Target::Image(img) => map(img).map(Target::Image),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            side: n,
            inputs,
            targets,
        })
    }
}

/// Bilinear resampling with pixel centers aligned (`align_corners = false`).
pub fn resize_bilinear(image: &[f64], side: usize, size: usize) -> Result<Vec<f64>> {
    if image.len() != side * side {
        return Err(shape_err(side * side, image.len()));
    }
    if side == 0 || size == 0 {
        return Err(Error::InvalidArgument("cannot resize an empty image".into()));
    }
    if side == size {
        return Ok(image.to_vec());
    }
    let scale = side as f64 / size as f64;
    let sample = |c: usize| -> (usize, usize, f64) {
        let s = ((c as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(side - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        let (r0, r1, fr) = sample(i);
        for j in 0..size {
            let (c0, c1, fc) = sample(j);
            let top = image[r0 * side + c0] * (1.0 - fc) + image[r0 * side + c1] * fc;
            let bottom = image[r1 * side + c0] * (1.0 - fc) + image[r1 * side + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Ok(out)
}

/// Places a `size x size` image at the center of an `n x n` zero canvas.
pub fn embed_center(image: &[f64], size: usize, n: usize) -> Result<Vec<f64>> {
    if image.len() != size * size {
        return Err(shape_err(size * size, image.len()));
    }
    if size > n {
        return Err(Error::InvalidArgument(format!("cannot embed {size}x{size} into {n}x{n}")));
    }
    let off = n / 2 - size / 2;
    let mut out = vec![0.0; n * n];
    for i in 0..size {
        out[(i + off) * n + off..(i + off) * n + off + size].copy_from_slice(&image[i * size..(i + 1) * size]);
    }
    Ok(out)
}

/// Reads a file, transparently inflating gzip content.
fn read_file(path: &Path) -> Result<Vec<u8>> {
    let path_err = |source| Error::Path {
        path: path.display().to_string(),
        source,
    };
    let raw = fs::read(path).map_err(path_err)?;
    if !raw.starts_with(&[0x1f, 0x8b]) {
        return Ok(raw);
    }
    let mut out = Vec::new();
    GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(path_err)?;
    Ok(out)
}

fn be_u32(bytes: &[u8], offset: usize, kind: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Format {
            kind,
            offset,
            message: "truncated header".into(),
        })
}

/// Raw IDX images: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let kind = "IDX images";
    let magic = be_u32(bytes, 0, kind)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            kind,
            offset: 0,
            message: format!("bad magic number {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, kind)? as usize;
    let rows = be_u32(bytes, 8, kind)? as usize;
    let cols = be_u32(bytes, 12, kind)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format {
            kind,
            offset: bytes.len(),
            message: format!("truncated: expected {need} pixel bytes, found {}", body.len()),
        });
    }
    Ok((count, rows, cols, &body[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let kind = "IDX labels";
    let magic = be_u32(bytes, 0, kind)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            kind,
            offset: 0,
            message: format!("bad magic number {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, kind)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format {
            kind,
            offset: bytes.len(),
            message: format!("truncated: expected {count} labels, found {}", body.len()),
        });
    }
    Ok(&body[..count])
}

/// Loads an IDX image/label pair (plain or gzipped) with pixels scaled to
/// `[0, 1]`.
///
/// `limit` keeps only the first samples.
pub fn load_idx_dataset(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let img_bytes = read_file(images)?;
    let lbl_bytes = read_file(labels)?;
    let (count, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let lbls = parse_idx_labels(&lbl_bytes)?;
    if lbls.len() != count {
        return Err(Error::InvalidArgument(format!(
            "{} holds {count} images but {} holds {} labels",
            images.display(),
            labels.display(),
            lbls.len()
        )));
    }
    if rows != cols {
        return Err(Error::InvalidArgument(format!("non-square {rows}x{cols} IDX images")));
    }
    let take = limit.map_or(count, |l| l.min(count));
    let px = rows * cols;
    let inputs = (0..take)
        .map(|k| pixels[k * px..(k + 1) * px].iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    let targets = lbls[..take].iter().map(|&l| Target::Label(l as usize)).collect();
    Dataset::new(rows, inputs, targets)
}

/// Writes an IDX image/label pair; pixel values must already be bytes.
pub fn write_idx(images: &Path, labels: &Path, rows: usize, cols: usize, pixels: &[Vec<u8>], lbls: &[u8]) -> Result<()> {
    if pixels.len() != lbls.len() {
        return Err(shape_err(pixels.len(), lbls.len()));
    }
    let mut img = Vec::with_capacity(16 + pixels.len() * rows * cols);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [pixels.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for p in pixels {
        if p.len() != rows * cols {
            return Err(shape_err(rows * cols, p.len()));
        }
        img.extend_from_slice(p);
    }
    let mut lbl = Vec::with_capacity(8 + lbls.len());
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(lbls.len() as u32).to_be_bytes());
    lbl.extend_from_slice(lbls);
    for (path, bytes) in [(images, img), (labels, lbl)] {
        let mut f = fs::File::create(path).map_err(|source| Error::Path {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(&bytes)?;
    }
    Ok(())
}
