//! Mask images, realized-element fields and parameter files.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::ParamId;
use crate::elements::CodedElement;
use crate::error::{shape_err, Error, Result};
use crate::field::{ComplexField, Grid};
use crate::model::Model;

const PARAMS_MAGIC: &[u8; 4] = b"WPRM";

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })
}

/// Binary (P5) 8-bit graymap.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(shape_err(width * height, pixels.len()));
    }
    let mut f = create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

/// Phase wrapped to `[0, 2π)` and mapped linearly onto `0..=255`.
pub fn phase_to_gray(phase: f64) -> u8 {
    let w = phase.rem_euclid(TAU);
    ((w / TAU * 256.0).floor() as i64).clamp(0, 255) as u8
}

/// Grayscale rendering of an element: wrapped phase for phase-type
/// elements, `{0, 255}` for binary masks, scaled amplitude for selectors.
pub fn element_image(element: &CodedElement, grid: &Grid) -> Result<Vec<u8>> {
    Ok(match element {
        CodedElement::Phase(m) => m.psi.iter().map(|&p| phase_to_gray(p)).collect(),
        CodedElement::Zernike(_) => element
            .realize(grid, None)?
            .iter()
            .map(|z| if z.norm() == 0.0 { 0 } else { phase_to_gray(z.arg()) })
            .collect(),
        CodedElement::Binary { mask, .. } => mask.hard().iter().map(|&v| if v == 1.0 { 255 } else { 0 }).collect(),
        CodedElement::Selector { .. } => element
            .realize(grid, None)?
            .iter()
            .map(|z| (z.re.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    })
}

/// Writes `layer_<k>.pgm` and `layer_<k>.wfld` (realized coefficients) for
/// every element; returns the written image paths.
pub fn export_masks(model: &Model, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Path {
        path: dir.display().to_string(),
        source,
    })?;
    let grid = model.grid();
    let mut written = Vec::new();
    for (k, layer) in model.layers().iter().enumerate() {
        let img = element_image(&layer.element, grid)?;
        let pgm = dir.join(format!("layer_{k}.pgm"));
        write_pgm(&pgm, grid.n(), grid.n(), &img)?;
        let phi = layer.element.realize(grid, None)?;
        let field = ComplexField::new(*grid, phi)?;
        field.write_binary(create(&dir.join(format!("layer_{k}.wfld")))?)?;
        written.push(pgm);
    }
    Ok(written)
}

/// `"WPRM"`, `u32` block count, then per block `u32` id, `u32` length and
/// little-endian `f64` values.
pub fn write_params(path: &Path, params: &BTreeMap<ParamId, Vec<f64>>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAMS_MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (id, v) in params {
        buf.extend_from_slice(&(*id as u32).to_le_bytes());
        buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<BTreeMap<ParamId, Vec<f64>>> {
    let bytes = fs::read(path).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })?;
    parse_params(&bytes)
}

pub fn parse_params(bytes: &[u8]) -> Result<BTreeMap<ParamId, Vec<f64>>> {
    let kind = "parameter file";
    let err = |offset: usize, message: &str| Error::Format {
        kind,
        offset,
        message: message.to_string(),
    };
    if bytes.get(..4) != Some(PARAMS_MAGIC.as_slice()) {
        return Err(err(0, "bad magic"));
    }
    let u32_at = |o: usize| -> Result<usize> {
        bytes
            .get(o..o + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(|| err(o, "truncated"))
    };
    let count = u32_at(4)?;
    let mut offset = 8;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let id = u32_at(offset)?;
        let len = u32_at(offset + 4)?;
        offset += 8;
        let end = offset + 8 * len;
        let body = bytes.get(offset..end).ok_or_else(|| err(offset, "truncated block"))?;
        let v = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.insert(id, v);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(err(offset, "trailing bytes"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::{BinaryMask, BinaryMode, PhaseMask};

    #[test]
    fn phase_gray_levels() {
        assert_eq!(phase_to_gray(0.0), 0);
        assert_eq!(phase_to_gray(TAU), 0);
        assert_eq!(phase_to_gray(std::f64::consts::PI), 128);
        assert_eq!(phase_to_gray(-1e-9), 255);
        assert_eq!(phase_to_gray(TAU - 1e-12), 255);
    }

    #[test]
    fn element_images() {
        let grid = Grid::new(2, 1.0, 1.0).unwrap();
        let phase = CodedElement::Phase(PhaseMask::phase_only(2, vec![0.0, 1.0, 7.0, -1.0]).unwrap());
        assert_eq!(element_image(&phase, &grid).unwrap().len(), 4);
        let bin = CodedElement::Binary {
            mask: BinaryMask::new(2, vec![-1.0, 0.0, 2.0, -0.1]).unwrap(),
            mode: BinaryMode::Soft,
        };
        assert_eq!(element_image(&bin, &grid).unwrap(), vec![0, 255, 255, 0]);
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_pgm(&p, 3, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 1, 2, 3, 4, 5]);
        assert!(write_pgm(&p, 3, 3, &[0; 4]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("params.bin");
        let mut m = BTreeMap::new();
        m.insert(0, vec![1.5, -2.0, f64::MIN_POSITIVE]);
        m.insert(3, vec![]);
        write_params(&p, &m).unwrap();
        assert_eq!(read_params(&p).unwrap(), m);
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        assert!(parse_params(&bytes).is_err());
        assert!(parse_params(b"XXXX").is_err());
    }
}
