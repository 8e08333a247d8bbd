//! Zernike polynomials in Noll ordering, evaluated on the unit disk
//! inscribed in a square grid.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Grid;

/// Largest supported Noll index (all terms up to radial order 9).
pub const MAX_NOLL: usize = 55;

/// Radial order `n` and signed azimuthal frequency `m` of Noll index `j >= 1`.
pub fn noll_to_nm(j: usize) -> Result<(usize, i64)> {
    if j == 0 || j > MAX_NOLL {
        return Err(Error::InvalidArgument(format!(
            "Noll index {j} outside 1..={MAX_NOLL}"
        )));
    }
    let mut n = 0usize;
    let mut j1 = j - 1;
    while j1 > n {
        n += 1;
        j1 -= n;
    }
    let m_abs = (n % 2 + 2 * ((j1 + (n + 1) % 2) / 2)) as i64;
    let m = if j % 2 == 0 { m_abs } else { -m_abs };
    Ok((n, m))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Radial polynomial `R_n^{|m|}(rho)`.
pub fn radial(n: usize, m: i64, rho: f64) -> f64 {
    let m = m.unsigned_abs() as usize;
    if m > n || (n - m) % 2 != 0 {
        return 0.0;
    }
    (0..=(n - m) / 2)
        .map(|k| {
            let c = factorial(n - k) / (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k));
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * c * rho.powi((n - 2 * k) as i32)
        })
        .sum()
}

/// Orthonormal (over the unit disk) Noll term `Z_j(rho, theta)`.
pub fn zernike(j: usize, rho: f64, theta: f64) -> Result<f64> {
    let (n, m) = noll_to_nm(j)?;
    let r = radial(n, m, rho);
    Ok(if m == 0 {
        ((n + 1) as f64).sqrt() * r
    } else if m > 0 {
        (2.0 * (n + 1) as f64).sqrt() * r * (m as f64 * theta).cos()
    } else {
        (2.0 * (n + 1) as f64).sqrt() * r * ((-m) as f64 * theta).sin()
    })
}

/// Polar coordinates of pixel `(i, j)` normalized so the inscribed disk has radius 1.
///
/// Rows run along `y`, columns along `x`.
pub fn normalized_polar(grid: &Grid, i: usize, j: usize) -> (f64, f64) {
    let radius = grid.n() as f64 * grid.dx() / 2.0;
    let x = grid.coord(j) / radius;
    let y = grid.coord(i) / radius;
    (x.hypot(y), y.atan2(x))
}

/// Basis matrix with one row per pixel and one column per term (`n² x count`),
/// zero outside the unit disk, plus the disk indicator.
#[derive(Clone, Debug, PartialEq)]
pub struct ZernikeBasis {
    pub count: usize,
    pub matrix: Arc<Vec<f64>>,
    pub inside: Vec<bool>,
}

impl ZernikeBasis {
    pub fn new(grid: &Grid, count: usize) -> Result<Self> {
        if count > MAX_NOLL {
            return Err(Error::InvalidArgument(format!(
                "{count} Zernike terms requested, at most {MAX_NOLL} are implemented"
            )));
        }
        let n = grid.n();
        let mut matrix = vec![0.0; n * n * count];
        let mut inside = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                let (rho, theta) = normalized_polar(grid, i, j);
                let p = i * n + j;
                if rho > 1.0 {
                    continue;
                }
                inside[p] = true;
                for k in 0..count {
                    matrix[p * count + k] = zernike(k + 1, rho, theta)?;
                }
            }
        }
        Ok(Self {
            count,
            matrix: Arc::new(matrix),
            inside,
        })
    }

    /// `Σ_k coeffs[k]·Z_{k+1}` at every pixel.
    pub fn height(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.count {
            return Err(crate::error::shape_err(self.count, coeffs.len()));
        }
        Ok(self
            .matrix
            .chunks_exact(self.count.max(1))
            .take(self.inside.len())
            .map(|row| row.iter().zip(coeffs).map(|(z, c)| z * c).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noll_table() {
        let expected = [
            (0, 0),
            (1, 1),
            (1, -1),
            (2, 0),
            (2, -2),
            (2, 2),
            (3, -1),
            (3, 1),
            (3, -3),
            (3, 3),
            (4, 0),
        ];
        for (j, e) in expected.iter().enumerate() {
            assert_eq!(noll_to_nm(j + 1).unwrap(), *e, "j = {}", j + 1);
        }
        assert!(noll_to_nm(0).is_err());
        assert!(noll_to_nm(MAX_NOLL + 1).is_err());
    }

    #[test]
    fn low_order_closed_forms() {
        for &(rho, th) in &[(0.0, 0.0), (0.3, 1.1), (0.8, -2.0), (1.0, 0.4)] {
            let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
            assert!(close(zernike(1, rho, th).unwrap(), 1.0));
            assert!(close(zernike(2, rho, th).unwrap(), 2.0 * rho * th.cos()));
            assert!(close(zernike(3, rho, th).unwrap(), 2.0 * rho * th.sin()));
            assert!(close(zernike(4, rho, th).unwrap(), 3f64.sqrt() * (2.0 * rho * rho - 1.0)));
            assert!(close(
                zernike(11, rho, th).unwrap(),
                5f64.sqrt() * (6.0 * rho.powi(4) - 6.0 * rho * rho + 1.0)
            ));
        }
    }

    #[test]
    fn approximately_orthonormal_on_fine_grid() {
        let grid = Grid::new(256, 1.0, 1.0).unwrap();
        let basis = ZernikeBasis::new(&grid, 6).unwrap();
        let inside = basis.inside.iter().filter(|b| **b).count() as f64;
        for a in 0..6 {
            for b in 0..6 {
                let dot: f64 = (0..grid.len())
                    .map(|p| basis.matrix[p * 6 + a] * basis.matrix[p * 6 + b])
                    .sum::<f64>()
                    / inside;
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 2e-2, "<Z{}, Z{}> = {dot}", a + 1, b + 1);
            }
        }
    }

    #[test]
    fn too_many_terms_rejected() {
        let grid = Grid::new(8, 1.0, 1.0).unwrap();
        assert!(ZernikeBasis::new(&grid, MAX_NOLL + 1).is_err());
        assert!(ZernikeBasis::new(&grid, MAX_NOLL).is_ok());
    }
}
