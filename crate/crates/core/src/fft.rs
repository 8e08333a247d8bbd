//! Square 2D discrete Fourier transforms.
//!
//! Normalization: the forward transform is unscaled and the inverse carries
//! the full `1/n²` factor, so `Σ|f|² = (1/n²) Σ|DFT(f)|²`.
//!
//! The `centered_*` variants work on arrays whose zero coordinate sits at
//! index `n/2` (integer division) in both the spatial and frequency domain,
//! matching [`crate::field::Grid`].

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn transpose_in_place(data: &mut [C64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

fn transform(data: &mut [C64], n: usize, inverse: bool) {
    assert_eq!(data.len(), n * n, "buffer is not n x n");
    let fft = plan(n, inverse);
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    transpose_in_place(data, n);
    fft.process_with_scratch(data, &mut scratch);
    transpose_in_place(data, n);
}

/// Unscaled forward 2D DFT in natural (corner-origin) ordering.
pub fn fft2(data: &mut [C64], n: usize) {
    transform(data, n, false);
}

/// Inverse 2D DFT scaled by `1/n²`.
pub fn ifft2(data: &mut [C64], n: usize) {
    transform(data, n, true);
    let scale = 1.0 / (n * n) as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Moves the zero-frequency element from index 0 to index `n/2` along both axes.
pub fn fftshift2(data: &[C64], n: usize) -> Vec<C64> {
    let c = n / 2;
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let oi = (i + c) % n;
        for j in 0..n {
            out[oi * n + (j + c) % n] = data[i * n + j];
        }
    }
    out
}

/// Inverse of [`fftshift2`].
pub fn ifftshift2(data: &[C64], n: usize) -> Vec<C64> {
    let c = n / 2;
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let si = (i + c) % n;
        for j in 0..n {
            out[i * n + j] = data[si * n + (j + c) % n];
        }
    }
    out
}

/// Forward DFT of a centered array, returning a centered spectrum.
pub fn centered_dft2(data: &[C64], n: usize) -> Vec<C64> {
    let mut buf = ifftshift2(data, n);
    fft2(&mut buf, n);
    fftshift2(&buf, n)
}

/// Inverse of [`centered_dft2`].
pub fn centered_idft2(spectrum: &[C64], n: usize) -> Vec<C64> {
    let mut buf = ifftshift2(spectrum, n);
    ifft2(&mut buf, n);
    fftshift2(&buf, n)
}
