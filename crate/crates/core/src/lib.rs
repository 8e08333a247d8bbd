//! Differentiable wave optics: scalar diffraction, trainable coding
//! elements, a reverse-mode tape and training loops for diffractive
//! networks and encoder/decoder imaging designs.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod elements;
pub mod error;
pub mod export;
pub mod fft;
pub mod field;
pub mod loss;
pub mod model;
pub mod objective;
pub mod optim;
pub mod propagation;
pub mod regularizers;
pub mod sensing;
pub mod train;
pub mod zernike;

pub type C64 = num_complex::Complex64;

pub use error::{Error, Result};
pub use field::{ComplexField, Grid};
