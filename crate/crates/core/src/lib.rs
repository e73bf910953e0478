#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod bench;
mod bessel;
pub mod calibrate;
pub mod domain;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod ko;
pub mod model;
pub mod optim;
pub mod rng;

pub use domain::{BoxDomain, DesignGrid};
pub use error::{Error, Result};
pub use kernels::{KernelSpec, Roughness};
