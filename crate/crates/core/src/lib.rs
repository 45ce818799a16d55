//! Learned mesh motion.
//!
//! A DeepONet maps the boundary displacement `g` of a fluid domain around an
//! elastic flag to a displacement of the whole mesh. The learned correction
//! is blended into a harmonic extension through a mask that vanishes on the
//! boundary, so Dirichlet data is reproduced exactly:
//! `U(g)(x) = h(g)(x) + l(x) D(g)(x)`.
//!
//! The crate contains everything needed to produce and judge such a model:
//!
//! - [`mesh`]: channel-with-flag triangulations, nodal fields, deformation;
//! - [`fem`]: P1 assembly, harmonic and biharmonic extension, the mask `l`;
//! - [`neural`]: MLPs with reverse-mode gradients, Adam, plateau scheduling;
//! - [`deeponet`]: sensor encoding, branch/trunk evaluation, hard constraints;
//! - [`training`]: the relative cost, data splits, training, grid search and
//!   quality-based model selection;
//! - [`data`]: synthetic flag deformation families and dataset files;
//! - [`quality`]: scaled Jacobian, `min det(grad chi)`, histograms;
//! - [`cli`]: the `meshmotion` command-line driver.

// `!(x > 0.0)` is how NaN gets rejected; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod data;
pub mod deeponet;
pub mod error;
pub mod fem;
pub mod files;
pub mod mesh;
pub mod neural;
pub mod quality;
pub mod training;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;

pub use error::{Error, Result};
