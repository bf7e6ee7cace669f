//! Dual-path multivariate forecaster: per-channel linear maps plus a
//! cross-variable attention path, trained by alternating optimization.
//!
//! ```
//! use dualpath::model::{model_forward, ModelConfig, Params};
//! use dualpath::autodiff::Tensor;
//! use rand::SeedableRng;
//!
//! let config = ModelConfig { d_model: 8, heads: 2, layers: 1, d_ff: 16, ..ModelConfig::new(3, 12, 4) };
//! let params = Params::init(&config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
//! let x = Tensor::new([3, 12], (0..36).map(|k| (k as f64 * 0.3).sin()).collect()).unwrap();
//! let f = model_forward(&x, &params, &config).unwrap();
//! assert_eq!(f.y_hat.shape(), [3, 4]);
//! ```

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod run;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub mod autodiff {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    pub mod diagnostics {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    pub mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
