//! Population-based meta-learning of structural responses.
//!
//! A population of two-degree-of-freedom mass-spring-damper structures is
//! simulated, each structure defining a regression task from temperature to
//! a frequency-response quantity. Networks are meta-trained with MAML on a
//! few data-rich structures and adapted from a handful of samples on unseen
//! ones, with a per-structure Gaussian process as the baseline.
//!
//! Modules, bottom up:
//! - [`population`]: structures, stiffness law, FRFs and task datasets
//! - [`nn`]: one-hidden-layer network with exact gradients and Hessian-vector products
//! - [`maml`]: inner/meta updates, meta-training and adaptation
//! - [`gp`]: RBF Gaussian-process baseline with ML-II hyperparameters
//! - [`pca`]: FRF compression for the full-FRF problem
//! - [`harness`]: the evaluation protocol, NMSE, and result files

pub mod error;
pub mod gp;
pub mod harness;
pub mod maml;
pub mod nn;
pub mod pca;
pub mod population;
pub mod seed;

pub use error::{Error, Result};
pub use gp::{gp_fit, gp_fit_multi, gp_predict_mean, GpModel, Hyperparameters};
pub use harness::{ExperimentConfig, Method, Problem, ResultRecord, SweepConfig};
pub use maml::{adapt, inner_update, meta_gradient, meta_train, MamlConfig, MetaModel, Normalizer};
pub use nn::{Activation, Example, MlpParams, ParamGradient};
pub use pca::{pca_fit, pca_inverse, pca_transform, PcaModel};
pub use population::{
    FrequencyGrid, FrfSample, Sample, StructureSpec, TargetKind, TaskDataset, TemperatureRange,
};
