//! Spline networks built from univariate B-spline feature extractors and
//! tensor-product B-spline outer functions.
//!
//! The crate is organised bottom-up:
//!
//! - [`bspline`]: knots, basis evaluation, de Boor, derivatives, Greville
//!   abscissae.
//! - [`tensor`]: tensor-product bases and weight tensors.
//! - [`model`]: the network, its parameter layout and initializations.
//! - [`autodiff`]: closed-form derivatives in inputs and parameters.
//! - [`training`]: losses, Adam and the minibatch loop.
//! - [`pinn`]: physics-informed training for `-Δu = f`.
//! - [`interpret`]: probabilistic-tree reading of a trained model.
//! - [`dataio`] and [`checkpoint`]: datasets and model files.
//!
//! ```
//! use exsplinet::{ExSpliNet, ModelConfig};
//!
//! let config = ModelConfig::uniform(2, 1, 3, 2, 5, 4, 3, 3);
//! let model = ExSpliNet::init_random(config, 42).unwrap();
//! let y = model.forward(&[0.25, 0.75]).unwrap();
//! assert_eq!(y.len(), 1);
//! ```

// `!(a > b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bspline;
pub mod checkpoint;
pub mod dataio;
pub mod error;
mod eval;
pub mod interpret;
pub mod lsq;
pub mod model;
pub mod pinn;
pub mod tensor;
pub mod training;

pub use autodiff::{
    grad_input, grad_params, risk_grad, second_input_derivative, GradientBundle, InputDerivatives,
    InputJacobian,
};
pub use bspline::{
    basis_dense, basis_oracle, basis_sparse, de_boor_eval, derivative_spline, greville,
    open_uniform_knots, schoenberg_weights, support_window, KnotVector, SparseBasis, Spline1D,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};

pub use dataio::{Dataset, MinMax, Targets};
pub use error::{Error, Result};
pub use interpret::{
    extract_rules, feature_summary, joint_distribution, level_distribution, predict_explain, RuleSet,
};
pub use lsq::fit_outer_least_squares;

pub use model::{
    init_convex, init_coordinate_select, init_identity, param_count, reparam, ExSpliNet,
    InnerWeights, ModelConfig, ParamLayout,
};
pub use pinn::{
    differential_risk, pinn_train, sample_collocation, CollocationSet, DifferentialProblem,
    EggDomain, PinnConfig, PinnReport,
};
pub use tensor::{axis_derivative_weights, tensor_basis, tensor_dot, TensorBasisSparse, WeightTensor};
pub use training::{evaluate, kfold, train, Adam, Loss, Metric, TrainConfig, TrainReport};
