//! Dense linear algebra, fully connected networks, and the differentiation engine.

pub mod grad;
pub mod matrix;
pub mod mlp;
pub mod tape;

pub use grad::{grad_scalar_wrt_params, value_and_grad};
pub use matrix::{dot, gemm, norm2, CompensatedSum, Matrix};
pub use mlp::{Activation, Mlp, MlpTrace, MlpVars, ParamVector};
pub use tape::{sigmoid, Adjoints, Tape, Var};
