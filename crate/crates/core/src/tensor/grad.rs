use super::matrix::Matrix;
use super::mlp::ParamVector;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Value and gradient of a scalar function of a flat parameter vector.
///
/// `f` receives the parameters as a `1 x P` trainable node and must return a
/// `1 x 1` node built from tape primitives. Network parameters can be sliced
/// out with [`Tape::view`] or [`super::mlp::MlpVars::from_flat`]; tangent and
/// cotangent propagation recorded on the tape is differentiated as well.
pub fn value_and_grad<F>(f: F, theta: &ParamVector) -> Result<(f64, ParamVector)>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let p = tape.param(Matrix::row_vector(theta.as_slice()));
    let out = f(&mut tape, p);
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFinite("scalar objective".into()));
    }
    let adj = tape.backward(&[(out, Matrix::filled(1, 1, 1.0))])?;
    let grad = adj.get_or_zeros(p, tape.value(p)).into_vec();
    Ok((value, ParamVector(grad)))
}

/// Gradient of a scalar function of a flat parameter vector; see [`value_and_grad`].
pub fn grad_scalar_wrt_params<F>(f: F, theta: &ParamVector) -> Result<ParamVector>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    value_and_grad(f, theta).map(|(_, g)| g)
}
