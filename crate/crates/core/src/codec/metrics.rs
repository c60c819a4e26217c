use super::CodecError;
use crate::DenseVector;

/// Normalized mean squared error `||xhat - x||^2 / ||x||^2`.
pub fn nmse(x: &DenseVector, xhat: &DenseVector) -> Result<f64, CodecError> {
    x.check_dim(xhat)?;
    let denom = x.norm_sq();
    if denom == 0.0 {
        return Err(CodecError::ZeroNorm);
    }
    Ok(x.dist_sq(xhat) / denom)
}
