use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Central-difference gradient of a scalar function of one matrix argument.
pub fn finite_diff_grad(mut f: impl FnMut(&Matrix) -> f64, at: &Matrix, h: f64) -> Result<Matrix> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step h must be positive, got {h}")));
    }
    let mut probe = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.rows() {
        for j in 0..at.cols() {
            let x = at[(i, j)];
            probe[(i, j)] = x + h;
            let up = f(&probe);
            probe[(i, j)] = x - h;
            let down = f(&probe);
            probe[(i, j)] = x;
            grad[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}
