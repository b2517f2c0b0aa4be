use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Largest and smallest singular values of a coupling Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBracket {
    pub lambda_max: f64,
    pub lambda_min: f64,
}

/// Sizes up to this use the dense Jacobi solver; larger ones use power iteration.
const DENSE_LIMIT: usize = 64;
const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 10_000;

/// `diag(S·1) − S`.
pub fn laplacian(s: &Matrix) -> Result<Matrix> {
    if !s.is_square() {
        return Err(Error::dim("laplacian", s.shape(), (s.cols(), s.rows())));
    }
    let sums = s.row_sums();
    let mut lap = s.scale(-1.0);
    for (i, d) in sums.into_iter().enumerate() {
        lap[(i, i)] += d;
    }
    Ok(lap)
}

pub fn laplacian_spectral_bracket(s: &Matrix) -> Result<SpectralBracket> {
    if !s.is_square() {
        return Err(Error::dim("laplacian_spectral_bracket", s.shape(), (s.cols(), s.rows())));
    }
    if let Some(v) = s.data().iter().find(|v| **v < 0.0) {
        return Err(Error::Contract(format!("coupling has negative entry {v}")));
    }
    let lap = laplacian(s)?;
    let n = lap.rows();
    if n == 0 {
        return Ok(SpectralBracket { lambda_max: 0.0, lambda_min: 0.0 });
    }
    let (lambda_max, lambda_min) = if n <= DENSE_LIMIT {
        dense_singular_extremes(&lap)
    } else {
        power_singular_extremes(&lap)
    };
    Ok(SpectralBracket {
        lambda_max,
        lambda_min: lambda_min.min(lambda_max),
    })
}

fn dense_singular_extremes(lap: &Matrix) -> (f64, f64) {
    let singular: Vec<f64> = if lap.is_symmetric(1e-14 * lap.max_abs().max(1.0)) {
        jacobi_eigenvalues(lap).into_iter().map(f64::abs).collect()
    } else {
        let gram = lap.transpose().matmul(lap).expect("square");
        jacobi_eigenvalues(&gram).into_iter().map(|v| v.max(0.0).sqrt()).collect()
    };
    let max = singular.iter().copied().fold(0.0, f64::max);
    let min = singular.iter().copied().fold(f64::INFINITY, f64::min);
    (max, min)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(sym: &Matrix) -> Vec<f64> {
    let n = sym.rows();
    let mut a = sym.clone();
    let scale = a.frobenius_sq().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Power iteration for the top eigenvalue of a PSD operator given as a closure.
fn power_top(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    // deterministic start, deliberately not parallel to the all-ones kernel vector
    let mut v: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).sin() + 0.5).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = apply(&v);
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        if normalize(&mut w) == 0.0 {
            return 0.0;
        }
        v = w;
        if (next - estimate).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        estimate = next;
    }
    estimate
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn power_singular_extremes(lap: &Matrix) -> (f64, f64) {
    let lt = lap.transpose();
    let gram = |v: &[f64]| {
        let lv = lap.matmul(&Matrix::column(v.to_vec())).expect("square");
        lt.matmul(&lv).expect("square").into_data()
    };
    let top = power_top(lap.rows(), gram).max(0.0);
    // shifted operator c·I − LᵀL has top eigenvalue c − σ_min²
    let shift = top * 1.001 + f64::MIN_POSITIVE;
    let shifted = power_top(lap.rows(), |v| {
        gram(v).iter().zip(v).map(|(g, x)| shift * x - g).collect()
    });
    (top.sqrt(), (shift - shifted).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_nonneg_sym(seed: u64, n: usize) -> Matrix {
        let mut rng = seeded(seed, 0);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.gen();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn nalgebra_singular(lap: &Matrix) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_row_slice(lap.rows(), lap.cols(), lap.data());
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(f64::total_cmp);
        sv
    }

    #[test]
    fn two_node_swap() {
        let s = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let b = laplacian_spectral_bracket(&s).unwrap();
        assert!((b.lambda_max - 2.0).abs() <= 1e-12);
        assert!(b.lambda_min.abs() <= 1e-12);
    }

    #[test]
    fn identity_coupling_has_zero_laplacian() {
        let b = laplacian_spectral_bracket(&Matrix::identity(3)).unwrap();
        assert_eq!((b.lambda_max, b.lambda_min), (0.0, 0.0));
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            laplacian_spectral_bracket(&Matrix::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn dense_matches_independent_solver() {
        for seed in 0..10 {
            let s = random_nonneg_sym(seed, 8);
            let b = laplacian_spectral_bracket(&s).unwrap();
            let sv = nalgebra_singular(&laplacian(&s).unwrap());
            assert!((b.lambda_max - sv[7]).abs() <= 1e-7 * sv[7]);
            assert!(b.lambda_min.abs() <= 1e-7 && sv[0].abs() <= 1e-7);
        }
    }

    #[test]
    fn non_symmetric_coupling_uses_singular_values() {
        let s = random_nonneg_sym(4, 10).row_normalize();
        let b = laplacian_spectral_bracket(&s).unwrap();
        let sv = nalgebra_singular(&laplacian(&s).unwrap());
        assert!((b.lambda_max - sv[9]).abs() <= 1e-9 * sv[9]);
        assert!((b.lambda_min - sv[0]).abs() <= 1e-7);
    }

    #[test]
    fn power_iteration_on_large_input() {
        let s = random_nonneg_sym(5, 80);
        let b = laplacian_spectral_bracket(&s).unwrap();
        let sv = nalgebra_singular(&laplacian(&s).unwrap());
        assert!((b.lambda_max - sv[79]).abs() <= 1e-6 * sv[79], "{} vs {}", b.lambda_max, sv[79]);
        assert!(b.lambda_min <= 1e-3, "{}", b.lambda_min);
    }

    proptest::proptest! {
        #[test]
        fn bracket_ordered_and_kernel_detected(seed in 0u64..200, n in 2usize..12) {
            let b = laplacian_spectral_bracket(&random_nonneg_sym(seed, n)).unwrap();
            proptest::prop_assert!(0.0 <= b.lambda_min && b.lambda_min <= b.lambda_max);
            proptest::prop_assert!(b.lambda_min <= 1e-7);
        }
    }
}
