use super::{LinalgError, Mat};

/// Relative off-diagonal Frobenius tolerance of the Jacobi solver.
pub const SYM_EIG_TOL: f64 = 1e-12;
pub const SYM_EIG_MAX_SWEEPS: usize = 100;

const SYMMETRY_TOL: f64 = 1e-12;

/// `Σ = V diag(λ) Vᵀ` with eigenvalues in descending order and column `i`
/// of `vectors` paired with `values[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomp {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigenDecomp {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V f(Λ) Vᵀ` for a scalar function applied to the eigenvalues.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.dim();
        let v = &self.vectors;
        let scaled = Mat::from_fn(n, n, |i, j| v[(i, j)] * f(self.values[j]));
        scaled.matmul_t(v)
    }

    pub fn reconstruct(&self) -> Mat {
        self.apply(|l| l)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps run in fixed `(p, q)` order until the off-diagonal Frobenius norm
/// drops below `tol · ‖Σ‖_F`. Eigenvalues come back in descending order;
/// each eigenvector is signed so its largest-magnitude entry is positive.
pub fn sym_eig(sigma: &Mat, tol: f64) -> Result<EigenDecomp, LinalgError> {
    if !sigma.is_square() || sigma.rows() == 0 {
        return Err(LinalgError::DimensionMismatch(format!(
            "eigendecomposition needs a non-empty square matrix, got {}x{}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    if !sigma.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let scale = sigma.max_abs();
    let asym = sigma.max_asymmetry();
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotSymmetric { max_asymmetry: asym });
    }

    let n = sigma.rows();
    let mut a = sigma.symmetrize().into_vec();
    let mut v = Mat::identity(n).into_vec();
    let target = tol * sigma.frobenius();

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off_norm(&a) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < SYM_EIG_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Entry already negligible relative to both pivots.
                let g = 100.0 * apq.abs();
                if sweeps > 4 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a[k * n + p] = new_kp;
                    a[p * n + k] = new_kp;
                    a[k * n + q] = new_kq;
                    a[q * n + k] = new_kq;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_norm(&a) <= target;
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps, off_norm: off_norm(&a) });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|k| v[k * n + src]).collect();
        let pivot = col.iter().fold(0.0_f64, |best, &x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.set_col(dst, &col);
    }
    Ok(EigenDecomp { values, vectors })
}

/// `(1/denom) · xc · xcᵀ + eps · I` for an already-centered `d × n` matrix.
pub fn covariance(xc: &Mat, denom: usize, eps: f64) -> Result<Mat, LinalgError> {
    if denom == 0 {
        return Err(LinalgError::InvalidArgument("covariance denominator must be positive".into()));
    }
    if eps < 0.0 || !eps.is_finite() {
        return Err(LinalgError::InvalidArgument(format!("eps must be finite and >= 0, got {eps}")));
    }
    let mut sigma = xc.matmul_t(xc);
    sigma.scale_in_place(1.0 / denom as f64);
    // gemm may round (i, j) and (j, i) differently
    let n = sigma.rows();
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = s;
            sigma[(j, i)] = s;
        }
    }
    sigma.add_diag(eps);
    Ok(sigma)
}

/// Reference `Σ^{-1/2} = V Λ^{-1/2} Vᵀ` from the eigendecomposition.
pub fn inv_sqrt_oracle(sigma: &Mat) -> Result<Mat, LinalgError> {
    let eig = sym_eig(sigma, SYM_EIG_TOL)?;
    let min = *eig.values.last().expect("non-empty");
    if min <= 0.0 {
        return Err(LinalgError::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(eig.apply(|l| 1.0 / l.sqrt()).symmetrize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut s = a.matmul_t(&a);
        s.add_diag(1.0);
        s.symmetrize()
    }

    #[test]
    fn diagonal_input_is_returned_sorted() {
        let e = sym_eig(&Mat::from_diag(&[4.0, 1.0]), SYM_EIG_TOL).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(e.vectors, Mat::identity(2));

        let e = sym_eig(&Mat::from_diag(&[1.0, 4.0]), SYM_EIG_TOL).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(e.vectors, Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap());
    }

    #[test]
    fn classic_two_by_two() {
        let s = Mat::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let e = sym_eig(&s, SYM_EIG_TOL).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vectors.col(0);
        let v1 = e.vectors.col(1);
        assert!((v0[0] - r).abs() < 1e-14 && (v0[1] - r).abs() < 1e-14);
        // largest-magnitude entry positive; entries tie so the first wins
        assert!((v1[0] - r).abs() < 1e-14 && (v1[1] + r).abs() < 1e-14);
    }

    #[test]
    fn random_spd_reconstructs_and_is_orthonormal() {
        for seed in 0..5 {
            let s = random_spd(8, seed);
            let e = sym_eig(&s, SYM_EIG_TOL).unwrap();
            assert!(e.reconstruct().max_abs_diff(&s) < 1e-10);
            let vtv = e.vectors.t_matmul(&e.vectors);
            assert!(vtv.max_abs_diff(&Mat::identity(8)) < 1e-10);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rejects_non_symmetric_input() {
        let s = Mat::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&s, SYM_EIG_TOL), Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn deterministic_for_fixed_input() {
        let s = random_spd(6, 11);
        assert_eq!(sym_eig(&s, SYM_EIG_TOL).unwrap(), sym_eig(&s, SYM_EIG_TOL).unwrap());
    }

    #[test]
    fn covariance_examples() {
        let z = Mat::zeros(3, 5);
        assert!(covariance(&z, 5, 1e-5).unwrap().max_abs_diff(&Mat::identity(3).scale(1e-5)) == 0.0);
        let x = Mat::from_rows(&[&[1.0, -1.0]]).unwrap();
        assert_eq!(covariance(&x, 2, 0.0).unwrap(), Mat::from_rows(&[&[1.0]]).unwrap());
        assert!(covariance(&x, 0, 0.0).is_err());
    }

    #[test]
    fn covariance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::from_fn(4, 64, |_, _| rng.gen_range(-2.0..2.0));
        let (xc, _) = x.center_rows();
        let fast = covariance(&xc, 64, 0.0).unwrap();
        let mut slow = Mat::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..64 {
                    acc += xc[(i, k)] * xc[(j, k)];
                }
                slow[(i, j)] = acc / 64.0;
            }
        }
        assert!(fast.max_abs_diff(&slow) < 1e-12);
    }

    #[test]
    fn inv_sqrt_examples() {
        assert!(inv_sqrt_oracle(&Mat::identity(3)).unwrap().max_abs_diff(&Mat::identity(3)) < 1e-15);
        let w = inv_sqrt_oracle(&Mat::from_diag(&[4.0, 1.0])).unwrap();
        assert!(w.max_abs_diff(&Mat::from_diag(&[0.5, 1.0])) < 1e-15);
        let s = random_spd(6, 5);
        let w = inv_sqrt_oracle(&s).unwrap();
        assert!(w.matmul(&s).matmul(&w).max_abs_diff(&Mat::identity(6)) < 1e-9);
        assert!(w.matmul(&s).max_abs_diff(&s.matmul(&w)) < 1e-8);
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let err = inv_sqrt_oracle(&Mat::from_diag(&[1.0, -0.5])).unwrap_err();
        assert_eq!(err, LinalgError::NotPositiveDefinite { min_eigenvalue: -0.5 });
    }
}
