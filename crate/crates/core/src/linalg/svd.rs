use super::Mat;

const MAX_SWEEPS: usize = 60;

/// Singular values in descending order, by one-sided (Hestenes) Jacobi
/// orthogonalization of the columns of `a` (or of `aᵀ` when `a` is wide).
pub fn singular_values(a: &Mat) -> Vec<f64> {
    let tall = a.rows() >= a.cols();
    let (len, count) = if tall { (a.rows(), a.cols()) } else { (a.cols(), a.rows()) };
    let mut cols: Vec<Vec<f64>> = (0..count)
        .map(|j| if tall { a.col(j) } else { a.row(j).to_vec() })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..count {
            for q in p + 1..count {
                let (alpha, beta, gamma) = {
                    let (bp, bq) = (&cols[p], &cols[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for k in 0..len {
                        al += bp[k] * bp[k];
                        be += bq[k] * bq[k];
                        ga += bp[k] * bq[k];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let bp = &mut left[p];
                let bq = &mut right[0];
                for k in 0..len {
                    let x = bp[k];
                    let y = bq[k];
                    bp[k] = c * x - s * y;
                    bq[k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(a: &Mat, rel_tol: f64) -> usize {
    let sv = singular_values(a);
    let Some(&max) = sv.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_eig, SYM_EIG_TOL};

    #[test]
    fn diagonal_singular_values() {
        let a = Mat::from_rows(&[&[3.0, 0.0], &[0.0, -4.0], &[0.0, 0.0]]).unwrap();
        let sv = singular_values(&a);
        assert!((sv[0] - 4.0).abs() < 1e-14 && (sv[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn matches_gram_eigenvalues() {
        let a = Mat::from_fn(5, 7, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let sv = singular_values(&a);
        let gram = a.matmul_t(&a);
        let e = sym_eig(&gram, SYM_EIG_TOL).unwrap();
        for (s, l) in sv.iter().zip(&e.values) {
            assert!((s * s - l).abs() < 1e-9 * e.values[0]);
        }
    }

    #[test]
    fn rank_of_outer_product_sum() {
        let u = Mat::from_fn(6, 2, |i, j| (i + 1) as f64 * if j == 0 { 1.0 } else { -0.5 + i as f64 });
        let v = Mat::from_fn(2, 9, |i, j| ((i + 2) * (j + 1)) as f64 % 5.0 + 0.25);
        assert_eq!(numerical_rank(&u.matmul(&v), 1e-8), 2);
        assert_eq!(numerical_rank(&Mat::zeros(3, 3), 1e-8), 0);
    }
}
