//! ZCA versus iterative normalization on one covariance matrix.
//!
//! Prints `‖W_T − Σ^{-1/2}‖_F / ‖Σ^{-1/2}‖_F` for T = 1..8, then checks that
//! the ZCA whitener turns the data covariance into the identity.

use normkit::linalg::{covariance, inv_sqrt_oracle, Mat};
use normkit::whitening::{itn_forward, zca_forward};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (d, n) = (8, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Mat::from_fn(d, n, |i, _| (1.0 + i as f64) * rng.sample::<f64, _>(StandardNormal));
    let (xc, _) = x.center_rows();
    let sigma = covariance(&xc, n, 0.0)?;

    let oracle = inv_sqrt_oracle(&sigma)?;
    let (zca, _) = zca_forward(&sigma)?;
    println!("zca vs oracle: {:.2e}", zca.max_abs_diff(&oracle));

    println!("T  relative error");
    for t in 1..=8 {
        let (w, _) = itn_forward(&sigma, t)?;
        println!("{t}  {:.3e}", w.sub(&zca).frobenius() / zca.frobenius());
    }

    let white = zca.matmul(&xc);
    let mut cov = covariance(&white, n, 0.0)?;
    cov.add_diag(-1.0);
    println!("max |cov(ZCA x) - I| = {:.2e}", cov.max_abs());
    Ok(())
}
