//! Every normalization layer on the same batch: output statistics in TRAIN
//! mode and a finite-difference check of its backward pass.

use normkit::checks::{grad_check, GRAD_REL_TOL};
use normkit::linalg::Mat;
use normkit::norm::{NormKind, NormLayer};
use normkit::whitening::WhiteningMethod;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (d, m) = (8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Mat::from_fn(d, m, |i, _| 3.0 + i as f64 * rng.sample::<f64, _>(StandardNormal));

    let kinds = [
        NormKind::Bn,
        NormKind::Ln,
        NormKind::Gn { groups: 2 },
        NormKind::bw(WhiteningMethod::Zca),
        NormKind::bw(WhiteningMethod::Itn),
        NormKind::gw(2, WhiteningMethod::Zca),
        NormKind::gw(2, WhiteningMethod::Itn),
    ];
    println!("{:<8} {:>12} {:>12} {:>12} {}", "layer", "max|row mean|", "max|col mean|", "grad rel err", "");
    for kind in kinds {
        let mut layer = NormLayer::new(kind, d)?;
        let (y, cache) = layer.forward_train(&x)?;
        let grads = layer.backward(&Mat::from_fn(d, m, |i, j| (i + j) as f64), cache)?;
        assert!(grads.dx.is_finite());
        let row_mean = y.row_means().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let col_mean = y.transpose().row_means().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let check = grad_check(kind, d, m, 1e-5, false, 0)?;
        let verdict = if check.passes(GRAD_REL_TOL) { "ok" } else { "FAIL" };
        println!("{:<8} {row_mean:>12.1e} {col_mean:>12.1e} {:>12.1e} {verdict}", kind.to_string(), check.max_rel_err);
    }
    Ok(())
}
