//! Percentile condition numbers of normalized features from a random ReLU
//! network, for growing group numbers.

use normkit::harness::gen_gaussian_features;
use normkit::metrics::condition_number_p;
use normkit::norm::{NormKind, NormLayer};
use normkit::linalg::Mat;
use normkit::whitening::WhiteningMethod;

fn kappa(y: &Mat) -> Result<f64, normkit::metrics::MetricsError> {
    condition_number_p(y, 0.9).map(|r| r.kappa_p)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (d, n) = (128, 512);
    let x = gen_gaussian_features(d, n, 2, 0);
    println!("base   kappa_90 {:.2}", kappa(&x)?);
    let bn = NormLayer::new(NormKind::Bn, d)?.forward_train(&x)?.0;
    println!("bn     kappa_90 {:.2}", kappa(&bn)?);
    println!("g    gn        gw-itn");
    for g in [1, 2, 4, 8] {
        let gn = NormLayer::new(NormKind::Gn { groups: g }, d)?.forward_train(&x)?.0;
        let gw = NormLayer::new(NormKind::gw(g, WhiteningMethod::Itn), d)?.forward_train(&x)?.0;
        println!("{g:<4} {:<9.2} {:.2}", kappa(&gn)?, kappa(&gw)?);
    }
    Ok(())
}
