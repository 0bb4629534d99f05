//! Feature diversity of group-normalized Gaussian data and a bivariate
//! histogram of the `c = 2` case, written as CSV to stdout.

use normkit::linalg::Mat;
use normkit::metrics::{bivariate_histogram, diversity};
use normkit::norm::{NormKind, NormLayer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (d, n) = (16, 20_000);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Mat::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng));
    eprintln!("base  gamma {:.3}", diversity(&x, 50, 30, 0)?.gamma);
    for c in [2, 4, 8, 16] {
        let y = NormLayer::new(NormKind::Gn { groups: d / c }, d)?.forward_train(&x)?.0;
        eprintln!("c={c:<3} gamma {:.3}", diversity(&y, 50, 30, 0)?.gamma);
    }
    let y = NormLayer::new(NormKind::Gn { groups: d / 2 }, d)?.forward_train(&x)?.0;
    let hist = bivariate_histogram(&y, (0, 2), 8)?;
    hist.write_csv(std::io::stdout().lock())?;
    Ok(())
}
