//! Group whitening of a single sample: the `g × c` grouped output has zero
//! row means and identity row covariance.

use normkit::checks::group_violation;
use normkit::norm::{group_divide, gw_forward, GroupSpec};
use normkit::whitening::WhiteningConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GroupSpec::new(12, 3)?;
    let x: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 + 0.1 * i as f64).collect();

    for (name, cfg) in [("zca", WhiteningConfig::zca().with_eps(1e-12)), ("itn T=5", WhiteningConfig::itn(5).with_eps(1e-12))] {
        let (y, _) = gw_forward(&x, &spec, &cfg)?;
        let v = group_violation(&y, &spec)?;
        println!("{name}: mean violation {:.1e}, covariance violation {:.1e}", v.mean, v.cov);
        let grouped = group_divide(&y, &spec)?;
        for r in 0..grouped.rows() {
            let row: Vec<String> = grouped.row(r).iter().map(|v| format!("{v:+.3}")).collect();
            println!("  [{}]", row.join(" "));
        }
    }
    Ok(())
}
