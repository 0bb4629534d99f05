//! Trains a small MLP on the bundled MNIST subset with GN and GW and prints
//! per-epoch accuracy.
//!
//! ```text
//! cargo run --release --example train_mnist
//! ```

use std::path::PathBuf;

use normkit::harness::{load_idx, train_run, ModelSpec, RunConfig, TrainSpec};
use normkit::norm::NormKind;
use normkit::whitening::WhiteningMethod;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let data = load_idx(
        &dir.join("subset10k-images-idx3-ubyte.gz"),
        &dir.join("subset10k-labels-idx1-ubyte.gz"),
        Some(4000),
    )?;
    let (train, val) = data.split_tail(0.25);
    let model = ModelSpec { hidden: vec![128, 128], eps: 1e-5 };
    let opts = TrainSpec { epochs: 3, momentum: 0.9 };
    for norm in [NormKind::Gn { groups: 8 }, NormKind::gw(8, WhiteningMethod::Itn)] {
        let curve = train_run(&model, &opts, &train, val.as_ref(), &RunConfig { norm, batch_size: 32, lr: 0.01, seed: 0 });
        for e in &curve.epochs {
            println!(
                "{norm} epoch {} loss {:.4} train {:.4} val {:.4}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                e.val_accuracy.unwrap_or(f64::NAN)
            );
        }
        println!("{norm}: {:?}", curve.status);
    }
    Ok(())
}
