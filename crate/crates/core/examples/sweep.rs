//! Runs the grid described in `examples/sweep.toml` and prints the
//! long-format table followed by the best accuracy per learning rate.

use std::path::PathBuf;

use normkit::harness::{best_over_learning_rates, curve_rows, sweep, write_sweep_csv, ExperimentSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/sweep.toml");
    let spec = ExperimentSpec::from_toml_file(&path)?;
    let rows = curve_rows(&sweep(&spec, 0)?);
    write_sweep_csv(std::io::stdout().lock(), &rows)?;
    println!();
    for b in best_over_learning_rates(&rows) {
        if b.split == "val" {
            println!("{} m={} g={} seed={}: {:.4} at lr {}", b.method, b.m, b.g, b.seed, b.accuracy, b.lr);
        }
    }
    Ok(())
}
