//! Running statistics: train a batch-whitening layer on a stream of batches,
//! save its state, load it back and evaluate in EVAL mode.

use normkit::linalg::Mat;
use normkit::norm::state_io::{load_layer_state, save_layer_state};
use normkit::norm::{Mode, NormKind, NormLayer};
use normkit::whitening::WhiteningMethod;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut batch = |m: usize| Mat::from_fn(d, m, |i, _| 2.0 * i as f64 + rng.sample::<f64, _>(StandardNormal));

    let mut layer = NormLayer::new(NormKind::bw(WhiteningMethod::Itn), d)?;
    for _ in 0..200 {
        layer.forward_train(&batch(32))?;
    }
    println!("running mean {:?}", layer.state.running_mean.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("bw.nkt");
    save_layer_state(&path, &layer.state)?;
    let mut restored = NormLayer::new(layer.kind(), d)?;
    restored.state = load_layer_state(&path)?;
    restored.set_mode(Mode::Eval);
    layer.set_mode(Mode::Eval);

    let x = batch(1000);
    let (a, b) = (layer.forward_eval(&x)?, restored.forward_eval(&x)?);
    println!("restored matches original: {}", a.max_abs_diff(&b) == 0.0);
    println!("eval output row means {:?}", a.row_means().iter().map(|v| format!("{v:+.2}")).collect::<Vec<_>>());
    Ok(())
}
