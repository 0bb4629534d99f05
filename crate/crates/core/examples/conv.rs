//! Convolutional inputs: the two unrolled views and the relative cost of
//! group whitening.

use normkit::norm::{gw_relative_cost, reroll_conv, unroll_conv, ConvShape, NormKind, NormLayer, Tensor4, UnrollMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shape = ConvShape::new(4, 2, 3, 3)?;
    let t = Tensor4::from_vec(shape, (0..shape.len()).map(|v| (v % 7) as f64).collect())?;

    let batch_view = unroll_conv(&t, UnrollMode::BatchAxis);
    let channel_view = unroll_conv(&t, UnrollMode::ChannelAxis);
    println!("batch view {:?}, channel view {:?}", batch_view.shape(), channel_view.shape());

    let y = NormLayer::new(NormKind::Gn { groups: 2 }, channel_view.rows())?.forward_train(&channel_view)?.0;
    let back = reroll_conv(&y, shape, UnrollMode::ChannelAxis)?;
    println!("normalized tensor has shape {:?}", back.shape());

    println!("gw cost relative to the convolution, d=256, 14x14, T=5:");
    for g in [16, 32, 64] {
        println!("  g={g:<3} {:.4}", gw_relative_cost(256, 14, 14, g, 5));
    }
    Ok(())
}
