//! Convolutional inputs `X ∈ R^{d×m×H×W}` and the two ways of flattening
//! them for normalization.
//!
//! * [`UnrollMode::BatchAxis`]: each spatial position is a sample, giving a
//!   `d × (mHW)` matrix (BN/BW semantics).
//! * [`UnrollMode::ChannelAxis`]: each spatial position is a neuron, giving a
//!   `(dHW) × m` matrix with rows ordered channel-major then row-major over
//!   space (LN/GN/GW semantics).

use serde::{Deserialize, Serialize};

use super::NormError;
use crate::linalg::Mat;
use crate::whitening::WhiteningMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvShape {
    pub d: usize,
    pub m: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    pub fn new(d: usize, m: usize, h: usize, w: usize) -> Result<Self, NormError> {
        if d == 0 || m == 0 || h == 0 || w == 0 {
            return Err(NormError::InvalidArgument(format!("conv dims must be positive, got {d}x{m}x{h}x{w}")));
        }
        Ok(ConvShape { d, m, h, w })
    }

    pub fn len(&self) -> usize {
        self.d * self.m * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }
}

/// Dense 4-D tensor in `(d, m, H, W)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: ConvShape,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn from_vec(shape: ConvShape, data: Vec<f64>) -> Result<Self, NormError> {
        if data.len() != shape.len() {
            return Err(NormError::ShapeMismatch(format!(
                "tensor of shape {:?} needs {} values, got {}",
                shape,
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> ConvShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, ch: usize, n: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((ch * s.m + n) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn get(&self, ch: usize, n: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(ch, n, y, x)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnrollMode {
    BatchAxis,
    ChannelAxis,
}

pub fn unroll_conv(t: &Tensor4, mode: UnrollMode) -> Mat {
    let s = t.shape;
    let hw = s.spatial();
    match mode {
        // (d, m, H, W) row-major already is d × (m·H·W)
        UnrollMode::BatchAxis => Mat::from_vec(s.d, s.m * hw, t.data.clone()).expect("finite tensor data"),
        UnrollMode::ChannelAxis => Mat::from_fn(s.d * hw, s.m, |row, n| {
            let (ch, pos) = (row / hw, row % hw);
            t.data[(ch * s.m + n) * hw + pos]
        }),
    }
}

/// Inverse of [`unroll_conv`] for the same shape and mode.
pub fn reroll_conv(mat: &Mat, shape: ConvShape, mode: UnrollMode) -> Result<Tensor4, NormError> {
    let hw = shape.spatial();
    let want = match mode {
        UnrollMode::BatchAxis => (shape.d, shape.m * hw),
        UnrollMode::ChannelAxis => (shape.d * hw, shape.m),
    };
    if mat.shape() != want {
        return Err(NormError::ShapeMismatch(format!(
            "cannot reroll a {}x{} matrix into {:?} ({mode:?} expects {}x{})",
            mat.rows(),
            mat.cols(),
            shape,
            want.0,
            want.1
        )));
    }
    let data = match mode {
        UnrollMode::BatchAxis => mat.as_slice().to_vec(),
        UnrollMode::ChannelAxis => {
            let mut data = vec![0.0; shape.len()];
            for ch in 0..shape.d {
                for n in 0..shape.m {
                    for pos in 0..hw {
                        data[(ch * shape.m + n) * hw + pos] = mat[(ch * hw + pos, n)];
                    }
                }
            }
            data
        }
    };
    Tensor4::from_vec(shape, data)
}

/// Multiply-add count of group whitening on a conv input:
/// `2mHWdg` for centering and applying the whitener, plus `m·g³` per
/// whitening-matrix evaluation (ZCA, order-of-magnitude) or `m·T·g³` (ItN).
pub fn gw_cost(shape: ConvShape, g: usize, method: WhiteningMethod, iterations: usize) -> f64 {
    let (d, m, hw) = (shape.d as f64, shape.m as f64, shape.spatial() as f64);
    let g = g as f64;
    let whitener = match method {
        WhiteningMethod::Zca => m * g.powi(3),
        WhiteningMethod::Itn => m * iterations as f64 * g.powi(3),
    };
    2.0 * m * hw * d * g + whitener
}

/// Cost of GW (ItN) relative to a 3×3 convolution with `d` input and output
/// channels: `2g/(9d) + T g³ / (9 HW d²)`.
pub fn gw_relative_cost(d: usize, h: usize, w: usize, g: usize, iterations: usize) -> f64 {
    let (d, hw, g) = (d as f64, (h * w) as f64, g as f64);
    2.0 * g / (9.0 * d) + iterations as f64 * g.powi(3) / (9.0 * hw * d * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(shape: ConvShape) -> Tensor4 {
        let data = (0..shape.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        Tensor4::from_vec(shape, data).unwrap()
    }

    #[test]
    fn degenerate_spatial_dims_agree() {
        let t = tensor(ConvShape::new(3, 4, 1, 1).unwrap());
        let a = unroll_conv(&t, UnrollMode::BatchAxis);
        let b = unroll_conv(&t, UnrollMode::ChannelAxis);
        assert_eq!(a.shape(), (3, 4));
        assert_eq!(a, b);
    }

    #[test]
    fn single_channel_single_sample_is_a_row() {
        let shape = ConvShape::new(1, 1, 2, 2).unwrap();
        let t = Tensor4::from_vec(shape, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = unroll_conv(&t, UnrollMode::BatchAxis);
        assert_eq!(m, Mat::from_rows(&[&[1.0, 2.0, 3.0, 4.0]]).unwrap());
        let c = unroll_conv(&t, UnrollMode::ChannelAxis);
        assert_eq!(c.shape(), (4, 1));
    }

    #[test]
    fn channel_axis_rows_are_channel_major() {
        let shape = ConvShape::new(2, 3, 2, 2).unwrap();
        let t = tensor(shape);
        let c = unroll_conv(&t, UnrollMode::ChannelAxis);
        assert_eq!(c[(4 + 2 * 1 + 1, 2)], t.get(1, 2, 1, 1));
        let b = unroll_conv(&t, UnrollMode::BatchAxis);
        assert_eq!(b[(1, 2 * 4 + 3)], t.get(1, 2, 1, 1));
    }

    #[test]
    fn reroll_rejects_wrong_shape() {
        let shape = ConvShape::new(2, 2, 2, 2).unwrap();
        assert!(reroll_conv(&Mat::zeros(2, 4), shape, UnrollMode::BatchAxis).is_err());
        assert!(ConvShape::new(0, 1, 1, 1).is_err());
    }

    #[test]
    fn relative_cost_formula() {
        // d=64, 56x56, g=16, T=5 ⇒ 2·16/(9·64) + 5·4096/(9·3136·4096)
        let r = gw_relative_cost(64, 56, 56, 16, 5);
        let want = 32.0 / 576.0 + 5.0 * 4096.0 / (9.0 * 3136.0 * 4096.0);
        assert!((r - want).abs() < 1e-15);
        let shape = ConvShape::new(64, 8, 56, 56).unwrap();
        let conv3x3 = 9.0 * 8.0 * 3136.0 * 64.0 * 64.0;
        let ratio = gw_cost(shape, 16, WhiteningMethod::Itn, 5) / conv3x3;
        assert!((ratio - r).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn reroll_inverts_unroll(d in 1usize..4, m in 1usize..4, h in 1usize..4, w in 1usize..4, seed in 0u64..1000) {
            let shape = ConvShape::new(d, m, h, w).unwrap();
            let data = (0..shape.len()).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 7.0).collect();
            let t = Tensor4::from_vec(shape, data).unwrap();
            for mode in [UnrollMode::BatchAxis, UnrollMode::ChannelAxis] {
                let back = reroll_conv(&unroll_conv(&t, mode), shape, mode).unwrap();
                prop_assert_eq!(&back, &t);
            }
        }
    }
}
