//! Group division `Π` and its inverse.
//!
//! Channels are assigned to groups in contiguous blocks: group `i` holds
//! channels `i·c .. (i+1)·c`, so `Π` is a pure reshape.

use serde::{Deserialize, Serialize};

use super::NormError;
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSpec {
    d: usize,
    g: usize,
    c: usize,
}

impl GroupSpec {
    /// Fails when `g` does not divide `d`; the error carries the largest
    /// divisor of `d` not exceeding `g`.
    pub fn new(d: usize, g: usize) -> Result<Self, NormError> {
        if d == 0 || g == 0 {
            return Err(NormError::InvalidArgument(format!("channel count and group count must be positive (d={d}, g={g})")));
        }
        if d % g != 0 {
            return Err(NormError::GroupDivisibility { d, g, suggestion: suggest_group_count(d, g) });
        }
        Ok(GroupSpec { d, g, c: d / g })
    }

    /// Builds the spec from the channels-per-group count instead.
    pub fn with_group_channels(d: usize, c: usize) -> Result<Self, NormError> {
        if c == 0 || d % c != 0 {
            return Err(NormError::InvalidArgument(format!("{c} channels per group does not divide d={d}")));
        }
        GroupSpec::new(d, d / c)
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn groups(&self) -> usize {
        self.g
    }

    #[inline]
    pub fn channels_per_group(&self) -> usize {
        self.c
    }
}

/// Largest divisor of `d` that is `<= g` (the group count to fall back to
/// when `g` does not divide the channel count).
pub fn suggest_group_count(d: usize, g: usize) -> usize {
    (1..=g.min(d)).rev().find(|k| d % k == 0).unwrap_or(1)
}

/// `Π(x; g)`: a length-`d` vector to a `g × c` matrix.
pub fn group_divide(x: &[f64], spec: &GroupSpec) -> Result<Mat, NormError> {
    if x.len() != spec.d {
        return Err(NormError::ShapeMismatch(format!("expected {} channels, got {}", spec.d, x.len())));
    }
    Ok(Mat::from_vec(spec.g, spec.c, x.to_vec())?)
}

/// `Π⁻¹`: a `g × c` matrix back to a length-`d` vector.
pub fn group_merge(xg: &Mat, spec: &GroupSpec) -> Result<Vec<f64>, NormError> {
    if xg.shape() != (spec.g, spec.c) {
        return Err(NormError::ShapeMismatch(format!(
            "expected a {}x{} grouped matrix, got {}x{}",
            spec.g,
            spec.c,
            xg.rows(),
            xg.cols()
        )));
    }
    Ok(xg.as_slice().to_vec())
}

/// Batched division `R^{d×m} → R^{c×gm}`: column `j·g + i` holds group `i`
/// of sample `j`.
pub fn group_divide_batch(x: &Mat, spec: &GroupSpec) -> Result<Mat, NormError> {
    if x.rows() != spec.d {
        return Err(NormError::ShapeMismatch(format!("expected {} rows, got {}", spec.d, x.rows())));
    }
    let (g, c, m) = (spec.g, spec.c, x.cols());
    Ok(Mat::from_fn(c, g * m, |r, col| {
        let (j, i) = (col / g, col % g);
        x[(i * c + r, j)]
    }))
}

/// Inverse of [`group_divide_batch`].
pub fn group_merge_batch(z: &Mat, spec: &GroupSpec) -> Result<Mat, NormError> {
    let (g, c) = (spec.g, spec.c);
    if z.rows() != c || z.cols() % g != 0 {
        return Err(NormError::ShapeMismatch(format!(
            "expected a {c}x(g·m) grouped batch with g={g}, got {}x{}",
            z.rows(),
            z.cols()
        )));
    }
    let m = z.cols() / g;
    Ok(Mat::from_fn(spec.d, m, |ch, j| z[(ch % c, j * g + ch / c)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn contiguous_layout() {
        let spec = GroupSpec::new(4, 2).unwrap();
        let xg = group_divide(&[1.0, 2.0, 3.0, 4.0], &spec).unwrap();
        assert_eq!(xg, Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        assert_eq!(group_merge(&xg, &spec).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);

        let one = GroupSpec::new(3, 1).unwrap();
        let row = group_divide(&[5.0, 6.0, 7.0], &one).unwrap();
        assert_eq!(row.shape(), (1, 3));
        assert_eq!(group_merge(&row, &one).unwrap(), vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn divisibility_error_suggests_divisor() {
        match GroupSpec::new(12, 5) {
            Err(NormError::GroupDivisibility { suggestion, .. }) => assert_eq!(suggestion, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(suggest_group_count(9, 5), 3);
        assert_eq!(suggest_group_count(7, 4), 1);
        assert_eq!(suggest_group_count(8, 64), 8);
    }

    #[test]
    fn shape_errors() {
        let spec = GroupSpec::new(4, 2).unwrap();
        assert!(group_divide(&[1.0; 3], &spec).is_err());
        assert!(group_merge(&Mat::zeros(4, 1), &spec).is_err());
        assert!(group_merge_batch(&Mat::zeros(2, 3), &spec).is_err());
    }

    #[test]
    fn batch_division_places_groups_in_columns() {
        let spec = GroupSpec::new(4, 2).unwrap();
        let x = Mat::from_rows(&[&[1.0, 10.0], &[2.0, 20.0], &[3.0, 30.0], &[4.0, 40.0]]).unwrap();
        let z = group_divide_batch(&x, &spec).unwrap();
        assert_eq!(z, Mat::from_rows(&[&[1.0, 3.0, 10.0, 30.0], &[2.0, 4.0, 20.0, 40.0]]).unwrap());
        assert_eq!(group_merge_batch(&z, &spec).unwrap(), x);
    }

    proptest! {
        #[test]
        fn divide_merge_round_trip(xs in proptest::collection::vec(-1e3f64..1e3, 1..48), pick in 0usize..16) {
            let d = xs.len();
            let divisors: Vec<usize> = (1..=d).filter(|k| d % k == 0).collect();
            let spec = GroupSpec::new(d, divisors[pick % divisors.len()]).unwrap();
            let back = group_merge(&group_divide(&xs, &spec).unwrap(), &spec).unwrap();
            prop_assert_eq!(back, xs.clone());

            let x = Mat::from_vec(d, 1, xs).unwrap();
            let batch_back = group_merge_batch(&group_divide_batch(&x, &spec).unwrap(), &spec).unwrap();
            prop_assert_eq!(batch_back, x);
        }
    }
}
