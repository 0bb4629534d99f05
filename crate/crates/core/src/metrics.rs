//! Feature instruments: percentile condition numbers of the output
//! covariance, entropy-based diversity over 2-D projections, and bivariate
//! histograms.
//!
//! Diversity is reported as Shannon entropy `Γ = −Σ pᵢ log pᵢ` (natural
//! log), so larger means more diverse and `0 ≤ Γ ≤ log T²`.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::linalg::{covariance, sym_eig, LinalgError, Mat, SYM_EIG_TOL};

pub const DEFAULT_DIVERSITY_BINS: usize = 100;
pub const DEFAULT_DIVERSITY_PAIRS: usize = 50;
/// Eigenvalues at or below this fraction of `λ_max` are treated as zero.
const DEGENERATE_REL_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv output failed: {0}")]
    Csv(String),
}

impl From<csv::Error> for MetricsError {
    fn from(e: csv::Error) -> Self {
        MetricsError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub p: f64,
    /// 1-based rank `⌈p·d⌉` of the eigenvalue in the denominator.
    pub rank: usize,
    /// `λ_max / λ_p`; `+∞` when `λ_p` is (numerically) zero.
    pub kappa_p: f64,
    pub degenerate: bool,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// `⌈p·d⌉`, robust to `p·d` landing a rounding error above an integer.
pub fn percentile_rank(p: f64, d: usize) -> usize {
    let x = p * d as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (k as usize).clamp(1, d)
}

/// `κ_p = λ_max / λ_⌈pd⌉` of the covariance of `xhat` (rows = dimensions,
/// columns = samples).
pub fn condition_number_p(xhat: &Mat, p: f64) -> Result<ConditioningReport, MetricsError> {
    let (d, n) = xhat.shape();
    if n < 2 {
        return Err(MetricsError::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(MetricsError::InvalidArgument(format!("p must lie in (0, 1], got {p}")));
    }
    let (xc, _) = xhat.center_rows();
    let eig = sym_eig(&covariance(&xc, n, 0.0)?, SYM_EIG_TOL)?;
    let rank = percentile_rank(p, d);
    let (lmax, lp) = (eig.values[0], eig.values[rank - 1]);
    let degenerate = !(lp > DEGENERATE_REL_TOL * lmax.abs()) || lmax <= 0.0;
    let kappa_p = if degenerate { f64::INFINITY } else { lmax / lp };
    Ok(ConditioningReport { p, rank, kappa_p, degenerate, eigenvalues: eig.values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntropy {
    pub dims: (usize, usize),
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub bins: usize,
    pub pair_count: usize,
    pub gamma: f64,
    pub per_pair: Vec<PairEntropy>,
    /// Dimensions with a single distinct value (they occupy one bin).
    pub constant_dims: Vec<usize>,
}

#[inline]
fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let t = ((v - lo) / (hi - lo) * bins as f64).floor();
    // right-closed final bin
    (t.max(0.0) as usize).min(bins - 1)
}

fn max_abs_scaled(features: &Mat) -> (Mat, Vec<usize>) {
    let mut scaled = features.clone();
    let mut constant = Vec::new();
    for i in 0..features.rows() {
        let row = features.row(i);
        let amax = row.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if row.iter().all(|&v| v == row[0]) {
            constant.push(i);
        }
        if amax > 0.0 {
            scaled.row_mut(i).iter_mut().for_each(|v| *v /= amax);
        }
    }
    (scaled, constant)
}

fn entropy(counts: &[u64], total: u64) -> f64 {
    let n = total as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>();
    if h == 0.0 {
        0.0
    } else {
        -h
    }
}

/// Γ averaged over up to `pair_count` distinct dimension pairs, each
/// histogrammed into `bins × bins` equal cells over `[−1, 1]²` after
/// scaling every dimension by its maximum absolute value.
pub fn diversity(features: &Mat, bins: usize, pair_count: usize, seed: u64) -> Result<DiversityReport, MetricsError> {
    let (d, n) = features.shape();
    if n == 0 {
        return Err(MetricsError::InvalidArgument("diversity of zero samples".into()));
    }
    if d < 2 {
        return Err(MetricsError::InvalidArgument(format!("need at least 2 dimensions to form pairs, got {d}")));
    }
    if bins == 0 || pair_count == 0 {
        return Err(MetricsError::InvalidArgument("bins and pair count must be positive".into()));
    }
    let (scaled, constant_dims) = max_abs_scaled(features);

    let total_pairs = d * (d - 1) / 2;
    let pair_at = |k: usize| {
        // k-th pair (a, b), a < b, in row-major order of the upper triangle
        let mut a = 0;
        let mut k = k;
        while k >= d - 1 - a {
            k -= d - 1 - a;
            a += 1;
        }
        (a, a + 1 + k)
    };
    let picks: Vec<usize> = if total_pairs <= pair_count {
        (0..total_pairs).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, total_pairs, pair_count).into_vec();
        v.sort_unstable();
        v
    };

    let mut counts = vec![0u64; bins * bins];
    let per_pair: Vec<PairEntropy> = picks
        .into_iter()
        .map(|k| {
            let (a, b) = pair_at(k);
            counts.iter_mut().for_each(|c| *c = 0);
            for (&u, &v) in scaled.row(a).iter().zip(scaled.row(b)) {
                counts[bin_of(u, -1.0, 1.0, bins) * bins + bin_of(v, -1.0, 1.0, bins)] += 1;
            }
            PairEntropy { dims: (a, b), entropy: entropy(&counts, n as u64) }
        })
        .collect();
    let gamma = per_pair.iter().map(|p| p.entropy).sum::<f64>() / per_pair.len() as f64;
    Ok(DiversityReport { bins, pair_count: per_pair.len(), gamma, per_pair, constant_dims })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub dims: (usize, usize),
    pub bins: usize,
    /// `bins + 1` edges shared by both axes.
    pub edges: Vec<f64>,
    /// `counts[i][j]`: samples with dim `a` in bin `i` and dim `b` in bin `j`.
    pub counts: Vec<Vec<u64>>,
    pub marginal_a: Vec<u64>,
    pub marginal_b: Vec<u64>,
}

impl Histogram2D {
    pub fn total(&self) -> u64 {
        self.marginal_a.iter().sum()
    }

    /// Dense CSV: the header carries the lower edges of the `b` bins, each
    /// row starts with the lower edge of its `a` bin.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![format!("dim{}\\dim{}", self.dims.0, self.dims.1)];
        header.extend(self.edges[..self.bins].iter().map(|e| e.to_string()));
        out.write_record(&header)?;
        for (i, row) in self.counts.iter().enumerate() {
            let mut rec = vec![self.edges[i].to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| MetricsError::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Histogram of two dimensions over the square `[−r, r]²`, `r` the largest
/// absolute value among them (1 if both are zero).
pub fn bivariate_histogram(features: &Mat, dims: (usize, usize), bins: usize) -> Result<Histogram2D, MetricsError> {
    let d = features.rows();
    if dims.0 >= d || dims.1 >= d {
        return Err(MetricsError::InvalidArgument(format!("dims {dims:?} out of range for {d} dimensions")));
    }
    if bins == 0 {
        return Err(MetricsError::InvalidArgument("bins must be positive".into()));
    }
    let (ra, rb) = (features.row(dims.0), features.row(dims.1));
    let r = ra.iter().chain(rb).fold(0.0_f64, |a, v| a.max(v.abs()));
    let r = if r > 0.0 { r } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|k| -r + 2.0 * r * k as f64 / bins as f64).collect();
    let mut counts = vec![vec![0u64; bins]; bins];
    for (&u, &v) in ra.iter().zip(rb) {
        counts[bin_of(u, -r, r, bins)][bin_of(v, -r, r, bins)] += 1;
    }
    let marginal_a = counts.iter().map(|row| row.iter().sum()).collect();
    let marginal_b = (0..bins).map(|j| counts.iter().map(|row| row[j]).sum()).collect();
    Ok(Histogram2D { dims, bins, edges, counts, marginal_a, marginal_b })
}

/// Reads a CSV of samples (rows) by dimensions (columns) into a
/// `d × n` matrix. A first record that does not parse as numbers is taken
/// as a header.
pub fn read_feature_csv<R: Read>(r: R) -> Result<Mat, MetricsError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => samples.push(v),
            Err(_) if k == 0 => continue,
            Err(e) => return Err(MetricsError::InvalidArgument(format!("record {}: {e}", k + 1))),
        }
    }
    let d = samples.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(MetricsError::InvalidArgument("feature file has no numeric records".into()));
    }
    if let Some(k) = samples.iter().position(|s| s.len() != d) {
        return Err(MetricsError::InvalidArgument(format!("sample {k} has {} values, expected {d}", samples[k].len())));
    }
    Ok(Mat::from_fn(d, samples.len(), |i, j| samples[j][i]))
}

fn finite_or_text<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

/// One long-format metric record. Non-finite values are written as the
/// text `inf`, `-inf` or `NaN` in every output format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub config: String,
    pub metric: String,
    pub seed: u64,
    #[serde(serialize_with = "finite_or_text")]
    pub value: f64,
}

pub fn write_metric_rows<W: Write>(w: W, rows: &[MetricRow]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| MetricsError::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::{bw_forward_train, group_norm_train, GroupSpec};
    use crate::whitening::WhiteningConfig;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn percentile_rank_rounding() {
        assert_eq!(percentile_rank(0.9, 10), 9);
        assert_eq!(percentile_rank(0.9, 256), 231);
        assert_eq!(percentile_rank(1.0, 7), 7);
        assert_eq!(percentile_rank(0.01, 7), 1);
        assert_eq!(percentile_rank(0.7, 10), 7);
    }

    #[test]
    fn diagonal_covariance() {
        // rows with variances 4 and 1
        let x = Mat::from_rows(&[&[2.0, -2.0, 2.0, -2.0], &[1.0, 1.0, -1.0, -1.0]]).unwrap();
        let r = condition_number_p(&x, 1.0).unwrap();
        assert!((r.kappa_p - 4.0).abs() < 1e-12);
        assert_eq!(r.rank, 2);
        let r = condition_number_p(&x.scale(7.5), 1.0).unwrap();
        assert!((r.kappa_p - 4.0).abs() < 1e-10);
    }

    #[test]
    fn whitened_output_is_perfectly_conditioned() {
        let x = gaussian(6, 500, 1);
        let (y, _) = bw_forward_train(&x, &WhiteningConfig::zca().with_eps(1e-12), None).unwrap();
        for p in [0.1, 0.5, 0.9, 1.0] {
            assert!((condition_number_p(&y, p).unwrap().kappa_p - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rank_deficient_is_flagged() {
        let x = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]]).unwrap();
        let r = condition_number_p(&x, 1.0).unwrap();
        assert!(r.degenerate && r.kappa_p.is_infinite());
        assert!(condition_number_p(&x, 0.0).is_err());
        assert!(condition_number_p(&Mat::zeros(2, 1), 0.5).is_err());
    }

    #[test]
    fn single_cell_has_zero_entropy() {
        let x = Mat::from_fn(3, 10, |_, _| 0.25);
        let r = diversity(&x, 10, 50, 0).unwrap();
        assert_eq!(r.gamma, 0.0);
        assert_eq!(r.constant_dims, vec![0, 1, 2]);
        assert_eq!(r.pair_count, 3);
    }

    #[test]
    fn uniform_occupancy_reaches_log_cells() {
        // four points, one per quadrant of [-1,1]², two bins per axis
        let x = Mat::from_rows(&[&[-1.0, -1.0, 1.0, 1.0], &[-1.0, 1.0, -1.0, 1.0]]).unwrap();
        let r = diversity(&x, 2, 50, 0).unwrap();
        assert!((r.gamma - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn diversity_bounds_and_permutation_invariance() {
        let x = gaussian(10, 400, 2);
        let r = diversity(&x, 8, 20, 3).unwrap();
        assert_eq!(r.pair_count, 20);
        assert!(r.gamma >= 0.0 && r.gamma <= (64f64).ln());
        let perm = Mat::from_fn(10, 400, |i, j| x[(i, (j * 7) % 400)]);
        assert_eq!(diversity(&perm, 8, 20, 3).unwrap().gamma, r.gamma);
        assert!(diversity(&Mat::zeros(2, 0), 8, 20, 3).is_err());
    }

    #[test]
    fn pair_enumeration_covers_all_pairs() {
        let x = gaussian(5, 30, 4);
        let r = diversity(&x, 4, 100, 0).unwrap();
        let dims: Vec<(usize, usize)> = r.per_pair.iter().map(|p| p.dims).collect();
        let want: Vec<(usize, usize)> = (0..5).flat_map(|a| (a + 1..5).map(move |b| (a, b))).collect();
        assert_eq!(dims, want);
    }

    #[test]
    fn histogram_counts() {
        let x = gaussian(3, 257, 5);
        let h = bivariate_histogram(&x, (0, 2), 9).unwrap();
        assert_eq!(h.total(), 257);
        assert_eq!(h.marginal_b.iter().sum::<u64>(), 257);
        let one = bivariate_histogram(&x.col_block(0, 1), (0, 1), 5).unwrap();
        assert_eq!(one.counts.iter().flatten().filter(|&&c| c > 0).count(), 1);
        assert!(bivariate_histogram(&x, (0, 3), 5).is_err());
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
    }

    #[test]
    fn two_channel_groups_are_binary() {
        let x = gaussian(16, 200, 6);
        let (y, _) = group_norm_train(&x, &GroupSpec::new(16, 8).unwrap(), 1e-5).unwrap();
        let near = y.as_slice().iter().filter(|v| (v.abs() - 1.0).abs() < 0.05).count();
        assert!(near as f64 >= 0.95 * y.as_slice().len() as f64);
    }

    #[test]
    fn feature_csv_with_and_without_header() {
        let m = read_feature_csv("a,b\n1,2\n3,4\n5,6\n".as_bytes()).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.row(1), &[2.0, 4.0, 6.0]);
        assert_eq!(read_feature_csv("1,2\n3,4\n".as_bytes()).unwrap().cols(), 2);
        assert!(read_feature_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(read_feature_csv("1,2\nx,4\n".as_bytes()).is_err());
    }

    #[test]
    fn infinite_metric_is_text_in_csv_and_json() {
        let row = MetricRow { config: "c".into(), metric: "kappa".into(), seed: 0, value: f64::INFINITY };
        let mut csv_out = Vec::new();
        write_metric_rows(&mut csv_out, &[row.clone()]).unwrap();
        assert!(String::from_utf8(csv_out).unwrap().ends_with("c,kappa,0,inf\n"));
        assert_eq!(serde_json::to_value(&row).unwrap()["value"], "inf");
    }
}
