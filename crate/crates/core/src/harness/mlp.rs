//! Fully connected ReLU network `Linear → Norm → ReLU` per hidden layer,
//! a linear classifier on top, softmax cross-entropy and SGD.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::HarnessError;
use crate::linalg::Mat;
use crate::norm::{ForwardCache, Mode, NormKind, NormLayer};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    /// He initialization `N(0, 2/fan_in)`, zero bias.
    pub fn he(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        Linear { w: Mat::from_fn(fan_out, fan_in, |_, _| dist.sample(rng)), b: vec![0.0; fan_out] }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = self.w.matmul(x);
        for (i, &b) in self.b.iter().enumerate() {
            y.row_mut(i).iter_mut().for_each(|v| *v += b);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Hidden {
    linear: Linear,
    norm: NormLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    hidden: Vec<Hidden>,
    out: Linear,
    velocity: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
}

/// Mean softmax cross-entropy, its gradient with respect to the logits and
/// the number of correct argmax predictions.
pub fn softmax_cross_entropy(logits: &Mat, labels: &[usize]) -> (f64, Mat, usize) {
    let (k, m) = logits.shape();
    let mut grad = Mat::zeros(k, m);
    let mut loss = 0.0;
    let mut correct = 0;
    for j in 0..m {
        let col = logits.col(j);
        let (arg, max) = col.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let z: f64 = col.iter().map(|v| (v - max).exp()).sum();
        let y = labels[j];
        loss += z.ln() - (col[y] - max);
        if arg == y {
            correct += 1;
        }
        for i in 0..k {
            let p = (col[i] - max).exp() / z;
            grad[(i, j)] = (p - if i == y { 1.0 } else { 0.0 }) / m as f64;
        }
    }
    (loss / m as f64, grad, correct)
}

pub fn argmax_columns(logits: &Mat) -> Vec<usize> {
    (0..logits.cols())
        .map(|j| {
            let col = logits.col(j);
            col.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc }).0
        })
        .collect()
}

impl Mlp {
    pub fn new(
        input: usize,
        hidden: &[usize],
        classes: usize,
        norm: NormKind,
        eps: f64,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        if input == 0 || classes < 2 || hidden.iter().any(|&w| w == 0) {
            return Err(HarnessError::Config(format!(
                "invalid architecture: input {input}, hidden {hidden:?}, {classes} classes"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input;
        for &width in hidden {
            layers.push(Hidden { linear: Linear::he(fan_in, width, &mut rng), norm: NormLayer::with_eps(norm, width, eps)? });
            fan_in = width;
        }
        let out = Linear::he(fan_in, classes, &mut rng);
        Ok(Mlp { hidden: layers, out, velocity: Vec::new() })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.hidden.iter_mut().for_each(|h| h.norm.set_mode(mode));
    }

    /// Logits with every normalization layer in eval mode.
    pub fn forward_eval(&self, x: &Mat) -> Result<Mat, HarnessError> {
        let mut a = x.clone();
        for h in &self.hidden {
            a = h.norm.forward_eval(&h.linear.forward(&a))?.map(|v| v.max(0.0));
        }
        Ok(self.out.forward(&a))
    }

    /// Flattened parameters in a fixed order (for determinism checks).
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for h in &self.hidden {
            p.extend_from_slice(h.linear.w.as_slice());
            p.extend_from_slice(&h.linear.b);
            p.extend_from_slice(&h.norm.state.gamma);
            p.extend_from_slice(&h.norm.state.beta);
        }
        p.extend_from_slice(self.out.w.as_slice());
        p.extend_from_slice(&self.out.b);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = Vec::new();
        for h in &mut self.hidden {
            p.push(h.linear.w.as_mut_slice());
            p.push(&mut h.linear.b);
            if h.norm.kind() != NormKind::None {
                p.push(&mut h.norm.state.gamma);
                p.push(&mut h.norm.state.beta);
            }
        }
        p.push(self.out.w.as_mut_slice());
        p.push(&mut self.out.b);
        p
    }

    /// Analytic gradients of the mean cross-entropy, in [`Mlp::params_mut`]
    /// order, from one training-mode forward/backward.
    pub fn loss_and_gradients(&mut self, x: &Mat, labels: &[usize]) -> Result<(StepStats, Vec<Vec<f64>>), HarnessError> {
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut caches: Vec<ForwardCache> = Vec::with_capacity(self.hidden.len());
        let mut activ = Vec::with_capacity(self.hidden.len());
        let mut a = x.clone();
        for h in &mut self.hidden {
            let z = h.linear.forward(&a);
            let (y, cache) = h.norm.forward_train(&z)?;
            inputs.push(a);
            caches.push(cache);
            a = y.map(|v| v.max(0.0));
            activ.push(y);
        }
        let logits = self.out.forward(&a);
        let (loss, d_logits, correct) = softmax_cross_entropy(&logits, labels);
        if !loss.is_finite() {
            return Err(HarnessError::Diverged(format!("loss {loss}")));
        }

        let mut grads_rev: Vec<Vec<f64>> = Vec::new();
        grads_rev.push(d_logits.row_sums());
        grads_rev.push(d_logits.matmul_t(&a).into_vec());
        let mut d_a = self.out.w.t_matmul(&d_logits);
        for (l, h) in self.hidden.iter().enumerate().rev() {
            let d_y = Mat::from_fn(d_a.rows(), d_a.cols(), |i, j| if activ[l][(i, j)] > 0.0 { d_a[(i, j)] } else { 0.0 });
            let g = h.norm.backward(&d_y, caches.pop().expect("one cache per layer"))?;
            if h.norm.kind() != NormKind::None {
                grads_rev.push(g.d_beta);
                grads_rev.push(g.d_gamma);
            }
            grads_rev.push(g.dx.row_sums());
            grads_rev.push(g.dx.matmul_t(&inputs[l]).into_vec());
            d_a = h.linear.w.t_matmul(&g.dx);
        }
        grads_rev.reverse();
        if grads_rev.iter().flatten().any(|v| !v.is_finite()) {
            return Err(HarnessError::Diverged("non-finite gradient".into()));
        }
        Ok((StepStats { loss, correct }, grads_rev))
    }

    /// One SGD step `v ← μv + g`, `p ← p − lr·v` (plain SGD when `μ = 0`).
    pub fn train_step(&mut self, x: &Mat, labels: &[usize], lr: f64, momentum: f64) -> Result<StepStats, HarnessError> {
        let (stats, grads) = self.loss_and_gradients(x, labels)?;
        if momentum > 0.0 && self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        let mut velocity = std::mem::take(&mut self.velocity);
        for (k, (p, g)) in self.params_mut().into_iter().zip(&grads).enumerate() {
            if momentum > 0.0 {
                let v = &mut velocity[k];
                for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = momentum * *vi + gi;
                    *pi -= lr * *vi;
                }
            } else {
                for (pi, gi) in p.iter_mut().zip(g) {
                    *pi -= lr * gi;
                }
            }
        }
        self.velocity = velocity;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::whitening::WhiteningMethod;
    use rand_distr::StandardNormal;

    fn batch(d: usize, m: usize, seed: u64) -> (Mat, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(d, m, |_, _| StandardNormal.sample(&mut rng));
        (x, (0..m).map(|j| j % 3).collect())
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (loss, grad, _) = softmax_cross_entropy(&Mat::zeros(4, 2), &[0, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((grad[(0, 0)] - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert_eq!(argmax_columns(&Mat::from_rows(&[&[0.0, 2.0], &[1.0, 1.0]]).unwrap()), vec![1, 0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (x, y) = batch(5, 8, 1);
        for norm in [NormKind::None, NormKind::Bn, NormKind::Gn { groups: 2 }, NormKind::gw(2, WhiteningMethod::Zca)] {
            let mut net = Mlp::new(5, &[6, 4], 3, norm, 1e-5, 2).unwrap();
            let (_, grads) = net.clone().loss_and_gradients(&x, &y).unwrap();
            let flat: Vec<f64> = grads.concat();
            let base = net.clone();
            let h = 1e-6;
            let n = net.params_mut().iter().map(|p| p.len()).sum::<usize>();
            assert_eq!(n, flat.len());
            for idx in (0..n).step_by(7) {
                let mut loss_at = |delta: f64| {
                    net = base.clone();
                    let mut seen = 0;
                    for p in net.params_mut() {
                        if idx < seen + p.len() {
                            p[idx - seen] += delta;
                            break;
                        }
                        seen += p.len();
                    }
                    net.loss_and_gradients(&x, &y).unwrap().0.loss
                };
                let num = (loss_at(h) - loss_at(-h)) / (2.0 * h);
                let err = (num - flat[idx]).abs() / num.abs().max(flat[idx].abs()).max(1e-6);
                assert!(err < 1e-4, "{norm}: param {idx}: {num} vs {}", flat[idx]);
            }
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (x, y) = batch(5, 8, 3);
        let mut net = Mlp::new(5, &[6], 3, NormKind::Bn, 1e-5, 4).unwrap();
        let before = net.parameters();
        for _ in 0..5 {
            net.train_step(&x, &y, 0.0, 0.9).unwrap();
        }
        assert_eq!(net.parameters(), before);
    }

    #[test]
    fn eval_mode_after_training() {
        let (x, y) = batch(5, 8, 5);
        let mut net = Mlp::new(5, &[6], 3, NormKind::Bn, 1e-5, 6).unwrap();
        assert!(net.forward_eval(&x).is_err());
        net.train_step(&x, &y, 0.1, 0.0).unwrap();
        assert_eq!(net.forward_eval(&x).unwrap().shape(), (3, 8));
    }
}
