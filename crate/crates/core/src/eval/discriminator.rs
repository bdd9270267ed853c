use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{invalid_arg, shape_err, Result};
use crate::linalg::Matrix;
use crate::math::{sigmoid, sqrt};
use crate::rng::sub_rng;
use crate::training::{adamw_step, AdamState, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub steps: usize,
    /// Per class; every minibatch holds `batch` real and `batch` generated rows.
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { hidden: 64, steps: 1500, batch: 128, lr: 1e-3, weight_decay: 1e-4, train_fraction: 0.7, seed: 0 }
    }
}

/// Two SiLU hidden layers and a logistic output on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    dim: usize,
    hidden: usize,
    params: Vec<f64>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

struct Forward {
    x: Matrix,
    z1: Matrix,
    a1: Matrix,
    z2: Matrix,
    a2: Matrix,
    logits: Vec<f64>,
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

impl Discriminator {
    fn param_count(dim: usize, hidden: usize) -> usize {
        hidden * dim + hidden + hidden * hidden + hidden + hidden + 1
    }

    fn init(dim: usize, hidden: usize, mean: Vec<f64>, inv_std: Vec<f64>, rng: &mut crate::rng::Rng) -> Self {
        let mut params = Vec::with_capacity(Self::param_count(dim, hidden));
        for (fan_in, count) in [(dim, hidden * dim + hidden), (hidden, hidden * hidden + hidden), (hidden, hidden + 1)] {
            let bound = 1.0 / sqrt(fan_in as f64);
            params.extend((0..count).map(|_| rng.random_range(-bound..=bound)));
        }
        Self { dim, hidden, params, mean, inv_std }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn layers(&self) -> (Matrix, &[f64], Matrix, &[f64], &[f64], f64) {
        let (d, h) = (self.dim, self.hidden);
        let p = &self.params;
        let w1 = Matrix::from_vec(h, d, p[..h * d].to_vec()).expect("layer shape");
        let o = h * d;
        let b1 = &p[o..o + h];
        let o = o + h;
        let w2 = Matrix::from_vec(h, h, p[o..o + h * h].to_vec()).expect("layer shape");
        let o = o + h * h;
        let b2 = &p[o..o + h];
        let o = o + h;
        (w1, b1, w2, b2, &p[o..o + h], p[o + h])
    }

    fn forward(&self, xs: &Matrix) -> Result<Forward> {
        if xs.cols() != self.dim {
            return Err(shape_err!("discriminator expects {} columns, got {}", self.dim, xs.cols()));
        }
        let mut x = xs.clone();
        for i in 0..x.rows() {
            for ((v, m), s) in x.row_mut(i).iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
        let (w1, b1, w2, b2, w3, b3) = self.layers();
        let affine = |input: &Matrix, w: &Matrix, b: &[f64]| -> Result<(Matrix, Matrix)> {
            let mut z = input.matmul_nt(w)?;
            for i in 0..z.rows() {
                z.row_mut(i).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = silu(*v));
            Ok((z, a))
        };
        let (z1, a1) = affine(&x, &w1, b1)?;
        let (z2, a2) = affine(&a1, &w2, b2)?;
        let logits = a2.matvec(w3)?.into_iter().map(|v| v + b3).collect();
        Ok(Forward { x, z1, a1, z2, a2, logits })
    }

    /// Probability that each row is real.
    pub fn predict(&self, xs: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(xs)?.logits.into_iter().map(sigmoid).collect())
    }

    /// Mean binary cross-entropy and its gradient.
    fn loss_and_grad(&self, xs: &Matrix, labels: &[bool]) -> Result<(f64, Vec<f64>)> {
        let f = self.forward(xs)?;
        let (n, h) = (xs.rows(), self.hidden);
        let (_, _, w2, _, w3, _) = self.layers();
        let mut loss = 0.0;
        let mut dlogit = vec![0.0; n];
        for i in 0..n {
            let (z, y) = (f.logits[i], if labels[i] { 1.0 } else { 0.0 });
            loss += z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs()));
            dlogit[i] = (sigmoid(z) - y) / n as f64;
        }
        let dw3 = f.a2.matvec_t(&dlogit)?;
        let db3: f64 = dlogit.iter().sum();
        let mut dz2 = Matrix::from_fn(n, h, |i, j| dlogit[i] * w3[j]);
        dz2.as_mut_slice().iter_mut().zip(f.z2.as_slice()).for_each(|(g, z)| *g *= silu_grad(*z));
        let dw2 = dz2.matmul_tn(&f.a1)?;
        let db2: Vec<f64> = (0..h).map(|j| (0..n).map(|i| dz2[(i, j)]).sum()).collect();
        let mut dz1 = dz2.matmul(&w2)?;
        dz1.as_mut_slice().iter_mut().zip(f.z1.as_slice()).for_each(|(g, z)| *g *= silu_grad(*z));
        let dw1 = dz1.matmul_tn(&f.x)?;
        let db1: Vec<f64> = (0..h).map(|j| (0..n).map(|i| dz1[(i, j)]).sum()).collect();
        let mut grad = Vec::with_capacity(self.params.len());
        grad.extend_from_slice(dw1.as_slice());
        grad.extend(db1);
        grad.extend_from_slice(dw2.as_slice());
        grad.extend(db2);
        grad.extend(dw3);
        grad.push(db3);
        Ok((loss / n as f64, grad))
    }
}

/// A trained discriminator and its held-out scores.
#[derive(Debug, Clone)]
pub struct DiscriminatorFit {
    pub model: Discriminator,
    /// Rows of `real` / `generated` kept out of training.
    pub real_eval: Vec<usize>,
    pub generated_eval: Vec<usize>,
    pub real_eval_scores: Vec<f64>,
    pub generated_eval_scores: Vec<f64>,
    pub losses: Vec<f64>,
}

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sub_rng(seed, 0));
    let cut = (libm::round(fraction * n as f64) as usize).clamp(1, n - 1);
    let eval = order.split_off(cut);
    (order, eval)
}

/// Trains real-vs-generated on a train/eval split of each class. Classes of
/// equal size share one permutation.
pub fn train_discriminator(real: &Matrix, generated: &Matrix, config: &DiscriminatorConfig) -> Result<DiscriminatorFit> {
    let d = real.cols();
    if generated.cols() != d {
        return Err(shape_err!("real data has {d} columns, generated {}", generated.cols()));
    }
    if real.rows() < 2 || generated.rows() < 2 {
        return Err(invalid_arg!("each class needs at least two rows"));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) || config.hidden == 0 || config.batch == 0 {
        return Err(invalid_arg!("invalid discriminator configuration {config:?}"));
    }
    let (real_train, real_eval) = split(real.rows(), config.train_fraction, config.seed);
    let (gen_train, generated_eval) = split(generated.rows(), config.train_fraction, config.seed);

    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    let rows = || real_train.iter().map(|&i| real.row(i)).chain(gen_train.iter().map(|&i| generated.row(i)));
    let count = (real_train.len() + gen_train.len()) as f64;
    rows().for_each(|r| mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / count));
    rows().for_each(|r| var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / count));
    let inv_std = var.iter().map(|v| if *v > 1e-24 { 1.0 / sqrt(*v) } else { 1.0 }).collect();

    let mut rng = sub_rng(config.seed, 1);
    let mut model = Discriminator::init(d, config.hidden, mean, inv_std, &mut rng);
    let opt = TrainConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        steps: config.steps,
        grad_clip: f64::INFINITY,
        ..TrainConfig::default()
    };
    let mut state = AdamState::new(model.params.len());
    let b = config.batch;
    let mut xs = Matrix::zeros(2 * b, d);
    let labels: Vec<bool> = (0..2 * b).map(|i| i < b).collect();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        for k in 0..b {
            let r = real_train[rng.random_range(0..real_train.len())];
            xs.row_mut(k).copy_from_slice(real.row(r));
            let g = gen_train[rng.random_range(0..gen_train.len())];
            xs.row_mut(b + k).copy_from_slice(generated.row(g));
        }
        let (loss, grad) = model.loss_and_grad(&xs, &labels)?;
        losses.push(loss);
        adamw_step(&mut model.params, &grad, &mut state, &opt, step)?;
    }
    let real_eval_scores = model.predict(&real.select_rows(&real_eval))?;
    let generated_eval_scores = model.predict(&generated.select_rows(&generated_eval))?;
    Ok(DiscriminatorFit { model, real_eval, generated_eval, real_eval_scores, generated_eval_scores, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::pooled_accuracy;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(n, d, |_, j| { let z: f64 = StandardNormal.sample(&mut rng); z + if j == 0 { shift } else { 0.0 } })
    }

    fn small() -> DiscriminatorConfig {
        DiscriminatorConfig { hidden: 16, steps: 300, batch: 32, ..DiscriminatorConfig::default() }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let xs = gaussian(6, 3, 0.0, 1);
        let labels = [true, false, true, true, false, false];
        let mut rng = rng_from_seed(2);
        let model = Discriminator::init(3, 5, vec![0.1, -0.2, 0.0], vec![1.0, 0.5, 2.0], &mut rng);
        let (_, grad) = model.loss_and_grad(&xs, &labels).unwrap();
        let h = 1e-6;
        for k in 0..model.params.len() {
            let mut plus = model.clone();
            plus.params[k] += h;
            let mut minus = model.clone();
            minus.params[k] -= h;
            let fd = (plus.loss_and_grad(&xs, &labels).unwrap().0 - minus.loss_and_grad(&xs, &labels).unwrap().0) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn identical_classes_are_indistinguishable() {
        let x = gaussian(200, 4, 0.0, 3);
        let fit = train_discriminator(&x, &x, &small()).unwrap();
        let acc = pooled_accuracy(&fit.real_eval_scores, &fit.generated_eval_scores).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn separated_classes_are_detected() {
        let fit = train_discriminator(&gaussian(200, 4, 4.0, 4), &gaussian(200, 4, -4.0, 5), &small()).unwrap();
        let acc = pooled_accuracy(&fit.real_eval_scores, &fit.generated_eval_scores).unwrap();
        assert!(acc > 0.95, "{acc}");
        assert_eq!(fit.real_eval.len(), 60);
    }

    #[test]
    fn training_is_deterministic() {
        let (a, b) = (gaussian(50, 3, 1.0, 6), gaussian(40, 3, 0.0, 7));
        let f1 = train_discriminator(&a, &b, &small()).unwrap();
        let f2 = train_discriminator(&a, &b, &small()).unwrap();
        assert_eq!(f1.model.params(), f2.model.params());
        assert!(train_discriminator(&a, &gaussian(10, 2, 0.0, 8), &small()).is_err());
    }
}
