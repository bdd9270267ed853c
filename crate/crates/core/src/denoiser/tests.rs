use super::*;
use crate::diffusion::DiffusionSchedule;
use crate::rng::rng_from_seed;
use alloc::vec;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn small() -> ModelConfig {
    ModelConfig { data_dim: 3, hidden: 5, n_blocks: 2, time_embed_dim: 4, total_steps: 20 }
}

fn randn(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Straight-line evaluation of the layer equations, one scalar at a time.
fn naive_forward(model: &DenoiserModel, x: &[f64], t: usize) -> Vec<f64> {
    let c = model.config();
    let p = model.params().values();
    let layout = model.params().layout();
    let affine = |li: usize, input: &[f64]| -> Vec<f64> {
        let e = &layout[li];
        (0..e.fan_out)
            .map(|o| {
                let mut s = p[e.offset + e.weight_len() + o];
                for i in 0..e.fan_in {
                    s += p[e.offset + o * e.fan_in + i] * input[i];
                }
                s
            })
            .collect()
    };
    let half = c.time_embed_dim / 2;
    let mut emb = vec![0.0; c.time_embed_dim];
    for j in 0..half {
        let w = (c.total_steps as f64).powf(-(j as f64) / (half as f64 - 1.0));
        emb[j] = (t as f64 * w).sin();
        emb[half + j] = (t as f64 * w).cos();
    }
    let mut h = affine(0, x);
    for b in 0..c.n_blocks {
        let fs = affine(1 + 3 * b, &emb);
        let u = affine(2 + 3 * b, &h);
        let a: Vec<f64> = (0..c.hidden)
            .map(|j| {
                let v = u[j] * (1.0 + fs[j]) + fs[c.hidden + j];
                v / (1.0 + (-v).exp())
            })
            .collect();
        let z = affine(3 + 3 * b, &a);
        for j in 0..c.hidden {
            h[j] += z[j];
        }
    }
    affine(layout.len() - 1, &h)
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[test]
fn parameter_counts() {
    assert_eq!(ModelConfig::standard(10, 32, 600).param_count(), 9130);
    for (d, h, head) in [(10, 32, 330), (80, 128, 10_320), (2, 32, 66), (40, 128, 5160)] {
        let m = DenoiserModel::zeros(ModelConfig::standard(d, h, 600)).unwrap();
        assert_eq!(m.last_layer_indices().len(), head);
        assert_eq!(m.config().head_param_count(), head);
        assert_eq!(*m.last_layer_indices().as_slice().last().unwrap(), m.param_count() - 1);
    }
}

#[test]
fn zero_and_constant_networks() {
    let mut m = DenoiserModel::zeros(small()).unwrap();
    assert_eq!(m.forward(&[1.0, -2.0, 0.5], 3).unwrap(), vec![0.0; 3]);
    let head = m.params().head().clone();
    m.params_mut().values_mut()[head.bias_range()].copy_from_slice(&[0.5, -1.0, 2.0]);
    let mut rng = rng_from_seed(1);
    for v in &mut m.params_mut().values_mut()[..head.offset] {
        *v = rng.random_range(-1.0..1.0);
    }
    for t in [1, 7, 20] {
        assert_eq!(m.forward(&randn(3, t as u64), t).unwrap(), vec![0.5, -1.0, 2.0]);
    }
    assert!(m.forward(&[0.0; 3], 0).is_err());
    assert!(m.forward(&[0.0; 3], 21).is_err());
    assert!(matches!(m.forward(&[0.0; 2], 1), Err(Error::Shape(_))));
}

#[test]
fn forward_matches_naive_evaluation() {
    for (cfg, seed) in [(small(), 3), (ModelConfig::standard(10, 32, 600), 4)] {
        let m = DenoiserModel::init(cfg, seed).unwrap();
        let xs = Matrix::from_vec(4, cfg.data_dim, randn(4 * cfg.data_dim, seed + 10)).unwrap();
        let ts = [1, cfg.total_steps / 2, cfg.total_steps, 2];
        let out = m.forward_batch(&xs, &ts).unwrap();
        for i in 0..4 {
            let naive = naive_forward(&m, xs.row(i), ts[i]);
            for (a, b) in out.row(i).iter().zip(&naive) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn init_is_seeded() {
    let a = DenoiserModel::init(small(), 5).unwrap();
    let b = DenoiserModel::init(small(), 5).unwrap();
    let c = DenoiserModel::init(small(), 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let head = a.params().head();
    let bound = 0.1 / (head.fan_in as f64).sqrt();
    assert!(a.params().values()[head.range()].iter().all(|v| v.abs() <= bound));
}

fn batch_of(cfg: &ModelConfig, n: usize, seed: u64) -> Batch {
    let mut rng = rng_from_seed(seed);
    Batch {
        x0: Matrix::from_vec(n, cfg.data_dim, randn(n * cfg.data_dim, seed + 1)).unwrap(),
        t: (0..n).map(|_| rng.random_range(1..=cfg.total_steps)).collect(),
        eps: Matrix::from_vec(n, cfg.data_dim, randn(n * cfg.data_dim, seed + 2)).unwrap(),
    }
}

#[test]
fn perfect_prediction_has_zero_loss() {
    let cfg = small();
    let schedule = DiffusionSchedule::cosine(cfg.total_steps).unwrap();
    let mut m = DenoiserModel::zeros(cfg).unwrap();
    let head = m.params().head().clone();
    m.params_mut().values_mut()[head.bias_range()].copy_from_slice(&[0.3, -0.2, 0.9]);
    let mut batch = batch_of(&cfg, 3, 8);
    batch.eps = Matrix::from_fn(3, 3, |_, j| [0.3, -0.2, 0.9][j]);
    let (loss, grad) = m.loss_and_grad(&batch, &schedule).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad[head.bias_range()].iter().all(|g| *g == 0.0));
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = small();
    let schedule = DiffusionSchedule::cosine(cfg.total_steps).unwrap();
    let m = DenoiserModel::init(cfg, 11).unwrap();
    let batch = batch_of(&cfg, 1, 12);
    let (_, grad) = m.loss_and_grad(&batch, &schedule).unwrap();
    let mut rng = rng_from_seed(13);
    let h = 1e-5;
    for _ in 0..32 {
        let q = rng.random_range(0..m.param_count());
        let mut plus = m.params().values().to_vec();
        plus[q] += h;
        let mut minus = m.params().values().to_vec();
        minus[q] -= h;
        let lp = m.with_values(plus).unwrap().loss(&batch, &schedule).unwrap();
        let lm = m.with_values(minus).unwrap().loss(&batch, &schedule).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        assert!(rel_err(grad[q], fd, 1e-4) < 1e-6, "coordinate {q}: {} vs {fd}", grad[q]);
    }
}

#[test]
fn duplicated_sample_gives_same_loss_and_grad() {
    let cfg = small();
    let schedule = DiffusionSchedule::cosine(cfg.total_steps).unwrap();
    let m = DenoiserModel::init(cfg, 21).unwrap();
    let one = batch_of(&cfg, 1, 22);
    let two = Batch { x0: one.x0.vstack(&one.x0).unwrap(), t: vec![one.t[0]; 2], eps: one.eps.vstack(&one.eps).unwrap() };
    let (l1, g1) = m.loss_and_grad(&one, &schedule).unwrap();
    let (l2, g2) = m.loss_and_grad(&two, &schedule).unwrap();
    assert!((l1 - l2).abs() <= 1e-15 * l1.abs());
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-12));
    }
}

#[test]
fn zero_network_jacobian_structure() {
    let m = DenoiserModel::zeros(small()).unwrap();
    let j = m.param_jacobian(&[0.4, -1.0, 2.0], 5).unwrap();
    let head = m.params().head();
    for k in 0..3 {
        for q in 0..m.param_count() {
            let expected = if head.bias_range().contains(&q) && q - head.bias_range().start == k { 1.0 } else { 0.0 };
            // Weight columns see zero activations or zero downstream weights.
            assert_eq!(j[(k, q)], expected, "row {k} col {q}");
        }
    }
}

fn fd_jacobian_column(m: &DenoiserModel, x: &[f64], t: usize, q: usize, h: f64) -> Vec<f64> {
    let mut plus = m.params().values().to_vec();
    plus[q] += h;
    let mut minus = m.params().values().to_vec();
    minus[q] -= h;
    let fp = m.with_values(plus).unwrap().forward(x, t).unwrap();
    let fm = m.with_values(minus).unwrap().forward(x, t).unwrap();
    fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

#[test]
fn jacobian_matches_finite_differences() {
    let m = DenoiserModel::init(ModelConfig::standard(10, 32, 600), 31).unwrap();
    let x = randn(10, 32);
    let j = m.param_jacobian(&x, 250).unwrap();
    let mut rng = rng_from_seed(33);
    for _ in 0..64 {
        let (k, q) = (rng.random_range(0..10), rng.random_range(0..m.param_count()));
        let fd = fd_jacobian_column(&m, &x, 250, q, 1e-5)[k];
        assert!(rel_err(j[(k, q)], fd, 1e-4) < 1e-6, "({k},{q}): {} vs {fd}", j[(k, q)]);
    }
}

#[test]
fn jacobian_vector_product_matches_directional_derivative() {
    let m = DenoiserModel::init(small(), 41).unwrap();
    let x = randn(3, 42);
    let j = m.param_jacobian(&x, 9).unwrap();
    let v = randn(m.param_count(), 43);
    let jv = j.matvec(&v).unwrap();
    let h = 1e-6;
    let shift = |s: f64| {
        let vals: Vec<f64> = m.params().values().iter().zip(&v).map(|(p, d)| p + s * d).collect();
        m.with_values(vals).unwrap().forward(&x, 9).unwrap()
    };
    let (fp, fm) = (shift(h), shift(-h));
    for k in 0..3 {
        let fd = (fp[k] - fm[k]) / (2.0 * h);
        assert!((jv[k] - fd).abs() < 1e-8 * jv[k].abs().max(1.0), "{} vs {fd}", jv[k]);
    }
}

#[test]
fn column_selection_is_consistent() {
    let m = DenoiserModel::init(small(), 51).unwrap();
    let p = m.param_count();
    let x = randn(3, 52);
    let full = m.param_jacobian(&x, 4).unwrap();
    assert_eq!(m.param_jacobian_columns(&x, 4, &IndexSet::full(p).unwrap()).unwrap(), full);
    let i1 = IndexSet::new(vec![0, 7, 40, p - 1], p).unwrap();
    let i2 = IndexSet::new(vec![3, 41, 90], p).unwrap();
    let u = i1.union(&i2).unwrap();
    let ju = m.param_jacobian_columns(&x, 4, &u).unwrap();
    assert_eq!(ju, full.select_columns(u.as_slice()));
    let single = IndexSet::new(vec![41], p).unwrap();
    let j1 = m.param_jacobian_columns(&x, 4, &single).unwrap();
    let fd = fd_jacobian_column(&m, &x, 4, 41, 1e-5);
    for k in 0..3 {
        assert!(rel_err(j1[(k, 0)], fd[k], 1e-4) < 1e-6);
    }
    let other = IndexSet::full(p + 1).unwrap();
    assert!(matches!(m.param_jacobian_columns(&x, 4, &other), Err(Error::InvalidArgument(_))));
}

#[test]
fn batched_jacobian_rows_match_single_sample() {
    let m = DenoiserModel::init(small(), 61).unwrap();
    let xs = Matrix::from_vec(3, 3, randn(9, 62)).unwrap();
    let ts = [2, 11, 20];
    let idx = IndexSet::new(vec![1, 30, 77, m.param_count() - 2], m.param_count()).unwrap();
    let (_, jb) = m.jacobian_columns_batch(&xs, &ts, &m.column_map(&idx).unwrap()).unwrap();
    for i in 0..3 {
        let js = m.param_jacobian_columns(xs.row(i), ts[i], &idx).unwrap();
        for k in 0..3 {
            assert_eq!(jb.row(i * 3 + k), js.row(k));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_equals_jacobian_assembly(seed in 0u64..10_000, n in 1usize..=4) {
        let cfg = small();
        let schedule = DiffusionSchedule::cosine(cfg.total_steps).unwrap();
        let m = DenoiserModel::init(cfg, seed).unwrap();
        let batch = batch_of(&cfg, n, seed + 1);
        let (_, grad) = m.loss_and_grad(&batch, &schedule).unwrap();
        let xt = autodiff::noised_inputs(&batch, &schedule).unwrap();
        let mut assembled = vec![0.0; m.param_count()];
        for i in 0..n {
            let j = m.param_jacobian(xt.row(i), batch.t[i]).unwrap();
            let out = m.forward(xt.row(i), batch.t[i]).unwrap();
            let r: Vec<f64> = out.iter().zip(batch.eps.row(i)).map(|(a, b)| a - b).collect();
            let jt_r = j.matvec_t(&r).unwrap();
            let scale = 2.0 / (n * cfg.data_dim) as f64;
            for (a, v) in assembled.iter_mut().zip(jt_r) {
                *a += scale * v;
            }
        }
        for (a, b) in grad.iter().zip(&assembled) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }
}
