//! FiLM-residual MLP noise predictor with hand-written reverse mode.
//!
//! ```text
//! e      = [sin(t·ω), cos(t·ω)]                      ω_j = T^{-j/(E/2-1)}
//! h      = W_lift x + b_lift
//! block:   [γ, β] = W_film e + b_film
//!          u = W_1 h + b_1,  v = u ⊙ (1 + γ) + β,  h ← h + W_2 silu(v) + b_2
//! ε̂      = W_head h + b_head
//! ```

mod autodiff;
mod params;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Uniform};

pub use autodiff::{Batch, ColumnMap};
pub(crate) use autodiff::noised_inputs;
pub use params::{LayerEntry, ParamVector};

use crate::diffusion::EpsModel;
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::linalg::{IndexSet, Matrix};
use crate::math::{cos, pow, sigmoid, sin, sqrt};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub data_dim: usize,
    pub hidden: usize,
    pub n_blocks: usize,
    pub time_embed_dim: usize,
    pub total_steps: usize,
}

impl ModelConfig {
    /// Two blocks and a 32-dim time embedding.
    pub fn standard(data_dim: usize, hidden: usize, total_steps: usize) -> Self {
        Self { data_dim, hidden, n_blocks: 2, time_embed_dim: 32, total_steps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden == 0 || self.total_steps == 0 {
            return Err(invalid_arg!("model dimensions must be positive: {self:?}"));
        }
        if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(invalid_arg!("time embedding dimension must be even and >= 2, got {}", self.time_embed_dim));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerEntry> {
        let (d, h, e) = (self.data_dim, self.hidden, self.time_embed_dim);
        let mut shapes = Vec::new();
        shapes.push((String::from("lift"), d, h));
        for b in 0..self.n_blocks {
            shapes.push((format!("block{b}.film"), e, 2 * h));
            shapes.push((format!("block{b}.fc1"), h, h));
            shapes.push((format!("block{b}.fc2"), h, h));
        }
        shapes.push((String::from("head"), h, d));
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, fan_in, fan_out)| {
                let entry = LayerEntry { name, offset, fan_in, fan_out };
                offset += entry.len();
                entry
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerEntry::len).sum()
    }

    /// `hidden·d + d`
    pub fn head_param_count(&self) -> usize {
        self.hidden * self.data_dim + self.data_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    config: ModelConfig,
    params: ParamVector,
    freqs: Vec<f64>,
}

impl DenoiserModel {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamVector::zeros(config.layout())?;
        Ok(Self::assemble(config, params))
    }

    /// Symmetric uniform init with bound `1/√fan_in`; the head uses a tenth
    /// of that.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = rng_from_seed(seed);
        let layout = model.params.layout().to_vec();
        let n = layout.len();
        for (i, e) in layout.iter().enumerate() {
            let mut bound = 1.0 / sqrt(e.fan_in as f64);
            if i + 1 == n {
                bound *= 0.1;
            }
            let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
            for v in &mut model.params.values_mut()[e.range()] {
                *v = dist.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        if params.layout() != config.layout().as_slice() {
            return Err(shape_err!("parameter layout does not match the model configuration"));
        }
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: ModelConfig, params: ParamVector) -> Self {
        let half = config.time_embed_dim / 2;
        let steps = config.total_steps as f64;
        let freqs = (0..half)
            .map(|j| if half == 1 { 1.0 } else { pow(steps, -(j as f64) / (half - 1) as f64) })
            .collect();
        Self { config, params, freqs }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Copy of the model with different parameter values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Ok(Self { config: self.config, params: self.params.with_values(values)?, freqs: self.freqs.clone() })
    }

    /// Index set of the output head (weight and bias).
    pub fn last_layer_indices(&self) -> IndexSet {
        let head = self.params.head();
        IndexSet::range(head.offset, head.len(), self.param_count()).expect("head lies inside the layout")
    }

    pub fn time_embedding(&self, t: usize) -> Vec<f64> {
        let half = self.freqs.len();
        let mut out = alloc::vec![0.0; 2 * half];
        for (j, &w) in self.freqs.iter().enumerate() {
            let a = t as f64 * w;
            out[j] = sin(a);
            out[half + j] = cos(a);
        }
        out
    }

    fn check_steps(&self, ts: &[usize]) -> Result<()> {
        if let Some(&t) = ts.iter().find(|&&t| t == 0 || t > self.config.total_steps) {
            return Err(invalid_arg!("step {t} outside 1..={}", self.config.total_steps));
        }
        Ok(())
    }

    /// ε̂ for each row of `xs` at the matching step in `ts`.
    pub fn forward_batch(&self, xs: &Matrix, ts: &[usize]) -> Result<Matrix> {
        Ok(self.forward_cached(xs, ts)?.out)
    }

    pub fn forward(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward_batch(&xs, &[t])?.into_vec())
    }

    fn weight(&self, layer: usize) -> Matrix {
        let e = &self.params.layout()[layer];
        Matrix::from_vec(e.fan_out, e.fan_in, self.params.values()[e.weight_range()].to_vec()).expect("layout shape")
    }

    fn bias(&self, layer: usize) -> &[f64] {
        let e = &self.params.layout()[layer];
        &self.params.values()[e.bias_range()]
    }

    fn affine(&self, layer: usize, input: &Matrix) -> Matrix {
        let mut z = input.matmul_nt(&self.weight(layer)).expect("layer shapes");
        let b = self.bias(layer);
        for i in 0..z.rows() {
            for (v, bi) in z.row_mut(i).iter_mut().zip(b) {
                *v += bi;
            }
        }
        z
    }

    pub(crate) fn forward_cached(&self, xs: &Matrix, ts: &[usize]) -> Result<autodiff::Cache> {
        let (n, d) = xs.shape();
        if d != self.config.data_dim {
            return Err(shape_err!("input has {d} columns, model expects {}", self.config.data_dim));
        }
        if ts.len() != n {
            return Err(shape_err!("{} steps for {} inputs", ts.len(), n));
        }
        self.check_steps(ts)?;
        let h = self.config.hidden;
        let e_dim = self.config.time_embed_dim;
        let mut emb = Matrix::zeros(n, e_dim);
        for (i, &t) in ts.iter().enumerate() {
            emb.row_mut(i).copy_from_slice(&self.time_embedding(t));
        }
        let mut hcur = self.affine(0, xs);
        let mut blocks = Vec::with_capacity(self.config.n_blocks);
        for b in 0..self.config.n_blocks {
            let base = 1 + 3 * b;
            let fs = self.affine(base, &emb);
            let u = self.affine(base + 1, &hcur);
            let mut v = Matrix::zeros(n, h);
            let mut a = Matrix::zeros(n, h);
            for i in 0..n {
                let (fr, ur) = (fs.row(i), u.row(i));
                let vr = v.row_mut(i);
                for j in 0..h {
                    vr[j] = ur[j] * (1.0 + fr[j]) + fr[h + j];
                }
                let vr = v.row(i).to_vec();
                for (aj, vj) in a.row_mut(i).iter_mut().zip(&vr) {
                    *aj = vj * sigmoid(*vj);
                }
            }
            let z2 = self.affine(base + 2, &a);
            let mut next = hcur.clone();
            next.add_scaled(1.0, &z2)?;
            blocks.push(autodiff::BlockCache { h_in: hcur, u, fs, v, a });
            hcur = next;
        }
        let out = self.affine(self.params.layout().len() - 1, &hcur);
        if !out.is_finite() {
            return Err(Error::NumericalBreakdown("non-finite denoiser output".into()));
        }
        Ok(autodiff::Cache { x: xs.clone(), emb, blocks, h_final: hcur, out })
    }
}

impl EpsModel for DenoiserModel {
    fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    fn predict(&self, xs: &Matrix, t: usize) -> Result<Matrix> {
        let ts = alloc::vec![t; xs.rows()];
        self.forward_batch(xs, &ts)
    }
}

#[cfg(test)]
mod tests;
