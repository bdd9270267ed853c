use alloc::vec;
use alloc::vec::Vec;

use super::DenoiserModel;
use crate::error::{invalid_arg, shape_err, Result};
use crate::linalg::{IndexSet, Matrix};
use crate::math::sigmoid;

pub(crate) struct BlockCache {
    pub h_in: Matrix,
    pub u: Matrix,
    /// `[γ | β]`
    pub fs: Matrix,
    pub v: Matrix,
    pub a: Matrix,
}

/// Activations of a batched forward pass.
pub(crate) struct Cache {
    pub x: Matrix,
    pub emb: Matrix,
    pub blocks: Vec<BlockCache>,
    pub h_final: Matrix,
    pub out: Matrix,
}

impl Cache {
    /// Input activation of each layer, in layout order.
    fn layer_inputs(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.x];
        for b in &self.blocks {
            v.push(&self.emb);
            v.push(&b.h_in);
            v.push(&b.a);
        }
        v.push(&self.h_final);
        v
    }
}

/// Pre-activation cotangents `∂/∂z_L` for every layer, one row per
/// cotangent row. Row `r` belongs to sample `r / rows_per_sample`.
pub(crate) struct Backward {
    pub dz: Vec<Matrix>,
    pub rows_per_sample: usize,
}

#[inline]
fn silu_grad(v: f64) -> f64 {
    let s = sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

impl DenoiserModel {
    /// Reverse pass for cotangent rows `g` (`R × d`, `R = n·k`).
    pub(crate) fn backward(&self, cache: &Cache, g: Matrix, rows_per_sample: usize) -> Result<Backward> {
        let k = rows_per_sample;
        let n = cache.out.rows();
        if g.rows() != n * k || g.cols() != self.config.data_dim {
            return Err(shape_err!("cotangent {:?} for {} samples x {} rows", g.shape(), n, k));
        }
        let h = self.config.hidden;
        let n_layers = self.params.layout().len();
        let mut dz: Vec<Option<Matrix>> = (0..n_layers).map(|_| None).collect();
        let mut dh = g.matmul(&self.weight(n_layers - 1))?;
        dz[n_layers - 1] = Some(g);
        let mut dv = vec![0.0; h];
        for (b, bc) in cache.blocks.iter().enumerate().rev() {
            let base = 1 + 3 * b;
            // The residual stream passes `dh` straight to fc2's output.
            let dz2 = dh.clone();
            let da = dz2.matmul(&self.weight(base + 2))?;
            let rows = da.rows();
            let mut du = Matrix::zeros(rows, h);
            let mut dfs = Matrix::zeros(rows, 2 * h);
            for r in 0..rows {
                let s = r / k;
                let (vr, ur, fr) = (bc.v.row(s), bc.u.row(s), bc.fs.row(s));
                let dar = da.row(r);
                let dur = du.row_mut(r);
                for j in 0..h {
                    dv[j] = dar[j] * silu_grad(vr[j]);
                    dur[j] = dv[j] * (1.0 + fr[j]);
                }
                let dfr = dfs.row_mut(r);
                for j in 0..h {
                    dfr[j] = dv[j] * ur[j];
                    dfr[h + j] = dv[j];
                }
            }
            Matrix::gemm_into(&mut dh, 1.0, &du, false, &self.weight(base + 1), false, 1.0)?;
            dz[base + 2] = Some(dz2);
            dz[base + 1] = Some(du);
            dz[base] = Some(dfs);
        }
        dz[0] = Some(dh);
        Ok(Backward { dz: dz.into_iter().map(|m| m.expect("every layer visited")).collect(), rows_per_sample: k })
    }

    /// Parameter gradient `Σ_r ∂/∂θ` from a backward with one row per sample.
    pub(crate) fn accumulate_gradient(&self, cache: &Cache, back: &Backward) -> Result<Vec<f64>> {
        if back.rows_per_sample != 1 {
            return Err(invalid_arg!("gradient accumulation needs one cotangent row per sample"));
        }
        let mut grad = vec![0.0; self.param_count()];
        for ((entry, dz), input) in self.params.layout().iter().zip(&back.dz).zip(cache.layer_inputs()) {
            let mut dw = Matrix::zeros(entry.fan_out, entry.fan_in);
            Matrix::gemm_into(&mut dw, 1.0, dz, true, input, false, 0.0)?;
            grad[entry.weight_range()].copy_from_slice(dw.as_slice());
            let gb = &mut grad[entry.bias_range()];
            for r in 0..dz.rows() {
                for (g, v) in gb.iter_mut().zip(dz.row(r)) {
                    *g += v;
                }
            }
        }
        Ok(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ColumnRef {
    layer: u32,
    out: u32,
    /// `u32::MAX` for a bias column.
    input: u32,
}

/// Precomputed location of each selected parameter inside the layer table.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    cols: Vec<ColumnRef>,
    indices: IndexSet,
}

impl ColumnMap {
    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn indices(&self) -> &IndexSet {
        &self.indices
    }
}

/// Training batch of clean samples with their step and noise draws.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x0: Matrix,
    pub t: Vec<usize>,
    pub eps: Matrix,
}

impl DenoiserModel {
    pub fn column_map(&self, indices: &IndexSet) -> Result<ColumnMap> {
        let p = self.param_count();
        if indices.universe() != p {
            return Err(invalid_arg!("index set over {} parameters for a {}-parameter model", indices.universe(), p));
        }
        let layout = self.params.layout();
        let mut cols = Vec::with_capacity(indices.len());
        let mut layer = 0;
        for &q in indices.as_slice() {
            while !layout[layer].range().contains(&q) {
                layer += 1;
            }
            let e = &layout[layer];
            let local = q - e.offset;
            let col = if local < e.weight_len() {
                ColumnRef { layer: layer as u32, out: (local / e.fan_in) as u32, input: (local % e.fan_in) as u32 }
            } else {
                ColumnRef { layer: layer as u32, out: (local - e.weight_len()) as u32, input: u32::MAX }
            };
            cols.push(col);
        }
        Ok(ColumnMap { cols, indices: indices.clone() })
    }

    fn gather_columns(&self, cache: &Cache, back: &Backward, map: &ColumnMap) -> Matrix {
        let inputs = cache.layer_inputs();
        let k = back.rows_per_sample;
        let rows = back.dz[0].rows();
        let mut j = Matrix::zeros(rows, map.len());
        for r in 0..rows {
            let s = r / k;
            let jr = j.row_mut(r);
            for (c, col) in map.cols.iter().enumerate() {
                let dz = back.dz[col.layer as usize][(r, col.out as usize)];
                jr[c] = if col.input == u32::MAX { dz } else { dz * inputs[col.layer as usize][(s, col.input as usize)] };
            }
        }
        j
    }

    /// Predictions and the selected Jacobian columns for a batch of states.
    ///
    /// Returns `ε̂` (`n × d`) and `J_I` stacked by sample (`n·d × m`): rows
    /// `i·d..(i+1)·d` are `∂ε̂(x_i, t_i)/∂θ_I`.
    pub fn jacobian_columns_batch(&self, xs: &Matrix, ts: &[usize], map: &ColumnMap) -> Result<(Matrix, Matrix)> {
        let cache = self.forward_cached(xs, ts)?;
        let (n, d) = (xs.rows(), self.config.data_dim);
        let mut g = Matrix::zeros(n * d, d);
        for i in 0..n {
            for k in 0..d {
                g[(i * d + k, k)] = 1.0;
            }
        }
        let back = self.backward(&cache, g, d)?;
        let j = self.gather_columns(&cache, &back, map);
        Ok((cache.out, j))
    }

    /// `∂ε̂(x, t)/∂θ` for every parameter (`d × p`).
    pub fn param_jacobian(&self, x: &[f64], t: usize) -> Result<Matrix> {
        let full = IndexSet::full(self.param_count())?;
        self.param_jacobian_columns(x, t, &full)
    }

    /// The `I` columns of [`param_jacobian`](Self::param_jacobian).
    pub fn param_jacobian_columns(&self, x: &[f64], t: usize, indices: &IndexSet) -> Result<Matrix> {
        let map = self.column_map(indices)?;
        let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.jacobian_columns_batch(&xs, &[t], &map)?.1)
    }

    /// Mean over the batch of `‖ε_θ(x_t, t) − ε‖²/d` and its exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch, schedule: &crate::diffusion::DiffusionSchedule) -> Result<(f64, Vec<f64>)> {
        let xt = noised_inputs(batch, schedule)?;
        let cache = self.forward_cached(&xt, &batch.t)?;
        let (n, d) = batch.eps.shape();
        let scale = 1.0 / (n * d) as f64;
        let mut loss = 0.0;
        let mut g = Matrix::zeros(n, d);
        for i in 0..n {
            for k in 0..d {
                let r = cache.out[(i, k)] - batch.eps[(i, k)];
                loss += r * r;
                g[(i, k)] = 2.0 * r * scale;
            }
        }
        let back = self.backward(&cache, g, 1)?;
        Ok((loss * scale, self.accumulate_gradient(&cache, &back)?))
    }

    /// Batch loss without the gradient.
    pub fn loss(&self, batch: &Batch, schedule: &crate::diffusion::DiffusionSchedule) -> Result<f64> {
        let xt = noised_inputs(batch, schedule)?;
        let out = self.forward_batch(&xt, &batch.t)?;
        let (n, d) = batch.eps.shape();
        let s: f64 = out.as_slice().iter().zip(batch.eps.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(s / (n * d) as f64)
    }
}

pub(crate) fn noised_inputs(batch: &Batch, schedule: &crate::diffusion::DiffusionSchedule) -> Result<Matrix> {
    let (n, d) = batch.x0.shape();
    if n == 0 {
        return Err(invalid_arg!("empty batch"));
    }
    if batch.eps.shape() != (n, d) || batch.t.len() != n {
        return Err(shape_err!("batch parts disagree: x0 {:?}, eps {:?}, {} steps", (n, d), batch.eps.shape(), batch.t.len()));
    }
    let mut xt = Matrix::zeros(n, d);
    for i in 0..n {
        let row = crate::diffusion::forward_noising(schedule, batch.x0.row(i), batch.t[i], batch.eps.row(i))?;
        xt.row_mut(i).copy_from_slice(&row);
    }
    Ok(xt)
}
