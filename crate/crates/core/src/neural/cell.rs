//! Gated recurrent cell (input/forget/output gates plus candidate) and a
//! stack of such cells unrolled over a sequence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::Parameters;
use super::tensor::{sigmoid, Tensor2};
use crate::error::{Error, Result};

pub const GATES: usize = 4;
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `W_i, W_f, W_o, W_g`, each `hidden × input`.
    pub w: [Tensor2; GATES],
    /// `U_i, U_f, U_o, U_g`, each `hidden × hidden`.
    pub u: [Tensor2; GATES],
    /// `b_i, b_f, b_o, b_g`, each `1 × hidden`.
    pub b: [Tensor2; GATES],
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; GATES],
    tanh_c: Vec<f64>,
}

impl GatedCellParams {
    /// Uniform in `±1/sqrt(hidden)`, forget-gate bias 1.
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let w = std::array::from_fn(|_| Tensor2::uniform(hidden_dim, input_dim, bound, rng));
        let u = std::array::from_fn(|_| Tensor2::uniform(hidden_dim, hidden_dim, bound, rng));
        let mut b: [Tensor2; GATES] =
            std::array::from_fn(|_| Tensor2::uniform(1, hidden_dim, bound, rng));
        b[FORGET].fill(1.0);
        GatedCellParams {
            input_dim,
            hidden_dim,
            w,
            u,
            b,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GatedCellParams {
            input_dim,
            hidden_dim,
            w: std::array::from_fn(|_| Tensor2::zeros(hidden_dim, input_dim)),
            u: std::array::from_fn(|_| Tensor2::zeros(hidden_dim, hidden_dim)),
            b: std::array::from_fn(|_| Tensor2::zeros(1, hidden_dim)),
        }
    }

    /// One recurrence step; returns `(h, c)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input_dim
            || h_prev.len() != self.hidden_dim
            || c_prev.len() != self.hidden_dim
        {
            return Err(Error::Shape(format!(
                "cell {}→{} given x {}, h {}, c {}",
                self.input_dim,
                self.hidden_dim,
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        if !x.iter().chain(h_prev).chain(c_prev).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cell input".into()));
        }
        let (h, c, _) = self.step_cached(x, h_prev, c_prev);
        Ok((h, c))
    }

    pub(crate) fn step_cached(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>, StepCache) {
        let hd = self.hidden_dim;
        let gates: [Vec<f64>; GATES] = std::array::from_fn(|k| {
            let mut pre = self.b[k].data.clone();
            self.w[k].matvec_acc(x, &mut pre);
            self.u[k].matvec_acc(h_prev, &mut pre);
            if k == CANDIDATE {
                pre.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                pre.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            pre
        });
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            c[j] = gates[FORGET][j] * c_prev[j] + gates[INPUT][j] * gates[CANDIDATE][j];
            tanh_c[j] = c[j].tanh();
            h[j] = gates[OUTPUT][j] * tanh_c[j];
        }
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
        };
        (h, c, cache)
    }

    /// Backward through one step given `dL/dh` and `dL/dc` at its output.
    /// Returns `(dx, dh_prev, dc_prev)`.
    pub(crate) fn backward_step(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut GatedCellParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim;
        let g = &cache.gates;
        let mut dpre: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; hd]);
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let do_ = dh[j] * cache.tanh_c[j];
            let dct = dc[j] + dh[j] * g[OUTPUT][j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
            let di = dct * g[CANDIDATE][j];
            let df = dct * cache.c_prev[j];
            let dg = dct * g[INPUT][j];
            dc_prev[j] = dct * g[FORGET][j];
            dpre[INPUT][j] = di * g[INPUT][j] * (1.0 - g[INPUT][j]);
            dpre[FORGET][j] = df * g[FORGET][j] * (1.0 - g[FORGET][j]);
            dpre[OUTPUT][j] = do_ * g[OUTPUT][j] * (1.0 - g[OUTPUT][j]);
            dpre[CANDIDATE][j] = dg * (1.0 - g[CANDIDATE][j] * g[CANDIDATE][j]);
        }
        let mut dx = vec![0.0; self.input_dim];
        let mut dh_prev = vec![0.0; hd];
        for (k, d) in dpre.iter().enumerate() {
            grad.w[k].add_outer(d, &cache.x);
            grad.u[k].add_outer(d, &cache.h_prev);
            for (b, &v) in grad.b[k].data.iter_mut().zip(d) {
                *b += v;
            }
            self.w[k].matvec_t_acc(d, &mut dx);
            self.u[k].matvec_t_acc(d, &mut dh_prev);
        }
        (dx, dh_prev, dc_prev)
    }
}

impl Parameters for GatedCellParams {
    fn tensors(&self) -> Vec<&Tensor2> {
        self.w.iter().chain(&self.u).chain(&self.b).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        self.w
            .iter_mut()
            .chain(self.u.iter_mut())
            .chain(self.b.iter_mut())
            .collect()
    }
}

/// Stacked cells; layer `k + 1` consumes the hidden states of layer `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStack {
    pub layers: Vec<GatedCellParams>,
}

#[derive(Debug, Clone, Default)]
pub struct StackCache {
    /// `steps[layer][t]`
    steps: Vec<Vec<StepCache>>,
}

impl CellStack {
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers.max(1))
            .map(|k| {
                GatedCellParams::new(if k == 0 { input_dim } else { hidden_dim }, hidden_dim, rng)
            })
            .collect();
        CellStack { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers.last().map(|l| l.hidden_dim).unwrap_or(0)
    }

    /// Runs the sequence from a zero state; returns the top layer's final
    /// hidden state (zeros for an empty sequence).
    pub fn forward(&self, inputs: &[Vec<f64>]) -> (Vec<f64>, StackCache) {
        let mut cache = StackCache::default();
        let mut seq: Vec<Vec<f64>> = inputs.to_vec();
        for layer in &self.layers {
            let mut h = vec![0.0; layer.hidden_dim];
            let mut c = vec![0.0; layer.hidden_dim];
            let mut caches = Vec::with_capacity(seq.len());
            let mut outs = Vec::with_capacity(seq.len());
            for x in &seq {
                let (h2, c2, sc) = layer.step_cached(x, &h, &c);
                h = h2;
                c = c2;
                outs.push(h.clone());
                caches.push(sc);
            }
            cache.steps.push(caches);
            seq = outs;
        }
        let last = seq
            .last()
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.hidden_dim()]);
        (last, cache)
    }

    /// Backpropagation through time from a gradient on the final top-layer
    /// hidden state. Returns `dL/dx_t` for every input step.
    pub fn backward(
        &self,
        cache: &StackCache,
        d_last: &[f64],
        grad: &mut CellStack,
    ) -> Vec<Vec<f64>> {
        let steps = cache.steps.first().map(Vec::len).unwrap_or(0);
        if steps == 0 {
            return Vec::new();
        }
        // gradient w.r.t. each output of the current layer
        let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; self.hidden_dim()]; steps];
        d_out[steps - 1].copy_from_slice(d_last);
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let hd = layer.hidden_dim;
            let mut dh_next = vec![0.0; hd];
            let mut dc_next = vec![0.0; hd];
            let mut d_in = vec![Vec::new(); steps];
            for t in (0..steps).rev() {
                let dh: Vec<f64> = d_out[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                let (dx, dh_prev, dc_prev) =
                    layer.backward_step(&cache.steps[k][t], &dh, &dc_next, &mut grad.layers[k]);
                d_in[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            d_out = d_in;
        }
        d_out
    }
}

impl Parameters for CellStack {
    fn tensors(&self) -> Vec<&Tensor2> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }
}
