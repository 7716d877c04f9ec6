//! Single-layer LSTM for univariate one-step-ahead forecasting, trained by
//! full-batch gradient descent with backpropagation through time.
//!
//! Cell equations per step, with `σ` the logistic function:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)     f = σ(W_f x + U_f h + b_f)
//! o = σ(W_o x + U_o h + b_o)     g = tanh(W_c x + U_c h + b_c)
//! c' = f ⊙ c + i ⊙ g             h' = o ⊙ tanh(c')
//! ```
//!
//! The prediction is `head_weights · h_w + head_bias` after a window of `w`
//! inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 8,
            window: 4,
            epochs: 500,
            learning_rate: 0.1,
            seed: 0,
            clip_norm: 1.0,
        }
    }
}

/// Weights of one gate. `recurrent` is `H × H` row-major: entry `j * H + k`
/// couples `h_k` into unit `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub input: Vec<f64>,
    pub recurrent: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gate {
    fn zeros(h: usize) -> Self {
        Self {
            input: vec![0.0; h],
            recurrent: vec![0.0; h * h],
            bias: vec![0.0; h],
        }
    }

    fn preactivation(&self, x: f64, h_prev: &[f64], out: &mut [f64]) {
        let n = self.bias.len();
        for j in 0..n {
            let row = &self.recurrent[j * n..(j + 1) * n];
            let mut z = self.input[j] * x + self.bias[j];
            for (w, h) in row.iter().zip(h_prev) {
                z += w * h;
            }
            out[j] = z;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub hidden_size: usize,
    pub window: usize,
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub output_gate: Gate,
    pub candidate: Gate,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    /// Training-series normalization, so predictions come out in original units.
    pub value_mean: f64,
    pub value_scale: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-step activations kept for the backward pass.
struct Step {
    x: f64,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

pub struct Trajectory {
    pub hidden: Vec<Vec<f64>>,
    pub cell: Vec<Vec<f64>>,
    pub output: f64,
}

impl LstmModel {
    /// Uniform `±1/√H` weights from a ChaCha8 stream seeded with `seed`;
    /// forget-gate bias set to 1, head bias to 0.
    pub fn init(hidden_size: usize, window: usize, seed: u64) -> Result<Self> {
        if hidden_size == 0 {
            return Err(Error::Config("hidden_size must be >= 1".into()));
        }
        if window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        let h = hidden_size;
        let bound = 1.0 / (h as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let mut gate = || Gate {
            input: draw(h),
            recurrent: draw(h * h),
            bias: draw(h),
        };
        let input_gate = gate();
        let mut forget_gate = gate();
        let output_gate = gate();
        let candidate = gate();
        forget_gate.bias.iter_mut().for_each(|b| *b = 1.0);
        let head_weights = draw(h);
        Ok(Self {
            hidden_size: h,
            window,
            input_gate,
            forget_gate,
            output_gate,
            candidate,
            head_weights,
            head_bias: 0.0,
            value_mean: 0.0,
            value_scale: 1.0,
        })
    }

    fn zeros_like(&self) -> Self {
        let h = self.hidden_size;
        Self {
            hidden_size: h,
            window: self.window,
            input_gate: Gate::zeros(h),
            forget_gate: Gate::zeros(h),
            output_gate: Gate::zeros(h),
            candidate: Gate::zeros(h),
            head_weights: vec![0.0; h],
            head_bias: 0.0,
            value_mean: self.value_mean,
            value_scale: self.value_scale,
        }
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_size;
        4 * (h + h * h + h) + h + 1
    }

    /// All trainable parameters in a fixed order: gates (input, forget,
    /// output, candidate) each as input, recurrent, bias; then the head.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for g in [&self.input_gate, &self.forget_gate, &self.output_gate, &self.candidate] {
            out.extend_from_slice(&g.input);
            out.extend_from_slice(&g.recurrent);
            out.extend_from_slice(&g.bias);
        }
        out.extend_from_slice(&self.head_weights);
        out.push(self.head_bias);
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for g in [
            &mut self.input_gate,
            &mut self.forget_gate,
            &mut self.output_gate,
            &mut self.candidate,
        ] {
            take(&mut g.input);
            take(&mut g.recurrent);
            take(&mut g.bias);
        }
        take(&mut self.head_weights);
        self.head_bias = rest[0];
        Ok(())
    }

    fn run(&self, inputs: &[f64]) -> (Vec<Step>, f64) {
        let h = self.hidden_size;
        let mut steps: Vec<Step> = Vec::with_capacity(inputs.len());
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut z = vec![0.0; h];
        for &x in inputs {
            let mut act = |gate: &Gate, f: fn(f64) -> f64| {
                gate.preactivation(x, &h_prev, &mut z);
                z.iter().map(|&v| f(v)).collect::<Vec<f64>>()
            };
            let i = act(&self.input_gate, sigmoid);
            let f = act(&self.forget_gate, sigmoid);
            let o = act(&self.output_gate, sigmoid);
            let g = act(&self.candidate, f64::tanh);
            let c: Vec<f64> = (0..h).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let hn: Vec<f64> = (0..h).map(|j| o[j] * tanh_c[j]).collect();
            h_prev.clone_from(&hn);
            c_prev.clone_from(&c);
            steps.push(Step {
                x,
                i,
                f,
                o,
                g,
                c,
                tanh_c,
                h: hn,
            });
        }
        let output = self.head_bias
            + self
                .head_weights
                .iter()
                .zip(&h_prev)
                .map(|(w, h)| w * h)
                .sum::<f64>();
        (steps, output)
    }

    /// Hidden and cell states after each step, plus the head output, for
    /// normalized inputs.
    pub fn trajectory(&self, normalized_inputs: &[f64]) -> Trajectory {
        let (steps, output) = self.run(normalized_inputs);
        Trajectory {
            hidden: steps.iter().map(|s| s.h.clone()).collect(),
            cell: steps.iter().map(|s| s.c.clone()).collect(),
            output,
        }
    }

    pub fn predict_normalized(&self, normalized_inputs: &[f64]) -> f64 {
        self.run(normalized_inputs).1
    }

    /// Squared error `(ŷ - target)²` on one normalized window, with its
    /// gradient laid out like [`LstmModel::parameters`].
    pub fn loss_and_gradient(&self, inputs: &[f64], target: f64) -> (f64, Vec<f64>) {
        let h = self.hidden_size;
        let (steps, y) = self.run(inputs);
        let err = y - target;
        let loss = err * err;
        let d_y = 2.0 * err;

        let mut grad = self.zeros_like();
        grad.head_bias = d_y;
        let last_h = steps.last().map(|s| s.h.clone()).unwrap_or_else(|| vec![0.0; h]);
        for j in 0..h {
            grad.head_weights[j] = d_y * last_h[j];
        }

        let mut dh: Vec<f64> = self.head_weights.iter().map(|w| d_y * w).collect();
        let mut dc = vec![0.0; h];
        let zeros = vec![0.0; h];
        let mut dz = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let (h_prev, c_prev) = if t > 0 {
                (&steps[t - 1].h, &steps[t - 1].c)
            } else {
                (&zeros, &zeros)
            };
            for j in 0..h {
                let d_o = dh[j] * s.tanh_c[j];
                dc[j] += dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                let d_f = dc[j] * c_prev[j];
                let d_i = dc[j] * s.g[j];
                let d_g = dc[j] * s.i[j];
                dz[0][j] = d_i * s.i[j] * (1.0 - s.i[j]);
                dz[1][j] = d_f * s.f[j] * (1.0 - s.f[j]);
                dz[2][j] = d_o * s.o[j] * (1.0 - s.o[j]);
                dz[3][j] = d_g * (1.0 - s.g[j] * s.g[j]);
            }
            let mut dh_prev = vec![0.0; h];
            let gates = [&self.input_gate, &self.forget_gate, &self.output_gate, &self.candidate];
            let grads = [
                &mut grad.input_gate,
                &mut grad.forget_gate,
                &mut grad.output_gate,
                &mut grad.candidate,
            ];
            for ((gate, gg), dzg) in gates.into_iter().zip(grads).zip(&dz) {
                for j in 0..h {
                    gg.input[j] += dzg[j] * s.x;
                    gg.bias[j] += dzg[j];
                    for k in 0..h {
                        gg.recurrent[j * h + k] += dzg[j] * h_prev[k];
                        dh_prev[k] += gate.recurrent[j * h + k] * dzg[j];
                    }
                }
            }
            for j in 0..h {
                dc[j] *= s.f[j];
            }
            dh = dh_prev;
        }
        (loss, grad.parameters())
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.value_mean) / self.value_scale
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.value_scale + self.value_mean
    }

    /// One-step prediction in original units from the last `window` values
    /// of `history`.
    pub fn predict_next(&self, history: &[f64]) -> Result<f64> {
        if history.len() < self.window {
            return Err(Error::Range(format!(
                "need {} history values, got {}",
                self.window,
                history.len()
            )));
        }
        let inputs: Vec<f64> = history[history.len() - self.window..]
            .iter()
            .map(|&v| self.normalize(v))
            .collect();
        Ok(self.denormalize(self.predict_normalized(&inputs)))
    }

    /// Iterated roll-out that feeds each prediction back as input.
    pub fn roll_out(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        if horizon == 0 {
            return Err(Error::Range("horizon must be >= 1".into()));
        }
        let mut buf = history.to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let next = self.predict_next(&buf)?;
            out.push(next);
            buf.push(next);
        }
        Ok(out)
    }
}

/// Returns the trained model and the per-epoch mean squared error measured
/// before each update (normalized units).
pub fn train_lstm(values: &[f64], config: &TrainConfig) -> Result<(LstmModel, Vec<f64>)> {
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Config(format!(
            "learning_rate must be > 0, got {}",
            config.learning_rate
        )));
    }
    if config.window == 0 || values.len() <= config.window {
        return Err(Error::Config(format!(
            "window {} must be >= 1 and shorter than the series ({})",
            config.window,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("series contains non-finite values".into()));
    }
    let mut model = LstmModel::init(config.hidden_size, config.window, config.seed)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    model.value_mean = mean;
    model.value_scale = if std > 1e-12 * mean.abs().max(1.0) { std } else { 1.0 };
    let series: Vec<f64> = values.iter().map(|&v| model.normalize(v)).collect();

    let windows: Vec<(&[f64], f64)> = (0..series.len() - config.window)
        .map(|s| (&series[s..s + config.window], series[s + config.window]))
        .collect();
    let m = windows.len() as f64;
    let mut params = model.parameters();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (inputs, target) in &windows {
            let (l, g) = model.loss_and_gradient(inputs, *target);
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        loss /= m;
        if !loss.is_finite() {
            return Err(Error::Training { epoch, loss });
        }
        history.push(loss);
        grad.iter_mut().for_each(|g| *g /= m);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if config.clip_norm > 0.0 && norm > config.clip_norm {
            config.clip_norm / norm
        } else {
            1.0
        };
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= config.learning_rate * clip * g;
        }
        model.set_parameters(&params)?;
    }
    Ok((model, history))
}

/// Largest relative disagreement between the BPTT gradient and central
/// finite differences (step 1e-5) over every parameter, for one normalized
/// window and its target.
pub fn gradient_check(model: &LstmModel, inputs: &[f64], target: f64) -> f64 {
    const STEP: f64 = 1e-5;
    let (_, analytic) = model.loss_and_gradient(inputs, target);
    let base = model.parameters();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &g_a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + STEP;
        probe.set_parameters(&p).expect("same length");
        let up = probe.loss_and_gradient(inputs, target).0;
        p[k] = base[k] - STEP;
        probe.set_parameters(&p).expect("same length");
        let down = probe.loss_and_gradient(inputs, target).0;
        let g_n = (up - down) / (2.0 * STEP);
        let rel = (g_a - g_n).abs() / (g_a.abs() + g_n.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
