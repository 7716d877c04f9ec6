//! Wide-and-deep regression.
//!
//! Global (wide) features enter a linear term directly; local (deep)
//! features pass through a tanh multilayer perceptron. The scalar output is
//!
//! ```text
//! ŷ = w_wide · x̃_wide + w_head · h_last + b
//! ```
//!
//! where `x̃` are standardized inputs. Training is full-batch gradient
//! descent on mean squared error.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub wide: Vec<f64>,
    pub deep: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub wide_names: Vec<String>,
    pub deep_names: Vec<String>,
    pub records: Vec<FeatureRecord>,
}

impl Dataset {
    /// Parses a CSV whose header labels columns `wide:<name>`,
    /// `deep:<name>` and exactly one `target`.
    pub fn from_csv(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("dataset csv", "missing header"))?;
        #[derive(Clone, Copy)]
        enum Col {
            Wide,
            Deep,
            Target,
        }
        let mut cols = Vec::new();
        let (mut wide_names, mut deep_names) = (Vec::new(), Vec::new());
        for raw in header.split(',').map(str::trim) {
            if let Some(n) = raw.strip_prefix("wide:") {
                wide_names.push(n.to_string());
                cols.push(Col::Wide);
            } else if let Some(n) = raw.strip_prefix("deep:") {
                deep_names.push(n.to_string());
                cols.push(Col::Deep);
            } else if raw == "target" {
                cols.push(Col::Target);
            } else {
                return Err(Error::parse(
                    "dataset csv",
                    format!("column `{raw}` needs a `wide:` or `deep:` prefix or must be `target`"),
                ));
            }
        }
        if cols.iter().filter(|c| matches!(c, Col::Target)).count() != 1 {
            return Err(Error::parse("dataset csv", "exactly one `target` column required"));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let ctx = format!("dataset csv line {}", i + 2);
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::parse(
                    ctx,
                    format!("expected {} fields, got {}", cols.len(), fields.len()),
                ));
            }
            let mut rec = FeatureRecord {
                wide: Vec::with_capacity(wide_names.len()),
                deep: Vec::with_capacity(deep_names.len()),
                target: 0.0,
            };
            for (col, f) in cols.iter().zip(fields) {
                let v: f64 = f.parse().map_err(|e| Error::parse(ctx.clone(), e))?;
                if !v.is_finite() {
                    return Err(Error::Validation(format!("{ctx}: non-finite value")));
                }
                match col {
                    Col::Wide => rec.wide.push(v),
                    Col::Deep => rec.deep.push(v),
                    Col::Target => rec.target = v,
                }
            }
            records.push(rec);
        }
        Ok(Dataset {
            wide_names,
            deep_names,
            records,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self
            .wide_names
            .iter()
            .map(|n| format!("wide:{n}"))
            .chain(self.deep_names.iter().map(|n| format!("deep:{n}")))
            .chain(std::iter::once("target".to_string()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.records {
            let vals: Vec<String> = r
                .wide
                .iter()
                .chain(&r.deep)
                .chain(std::iter::once(&r.target))
                .map(|v| v.to_string())
                .collect();
            writeln!(out, "{}", vals.join(",")).unwrap();
        }
        out
    }
}

/// Per-feature `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation per column; a constant
    /// column gets scale 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Fully connected layer; `weights` is `outputs × inputs` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|j| {
                let row = &self.weights[j * self.inputs..(j + 1) * self.inputs];
                (self.bias[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WideDeepModel {
    pub wide_weights: Vec<f64>,
    pub layers: Vec<DenseLayer>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    pub wide_standardizer: Standardizer,
    pub deep_standardizer: Standardizer,
}

/// Deterministic initialization: each dense layer and the head draw uniform
/// `±1/√fan_in` weights and biases from a ChaCha8 stream; wide weights and
/// the output bias start at zero.
pub fn init_model(
    wide_dim: usize,
    deep_dim: usize,
    hidden: &[usize],
    seed: u64,
) -> Result<WideDeepModel> {
    if hidden.is_empty() {
        return Err(Error::Config("deep path needs at least one hidden layer".into()));
    }
    if wide_dim == 0 || deep_dim == 0 || hidden.contains(&0) {
        return Err(Error::Config(format!(
            "dimensions must be >= 1 (wide {wide_dim}, deep {deep_dim}, hidden {hidden:?})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(hidden.len());
    let mut fan_in = deep_dim;
    for &width in hidden {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..width * fan_in)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..width).map(|_| rng.random_range(-bound..bound)).collect();
        layers.push(DenseLayer {
            inputs: fan_in,
            outputs: width,
            weights,
            bias,
        });
        fan_in = width;
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    let head_weights = (0..fan_in).map(|_| rng.random_range(-bound..bound)).collect();
    Ok(WideDeepModel {
        wide_weights: vec![0.0; wide_dim],
        layers,
        head_weights,
        head_bias: 0.0,
        wide_standardizer: Standardizer::identity(wide_dim),
        deep_standardizer: Standardizer::identity(deep_dim),
    })
}

impl WideDeepModel {
    pub fn wide_dim(&self) -> usize {
        self.wide_weights.len()
    }

    pub fn deep_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn parameter_count(&self) -> usize {
        self.wide_weights.len()
            + self
                .layers
                .iter()
                .map(|l| l.weights.len() + l.bias.len())
                .sum::<usize>()
            + self.head_weights.len()
            + 1
    }

    /// Fits both standardizers to `data`.
    pub fn fit_standardization(&mut self, data: &Dataset) -> Result<()> {
        self.check_dataset(data)?;
        self.wide_standardizer =
            Standardizer::fit(data.records.iter().map(|r| r.wide.as_slice()), self.wide_dim());
        self.deep_standardizer =
            Standardizer::fit(data.records.iter().map(|r| r.deep.as_slice()), self.deep_dim());
        Ok(())
    }

    /// Parameters in a fixed order: wide weights, then each layer's weights
    /// and bias, then head weights and bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend_from_slice(&self.wide_weights);
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
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
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(&mut self.wide_weights);
        for l in &mut self.layers {
            take(&mut l.weights);
            take(&mut l.bias);
        }
        take(&mut self.head_weights);
        self.head_bias = rest[0];
        Ok(())
    }

    /// Zeroes every deep-path parameter, leaving the wide linear model.
    pub fn zero_deep_path(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        self.head_weights.iter_mut().for_each(|w| *w = 0.0);
    }

    fn check_record(&self, record: &FeatureRecord) -> Result<()> {
        if record.wide.len() != self.wide_dim() || record.deep.len() != self.deep_dim() {
            return Err(Error::Shape(format!(
                "record has {} wide / {} deep features, model expects {} / {}",
                record.wide.len(),
                record.deep.len(),
                self.wide_dim(),
                self.deep_dim()
            )));
        }
        if record.wide.iter().chain(&record.deep).any(|v| !v.is_finite()) {
            return Err(Error::Validation("record contains non-finite features".into()));
        }
        Ok(())
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        data.records.iter().try_for_each(|r| {
            self.check_record(r)?;
            if r.target.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation("non-finite target".into()))
            }
        })
    }

    /// Activations of every deep layer (index 0 is the standardized input).
    fn deep_activations(&self, deep: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.deep_standardizer.apply(deep));
        for l in &self.layers {
            let next = l.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        acts
    }

    fn output(&self, wide_std: &[f64], last: &[f64]) -> f64 {
        let wide: f64 = self.wide_weights.iter().zip(wide_std).map(|(w, x)| w * x).sum();
        let deep: f64 = self.head_weights.iter().zip(last).map(|(w, h)| w * h).sum();
        wide + deep + self.head_bias
    }

    pub fn forward(&self, record: &FeatureRecord) -> Result<f64> {
        self.check_record(record)?;
        let wide_std = self.wide_standardizer.apply(&record.wide);
        let acts = self.deep_activations(&record.deep);
        Ok(self.output(&wide_std, acts.last().expect("non-empty")))
    }

    /// Squared error on one record and its gradient in
    /// [`WideDeepModel::parameters`] order. Shapes must already be checked.
    pub fn loss_and_gradient(&self, record: &FeatureRecord) -> (f64, Vec<f64>) {
        let wide_std = self.wide_standardizer.apply(&record.wide);
        let acts = self.deep_activations(&record.deep);
        let y = self.output(&wide_std, acts.last().expect("non-empty"));
        let err = y - record.target;
        let d_y = 2.0 * err;

        let mut grad = vec![0.0; self.parameter_count()];
        for (g, x) in grad.iter_mut().zip(&wide_std) {
            *g = d_y * x;
        }
        // Layer offsets in the flat vector.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = self.wide_dim();
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.bias.len();
        }
        let last = acts.last().expect("non-empty");
        for (k, h) in last.iter().enumerate() {
            grad[off + k] = d_y * h;
        }
        grad[off + last.len()] = d_y;

        // Gradient with respect to the activations of the current layer.
        let mut d_act: Vec<f64> = self.head_weights.iter().map(|w| d_y * w).collect();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let out = &acts[li + 1];
            let input = &acts[li];
            let d_z: Vec<f64> = d_act
                .iter()
                .zip(out)
                .map(|(d, a)| d * (1.0 - a * a))
                .collect();
            let base = offsets[li];
            let mut d_in = vec![0.0; layer.inputs];
            for j in 0..layer.outputs {
                for i in 0..layer.inputs {
                    grad[base + j * layer.inputs + i] = d_z[j] * input[i];
                    d_in[i] += layer.weights[j * layer.inputs + i] * d_z[j];
                }
                grad[base + layer.weights.len() + j] = d_z[j];
            }
            d_act = d_in;
        }
        (err * err, grad)
    }

    /// Mean squared error over a dataset.
    pub fn mse(&self, data: &Dataset) -> Result<f64> {
        if data.records.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        let mut total = 0.0;
        for r in &data.records {
            total += (self.forward(r)? - r.target).powi(2);
        }
        Ok(total / data.records.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.05,
        }
    }
}

/// Full-batch gradient descent. Returns the trained model and the MSE
/// measured before each update.
pub fn train(
    model: &WideDeepModel,
    data: &Dataset,
    options: &TrainOptions,
) -> Result<(WideDeepModel, Vec<f64>)> {
    if data.records.is_empty() {
        return Err(Error::Validation("dataset is empty".into()));
    }
    if !(options.learning_rate > 0.0 && options.learning_rate.is_finite()) {
        return Err(Error::Config(format!(
            "learning_rate must be > 0, got {}",
            options.learning_rate
        )));
    }
    model.check_dataset(data)?;
    let mut model = model.clone();
    let n = data.records.len() as f64;
    let mut params = model.parameters();
    let mut history = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for r in &data.records {
            let (l, g) = model.loss_and_gradient(r);
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Training { epoch, loss });
        }
        history.push(loss);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= options.learning_rate * g / n;
        }
        model.set_parameters(&params)?;
    }
    Ok((model, history))
}

/// Largest relative disagreement between backpropagated and central
/// finite-difference (step 1e-5) gradients over all parameters.
pub fn gradient_check(model: &WideDeepModel, record: &FeatureRecord) -> Result<f64> {
    const STEP: f64 = 1e-5;
    model.check_record(record)?;
    let (_, analytic) = model.loss_and_gradient(record);
    let base = model.parameters();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &g_a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + STEP;
        probe.set_parameters(&p)?;
        let up = probe.loss_and_gradient(record).0;
        p[k] = base[k] - STEP;
        probe.set_parameters(&p)?;
        let down = probe.loss_and_gradient(record).0;
        let g_n = (up - down) / (2.0 * STEP);
        worst = worst.max((g_a - g_n).abs() / (g_a.abs() + g_n.abs()).max(1e-8));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub wide_names: Vec<String>,
    pub deep_names: Vec<String>,
    pub model: WideDeepModel,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::parse("wide-and-deep model", e))?;
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model format version {}",
                f.format_version
            )));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(wide: &[f64], deep: &[f64], target: f64) -> FeatureRecord {
        FeatureRecord {
            wide: wide.to_vec(),
            deep: deep.to_vec(),
            target,
        }
    }

    #[test]
    fn parameter_count_from_shapes() {
        let d = 5;
        let m = init_model(3, d, &[4, 2], 0).unwrap();
        assert_eq!(m.parameter_count(), 3 + (d * 4 + 4) + (4 * 2 + 2) + (2 + 1));
        assert_eq!(m.parameters().len(), m.parameter_count());
        assert!(m.wide_weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn init_determinism() {
        let a = init_model(2, 3, &[4, 2], 9).unwrap();
        assert_eq!(a, init_model(2, 3, &[4, 2], 9).unwrap());
        assert_ne!(a, init_model(2, 3, &[4, 2], 10).unwrap());
        assert!(matches!(init_model(2, 3, &[], 0), Err(Error::Config(_))));
        assert!(init_model(0, 3, &[2], 0).is_err());
    }

    #[test]
    fn bias_only_model() {
        let mut m = init_model(2, 2, &[3], 1).unwrap();
        let mut p = vec![0.0; m.parameter_count()];
        *p.last_mut().unwrap() = 1.75;
        m.set_parameters(&p).unwrap();
        for r in [record(&[1.0, 2.0], &[3.0, 4.0], 0.0), record(&[-9.0, 0.0], &[0.5, 0.1], 0.0)] {
            assert_eq!(m.forward(&r).unwrap(), 1.75);
        }
    }

    #[test]
    fn forward_errors() {
        let m = init_model(2, 2, &[3], 1).unwrap();
        assert!(matches!(m.forward(&record(&[1.0], &[1.0, 2.0], 0.0)), Err(Error::Shape(_))));
        assert!(matches!(
            m.forward(&record(&[1.0, f64::NAN], &[1.0, 2.0], 0.0)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let m = init_model(1, 1, &[2], 4).unwrap();
        let data = Dataset {
            wide_names: vec!["a".into()],
            deep_names: vec!["b".into()],
            records: vec![record(&[1.0], &[2.0], 3.0)],
        };
        let (trained, hist) = train(
            &m,
            &data,
            &TrainOptions {
                epochs: 0,
                learning_rate: 0.1,
            },
        )
        .unwrap();
        assert_eq!(trained, m);
        assert!(hist.is_empty());
    }

    #[test]
    fn gradient_check_fresh_model() {
        let mut m = init_model(3, 4, &[4, 2], 2).unwrap();
        m.wide_weights = vec![0.3, -0.2, 0.5];
        let r = record(&[0.4, -1.2, 2.0], &[0.1, 0.7, -0.3, 1.5], 0.8);
        assert!(gradient_check(&m, &r).unwrap() < 1e-4);
    }

    #[test]
    fn zero_weights_zero_record_gradients() {
        let mut m = init_model(2, 3, &[4, 2], 2).unwrap();
        let zeros = vec![0.0; m.parameter_count()];
        m.set_parameters(&zeros).unwrap();
        let r = record(&[0.0, 0.0], &[0.0, 0.0, 0.0], 1.0);
        let (_, g) = m.loss_and_gradient(&r);
        // Only the output bias sees a signal.
        assert!(g[..g.len() - 1].iter().all(|&v| v == 0.0));
        assert_eq!(*g.last().unwrap(), -2.0);
        assert!(gradient_check(&m, &r).unwrap() < 1e-10);
    }

    #[test]
    fn csv_round_trip() {
        let text = "wide:co2,deep:green,deep:dev,target\n1.5,0.2,0.7,21.3\n2,0.3,0.6,22\n";
        let d = Dataset::from_csv(text).unwrap();
        assert_eq!(d.wide_names, vec!["co2"]);
        assert_eq!(d.deep_names, vec!["green", "dev"]);
        assert_eq!(d.records[1], record(&[2.0], &[0.3, 0.6], 22.0));
        assert_eq!(Dataset::from_csv(&d.to_csv()).unwrap(), d);
        assert!(Dataset::from_csv("co2,target\n1,2\n").is_err());
        assert!(Dataset::from_csv("wide:a,deep:b\n1,2\n").is_err());
    }
}
