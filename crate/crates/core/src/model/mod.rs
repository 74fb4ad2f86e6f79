//! A small softmax classifier (optionally with one ReLU hidden layer and
//! dropout) trained with Adam against arbitrary target distributions.
//!
//! Parameters live in one flat vector so the optimizer, gradient checks and
//! checkpoints all share a single layout:
//!
//! * hidden width `H > 0`: `W1 (D×H) | b1 (H) | W2 (H×K) | b2 (K)`
//! * hidden width 0: `W (D×K) | b (K)`
//!
//! Matrices are row-major with rows indexed by the input unit.

mod adam;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use train::{train, StopReason, TrainConfig, TrainHistory, TrainingSet, ValidationSet};

use std::fmt::Write as _;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::records::NUM_CLASSES;
use crate::table::fmt_f64;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    input_dim: usize,
    hidden_width: usize,
    dropout_rate: f64,
    seed: u64,
    params: Vec<f64>,
}

struct Activations {
    /// Hidden pre-activations and the dropped-out ReLU output.
    hidden: Option<(Array2<f64>, Array2<f64>)>,
    logits: Array2<f64>,
    probs: Array2<f64>,
}

pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Weights drawn from N(0, 1/fan_in), biases zero.
pub fn init_model(seed: u64, input_dim: usize, hidden_width: usize, dropout_rate: f64) -> Result<ReferenceModel> {
    if input_dim == 0 {
        return Err(ModelError::Config("input dimension must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(ModelError::Config(format!(
            "dropout rate {dropout_rate} outside [0, 1)"
        )));
    }
    let mut model = ReferenceModel {
        input_dim,
        hidden_width,
        dropout_rate,
        seed,
        params: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(model.num_params());
    for (fan_in, fan_out) in model.layer_shapes() {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
        params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    model.params = params;
    Ok(model)
}

impl ReferenceModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(fan_in, fan_out)` for each affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        if self.hidden_width == 0 {
            vec![(self.input_dim, NUM_CLASSES)]
        } else {
            vec![(self.input_dim, self.hidden_width), (self.hidden_width, NUM_CLASSES)]
        }
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Weight and bias views of layer `layer`.
    fn layer(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        let shapes = self.layer_shapes();
        let offset: usize = shapes[..layer].iter().map(|(i, o)| i * o + o).sum();
        let (fan_in, fan_out) = shapes[layer];
        let w = ArrayView2::from_shape((fan_in, fan_out), &self.params[offset..offset + fan_in * fan_out])
            .expect("layout matches shape");
        let b_start = offset + fan_in * fan_out;
        let b = ArrayView2::from_shape((1, fan_out), &self.params[b_start..b_start + fan_out])
            .expect("layout matches shape");
        (w, b)
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(ModelError::Shape(format!(
                "model expects {} features, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("input features".into()));
        }
        Ok(())
    }

    /// Inverted-dropout mask for `rows` samples: entries are 0 or `1/(1-rate)`.
    /// `None` when there is no hidden layer or the rate is zero.
    pub fn dropout_mask<R: Rng>(&self, rows: usize, rng: &mut R) -> Option<Array2<f64>> {
        if self.hidden_width == 0 || self.dropout_rate == 0.0 {
            return None;
        }
        let keep = 1.0 - self.dropout_rate;
        let scale = 1.0 / keep;
        Some(Array2::from_shape_simple_fn((rows, self.hidden_width), || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        }))
    }

    fn activations(&self, x: ArrayView2<f64>, mask: Option<&Array2<f64>>) -> Activations {
        if self.hidden_width == 0 {
            let (w, b) = self.layer(0);
            let logits = x.dot(&w) + b;
            let probs = softmax_rows(&logits);
            return Activations {
                hidden: None,
                logits,
                probs,
            };
        }
        let (w1, b1) = self.layer(0);
        let (w2, b2) = self.layer(1);
        let pre = x.dot(&w1) + b1;
        let mut act = pre.mapv(|v| v.max(0.0));
        if let Some(m) = mask {
            act *= m;
        }
        let logits = act.dot(&w2) + b2;
        let probs = softmax_rows(&logits);
        Activations {
            hidden: Some((pre, act)),
            logits,
            probs,
        }
    }

    /// Single-sample forward pass. Dropout is applied only in `train_mode`.
    pub fn forward<R: Rng>(&self, features: &[f64], train_mode: bool, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, features.len()), features).map_err(|e| ModelError::Shape(e.to_string()))?;
        self.check_input(&x)?;
        let mask = if train_mode { self.dropout_mask(1, rng) } else { None };
        let a = self.activations(x, mask.as_ref());
        Ok((a.logits.row(0).to_vec(), a.probs.row(0).to_vec()))
    }

    /// Deterministic per-row class probabilities (no dropout).
    pub fn predict_proba(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(&features.view())?;
        Ok(self.activations(features.view(), None).probs)
    }

    /// Mean of `passes` stochastic forward passes with dropout active.
    pub fn mc_dropout_predict(&self, features: &Array2<f64>, passes: usize, seed: u64) -> Result<Array2<f64>> {
        if self.hidden_width == 0 || self.dropout_rate == 0.0 {
            return Err(ModelError::Config(
                "MC dropout needs a hidden layer with a positive dropout rate".into(),
            ));
        }
        if passes == 0 {
            return Err(ModelError::Config("MC dropout needs at least one pass".into()));
        }
        self.check_input(&features.view())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = Array2::zeros((features.nrows(), NUM_CLASSES));
        for _ in 0..passes {
            let mask = self.dropout_mask(features.nrows(), &mut rng);
            sum += &self.activations(features.view(), mask.as_ref()).probs;
        }
        Ok(sum / passes as f64)
    }

    /// Mean cross-entropy over the batch and its gradient w.r.t. every
    /// parameter, in the flat parameter layout.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        mask: Option<&Array2<f64>>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(&x)?;
        if targets.nrows() != x.nrows() || targets.ncols() != NUM_CLASSES {
            return Err(ModelError::Shape(format!(
                "targets {:?} for {} samples",
                targets.dim(),
                x.nrows()
            )));
        }
        let n = x.nrows() as f64;
        let act = self.activations(x, mask);
        let loss = batch_cross_entropy(&targets, &act.probs) / n;

        // d(mean CE)/d(logits) = (p - y) / n
        let dlogits = (&act.probs - &targets) / n;
        let mut grad = Vec::with_capacity(self.num_params());
        match &act.hidden {
            None => {
                let gw = x.t().dot(&dlogits);
                grad.extend(gw.iter());
                grad.extend(dlogits.sum_axis(Axis(0)).iter());
            }
            Some((pre, hidden)) => {
                let (_, _) = self.layer(0);
                let (w2, _) = self.layer(1);
                let gw2 = hidden.t().dot(&dlogits);
                let gb2 = dlogits.sum_axis(Axis(0));
                let mut dhidden = dlogits.dot(&w2.t());
                if let Some(m) = mask {
                    dhidden *= m;
                }
                ndarray::Zip::from(&mut dhidden).and(pre).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                let gw1 = x.t().dot(&dhidden);
                let gb1 = dhidden.sum_axis(Axis(0));
                grad.extend(gw1.iter());
                grad.extend(gb1.iter());
                grad.extend(gw2.iter());
                grad.extend(gb2.iter());
            }
        }
        Ok((loss, grad))
    }

    /// Mean cross-entropy of the deterministic (no-dropout) predictions.
    pub fn loss(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>, mask: Option<&Array2<f64>>) -> Result<f64> {
        self.check_input(&x)?;
        let act = self.activations(x, mask);
        Ok(batch_cross_entropy(&targets, &act.probs) / x.nrows() as f64)
    }

    /// Text checkpoint: `key=value` header lines followed by one parameter per line.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# sleepcons reference model");
        let _ = writeln!(out, "input_dim={}", self.input_dim);
        let _ = writeln!(out, "hidden_width={}", self.hidden_width);
        let _ = writeln!(out, "dropout_rate={}", fmt_f64(self.dropout_rate));
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "num_params={}", self.params.len());
        for p in &self.params {
            let _ = writeln!(out, "{}", fmt_f64(*p));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: String| ModelError::Checkpoint(msg);
        let mut header = std::collections::BTreeMap::new();
        let mut params = Vec::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            if let Some((k, v)) = line.split_once('=') {
                header.insert(k.to_string(), v.to_string());
            } else {
                params.push(
                    line.parse::<f64>()
                        .map_err(|_| bad(format!("bad parameter {line:?}")))?,
                );
            }
        }
        let field = |key: &str| header.get(key).ok_or_else(|| bad(format!("missing {key}")));
        let input_dim: usize = field("input_dim")?.parse().map_err(|_| bad("input_dim".into()))?;
        let hidden_width: usize = field("hidden_width")?.parse().map_err(|_| bad("hidden_width".into()))?;
        let dropout_rate: f64 = field("dropout_rate")?.parse().map_err(|_| bad("dropout_rate".into()))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed".into()))?;
        let mut model = init_model(seed, input_dim, hidden_width, dropout_rate)?;
        if params.len() != model.num_params() {
            return Err(bad(format!(
                "expected {} parameters, found {}",
                model.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        model.params = params;
        Ok(model)
    }
}

fn batch_cross_entropy(targets: &ArrayView2<f64>, probs: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (t, p) in targets.rows().into_iter().zip(probs.rows()) {
        for (&tk, &pk) in t.iter().zip(p.iter()) {
            if tk != 0.0 {
                total -= tk * pk.clamp(crate::smoothing::LOG_EPS, 1.0).ln();
            }
        }
    }
    total
}

/// Concatenates each row with its `radius` neighbours on both sides,
/// replicating the first and last rows at the edges.
pub fn with_context(features: &Array2<f64>, radius: usize) -> Array2<f64> {
    if radius == 0 || features.nrows() == 0 {
        return features.clone();
    }
    let (n, d) = features.dim();
    let width = 2 * radius + 1;
    let mut out = Array2::zeros((n, d * width));
    for t in 0..n {
        for (slot, offset) in (-(radius as isize)..=radius as isize).enumerate() {
            let src = (t as isize + offset).clamp(0, n as isize - 1) as usize;
            out.slice_mut(s![t, slot * d..(slot + 1) * d])
                .assign(&features.row(src));
        }
    }
    out
}
