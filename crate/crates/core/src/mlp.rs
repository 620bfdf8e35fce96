//! Fully connected ReLU regressor with an exact input gradient.
//!
//! Inputs and targets are standardized with constants stored in the model,
//! so `forward` and `input_gradient` work in raw feature units and °C.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Standardization};
use crate::error::ModelError;
use crate::features::{FeatureVector, N_FEATURES};
use crate::surrogate::Surrogate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    /// Hidden layer widths; the input width is 7 and the output width is 1.
    pub hidden: Vec<usize>,
    /// Dropout rate after each hidden layer, in `[0, 1)`.
    pub dropout: Vec<f64>,
}

impl MlpArchitecture {
    pub fn new(hidden: Vec<usize>, dropout_rate: f64) -> Self {
        let dropout = vec![dropout_rate; hidden.len()];
        MlpArchitecture { hidden, dropout }
    }

    /// 64/32, no dropout.
    pub fn raw_data_preset() -> Self {
        Self::new(vec![64, 32], 0.0)
    }

    /// 128/64/32 with dropout 0.1.
    pub fn dedup_data_preset() -> Self {
        Self::new(vec![128, 64, 32], 0.1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden.contains(&0) {
            return Err(ModelError::InvalidParams("layer widths must be positive".into()));
        }
        if self.dropout.len() != self.hidden.len() {
            return Err(ModelError::InvalidParams(
                "one dropout rate per hidden layer is required".into(),
            ));
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(ModelError::InvalidParams("dropout rates must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![N_FEATURES];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

/// Affine map with row-major `weights[out * n_in + in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn apply(&self, a: &[f64], z: &mut Vec<f64>) {
        z.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let mut s = self.bias[o];
            for (w, x) in row.iter().zip(a) {
                s += w * x;
            }
            z.push(s);
        }
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_out, self.n_in, &self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub arch: MlpArchitecture,
    pub layers: Vec<Layer>,
    pub input_scaling: Standardization,
    pub target_mean: f64,
    pub target_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecayMode {
    /// Parameters shrink by `lr * decay` each step, outside the adaptive scaling.
    #[default]
    Decoupled,
    /// `decay * p` is added to the gradient before the moment updates.
    CoupledL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub decay_mode: WeightDecayMode,
    pub seed: u64,
}

impl MlpTrainConfig {
    pub fn raw_data_preset(seed: u64) -> Self {
        MlpTrainConfig {
            epochs: 2000,
            batch_size: 64,
            learning_rate: 0.01,
            weight_decay: 0.01,
            decay_mode: WeightDecayMode::Decoupled,
            seed,
        }
    }

    pub fn dedup_data_preset(seed: u64) -> Self {
        MlpTrainConfig {
            epochs: 1000,
            batch_size: 128,
            ..Self::raw_data_preset(seed)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::InvalidParams("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidParams("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ModelError::InvalidParams("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// He-normal weights, zero biases, identity scaling.
pub fn init_mlp(arch: &MlpArchitecture, seed: u64) -> Result<MlpModel, ModelError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = arch.widths();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).expect("finite std");
            Layer {
                n_in,
                n_out,
                weights: (0..n_in * n_out).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; n_out],
            }
        })
        .collect();
    Ok(MlpModel {
        arch: arch.clone(),
        layers,
        input_scaling: Standardization {
            mean: [0.0; N_FEATURES],
            std: [1.0; N_FEATURES],
        },
        target_mean: 0.0,
        target_std: 1.0,
    })
}

impl MlpModel {
    /// Fits input and target standardization on `train`.
    pub fn fit_scaling(&mut self, train: &Dataset) -> Result<(), ModelError> {
        if train.is_empty() {
            return Err(ModelError::EmptyData);
        }
        self.input_scaling = Standardization::fit(&train.features());
        let ts = train.targets();
        let n = ts.len() as f64;
        let mean = ts.iter().sum::<f64>() / n;
        let var = ts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        self.target_mean = mean;
        self.target_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(())
    }

    /// Pre-activations of every layer for one standardized input.
    fn pre_activations(&self, y: &FeatureVector) -> Vec<Vec<f64>> {
        let s = self.input_scaling.apply(y);
        let mut a: Vec<f64> = s.0.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.apply(&a, &mut z);
            if l + 1 < self.layers.len() {
                a = z.iter().map(|&v| v.max(0.0)).collect();
            }
            out.push(z);
        }
        out
    }

    /// Prediction in °C, inference mode.
    pub fn forward(&self, y: &FeatureVector) -> f64 {
        let zs = self.pre_activations(y);
        zs.last().expect("output layer")[0] * self.target_std + self.target_mean
    }

    /// d forward / d y in °C per feature unit. A unit with pre-activation
    /// exactly 0 counts as active.
    pub fn input_gradient(&self, y: &FeatureVector) -> [f64; N_FEATURES] {
        let zs = self.pre_activations(y);
        let mut g = vec![self.target_std];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l + 1 < self.layers.len() {
                for (gi, z) in g.iter_mut().zip(&zs[l]) {
                    if *z < 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let mut prev = vec![0.0; layer.n_in];
            for (o, go) in g.iter().enumerate() {
                if *go == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += go * w;
                }
            }
            g = prev;
        }
        let mut out = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            out[k] = g[k] / self.input_scaling.std[k];
        }
        out
    }
}

impl Surrogate for MlpModel {
    fn predict(&self, y: &FeatureVector) -> f64 {
        self.forward(y)
    }

    fn input_gradient(&self, y: &FeatureVector) -> Option<[f64; N_FEATURES]> {
        Some(MlpModel::input_gradient(self, y))
    }

    fn is_differentiable(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training-mode loss per epoch on standardized targets.
    pub loss_history: Vec<f64>,
}

struct AdamState {
    m_w: DMatrix<f64>,
    v_w: DMatrix<f64>,
    m_b: DVector<f64>,
    v_b: DVector<f64>,
}

/// Mini-batch Adam on mean squared error of standardized targets. The
/// model's scaling constants are used as they are; see [`MlpModel::fit_scaling`].
pub fn train_adam(model: &MlpModel, train: &Dataset, cfg: &MlpTrainConfig) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    model.arch.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model: model.clone(),
            loss_history: Vec::new(),
        });
    }
    let n = train.len();
    let xs: Vec<FeatureVector> = train.features().iter().map(|y| model.input_scaling.apply(y)).collect();
    let ts: Vec<f64> = train
        .targets()
        .iter()
        .map(|t| (t - model.target_mean) / model.target_std)
        .collect();

    let n_layers = model.layers.len();
    let mut ws: Vec<DMatrix<f64>> = model.layers.iter().map(Layer::matrix).collect();
    let mut bs: Vec<DVector<f64>> = model.layers.iter().map(|l| DVector::from_vec(l.bias.clone())).collect();
    let mut adam: Vec<AdamState> = model
        .layers
        .iter()
        .map(|l| AdamState {
            m_w: DMatrix::zeros(l.n_out, l.n_in),
            v_w: DMatrix::zeros(l.n_out, l.n_in),
            m_b: DVector::zeros(l.n_out),
            v_b: DVector::zeros(l.n_out),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let x = DMatrix::from_fn(N_FEATURES, b, |r, c| xs[batch[c]].0[r]);
            let t = DMatrix::from_fn(1, b, |_, c| ts[batch[c]]);

            // Forward, keeping inputs, pre-activations and dropout masks.
            let mut inputs: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers);
            let mut pres: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers);
            let mut masks: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(n_layers);
            let mut a = x;
            for l in 0..n_layers {
                let mut z = &ws[l] * &a;
                for mut col in z.column_iter_mut() {
                    col += &bs[l];
                }
                inputs.push(a);
                if l + 1 < n_layers {
                    let mut h = z.map(|v| v.max(0.0));
                    let p = model.arch.dropout[l];
                    let mask = if p > 0.0 {
                        let keep = 1.0 / (1.0 - p);
                        let m = DMatrix::from_fn(h.nrows(), b, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
                        h.component_mul_assign(&m);
                        Some(m)
                    } else {
                        None
                    };
                    masks.push(mask);
                    a = h;
                } else {
                    masks.push(None);
                    a = z.clone();
                }
                pres.push(z);
            }
            let diff = &a - &t;
            let loss = diff.norm_squared() / b as f64;
            epoch_loss += loss * b as f64;

            // Backward.
            let mut delta = diff * (2.0 / b as f64);
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step);
            let bc2 = 1.0 - ADAM_BETA2.powi(step);
            for l in (0..n_layers).rev() {
                if l + 1 < n_layers {
                    if let Some(m) = &masks[l] {
                        delta.component_mul_assign(m);
                    }
                    delta.zip_apply(&pres[l], |d, z| {
                        if z < 0.0 {
                            *d = 0.0
                        }
                    });
                }
                let mut gw = &delta * inputs[l].transpose();
                let mut gb = delta.column_sum();
                let next_delta = if l > 0 { Some(ws[l].transpose() * &delta) } else { None };
                if wd > 0.0 {
                    match cfg.decay_mode {
                        WeightDecayMode::CoupledL2 => {
                            gw += &ws[l] * wd;
                            gb += &bs[l] * wd;
                        }
                        WeightDecayMode::Decoupled => {
                            ws[l] *= 1.0 - lr * wd;
                            bs[l] *= 1.0 - lr * wd;
                        }
                    }
                }
                let st = &mut adam[l];
                adam_update(
                    ws[l].as_mut_slice(),
                    gw.as_slice(),
                    st.m_w.as_mut_slice(),
                    st.v_w.as_mut_slice(),
                    lr,
                    bc1,
                    bc2,
                );
                adam_update(
                    bs[l].as_mut_slice(),
                    gb.as_slice(),
                    st.m_b.as_mut_slice(),
                    st.v_b.as_mut_slice(),
                    lr,
                    bc1,
                    bc2,
                );
                if let Some(d) = next_delta {
                    delta = d;
                }
            }
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() {
            return Err(ModelError::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }

    let mut out = model.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        // DMatrix is column-major; the layer stores rows.
        layer.weights = ws[l].transpose().as_slice().to_vec();
        layer.bias = bs[l].as_slice().to_vec();
    }
    Ok(TrainOutcome {
        model: out,
        loss_history: history,
    })
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, bc1: f64, bc2: f64) {
    for i in 0..p.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

/// Initialize, fit scaling on `train`, then train.
pub fn fit_mlp(arch: &MlpArchitecture, train: &Dataset, cfg: &MlpTrainConfig) -> Result<TrainOutcome, ModelError> {
    let mut m = init_mlp(arch, cfg.seed)?;
    m.fit_scaling(train)?;
    train_adam(&m, train, cfg)
}

/// `epoch,loss` rows, epochs counted from 1.
pub fn write_loss_history<W: Write>(mut w: W, history: &[f64]) -> std::io::Result<()> {
    writeln!(w, "epoch,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}
