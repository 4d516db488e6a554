//! From-scratch training for the scoring head.
//!
//! MSE on the continuous aggregated labels, analytic backprop, AdamW with
//! decoupled weight decay, cosine-annealed learning rate without warmup,
//! early stopping on validation Spearman, best-epoch weight restoration.
//! Every random decision (shuffle, init, batch order) derives from
//! `TrainConfig::seed`, so a fixed config reproduces bitwise-identical
//! heads.

use serde::{Deserialize, Serialize};

use super::{RegressionHead, RegressorError, TrainingMeta};
use crate::annotations::AggregatedLabel;
use crate::embeddings::EmbeddingStore;
use crate::metrics;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub lr_peak: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub max_epochs: u32,
    pub val_fraction: f64,
    pub early_stop_delta: f64,
    pub early_stop_patience: u32,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Teacher/label-set name recorded in the head metadata; doubles as the
    /// head id when pairing with threshold specs.
    pub label_source: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 1000,
            lr_peak: 5e-4,
            lr_min: 0.0,
            batch_size: 1024,
            max_epochs: 20,
            val_fraction: 0.10,
            early_stop_delta: 1e-3,
            early_stop_patience: 5,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            label_source: "labels".into(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), RegressorError> {
        let fail = |m: &str| Err(RegressorError::InvalidConfig(m.into()));
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be >= 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail("val_fraction must lie in (0, 1)");
        }
        if self.lr_min > self.lr_peak {
            return fail("lr_min must not exceed lr_peak");
        }
        Ok(())
    }
}

/// 64-bit working parameters used during training; quantized to the 32-bit
/// [`RegressionHead`] once training finishes. The same struct carries
/// gradients and Adam moments, which share the shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl HeadParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
        }
    }

    /// He initialization for the hidden layer (variance 2/input_dim),
    /// variance 1/hidden_dim for the output layer, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let w1_std = (2.0 / input_dim as f64).sqrt();
        for w in &mut p.w1 {
            *w = rng.normal_scaled(0.0, w1_std);
        }
        let w2_std = (1.0 / hidden_dim as f64).sqrt();
        for w in &mut p.w2 {
            *w = rng.normal_scaled(0.0, w2_std);
        }
        p
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut score = self.b2;
        for (j, row) in self.w1.chunks_exact(self.input_dim).enumerate() {
            let pre = self.b1[j] + dot(row, x);
            if pre > 0.0 {
                score += self.w2[j] * pre;
            }
        }
        score
    }

    fn quantize(&self, backbone_id: String, meta: TrainingMeta) -> RegressionHead {
        RegressionHead {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w1: self.w1.iter().map(|&v| v as f32).collect(),
            b1: self.b1.iter().map(|&v| v as f32).collect(),
            w2: self.w2.iter().map(|&v| v as f32).collect(),
            b2: self.b2 as f32,
            backbone_id,
            meta,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut rest = 0.0;
    for (x, y) in a
        .chunks_exact(4)
        .remainder()
        .iter()
        .zip(b.chunks_exact(4).remainder())
    {
        rest += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
}

/// Mean squared error.
pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64, RegressorError> {
    if preds.len() != targets.len() {
        return Err(RegressorError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(RegressorError::EmptyInput);
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
}

/// Analytic gradients of mse_loss(forward(x), target) averaged over the
/// batch, plus the batch loss. `xs` is row-major with one row per target.
/// The ReLU subgradient at exactly zero is zero.
pub fn backward(
    params: &HeadParams,
    xs: &[f64],
    targets: &[f64],
) -> Result<(HeadParams, f64), RegressorError> {
    let n = targets.len();
    if n == 0 {
        return Err(RegressorError::EmptyInput);
    }
    if xs.len() != n * params.input_dim {
        return Err(RegressorError::LengthMismatch(xs.len(), n * params.input_dim));
    }
    let mut grads = HeadParams::zeros(params.input_dim, params.hidden_dim);
    let mut loss = 0.0;
    let mut pre = vec![0.0f64; params.hidden_dim];
    for (x, &target) in xs.chunks_exact(params.input_dim).zip(targets) {
        let mut pred = params.b2;
        for (j, row) in params.w1.chunks_exact(params.input_dim).enumerate() {
            let p = params.b1[j] + dot(row, x);
            pre[j] = p;
            if p > 0.0 {
                pred += params.w2[j] * p;
            }
        }
        let residual = pred - target;
        loss += residual * residual;
        let dl = 2.0 * residual / n as f64;
        grads.b2 += dl;
        for (j, &activation) in pre.iter().enumerate() {
            if activation > 0.0 {
                grads.w2[j] += dl * activation;
                let g = dl * params.w2[j];
                grads.b1[j] += g;
                let row = &mut grads.w1[j * params.input_dim..(j + 1) * params.input_dim];
                for (w, &xv) in row.iter_mut().zip(x) {
                    *w += g * xv;
                }
            }
        }
    }
    Ok((grads, loss / n as f64))
}

/// First and second Adam moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: HeadParams,
    pub v: HeadParams,
}

impl AdamState {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            m: HeadParams::zeros(input_dim, hidden_dim),
            v: HeadParams::zeros(input_dim, hidden_dim),
        }
    }
}

/// One AdamW update: decoupled decay (`param -= lr * weight_decay * param`
/// on every parameter) followed by the bias-corrected Adam step.
/// `step_index` is 1-based.
pub fn adamw_step(
    params: &mut HeadParams,
    grads: &HeadParams,
    state: &mut AdamState,
    step_index: u64,
    lr: f64,
    config: &TrainConfig,
) {
    debug_assert!(step_index >= 1);
    let b1 = config.adam_beta1;
    let b2 = config.adam_beta2;
    let m_corr = 1.0 - b1.powi(step_index as i32);
    let v_corr = 1.0 - b2.powi(step_index as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *p -= lr * config.weight_decay * *p;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / m_corr;
        let v_hat = *v / v_corr;
        *p -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
    };
    for i in 0..params.w1.len() {
        update(&mut params.w1[i], grads.w1[i], &mut state.m.w1[i], &mut state.v.w1[i]);
    }
    for i in 0..params.b1.len() {
        update(&mut params.b1[i], grads.b1[i], &mut state.m.b1[i], &mut state.v.b1[i]);
    }
    for i in 0..params.w2.len() {
        update(&mut params.w2[i], grads.w2[i], &mut state.m.w2[i], &mut state.v.w2[i]);
    }
    update(&mut params.b2, grads.b2, &mut state.m.b2, &mut state.v.b2);
}

/// Cosine annealing without warmup:
/// `lr_min + 0.5 * (lr_peak - lr_min) * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_peak: f64, lr_min: f64) -> f64 {
    debug_assert!(total_steps >= 1 && step <= total_steps);
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_peak - lr_min) * (1.0 + phase.cos())
}

/// Outcome of feeding one epoch's validation value to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Patience-based stopping on the validation metric.
///
/// An epoch improves only when its value beats the tracked best by at
/// least `delta`; the tracked best moves only on such qualified
/// improvements, so a slow drift below `delta` per epoch never resets the
/// patience counter and the restored weights stay at the last qualified
/// best. `None` values (metric undefined this epoch) never improve.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    delta: f64,
    patience: u32,
    best: Option<f64>,
    stale: u32,
}

impl EarlyStopping {
    pub fn new(delta: f64, patience: u32) -> Self {
        Self {
            delta,
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, value: Option<f64>) -> StopDecision {
        let improved = match (value, self.best) {
            (Some(v), Some(best)) => v - best >= self.delta,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            self.best = value;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    /// None when the metric was undefined for the epoch (e.g. constant
    /// predictions).
    pub val_spearman: Option<f64>,
    /// Learning rate at the first optimizer step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Validation metric hook: maps (predictions, targets) to a value, or None
/// when undefined. The default is Spearman correlation.
pub type ValMetric<'a> = dyn FnMut(&[f64], &[f64]) -> Option<f64> + 'a;

/// The deterministic train/validation split: a seeded shuffle of the label
/// indices, with the last `val_fraction` held out. Exposed so callers can
/// reconstruct which documents served as validation.
pub fn train_validation_split(
    n: usize,
    val_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut order);
    let val_len = (n as f64 * val_fraction).floor() as usize;
    let val = order.split_off(n - val_len);
    (order, val)
}

/// Trains a head on the labeled documents, reading embeddings from the
/// store. Deterministic given `config.seed`; returns the weights of the
/// best validation epoch, not the last.
pub fn train(
    store: &EmbeddingStore,
    labels: &[AggregatedLabel],
    config: &TrainConfig,
) -> Result<(RegressionHead, TrainHistory), RegressorError> {
    train_with_metric(store, labels, config, &mut |preds, targets| {
        metrics::spearman(preds, targets).ok()
    })
}

/// [`train`] with a pluggable validation metric (diagnostics and tests).
pub fn train_with_metric(
    store: &EmbeddingStore,
    labels: &[AggregatedLabel],
    config: &TrainConfig,
    metric: &mut ValMetric,
) -> Result<(RegressionHead, TrainHistory), RegressorError> {
    config.validate()?;
    let n = labels.len();
    let needed = (2.0 / config.val_fraction).ceil() as usize;
    if n < needed {
        return Err(RegressorError::TooFewSamples { needed, got: n });
    }
    if labels.iter().all(|l| l.score == labels[0].score) {
        return Err(RegressorError::DegenerateLabels);
    }

    let input_dim = store.dim();
    let mut features = Vec::with_capacity(n * input_dim);
    let mut missing = Vec::new();
    for label in labels {
        match store.get(&label.doc_id)? {
            Some(values) => features.extend(values.iter().map(|&v| v as f64)),
            None => missing.push(label.doc_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(RegressorError::MissingEmbeddings(missing));
    }
    let targets: Vec<f64> = labels.iter().map(|l| l.score).collect();

    let (train_idx, val_idx) = train_validation_split(n, config.val_fraction, config.seed);
    let train_n = train_idx.len();
    let val_targets: Vec<f64> = val_idx.iter().map(|&i| targets[i]).collect();
    let val_features: Vec<Vec<f64>> = val_idx
        .iter()
        .map(|&i| features[i * input_dim..(i + 1) * input_dim].to_vec())
        .collect();

    // The split consumed the first rng draw block; init comes next.
    let mut rng = SeededRng::new(config.seed);
    {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order); // replay the split's consumption
    }
    let mut params = HeadParams::init(input_dim, config.hidden_dim, &mut rng);
    // Start the output bias at the training-label mean: the ranking signal,
    // not the scale offset, should consume the optimization budget.
    params.b2 = train_idx.iter().map(|&i| targets[i]).sum::<f64>() / train_n as f64;

    let steps_per_epoch = train_n.div_ceil(config.batch_size) as u64;
    let total_steps = steps_per_epoch * config.max_epochs as u64;
    let mut state = AdamState::new(input_dim, config.hidden_dim);
    let mut stopper = EarlyStopping::new(config.early_stop_delta, config.early_stop_patience);
    let mut best_params: Option<HeadParams> = None;
    let mut history = TrainHistory::default();
    let mut global_step = 0u64;
    let mut order = train_idx;
    let mut batch_x = Vec::with_capacity(config.batch_size * input_dim);
    let mut batch_y = Vec::with_capacity(config.batch_size);
    let mut epochs_run = 0u32;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let epoch_start_lr = cosine_lr(global_step, total_steps, config.lr_peak, config.lr_min);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in batch {
                batch_x.extend_from_slice(&features[i * input_dim..(i + 1) * input_dim]);
                batch_y.push(targets[i]);
            }
            let (grads, loss) = backward(&params, &batch_x, &batch_y)?;
            let lr = cosine_lr(global_step, total_steps, config.lr_peak, config.lr_min);
            adamw_step(&mut params, &grads, &mut state, global_step + 1, lr, config);
            global_step += 1;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_n as f64;

        let val_preds: Vec<f64> = val_features.iter().map(|x| params.forward(x)).collect();
        let val_value = metric(&val_preds, &val_targets);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_spearman: val_value,
            lr: epoch_start_lr,
        });
        let decision = stopper.observe(val_value);
        if decision.improved {
            best_params = Some(params.clone());
        }
        if decision.stop {
            break;
        }
    }

    let best_value = stopper.best().ok_or(RegressorError::NoUsableValidationMetric)?;
    let best_params = best_params.expect("best params recorded whenever a best value exists");
    let meta = TrainingMeta {
        seed: config.seed,
        epochs_run,
        best_val_spearman: best_value,
        label_source: config.label_source.clone(),
    };
    Ok((best_params.quantize(store.backbone_id().to_string(), meta), history))
}
