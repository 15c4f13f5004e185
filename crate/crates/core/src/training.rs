//! Empirical-risk minimization with Adam on shuffled minibatches.

use web_time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::risk_and_grad;
use crate::dataio::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::model::ExSpliNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `Σ_o (E_o - y_o)²` against real-valued targets.
    Squared,
    /// `Σ_o (E_o - [o = label])²` against class labels.
    OneHotSquared,
}

impl Loss {
    /// The loss that fits the target kind.
    pub fn for_targets(targets: &Targets) -> Self {
        match targets {
            Targets::Values { .. } => Loss::Squared,
            Targets::Labels { .. } => Loss::OneHotSquared,
        }
    }

    pub(crate) fn check(self, targets: &Targets, outputs: usize) -> Result<()> {
        match (self, targets) {
            (Loss::Squared, Targets::Values { outputs: o, .. })
            | (Loss::OneHotSquared, Targets::Labels { classes: o, .. }) => {
                if *o != outputs {
                    return Err(Error::shape(
                        format!("{outputs} target components"),
                        format!("{o}"),
                    ));
                }
                Ok(())
            }
            (Loss::Squared, _) => Err(Error::shape("real-valued targets", "class labels")),
            (Loss::OneHotSquared, _) => Err(Error::shape("class labels", "real-valued targets")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Mae,
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Mae => "mae",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn for_targets(targets: &Targets) -> Self {
        match targets {
            Targets::Values { .. } => Metric::Mse,
            Targets::Labels { .. } => Metric::Accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 15,
            batch_size: 32,
            seed: 0,
            loss: Loss::Squared,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyperparameter(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return bad(format!(
                "batch size {} must lie in 1..={dataset_len}",
                self.batch_size
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn from_config(len: usize, cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            ..Self::new(len, cfg.learning_rate)
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Coordinates with `mask[i] == false` are left untouched,
    /// moments included.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], mask: Option<&[bool]>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                format!("{} parameters and gradients", self.m.len()),
                format!("{} and {}", params.len(), grads.len()),
            ));
        }
        if mask.is_some_and(|m| m.len() != self.m.len()) {
            return Err(Error::shape(self.m.len(), mask.map_or(0, <[bool]>::len)));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Applies one Adam step to the model's trainable parameters.
pub fn adam_step(model: &mut ExSpliNet, adam: &mut Adam, grads: &[f64]) -> Result<()> {
    let mask = model.trainable_mask();
    let mut params = model.params().to_vec();
    adam.step(&mut params, grads, Some(&mask))?;
    model.set_params(&params)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Empirical risk on the training set after each epoch.
    pub epoch_risks: Vec<f64>,
    /// Test metric after each epoch, when a test set was given.
    pub epoch_test: Vec<f64>,
    pub metric: Metric,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    /// Test metrics of the returned model.
    pub final_metrics: Vec<(Metric, f64)>,
    pub wall_seconds: f64,
    pub param_count: usize,
    pub steps: u64,
}

/// Per-epoch progress passed to observers.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_risk: f64,
    pub test_metric: Option<f64>,
}

pub fn empirical_risk(model: &ExSpliNet, data: &Dataset, loss: Loss) -> Result<f64> {
    loss.check(data.targets(), model.config().outputs)?;
    let pred = model.forward_batch(data.inputs())?;
    Ok(squared_errors(&pred, data) / data.len() as f64)
}

fn squared_errors(pred: &[f64], data: &Dataset) -> f64 {
    let mut s = 0.0;
    match data.targets() {
        Targets::Values { values, .. } => {
            for (p, y) in pred.iter().zip(values) {
                s += (p - y) * (p - y);
            }
        }
        Targets::Labels { classes, labels } => {
            for (row, &label) in pred.chunks(*classes).zip(labels) {
                for (o, p) in row.iter().enumerate() {
                    let y = if o == label { 1.0 } else { 0.0 };
                    s += (p - y) * (p - y);
                }
            }
        }
    }
    s
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(model: &ExSpliNet, data: &Dataset, metric: Metric) -> Result<f64> {
    let outputs = model.config().outputs;
    if data.targets().arity() != outputs {
        return Err(Error::shape(
            format!("{outputs} target components"),
            data.targets().arity(),
        ));
    }
    let pred = model.forward_batch(data.inputs())?;
    let n = (data.len() * outputs) as f64;
    match metric {
        Metric::Mse => Ok(squared_errors(&pred, data) / n),
        Metric::Mae => {
            let s: f64 = match data.targets() {
                Targets::Values { values, .. } => {
                    pred.iter().zip(values).map(|(p, y)| (p - y).abs()).sum()
                }
                Targets::Labels { labels, .. } => pred
                    .chunks(outputs)
                    .zip(labels)
                    .flat_map(|(row, &l)| {
                        row.iter().enumerate().map(move |(o, p)| {
                            (p - if o == l { 1.0 } else { 0.0 }).abs()
                        })
                    })
                    .sum(),
            };
            Ok(s / n)
        }
        Metric::Accuracy => {
            let Targets::Labels { labels, .. } = data.targets() else {
                return Err(Error::shape("class labels for accuracy", "real-valued targets"));
            };
            let hits = pred
                .chunks(outputs)
                .zip(labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            Ok(hits as f64 / data.len() as f64)
        }
    }
}

pub fn train(
    model: ExSpliNet,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(ExSpliNet, TrainReport)> {
    train_with(model, train_set, test_set, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: ExSpliNet,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochStats),
) -> Result<(ExSpliNet, TrainReport)> {
    let start = Instant::now();
    config.validate(train_set.len())?;
    let outputs = model.config().outputs;
    config.loss.check(train_set.targets(), outputs)?;
    train_set.check_unit_domain()?;
    if let Some(t) = test_set {
        config.loss.check(t.targets(), outputs)?;
        t.check_unit_domain()?;
    }
    let metric = Metric::for_targets(train_set.targets());
    let mask = model.trainable_mask();
    let mut adam = Adam::from_config(model.param_count(), config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut params = model.params().to_vec();

    let mut best = (f64::INFINITY, 0, params.clone());
    let mut epoch_risks = Vec::with_capacity(config.epochs);
    let mut epoch_test = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (_, g) = risk_and_grad(&model, train_set, Some(batch), config.loss)?;
            adam.step(&mut params, g.values(), Some(&mask))?;
            model.set_params(&params)?;
        }
        let risk = empirical_risk(&model, train_set, config.loss)?;
        if !risk.is_finite() {
            return Err(Error::NonFinite(format!("training risk after epoch {epoch}")));
        }
        epoch_risks.push(risk);
        if risk < best.0 {
            best = (risk, epoch, params.clone());
        }
        let test_metric = match test_set {
            Some(t) => {
                let v = evaluate(&model, t, metric)?;
                epoch_test.push(v);
                Some(v)
            }
            None => None,
        };
        observer(&EpochStats {
            epoch,
            train_risk: risk,
            test_metric,
        });
    }
    model.set_params(&best.2)?;
    let final_metrics = match test_set {
        Some(t) => {
            let metrics: &[Metric] = match t.targets() {
                Targets::Values { .. } => &[Metric::Mse, Metric::Mae],
                Targets::Labels { .. } => &[Metric::Accuracy, Metric::Mse],
            };
            metrics
                .iter()
                .map(|&m| evaluate(&model, t, m).map(|v| (m, v)))
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    let report = TrainReport {
        epoch_risks,
        epoch_test,
        metric,
        best_epoch: best.1,
        final_metrics,
        wall_seconds: start.elapsed().as_secs_f64(),
        param_count: model.param_count(),
        steps: adam.steps(),
    };
    Ok((model, report))
}

/// Seeded, size-balanced folds as `(train, test)` index lists.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::InvalidHyperparameter(format!(
            "k = {k} folds need 2 <= k <= {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| {
            let (lo, hi) = (f * n / k, (f + 1) * n / k);
            let mut test = idx[lo..hi].to_vec();
            let mut train: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
            test.sort_unstable();
            train.sort_unstable();
            (train, test)
        })
        .collect())
}

pub fn kfold(data: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    Ok(kfold_indices(data.len(), k, seed)?
        .into_iter()
        .map(|(tr, te)| (data.subset(&tr), data.subset(&te)))
        .collect())
}
