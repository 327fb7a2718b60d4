//! Group-normalized MLP classifier trained with mini-batch SGD + momentum on
//! softmax cross-entropy.
//!
//! Hidden layers are unit blocks (no bias, γ = 1, β = 0 fixed) so the group
//! count is the only normalization knob. Normalization statistics are per
//! sample; there are no running statistics.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{activation_derivative, ActivationKind};
use crate::error::{Error, Result};
use crate::numerics::{fill_normal, matmul, matmul_transpose_b, transpose_matmul, Matrix, RngStream};
use crate::unitblock::{groupnorm_backward, unit_block_forward, ForwardTrace, UnitBlockParams};

/// Rows per forward pass when evaluating a whole dataset.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::domain("dataset needs at least one class"));
        }
        if labels.is_empty() || labels.len() != features.rows() {
            return Err(Error::domain(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::domain(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Gaussian blobs: class `c` is centred at `separation·u_c` for a random
/// unit vector `u_c`, with identity covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub d: usize,
    pub separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class == 0 || self.d == 0 {
            return Err(Error::domain("synthetic dataset sizes must be positive"));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::domain(format!(
                "separation must be non-negative, got {}",
                self.separation
            )));
        }
        Ok(())
    }

    pub fn centers(&self) -> Matrix {
        let mut rng = RngStream::new(self.seed, 0).generator();
        let mut c = Matrix::zeros(self.classes, self.d);
        for k in 0..self.classes {
            let row = c.row_mut(k);
            fill_normal(&mut rng, 0.0, 1.0, row);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in row.iter_mut() {
                *v *= self.separation / norm;
            }
        }
        c
    }

    fn draw(&self, centers: &Matrix, per_class: usize, stream: u64) -> Result<Dataset> {
        let n = self.classes * per_class;
        let mut rng = RngStream::new(self.seed, stream).generator();
        let mut order: Vec<usize> = (0..n).map(|i| i / per_class).collect();
        order.shuffle(&mut rng);
        let mut features = Matrix::zeros(n, self.d);
        for (i, &label) in order.iter().enumerate() {
            let row = features.row_mut(i);
            fill_normal(&mut rng, 0.0, 1.0, row);
            for (v, c) in row.iter_mut().zip(centers.row(label)) {
                *v += c;
            }
        }
        Dataset::new(features, order, self.classes)
    }

    /// Train and test sets sharing the same class centres.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        if self.test_per_class == 0 {
            return Err(Error::domain("test_per_class must be positive"));
        }
        let centers = self.centers();
        Ok((
            self.draw(&centers, self.per_class, 1)?,
            self.draw(&centers, self.test_per_class, 2)?,
        ))
    }
}

pub fn synth_dataset(classes: usize, per_class: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    let spec = SynthSpec {
        classes,
        per_class,
        test_per_class: 0,
        d,
        separation,
        seed,
    };
    spec.validate()?;
    spec.draw(&spec.centers(), per_class, 1)
}

/// Classifies each row by the nearest class mean of `train`.
pub fn nearest_centroid_error_pct(train: &Dataset, test: &Dataset) -> f64 {
    let mut centroids = Matrix::zeros(train.classes, train.dim());
    let mut counts = vec![0usize; train.classes];
    for (i, &l) in train.labels.iter().enumerate() {
        counts[l] += 1;
        for (c, v) in centroids.row_mut(l).iter_mut().zip(train.features.row(i)) {
            *c += v;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n > 0 {
            for c in centroids.row_mut(k) {
                *c /= n as f64;
            }
        }
    }
    let wrong = (0..test.len())
        .filter(|&i| {
            let x = test.features.row(i);
            let best = (0..train.classes)
                .filter(|&k| counts[k] > 0)
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(centroids.row(a)).map(|(p, q)| (p - q) * (p - q)).sum();
                    let db: f64 = x.iter().zip(centroids.row(b)).map(|(p, q)| (p - q) * (p - q)).sum();
                    da.total_cmp(&db)
                });
            best != Some(test.labels[i])
        })
        .count();
    100.0 * wrong as f64 / test.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// std = 1
    Unit,
    /// std = √(2/n_in)
    FanInScaled,
}

impl InitRule {
    pub fn std(self, n_in: usize) -> f64 {
        match self {
            InitRule::Unit => 1.0,
            InitRule::FanInScaled => (2.0 / n_in as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<HiddenLayer>,
    pub classes: usize,
    pub activation: ActivationKind,
    pub eps: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<HiddenLayer>, classes: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden,
            classes,
            activation: ActivationKind::Relu,
            eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 {
            return Err(Error::domain("input dimension and class count must be positive"));
        }
        for (i, h) in self.hidden.iter().enumerate() {
            if h.width == 0 || h.groups == 0 || h.width % h.groups != 0 {
                return Err(Error::domain(format!(
                    "hidden layer {i}: groups {} must divide width {}",
                    h.groups, h.width
                )));
            }
        }
        Ok(())
    }

    /// The same architecture with every hidden layer using `groups`.
    pub fn with_all_groups(&self, groups: usize) -> MlpSpec {
        let mut s = self.clone();
        for h in &mut s.hidden {
            h.groups = groups;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub blocks: Vec<UnitBlockParams>,
    /// `last_hidden x classes`
    pub head_weights: Matrix,
    pub head_bias: Vec<f64>,
}

/// Parameter gradients, shaped like [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub blocks: Vec<Matrix>,
    pub head_weights: Matrix,
    pub head_bias: Vec<f64>,
}

struct Pass {
    traces: Vec<ForwardTrace>,
    logits: Matrix,
}

impl MlpModel {
    /// Hidden weights are `N(0, std²)` with std from `init`; the read-out
    /// head starts at zero so the initial prediction is uniform.
    pub fn init(spec: &MlpSpec, init: InitRule, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngStream::new(seed, 0).generator();
        let mut blocks = Vec::with_capacity(spec.hidden.len());
        let mut n_in = spec.input_dim;
        for h in &spec.hidden {
            let mut w = Matrix::zeros(n_in, h.width);
            fill_normal(&mut rng, 0.0, init.std(n_in), w.data_mut());
            blocks.push(UnitBlockParams::new(w, h.groups, spec.activation)?.with_eps(spec.eps));
            n_in = h.width;
        }
        Ok(MlpModel {
            blocks,
            head_weights: Matrix::zeros(n_in, spec.classes),
            head_bias: vec![0.0; spec.classes],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.blocks.first().map(|b| b.n_in).unwrap_or(self.head_weights.rows())
    }

    pub fn classes(&self) -> usize {
        self.head_bias.len()
    }

    fn pass(&self, x: &Matrix) -> Result<Pass> {
        let mut traces = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let input = traces.last().map(|t: &ForwardTrace| &t.x_next).unwrap_or(x);
            traces.push(unit_block_forward(b, input)?);
        }
        let last = traces.last().map(|t| &t.x_next).unwrap_or(x);
        let mut logits = matmul(last, &self.head_weights)?;
        for r in 0..logits.rows() {
            for (l, b) in logits.row_mut(r).iter_mut().zip(&self.head_bias) {
                *l += b;
            }
        }
        Ok(Pass { traces, logits })
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.pass(x)?.logits)
    }

    /// Output of every hidden block.
    pub fn hidden_activations(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        Ok(self.pass(x)?.traces.into_iter().map(|t| t.x_next).collect())
    }

    /// Mean cross-entropy over the rows of `x`.
    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let logits = self.logits(x)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    pub fn loss_and_grads(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, MlpGrads)> {
        let pass = self.pass(x)?;
        let (loss, d_logits) = softmax_cross_entropy(&pass.logits, labels)?;
        let last = pass.traces.last().map(|t| &t.x_next).unwrap_or(x);
        let head_weights = transpose_matmul(last, &d_logits)?;
        let mut head_bias = vec![0.0; self.classes()];
        for r in 0..d_logits.rows() {
            for (g, v) in head_bias.iter_mut().zip(d_logits.row(r)) {
                *g += v;
            }
        }
        let mut upstream = matmul_transpose_b(&d_logits, &self.head_weights)?;
        let mut blocks = vec![Matrix::zeros(0, 0); self.blocks.len()];
        for (i, (params, trace)) in self.blocks.iter().zip(&pass.traces).enumerate().rev() {
            let d_z = activation_derivative(params.activation, &trace.z).hadamard(&upstream)?;
            let d_y = groupnorm_backward(params, trace, &d_z)?;
            blocks[i] = transpose_matmul(&trace.x, &d_y)?;
            if i > 0 {
                upstream = matmul_transpose_b(&d_y, &params.weights)?;
            }
        }
        Ok((
            loss,
            MlpGrads {
                blocks,
                head_weights,
                head_bias,
            },
        ))
    }

    /// `None` for rows whose logits are not all finite.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<Option<usize>>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                if row.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                let mut best = 0;
                for (k, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = k;
                    }
                }
                Some(best)
            })
            .collect())
    }

    /// Percentage of misclassified rows; non-finite outputs count as wrong.
    pub fn error_pct(&self, data: &Dataset) -> Result<f64> {
        let mut wrong = 0usize;
        for start in (0..data.len()).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(data.len())).collect();
            let preds = self.predict(&data.features.select_rows(&idx))?;
            wrong += preds
                .iter()
                .zip(&idx)
                .filter(|(p, &i)| **p != Some(data.labels[i]))
                .count();
        }
        Ok(100.0 * wrong as f64 / data.len() as f64)
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.blocks.iter_mut().map(|b| b.weights.data_mut()).collect();
        out.push(self.head_weights.data_mut());
        out.push(&mut self.head_bias);
        out
    }
}

impl MlpGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.blocks.iter().map(|m| m.data()).collect();
        out.push(self.head_weights.data());
        out.push(&self.head_bias);
        out
    }
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("softmax_cross_entropy", logits.shape(), (labels.len(), 1)));
    }
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= logits.cols() {
            return Err(Error::domain(format!("label {label} out of range for {} classes", logits.cols())));
        }
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(r);
        let mut sum = 0.0;
        for (gv, &l) in g.iter_mut().zip(row) {
            *gv = (l - max).exp();
            sum += *gv;
        }
        total += sum.ln() + max - row[label];
        for gv in g.iter_mut() {
            *gv /= sum * n;
        }
        g[label] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            init: InitRule::FanInScaled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::domain("batch size and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    pub test_error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub input_dim: usize,
    pub classes: usize,
    pub hidden: Vec<HiddenLayer>,
    pub epochs: Vec<EpochRecord>,
    /// Test error after the last epoch that ran.
    pub final_test_error_pct: f64,
    pub diverged: bool,
    /// Epoch during which the loss first became non-finite.
    pub diverged_at_epoch: Option<usize>,
}

/// Trains `model` in place. A non-finite batch loss stops training and
/// returns the partial report with `diverged` set.
pub fn train_mlp(model: &mut MlpModel, train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if train.classes != test.classes || train.classes != model.classes() {
        return Err(Error::domain(format!(
            "class counts differ: model {}, train {}, test {}",
            model.classes(),
            train.classes,
            test.classes
        )));
    }
    if train.dim() != model.input_dim() || test.dim() != model.input_dim() {
        return Err(Error::shape(
            "train_mlp",
            (train.len(), train.dim()),
            (model.input_dim(), model.classes()),
        ));
    }
    let mut velocity: Vec<Vec<f64>> = model.params_mut().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut report = TrainReport {
        config: *config,
        input_dim: model.input_dim(),
        classes: model.classes(),
        hidden: model
            .blocks
            .iter()
            .map(|b| HiddenLayer {
                width: b.n_out,
                groups: b.groups,
            })
            .collect(),
        epochs: Vec::with_capacity(config.epochs),
        final_test_error_pct: f64::NAN,
        diverged: false,
        diverged_at_epoch: None,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..config.epochs {
        let mut rng = RngStream::new(config.seed, 1 + epoch as u64).generator();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = train.features.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (loss, grads) = model.loss_and_grads(&x, &labels)?;
            if !loss.is_finite() {
                report.diverged = true;
                report.diverged_at_epoch = Some(epoch);
                break 'epochs;
            }
            loss_sum += loss * batch.len() as f64;
            for ((param, vel), grad) in model.params_mut().into_iter().zip(&mut velocity).zip(grads.slices()) {
                for ((p, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
                    *v = config.momentum * *v + g;
                    *p -= config.learning_rate * *v;
                }
            }
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            test_error_pct: model.error_pct(test)?,
        });
    }
    report.final_test_error_pct = match (report.diverged, report.epochs.last()) {
        (false, Some(last)) => last.test_error_pct,
        _ => model.error_pct(test)?,
    };
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub groups: usize,
    pub seeds: Vec<u64>,
    pub final_errors_pct: Vec<f64>,
    pub mean_final_error_pct: f64,
    pub reports: Vec<TrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: usize,
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn entry(&self, groups: usize) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.groups == groups)
    }
}

/// Trains one model per `(groups, run)`; run `r` uses seed `config.seed + r`
/// for both initialization and shuffling, so every group count sees the same
/// initial weights and batch order. All hidden layers take the swept value.
pub fn sweep_groups(
    spec: &MlpSpec,
    group_values: &[usize],
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    runs: usize,
) -> Result<SweepReport> {
    if runs == 0 || group_values.is_empty() {
        return Err(Error::domain("sweep needs at least one group value and one run"));
    }
    for &g in group_values {
        spec.with_all_groups(g).validate()?;
    }
    config.validate()?;
    let jobs: Vec<(usize, usize)> = group_values
        .iter()
        .flat_map(|&g| (0..runs).map(move |r| (g, r)))
        .collect();
    let reports: Vec<TrainReport> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let cfg = TrainConfig {
                seed: config.seed.wrapping_add(r as u64),
                ..*config
            };
            let mut model = MlpModel::init(&spec.with_all_groups(g), cfg.init, cfg.seed)?;
            train_mlp(&mut model, train, test, &cfg)
        })
        .collect::<Result<_>>()?;
    let entries = group_values
        .iter()
        .zip(reports.chunks(runs))
        .map(|(&groups, reps)| {
            let final_errors_pct: Vec<f64> = reps.iter().map(|r| r.final_test_error_pct).collect();
            SweepEntry {
                groups,
                seeds: reps.iter().map(|r| r.config.seed).collect(),
                mean_final_error_pct: final_errors_pct.iter().sum::<f64>() / runs as f64,
                final_errors_pct,
                reports: reps.to_vec(),
            }
        })
        .collect();
    Ok(SweepReport { runs, entries })
}

/// Worst relative error between analytic parameter gradients of the mean
/// cross-entropy and central differences with step `h`.
pub fn mlp_finite_diff_check(model: &MlpModel, x: &Matrix, labels: &[usize], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("step h must be positive, got {h}")));
    }
    let (_, grads) = model.loss_and_grads(x, labels)?;
    let analytic: Vec<f64> = grads.slices().concat();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0usize;
    let n_slices = probe.params_mut().len();
    for s in 0..n_slices {
        let len = probe.params_mut()[s].len();
        for i in 0..len {
            let orig = probe.params_mut()[s][i];
            probe.params_mut()[s][i] = orig + h;
            let up = probe.loss(x, labels)?;
            probe.params_mut()[s][i] = orig - h;
            let down = probe.loss(x, labels)?;
            probe.params_mut()[s][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(crate::unitblock::relative_error(analytic[flat], numeric));
            flat += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_normal;

    fn tiny_spec(groups: usize) -> MlpSpec {
        MlpSpec::new(8, vec![HiddenLayer { width: 6, groups }], 3)
    }

    fn randomize_head(model: &mut MlpModel, seed: u64) {
        let (r, c) = model.head_weights.shape();
        model.head_weights = sample_normal(&RngStream::new(seed, 9), 0.0, 0.5, r, c).unwrap();
        model.head_bias = vec![0.1, -0.2, 0.05];
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Matrix::zeros(2, 3), vec![0, 3], 3).is_err());
        assert!(Dataset::new(Matrix::zeros(2, 3), vec![0], 3).is_err());
        assert!(Dataset::new(Matrix::zeros(2, 3), vec![0, 2], 3).is_ok());
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_dataset(4, 25, 16, 3.0, 7).unwrap();
        let b = synth_dataset(4, 25, 16, 3.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        for k in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == k).count(), 25);
        }
        assert_ne!(a, synth_dataset(4, 25, 16, 3.0, 8).unwrap());
        // shuffled, not sorted by class
        assert!(a.labels.windows(2).any(|w| w[0] > w[1]));
    }

    #[test]
    fn separated_blobs_are_easy_for_nearest_centroid() {
        let spec = SynthSpec {
            classes: 10,
            per_class: 100,
            test_per_class: 100,
            d: 32,
            separation: 10.0,
            seed: 1,
        };
        let (train, test) = spec.generate().unwrap();
        assert!(nearest_centroid_error_pct(&train, &test) < 1.0);
    }

    #[test]
    fn unseparated_blobs_are_at_chance() {
        let spec = SynthSpec {
            classes: 4,
            per_class: 300,
            test_per_class: 300,
            d: 16,
            separation: 0.0,
            seed: 2,
        };
        let (train, test) = spec.generate().unwrap();
        let err = nearest_centroid_error_pct(&train, &test);
        assert!((60.0..90.0).contains(&err), "{err}");
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero() {
        let logits = Matrix::from_rows(&[[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]).unwrap();
        let (loss, g) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        assert!((loss - 0.5 * (0.40760596444438 + 3f64.ln())).abs() < 1e-12, "{loss}");
        for r in 0..2 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn initial_loss_is_log_classes() {
        let spec = MlpSpec::new(20, vec![HiddenLayer { width: 16, groups: 4 }], 10);
        let model = MlpModel::init(&spec, InitRule::FanInScaled, 3).unwrap();
        let ds = synth_dataset(10, 5, 20, 1.0, 3).unwrap();
        let loss = model.loss(&ds.features, &ds.labels).unwrap();
        assert!((loss - 10f64.ln()).abs() < 0.1 * 10f64.ln(), "{loss}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for groups in [1, 2, 3] {
            let mut model = MlpModel::init(&tiny_spec(groups), InitRule::FanInScaled, 40 + groups as u64).unwrap();
            randomize_head(&mut model, groups as u64);
            let x = sample_normal(&RngStream::new(groups as u64, 3), 0.0, 1.0, 5, 8).unwrap();
            let labels = [0, 1, 2, 1, 0];
            let err = mlp_finite_diff_check(&model, &x, &labels, 1e-5).unwrap();
            assert!(err < 1e-5, "G={groups}: {err}");
        }
    }

    #[test]
    fn small_step_reduces_single_sample_loss() {
        let mut model = MlpModel::init(&tiny_spec(2), InitRule::FanInScaled, 5).unwrap();
        randomize_head(&mut model, 5);
        let ds = synth_dataset(3, 1, 8, 2.0, 5).unwrap().truncate(1);
        let before = model.loss(&ds.features, &ds.labels).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.0,
            batch_size: 1,
            epochs: 1,
            ..TrainConfig::default()
        };
        train_mlp(&mut model, &ds, &ds, &cfg).unwrap();
        let after = model.loss(&ds.features, &ds.labels).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn zero_learning_rate_freezes_model() {
        let spec = MlpSpec::new(8, vec![HiddenLayer { width: 6, groups: 3 }], 3);
        let mut model = MlpModel::init(&spec, InitRule::FanInScaled, 1).unwrap();
        randomize_head(&mut model, 1);
        let start = model.clone();
        let ds = synth_dataset(3, 20, 8, 2.0, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let rep = train_mlp(&mut model, &ds, &ds, &cfg).unwrap();
        assert_eq!(model, start);
        let losses: Vec<f64> = rep.epochs.iter().map(|e| e.train_loss).collect();
        assert!(losses.iter().all(|l| (l - losses[0]).abs() < 1e-12), "{losses:?}");
    }

    #[test]
    fn logistic_regression_head_on_separable_data() {
        let spec = SynthSpec {
            classes: 5,
            per_class: 60,
            test_per_class: 60,
            d: 16,
            separation: 8.0,
            seed: 4,
        };
        let (train, test) = spec.generate().unwrap();
        let baseline = nearest_centroid_error_pct(&train, &test);
        let mut model = MlpModel::init(&MlpSpec::new(16, vec![], 5), InitRule::FanInScaled, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let rep = train_mlp(&mut model, &train, &test, &cfg).unwrap();
        assert!(rep.final_test_error_pct < 5.0, "{} (baseline {baseline})", rep.final_test_error_pct);
        assert!(!rep.diverged);
    }

    #[test]
    fn instance_limit_zeroes_hidden_layer() {
        let spec = MlpSpec::new(8, vec![HiddenLayer { width: 6, groups: 6 }], 3);
        let model = MlpModel::init(&spec, InitRule::FanInScaled, 2).unwrap();
        let x = sample_normal(&RngStream::new(2, 1), 0.0, 1.0, 7, 8).unwrap();
        let hidden = model.hidden_activations(&x).unwrap();
        assert!(hidden[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_sets_flag() {
        let spec = MlpSpec::new(8, vec![HiddenLayer { width: 6, groups: 2 }], 3);
        let mut model = MlpModel::init(&spec, InitRule::FanInScaled, 2).unwrap();
        model.head_bias[0] = f64::NAN;
        let ds = synth_dataset(3, 10, 8, 2.0, 2).unwrap();
        let rep = train_mlp(&mut model, &ds, &ds, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
        assert!(rep.diverged);
        assert_eq!(rep.diverged_at_epoch, Some(0));
        assert!(rep.epochs.is_empty());
        assert_eq!(rep.final_test_error_pct, 100.0);
    }

    #[test]
    fn training_is_deterministic() {
        let spec = MlpSpec::new(8, vec![HiddenLayer { width: 6, groups: 2 }], 3);
        let ds = synth_dataset(3, 30, 8, 3.0, 6).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, ..TrainConfig::default() };
        let run = || {
            let mut m = MlpModel::init(&spec, cfg.init, cfg.seed).unwrap();
            train_mlp(&mut m, &ds, &ds, &cfg).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sweep_rejects_non_divisors_before_training() {
        let spec = MlpSpec::new(8, vec![HiddenLayer { width: 6, groups: 1 }], 3);
        let ds = synth_dataset(3, 5, 8, 3.0, 6).unwrap();
        let err = sweep_groups(&spec, &[2, 4], &ds, &ds, &TrainConfig::default(), 1).unwrap_err();
        assert!(err.to_string().contains("4"), "{err}");
    }

    #[test]
    fn single_value_sweep_equals_direct_training() {
        let spec = MlpSpec::new(8, vec![HiddenLayer { width: 6, groups: 1 }], 3);
        let ds = synth_dataset(3, 20, 8, 3.0, 6).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 11, ..TrainConfig::default() };
        let sweep = sweep_groups(&spec, &[3], &ds, &ds, &cfg, 1).unwrap();
        let mut m = MlpModel::init(&spec.with_all_groups(3), cfg.init, cfg.seed).unwrap();
        let direct = train_mlp(&mut m, &ds, &ds, &cfg).unwrap();
        assert_eq!(sweep.entries[0].reports[0], direct);
        assert_eq!(sweep.entries[0].mean_final_error_pct, direct.final_test_error_pct);
    }

    #[test]
    fn mismatched_classes_rejected() {
        let spec = MlpSpec::new(8, vec![], 3);
        let mut m = MlpModel::init(&spec, InitRule::Unit, 0).unwrap();
        let a = synth_dataset(3, 5, 8, 1.0, 0).unwrap();
        let b = synth_dataset(4, 5, 8, 1.0, 0).unwrap();
        assert!(train_mlp(&mut m, &a, &b, &TrainConfig::default()).is_err());
    }
}
