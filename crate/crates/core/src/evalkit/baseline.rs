//! Multinomial logistic regression trained with mini-batch Adam,
//! a stratified train/validation split and early stopping on validation
//! accuracy.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::trial_store::N_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub val_fraction: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            adam: AdamConfig::default(),
            val_fraction: 0.2,
            early_stop_patience: 10,
            max_epochs: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidConfig(m.to_string()));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.early_stop_patience == 0 {
            return bad("patience must be at least one epoch");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch limit must be positive");
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Linear softmax classifier over flattened feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    /// `feature_dim × 26`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Free-form description of the pipeline that produced the inputs.
    pub feature_spec: String,
}

impl BaselineModel {
    pub fn zeros(feature_dim: usize, feature_spec: impl Into<String>) -> Self {
        BaselineModel {
            weights: Array2::zeros((feature_dim, N_CLASSES)),
            bias: Array1::zeros(N_CLASSES),
            feature_spec: feature_spec.into(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn logits(&self, features: ArrayView2<f64>) -> Result<Array2<f64>, EvalError> {
        if features.ncols() != self.feature_dim() {
            return Err(EvalError::DimensionMismatch {
                expected: self.feature_dim(),
                got: features.ncols(),
            });
        }
        Ok(features.dot(&self.weights) + &self.bias)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &BaselineModel, features: ArrayView2<f64>) -> Result<Vec<usize>, EvalError> {
    let logits = model.logits(features)?;
    Ok(logits.rows().into_iter().map(argmax).collect())
}

/// Mean cross-entropy of the model on `(features, labels)` and its gradient
/// with respect to `(weights, bias)`.
pub fn cross_entropy_and_grad(
    model: &BaselineModel,
    features: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>, Array1<f64>), EvalError> {
    let n = features.nrows();
    let mut probs = model.logits(features)?;
    let mut loss = 0.0;
    for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        loss -= (row[y] / z).ln();
        row /= z;
        row[y] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    let grad_w = features.t().dot(&probs) * inv_n;
    let grad_b = probs.sum_axis(Axis(0)) * inv_n;
    Ok((loss * inv_n, grad_w, grad_b))
}

/// Split indices per class into train/validation; each class contributes
/// `round(val_fraction · n_c)` validation samples.
pub fn stratified_split(labels: &[usize], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let n_val = (val_fraction * idx.len() as f64).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

struct Adam {
    config: AdamConfig,
    step: i32,
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

impl Adam {
    fn new(config: AdamConfig, dim: usize) -> Self {
        Adam {
            config,
            step: 0,
            m_w: Array2::zeros((dim, N_CLASSES)),
            v_w: Array2::zeros((dim, N_CLASSES)),
            m_b: Array1::zeros(N_CLASSES),
            v_b: Array1::zeros(N_CLASSES),
        }
    }

    fn update(&mut self, model: &mut BaselineModel, grad_w: &Array2<f64>, grad_b: &Array1<f64>) {
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        ndarray::Zip::from(&mut model.weights)
            .and(&mut self.m_w)
            .and(&mut self.v_w)
            .and(grad_w)
            .for_each(|p, m, v, &g| apply(p, m, v, g));
        ndarray::Zip::from(&mut model.bias)
            .and(&mut self.m_b)
            .and(&mut self.v_b)
            .and(grad_b)
            .for_each(|p, m, v, &g| apply(p, m, v, g));
    }
}

fn gather(features: ArrayView2<f64>, labels: &[usize], idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    (features.select(Axis(0), idx), idx.iter().map(|&i| labels[i]).collect())
}

fn accuracy(model: &BaselineModel, features: ArrayView2<f64>, labels: &[usize]) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(model, features)?;
    Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

/// Fit a [`BaselineModel`]. The weights from the epoch with the best
/// validation accuracy are returned; training stops once validation
/// accuracy has not improved for `early_stop_patience` epochs.
pub fn train_baseline(
    features: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainConfig,
    feature_spec: &str,
) -> Result<(BaselineModel, TrainHistory), EvalError> {
    config.validate()?;
    let (n, d) = features.dim();
    if labels.len() != n {
        return Err(EvalError::LengthMismatch { left: n, right: labels.len() });
    }
    if d == 0 {
        return Err(EvalError::DimensionMismatch { expected: 1, got: 0 });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= N_CLASSES) {
        return Err(EvalError::BadLabel(bad));
    }
    let mut present = [false; N_CLASSES];
    labels.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(EvalError::DegenerateLabels);
    }

    let (train_idx, val_idx) = stratified_split(labels, config.val_fraction, config.seed);
    let (train_x, train_y) = gather(features, labels, &train_idx);
    let (val_x, val_y) = gather(features, labels, &val_idx);

    let mut model = BaselineModel::zeros(d, feature_spec);
    let mut adam = Adam::new(config.adam, d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_BA7C);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();

    let mut best = model.clone();
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_accuracy: Vec::new(),
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
    };
    let mut stale = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx = train_x.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let (loss, gw, gb) = cross_entropy_and_grad(&model, bx.view(), &by)?;
            if !loss.is_finite() {
                return Err(EvalError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut model, &gw, &gb);
        }
        history.train_loss.push(epoch_loss / train_idx.len().max(1) as f64);

        let val_acc = if val_y.is_empty() {
            accuracy(&model, train_x.view(), &train_y)?
        } else {
            accuracy(&model, val_x.view(), &val_y)?
        };
        history.val_accuracy.push(val_acc);
        if val_acc > history.best_val_accuracy {
            history.best_val_accuracy = val_acc;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok((best, history))
}

/// Accuracy of predictions against labels.
pub fn predictions_accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_model(d: usize, rng: &mut ChaCha8Rng) -> BaselineModel {
        let mut m = BaselineModel::zeros(d, "test");
        m.weights.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        m.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        m
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = BaselineModel::zeros(4, "");
        let x = Array2::from_elem((3, 4), 1.5);
        assert_eq!(predict(&m, x.view()).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn bias_one_hot_decides() {
        let mut m = BaselineModel::zeros(4, "");
        m.bias[17] = 1.0;
        let x = Array2::from_elem((5, 4), -3.0);
        assert_eq!(predict(&m, x.view()).unwrap(), vec![17; 5]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = BaselineModel::zeros(4, "");
        let x = Array2::<f64>::zeros((2, 3));
        assert!(matches!(predict(&m, x.view()), Err(EvalError::DimensionMismatch { expected: 4, got: 3 })));
    }

    #[test]
    fn predict_matches_row_loop_and_ignores_logit_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(7, &mut rng);
        let x = Array2::from_shape_fn((40, 7), |_| rng.random_range(-2.0..2.0));
        let ours = predict(&m, x.view()).unwrap();
        for (r, &p) in ours.iter().enumerate() {
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..26 {
                let mut z = m.bias[c];
                for k in 0..7 {
                    z += x[[r, k]] * m.weights[[k, c]];
                }
                if z > best.1 {
                    best = (c, z);
                }
            }
            assert_eq!(p, best.0);
        }
        let mut shifted = m.clone();
        shifted.bias += 12.5;
        assert_eq!(predict(&shifted, x.view()).unwrap(), ours);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (n, d) = (64, 10);
        let m = random_model(d, &mut rng);
        let x = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..26)).collect();
        let (_, gw, gb) = cross_entropy_and_grad(&m, x.view(), &y).unwrap();
        let h = 1e-5;
        let loss = |mm: &BaselineModel| cross_entropy_and_grad(mm, x.view(), &y).unwrap().0;
        let mut worst: f64 = 0.0;
        for k in 0..d {
            for c in 0..26 {
                let mut p = m.clone();
                p.weights[[k, c]] += h;
                let mut q = m.clone();
                q.weights[[k, c]] -= h;
                let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                worst = worst.max((fd - gw[[k, c]]).abs() / gw[[k, c]].abs().max(1e-3));
            }
        }
        for c in 0..26 {
            let mut p = m.clone();
            p.bias[c] += h;
            let mut q = m.clone();
            q.bias[c] -= h;
            let fd = (loss(&p) - loss(&q)) / (2.0 * h);
            worst = worst.max((fd - gb[c]).abs() / gb[c].abs().max(1e-3));
        }
        assert!(worst <= 1e-5, "max relative error {worst}");
    }

    #[test]
    fn stratified_split_keeps_proportions() {
        let labels: Vec<usize> = (0..26).flat_map(|c| std::iter::repeat_n(c, 10 + c)).collect();
        let (train, val) = stratified_split(&labels, 0.2, 4);
        assert_eq!(train.len() + val.len(), labels.len());
        for c in 0..26 {
            let n_c = (10 + c) as f64;
            let v = val.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!((v - 0.2 * n_c).abs() <= 1.0);
        }
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort();
        assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
    }

    #[test]
    fn separable_clusters_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 30;
        let centres: Vec<Vec<f64>> = (0..26).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let n_per = 20;
        let mut x = Array2::zeros((26 * n_per, d));
        let mut y = Vec::new();
        for c in 0..26 {
            for i in 0..n_per {
                let r = c * n_per + i;
                for k in 0..d {
                    x[[r, k]] = centres[c][k] + 0.2 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                }
                y.push(c);
            }
        }
        let cfg = TrainConfig {
            adam: AdamConfig { learning_rate: 1e-2, ..Default::default() },
            ..Default::default()
        };
        let (m, hist) = train_baseline(x.view(), &y, &cfg, "clusters").unwrap();
        let acc = predictions_accuracy(&predict(&m, x.view()).unwrap(), &y);
        assert!(acc >= 0.99, "accuracy {acc}");
        assert_eq!(hist.best_val_accuracy, hist.val_accuracy[hist.best_epoch]);
    }

    #[test]
    fn full_batch_loss_does_not_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, d) = (200, 12);
        let x = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..n).map(|i| (i * 7) % 26).collect();
        let cfg = TrainConfig {
            batch_size: n,
            adam: AdamConfig { learning_rate: 1e-2, ..Default::default() },
            early_stop_patience: 1000,
            max_epochs: 60,
            ..Default::default()
        };
        let (_, hist) = train_baseline(x.view(), &y, &cfg, "").unwrap();
        for w in hist.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Array2::<f64>::zeros((10, 3));
        assert!(matches!(
            train_baseline(x.view(), &[4; 10], &TrainConfig::default(), ""),
            Err(EvalError::DegenerateLabels)
        ));
    }

    #[test]
    fn non_finite_features_fail_loudly() {
        let mut x = Array2::<f64>::ones((20, 3));
        x.column_mut(0).fill(f64::INFINITY);
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        assert!(matches!(
            train_baseline(x.view(), &y, &TrainConfig::default(), ""),
            Err(EvalError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((100, 5), |_| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let cfg = TrainConfig { max_epochs: 20, ..Default::default() };
        let a = train_baseline(x.view(), &y, &cfg, "").unwrap();
        let b = train_baseline(x.view(), &y, &cfg, "").unwrap();
        assert_eq!(a, b);
    }
}
