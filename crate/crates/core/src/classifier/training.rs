use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{log_prob, softmax};
use super::NetModel;
use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::SgdMomentum { beta: 0.9 },
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        // a zero step is allowed: it leaves the parameters untouched
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("train.learning_rate must be finite and >= 0".into()));
        }
        if let Optimizer::SgdMomentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config("train.optimizer.beta must be in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Quadratic anchor `(lambda / 2) * sum_j F_j (theta_j - theta*_j)^2`, laid
/// out over the current parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EWCPenalty {
    pub lambda: f64,
    pub theta_star: Vec<f64>,
    pub fisher: Vec<f64>,
}

impl EWCPenalty {
    pub fn new(lambda: f64, theta_star: Vec<f64>, fisher: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("EWC lambda {lambda} must be >= 0")));
        }
        if theta_star.len() != fisher.len() {
            return Err(Error::Shape {
                expected: theta_star.len(),
                got: fisher.len(),
            });
        }
        if fisher.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::Config("Fisher entries must be finite and >= 0".into()));
        }
        Ok(Self {
            lambda,
            theta_star,
            fisher,
        })
    }

    /// Re-lay the anchor onto a widened parameter vector. `map[i]` is the new
    /// index of old parameter `i`; unmapped coordinates get zero Fisher.
    pub fn remap(&self, map: &[usize], new_params: &[f64]) -> Result<Self> {
        if map.len() != self.fisher.len() {
            return Err(Error::Shape {
                expected: self.fisher.len(),
                got: map.len(),
            });
        }
        let mut theta_star = new_params.to_vec();
        let mut fisher = vec![0.0; new_params.len()];
        for (i, &j) in map.iter().enumerate() {
            theta_star[j] = self.theta_star[i];
            fisher[j] = self.fisher[i];
        }
        Ok(Self {
            lambda: self.lambda,
            theta_star,
            fisher,
        })
    }

    fn value(&self, params: &[f64]) -> f64 {
        0.5 * self.lambda
            * params
                .iter()
                .zip(&self.theta_star)
                .zip(&self.fisher)
                .map(|((t, s), f)| f * (t - s) * (t - s))
                .sum::<f64>()
    }

    fn add_gradient(&self, params: &[f64], grad: &mut [f64]) {
        for (((g, t), s), f) in grad.iter_mut().zip(params).zip(&self.theta_star).zip(&self.fisher) {
            *g += self.lambda * f * (t - s);
        }
    }

    fn active(&self) -> bool {
        self.lambda != 0.0
    }
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    if let Some(&label) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::LabelOutOfRange { label, n_classes });
    }
    Ok(())
}

/// Mean cross-entropy over `inputs` plus the optional penalty; the gradient
/// is written into `grad` (overwritten).
fn batch_objective(
    model: &NetModel,
    inputs: &[&[f64]],
    labels: &[usize],
    penalty: Option<&EWCPenalty>,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let topo = model.topology();
    let scale = 1.0 / inputs.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let trace = topo.forward(&model.params, x);
        let logits = trace.logits();
        loss -= log_prob(logits, y);
        let mut d = softmax(logits);
        d[y] -= 1.0;
        d.iter_mut().for_each(|v| *v *= scale);
        topo.backward(&model.params, &trace, &d, grad);
    }
    loss *= scale;
    if let Some(p) = penalty.filter(|p| p.active()) {
        loss += p.value(&model.params);
        p.add_gradient(&model.params, grad);
    }
    loss
}

fn check_penalty(model: &NetModel, penalty: Option<&EWCPenalty>) -> Result<()> {
    if let Some(p) = penalty {
        if p.fisher.len() != model.param_count() {
            return Err(Error::Shape {
                expected: model.param_count(),
                got: p.fisher.len(),
            });
        }
    }
    Ok(())
}

fn features<'a>(model: &NetModel, batch: &'a [WindowedSample]) -> Result<Vec<&'a [f64]>> {
    batch
        .iter()
        .map(|s| {
            model.check_input(s.dim())?;
            Ok(s.features.as_slice())
        })
        .collect()
}

/// Mean negative log-likelihood of the true labels (plus the EWC penalty, if
/// given) and its exact gradient with respect to every parameter.
pub fn loss_and_gradient(
    model: &NetModel,
    batch: &[WindowedSample],
    labels: &[usize],
    penalty: Option<&EWCPenalty>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if batch.len() != labels.len() {
        return Err(Error::Shape {
            expected: batch.len(),
            got: labels.len(),
        });
    }
    check_labels(labels, model.n_classes())?;
    check_penalty(model, penalty)?;
    let inputs = features(model, batch)?;
    let mut grad = vec![0.0; model.param_count()];
    let loss = batch_objective(model, &inputs, labels, penalty, &mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: NetModel,
    /// Mean training objective per epoch.
    pub loss_history: Vec<f64>,
}

/// Minibatch gradient descent with seeded per-epoch shuffling. An EWC
/// penalty is handled by a proximal step after each update, which is the
/// plain gradient step when `lr * lambda * F` is small and stays stable when
/// it is not.
pub fn train(
    model: &NetModel,
    samples: &[WindowedSample],
    labels: &[usize],
    config: &TrainConfig,
    penalty: Option<&EWCPenalty>,
) -> Result<Trained> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if samples.len() != labels.len() {
        return Err(Error::Shape {
            expected: samples.len(),
            got: labels.len(),
        });
    }
    check_labels(labels, model.n_classes())?;
    check_penalty(model, penalty)?;
    let inputs = features(model, samples)?;
    let anchor = penalty.filter(|p| p.active());

    let mut model = model.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut r = rng(config.shuffle_seed);
    let mut grad = vec![0.0; model.param_count()];
    let mut velocity = vec![0.0; model.param_count()];
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch_x: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut batch_y: Vec<usize> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| inputs[i]));
            batch_y.extend(chunk.iter().map(|&i| labels[i]));
            // the anchor is applied below as an exact proximal step, so the
            // gradient here is cross-entropy only
            let mut loss = batch_objective(&model, &batch_x, &batch_y, None, &mut grad);
            if let Some(p) = anchor {
                loss += p.value(&model.params);
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss * chunk.len() as f64;
            let lr = config.learning_rate;
            match config.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in model.params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                Optimizer::SgdMomentum { beta } => {
                    for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                        *v = beta * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            if let Some(a) = anchor {
                // argmin_t (t - p)^2 / (2 lr) + (s / 2) (t - t*)^2 with s = lambda F;
                // stable for any stiffness, unlike an explicit gradient step
                for ((p, star), f) in model.params.iter_mut().zip(&a.theta_star).zip(&a.fisher) {
                    let s = lr * a.lambda * f;
                    if s != 0.0 {
                        *p = (*p + s * star) / (1.0 + s);
                    }
                }
            }
        }
        history.push(epoch_loss / samples.len() as f64);
    }
    Ok(Trained {
        model,
        loss_history: history,
    })
}

/// Diagonal empirical Fisher: mean over samples of the squared gradient of
/// `log p(true label | x)`.
pub fn fisher_diagonal(
    model: &NetModel,
    samples: &[WindowedSample],
    labels: &[usize],
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("fisher data"));
    }
    if samples.len() != labels.len() {
        return Err(Error::Shape {
            expected: samples.len(),
            got: labels.len(),
        });
    }
    check_labels(labels, model.n_classes())?;
    let inputs = features(model, samples)?;
    let topo = model.topology();
    let mut fisher = vec![0.0; model.param_count()];
    let mut g = vec![0.0; model.param_count()];
    for (x, &y) in inputs.iter().zip(labels) {
        g.iter_mut().for_each(|v| *v = 0.0);
        let trace = topo.forward(&model.params, x);
        // d log p_y / d logits = onehot - p; the sign is irrelevant once squared
        let mut d = softmax(trace.logits());
        d[y] -= 1.0;
        topo.backward(&model.params, &trace, &d, &mut g);
        for (f, gi) in fisher.iter_mut().zip(&g) {
            *f += gi * gi;
        }
    }
    let n = samples.len() as f64;
    fisher.iter_mut().for_each(|f| *f /= n);
    if fisher.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("Fisher diagonal".into()));
    }
    Ok(fisher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{init_model, Architecture, ConvLayerSpec, NetModel};
    use crate::data::Provenance;

    fn sample(features: Vec<f64>, window: usize, channels: usize, class_id: usize) -> WindowedSample {
        WindowedSample::new(features, window, channels, class_id, Provenance::Raw { trial_id: 0, start: 0 })
            .unwrap()
    }

    fn wavy(n: usize, window: usize, channels: usize, n_classes: usize) -> (Vec<WindowedSample>, Vec<usize>) {
        let samples: Vec<_> = (0..n)
            .map(|i| {
                let x = (0..window * channels)
                    .map(|j| ((i * 7 + j * 3) as f64 * 0.37).sin() + (i % n_classes) as f64 * 0.5)
                    .collect();
                sample(x, window, channels, i % n_classes)
            })
            .collect();
        let labels = (0..n).map(|i| i % n_classes).collect();
        (samples, labels)
    }

    fn small_models() -> Vec<NetModel> {
        let conv = Architecture::conv(
            [
                ConvLayerSpec { out_channels: 3, kernel: 3, stride: 1 },
                ConvLayerSpec { out_channels: 4, kernel: 2, stride: 2 },
            ],
            6,
            5,
        );
        vec![
            init_model(&Architecture::dense(7, 5).spec((6, 2), 3, 11)).unwrap(),
            init_model(&conv.spec((6, 2), 3, 12)).unwrap(),
        ]
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        let m = init_model(&Architecture::linear().spec((2, 1), 3, 0)).unwrap();
        let zero = NetModel::from_parts(m.spec().clone(), vec![0.0; m.param_count()]).unwrap();
        let (x, y) = wavy(4, 2, 1, 3);
        let (loss, _) = loss_and_gradient(&zero, &x, &y, None).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let m = init_model(&Architecture::linear().spec((1, 1), 2, 0)).unwrap();
        // weights [w0, w1], biases [b0, b1]
        let m = NetModel::from_parts(m.spec().clone(), vec![0.0, 0.0, 0.0, 60.0]).unwrap();
        let x = vec![sample(vec![1.0], 1, 1, 1)];
        let (loss, _) = loss_and_gradient(&m, &x, &[1], None).unwrap();
        assert!(loss >= 0.0 && loss < 1e-20);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = wavy(5, 6, 2, 3);
        for mut model in small_models() {
            // move off the zero-bias init so no unit sits exactly on the relu kink
            for (i, p) in model.params.iter_mut().enumerate() {
                *p += 0.05 * (i as f64 * 0.91).sin();
            }
            let n = model.param_count();
            let fisher: Vec<f64> = (0..n).map(|i| 0.1 + (i % 5) as f64 * 0.2).collect();
            let star: Vec<f64> = model.params.iter().map(|p| p + 0.05).collect();
            let pen = EWCPenalty::new(3.0, star, fisher).unwrap();
            for penalty in [None, Some(&pen)] {
                let (_, g) = loss_and_gradient(&model, &x, &y, penalty).unwrap();
                let h = 1e-6;
                let mut worst = 0.0f64;
                for i in 0..n {
                    let mut plus = model.clone();
                    plus.params[i] += h;
                    let mut minus = model.clone();
                    minus.params[i] -= h;
                    let lp = loss_and_gradient(&plus, &x, &y, penalty).unwrap().0;
                    let lm = loss_and_gradient(&minus, &x, &y, penalty).unwrap().0;
                    worst = worst.max(rel_err(g[i], (lp - lm) / (2.0 * h)));
                }
                assert!(worst < 1e-4, "{:?}: {worst}", model.spec().kind);
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (x, y) = wavy(10, 6, 2, 3);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, learning_rate: 0.0, ..Default::default() };
        for m in small_models() {
            let t = train(&m, &x, &y, &cfg, None).unwrap();
            assert_eq!(t.model.params, m.params);
            assert_eq!(t.loss_history.len(), 3);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = wavy(12, 6, 2, 3);
        let cfg = TrainConfig { epochs: 4, batch_size: 5, learning_rate: 0.05, shuffle_seed: 9, ..Default::default() };
        for m in small_models() {
            let a = train(&m, &x, &y, &cfg, None).unwrap();
            let b = train(&m, &x, &y, &cfg, None).unwrap();
            assert_eq!(a.model.params, b.model.params);
            assert_eq!(a.loss_history, b.loss_history);
        }
    }

    #[test]
    fn separable_toy_problem_is_learned() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            let jitter = ((i as f64) * 1.3).sin() * 0.5;
            x.push(sample(vec![centre + jitter, centre - jitter], 1, 2, c));
            y.push(c);
        }
        let m = init_model(&Architecture::dense(8, 4).spec((1, 2), 2, 3)).unwrap();
        let cfg = TrainConfig { epochs: 50, batch_size: 8, learning_rate: 0.05, shuffle_seed: 1, ..Default::default() };
        let t = train(&m, &x, &y, &cfg, None).unwrap();
        let probs = t.model.forward(&x).unwrap();
        for (p, &label) in probs.iter().zip(&y) {
            assert!(p[label] > 0.5);
        }
        assert!(t.loss_history.last().unwrap() < &t.loss_history[0]);
    }

    #[test]
    fn full_batch_descent_on_softmax_regression_is_monotone() {
        let (x, y) = wavy(30, 3, 2, 3);
        let m = init_model(&Architecture::linear().spec((3, 2), 3, 5)).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 30,
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            shuffle_seed: 0,
        };
        let h = train(&m, &x, &y, &cfg, None).unwrap().loss_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
    }

    #[test]
    fn fisher_is_mean_squared_per_sample_gradient() {
        let (x, y) = wavy(6, 6, 2, 3);
        for m in small_models() {
            let f = fisher_diagonal(&m, &x, &y).unwrap();
            let mut expected = vec![0.0; m.param_count()];
            for (s, &label) in x.iter().zip(&y) {
                let (_, g) = loss_and_gradient(&m, std::slice::from_ref(s), &[label], None).unwrap();
                for (e, gi) in expected.iter_mut().zip(&g) {
                    *e += gi * gi / x.len() as f64;
                }
            }
            assert!(f.iter().all(|v| *v >= 0.0));
            for (a, b) in f.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn penalty_remap_and_validation() {
        assert!(EWCPenalty::new(-1.0, vec![0.0], vec![1.0]).is_err());
        assert!(EWCPenalty::new(1.0, vec![0.0], vec![-1.0]).is_err());
        assert!(EWCPenalty::new(1.0, vec![0.0, 1.0], vec![1.0]).is_err());
        let p = EWCPenalty::new(2.0, vec![1.0, 2.0], vec![0.5, 0.25]).unwrap();
        let q = p.remap(&[0, 2], &[9.0, 8.0, 7.0]).unwrap();
        assert_eq!(q.theta_star, vec![1.0, 8.0, 2.0]);
        assert_eq!(q.fisher, vec![0.5, 0.0, 0.25]);
        // (2 / 2) * (0.5 * 1 + 0.25 * 4)
        assert!((p.value(&[0.0, 0.0]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs_rejected() {
        let m = small_models().remove(0);
        let (x, y) = wavy(4, 6, 2, 3);
        assert!(loss_and_gradient(&m, &[], &[], None).is_err());
        assert!(loss_and_gradient(&m, &x, &y[..3], None).is_err());
        assert!(loss_and_gradient(&m, &x, &[0, 1, 2, 3], None).is_err());
        let bad = TrainConfig { epochs: 0, ..Default::default() };
        assert!(train(&m, &x, &y, &bad, None).is_err());
        let bad = TrainConfig { learning_rate: f64::NAN, ..Default::default() };
        assert!(train(&m, &x, &y, &bad, None).is_err());
        let diverge = TrainConfig { learning_rate: 1e300, epochs: 5, ..Default::default() };
        assert!(matches!(train(&m, &x, &y, &diverge, None), Err(Error::NonFiniteLoss { .. })));
    }
}
