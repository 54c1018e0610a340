//! Downstream mortality classifiers over admission-level embeddings:
//! logistic regression (full-batch gradient descent) and a one-hidden-layer
//! MLP (seeded SGD). Both emit probabilities for the ranking metrics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("training inputs and labels differ in length or are empty")]
    BadTrainingData,
    #[error("invalid params: {0}")]
    InvalidParams(&'static str),
    #[error("input length {got} does not match model dim {expected}")]
    DimMismatch { expected: usize, got: usize },
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// L2-regularized logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

impl LogRegModel {
    pub fn logit(&self, x: &[f64]) -> Result<f64, ClassifyError> {
        if x.len() != self.weights.len() {
            return Err(ClassifyError::DimMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }
}

/// One-hidden-layer perceptron: tanh hidden, sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub input_dim: usize,
    pub hidden: usize,
    /// `hidden × input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpClassifier {
    pub fn logit(&self, x: &[f64]) -> Result<f64, ClassifyError> {
        if x.len() != self.input_dim {
            return Err(ClassifyError::DimMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut logit = self.b2;
        for r in 0..self.hidden {
            let row = &self.w1[r * self.input_dim..(r + 1) * self.input_dim];
            let h = (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[r]).tanh();
            logit += self.w2[r] * h;
        }
        Ok(logit)
    }
}

/// Serialized with a `kind` discriminator so model files are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    LogReg(LogRegModel),
    Mlp(MlpClassifier),
}

/// Sigmoid of the model's logit; strictly inside (0, 1).
pub fn predict_proba(model: &Classifier, x: &[f64]) -> Result<f64, ClassifyError> {
    let logit = match model {
        Classifier::LogReg(m) => m.logit(x)?,
        Classifier::Mlp(m) => m.logit(x)?,
    };
    Ok(sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

fn validate_training_data(x: &[Vec<f64>], y: &[bool]) -> Result<(), ClassifyError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(ClassifyError::BadTrainingData);
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(ClassifyError::SingleClass);
    }
    Ok(())
}

/// Mean L2-regularized binary cross-entropy of the model over the data.
pub fn logreg_objective(model: &LogRegModel, x: &[Vec<f64>], y: &[bool]) -> f64 {
    let n = x.len() as f64;
    let mut loss = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let logit = model.logit(xi).unwrap();
        let target = if yi { 1.0 } else { 0.0 };
        loss += logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    }
    loss / n + 0.5 * model.l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Full-batch gradient descent from zero-initialized parameters; the result
/// is deterministic with no seed dependence. Returns the per-epoch loss
/// trace alongside the model.
pub fn train_logreg_traced(
    x: &[Vec<f64>],
    y: &[bool],
    l2: f64,
    epochs: usize,
    lr: f64,
) -> Result<(LogRegModel, Vec<f64>), ClassifyError> {
    validate_training_data(x, y)?;
    if epochs == 0 {
        return Err(ClassifyError::InvalidParams("epochs must be >= 1"));
    }
    if lr <= 0.0 {
        return Err(ClassifyError::InvalidParams("lr must be > 0"));
    }
    if l2 < 0.0 {
        return Err(ClassifyError::InvalidParams("l2 must be >= 0"));
    }
    let dim = x[0].len();
    let n = x.len() as f64;
    let mut model = LogRegModel {
        weights: vec![0.0; dim],
        bias: 0.0,
        l2,
    };
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        trace.push(logreg_objective(&model, x, y));
        let mut grad_w = vec![0.0; dim];
        let mut grad_b = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let err = sigmoid(model.logit(xi)?) - if yi { 1.0 } else { 0.0 };
            for (g, v) in grad_w.iter_mut().zip(xi) {
                *g += err * v;
            }
            grad_b += err;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= lr * (g / n + l2 * *w);
        }
        model.bias -= lr * grad_b / n;
    }
    Ok((model, trace))
}

pub fn train_logreg(
    x: &[Vec<f64>],
    y: &[bool],
    l2: f64,
    epochs: usize,
    lr: f64,
) -> Result<LogRegModel, ClassifyError> {
    train_logreg_traced(x, y, l2, epochs, lr).map(|(m, _)| m)
}

/// Per-example SGD on binary cross-entropy with seeded uniform init.
pub fn train_mlp(
    x: &[Vec<f64>],
    y: &[bool],
    hidden: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<MlpClassifier, ClassifyError> {
    validate_training_data(x, y)?;
    if hidden == 0 {
        return Err(ClassifyError::InvalidParams("hidden must be >= 1"));
    }
    if epochs == 0 {
        return Err(ClassifyError::InvalidParams("epochs must be >= 1"));
    }
    if lr <= 0.0 {
        return Err(ClassifyError::InvalidParams("lr must be > 0"));
    }
    let dim = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound1 = 1.0 / (dim.max(1) as f64).sqrt();
    let bound2 = 1.0 / (hidden as f64).sqrt();
    let mut model = MlpClassifier {
        input_dim: dim,
        hidden,
        w1: (0..hidden * dim).map(|_| rng.gen_range(-bound1..bound1)).collect(),
        b1: vec![0.0; hidden],
        w2: (0..hidden).map(|_| rng.gen_range(-bound2..bound2)).collect(),
        b2: 0.0,
    };
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut h = vec![0.0; hidden];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let xi = &x[i];
            if xi.len() != dim {
                return Err(ClassifyError::DimMismatch {
                    expected: dim,
                    got: xi.len(),
                });
            }
            let mut logit = model.b2;
            for r in 0..hidden {
                let row = &model.w1[r * dim..(r + 1) * dim];
                h[r] = (row.iter().zip(xi).map(|(w, v)| w * v).sum::<f64>() + model.b1[r]).tanh();
                logit += model.w2[r] * h[r];
            }
            let err = sigmoid(logit) - if y[i] { 1.0 } else { 0.0 };
            model.b2 -= lr * err;
            for r in 0..hidden {
                let dz = err * model.w2[r] * (1.0 - h[r] * h[r]);
                model.w2[r] -= lr * err * h[r];
                model.b1[r] -= lr * dz;
                let row = &mut model.w1[r * dim..(r + 1) * dim];
                for (w, v) in row.iter_mut().zip(xi) {
                    *w -= lr * dz * v;
                }
            }
        }
    }
    Ok(model)
}
