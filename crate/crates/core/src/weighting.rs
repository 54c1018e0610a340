//! Category-weight fine-tuning: pool per-category embeddings into one
//! admission-level vector through learned scalar weights, optimized jointly
//! with a small classifier head against the mortality label.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::NoteEmbedding;

#[derive(Debug, Error)]
pub enum WeightingError {
    #[error("cannot build category embeddings from an empty note list")]
    EmptyAdmission,
    #[error("notes from multiple admissions mixed: {0} and {1}")]
    MixedAdmissions(String, String),
    #[error("category {0:?} not present in the weight universe")]
    UnknownCategory(String),
    #[error("vector length mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("training data contains a single class only")]
    SingleClass,
    #[error("invalid training params: {0}")]
    InvalidParams(&'static str),
}

/// Per-admission category-level embeddings: the mean of that admission's
/// note embeddings, one vector per present category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEmbeddingSet {
    pub admission_id: String,
    pub categories: BTreeMap<String, Vec<f64>>,
    pub dim: usize,
}

/// Learned scalar weight per category over the global training universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeights {
    pub categories: Vec<String>,
    pub weights: Vec<f64>,
}

impl CategoryWeights {
    pub fn uniform(categories: Vec<String>) -> Self {
        let w = 1.0 / categories.len() as f64;
        let weights = vec![w; categories.len()];
        CategoryWeights {
            categories,
            weights,
        }
    }

    pub fn get(&self, category: &str) -> Option<f64> {
        self.categories
            .iter()
            .position(|c| c == category)
            .map(|i| self.weights[i])
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "categories": self.categories, "weights": self.weights })
    }
}

/// The fine-tuning classifier head: linear → tanh → linear → sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionClassifierHead {
    pub input_dim: usize,
    pub hidden: usize,
    /// `hidden × input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl AdmissionClassifierHead {
    fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound1 = 1.0 / (input_dim as f64).sqrt();
        let w1 = (0..hidden * input_dim)
            .map(|_| rng.gen_range(-bound1..bound1))
            .collect();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        let w2 = (0..hidden).map(|_| rng.gen_range(-bound2..bound2)).collect();
        AdmissionClassifierHead {
            input_dim,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        }
    }

    pub fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|r| {
                let row = &self.w1[r * self.input_dim..(r + 1) * self.input_dim];
                (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[r]).tanh()
            })
            .collect()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let h = self.hidden_activations(x);
        self.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + self.b2
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.logit(x)).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for WeightTrainParams {
    fn default() -> Self {
        WeightTrainParams {
            epochs: 200,
            learning_rate: 0.05,
            hidden: 16,
            seed: 1,
        }
    }
}

impl WeightTrainParams {
    fn validate(&self) -> Result<(), WeightingError> {
        if self.epochs == 0 {
            return Err(WeightingError::InvalidParams("epochs must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(WeightingError::InvalidParams("learning_rate must be > 0"));
        }
        if self.hidden == 0 {
            return Err(WeightingError::InvalidParams("hidden must be >= 1"));
        }
        Ok(())
    }
}

/// Mean of each present category's note vectors for one admission.
pub fn build_category_embeddings(
    notes: &[NoteEmbedding],
) -> Result<CategoryEmbeddingSet, WeightingError> {
    let first = notes.first().ok_or(WeightingError::EmptyAdmission)?;
    let admission_id = first.admission_id.clone();
    let dim = first.vector.len();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for note in notes {
        if note.admission_id != admission_id {
            return Err(WeightingError::MixedAdmissions(
                admission_id,
                note.admission_id.clone(),
            ));
        }
        if note.vector.len() != dim {
            return Err(WeightingError::DimMismatch {
                expected: dim,
                got: note.vector.len(),
            });
        }
        let entry = sums
            .entry(note.category.clone())
            .or_insert_with(|| (vec![0.0; dim], 0));
        for (acc, v) in entry.0.iter_mut().zip(&note.vector) {
            *acc += v;
        }
        entry.1 += 1;
    }
    let categories = sums
        .into_iter()
        .map(|(cat, (mut sum, n))| {
            for v in sum.iter_mut() {
                *v /= n as f64;
            }
            (cat, sum)
        })
        .collect();
    Ok(CategoryEmbeddingSet {
        admission_id,
        categories,
        dim,
    })
}

/// Weighted sum over the global category universe; missing categories
/// contribute exactly zero. With `renormalize`, weights of present
/// categories are rescaled to sum to one first.
pub fn weighted_pool_with(
    set: &CategoryEmbeddingSet,
    weights: &CategoryWeights,
    renormalize: bool,
) -> Result<Vec<f64>, WeightingError> {
    for cat in set.categories.keys() {
        if !weights.categories.iter().any(|c| c == cat) {
            return Err(WeightingError::UnknownCategory(cat.clone()));
        }
    }
    let norm = if renormalize {
        let present_sum: f64 = weights
            .categories
            .iter()
            .zip(&weights.weights)
            .filter(|(c, _)| set.categories.contains_key(*c))
            .map(|(_, w)| w)
            .sum();
        if present_sum != 0.0 {
            1.0 / present_sum
        } else {
            1.0
        }
    } else {
        1.0
    };
    let mut out = vec![0.0; set.dim];
    for (cat, w) in weights.categories.iter().zip(&weights.weights) {
        if let Some(v) = set.categories.get(cat) {
            for (acc, x) in out.iter_mut().zip(v) {
                *acc += w * norm * x;
            }
        }
    }
    Ok(out)
}

pub fn weighted_pool(
    set: &CategoryEmbeddingSet,
    weights: &CategoryWeights,
) -> Result<Vec<f64>, WeightingError> {
    weighted_pool_with(set, weights, false)
}

/// The feature extractor handed to downstream classifiers: the weighted
/// pool vector (the head learned in `train_weights` is only used to fit
/// the weights).
pub fn admission_embedding(
    set: &CategoryEmbeddingSet,
    weights: &CategoryWeights,
) -> Result<Vec<f64>, WeightingError> {
    weighted_pool(set, weights)
}

/// Gradient of the joint objective for one labeled admission.
#[derive(Debug, Clone)]
pub struct JointGradient {
    pub weights: Vec<f64>,
    pub head: AdmissionClassifierHead,
}

/// Binary cross-entropy of the head's prediction on the weighted pool, with
/// the exact analytic gradient w.r.t. the category weights and every head
/// parameter. Logit-form BCE keeps this stable for large logits.
pub fn joint_loss_grad(
    weights: &CategoryWeights,
    head: &AdmissionClassifierHead,
    set: &CategoryEmbeddingSet,
    label: bool,
) -> Result<(f64, JointGradient), WeightingError> {
    let pooled = weighted_pool(set, weights)?;
    if pooled.len() != head.input_dim {
        return Err(WeightingError::DimMismatch {
            expected: head.input_dim,
            got: pooled.len(),
        });
    }
    let h = head.hidden_activations(&pooled);
    let logit = head.w2.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + head.b2;
    let y = if label { 1.0 } else { 0.0 };
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();

    let p = 1.0 / (1.0 + (-logit).exp());
    let dlogit = p - y;

    let mut grad_head = AdmissionClassifierHead {
        input_dim: head.input_dim,
        hidden: head.hidden,
        w1: vec![0.0; head.w1.len()],
        b1: vec![0.0; head.b1.len()],
        w2: vec![0.0; head.w2.len()],
        b2: dlogit,
    };
    let mut d_pool = vec![0.0; head.input_dim];
    for r in 0..head.hidden {
        grad_head.w2[r] = dlogit * h[r];
        let dz = dlogit * head.w2[r] * (1.0 - h[r] * h[r]);
        grad_head.b1[r] = dz;
        let row = r * head.input_dim;
        for c in 0..head.input_dim {
            grad_head.w1[row + c] = dz * pooled[c];
            d_pool[c] += dz * head.w1[row + c];
        }
    }
    let grad_weights = weights
        .categories
        .iter()
        .map(|cat| match set.categories.get(cat) {
            Some(v) => v.iter().zip(&d_pool).map(|(x, g)| x * g).sum(),
            None => 0.0,
        })
        .collect();
    Ok((
        loss,
        JointGradient {
            weights: grad_weights,
            head: grad_head,
        },
    ))
}

/// Jointly fit category weights (initialized uniform) and the classifier
/// head by per-example SGD on binary cross-entropy. Deterministic under the
/// seed. The category universe is the sorted union over the training sets.
pub fn train_weights(
    train_sets: &[(CategoryEmbeddingSet, bool)],
    params: &WeightTrainParams,
) -> Result<(CategoryWeights, AdmissionClassifierHead), WeightingError> {
    params.validate()?;
    if train_sets.is_empty()
        || train_sets.iter().all(|(_, l)| *l)
        || train_sets.iter().all(|(_, l)| !*l)
    {
        return Err(WeightingError::SingleClass);
    }
    let dim = train_sets[0].0.dim;
    let mut universe: Vec<String> = train_sets
        .iter()
        .flat_map(|(s, _)| s.categories.keys().cloned())
        .collect();
    universe.sort();
    universe.dedup();

    let mut weights = CategoryWeights::uniform(universe);
    let mut head = AdmissionClassifierHead::init(dim, params.hidden, params.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..train_sets.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (set, label) = &train_sets[i];
            let (_, grad) = joint_loss_grad(&weights, &head, set, *label)?;
            for (w, g) in weights.weights.iter_mut().zip(&grad.weights) {
                *w -= params.learning_rate * g;
            }
            for (w, g) in head.w1.iter_mut().zip(&grad.head.w1) {
                *w -= params.learning_rate * g;
            }
            for (b, g) in head.b1.iter_mut().zip(&grad.head.b1) {
                *b -= params.learning_rate * g;
            }
            for (w, g) in head.w2.iter_mut().zip(&grad.head.w2) {
                *w -= params.learning_rate * g;
            }
            head.b2 -= params.learning_rate * grad.head.b2;
        }
    }
    Ok((weights, head))
}

/// JSON artifact: weights plus the head used to learn them.
pub fn weights_to_json(
    weights: &CategoryWeights,
    head: &AdmissionClassifierHead,
) -> serde_json::Value {
    serde_json::json!({
        "categories": weights.categories,
        "weights": weights.weights,
        "head": head,
    })
}
