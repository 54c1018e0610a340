//! Per-category metric learning: a shared-weight MLP refiner trained with
//! contrastive loss on within-category note-embedding pairs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::NoteEmbedding;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SiameseError {
    #[error("input length {got} does not match network input dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no category is eligible for pair selection")]
    NoEligibleCategory,
    #[error("invalid training params: {0}")]
    InvalidParams(&'static str),
    #[error("refiner bundle is empty: every category was skipped")]
    EmptyBundle,
}

/// One within-category training pair. `y` is true when the two notes share
/// the same mortality label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiamesePair {
    pub category: String,
    pub anchor_index: usize,
    pub contrast_index: usize,
    pub y: bool,
}

/// Symmetric MLP: input and output dims equal, widths rise then fall.
/// Hidden layers use tanh; the output layer is linear.
///
/// Layer `k` weights are stored row-major as `dims[k+1] × dims[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseNetwork {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Parameter-shaped gradient accumulator for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl SiameseNetwork {
    /// Seeded initialization: weights uniform in ±1/√fan_in, biases zero.
    pub fn init(layer_dims: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..layer_dims.len() - 1 {
            let fan_in = layer_dims[k];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..layer_dims[k + 1] * fan_in)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; layer_dims[k + 1]]);
        }
        SiameseNetwork {
            layer_dims,
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        *self.layer_dims.first().unwrap()
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn zero_gradient(&self) -> NetGradient {
        NetGradient {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Forward pass returning every layer activation, input included.
    fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, SiameseError> {
        if x.len() != self.input_dim() {
            return Err(SiameseError::DimMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut activations = vec![x.to_vec()];
        for k in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_dims[k], self.layer_dims[k + 1]);
            let prev = &activations[k];
            let mut z = self.biases[k].clone();
            for row in 0..n_out {
                let w_row = &self.weights[k][row * n_in..(row + 1) * n_in];
                z[row] += w_row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
            }
            if k + 1 < self.n_layers() {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            activations.push(z);
        }
        Ok(activations)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, SiameseError> {
        Ok(self.forward_trace(x)?.pop().unwrap())
    }

    /// Backprop `upstream` (dL/d output) through the trace, accumulating
    /// parameter gradients into `grad`.
    fn backprop(&self, trace: &[Vec<f64>], upstream: &[f64], grad: &mut NetGradient) {
        let mut delta = upstream.to_vec();
        for k in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[k], self.layer_dims[k + 1]);
            // Hidden layers stored tanh(z); the output layer is linear.
            if k + 1 < self.n_layers() {
                for (d, a) in delta.iter_mut().zip(&trace[k + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let prev = &trace[k];
            for row in 0..n_out {
                grad.biases[k][row] += delta[row];
                let g_row = &mut grad.weights[k][row * n_in..(row + 1) * n_in];
                for (g, a) in g_row.iter_mut().zip(prev) {
                    *g += delta[row] * a;
                }
            }
            if k > 0 {
                let mut next = vec![0.0; n_in];
                for row in 0..n_out {
                    let w_row = &self.weights[k][row * n_in..(row + 1) * n_in];
                    for (n, w) in next.iter_mut().zip(w_row) {
                        *n += delta[row] * w;
                    }
                }
                delta = next;
            }
        }
    }

    pub fn apply_gradient(&mut self, grad: &NetGradient, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * gi;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grad.biases) {
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi -= lr * gi;
            }
        }
    }
}

/// The contrastive loss: `y·d² + (1−y)·max(margin−d, 0)²`.
pub fn contrastive_loss(y: bool, d: f64, margin: f64) -> f64 {
    if y {
        d * d
    } else {
        let slack = (margin - d).max(0.0);
        slack * slack
    }
}

/// Euclidean distance between the refined embeddings of the two inputs.
pub fn pair_distance(
    net: &SiameseNetwork,
    x_a: &[f64],
    x_c: &[f64],
) -> Result<f64, SiameseError> {
    let a = net.forward(x_a)?;
    let c = net.forward(x_c)?;
    Ok(euclidean(&a, &c))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Loss and exact analytic gradient for one pair, summing both branches'
/// contributions through the shared parameters. The distance gradient at
/// d = 0 is taken as zero.
pub fn pair_loss_grad(
    net: &SiameseNetwork,
    x_a: &[f64],
    x_c: &[f64],
    y: bool,
    margin: f64,
) -> Result<(f64, NetGradient), SiameseError> {
    let trace_a = net.forward_trace(x_a)?;
    let trace_c = net.forward_trace(x_c)?;
    let out_a = trace_a.last().unwrap();
    let out_c = trace_c.last().unwrap();
    let d = euclidean(out_a, out_c);
    let loss = contrastive_loss(y, d, margin);

    let mut grad = net.zero_gradient();
    let dl_dd = if y {
        2.0 * d
    } else {
        -2.0 * (margin - d).max(0.0)
    };
    if d > 0.0 && dl_dd != 0.0 {
        let scale = dl_dd / d;
        let upstream_a: Vec<f64> = out_a
            .iter()
            .zip(out_c)
            .map(|(a, c)| scale * (a - c))
            .collect();
        let upstream_c: Vec<f64> = upstream_a.iter().map(|v| -v).collect();
        net.backprop(&trace_a, &upstream_a, &mut grad);
        net.backprop(&trace_c, &upstream_c, &mut grad);
    }
    Ok((loss, grad))
}

/// Training hyperparameters for the per-category refiners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseTrainParams {
    pub margin: f64,
    /// Pairs drawn per epoch; `None` means 4 × the category's note count.
    pub pairs_per_epoch: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_multiplier: usize,
    /// Balance pair labels 50/50; set false for plain uniform sampling.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for SiameseTrainParams {
    fn default() -> Self {
        SiameseTrainParams {
            margin: 1.0,
            pairs_per_epoch: None,
            epochs: 20,
            learning_rate: 0.01,
            hidden_multiplier: 2,
            balanced: true,
            seed: 1,
        }
    }
}

impl SiameseTrainParams {
    fn validate(&self) -> Result<(), SiameseError> {
        if self.margin <= 0.0 {
            return Err(SiameseError::InvalidParams("margin must be > 0"));
        }
        if self.epochs == 0 {
            return Err(SiameseError::InvalidParams("epochs must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(SiameseError::InvalidParams("learning_rate must be > 0"));
        }
        if self.hidden_multiplier == 0 {
            return Err(SiameseError::InvalidParams("hidden_multiplier must be >= 1"));
        }
        Ok(())
    }
}

/// Per-category note embeddings with their admission labels, keyed by
/// category name. BTreeMap so iteration order is deterministic.
pub type NotesByCategory = BTreeMap<String, Vec<(Vec<f64>, bool)>>;

fn category_eligible(notes: &[(Vec<f64>, bool)]) -> bool {
    if notes.len() < 2 {
        return false;
    }
    let pos = notes.iter().filter(|(_, l)| *l).count();
    pos > 0 && pos < notes.len()
}

fn sample_pairs_for_category(
    category: &str,
    notes: &[(Vec<f64>, bool)],
    count: usize,
    balanced: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<SiamesePair> {
    let pos_idx: Vec<usize> = notes
        .iter()
        .enumerate()
        .filter(|(_, (_, l))| *l)
        .map(|(i, _)| i)
        .collect();
    let neg_idx: Vec<usize> = notes
        .iter()
        .enumerate()
        .filter(|(_, (_, l))| !*l)
        .map(|(i, _)| i)
        .collect();
    let same_pairs =
        |n: usize| -> usize { n * n.saturating_sub(1) / 2 };
    let c_pos = same_pairs(pos_idx.len());
    let c_neg = same_pairs(neg_idx.len());

    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let want_same = if balanced {
            // Alternate targets; fall back to differing-label pairs when no
            // same-label pair exists at all.
            i % 2 == 0 && c_pos + c_neg > 0
        } else {
            // Uniform over all unordered distinct pairs.
            let total_same = c_pos + c_neg;
            let total_diff = pos_idx.len() * neg_idx.len();
            rng.gen_range(0..total_same + total_diff) < total_same
        };
        let (a, c) = if want_same {
            let side = if rng.gen_range(0..c_pos + c_neg) < c_pos {
                &pos_idx
            } else {
                &neg_idx
            };
            let a = side[rng.gen_range(0..side.len())];
            let mut c = side[rng.gen_range(0..side.len())];
            while c == a {
                c = side[rng.gen_range(0..side.len())];
            }
            (a, c)
        } else {
            (
                pos_idx[rng.gen_range(0..pos_idx.len())],
                neg_idx[rng.gen_range(0..neg_idx.len())],
            )
        };
        pairs.push(SiamesePair {
            category: category.to_string(),
            anchor_index: a,
            contrast_index: c,
            y: notes[a].1 == notes[c].1,
        });
    }
    pairs
}

/// Sample within-category pairs, `count_per_category` each, 50/50 label
/// balanced (±1) by default. Categories lacking two notes or a label value
/// are skipped.
pub fn select_pairs(
    notes_by_category: &NotesByCategory,
    count_per_category: usize,
    balanced: bool,
    seed: u64,
) -> Result<Vec<SiamesePair>, SiameseError> {
    let mut out = Vec::new();
    let mut any = false;
    for (category, notes) in notes_by_category {
        if !category_eligible(notes) {
            continue;
        }
        any = true;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, category));
        out.extend(sample_pairs_for_category(
            category,
            notes,
            count_per_category,
            balanced,
            &mut rng,
        ));
    }
    if !any {
        return Err(SiameseError::NoEligibleCategory);
    }
    Ok(out)
}

/// Trained per-category refiners. Categories absent from the map pass
/// embeddings through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerBundle {
    pub margin: f64,
    pub networks: BTreeMap<String, SiameseNetwork>,
}

impl RefinerBundle {
    pub fn network(&self, category: &str) -> Option<&SiameseNetwork> {
        self.networks.get(category)
    }

    /// Apply the category's refiner; identity when the category is unseen.
    pub fn refine(&self, note: &NoteEmbedding) -> Result<NoteEmbedding, SiameseError> {
        let vector = match self.networks.get(&note.category) {
            Some(net) => net.forward(&note.vector)?,
            None => note.vector.clone(),
        };
        Ok(NoteEmbedding {
            admission_id: note.admission_id.clone(),
            category: note.category.clone(),
            vector,
            n_known_tokens: note.n_known_tokens,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let categories: serde_json::Map<String, serde_json::Value> = self
            .networks
            .iter()
            .map(|(name, net)| {
                (
                    name.clone(),
                    serde_json::json!({
                        "dims": net.layer_dims,
                        "weights": net.weights,
                        "biases": net.biases,
                    }),
                )
            })
            .collect();
        serde_json::json!({ "margin": self.margin, "categories": categories })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct NetJson {
            dims: Vec<usize>,
            weights: Vec<Vec<f64>>,
            biases: Vec<Vec<f64>>,
        }
        #[derive(Deserialize)]
        struct BundleJson {
            margin: f64,
            categories: BTreeMap<String, NetJson>,
        }
        let raw: BundleJson = serde_json::from_value(value.clone())?;
        Ok(RefinerBundle {
            margin: raw.margin,
            networks: raw
                .categories
                .into_iter()
                .map(|(name, n)| {
                    (
                        name,
                        SiameseNetwork {
                            layer_dims: n.dims,
                            weights: n.weights,
                            biases: n.biases,
                        },
                    )
                })
                .collect(),
        })
    }
}

/// Train one refiner per eligible category with SGD on the contrastive loss.
/// Deterministic: per-category seeds are derived from the master seed and the
/// category name.
pub fn train_refiners(
    notes_by_category: &NotesByCategory,
    params: &SiameseTrainParams,
) -> Result<RefinerBundle, SiameseError> {
    params.validate()?;
    let mut networks = BTreeMap::new();
    for (category, notes) in notes_by_category {
        if !category_eligible(notes) {
            continue;
        }
        let dim = notes[0].0.len();
        let dims = vec![dim, params.hidden_multiplier * dim, dim];
        let cat_seed = derive_seed(params.seed, category);
        let mut net = SiameseNetwork::init(dims, derive_seed(cat_seed, "init"));
        let pairs_per_epoch = params.pairs_per_epoch.unwrap_or(4 * notes.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cat_seed, "pairs"));
        for _ in 0..params.epochs {
            let pairs = sample_pairs_for_category(
                category,
                notes,
                pairs_per_epoch,
                params.balanced,
                &mut rng,
            );
            for pair in pairs {
                let x_a = &notes[pair.anchor_index].0;
                let x_c = &notes[pair.contrast_index].0;
                let (_, grad) = pair_loss_grad(&net, x_a, x_c, pair.y, params.margin)?;
                net.apply_gradient(&grad, params.learning_rate);
            }
        }
        networks.insert(category.clone(), net);
    }
    if networks.is_empty() {
        return Err(SiameseError::EmptyBundle);
    }
    Ok(RefinerBundle {
        margin: params.margin,
        networks,
    })
}
