//! Skip-gram word2vec with negative sampling, trained single-threaded for
//! bit-exact reproducibility, plus average pooling into note-level vectors.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::{TokenizedNote, Vocabulary};

const MAGIC: &[u8; 8] = b"FEHRW2V1";
const NEGATIVE_TABLE_SIZE: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid word2vec params: {0}")]
    InvalidParams(&'static str),
    #[error("no in-vocabulary tokens in the training corpus")]
    EmptyCorpus,
    #[error("cannot pool an empty vector list")]
    EmptyPool,
    #[error("vector length mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad embedding file: {0}")]
    BadFile(&'static str),
}

/// Word2Vec hyperparameters. The learning rate decays linearly to 10% of its
/// initial value over the whole training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word2VecParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub subsample_threshold: f64,
    pub seed: u64,
}

impl Default for Word2VecParams {
    fn default() -> Self {
        Word2VecParams {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 10,
            learning_rate: 0.025,
            subsample_threshold: 1e-3,
            seed: 1,
        }
    }
}

impl Word2VecParams {
    fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::InvalidParams("dim must be >= 1"));
        }
        if self.window == 0 {
            return Err(EmbedError::InvalidParams("window must be >= 1"));
        }
        if self.negatives == 0 {
            return Err(EmbedError::InvalidParams("negatives must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(EmbedError::InvalidParams("epochs must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(EmbedError::InvalidParams("learning_rate must be > 0"));
        }
        Ok(())
    }
}

/// Trained word vectors: `input_vectors` are the embeddings proper,
/// `output_vectors` the negative-sampling context weights (kept so training
/// state round-trips through serialization).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    vocab_size: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn input_vector(&self, index: usize) -> &[f64] {
        &self.input[index * self.dim..(index + 1) * self.dim]
    }

    pub fn output_vector(&self, index: usize) -> &[f64] {
        &self.output[index * self.dim..(index + 1) * self.dim]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.vocab_size as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for value in self.input.iter().chain(self.output.iter()) {
            w.write_all(&value.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmbedError::BadFile("wrong magic"));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let vocab_size = u32::from_le_bytes(buf4) as usize;
        r.read_exact(&mut buf4)?;
        let dim = u32::from_le_bytes(buf4) as usize;
        let mut read_matrix = |n: usize| -> Result<Vec<f64>, EmbedError> {
            let mut out = Vec::with_capacity(n);
            let mut buf8 = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf8)?;
                out.push(f64::from_le_bytes(buf8));
            }
            Ok(out)
        };
        let input = read_matrix(vocab_size * dim)?;
        let output = read_matrix(vocab_size * dim)?;
        Ok(EmbeddingMatrix {
            dim,
            vocab_size,
            input,
            output,
        })
    }

    /// JSON export of the word embeddings for inspection.
    pub fn input_vectors_json(&self, vocab: &Vocabulary) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = (0..self.vocab_size)
            .map(|i| {
                serde_json::json!({
                    "token": vocab.token(i),
                    "vector": self.input_vector(i),
                })
            })
            .collect();
        serde_json::json!({ "dim": self.dim, "vectors": entries })
    }
}

/// A pooled note vector. Zero when the note had no in-vocabulary tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEmbedding {
    pub admission_id: String,
    pub category: String,
    pub vector: Vec<f64>,
    pub n_known_tokens: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn build_negative_table(vocab: &Vocabulary) -> Vec<u32> {
    let power = 0.75;
    let total: f64 = (0..vocab.len())
        .map(|i| (vocab.frequency(i) as f64).powf(power))
        .sum();
    let mut table = Vec::with_capacity(NEGATIVE_TABLE_SIZE);
    let mut word = 0usize;
    let mut cumulative = (vocab.frequency(0) as f64).powf(power) / total;
    for i in 0..NEGATIVE_TABLE_SIZE {
        table.push(word as u32);
        if (i as f64) / (NEGATIVE_TABLE_SIZE as f64) > cumulative && word + 1 < vocab.len() {
            word += 1;
            cumulative += (vocab.frequency(word) as f64).powf(power) / total;
        }
    }
    table
}

/// Train skip-gram embeddings with negative sampling. Deterministic: a fixed
/// seed gives a bit-identical matrix.
pub fn train_word2vec(
    notes: &[TokenizedNote],
    vocab: &Vocabulary,
    params: &Word2VecParams,
) -> Result<EmbeddingMatrix, EmbedError> {
    params.validate()?;
    let dim = params.dim;

    // Sentences as vocab-index sequences; OOV tokens dropped.
    let sentences: Vec<Vec<u32>> = notes
        .iter()
        .flat_map(|n| n.sentences.iter())
        .map(|s| {
            s.iter()
                .filter_map(|t| vocab.index(t))
                .map(|i| i as u32)
                .collect::<Vec<u32>>()
        })
        .filter(|s: &Vec<u32>| !s.is_empty())
        .collect();
    let corpus_tokens: usize = sentences.iter().map(Vec::len).sum();
    if corpus_tokens == 0 {
        return Err(EmbedError::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut input = vec![0.0f64; vocab.len() * dim];
    for v in input.iter_mut() {
        *v = (rng.gen::<f64>() - 0.5) / dim as f64;
    }
    let output = vec![0.0f64; vocab.len() * dim];
    let mut model = EmbeddingMatrix {
        dim,
        vocab_size: vocab.len(),
        input,
        output,
    };

    let table = build_negative_table(vocab);
    let total_freq = vocab.total_frequency() as f64;
    let total_work = (params.epochs * corpus_tokens) as f64;
    let mut processed = 0usize;
    let mut gradient = vec![0.0f64; dim];

    for _ in 0..params.epochs {
        for sentence in &sentences {
            // Frequent-word subsampling, resampled every epoch.
            let kept: Vec<u32> = sentence
                .iter()
                .copied()
                .filter(|&w| {
                    processed += 1;
                    if params.subsample_threshold <= 0.0 {
                        return true;
                    }
                    let f = vocab.frequency(w as usize) as f64;
                    let cut = params.subsample_threshold * total_freq;
                    let keep = (cut / f).sqrt() + cut / f;
                    keep >= 1.0 || rng.gen::<f64>() < keep
                })
                .collect();
            let progress = (processed as f64 / total_work).min(1.0);
            let alpha = params.learning_rate * (1.0 - 0.9 * progress);

            for center_pos in 0..kept.len() {
                let radius = rng.gen_range(1..=params.window);
                let lo = center_pos.saturating_sub(radius);
                let hi = (center_pos + radius).min(kept.len().saturating_sub(1));
                for context_pos in lo..=hi {
                    if context_pos == center_pos {
                        continue;
                    }
                    let center = kept[center_pos] as usize;
                    let context = kept[context_pos] as usize;
                    sgd_step(
                        &mut model,
                        center,
                        context,
                        params.negatives,
                        alpha,
                        &table,
                        &mut rng,
                        &mut gradient,
                    );
                }
            }
        }
    }
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
fn sgd_step(
    model: &mut EmbeddingMatrix,
    center: usize,
    context: usize,
    negatives: usize,
    alpha: f64,
    table: &[u32],
    rng: &mut ChaCha8Rng,
    gradient: &mut [f64],
) {
    let dim = model.dim;
    gradient.fill(0.0);
    let center_off = center * dim;
    for k in 0..=negatives {
        let (target, label) = if k == 0 {
            (context, 1.0)
        } else {
            let mut t = table[rng.gen_range(0..table.len())] as usize;
            if t == context {
                t = table[rng.gen_range(0..table.len())] as usize;
            }
            (t, 0.0)
        };
        let target_off = target * dim;
        let mut dot = 0.0;
        for d in 0..dim {
            dot += model.input[center_off + d] * model.output[target_off + d];
        }
        let g = (label - sigmoid(dot)) * alpha;
        for d in 0..dim {
            gradient[d] += g * model.output[target_off + d];
            model.output[target_off + d] += g * model.input[center_off + d];
        }
    }
    for d in 0..dim {
        model.input[center_off + d] += gradient[d];
    }
}

/// Average the word vectors of every in-vocabulary token occurrence.
pub fn embed_note(
    note: &TokenizedNote,
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
) -> NoteEmbedding {
    let mut vector = vec![0.0f64; emb.dim()];
    let mut n_known = 0usize;
    for tok in note.tokens() {
        if let Some(idx) = vocab.index(tok) {
            let row = emb.input_vector(idx);
            for (acc, v) in vector.iter_mut().zip(row) {
                *acc += v;
            }
            n_known += 1;
        }
    }
    if n_known > 0 {
        for v in vector.iter_mut() {
            *v /= n_known as f64;
        }
    }
    NoteEmbedding {
        admission_id: note.admission_id.clone(),
        category: note.category.clone(),
        vector,
        n_known_tokens: n_known,
    }
}

/// Componentwise arithmetic mean of a nonempty list of equal-length vectors.
pub fn pool_mean<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>, EmbedError> {
    let first = vectors.first().ok_or(EmbedError::EmptyPool)?.as_ref();
    let dim = first.len();
    let mut out = vec![0.0f64; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(EmbedError::DimMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (acc, x) in out.iter_mut().zip(v) {
            *acc += x;
        }
    }
    for acc in out.iter_mut() {
        *acc /= vectors.len() as f64;
    }
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
