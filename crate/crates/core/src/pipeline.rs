//! Config-driven orchestration: ingest → split → preprocess → word2vec →
//! note embeddings → optional refinement stages → classifiers → metrics,
//! plus the four-setting ablation grid (baseline / metric / weight / full).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::{self, Classifier};
use crate::corpus::{self, AdmissionRecord, NoteRecord, SplitAssignment, SyntheticConfig};
use crate::embed::{self, EmbeddingMatrix, NoteEmbedding, Word2VecParams};
use crate::metrics::{MetricReport, ScoredSet};
use crate::seed::derive_seed;
use crate::siamese::{self, NotesByCategory, RefinerBundle, SiameseTrainParams};
use crate::textprep::{self, TokenizedNote, Vocabulary};
use crate::weighting::{
    self, AdmissionClassifierHead, CategoryEmbeddingSet, CategoryWeights, WeightTrainParams,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error at stage {stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("training error at stage {stage}: {message}")]
    Training { stage: &'static str, message: String },
    #[error("leakage guard tripped at stage {stage}: admission {id} is not in the training split")]
    Leakage { stage: &'static str, id: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code contract: 2 config, 3 data, 4 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } | PipelineError::Io { .. } => 3,
            PipelineError::Training { .. } | PipelineError::Leakage { .. } => 4,
        }
    }
}

fn data_err<E: fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Data {
        stage,
        message: e.to_string(),
    }
}

fn train_err<E: fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Training {
        stage,
        message: e.to_string(),
    }
}

/// One cell of the 2×2 refinement grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Baseline,
    Metric,
    Weight,
    Full,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::Baseline,
        Setting::Metric,
        Setting::Weight,
        Setting::Full,
    ];

    pub fn metric_enabled(self) -> bool {
        matches!(self, Setting::Metric | Setting::Full)
    }

    pub fn weight_enabled(self) -> bool {
        matches!(self, Setting::Weight | Setting::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::Baseline => "baseline",
            Setting::Metric => "metric",
            Setting::Weight => "weight",
            Setting::Full => "full",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Setting::Baseline),
            "metric" => Ok(Setting::Metric),
            "weight" => Ok(Setting::Weight),
            "full" => Ok(Setting::Full),
            other => Err(format!(
                "unknown setting {other:?} (expected baseline|metric|weight|full)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub notes_csv: Option<PathBuf>,
    #[serde(default)]
    pub admissions_csv: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub exclude_categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextPrepSection {
    pub min_count: u64,
}

impl Default for TextPrepSection {
    fn default() -> Self {
        TextPrepSection { min_count: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Word2VecSection {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub subsample_threshold: f64,
}

impl Default for Word2VecSection {
    fn default() -> Self {
        Word2VecSection {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 10,
            learning_rate: 0.025,
            subsample_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiameseSection {
    pub margin: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub pairs_per_epoch: Option<usize>,
    pub hidden_multiplier: usize,
    pub balanced: bool,
}

impl Default for SiameseSection {
    fn default() -> Self {
        SiameseSection {
            margin: 1.0,
            epochs: 20,
            learning_rate: 0.01,
            pairs_per_epoch: None,
            hidden_multiplier: 2,
            balanced: true,
        }
    }
}

/// Which vector feeds the downstream classifiers in weighted settings:
/// the weighted pool itself (default) or the fine-tuning head's hidden
/// activations of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightFeature {
    #[default]
    Pool,
    HeadHidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightingSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    #[serde(default)]
    pub renormalize: bool,
    #[serde(default)]
    pub feature: WeightFeature,
}

impl Default for WeightingSection {
    fn default() -> Self {
        WeightingSection {
            epochs: 200,
            learning_rate: 0.05,
            hidden: 16,
            renormalize: false,
            feature: WeightFeature::Pool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    LogReg,
    Mlp,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::LogReg => "logreg",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub kinds: Vec<ClassifierKind>,
    pub logreg_l2: f64,
    pub logreg_epochs: usize,
    pub logreg_lr: f64,
    pub mlp_hidden: usize,
    pub mlp_epochs: usize,
    pub mlp_lr: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            kinds: vec![ClassifierKind::LogReg, ClassifierKind::Mlp],
            logreg_l2: 1e-3,
            logreg_epochs: 500,
            logreg_lr: 0.1,
            mlp_hidden: 32,
            mlp_epochs: 500,
            mlp_lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Seeds averaged over by `ablate`; defaults to `[seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 42,
            seeds: Vec::new(),
        }
    }
}

/// The full resolved pipeline configuration (TOML on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub split: SplitSection,
    pub textprep: TextPrepSection,
    pub word2vec: Word2VecSection,
    pub siamese: SiameseSection,
    pub weighting: WeightingSection,
    pub classifiers: ClassifierSection,
    pub run: RunSection,
}

impl PipelineConfig {
    /// The shipped synthetic default: one strongly label-indicative
    /// category, one weak one, one pure-noise one, 400 admissions.
    pub fn default_synthetic() -> Self {
        let mut config = PipelineConfig::default();
        config.data.synthetic = Some(default_synthetic_corpus());
        config.run.seeds = vec![1, 2, 3, 4, 5];
        config
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.classifiers.kinds.is_empty() {
            return Err(PipelineError::Config(
                "at least one classifier must be selected".into(),
            ));
        }
        let has_csv = self.data.notes_csv.is_some() && self.data.admissions_csv.is_some();
        if has_csv == self.data.synthetic.is_some() {
            return Err(PipelineError::Config(
                "exactly one data source required: either notes_csv+admissions_csv or synthetic"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn ablation_seeds(&self) -> Vec<u64> {
        if self.run.seeds.is_empty() {
            vec![self.run.seed]
        } else {
            self.run.seeds.clone()
        }
    }

    /// SHA-256 over the canonical JSON encoding, hex-truncated.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hex::encode(&hash[..16])
    }
}

fn default_synthetic_corpus() -> SyntheticConfig {
    SyntheticConfig {
        n_admissions: 400,
        positive_fraction: 0.5,
        categories: vec![
            corpus::CategorySpec {
                name: "Physician".into(),
                presence_probability: 1.0,
                signal_strength: 0.2,
            },
            corpus::CategorySpec {
                name: "Nursing".into(),
                presence_probability: 1.0,
                signal_strength: 0.0,
            },
            corpus::CategorySpec {
                name: "Radiology".into(),
                presence_probability: 1.0,
                signal_strength: 0.0,
            },
            corpus::CategorySpec {
                name: "ECG".into(),
                presence_probability: 1.0,
                signal_strength: 0.0,
            },
        ],
        notes_per_category: (1, 3),
        tokens_per_note: (5, 15),
        shared_tokens: 300,
        label_tokens_per_category: 30,
        seed: 0,
    }
}

/// Config file loading with `--set key.path=value` overrides applied on the
/// raw TOML tree before deserialization.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<PipelineConfig, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| PipelineError::Config(format!("bad TOML in {}: {e}", path.display())))?;
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }
    config_from_toml(value)
}

pub fn config_from_toml(value: toml::Value) -> Result<PipelineConfig, PipelineError> {
    let config: PipelineConfig = value
        .try_into()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Set a dotted-path key in a TOML tree; the value string is parsed as TOML
/// (so numbers, booleans, and arrays work) with plain-string fallback.
pub fn apply_override(
    root: &mut toml::Value,
    key: &str,
    raw: &str,
) -> Result<(), PipelineError> {
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            PipelineError::Config(format!("--set {key}: {part} is not a table"))
        })?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}

/// Runtime assertion that a learned component consumes only training-split
/// admissions.
pub struct LeakageGuard<'a> {
    train: &'a BTreeSet<String>,
}

impl<'a> LeakageGuard<'a> {
    pub fn new(split: &'a SplitAssignment) -> Self {
        LeakageGuard {
            train: &split.train,
        }
    }

    pub fn check<I, S>(&self, stage: &'static str, ids: I) -> Result<(), PipelineError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for id in ids {
            if !self.train.contains(id.as_ref()) {
                return Err(PipelineError::Leakage {
                    stage,
                    id: id.as_ref().to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Guarded vocabulary construction: every note must belong to the training
/// split or the build aborts with a stage-labeled leakage error.
pub fn build_vocabulary_guarded(
    notes: &[&TokenizedNote],
    min_count: u64,
    guard: &LeakageGuard<'_>,
) -> Result<Vocabulary, PipelineError> {
    guard.check("vocabulary", notes.iter().map(|n| n.admission_id.as_str()))?;
    textprep::build_vocabulary(notes.iter().copied(), min_count).map_err(train_err("vocabulary"))
}

/// Everything the four ablation settings share: corpus, split, vocabulary,
/// word embeddings, and raw note-level embeddings.
pub struct PreparedData {
    pub notes: Vec<NoteRecord>,
    pub admissions: Vec<AdmissionRecord>,
    pub labels: HashMap<String, bool>,
    pub split: SplitAssignment,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    /// Raw pooled note embeddings for both splits.
    pub note_embeddings: Vec<NoteEmbedding>,
}

pub fn prepare(config: &PipelineConfig, master_seed: u64) -> Result<PreparedData, PipelineError> {
    config.validate()?;

    let (mut notes, admissions) = match (&config.data.synthetic, &config.data.notes_csv) {
        (Some(synth), _) => {
            let mut synth = synth.clone();
            // Each ablation seed sees its own corpus draw.
            synth.seed = derive_seed(master_seed, "synthetic");
            corpus::generate_synthetic(&synth).map_err(data_err("synthetic"))?
        }
        (None, Some(notes_path)) => {
            let notes_file = fs::File::open(notes_path).map_err(|source| PipelineError::Io {
                path: notes_path.clone(),
                source,
            })?;
            let notes = corpus::parse_notes_csv(notes_file).map_err(data_err("ingest"))?;
            let adm_path = config.data.admissions_csv.as_ref().unwrap();
            let adm_file = fs::File::open(adm_path).map_err(|source| PipelineError::Io {
                path: adm_path.clone(),
                source,
            })?;
            let admissions =
                corpus::parse_admissions_csv(adm_file).map_err(data_err("ingest"))?;
            (notes, admissions)
        }
        _ => unreachable!("validated"),
    };

    if !config.data.exclude_categories.is_empty() {
        let excluded: BTreeSet<&str> = config
            .data
            .exclude_categories
            .iter()
            .map(String::as_str)
            .collect();
        notes.retain(|n| !excluded.contains(n.category.as_str()));
    }

    let labels: HashMap<String, bool> = admissions
        .iter()
        .map(|a| (a.admission_id.clone(), a.mortality))
        .collect();

    let split = corpus::balance_and_split(
        &admissions,
        config.split.test_fraction,
        derive_seed(master_seed, "split"),
    )
    .map_err(data_err("split"))?;

    let tokenized: Vec<TokenizedNote> = notes
        .iter()
        .filter(|n| split.is_train(&n.admission_id) || split.is_test(&n.admission_id))
        .map(|n| TokenizedNote::from_text(&n.admission_id, &n.category, &n.text))
        .collect();

    let guard = LeakageGuard::new(&split);
    let train_notes: Vec<&TokenizedNote> = tokenized
        .iter()
        .filter(|n| split.is_train(&n.admission_id))
        .collect();
    let vocab = build_vocabulary_guarded(&train_notes, config.textprep.min_count, &guard)?;

    guard.check("word2vec", train_notes.iter().map(|n| n.admission_id.as_str()))?;
    let w2v_params = Word2VecParams {
        dim: config.word2vec.dim,
        window: config.word2vec.window,
        negatives: config.word2vec.negatives,
        epochs: config.word2vec.epochs,
        learning_rate: config.word2vec.learning_rate,
        subsample_threshold: config.word2vec.subsample_threshold,
        seed: derive_seed(master_seed, "word2vec"),
    };
    let train_owned: Vec<TokenizedNote> = train_notes.iter().map(|n| (*n).clone()).collect();
    let embeddings =
        embed::train_word2vec(&train_owned, &vocab, &w2v_params).map_err(train_err("word2vec"))?;

    let note_embeddings: Vec<NoteEmbedding> = tokenized
        .iter()
        .map(|n| embed::embed_note(n, &embeddings, &vocab))
        .collect();

    Ok(PreparedData {
        notes,
        admissions,
        labels,
        split,
        vocab,
        embeddings,
        note_embeddings,
    })
}

/// Learned artifacts of one setting run, for serialization and inspection.
pub struct SettingArtifacts {
    pub refiners: Option<RefinerBundle>,
    pub weights: Option<(CategoryWeights, AdmissionClassifierHead)>,
    pub models: BTreeMap<String, Classifier>,
}

/// Metric reports per classifier for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub setting: Setting,
    pub metrics: BTreeMap<String, MetricReport>,
}

fn admission_ids_sorted(split_side: &BTreeSet<String>) -> Vec<&str> {
    split_side.iter().map(String::as_str).collect()
}

/// Run one ablation setting over prepared data.
pub fn run_setting(
    prepared: &PreparedData,
    config: &PipelineConfig,
    setting: Setting,
    master_seed: u64,
) -> Result<(SettingReport, SettingArtifacts), PipelineError> {
    let guard = LeakageGuard::new(&prepared.split);
    let dim = prepared.embeddings.dim();

    // Refinement stage.
    let (working_embeddings, refiners): (Vec<NoteEmbedding>, Option<RefinerBundle>) =
        if setting.metric_enabled() {
            let mut by_category = NotesByCategory::new();
            let train_notes: Vec<&NoteEmbedding> = prepared
                .note_embeddings
                .iter()
                .filter(|n| prepared.split.is_train(&n.admission_id))
                .collect();
            guard.check("siamese", train_notes.iter().map(|n| n.admission_id.as_str()))?;
            for note in train_notes {
                by_category
                    .entry(note.category.clone())
                    .or_default()
                    .push((note.vector.clone(), prepared.labels[&note.admission_id]));
            }
            let params = SiameseTrainParams {
                margin: config.siamese.margin,
                pairs_per_epoch: config.siamese.pairs_per_epoch,
                epochs: config.siamese.epochs,
                learning_rate: config.siamese.learning_rate,
                hidden_multiplier: config.siamese.hidden_multiplier,
                balanced: config.siamese.balanced,
                seed: derive_seed(master_seed, "siamese"),
            };
            let bundle =
                siamese::train_refiners(&by_category, &params).map_err(train_err("siamese"))?;
            let refined: Vec<NoteEmbedding> = prepared
                .note_embeddings
                .iter()
                .map(|n| bundle.refine(n))
                .collect::<Result<_, _>>()
                .map_err(train_err("siamese"))?;
            (refined, Some(bundle))
        } else {
            (prepared.note_embeddings.clone(), None)
        };

    // Group notes per admission.
    let mut notes_by_admission: HashMap<&str, Vec<&NoteEmbedding>> = HashMap::new();
    for note in &working_embeddings {
        notes_by_admission
            .entry(note.admission_id.as_str())
            .or_default()
            .push(note);
    }

    let train_ids = admission_ids_sorted(&prepared.split.train);
    let test_ids = admission_ids_sorted(&prepared.split.test);

    // Admission-level features.
    let (features, weights): (HashMap<&str, Vec<f64>>, _) = if setting.weight_enabled() {
        let set_for = |id: &str| -> Result<CategoryEmbeddingSet, PipelineError> {
            match notes_by_admission.get(id) {
                Some(notes) => {
                    let owned: Vec<NoteEmbedding> = notes.iter().map(|n| (*n).clone()).collect();
                    weighting::build_category_embeddings(&owned).map_err(train_err("weighting"))
                }
                // Admissions with no notes contribute an empty category map,
                // which pools to the zero vector.
                None => Ok(CategoryEmbeddingSet {
                    admission_id: id.to_string(),
                    categories: BTreeMap::new(),
                    dim,
                }),
            }
        };
        guard.check("weighting", train_ids.iter().copied())?;
        let train_sets: Vec<(CategoryEmbeddingSet, bool)> = train_ids
            .iter()
            .map(|id| Ok((set_for(id)?, prepared.labels[*id])))
            .collect::<Result<_, PipelineError>>()?;
        let params = WeightTrainParams {
            epochs: config.weighting.epochs,
            learning_rate: config.weighting.learning_rate,
            hidden: config.weighting.hidden,
            seed: derive_seed(master_seed, "weighting"),
        };
        let (weights, head) =
            weighting::train_weights(&train_sets, &params).map_err(train_err("weighting"))?;
        let mut features = HashMap::new();
        for id in train_ids.iter().chain(test_ids.iter()) {
            let set = set_for(id)?;
            let pooled = weighting::weighted_pool_with(&set, &weights, config.weighting.renormalize)
                .map_err(train_err("weighting"))?;
            let feature = match config.weighting.feature {
                WeightFeature::Pool => pooled,
                WeightFeature::HeadHidden => head.hidden_activations(&pooled),
            };
            features.insert(*id, feature);
        }
        (features, Some((weights, head)))
    } else {
        let mut features = HashMap::new();
        for id in train_ids.iter().chain(test_ids.iter()) {
            let vector = match notes_by_admission.get(id) {
                Some(notes) => {
                    let vs: Vec<&[f64]> = notes.iter().map(|n| n.vector.as_slice()).collect();
                    embed::pool_mean(&vs).map_err(train_err("pooling"))?
                }
                None => vec![0.0; dim],
            };
            features.insert(*id, vector);
        }
        (features, None)
    };

    // Classifiers.
    let train_x: Vec<Vec<f64>> = train_ids.iter().map(|id| features[id].clone()).collect();
    let train_y: Vec<bool> = train_ids.iter().map(|id| prepared.labels[*id]).collect();
    let test_x: Vec<&Vec<f64>> = test_ids.iter().map(|id| &features[id]).collect();
    let test_y: Vec<bool> = test_ids.iter().map(|id| prepared.labels[*id]).collect();

    let mut metrics = BTreeMap::new();
    let mut models = BTreeMap::new();
    for kind in &config.classifiers.kinds {
        let model = match kind {
            ClassifierKind::LogReg => Classifier::LogReg(
                classify::train_logreg(
                    &train_x,
                    &train_y,
                    config.classifiers.logreg_l2,
                    config.classifiers.logreg_epochs,
                    config.classifiers.logreg_lr,
                )
                .map_err(train_err("classify/logreg"))?,
            ),
            ClassifierKind::Mlp => Classifier::Mlp(
                classify::train_mlp(
                    &train_x,
                    &train_y,
                    config.classifiers.mlp_hidden,
                    config.classifiers.mlp_epochs,
                    config.classifiers.mlp_lr,
                    derive_seed(master_seed, "classify/mlp"),
                )
                .map_err(train_err("classify/mlp"))?,
            ),
        };
        let scores: Vec<f64> = test_x
            .iter()
            .map(|x| classify::predict_proba(&model, x))
            .collect::<Result<_, _>>()
            .map_err(train_err("score"))?;
        let scored = ScoredSet::new(scores, test_y.clone()).map_err(train_err("metrics"))?;
        let report = MetricReport::compute(&scored).map_err(train_err("metrics"))?;
        metrics.insert(kind.name().to_string(), report);
        models.insert(kind.name().to_string(), model);
    }

    Ok((
        SettingReport { setting, metrics },
        SettingArtifacts {
            refiners,
            weights,
            models,
        },
    ))
}

/// Report for a single `run` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub seed: u64,
    pub setting: Setting,
    pub metrics: BTreeMap<String, MetricReport>,
    pub config: PipelineConfig,
}

/// Run the pipeline end-to-end for one setting.
pub fn run_pipeline(
    config: &PipelineConfig,
    setting: Setting,
) -> Result<(RunReport, PreparedData, SettingArtifacts), PipelineError> {
    let master_seed = config.run.seed;
    let prepared = prepare(config, master_seed)?;
    let (report, artifacts) = run_setting(&prepared, config, setting, master_seed)?;
    Ok((
        RunReport {
            config_digest: config.digest(),
            seed: master_seed,
            setting,
            metrics: report.metrics,
            config: config.clone(),
        },
        prepared,
        artifacts,
    ))
}

/// One (seed, setting, classifier) ablation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub seed: u64,
    pub setting: Setting,
    pub classifier: String,
    pub auc: f64,
    pub auc_pr: f64,
}

/// Seed-averaged (setting, classifier) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMean {
    pub setting: Setting,
    pub classifier: String,
    pub auc: f64,
    pub auc_pr: f64,
}

/// The four-setting ablation grid over the configured seeds. Wall-clock
/// timings are tracked separately from the serialized report so reruns with
/// equal configs stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
    pub means: Vec<AblationMean>,
    pub config: PipelineConfig,
    #[serde(skip)]
    pub timing_secs: f64,
}

impl AblationReport {
    pub fn mean_auc(&self, setting: Setting) -> f64 {
        let cells: Vec<&AblationMean> = self
            .means
            .iter()
            .filter(|m| m.setting == setting)
            .collect();
        cells.iter().map(|m| m.auc).sum::<f64>() / cells.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,classifier,auc,auc_pr\n");
        for m in &self.means {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                m.setting.name(),
                m.classifier,
                m.auc,
                m.auc_pr
            ));
        }
        out
    }
}

/// Run all four settings × configured classifiers × configured seeds,
/// sharing split / vocabulary / word embeddings / raw note embeddings
/// within each seed.
pub fn run_ablation(config: &PipelineConfig) -> Result<AblationReport, PipelineError> {
    let start = std::time::Instant::now();
    let seeds = config.ablation_seeds();
    let mut cells = Vec::new();
    for &seed in &seeds {
        let prepared = prepare(config, seed)?;
        // All settings score the identical test admission set.
        let test_set = prepared.split.test.clone();
        for setting in Setting::ALL {
            assert_eq!(prepared.split.test, test_set);
            let (report, _) = run_setting(&prepared, config, setting, seed)?;
            for (classifier, m) in &report.metrics {
                cells.push(AblationCell {
                    seed,
                    setting,
                    classifier: classifier.clone(),
                    auc: m.auc,
                    auc_pr: m.auc_pr,
                });
            }
        }
    }

    let mut means = Vec::new();
    for setting in Setting::ALL {
        for kind in &config.classifiers.kinds {
            let matching: Vec<&AblationCell> = cells
                .iter()
                .filter(|c| c.setting == setting && c.classifier == kind.name())
                .collect();
            let n = matching.len() as f64;
            means.push(AblationMean {
                setting,
                classifier: kind.name().to_string(),
                auc: matching.iter().map(|c| c.auc).sum::<f64>() / n,
                auc_pr: matching.iter().map(|c| c.auc_pr).sum::<f64>() / n,
            });
        }
    }

    Ok(AblationReport {
        config_digest: config.digest(),
        seeds,
        cells,
        means,
        config: config.clone(),
        timing_secs: start.elapsed().as_secs_f64(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Run one setting and write report.json plus every serialized artifact.
pub fn execute_run(
    config: &PipelineConfig,
    setting: Setting,
    out_dir: &Path,
) -> Result<RunReport, PipelineError> {
    let (report, prepared, artifacts) = run_pipeline(config, setting)?;
    write_json(
        &out_dir.join("report.json"),
        &serde_json::to_value(&report).unwrap(),
    )?;
    write_json(
        &out_dir.join("split.json"),
        &serde_json::to_value(&prepared.split).unwrap(),
    )?;
    write_json(&out_dir.join("vocab.json"), &prepared.vocab.to_json())?;
    let mut emb_bytes = Vec::new();
    prepared
        .embeddings
        .write_to(&mut emb_bytes)
        .map_err(train_err("serialize"))?;
    write_file(&out_dir.join("embeddings.bin"), &emb_bytes)?;
    write_json(
        &out_dir.join("embeddings.json"),
        &prepared.embeddings.input_vectors_json(&prepared.vocab),
    )?;
    if let Some(bundle) = &artifacts.refiners {
        write_json(&out_dir.join("refiners.json"), &bundle.to_json())?;
    }
    if let Some((weights, head)) = &artifacts.weights {
        write_json(
            &out_dir.join("weights.json"),
            &weighting::weights_to_json(weights, head),
        )?;
    }
    for (name, model) in &artifacts.models {
        write_json(
            &out_dir.join(format!("model_{name}.json")),
            &serde_json::to_value(model).unwrap(),
        )?;
    }
    Ok(report)
}

/// Run the ablation grid and write report.json + ablation.csv.
pub fn execute_ablation(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<AblationReport, PipelineError> {
    let report = run_ablation(config)?;
    write_json(
        &out_dir.join("report.json"),
        &serde_json::to_value(&report).unwrap(),
    )?;
    write_file(&out_dir.join("ablation.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}

/// Tokens closest to `token` by cosine over the trained embeddings.
pub fn nearest_neighbors(
    embeddings: &EmbeddingMatrix,
    vocab: &Vocabulary,
    token: &str,
    k: usize,
) -> Option<Vec<(String, f64)>> {
    let idx = vocab.index(token)?;
    let query = embeddings.input_vector(idx);
    let mut scored: Vec<(String, f64)> = (0..vocab.len())
        .filter(|&i| i != idx)
        .map(|i| {
            (
                vocab.token(i).to_string(),
                embed::cosine(query, embeddings.input_vector(i)),
            )
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Some(scored)
}
