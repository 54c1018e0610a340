//! Corpus handling: MIMIC-style CSV ingestion, a synthetic labeled corpus
//! generator, and class-balanced train/test splitting.

use std::collections::{BTreeSet, HashSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing required column {0}")]
    MissingColumn(String),
    #[error("row error at line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("invalid HOSPITAL_EXPIRE_FLAG value {value:?} at line {line} (expected 0 or 1)")]
    InvalidFlag { line: u64, value: String },
    #[error("duplicate HADM_ID {id:?} at line {line}")]
    DuplicateAdmission { id: String, line: u64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no {0} admissions present; balancing requires both classes")]
    EmptyClass(&'static str),
    #[error("test_fraction must lie strictly between 0 and 1, got {0}")]
    InvalidTestFraction(f64),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// One clinical note: raw text tagged with its admission and category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub admission_id: String,
    pub category: String,
    pub text: String,
}

/// One hospital admission with its mortality label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub admission_id: String,
    pub mortality: bool,
}

/// Disjoint train/test admission id sets from a balanced pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn is_train(&self, id: &str) -> bool {
        self.train.contains(id)
    }

    pub fn is_test(&self, id: &str) -> bool {
        self.test.contains(id)
    }
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn require_column(headers: &csv::StringRecord, name: &str) -> Result<usize, CorpusError> {
    find_column(headers, name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
}

/// Parse a MIMIC NOTEEVENTS-style CSV. Requires HADM_ID, CATEGORY, and TEXT
/// columns (case-insensitive); extra columns are ignored. TEXT may contain
/// quoted embedded newlines.
pub fn parse_notes_csv<R: Read>(source: R) -> Result<Vec<NoteRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(source);
    let headers = reader.headers()?.clone();
    let id_col = require_column(&headers, "HADM_ID")?;
    let cat_col = require_column(&headers, "CATEGORY")?;
    let text_col = require_column(&headers, "TEXT")?;

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| -> Result<&str, CorpusError> {
            row.get(idx).ok_or(CorpusError::Row {
                line,
                message: format!("missing field at column {idx}"),
            })
        };
        let admission_id = field(id_col)?.trim().to_string();
        let category = field(cat_col)?.trim().to_string();
        let text = field(text_col)?.to_string();
        if admission_id.is_empty() {
            return Err(CorpusError::Row {
                line,
                message: "empty HADM_ID".into(),
            });
        }
        if category.is_empty() {
            return Err(CorpusError::Row {
                line,
                message: "empty CATEGORY".into(),
            });
        }
        records.push(NoteRecord {
            admission_id,
            category,
            text,
        });
    }
    Ok(records)
}

/// Parse an ADMISSIONS-style CSV with HADM_ID and HOSPITAL_EXPIRE_FLAG.
/// The flag must be literally "0" or "1"; duplicate ids are rejected.
pub fn parse_admissions_csv<R: Read>(source: R) -> Result<Vec<AdmissionRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(source);
    let headers = reader.headers()?.clone();
    let id_col = require_column(&headers, "HADM_ID")?;
    let flag_col = require_column(&headers, "HOSPITAL_EXPIRE_FLAG")?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let id = row
            .get(id_col)
            .ok_or(CorpusError::Row {
                line,
                message: "missing HADM_ID field".into(),
            })?
            .trim()
            .to_string();
        let flag = row
            .get(flag_col)
            .ok_or(CorpusError::Row {
                line,
                message: "missing HOSPITAL_EXPIRE_FLAG field".into(),
            })?
            .trim();
        let mortality = match flag {
            "0" => false,
            "1" => true,
            other => {
                return Err(CorpusError::InvalidFlag {
                    line,
                    value: other.to_string(),
                })
            }
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateAdmission { id, line });
        }
        records.push(AdmissionRecord {
            admission_id: id,
            mortality,
        });
    }
    Ok(records)
}

/// Write notes in the same schema `parse_notes_csv` reads.
pub fn serialize_notes_csv(records: &[NoteRecord]) -> Result<Vec<u8>, CorpusError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["HADM_ID", "CATEGORY", "TEXT"])?;
    for r in records {
        writer.write_record([&r.admission_id, &r.category, &r.text])?;
    }
    Ok(writer.into_inner().expect("flush into Vec cannot fail"))
}

/// Write admissions in the same schema `parse_admissions_csv` reads.
pub fn serialize_admissions_csv(records: &[AdmissionRecord]) -> Result<Vec<u8>, CorpusError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["HADM_ID", "HOSPITAL_EXPIRE_FLAG"])?;
    for r in records {
        writer.write_record([
            r.admission_id.as_str(),
            if r.mortality { "1" } else { "0" },
        ])?;
    }
    Ok(writer.into_inner().expect("flush into Vec cannot fail"))
}

/// One synthetic note category: how often it appears on an admission and how
/// strongly its text encodes the mortality label (0 = pure noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub presence_probability: f64,
    pub signal_strength: f64,
}

/// Configuration for the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_admissions: usize,
    pub positive_fraction: f64,
    pub categories: Vec<CategorySpec>,
    /// Inclusive (min, max) note count per present category.
    pub notes_per_category: (usize, usize),
    /// Inclusive (min, max) token count per note.
    #[serde(default = "default_tokens_per_note")]
    pub tokens_per_note: (usize, usize),
    /// Size of the shared label-independent token pool.
    pub shared_tokens: usize,
    /// Label-indicative tokens per (category, label) pool.
    pub label_tokens_per_category: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_tokens_per_note() -> (usize, usize) {
    (20, 60)
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: &str| Err(CorpusError::InvalidConfig(m.to_string()));
        if self.n_admissions == 0 {
            return fail("n_admissions must be positive");
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return fail("positive_fraction must lie in (0, 1)");
        }
        if self.categories.is_empty() {
            return fail("at least one category is required");
        }
        for c in &self.categories {
            if !(c.presence_probability > 0.0 && c.presence_probability <= 1.0) {
                return fail("presence_probability must lie in (0, 1]");
            }
            if !(0.0..=1.0).contains(&c.signal_strength) {
                return fail("signal_strength must lie in [0, 1]");
            }
        }
        if self.notes_per_category.0 > self.notes_per_category.1
            || self.notes_per_category.0 == 0
        {
            return fail("notes_per_category must be a nonempty range starting at >= 1");
        }
        if self.tokens_per_note.0 > self.tokens_per_note.1 || self.tokens_per_note.0 == 0 {
            return fail("tokens_per_note must be a nonempty range starting at >= 1");
        }
        if self.shared_tokens == 0 || self.label_tokens_per_category == 0 {
            return fail("token pools must be nonempty");
        }
        Ok(())
    }
}

/// Generate a labeled corpus. The output is a pure function of the config:
/// identical config (including seed) gives byte-identical records.
///
/// Token text deliberately mixes in uppercase variants, newlines, and
/// sentence punctuation so the preprocessing rules get exercised.
pub fn generate_synthetic(
    config: &SyntheticConfig,
) -> Result<(Vec<NoteRecord>, Vec<AdmissionRecord>), CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n_pos = ((config.n_admissions as f64) * config.positive_fraction).round() as usize;
    let mut labels = vec![true; n_pos];
    labels.extend(std::iter::repeat(false).take(config.n_admissions - n_pos));
    labels.shuffle(&mut rng);

    let mut notes = Vec::new();
    let mut admissions = Vec::with_capacity(config.n_admissions);
    for (adm_idx, &mortality) in labels.iter().enumerate() {
        let admission_id = format!("adm{:05}", adm_idx + 1);
        admissions.push(AdmissionRecord {
            admission_id: admission_id.clone(),
            mortality,
        });
        for (cat_idx, cat) in config.categories.iter().enumerate() {
            let present =
                cat.presence_probability >= 1.0 || rng.gen::<f64>() < cat.presence_probability;
            if !present {
                continue;
            }
            let n_notes =
                rng.gen_range(config.notes_per_category.0..=config.notes_per_category.1);
            for _ in 0..n_notes {
                let text = synth_note_text(config, cat_idx, cat.signal_strength, mortality, &mut rng);
                notes.push(NoteRecord {
                    admission_id: admission_id.clone(),
                    category: cat.name.clone(),
                    text,
                });
            }
        }
    }
    Ok((notes, admissions))
}

fn synth_note_text(
    config: &SyntheticConfig,
    cat_idx: usize,
    signal_strength: f64,
    mortality: bool,
    rng: &mut ChaCha8Rng,
) -> String {
    let n_tokens = rng.gen_range(config.tokens_per_note.0..=config.tokens_per_note.1);
    let mut text = String::new();
    for i in 0..n_tokens {
        let mut tok = if rng.gen::<f64>() < signal_strength {
            let k = rng.gen_range(0..config.label_tokens_per_category);
            let side = if mortality { "p" } else { "n" };
            format!("c{cat_idx}{side}{k}")
        } else {
            let k = rng.gen_range(0..config.shared_tokens);
            format!("w{k}")
        };
        if rng.gen::<f64>() < 0.1 {
            tok = tok.to_uppercase();
        }
        if i > 0 {
            if rng.gen::<f64>() < 0.05 {
                text.push('\n');
            } else {
                text.push(' ');
            }
        }
        text.push_str(&tok);
        if rng.gen::<f64>() < 0.05 {
            text.push('.');
        }
    }
    text
}

/// Downsample the majority class to the minority count, then do a stratified
/// shuffle-split with `test_fraction` held out.
pub fn balance_and_split(
    admissions: &[AdmissionRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::InvalidTestFraction(test_fraction));
    }
    let mut positives: Vec<&str> = admissions
        .iter()
        .filter(|a| a.mortality)
        .map(|a| a.admission_id.as_str())
        .collect();
    let mut negatives: Vec<&str> = admissions
        .iter()
        .filter(|a| !a.mortality)
        .map(|a| a.admission_id.as_str())
        .collect();
    if positives.is_empty() {
        return Err(CorpusError::EmptyClass("positive"));
    }
    if negatives.is_empty() {
        return Err(CorpusError::EmptyClass("negative"));
    }
    // Sort before shuffling so the result depends only on the id sets.
    positives.sort_unstable();
    negatives.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let keep = positives.len().min(negatives.len());
    positives.truncate(keep);
    negatives.truncate(keep);

    let n_test = ((keep as f64) * test_fraction).round() as usize;
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    for class in [&positives, &negatives] {
        for (i, id) in class.iter().enumerate() {
            if i < n_test {
                test.insert(id.to_string());
            } else {
                train.insert(id.to_string());
            }
        }
    }
    Ok(SplitAssignment { seed, train, test })
}
