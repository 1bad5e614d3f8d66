//! Labeled datasets, file ingestion and few-shot split sampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from_seed, split_seed};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("dataset has no examples")]
    EmptyDataset,
    #[error("label index {index} out of range for {n_labels} label names")]
    LabelOutOfRange { index: usize, n_labels: usize },
    #[error("example {index} has empty text")]
    EmptyText { index: usize },
    #[error("label names must be nonempty and distinct: {0}")]
    BadLabelNames(String),
    #[error("class {class:?} has {available} examples, {requested} requested")]
    InsufficientClassSize {
        class: String,
        available: usize,
        requested: usize,
    },
    #[error("n_per_class and n_splits must be at least 1")]
    ZeroSample,
    #[error("unknown dataset format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: usize) -> Self {
        Self {
            text: text.into(),
            label,
        }
    }
}

/// An ordered list of labeled examples plus the names of the classes their
/// labels index into.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    label_names: Vec<String>,
}

impl Dataset {
    /// Validates the invariants: label names nonempty and distinct, every
    /// label in range, no text that is empty after trimming.
    pub fn new(
        examples: Vec<LabeledExample>,
        label_names: Vec<String>,
    ) -> Result<Self, CorpusError> {
        validate_label_names(&label_names)?;
        for (index, ex) in examples.iter().enumerate() {
            if ex.label >= label_names.len() {
                return Err(CorpusError::LabelOutOfRange {
                    index: ex.label,
                    n_labels: label_names.len(),
                });
            }
            if ex.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { index });
            }
        }
        Ok(Self {
            examples,
            label_names,
        })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.text.as_str())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Example indices grouped by class, in dataset order within each class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.label_names.len()];
        for (i, ex) in self.examples.iter().enumerate() {
            groups[ex.label].push(i);
        }
        groups
    }

    /// Writes one `{"text":…,"label":<name>}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for ex in &self.examples {
            let line = serde_json::json!({
                "text": ex.text,
                "label": self.label_names[ex.label],
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_jsonl(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }
}

fn validate_label_names(names: &[String]) -> Result<(), CorpusError> {
    if names.is_empty() {
        return Err(CorpusError::BadLabelNames("no label names".into()));
    }
    for (i, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(CorpusError::BadLabelNames(format!("name {i} is empty")));
        }
        if names[..i].contains(name) {
            return Err(CorpusError::BadLabelNames(format!(
                "duplicate name {name:?}"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// `.csv` is CSV, anything else is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(DatasetFormat::Jsonl),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// A label as it appears in a file, before resolution against label names.
#[derive(Clone, Debug)]
enum RawLabel {
    Name(String),
    Index(usize),
}

struct RawRecord {
    line: usize,
    text: String,
    label: RawLabel,
}

/// Loads a dataset, discovering label names in first-appearance order.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, CorpusError> {
    load_dataset_with_labels(path, format, None)
}

/// Loads a dataset. With `label_names`, string labels must be one of the
/// given names and integer labels index into them. Without, names are
/// collected from string labels in order of first appearance; a file with
/// only integer labels gets the names `"0"`, `"1"`, … up to its largest index.
pub fn load_dataset_with_labels(
    path: &Path,
    format: DatasetFormat,
    label_names: Option<&[String]>,
) -> Result<Dataset, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let records = match format {
        DatasetFormat::Jsonl => read_jsonl_records(reader, path)?,
        DatasetFormat::Csv => read_csv_records(reader)?,
    };
    resolve_records(records, label_names)
}

fn read_jsonl_records<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::Malformed {
            line: line_no,
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let text = match value.get("text") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(_) => return Err(malformed("field `text` is not a string".into())),
            None => return Err(malformed("missing field `text`".into())),
        };
        let label = match value.get("label") {
            Some(serde_json::Value::String(s)) => RawLabel::Name(s.clone()),
            Some(serde_json::Value::Number(n)) => match n.as_u64() {
                Some(idx) => RawLabel::Index(idx as usize),
                None => return Err(malformed(format!("label {n} is not a nonnegative integer"))),
            },
            Some(_) => return Err(malformed("field `label` is not a string or integer".into())),
            None => return Err(malformed("missing field `label`".into())),
        };
        records.push(RawRecord {
            line: line_no,
            text,
            label,
        });
    }
    Ok(records)
}

fn read_csv_records<R: std::io::Read>(reader: R) -> Result<Vec<RawRecord>, CorpusError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::Malformed {
                line: 1,
                reason: format!("header must contain `text` and `label`, missing `{name}`"),
            })
    };
    let text_col = column("text")?;
    let label_col = column("label")?;

    let mut records = Vec::new();
    for row in csv.records() {
        let row = row.map_err(|e| CorpusError::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize, name: &str| {
            row.get(col).ok_or_else(|| CorpusError::Malformed {
                line,
                reason: format!("missing `{name}` column"),
            })
        };
        let text = field(text_col, "text")?.to_string();
        let raw = field(label_col, "label")?.trim();
        let label = match raw.parse::<usize>() {
            Ok(idx) => RawLabel::Index(idx),
            Err(_) => RawLabel::Name(raw.to_string()),
        };
        records.push(RawRecord { line, text, label });
    }
    Ok(records)
}

fn resolve_records(
    records: Vec<RawRecord>,
    explicit: Option<&[String]>,
) -> Result<Dataset, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut names: Vec<String> = explicit.map(<[String]>::to_vec).unwrap_or_default();
    let mut lookup: HashMap<String, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let any_names = records.iter().any(|r| matches!(r.label, RawLabel::Name(_)));

    if explicit.is_none() {
        if any_names {
            for r in &records {
                if let RawLabel::Name(name) = &r.label {
                    if !lookup.contains_key(name) {
                        lookup.insert(name.clone(), names.len());
                        names.push(name.clone());
                    }
                }
            }
        } else {
            let max = records
                .iter()
                .filter_map(|r| match r.label {
                    RawLabel::Index(i) => Some(i),
                    RawLabel::Name(_) => None,
                })
                .max()
                .unwrap_or(0);
            names = (0..=max).map(|i| i.to_string()).collect();
        }
    }

    let mut examples = Vec::with_capacity(records.len());
    for r in records {
        let label = match r.label {
            RawLabel::Index(i) => i,
            RawLabel::Name(name) => *lookup.get(&name).ok_or_else(|| CorpusError::Malformed {
                line: r.line,
                reason: format!("label {name:?} is not a declared label name"),
            })?,
        };
        if label >= names.len() {
            return Err(CorpusError::LabelOutOfRange {
                index: label,
                n_labels: names.len(),
            });
        }
        if r.text.trim().is_empty() {
            return Err(CorpusError::Malformed {
                line: r.line,
                reason: "text is empty".into(),
            });
        }
        examples.push(LabeledExample::new(r.text, label));
    }
    Dataset::new(examples, names)
}

/// Draws `n_per_class` examples of every class without replacement.
///
/// The result lists classes in label order; within a class, examples keep
/// their source order.
pub fn sample_few_shot(
    source: &Dataset,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset, CorpusError> {
    if n_per_class == 0 {
        return Err(CorpusError::ZeroSample);
    }
    let groups = source.indices_by_class();
    if let Some((class, group)) = groups
        .iter()
        .enumerate()
        .find(|(_, g)| g.len() < n_per_class)
    {
        return Err(CorpusError::InsufficientClassSize {
            class: source.label_names[class].clone(),
            available: group.len(),
            requested: n_per_class,
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut examples = Vec::with_capacity(n_per_class * groups.len());
    for mut group in groups {
        group.shuffle(&mut rng);
        let mut picked = group[..n_per_class].to_vec();
        picked.sort_unstable();
        examples.extend(picked.into_iter().map(|i| source.examples[i].clone()));
    }
    Ok(Dataset {
        examples,
        label_names: source.label_names.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub splits: Vec<Dataset>,
    pub base_seed: u64,
    pub n_per_class: usize,
}

/// `n_splits` few-shot samples; split `i` uses seed [`split_seed`]`(base_seed, i)`.
pub fn make_splits(
    source: &Dataset,
    n_per_class: usize,
    n_splits: usize,
    base_seed: u64,
) -> Result<SplitSet, CorpusError> {
    if n_splits == 0 {
        return Err(CorpusError::ZeroSample);
    }
    let splits = (0..n_splits)
        .map(|i| sample_few_shot(source, n_per_class, split_seed(base_seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SplitSet {
        splits,
        base_seed,
        n_per_class,
    })
}
