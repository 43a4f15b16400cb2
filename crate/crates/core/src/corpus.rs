//! Image memory and QA datasets, with their line-delimited JSON formats.
//!
//! Corpus lines look like
//! `{"id": "...", "caption": "...", "image_ref": "...", "split": "train"|"val"|"test"}`
//! and QA lines like
//! `{"qid", "question", "answers": [..], "positive_ids": [..], "hard_negative_ids": [..], "split"}`.
//! Fields beyond these are kept verbatim and written back on save.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// One item of the external image memory: an image locator and its caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub caption: String,
    pub image_ref: String,
    pub split: Split,
    /// Unrecognised fields, preserved for round trips.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        caption: impl Into<String>,
        image_ref: impl Into<String>,
        split: Split,
    ) -> Self {
        Self {
            id: id.into(),
            caption: caption.into(),
            image_ref: image_ref.into(),
            split,
            extra: Map::new(),
        }
    }
}

/// A knowledge-seeking question with its gold answers and image annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub qid: String,
    pub question: String,
    pub answers: Vec<String>,
    pub positive_ids: Vec<String>,
    pub hard_negative_ids: Vec<String>,
    pub split: Split,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl QaExample {
    /// `true` when answering needs more than one image (WebQA "Multi." bucket).
    pub fn is_multi_image(&self) -> bool {
        self.positive_ids.len() > 1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusOptions {
    /// Accept records with empty captions.
    pub caption_less: bool,
}

/// Id-keyed collection of [`ImageRecord`]s. Iteration is sorted by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub name: String,
    /// Embedding dimensionality, once embeddings have been attached.
    pub dim: Option<usize>,
    pub caption_less: bool,
    records: BTreeMap<String, ImageRecord>,
}

impl Corpus {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    /// Builds a corpus from records, rejecting duplicates and invalid records.
    pub fn from_records(
        name: impl Into<String>,
        records: impl IntoIterator<Item = ImageRecord>,
    ) -> Result<Self> {
        let mut corpus = Self::new(name);
        for record in records {
            corpus.insert(record)?;
        }
        Ok(corpus)
    }

    pub fn insert(&mut self, record: ImageRecord) -> Result<()> {
        validate_record(&record, self.caption_less)?;
        if self.records.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        self.records.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    /// Loads a corpus, requiring non-empty captions.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(path, &CorpusOptions::default())
    }

    pub fn load_with(path: impl AsRef<Path>, options: &CorpusOptions) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut corpus = Corpus {
            name,
            caption_less: options.caption_less,
            ..Corpus::default()
        };
        for (line_no, record) in read_lines::<ImageRecord>(path, RECORD_FIELDS)? {
            corpus.insert(record).map_err(|e| match e {
                Error::InvalidRecord(msg) => Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: msg,
                },
                other => other,
            })?;
        }
        Ok(corpus)
    }

    /// Writes one record per line, sorted by id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_lines(path.as_ref(), self.records.values())
    }
}

const RECORD_FIELDS: &[&str] = &["id", "caption", "image_ref", "split"];
const QA_FIELDS: &[&str] = &[
    "qid",
    "question",
    "answers",
    "positive_ids",
    "hard_negative_ids",
    "split",
];

fn validate_record(record: &ImageRecord, caption_less: bool) -> Result<()> {
    if record.id.is_empty() {
        return Err(Error::InvalidRecord("empty id".into()));
    }
    if record.image_ref.is_empty() {
        return Err(Error::InvalidRecord(format!(
            "record `{}` has an empty image_ref",
            record.id
        )));
    }
    if record.caption.is_empty() && !caption_less {
        return Err(Error::InvalidRecord(format!(
            "record `{}` has an empty caption and the corpus is not caption-less",
            record.id
        )));
    }
    Ok(())
}

/// Loads QA examples and checks them against `corpus`. File order is kept.
pub fn load_qa(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<QaExample>> {
    let path = path.as_ref();
    let examples: Vec<QaExample> = read_lines::<QaExample>(path, QA_FIELDS)?
        .into_iter()
        .map(|(_, qa)| qa)
        .collect();
    validate_qa(&examples, corpus)?;
    Ok(examples)
}

pub fn save_qa(examples: &[QaExample], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), examples.iter())
}

/// Checks QA invariants: unique qids, non-empty answers and positives,
/// disjoint positive/negative sets, and every id resolvable in `corpus`.
pub fn validate_qa(examples: &[QaExample], corpus: &Corpus) -> Result<()> {
    let mut seen = HashSet::new();
    for qa in examples {
        if !seen.insert(qa.qid.as_str()) {
            return Err(Error::DuplicateId(qa.qid.clone()));
        }
        if qa.answers.is_empty() {
            return Err(Error::InvalidRecord(format!(
                "query `{}` has no answers",
                qa.qid
            )));
        }
        if qa.positive_ids.is_empty() {
            return Err(Error::InvalidRecord(format!(
                "query `{}` has no positive ids",
                qa.qid
            )));
        }
        let positives: BTreeSet<&str> = qa.positive_ids.iter().map(String::as_str).collect();
        if let Some(both) = qa
            .hard_negative_ids
            .iter()
            .find(|id| positives.contains(id.as_str()))
        {
            return Err(Error::InvalidRecord(format!(
                "query `{}` lists `{both}` as both positive and hard negative",
                qa.qid
            )));
        }
        for id in qa.positive_ids.iter().chain(&qa.hard_negative_ids) {
            if !corpus.contains(id) {
                return Err(Error::DanglingReference {
                    qid: qa.qid.clone(),
                    id: id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Reads QA examples without resolving their ids against a corpus.
pub fn read_qa(path: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    Ok(read_lines::<QaExample>(path.as_ref(), QA_FIELDS)?
        .into_iter()
        .map(|(_, qa)| qa)
        .collect())
}

/// Reads one JSON object per line. Parse errors carry the line number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    Ok(read_lines(path.as_ref(), &[])?
        .into_iter()
        .map(|(_, item)| item)
        .collect())
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    write_lines(path.as_ref(), items)
}

/// Parses a JSON-lines file, reporting missing fields by name and
/// malformed lines by 1-based line number. Blank lines are skipped.
pub(crate) fn read_lines<T: DeserializeOwned>(
    path: &Path,
    required: &[&str],
) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let Value::Object(obj) = &value else {
            return Err(parse_err("expected a JSON object".into()));
        };
        if let Some(field) = required.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::MissingField {
                line: line_no,
                field: (*field).to_string(),
            });
        }
        let item = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        out.push((line_no, item));
    }
    Ok(out)
}

pub(crate) fn write_lines<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
