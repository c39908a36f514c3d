//! Labeled corpora (AG News CSV, 20 Newsgroups directory trees), stratified
//! splitting and text-format word vectors.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Rng;
use crate::error::{Error, Result};

pub const AG_NEWS_LABELS: [&str; 4] = ["World", "Sports", "Business", "Sci/Tech"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub label: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    documents: Vec<Document>,
    label_names: Vec<String>,
}

impl Dataset {
    /// Checks that names are unique and every label indexes into them.
    pub fn new(documents: Vec<Document>, label_names: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for name in &label_names {
            if !seen.insert(name) {
                return Err(Error::LabelMismatch(format!("duplicate label name {name:?}")));
            }
        }
        if let Some(d) = documents.iter().find(|d| d.label >= label_names.len()) {
            return Err(Error::LabelMismatch(format!(
                "document {} has label {} but only {} classes exist",
                d.id,
                d.label,
                label_names.len()
            )));
        }
        Ok(Self {
            documents,
            label_names,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_names.len()];
        for d in &self.documents {
            counts[d.label] += 1;
        }
        counts
    }

    /// Same labels, documents picked by index in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            label_names: self.label_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Accept documents whose raw text is empty.
    pub keep_empty: bool,
}

fn check_text(doc: &Document, opts: LoadOptions) -> Result<()> {
    if doc.text.is_empty() && !opts.keep_empty {
        return Err(Error::EmptyText { id: doc.id.clone() });
    }
    Ok(())
}

/// Reads headerless AG News CSV rows `class,title,description` with class in `1..=label_names.len()`.
pub fn load_agnews_csv(path: &Path, label_names: &[&str], opts: LoadOptions) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut documents = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::RowFormat {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 3 {
            return Err(Error::RowFormat {
                row,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let class: usize = record[0].trim().parse().map_err(|_| Error::RowFormat {
            row,
            message: format!("class index {:?} is not an integer", &record[0]),
        })?;
        if class == 0 || class > label_names.len() {
            return Err(Error::RowFormat {
                row,
                message: format!("class index {class} outside 1..={}", label_names.len()),
            });
        }
        let doc = Document {
            id: format!("row{row}"),
            label: class - 1,
            text: format!("{}. {}", &record[1], &record[2]),
        };
        check_text(&doc, opts)?;
        documents.push(doc);
    }
    Dataset::new(documents, label_names.iter().map(|s| s.to_string()).collect())
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.retain(|e| !e.file_name().to_string_lossy().starts_with('.'));
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// One class per immediate subdirectory (sorted by name), one document per file.
///
/// Files are read in parallel and decoded leniently; output order is the
/// sorted `(class, filename)` order.
pub fn load_newsgroups_dir(path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let mut label_names = Vec::new();
    let mut files = Vec::new();
    for entry in sorted_entries(path)? {
        let class_path = entry.path();
        if !class_path.is_dir() {
            continue;
        }
        let class = entry.file_name().to_string_lossy().into_owned();
        let label = label_names.len();
        for file in sorted_entries(&class_path)? {
            let fp = file.path();
            if fp.is_file() {
                let id = format!("{class}/{}", file.file_name().to_string_lossy());
                files.push((id, label, fp));
            }
        }
        label_names.push(class);
    }
    if label_names.is_empty() {
        return Err(Error::EmptyInput {
            path: path.to_path_buf(),
            message: "no class subdirectories".into(),
        });
    }
    let documents = files
        .into_par_iter()
        .map(|(id, label, fp)| {
            let bytes = fs::read(&fp).map_err(|e| Error::io(&fp, e))?;
            let doc = Document {
                id,
                label,
                text: String::from_utf8_lossy(&bytes).into_owned(),
            };
            check_text(&doc, opts)?;
            Ok(doc)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(documents, label_names)
}

/// Per class, `max(1, round(n_c · val_fraction))` documents go to validation,
/// chosen by a shuffle seeded with `seed`. Both parts keep the source order.
pub fn stratified_split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction must be in (0,1), got {val_fraction}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, d) in dataset.documents.iter().enumerate() {
        by_class[d.label].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut is_val = vec![false; dataset.len()];
    for (label, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Stratify {
                label: dataset.label_names[label].clone(),
                count: members.len(),
            });
        }
        let take = ((members.len() as f64 * val_fraction).round() as usize)
            .max(1)
            .min(members.len() - 1);
        rng.shuffle(members);
        for &i in &members[..take] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| is_val[i]);
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

/// Takes up to `per_class` documents of each class, picked by a seeded shuffle,
/// in source order.
pub fn stratified_sample(dataset: &Dataset, per_class: usize, seed: u64) -> Dataset {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, d) in dataset.documents.iter().enumerate() {
        by_class[d.label].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut chosen = Vec::new();
    for members in &mut by_class {
        rng.shuffle(members);
        chosen.extend(members.iter().take(per_class));
    }
    chosen.sort_unstable();
    dataset.subset(&chosen)
}

/// Word vectors keyed by vocabulary index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub unk_row: Vec<f64>,
}

/// Reads `word v1 … v_dim` lines, keeping only words present in `vocab`.
/// The unknown-word row is the mean of the loaded rows (zeros if none).
pub fn load_embedding_text(path: &Path, vocab: &HashMap<String, usize>, dim: usize) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let contents = fs::read(path).map_err(|e| Error::io(path, e))?;
    let contents = String::from_utf8_lossy(&contents);
    let mut rows = BTreeMap::new();
    for (i, line) in contents.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::LineFormat {
                line: i + 1,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(Error::LineFormat {
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::LineFormat {
                line: i + 1,
                message: "non-finite value".into(),
            });
        }
        if let Some(&idx) = vocab.get(word) {
            rows.insert(idx, values);
        }
    }
    let mut unk_row = vec![0.0; dim];
    if !rows.is_empty() {
        for r in rows.values() {
            unk_row.iter_mut().zip(r).for_each(|(u, v)| *u += v);
        }
        let n = rows.len() as f64;
        unk_row.iter_mut().for_each(|u| *u /= n);
    }
    Ok(EmbeddingTable { dim, rows, unk_row })
}
