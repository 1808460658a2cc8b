//! Corpus ingestion: tokenization, vocabulary filtering, TF*IDF weighting and
//! treatment binarization.
//!
//! Input corpora are JSON-lines files with one `{"text": ..., "label": 0|1}`
//! object per line. Tokens are lowercased maximal runs of alphabetic
//! characters; digits and punctuation split tokens and are dropped. No
//! stemming or stop-word removal is applied.
//!
//! TF*IDF uses raw term counts and the smoothed inverse document frequency
//! `ln((1 + N) / (1 + df)) + 1`, so a term present in every document still
//! carries weight and a value is zero exactly when the term is absent.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Split `text` into lowercase alphabetic tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Terms kept after document-frequency filtering, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub doc_freq: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, doc_freq: Vec<usize>) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { terms, doc_freq, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        if self.index.is_empty() && !self.terms.is_empty() {
            return self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok();
        }
        self.index.get(term).copied()
    }
}

/// Keep every term whose document frequency is at least `min_doc_freq`.
pub fn build_vocabulary<S: AsRef<str>>(docs: &[Vec<S>], min_doc_freq: usize) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if min_doc_freq == 0 {
        return Err(Error::InvalidInput("min_doc_freq must be at least 1".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.iter().map(|t| t.as_ref()).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let (terms, doc_freq) = df
        .into_iter()
        .filter(|&(_, n)| n >= min_doc_freq)
        .map(|(t, n)| (t.to_string(), n))
        .unzip();
    Ok(Vocabulary::from_parts(terms, doc_freq))
}

/// An N x D matrix of feature values with named columns.
///
/// Matrices built from text are nonnegative; synthetic data may carry
/// arbitrary finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub feature_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>, feature_names: Vec<String>) -> Result<Self> {
        if feature_names.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature values must be finite".into()));
        }
        Ok(FeatureMatrix { values, feature_names })
    }

    /// Build with generated names `f0, f1, ...`.
    pub fn unnamed(values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|j| format!("f{j}")).collect();
        FeatureMatrix::new(values, names)
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.values.nrows();
        &self.values.as_slice()[j * n..(j + 1) * n]
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn is_integral(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0 && v.fract() == 0.0)
    }

    /// Copy of the values with column `j` removed.
    pub fn without_column(&self, j: usize) -> DMatrix<f64> {
        self.values.clone().remove_column(j)
    }

    /// Copy of the values with column `j` set to zero.
    pub fn with_column_zeroed(&self, j: usize) -> DMatrix<f64> {
        let mut m = self.values.clone();
        m.column_mut(j).fill(0.0);
        m
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let values = self.values.select_columns(cols);
        let feature_names = cols.iter().map(|&j| self.feature_names[j].clone()).collect();
        FeatureMatrix { values, feature_names }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select_rows(rows),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Dense CSV with a header row of feature names.
    pub fn write_dense_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.feature_names)?;
        for i in 0..self.n_samples() {
            wtr.write_record(self.values.row(i).iter().map(|v| format_value(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Coordinate-triplet CSV: a header row of feature names followed by
    /// `row,col,value` records for the nonzero entries.
    pub fn write_triplet_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        wtr.write_record(&self.feature_names)?;
        for j in 0..self.n_features() {
            for (i, &v) in self.column(j).iter().enumerate() {
                if v != 0.0 {
                    wtr.write_record([i.to_string(), j.to_string(), format_value(v)])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_dense_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        let mut n = 0;
        for rec in rdr.records() {
            let rec = rec?;
            for field in rec.iter() {
                data.push(parse_value(field)?);
            }
            n += 1;
        }
        let values = DMatrix::from_row_slice(n, names.len(), &data);
        FeatureMatrix::new(values, names)
    }
}

pub(crate) fn format_value(v: f64) -> String {
    // Shortest representation that round-trips.
    format!("{v:?}")
}

pub(crate) fn parse_value(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("not a number: {s:?}")))
}

/// Ground truth carried by synthetic datasets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub treatment_index: Option<usize>,
    #[serde(default)]
    pub causal_indices: Vec<usize>,
    #[serde(default)]
    pub irrelevant_indices: Vec<usize>,
    /// Treated sample index to its control twin.
    #[serde(default)]
    pub twin_map: Vec<(usize, usize)>,
    /// Observed latent representation, when the generator exposes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<DMatrix<f64>>,
}

/// Features plus binary outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<u8>,
    /// Raw term counts aligned with `features`, for reducers that need counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<FeatureMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<GroundTruth>,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != features.n_samples() {
            return Err(Error::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                features.n_samples()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        Ok(LabeledDataset { features, labels, counts: None, meta: None })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }

    /// Restrict to a subset of samples, keeping counts aligned. Ground truth
    /// is dropped since sample indices change.
    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            counts: self.counts.as_ref().map(|c| c.select_rows(rows)),
            meta: None,
        }
    }

    /// Restrict to a subset of feature columns.
    pub fn with_features(&self, cols: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_columns(cols),
            labels: self.labels.clone(),
            counts: self.counts.as_ref().map(|c| c.select_columns(cols)),
            meta: None,
        }
    }

    /// Dense CSV: feature columns followed by a `label` column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = self.features.feature_names.clone();
        header.push("label".into());
        wtr.write_record(&header)?;
        for i in 0..self.n_samples() {
            let mut rec: Vec<String> =
                self.features.values.row(i).iter().map(|v| format_value(*v)).collect();
            rec.push(self.labels[i].to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read the format written by [`LabeledDataset::write_csv`].
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.last().map(String::as_str) != Some("label") {
            return Err(Error::InvalidInput("last CSV column must be `label`".into()));
        }
        let d = header.len() - 1;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(Error::Dimension(format!("row with {} fields, expected {}", rec.len(), d + 1)));
            }
            for field in rec.iter().take(d) {
                data.push(parse_value(field)?);
            }
            labels.push(match rec[d].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::InvalidInput(format!("label {other:?} is not 0 or 1"))),
            });
        }
        let values = DMatrix::from_row_slice(labels.len(), d, &data);
        let features = FeatureMatrix::new(values, header[..d].to_vec())?;
        LabeledDataset::new(features, labels)
    }
}

/// One labeled document from a JSON-lines corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub text: String,
    pub label: u8,
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)?;
        if doc.label > 1 {
            return Err(Error::InvalidInput(format!("line {}: label must be 0 or 1", lineno + 1)));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl<W: Write>(mut w: W, docs: &[Document]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn term_counts<S: AsRef<str>>(docs: &[Vec<S>], vocab: &Vocabulary) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(docs.len(), vocab.len());
    for (i, doc) in docs.iter().enumerate() {
        for t in doc {
            if let Some(j) = vocab.get(t.as_ref()) {
                m[(i, j)] += 1.0;
            }
        }
    }
    m
}

/// Raw term-count matrix over `vocab`.
pub fn count_matrix<S: AsRef<str>>(docs: &[Vec<S>], vocab: &Vocabulary) -> FeatureMatrix {
    FeatureMatrix { values: term_counts(docs, vocab), feature_names: vocab.terms.clone() }
}

/// TF*IDF matrix: raw count times `ln((1 + N) / (1 + df)) + 1`, with `df`
/// counted over `docs`.
pub fn tfidf_matrix<S: AsRef<str>>(docs: &[Vec<S>], vocab: &Vocabulary) -> FeatureMatrix {
    let mut m = term_counts(docs, vocab);
    let n = docs.len() as f64;
    for j in 0..vocab.len() {
        let df = m.column(j).iter().filter(|&&v| v > 0.0).count() as f64;
        let idf = ((1.0 + n) / (1.0 + df)).ln() + 1.0;
        m.column_mut(j).iter_mut().for_each(|v| *v *= idf);
    }
    FeatureMatrix { values: m, feature_names: vocab.terms.clone() }
}

/// Tokenize a labeled corpus, filter its vocabulary and build a dataset with
/// TF*IDF features and the aligned raw counts.
pub fn build_text_dataset(docs: &[Document], min_doc_freq: usize) -> Result<LabeledDataset> {
    let tokens: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text)).collect();
    let vocab = build_vocabulary(&tokens, min_doc_freq)?;
    let features = tfidf_matrix(&tokens, &vocab);
    let counts = count_matrix(&tokens, &vocab);
    let mut ds = LabeledDataset::new(features, docs.iter().map(|d| d.label).collect())?;
    ds.counts = Some(counts);
    Ok(ds)
}

/// How a real-valued column is turned into a binary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeRule {
    /// Treated iff the value is nonzero (strictly positive).
    Nonzero,
    /// Treated iff the value exceeds the column mean.
    AboveMean,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Treatment {
    pub values: Vec<u8>,
    /// Set when the output is single-valued.
    pub degenerate: bool,
}

pub fn binarize_treatment(column: &[f64], rule: BinarizeRule) -> Result<Treatment> {
    if column.is_empty() {
        return Err(Error::InvalidInput("empty treatment column".into()));
    }
    let values: Vec<u8> = match rule {
        BinarizeRule::Nonzero => column.iter().map(|&v| u8::from(v > 0.0)).collect(),
        BinarizeRule::AboveMean => {
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            column.iter().map(|&v| u8::from(v > mean)).collect()
        }
    };
    let ones = values.iter().filter(|&&v| v == 1).count();
    let degenerate = ones == 0 || ones == values.len();
    Ok(Treatment { values, degenerate })
}

/// Read a JSON-lines corpus from disk.
pub fn read_jsonl_file(path: &Path) -> Result<Vec<Document>> {
    let f = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Great movie, great!"), ["great", "movie", "great"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A 10/10 film"), ["a", "film"]);
    }

    #[test]
    fn tokenize_is_idempotent() {
        let once = tokenize("It's a 5-star, can't-miss FILM!!");
        let twice = tokenize(&once.join(" "));
        assert_eq!(once, twice);
    }

    #[test]
    fn vocabulary_filtering() {
        let docs = vec![vec!["a", "b"], vec!["a"]];
        let v = build_vocabulary(&docs, 2).unwrap();
        assert_eq!(v.terms, ["a"]);
        assert_eq!(v.doc_freq, [2]);
        let v = build_vocabulary(&docs, 1).unwrap();
        assert_eq!(v.terms, ["a", "b"]);
        let empty: Vec<Vec<&str>> = vec![];
        assert!(matches!(build_vocabulary(&empty, 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn vocabulary_counts_documents_not_tokens() {
        let docs = vec![vec!["a", "a", "a"], vec!["b"]];
        let v = build_vocabulary(&docs, 2).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn tfidf_absent_terms_are_zero() {
        let docs = vec![vec!["a", "b"], vec!["a"]];
        let v = build_vocabulary(&docs, 1).unwrap();
        let m = tfidf_matrix(&docs, &v);
        assert_eq!(m.values[(1, 1)], 0.0);
        assert!(m.values[(0, 1)] > 0.0);
        // ubiquitous term keeps idf 1 under smoothing
        assert!((m.values[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tfidf_ratio_follows_counts() {
        let docs = vec![vec!["a", "a", "b"]];
        let v = build_vocabulary(&docs, 1).unwrap();
        let m = tfidf_matrix(&docs, &v);
        assert!((m.values[(0, 0)] / m.values[(0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tfidf_sparsity_matches_presence() {
        let docs: Vec<Vec<String>> = ["the cat sat", "the dog", "a cat and a dog", "nothing here"]
            .iter()
            .map(|s| tokenize(s))
            .collect();
        let v = build_vocabulary(&docs, 1).unwrap();
        let m = tfidf_matrix(&docs, &v);
        for (i, doc) in docs.iter().enumerate() {
            for (j, term) in v.terms.iter().enumerate() {
                assert_eq!(m.values[(i, j)] > 0.0, doc.contains(term));
            }
        }
    }

    #[test]
    fn binarize_examples() {
        let t = binarize_treatment(&[0.0, 0.3, 0.0], BinarizeRule::Nonzero).unwrap();
        assert_eq!(t.values, [0, 1, 0]);
        assert!(!t.degenerate);
        let t = binarize_treatment(&[1.0, 2.0, 3.0], BinarizeRule::AboveMean).unwrap();
        assert_eq!(t.values, [0, 0, 1]);
        let t = binarize_treatment(&[0.0, 0.0, 0.0], BinarizeRule::Nonzero).unwrap();
        assert_eq!(t.values, [0, 0, 0]);
        assert!(t.degenerate);
        let t = binarize_treatment(&[2.0, 2.0], BinarizeRule::AboveMean).unwrap();
        assert!(t.degenerate);
    }

    #[test]
    fn jsonl_round_trip_and_rejects_bad_labels() {
        let docs = vec![
            Document { text: "good".into(), label: 1 },
            Document { text: "bad".into(), label: 0 },
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &docs).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), docs);
        assert!(read_jsonl(&br#"{"text":"x","label":2}"#[..]).is_err());
        assert!(read_jsonl(&br#"{"text":"x","label":1,"extra":3}"#[..]).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let fm = FeatureMatrix::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 2.25]),
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let ds = LabeledDataset::new(fm, vec![1, 0]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = LabeledDataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn triplet_csv_lists_nonzeros() {
        let fm = FeatureMatrix::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.5, 0.0, 0.0]),
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        fm.write_triplet_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y\n0,1,1.5\n");
    }
}
