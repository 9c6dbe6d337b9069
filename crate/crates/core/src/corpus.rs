//! Segment-level corpus ingestion and document assembly.
//!
//! Parallel corpora such as the WMT general test sets ship as sentence or
//! paragraph segments with document metadata. [`assemble_documents`] merges
//! contiguous segments of one document into blobs of at most `cap`
//! whitespace tokens, which is the unit every later stage translates and
//! scores.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joiner placed between merged segments (and their references).
pub const DEFAULT_JOINER: &str = "\n";

/// Default token cap for assembled documents.
pub const DEFAULT_CAP: usize = 250;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate segment index {index} in document {doc_id}")]
    DuplicateIndex { doc_id: String, index: usize },
    #[error("document {doc_id} is missing segment index {missing}")]
    IndexGap { doc_id: String, missing: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Literary,
    News,
    Social,
    Speech,
    Other(String),
}

impl Domain {
    pub fn as_str(&self) -> &str {
        match self {
            Domain::Literary => "literary",
            Domain::News => "news",
            Domain::Social => "social",
            Domain::Speech => "speech",
            Domain::Other(s) => s,
        }
    }
}

impl From<&str> for Domain {
    fn from(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "literary" => Domain::Literary,
            "news" => Domain::News,
            "social" => Domain::Social,
            "speech" => Domain::Speech,
            _ => Domain::Other(s.trim().to_string()),
        }
    }
}

impl FromStr for Domain {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Domain::from(s))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Domain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Domain::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    pub domain: Domain,
    pub index: usize,
    #[serde(rename = "source")]
    pub source_text: String,
    #[serde(rename = "reference", default, skip_serializing_if = "Option::is_none")]
    pub reference_text: Option<String>,
    pub source_lang: String,
    pub target_lang: String,
}

/// Inclusive range of segment indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub start: usize,
    pub end: usize,
}

impl SegmentSpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledDocument {
    /// Unique blob key: `{source_lang}-{target_lang}/{doc_id}#{start}-{end}`.
    pub id: String,
    pub doc_id: String,
    pub domain: Domain,
    pub source_lang: String,
    pub target_lang: String,
    pub segment_span: SegmentSpan,
    pub source_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_text: Option<String>,
    pub token_count: usize,
    /// Source text of each merged segment, in order. Segment-level baselines
    /// translate these individually.
    pub segments: Vec<String>,
}

impl AssembledDocument {
    pub fn lang_pair(&self) -> String {
        format!("{}-{}", self.source_lang, self.target_lang)
    }
}

pub fn blob_id(source_lang: &str, target_lang: &str, doc_id: &str, span: SegmentSpan) -> String {
    format!(
        "{source_lang}-{target_lang}/{doc_id}#{}-{}",
        span.start, span.end
    )
}

/// Number of maximal non-whitespace runs in `text`.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "tsv" | "tab" => Some(CorpusFormat::Tsv),
            "jsonl" | "ndjson" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format '{other}' (expected tsv or jsonl)")),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads segments from `path`, ordered by language pair, `doc_id` and index.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Segment>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_corpus(BufReader::new(file), format).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_err(path, source),
        other => other,
    })
}

/// Reader-based variant of [`load_corpus`].
pub fn parse_corpus<R: BufRead>(reader: R, format: CorpusFormat) -> Result<Vec<Segment>, CorpusError> {
    let rows = match format {
        CorpusFormat::Tsv => parse_tsv_inner(reader),
        CorpusFormat::Jsonl => parse_jsonl(reader),
    }
    .map_err(|e| match e {
        RowError::Io(source) => CorpusError::Io {
            path: "<reader>".into(),
            source,
        },
        RowError::Corpus(c) => c,
    })?;
    finish_segments(rows)
}

#[derive(Debug)]
enum RowError {
    Io(std::io::Error),
    Corpus(CorpusError),
}

impl From<CorpusError> for RowError {
    fn from(e: CorpusError) -> Self {
        RowError::Corpus(e)
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        line,
        reason: reason.into(),
    }
}

const REQUIRED_COLUMNS: [&str; 6] = [
    "doc_id",
    "domain",
    "index",
    "source",
    "source_lang",
    "target_lang",
];

fn parse_tsv_inner<R: BufRead>(reader: R) -> Result<Vec<(usize, Segment)>, RowError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(RowError::Io)?,
        None => return Err(parse_err(1, "missing header row").into()),
    };
    let columns: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let find = |name: &str| columns.iter().position(|c| c.trim() == name);
    let mut idx = BTreeMap::new();
    for name in REQUIRED_COLUMNS {
        match find(name) {
            Some(i) => {
                idx.insert(name, i);
            }
            None => return Err(parse_err(1, format!("header is missing column '{name}'")).into()),
        }
    }
    let reference_col = find("reference");

    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(RowError::Io)?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |name: &str| -> Result<&str, CorpusError> {
            let col = idx[name];
            fields
                .get(col)
                .copied()
                .ok_or_else(|| parse_err(line_no, format!("missing column '{name}'")))
        };
        let index_raw = get("index")?;
        let index = index_raw.trim().parse::<usize>().map_err(|_| {
            parse_err(line_no, format!("index '{index_raw}' is not a nonnegative integer"))
        })?;
        let reference_text = reference_col
            .and_then(|c| fields.get(c))
            .filter(|r| !r.is_empty())
            .map(|r| r.to_string());
        let seg = Segment {
            doc_id: get("doc_id")?.to_string(),
            domain: Domain::from(get("domain")?),
            index,
            source_text: get("source")?.to_string(),
            reference_text,
            source_lang: get("source_lang")?.trim().to_string(),
            target_lang: get("target_lang")?.trim().to_string(),
        };
        validate_row(line_no, &seg)?;
        out.push((line_no, seg));
    }
    Ok(out)
}

fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<(usize, Segment)>, RowError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(RowError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let seg: Segment =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        validate_row(line_no, &seg)?;
        out.push((line_no, seg));
    }
    Ok(out)
}

fn validate_row(line: usize, seg: &Segment) -> Result<(), CorpusError> {
    if seg.doc_id.trim().is_empty() {
        return Err(parse_err(line, "empty doc_id"));
    }
    if seg.source_text.trim().is_empty() {
        return Err(parse_err(line, "empty source text"));
    }
    if seg.source_lang.is_empty() || seg.target_lang.is_empty() {
        return Err(parse_err(line, "empty language tag"));
    }
    Ok(())
}

/// A document is identified by its language pair and id; the same source
/// document may appear under several target languages.
fn doc_key(seg: &Segment) -> (&str, &str, &str) {
    (&seg.source_lang, &seg.target_lang, &seg.doc_id)
}

fn finish_segments(rows: Vec<(usize, Segment)>) -> Result<Vec<Segment>, CorpusError> {
    let mut seen = HashSet::new();
    for (_, seg) in &rows {
        if !seen.insert((seg.source_lang.clone(), seg.target_lang.clone(), seg.doc_id.clone(), seg.index)) {
            return Err(CorpusError::DuplicateIndex {
                doc_id: seg.doc_id.clone(),
                index: seg.index,
            });
        }
    }
    let mut segments: Vec<Segment> = rows.into_iter().map(|(_, s)| s).collect();
    segments.sort_by(|a, b| doc_key(a).cmp(&doc_key(b)).then(a.index.cmp(&b.index)));
    let mut expected = 0;
    let mut current = None;
    for seg in &segments {
        if current != Some(doc_key(seg)) {
            current = Some(doc_key(seg));
            expected = 0;
        }
        if seg.index != expected {
            return Err(CorpusError::IndexGap {
                doc_id: seg.doc_id.clone(),
                missing: expected,
            });
        }
        expected += 1;
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembleOptions {
    pub cap: usize,
    pub joiner: String,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            cap: DEFAULT_CAP,
            joiner: DEFAULT_JOINER.to_string(),
        }
    }
}

impl AssembleOptions {
    pub fn with_cap(cap: usize) -> Self {
        AssembleOptions {
            cap,
            ..Default::default()
        }
    }
}

/// Greedy left-to-right merge of each document's segments into blobs of at
/// most `cap` whitespace tokens, joined with the default newline joiner.
pub fn assemble_documents(segments: &[Segment], cap: usize) -> Vec<AssembledDocument> {
    assemble_documents_with(segments, &AssembleOptions::with_cap(cap))
}

/// Like [`assemble_documents`] with an explicit joiner.
///
/// Segments are grouped by consecutive language pair and `doc_id`; input is expected in the
/// order produced by [`load_corpus`]. A segment that alone exceeds the cap
/// becomes its own blob.
pub fn assemble_documents_with(
    segments: &[Segment],
    opts: &AssembleOptions,
) -> Vec<AssembledDocument> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < segments.len() {
        let key = doc_key(&segments[start]);
        let mut end = start;
        while end < segments.len() && doc_key(&segments[end]) == key {
            end += 1;
        }
        assemble_one(&segments[start..end], opts, &mut out);
        start = end;
    }
    out
}

fn assemble_one(doc: &[Segment], opts: &AssembleOptions, out: &mut Vec<AssembledDocument>) {
    let mut blob: Vec<&Segment> = Vec::new();
    let mut blob_text = String::new();
    for seg in doc {
        if blob.is_empty() {
            blob.push(seg);
            blob_text = seg.source_text.clone();
            continue;
        }
        let candidate = format!("{blob_text}{}{}", opts.joiner, seg.source_text);
        if whitespace_token_count(&candidate) <= opts.cap {
            blob.push(seg);
            blob_text = candidate;
        } else {
            out.push(build_blob(&blob, blob_text, &opts.joiner));
            blob = vec![seg];
            blob_text = seg.source_text.clone();
        }
    }
    if !blob.is_empty() {
        out.push(build_blob(&blob, blob_text, &opts.joiner));
    }
}

fn build_blob(blob: &[&Segment], source_text: String, joiner: &str) -> AssembledDocument {
    let first = blob[0];
    let span = SegmentSpan {
        start: first.index,
        end: blob[blob.len() - 1].index,
    };
    let reference_text = if blob.iter().all(|s| s.reference_text.is_some()) {
        Some(
            blob.iter()
                .map(|s| s.reference_text.as_deref().unwrap_or_default())
                .collect::<Vec<_>>()
                .join(joiner),
        )
    } else {
        None
    };
    AssembledDocument {
        id: blob_id(&first.source_lang, &first.target_lang, &first.doc_id, span),
        doc_id: first.doc_id.clone(),
        domain: first.domain.clone(),
        source_lang: first.source_lang.clone(),
        target_lang: first.target_lang.clone(),
        segment_span: span,
        token_count: whitespace_token_count(&source_text),
        source_text,
        reference_text,
        segments: blob.iter().map(|s| s.source_text.clone()).collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub documents: usize,
    pub average_length: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_domain: BTreeMap<String, DomainStats>,
    pub total_documents: usize,
    pub average_length: f64,
}

pub fn corpus_stats(docs: &[AssembledDocument]) -> CorpusStats {
    let mut sums: BTreeMap<&Domain, (usize, usize)> = BTreeMap::new();
    for d in docs {
        let e = sums.entry(&d.domain).or_default();
        e.0 += 1;
        e.1 += d.token_count;
    }
    let per_domain = sums
        .into_iter()
        .map(|(domain, (n, tokens))| {
            (
                domain.to_string(),
                DomainStats {
                    documents: n,
                    average_length: tokens as f64 / n as f64,
                },
            )
        })
        .collect();
    let total_tokens: usize = docs.iter().map(|d| d.token_count).sum();
    CorpusStats {
        per_domain,
        total_documents: docs.len(),
        average_length: if docs.is_empty() {
            0.0
        } else {
            total_tokens as f64 / docs.len() as f64
        },
    }
}

pub fn write_assembled_jsonl(path: &Path, docs: &[AssembledDocument]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        let line = serde_json::to_string(d).expect("assembled document serializes");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_assembled_jsonl(path: &Path) -> Result<Vec<AssembledDocument>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?);
    }
    Ok(out)
}
