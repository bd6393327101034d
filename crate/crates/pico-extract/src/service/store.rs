//! Durable document store and correction log, all inside one directory:
//!
//! ```text
//! documents/<id>.json   analysis as computed on upload (never rewritten)
//! views/<id>.json       current view: the base with every correction applied
//! corrections.jsonl     append-only correction log, one record per line
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use super::view::{apply, render, AnalysisResult, Correction, CorrectionRecord};
use crate::error::{read_to_string, write_file, Error, Result};

const LOG: &str = "corrections.jsonl";

#[derive(Debug)]
pub enum CorrectionError {
    UnknownDocument,
    Invalid(String),
    Storage(Error),
}

struct Writer {
    next_doc: u64,
    next_correction: u64,
}

pub struct Store {
    dir: PathBuf,
    views: RwLock<BTreeMap<String, Arc<AnalysisResult>>>,
    writer: tokio::sync::Mutex<Writer>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a temporary file and a rename, so readers never see a torn file.
fn replace_file(path: &Path, data: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, data)?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn doc_number(id: &str) -> Option<u64> {
    id.strip_prefix("doc-")?.parse().ok()
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

pub fn read_log(dir: &Path) -> Result<Vec<CorrectionRecord>> {
    let path = dir.join(LOG);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = read_to_string(&path)?;
    let mut out: Vec<CorrectionRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorrectionRecord = serde_json::from_str(line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if out.last().is_some_and(|prev| prev.id >= rec.id) {
            return Err(Error::Format(format!("{}:{}: correction ids must increase", path.display(), i + 1)));
        }
        out.push(rec);
    }
    Ok(out)
}

fn load_views(dir: &Path, sub: &str) -> Result<BTreeMap<String, AnalysisResult>> {
    let mut out = BTreeMap::new();
    for p in json_files(&dir.join(sub))? {
        let view: AnalysisResult = serde_json::from_str(&read_to_string(&p)?)?;
        out.insert(view.doc_id.clone(), view);
    }
    Ok(out)
}

/// Rebuilds every view from the base analyses and the correction log.
pub fn replay(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut views = load_views(dir, "documents")?;
    for rec in read_log(dir)? {
        if !rec.applied {
            continue;
        }
        let view = views
            .get_mut(&rec.doc_id)
            .ok_or_else(|| Error::Format(format!("correction {} names unknown document {}", rec.id, rec.doc_id)))?;
        apply(view, &rec.correction).map_err(|e| Error::Format(format!("correction {}: {e}", rec.id)))?;
    }
    Ok(views.into_iter().map(|(k, v)| (k, render(&v))).collect())
}

/// Current view files exactly as stored.
pub fn stored_views(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in json_files(&dir.join("views"))? {
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        out.insert(id, read_to_string(&p)?);
    }
    Ok(out)
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self> {
        for sub in ["documents", "views"] {
            fs::create_dir_all(dir.join(sub)).map_err(io(dir))?;
        }
        let views = load_views(dir, "views")?;
        let next_doc = views.keys().filter_map(|k| doc_number(k)).max().map_or(1, |n| n + 1);
        let next_correction = read_log(dir)?.last().map_or(1, |r| r.id + 1);
        Ok(Store {
            dir: dir.to_path_buf(),
            views: RwLock::new(views.into_iter().map(|(k, v)| (k, Arc::new(v))).collect()),
            writer: tokio::sync::Mutex::new(Writer { next_doc, next_correction }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, id: &str) -> Option<Arc<AnalysisResult>> {
        self.views.read().expect("view lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.views.read().expect("view lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn views(&self) -> Vec<Arc<AnalysisResult>> {
        self.views.read().expect("view lock").values().cloned().collect()
    }

    /// Ids are never reused, even when the analysis for one fails.
    pub async fn reserve_doc_id(&self) -> String {
        let mut w = self.writer.lock().await;
        w.next_doc += 1;
        format!("doc-{}", w.next_doc - 1)
    }

    pub async fn insert(&self, view: AnalysisResult) -> Result<()> {
        let _w = self.writer.lock().await;
        let text = render(&view);
        replace_file(&self.dir.join("documents").join(format!("{}.json", view.doc_id)), &text)?;
        replace_file(&self.dir.join("views").join(format!("{}.json", view.doc_id)), &text)?;
        self.views.write().expect("view lock").insert(view.doc_id.clone(), Arc::new(view));
        Ok(())
    }

    /// Validates the correction against the current view, appends it to the
    /// log and stores the updated view.
    pub async fn correct(&self, doc_id: &str, correction: Correction) -> Result<CorrectionRecord, CorrectionError> {
        let mut w = self.writer.lock().await;
        let current = self.get(doc_id).ok_or(CorrectionError::UnknownDocument)?;
        let mut view = (*current).clone();
        apply(&mut view, &correction).map_err(CorrectionError::Invalid)?;
        let record = CorrectionRecord {
            id: w.next_correction,
            doc_id: doc_id.to_string(),
            correction,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            applied: true,
        };
        let persist = || -> Result<()> {
            let path = self.dir.join(LOG);
            let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io(&path))?;
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(io(&path))?;
            f.sync_data().map_err(io(&path))?;
            replace_file(&self.dir.join("views").join(format!("{doc_id}.json")), &render(&view))
        };
        persist().map_err(CorrectionError::Storage)?;
        w.next_correction += 1;
        self.views.write().expect("view lock").insert(doc_id.to_string(), Arc::new(view));
        Ok(record)
    }

    pub fn corrections(&self) -> Result<Vec<CorrectionRecord>> {
        read_log(&self.dir)
    }

    /// Applied corrections that feed `slot`.
    pub fn count_for(&self, slot: &str) -> Result<usize> {
        Ok(self.corrections()?.iter().filter(|r| r.applied && r.correction.slot() == slot).count())
    }
}
