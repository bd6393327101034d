//! Turning reviewer corrections into training items, and the retrain job
//! bookkeeping.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use pico_core::corpus::{BioCorpus, BioSentence, PicoLabel};
use pico_core::dner::{encode_tags, train_dner, DnerModel};
use pico_core::pico::{train_pico, PicoDataset, PicoItem, PicoModel};

use super::view::{AnalysisResult, Correction, CorrectionRecord};

/// One item per relabelled sentence, carrying its latest label.
pub fn pico_items(records: &[CorrectionRecord], views: &BTreeMap<String, AnalysisResult>) -> Vec<PicoItem> {
    let mut latest: BTreeMap<(&str, usize), PicoLabel> = BTreeMap::new();
    for r in records.iter().filter(|r| r.applied) {
        if let Correction::RelabelSentence { sentence_index, label } = r.correction {
            latest.insert((r.doc_id.as_str(), sentence_index), label);
        }
    }
    latest
        .into_iter()
        .filter_map(|((doc, i), label)| {
            let s = views.get(doc)?.sentences.get(i)?;
            Some(PicoItem {
                tokens: s.tokens.clone(),
                label,
            })
        })
        .collect()
}

/// Every sentence of a document with entity corrections becomes a tagged
/// sentence: its current P and O entities are the `B I*` spans, everything
/// else is `O`.
pub fn dner_sentences(records: &[CorrectionRecord], views: &BTreeMap<String, AnalysisResult>) -> Vec<BioSentence> {
    let docs: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.applied && r.correction.slot() == "dner")
        .map(|r| r.doc_id.as_str())
        .collect();
    let mut out = Vec::new();
    for doc in docs {
        let Some(view) = views.get(doc) else { continue };
        for s in &view.sentences {
            let spans: Vec<(usize, usize)> = view
                .population
                .iter()
                .chain(&view.outcome)
                .filter(|e| e.sentence_index == s.index)
                .map(|e| (e.start, e.end))
                .collect();
            if let Ok(tags) = encode_tags(s.tokens.len(), &spans) {
                out.push(BioSentence {
                    tokens: s.tokens.clone(),
                    tags,
                });
            }
        }
    }
    out
}

/// Continues training the active PICO model on base plus correction items.
pub fn retrain_pico(current: &PicoModel, base: Option<&PicoDataset>, extra: Vec<PicoItem>, epochs: usize) -> pico_core::Result<PicoModel> {
    let mut items = base.map(|b| b.items.clone()).unwrap_or_default();
    items.extend(extra);
    let train = PicoDataset::new(items)?;
    let mut model = current.clone();
    model.config.epochs = epochs;
    let empty = PicoDataset { items: Vec::new() };
    Ok(train_pico(model, &train, &empty)?.model)
}

pub fn retrain_dner(current: &DnerModel, base: Option<&BioCorpus>, extra: Vec<BioSentence>, epochs: usize) -> pico_core::Result<DnerModel> {
    let mut sentences = base.map(|b| b.sentences.clone()).unwrap_or_default();
    sentences.extend(extra);
    let train = BioCorpus { sentences };
    let mut model = current.clone();
    model.config.epochs = epochs;
    model.config.patience = None;
    model.config.stop_at_f1 = None;
    let empty = BioCorpus { sentences: Vec::new() };
    Ok(train_dner(model, &train, &empty)?.model)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobState {
    Running,
    Succeeded { version: String },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Job {
    pub job_id: String,
    pub slot: String,
    pub corrections: usize,
    #[serde(flatten)]
    pub state: JobState,
}
