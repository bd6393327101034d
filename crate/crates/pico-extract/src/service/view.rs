//! Stored analysis views and the corrections that edit them. Everything here
//! is pure so the correction log can be replayed.

use serde::{Deserialize, Serialize};

use pico_core::corpus::{Document, PicoLabel};
use pico_core::dner::DnerModel;
use pico_core::mapping::{map_document, EntityClass, MappedEntity, MappingConfig, RuleSet, RuleVote};
use pico_core::pico::{classify_document, PicoModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceView {
    pub index: usize,
    pub text: String,
    pub tokens: Vec<String>,
    pub pico_label: PicoLabel,
    pub pico_probs: [f64; 4],
    /// Label set by a reviewer rather than the classifier.
    pub corrected: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntitySource {
    Model,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub id: u64,
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub s1: f64,
    pub s2: f64,
    pub rule_vote: RuleVote,
    pub rule_id: Option<String>,
    pub score_p: f64,
    pub score_o: f64,
    pub label: EntityClass,
    pub source: EntitySource,
    /// The host sentence was relabelled after these scores were computed.
    pub stale: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub pico: String,
    pub dner: String,
    pub graph: Option<String>,
    pub rules: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub sentences: Vec<SentenceView>,
    pub population: Vec<EntityView>,
    pub outcome: Vec<EntityView>,
    pub versions: Versions,
    pub lambda: f64,
    pub fallback_used: bool,
    pub next_entity_id: u64,
}

/// Serialized form stored on disk and compared during replay.
pub fn render(view: &AnalysisResult) -> String {
    let mut s = serde_json::to_string_pretty(view).expect("views serialize");
    s.push('\n');
    s
}

fn entity_view(id: u64, m: MappedEntity) -> EntityView {
    EntityView {
        id,
        sentence_index: m.span.sentence_index,
        start: m.span.start,
        end: m.span.end,
        surface: m.span.surface,
        s1: m.s1,
        s2: m.s2,
        rule_vote: m.rule_vote,
        rule_id: m.rule_id,
        score_p: m.score_p,
        score_o: m.score_o,
        label: m.final_label,
        source: EntitySource::Model,
        stale: false,
    }
}

pub fn analyze(
    doc_id: &str,
    title: &str,
    abstract_text: &str,
    pico: &PicoModel,
    dner: &DnerModel,
    rules: &RuleSet,
    mapping: &MappingConfig,
    versions: Versions,
) -> pico_core::Result<AnalysisResult> {
    let doc = classify_document(pico, &Document::new(doc_id, title, abstract_text))?;
    let mapped = map_document(&doc, dner, rules, mapping)?;
    let mut next = 1;
    let mut ids = |list: Vec<MappedEntity>| -> Vec<EntityView> {
        list.into_iter()
            .map(|m| {
                next += 1;
                entity_view(next - 1, m)
            })
            .collect()
    };
    let population = ids(mapped.population);
    let outcome = ids(mapped.outcome);
    let sentences = doc
        .sentences
        .into_iter()
        .map(|s| SentenceView {
            index: s.index,
            text: s.text,
            tokens: s.tokens,
            pico_label: s.pico_label.expect("classified"),
            pico_probs: s.pico_probs.expect("classified"),
            corrected: false,
        })
        .collect();
    Ok(AnalysisResult {
        doc_id: doc.id,
        title: doc.title,
        abstract_text: doc.abstract_text,
        sentences,
        population,
        outcome,
        versions,
        lambda: mapping.lambda,
        fallback_used: mapped.fallback_used,
        next_entity_id: next,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Correction {
    RelabelSentence { sentence_index: usize, label: PicoLabel },
    DeleteEntity { entity_id: u64 },
    RelabelEntity { entity_id: u64, label: EntityClass },
    AddEntity { sentence_index: usize, start: usize, end: usize, label: EntityClass },
}

impl Correction {
    /// Model slot whose training data this correction feeds.
    pub fn slot(&self) -> &'static str {
        match self {
            Correction::RelabelSentence { .. } => "pico",
            _ => "dner",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub id: u64,
    pub doc_id: String,
    pub correction: Correction,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub applied: bool,
}

fn sort_entities(list: &mut [EntityView]) {
    list.sort_by_key(|e| (e.sentence_index, e.start, e.end, e.id));
}

fn take_entity(view: &mut AnalysisResult, id: u64) -> Option<EntityView> {
    for list in [&mut view.population, &mut view.outcome] {
        if let Some(pos) = list.iter().position(|e| e.id == id) {
            return Some(list.remove(pos));
        }
    }
    None
}

fn push_entity(view: &mut AnalysisResult, e: EntityView) {
    let list = match e.label {
        EntityClass::P => &mut view.population,
        EntityClass::O => &mut view.outcome,
    };
    list.push(e);
    sort_entities(list);
}

/// Applies one correction in place. On error the view is left unchanged and
/// the message explains the invalid reference.
pub fn apply(view: &mut AnalysisResult, c: &Correction) -> Result<(), String> {
    match *c {
        Correction::RelabelSentence { sentence_index, label } => {
            let s = view
                .sentences
                .get_mut(sentence_index)
                .ok_or_else(|| format!("no sentence {sentence_index}"))?;
            s.pico_label = label;
            s.corrected = true;
            for e in view.population.iter_mut().chain(view.outcome.iter_mut()) {
                if e.sentence_index == sentence_index {
                    e.stale = true;
                }
            }
        }
        Correction::DeleteEntity { entity_id } => {
            take_entity(view, entity_id).ok_or_else(|| format!("no entity {entity_id}"))?;
        }
        Correction::RelabelEntity { entity_id, label } => {
            let mut e = take_entity(view, entity_id).ok_or_else(|| format!("no entity {entity_id}"))?;
            e.label = label;
            e.source = EntitySource::Manual;
            push_entity(view, e);
        }
        Correction::AddEntity {
            sentence_index,
            start,
            end,
            label,
        } => {
            let s = view
                .sentences
                .get(sentence_index)
                .ok_or_else(|| format!("no sentence {sentence_index}"))?;
            if start >= end || end > s.tokens.len() {
                return Err(format!("span [{start}, {end}) is outside sentence {sentence_index} ({} tokens)", s.tokens.len()));
            }
            let taken = view
                .population
                .iter()
                .chain(&view.outcome)
                .any(|e| e.sentence_index == sentence_index && e.start < end && start < e.end);
            if taken {
                return Err(format!("span [{start}, {end}) overlaps an existing entity"));
            }
            let (s1, s2) = (s.pico_probs[PicoLabel::P.index()], s.pico_probs[PicoLabel::O.index()]);
            let e = EntityView {
                id: view.next_entity_id,
                sentence_index,
                start,
                end,
                surface: s.tokens[start..end].join(" "),
                s1,
                s2,
                rule_vote: RuleVote::None,
                rule_id: None,
                score_p: view.lambda * s1,
                score_o: view.lambda * s2,
                label,
                source: EntitySource::Manual,
                stale: false,
            };
            view.next_entity_id += 1;
            push_entity(view, e);
        }
    }
    Ok(())
}
