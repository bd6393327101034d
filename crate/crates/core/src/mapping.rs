//! Assigns each tagged disease entity to P or O by mixing the host sentence's
//! class probabilities with evidence from textual rules:
//! `score = λ·f(d) + (1−λ)·g(d)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Document, PicoLabel};
use crate::dner::{extract_from_document, DnerModel, EntitySpan};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityClass {
    P,
    O,
}

impl EntityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::P => "P",
            EntityClass::O => "O",
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityClass {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        match s {
            "P" => Ok(EntityClass::P),
            "O" => Ok(EntityClass::O),
            other => Err(format!("unknown entity class `{other}` (expected P or O)")),
        }
    }
}

/// Lowercased with whitespace runs collapsed to one space.
pub fn normalize_surface(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rule evidence g(d).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleVote {
    P,
    O,
    #[default]
    None,
}

impl RuleVote {
    pub fn as_pair(self) -> (f64, f64) {
        match self {
            RuleVote::P => (1.0, 0.0),
            RuleVote::O => (0.0, 1.0),
            RuleVote::None => (0.0, 0.0),
        }
    }
}

impl From<EntityClass> for RuleVote {
    fn from(c: EntityClass) -> Self {
        match c {
            EntityClass::P => RuleVote::P,
            EntityClass::O => RuleVote::O,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleOrigin {
    Builtin,
    User,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Outcome,
    Population,
}

const CLAUSE_BREAKS: [&str; 6] = [",", ";", ":", ".", "!", "?"];

fn is_break(token: &str) -> bool {
    CLAUSE_BREAKS.contains(&token)
}

/// One literal alternative of a pattern: tokens before and after the marker.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Alternative {
    prefix: Vec<String>,
    suffix: Vec<String>,
}

impl Alternative {
    fn weight(&self) -> usize {
        self.prefix.len() + self.suffix.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RuleRepr {
    id: String,
    pattern: String,
    target: EntityClass,
    enabled: bool,
    origin: RuleOrigin,
}

/// Textual pattern with one capture marker, e.g. `risk of <outcome>` or
/// `predict(s|ion of) <outcome>`. Parenthesised groups list alternatives;
/// matching is token-level and case-insensitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleRepr", into = "RuleRepr")]
pub struct LinguisticRule {
    pub id: String,
    pub pattern: String,
    pub target: EntityClass,
    pub enabled: bool,
    pub origin: RuleOrigin,
    role: Role,
    alternatives: Vec<Alternative>,
}

impl TryFrom<RuleRepr> for LinguisticRule {
    type Error = Error;

    fn try_from(r: RuleRepr) -> Result<Self> {
        let mut rule = LinguisticRule::new(&r.id, &r.pattern, r.target, r.origin)?;
        rule.enabled = r.enabled;
        Ok(rule)
    }
}

impl From<LinguisticRule> for RuleRepr {
    fn from(r: LinguisticRule) -> Self {
        RuleRepr {
            id: r.id,
            pattern: r.pattern,
            target: r.target,
            enabled: r.enabled,
            origin: r.origin,
        }
    }
}

impl LinguisticRule {
    pub fn new(id: &str, pattern: &str, target: EntityClass, origin: RuleOrigin) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidPattern {
            pattern: pattern.to_string(),
            reason: reason.to_string(),
        };
        let markers = ["<outcome>", "<population>"];
        let found: Vec<(usize, &str)> = markers
            .iter()
            .flat_map(|m| pattern.match_indices(m).map(|(i, _)| (i, *m)).collect::<Vec<_>>())
            .collect();
        if found.len() != 1 {
            return Err(invalid("exactly one <outcome> or <population> marker required"));
        }
        let (at, marker) = found[0];
        let role = if marker == "<outcome>" {
            Role::Outcome
        } else {
            Role::Population
        };
        let before = expand(&pattern[..at]).map_err(|r| invalid(&r))?;
        let after = expand(&pattern[at + marker.len()..]).map_err(|r| invalid(&r))?;
        let mut alternatives = Vec::new();
        for b in &before {
            for a in &after {
                let alt = Alternative {
                    prefix: tokenize(&b.to_lowercase()),
                    suffix: tokenize(&a.to_lowercase()),
                };
                if alt.weight() == 0 {
                    return Err(invalid("pattern needs literal text around the marker"));
                }
                if alt.prefix.iter().chain(&alt.suffix).any(|t| is_break(t)) {
                    return Err(invalid("clause punctuation cannot appear in a pattern"));
                }
                if !alternatives.contains(&alt) {
                    alternatives.push(alt);
                }
            }
        }
        Ok(LinguisticRule {
            id: id.to_string(),
            pattern: pattern.to_string(),
            target,
            enabled: true,
            origin,
            role,
            alternatives,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Literal token count of the longest alternative whose capture window
    /// covers `[start, end)`.
    pub fn match_weight(&self, tokens: &[String], start: usize, end: usize) -> Option<usize> {
        if !self.enabled || start >= end || end > tokens.len() {
            return None;
        }
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        self.alternatives
            .iter()
            .filter(|alt| window_covers(alt, &lower, start, end))
            .map(Alternative::weight)
            .max()
    }
}

/// Expands `(a|b c)` groups into every literal combination.
fn expand(text: &str) -> core::result::Result<Vec<String>, String> {
    let mut out = vec![String::new()];
    let mut rest = text;
    while !rest.is_empty() {
        match rest.find(['(', ')', '|']) {
            None => {
                out.iter_mut().for_each(|s| s.push_str(rest));
                break;
            }
            Some(i) if &rest[i..i + 1] == "(" => {
                let lit = &rest[..i];
                let close = rest[i + 1..].find(')').ok_or("unbalanced parenthesis")? + i + 1;
                let inner = &rest[i + 1..close];
                if inner.contains('(') {
                    return Err("nested groups are not supported".into());
                }
                let options: Vec<&str> = inner.split('|').collect();
                let mut next = Vec::with_capacity(out.len() * options.len());
                for s in &out {
                    for o in &options {
                        next.push(format!("{s}{lit}{o}"));
                    }
                }
                out = next;
                rest = &rest[close + 1..];
            }
            Some(_) => return Err("`|` or `)` outside a group".into()),
        }
    }
    Ok(out)
}

fn occurrences(tokens: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > tokens.len() {
        return Vec::new();
    }
    (0..=tokens.len() - needle.len())
        .filter(|&i| tokens[i..i + needle.len()] == *needle)
        .collect()
}

fn window_covers(alt: &Alternative, tokens: &[String], start: usize, end: usize) -> bool {
    let clean = |a: usize, b: usize| !tokens[a..b].iter().any(|t| is_break(t));
    let suffix_after = |from: usize| occurrences(tokens, &alt.suffix).into_iter().find(|&r| r >= from);
    match (alt.prefix.is_empty(), alt.suffix.is_empty()) {
        (false, true) => occurrences(tokens, &alt.prefix).into_iter().any(|p| {
            let q = p + alt.prefix.len();
            q <= start && clean(q, end)
        }),
        (true, false) => suffix_after(end).is_some_and(|r| clean(start, r)),
        (false, false) => occurrences(tokens, &alt.prefix).into_iter().any(|p| {
            let q = p + alt.prefix.len();
            q <= start && suffix_after(q).is_some_and(|r| r >= end && clean(q, r))
        }),
        (true, true) => false,
    }
}

/// Ordered collection of rules with unique ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<LinguisticRule>,
}

pub const BUILTIN_RULES: [(&str, EntityClass, &str); 10] = [
    ("risk-of", EntityClass::O, "risk of <outcome>"),
    ("predicts", EntityClass::O, "predict(s|ion of|ed) <outcome>"),
    ("incidence-of", EntityClass::O, "incidence of <outcome>"),
    ("development-of", EntityClass::O, "(development|onset) of <outcome>"),
    ("mortality-from", EntityClass::O, "(mortality|death) from <outcome>"),
    ("progression-to", EntityClass::O, "progression to <outcome>"),
    ("patients-with", EntityClass::P, "patients with <population>"),
    ("people-with", EntityClass::P, "(adults|children|women|men|subjects|participants|individuals) with <population>"),
    ("diagnosed-with", EntityClass::P, "diagnosed with <population>"),
    ("x-patients", EntityClass::P, "<population> patients"),
];

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut set = RuleSet::new();
        for (id, target, pattern) in BUILTIN_RULES {
            let rule = LinguisticRule::new(id, pattern, target, RuleOrigin::Builtin).expect("builtin patterns are valid");
            set.rules.push(rule);
        }
        set
    }

    pub fn rules(&self) -> &[LinguisticRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LinguisticRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn add(&mut self, rule: LinguisticRule) -> Result<()> {
        if self.get(&rule.id).is_some() {
            return Err(Error::Config(format!("rule `{}` already exists", rule.id)));
        }
        self.rules.push(rule);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<LinguisticRule> {
        let i = self.rules.iter().position(|r| r.id == id)?;
        Some(self.rules.remove(i))
    }

    pub fn set_enabled(&mut self, id: &str, enabled: bool) -> bool {
        match self.rules.iter_mut().find(|r| r.id == id) {
            Some(r) => {
                r.enabled = enabled;
                true
            }
            None => false,
        }
    }

    /// Next free `user-N` id.
    pub fn fresh_id(&self) -> String {
        (1..)
            .map(|n| format!("user-{n}"))
            .find(|id| self.get(id).is_none())
            .expect("unbounded")
    }
}

/// g(d) for the span `[start, end)`: the longest matching pattern wins; a
/// P/O tie at the top length gives no evidence.
pub fn rule_apply(rules: &RuleSet, tokens: &[String], start: usize, end: usize) -> RuleVote {
    rule_match(rules, tokens, start, end).0
}

/// [`rule_apply`] plus the rule that decided the vote (first of the
/// longest matches for the winning class).
pub fn rule_match<'a>(rules: &'a RuleSet, tokens: &[String], start: usize, end: usize) -> (RuleVote, Option<&'a LinguisticRule>) {
    let mut best_p: Option<(usize, &LinguisticRule)> = None;
    let mut best_o: Option<(usize, &LinguisticRule)> = None;
    for rule in rules.rules() {
        if let Some(w) = rule.match_weight(tokens, start, end) {
            let slot = match rule.target {
                EntityClass::P => &mut best_p,
                EntityClass::O => &mut best_o,
            };
            if slot.is_none_or(|(b, _)| w > b) {
                *slot = Some((w, rule));
            }
        }
    }
    match (best_p, best_o) {
        (Some((_, r)), None) => (RuleVote::P, Some(r)),
        (None, Some((_, r))) => (RuleVote::O, Some(r)),
        (Some((p, r)), Some((o, _))) if p > o => (RuleVote::P, Some(r)),
        (Some((p, _)), Some((o, r))) if o > p => (RuleVote::O, Some(r)),
        _ => (RuleVote::None, None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingConfig {
    pub lambda: f64,
    pub fallback: bool,
    /// Rescale (s1, s2) to sum to one before fusing.
    pub renormalize: bool,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            lambda: 0.5,
            fallback: true,
            renormalize: false,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedEntity {
    pub span: EntitySpan,
    pub s1: f64,
    pub s2: f64,
    pub rule_vote: RuleVote,
    /// Rule that produced `rule_vote`, when one fired.
    pub rule_id: Option<String>,
    pub score_p: f64,
    pub score_o: f64,
    pub final_label: EntityClass,
}

impl MappedEntity {
    pub fn winning_score(&self) -> f64 {
        self.score_p.max(self.score_o)
    }
}

pub fn score_entity(span: &EntitySpan, vote: RuleVote, config: &MappingConfig) -> Result<MappedEntity> {
    config.validate()?;
    let probs = span.pico_probs.ok_or(Error::MissingProbabilities(span.sentence_index))?;
    let (mut s1, mut s2) = (probs[PicoLabel::P.index()], probs[PicoLabel::O.index()]);
    if config.renormalize && s1 + s2 > 0.0 {
        let z = s1 + s2;
        s1 /= z;
        s2 /= z;
    }
    let (gp, go) = vote.as_pair();
    let l = config.lambda;
    let score_p = l * s1 + (1.0 - l) * gp;
    let score_o = l * s2 + (1.0 - l) * go;
    let final_label = if score_p >= score_o { EntityClass::P } else { EntityClass::O };
    let mut span = span.clone();
    span.class = Some(final_label);
    Ok(MappedEntity {
        span,
        s1,
        s2,
        rule_vote: vote,
        rule_id: None,
        score_p,
        score_o,
        final_label,
    })
}

/// A surface seen under both labels keeps only its best-scoring instance
/// (ties prefer P). Other entities pass through in order.
pub fn resolve_intersections(entities: Vec<MappedEntity>) -> Vec<MappedEntity> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in entities.iter().enumerate() {
        groups.entry(normalize_surface(&e.span.surface)).or_default().push(i);
    }
    let mut keep = vec![true; entities.len()];
    for members in groups.values() {
        let first = entities[members[0]].final_label;
        if members.iter().all(|&i| entities[i].final_label == first) {
            continue;
        }
        let better = |a: &MappedEntity, b: &MappedEntity| {
            a.winning_score() > b.winning_score()
                || (a.winning_score() == b.winning_score() && a.final_label == EntityClass::P && b.final_label == EntityClass::O)
        };
        let mut winner = members[0];
        for &i in &members[1..] {
            if better(&entities[i], &entities[winner]) {
                winner = i;
            }
        }
        for &i in members {
            keep[i] = i == winner;
        }
    }
    entities.into_iter().zip(keep).filter_map(|(e, k)| k.then_some(e)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingOutcome {
    pub population: Vec<MappedEntity>,
    pub outcome: Vec<MappedEntity>,
    pub fallback_used: bool,
}

/// Scores, resolves and partitions spans produced by `extract`, which is
/// called with the sentence scope to scan.
pub fn map_with<F>(doc: &Document, rules: &RuleSet, config: &MappingConfig, mut extract: F) -> Result<MappingOutcome>
where
    F: FnMut(&Document, &[PicoLabel]) -> Result<Vec<EntitySpan>>,
{
    config.validate()?;
    let mut spans = extract(doc, &[PicoLabel::P, PicoLabel::O])?;
    let mut fallback_used = false;
    if spans.is_empty() && config.fallback {
        spans = extract(doc, &[PicoLabel::IC, PicoLabel::N])?;
        fallback_used = true;
    }
    let mut mapped = Vec::with_capacity(spans.len());
    for span in &spans {
        let sentence = doc
            .sentences
            .get(span.sentence_index)
            .ok_or_else(|| Error::Dimension(format!("span refers to missing sentence {}", span.sentence_index)))?;
        let (vote, rule) = rule_match(rules, &sentence.tokens, span.start, span.end);
        let mut m = score_entity(span, vote, config)?;
        m.rule_id = rule.map(|r| r.id.clone());
        mapped.push(m);
    }
    let (population, outcome) = resolve_intersections(mapped)
        .into_iter()
        .partition(|e| e.final_label == EntityClass::P);
    Ok(MappingOutcome {
        population,
        outcome,
        fallback_used,
    })
}

pub fn map_document(doc: &Document, model: &DnerModel, rules: &RuleSet, config: &MappingConfig) -> Result<MappingOutcome> {
    map_with(doc, rules, config, |d, scope| extract_from_document(d, model, scope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(surface: &str, probs: [f64; 4]) -> EntitySpan {
        let n = tokenize(surface).len();
        EntitySpan {
            sentence_index: 0,
            start: 0,
            end: n,
            surface: surface.to_string(),
            pico_probs: Some(probs),
            class: None,
        }
    }

    fn vote(rules: &RuleSet, sentence: &str, target: &str) -> RuleVote {
        let toks = tokenize(sentence);
        let t = tokenize(target);
        let start = (0..toks.len()).find(|&i| toks[i..].starts_with(&t)).expect("target in sentence");
        rule_apply(rules, &toks, start, start + t.len())
    }

    fn rules(list: &[(EntityClass, &str)]) -> RuleSet {
        let mut set = RuleSet::new();
        for (i, (c, p)) in list.iter().enumerate() {
            set.add(LinguisticRule::new(&format!("r{i}"), p, *c, RuleOrigin::User).unwrap()).unwrap();
        }
        set
    }

    #[test]
    fn risk_of_rule() {
        let r = rules(&[(EntityClass::O, "risk of <outcome>")]);
        assert_eq!(vote(&r, "increased risk of stroke", "stroke"), RuleVote::O);
        assert_eq!(vote(&RuleSet::new(), "increased risk of stroke", "stroke"), RuleVote::None);
        assert_eq!(vote(&r, "stroke raised the risk of", "stroke"), RuleVote::None);
        assert_eq!(vote(&r, "risk of death, but not stroke", "stroke"), RuleVote::None);
    }

    #[test]
    fn disabled_rule_is_ignored() {
        let mut r = rules(&[(EntityClass::O, "risk of <outcome>")]);
        assert!(r.set_enabled("r0", false));
        assert_eq!(vote(&r, "increased risk of stroke", "stroke"), RuleVote::None);
    }

    #[test]
    fn alternation_expands() {
        let r = rules(&[(EntityClass::O, "predict(s|ion of) <outcome>")]);
        assert_eq!(vote(&r, "HbA1c predicts retinopathy", "retinopathy"), RuleVote::O);
        assert_eq!(vote(&r, "Prediction of Retinopathy in adults", "Retinopathy"), RuleVote::O);
        assert_eq!(vote(&r, "predict retinopathy", "retinopathy"), RuleVote::None);
    }

    #[test]
    fn suffix_and_bracketing_patterns() {
        let r = rules(&[(EntityClass::P, "<population> patients"), (EntityClass::O, "between <outcome> and")]);
        assert_eq!(vote(&r, "Among diabetic patients, HbA1c fell", "diabetic"), RuleVote::P);
        assert_eq!(vote(&r, "link between gout and age", "gout"), RuleVote::O);
        assert_eq!(vote(&r, "link between gout and age", "age"), RuleVote::None);
    }

    #[test]
    fn longest_pattern_wins_and_ties_cancel() {
        let r = rules(&[(EntityClass::O, "risk of <outcome>"), (EntityClass::P, "with <population>")]);
        assert_eq!(vote(&r, "risk of stroke with diabetes", "diabetes"), RuleVote::O);
        let toks = tokenize("risk of stroke with diabetes");
        assert_eq!(rule_match(&r, &toks, 4, 5).1.map(|r| r.id.as_str()), Some("r0"));
        let r = rules(&[(EntityClass::O, "risk of <outcome>"), (EntityClass::P, "patients with <population>")]);
        assert_eq!(vote(&r, "risk of stroke in patients with diabetes", "diabetes"), RuleVote::None);
    }

    #[test]
    fn invalid_patterns_fail_at_registration() {
        for bad in ["risk of", "<outcome> <outcome>", "predict(s <outcome>", "a|b <outcome>", "<outcome>", "x ((a)) <outcome>"] {
            assert!(matches!(
                LinguisticRule::new("x", bad, EntityClass::O, RuleOrigin::User),
                Err(Error::InvalidPattern { .. })
            ), "{bad}");
        }
    }

    #[test]
    fn builtin_rules() {
        let r = RuleSet::builtin();
        assert_eq!(r.len(), 10);
        let cases = [
            ("Elevated troponin predicted heart failure", "heart failure", RuleVote::O),
            ("The incidence of gout rose", "gout", RuleVote::O),
            ("onset of dementia was delayed", "dementia", RuleVote::O),
            ("death from sepsis was rare", "sepsis", RuleVote::O),
            ("progression to cirrhosis", "cirrhosis", RuleVote::O),
            ("We enrolled patients with asthma.", "asthma", RuleVote::P),
            ("Women with breast cancer were eligible", "breast cancer", RuleVote::P),
            ("adults diagnosed with hypertension", "hypertension", RuleVote::P),
            ("500 epilepsy patients", "epilepsy", RuleVote::P),
            ("increased risk of stroke", "stroke", RuleVote::O),
        ];
        for (s, t, v) in cases {
            assert_eq!(vote(&r, s, t), v, "{s}");
        }
    }

    #[test]
    fn rules_round_trip_through_serde_repr() {
        let r = LinguisticRule::new("a", "risk of <outcome>", EntityClass::O, RuleOrigin::User).unwrap();
        let repr: RuleRepr = r.clone().into();
        assert_eq!(LinguisticRule::try_from(repr).unwrap(), r);
    }

    #[test]
    fn eq9_examples() {
        let cfg = MappingConfig::default();
        let m = score_entity(&span("x", [0.6, 0.0, 0.4, 0.0]), RuleVote::O, &cfg).unwrap();
        assert!((m.score_p - 0.30).abs() < 1e-12 && (m.score_o - 0.70).abs() < 1e-12);
        assert_eq!(m.final_label, EntityClass::O);

        let only_f = MappingConfig { lambda: 1.0, ..cfg };
        for v in [RuleVote::P, RuleVote::O, RuleVote::None] {
            assert_eq!(score_entity(&span("x", [0.3, 0.1, 0.5, 0.1]), v, &only_f).unwrap().final_label, EntityClass::O);
        }
        let only_g = MappingConfig { lambda: 0.0, ..cfg };
        let m = score_entity(&span("x", [0.0, 0.0, 1.0, 0.0]), RuleVote::P, &only_g).unwrap();
        assert_eq!((m.score_p, m.score_o, m.final_label), (1.0, 0.0, EntityClass::P));

        let mut missing = span("x", [0.0; 4]);
        missing.pico_probs = None;
        assert_eq!(score_entity(&missing, RuleVote::None, &cfg), Err(Error::MissingProbabilities(0)));
        assert!(score_entity(&span("x", [0.25; 4]), RuleVote::None, &MappingConfig { lambda: 1.5, ..cfg }).is_err());
    }

    #[test]
    fn renormalize_flag() {
        let cfg = MappingConfig {
            renormalize: true,
            ..MappingConfig::default()
        };
        let m = score_entity(&span("x", [0.3, 0.3, 0.1, 0.3]), RuleVote::None, &cfg).unwrap();
        assert!((m.s1 - 0.75).abs() < 1e-12 && (m.s2 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lambda_crossing_point() {
        let s = span("x", [0.6, 0.0, 0.4, 0.0]);
        let label = |l: f64| {
            score_entity(&s, RuleVote::O, &MappingConfig { lambda: l, ..MappingConfig::default() })
                .unwrap()
                .final_label
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        assert_eq!((label(lo), label(hi)), (EntityClass::O, EntityClass::P));
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if label(mid) == EntityClass::P {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((hi - 1.0 / 1.2).abs() < 1e-9, "{hi}");
        let mut seen_p = false;
        for k in 0..=100 {
            let p = label(k as f64 / 100.0) == EntityClass::P;
            assert!(!seen_p || p, "label flipped back at {k}");
            seen_p |= p;
        }
    }

    fn mapped(surface: &str, label: EntityClass, score: f64) -> MappedEntity {
        let (score_p, score_o) = match label {
            EntityClass::P => (score, 1.0 - score),
            EntityClass::O => (1.0 - score, score),
        };
        MappedEntity {
            span: span(surface, [0.25; 4]),
            s1: 0.25,
            s2: 0.25,
            rule_vote: RuleVote::None,
            rule_id: None,
            score_p,
            score_o,
            final_label: label,
        }
    }

    #[test]
    fn intersection_examples() {
        let out = resolve_intersections(vec![mapped("diabetes", EntityClass::P, 0.7), mapped("Diabetes", EntityClass::O, 0.55)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].final_label, EntityClass::P);

        let disjoint = vec![mapped("gout", EntityClass::P, 0.7), mapped("stroke", EntityClass::O, 0.6)];
        assert_eq!(resolve_intersections(disjoint.clone()), disjoint);

        let tie = resolve_intersections(vec![mapped("asthma", EntityClass::O, 0.5), mapped("asthma", EntityClass::P, 0.5)]);
        assert_eq!(tie.len(), 1);
        assert_eq!(tie[0].final_label, EntityClass::P);
    }

    #[test]
    fn fallback_and_empty_documents() {
        let mut doc = Document::from_text("d", "Background only. Gout was common.");
        doc.sentences[0].set_probs([0.1, 0.1, 0.1, 0.7]);
        doc.sentences[1].set_probs([0.2, 0.1, 0.3, 0.4]);
        let calls = core::cell::RefCell::new(Vec::new());
        let out = map_with(&doc, &RuleSet::builtin(), &MappingConfig::default(), |d, scope| {
            calls.borrow_mut().push(scope.to_vec());
            Ok(if scope.contains(&PicoLabel::N) {
                let mut s = span("Gout", d.sentences[1].pico_probs.unwrap());
                s.sentence_index = 1;
                vec![s]
            } else {
                Vec::new()
            })
        })
        .unwrap();
        assert!(out.fallback_used);
        assert_eq!(calls.borrow().len(), 2);
        assert_eq!(out.outcome.len(), 1);
        assert!((out.outcome[0].score_o - 0.15).abs() < 1e-12);

        let none = map_with(&doc, &RuleSet::builtin(), &MappingConfig::default(), |_, _| Ok(Vec::new())).unwrap();
        assert!(none.population.is_empty() && none.outcome.is_empty());

        let no_fallback = MappingConfig {
            fallback: false,
            ..MappingConfig::default()
        };
        let mut n = 0;
        map_with(&doc, &RuleSet::builtin(), &no_fallback, |_, _| {
            n += 1;
            Ok(Vec::new())
        })
        .unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_surface("  Breast\t Cancer "), "breast cancer");
    }

    proptest! {
        #[test]
        fn score_sum_identity(s1 in 0.0f64..1.0, frac in 0.0f64..1.0, l in 0.0f64..=1.0, v in 0usize..3) {
            let s2 = (1.0 - s1) * frac;
            let vote = [RuleVote::P, RuleVote::O, RuleVote::None][v];
            let cfg = MappingConfig { lambda: l, ..MappingConfig::default() };
            let m = score_entity(&span("x", [s1, 0.0, s2, 1.0 - s1 - s2]), vote, &cfg).unwrap();
            let (gp, go) = vote.as_pair();
            prop_assert!((m.score_p + m.score_o - (l * (s1 + s2) + (1.0 - l) * (gp + go))).abs() < 1e-12);
            let expected = if m.score_p >= m.score_o { EntityClass::P } else { EntityClass::O };
            prop_assert_eq!(m.final_label, expected);
        }

        #[test]
        fn resolve_is_idempotent(items in proptest::collection::vec((0usize..4, any::<bool>(), 0u8..5), 0..12)) {
            let names = ["gout", "stroke", "asthma", "GOUT"];
            let ents: Vec<MappedEntity> = items
                .iter()
                .map(|&(n, p, s)| mapped(names[n], if p { EntityClass::P } else { EntityClass::O }, 0.5 + s as f64 / 10.0))
                .collect();
            let once = resolve_intersections(ents);
            prop_assert_eq!(resolve_intersections(once.clone()), once);
        }
    }
}
