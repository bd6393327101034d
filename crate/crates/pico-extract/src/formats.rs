//! Plain-text file formats. All are UTF-8, tab separated and line oriented;
//! parse errors carry the 1-based line number.

use std::path::Path;
use std::str::FromStr;

use pico_core::corpus::{tokenize, BioCorpus, BioSentence, BioTag, Document, PicoLabel};
use pico_core::kgraph::{GraphEmbedding, KnowledgeGraph};
use pico_core::mapping::{EntityClass, LinguisticRule, RuleOrigin, RuleSet};
use pico_core::pico::{PicoDataset, PicoItem};

use crate::error::{read_to_string, Error, Result};

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
}

/// Splits on tabs; a line without tabs is split on whitespace instead.
fn columns(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// `token<TAB>tag` per line, blank line between sentences.
pub fn parse_bio(text: &str) -> Result<BioCorpus> {
    let mut sentences = Vec::new();
    let mut current = BioSentence {
        tokens: Vec::new(),
        tags: Vec::new(),
    };
    for (n, line) in lines(text) {
        if line.trim().is_empty() {
            if !current.tokens.is_empty() {
                sentences.push(std::mem::replace(
                    &mut current,
                    BioSentence {
                        tokens: Vec::new(),
                        tags: Vec::new(),
                    },
                ));
            }
            continue;
        }
        let cols = columns(line);
        if cols.len() != 2 || cols[0].is_empty() {
            return Err(Error::parse(n, format!("expected `token<TAB>tag`, found {} column(s)", cols.len())));
        }
        let tag = BioTag::from_str(cols[1]).map_err(|e| Error::parse(n, e))?;
        current.tokens.push(cols[0].to_string());
        current.tags.push(tag);
    }
    if !current.tokens.is_empty() {
        sentences.push(current);
    }
    Ok(BioCorpus { sentences })
}

pub fn load_bio_corpus(path: &Path) -> Result<BioCorpus> {
    parse_bio(&read_to_string(path)?).map_err(|e| in_file(path, e))
}

/// Normalized form: one `token<TAB>tag` line per token and exactly one blank
/// line after every sentence.
pub fn write_bio(corpus: &BioCorpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (t, g) in s.tokens.iter().zip(&s.tags) {
            out.push_str(t);
            out.push('\t');
            out.push_str(g.as_str());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// `LABEL<TAB>sentence` per line; blank lines are skipped.
pub fn parse_pico(text: &str) -> Result<PicoDataset> {
    let mut items = Vec::new();
    for (n, line) in lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        let (label, sentence) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(n, "expected `LABEL<TAB>sentence`"))?;
        let label = PicoLabel::from_str(label.trim()).map_err(|e| Error::parse(n, e))?;
        let tokens = tokenize(sentence);
        if tokens.is_empty() {
            return Err(Error::parse(n, "empty sentence"));
        }
        items.push(PicoItem { tokens, label });
    }
    if items.is_empty() {
        return Err(Error::Format("empty dataset".into()));
    }
    Ok(PicoDataset::new(items)?)
}

pub fn load_pico(path: &Path) -> Result<PicoDataset> {
    parse_pico(&read_to_string(path)?).map_err(|e| in_file(path, e))
}

pub fn write_pico(data: &PicoDataset) -> String {
    data.items
        .iter()
        .map(|i| format!("{}\t{}\n", i.label, i.tokens.join(" ")))
        .collect()
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, message } => Error::Format(format!("{}:{line}: {message}", path.display())),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Nodes,
    Edges,
    Aliases,
}

fn is_english(lang: &str) -> bool {
    matches!(lang.to_ascii_lowercase().as_str(), "en" | "eng")
}

/// Graph file with `#nodes` (`id<TAB>label[<TAB>lang]`), `#edges`
/// (`id<TAB>id`) and `#aliases` (`id<TAB>alias`) sections. Other lines
/// starting with `#` are comments. With `english_only`, nodes whose language
/// is not English are dropped together with their edges and aliases.
pub fn parse_graph(text: &str, english_only: bool) -> Result<KnowledgeGraph> {
    let mut g = KnowledgeGraph::new();
    let mut dropped = std::collections::BTreeSet::new();
    let mut section = Section::None;
    for (n, line) in lines(text) {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "#nodes" => section = Section::Nodes,
            "#edges" => section = Section::Edges,
            "#aliases" => section = Section::Aliases,
            _ if trimmed.starts_with('#') => {}
            _ => {
                let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
                match section {
                    Section::None => return Err(Error::parse(n, "data before a section header")),
                    Section::Nodes => {
                        if !(2..=3).contains(&cols.len()) || cols[0].is_empty() || cols[1].is_empty() {
                            return Err(Error::parse(n, "expected `id<TAB>label[<TAB>lang]`"));
                        }
                        let lang = cols.get(2).copied().unwrap_or("en");
                        if english_only && !is_english(lang) {
                            dropped.insert(cols[0].to_string());
                        } else {
                            g.add_node(cols[0], cols[1]);
                        }
                    }
                    Section::Edges | Section::Aliases => {
                        if cols.len() != 2 || cols[0].is_empty() || cols[1].is_empty() {
                            return Err(Error::parse(n, "expected two tab-separated fields"));
                        }
                        let touches_dropped = dropped.contains(cols[0]) || (section == Section::Edges && dropped.contains(cols[1]));
                        if touches_dropped {
                            continue;
                        }
                        let r = if section == Section::Edges {
                            g.add_edge(cols[0], cols[1])
                        } else {
                            g.add_alias(cols[0], cols[1])
                        };
                        r.map_err(|e| Error::parse(n, e.to_string()))?;
                    }
                }
            }
        }
    }
    if g.is_empty() {
        return Err(Error::Format("graph has no nodes".into()));
    }
    Ok(g)
}

pub fn load_graph(path: &Path, english_only: bool) -> Result<KnowledgeGraph> {
    parse_graph(&read_to_string(path)?, english_only).map_err(|e| in_file(path, e))
}

/// word2vec-style text export: `<count> <dim>` then `label v1 … vd` per node.
/// Labels may contain spaces; the last `dim` fields are the vector.
pub fn write_embeddings(emb: &GraphEmbedding) -> String {
    let mut out = format!("{} {}\n", emb.graph.node_count(), emb.dim());
    for i in 0..emb.graph.node_count() {
        out.push_str(emb.graph.label(i));
        for v in emb.embeddings.row(i) {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut it = lines(text);
    let (_, header) = it.next().ok_or_else(|| Error::Format("empty embedding file".into()))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(1, "expected `<count> <dim>`"))?;
    let [count, dim] = head[..] else {
        return Err(Error::parse(1, "expected `<count> <dim>`"));
    };
    let mut out = Vec::with_capacity(count);
    for (n, line) in it {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() < dim + 1 {
            return Err(Error::parse(n, format!("expected a label and {dim} values")));
        }
        let split = fields.len() - dim;
        let values = fields[split..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(n, e.to_string()))?;
        out.push((fields[..split].join(" "), values));
    }
    if out.len() != count {
        return Err(Error::Format(format!("header announces {count} vectors, found {}", out.len())));
    }
    Ok(out)
}

/// `target<TAB>pattern` per line (`#` starts a comment). Rules are numbered
/// `file-1`, `file-2`, … in file order.
pub fn parse_rules(text: &str) -> Result<Vec<LinguisticRule>> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (target, pattern) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(n, "expected `target<TAB>pattern`"))?;
        let target = EntityClass::from_str(target.trim()).map_err(|e| Error::parse(n, e))?;
        let id = format!("file-{}", out.len() + 1);
        let rule = LinguisticRule::new(&id, pattern.trim(), target, RuleOrigin::User).map_err(|e| Error::parse(n, e.to_string()))?;
        out.push(rule);
    }
    Ok(out)
}

/// Builtin rules followed by the rules in `path`, if given.
pub fn load_rule_set(path: Option<&Path>, builtin: bool) -> Result<RuleSet> {
    let mut set = if builtin { RuleSet::builtin() } else { RuleSet::new() };
    if let Some(p) = path {
        for rule in parse_rules(&read_to_string(p)?).map_err(|e| in_file(p, e))? {
            set.add(rule)?;
        }
    }
    Ok(set)
}

pub fn write_rules(rules: &RuleSet) -> String {
    rules
        .rules()
        .iter()
        .filter(|r| r.enabled)
        .map(|r| format!("{}\t{}\n", r.target, r.pattern))
        .collect()
}

/// One tagged entity: `doc_id<TAB>sentence<TAB>start<TAB>end<TAB>surface`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SpanRow {
    pub doc_id: String,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

pub fn write_spans(rows: &[SpanRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{}\t{}\t{}\t{}\n", r.doc_id, r.sentence, r.start, r.end, r.surface))
        .collect()
}

pub fn parse_spans(text: &str) -> Result<Vec<SpanRow>> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(n, "expected `doc_id<TAB>sentence<TAB>start<TAB>end<TAB>surface`"));
        }
        let num = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::parse(n, format!("`{s}`: {e}")));
        let (sentence, start, end) = (num(cols[1])?, num(cols[2])?, num(cols[3])?);
        if start >= end {
            return Err(Error::parse(n, "span start must be below its end"));
        }
        out.push(SpanRow {
            doc_id: cols[0].to_string(),
            sentence,
            start,
            end,
            surface: cols[4].to_string(),
        });
    }
    Ok(out)
}

/// One mapped entity: `doc_id<TAB>label<TAB>surface`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MappingRow {
    pub doc_id: String,
    pub label: EntityClass,
    pub surface: String,
}

pub fn write_mapping(rows: &[MappingRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{}\t{}\n", r.doc_id, r.label, r.surface))
        .collect()
}

pub fn parse_mapping(text: &str) -> Result<Vec<MappingRow>> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(n, "expected `doc_id<TAB>label<TAB>surface`"));
        }
        out.push(MappingRow {
            doc_id: cols[0].to_string(),
            label: EntityClass::from_str(cols[1].trim()).map_err(|e| Error::parse(n, e))?,
            surface: cols[2].to_string(),
        });
    }
    Ok(out)
}

/// Text file whose first line is the title; the id is the file stem.
pub fn read_document(path: &Path) -> Result<Document> {
    let text = read_to_string(path)?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("doc");
    let doc = Document::from_text(id, &text);
    if doc.sentences.is_empty() {
        return Err(Error::Format(format!("{}: no sentences", path.display())));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pico_core::fixtures;
    use proptest::prelude::*;

    #[test]
    fn single_token_file() {
        let c = parse_bio("cancer B\n\n").unwrap();
        let s = c.stats();
        assert_eq!((s.sentences, s.tokens, s.annotations), (1, 1, 1));
    }

    #[test]
    fn bio_errors_name_the_line() {
        let e = parse_bio("a\tO\nb\tX\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_bio("a\tO\n\nb\tO\textra\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn bio_normalization() {
        let messy = "\n\nPatients\tO\r\nwith\tO\ncancer\tB\n\n\n\nGout\tB\n";
        let c = parse_bio(messy).unwrap();
        assert_eq!(c.len(), 2);
        let norm = write_bio(&c);
        assert_eq!(norm, "Patients\tO\nwith\tO\ncancer\tB\n\nGout\tB\n\n");
        assert_eq!(write_bio(&parse_bio(&norm).unwrap()), norm);
    }

    #[test]
    fn fixture_round_trip() {
        let c = fixtures::bio_fixture();
        let text = write_bio(&c);
        assert_eq!(parse_bio(&text).unwrap(), c);
    }

    fn arb_corpus() -> impl Strategy<Value = BioCorpus> {
        let sentence = prop::collection::vec(("[A-Za-z0-9.,()-]{1,8}", 0usize..3), 1..12).prop_map(|pairs| BioSentence {
            tokens: pairs.iter().map(|(t, _)| t.clone()).collect(),
            tags: pairs.iter().map(|(_, g)| BioTag::ALL[*g]).collect(),
        });
        prop::collection::vec(sentence, 0..6).prop_map(|sentences| BioCorpus { sentences })
    }

    proptest! {
        #[test]
        fn bio_serialization_is_a_fixed_point(c in arb_corpus()) {
            let text = write_bio(&c);
            let back = parse_bio(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(write_bio(&back), text);
        }
    }

    #[test]
    fn pico_file() {
        let d = parse_pico("P\tPatients with gout were enrolled.\n\nN\tNo conflicts.\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.items[0].label, PicoLabel::P);
        let e = parse_pico("P\tok\nX\tbad label\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert_eq!(parse_pico("\n\n").unwrap_err().to_string(), "empty dataset");
        let fx = fixtures::pico_fixture_tsv();
        assert_eq!(write_pico(&parse_pico(&fx).unwrap()), fx);
    }

    #[test]
    fn graph_sections() {
        let text = "# toy\n#nodes\nd1\tbreast cancer\ten\nd2\tcancer du sein\tfr\nd3\tneoplasm\n#edges\nd1\td3\nd2\td3\n#aliases\nd1\tbreast carcinoma\n";
        let g = parse_graph(text, true).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.resolve("Breast Carcinoma"), g.node_index("d1"));
        let all = parse_graph(text, false).unwrap();
        assert_eq!((all.node_count(), all.edge_count()), (3, 2));
        let e = parse_graph("#nodes\na\tA\n#edges\na\tzz\n", false).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn toy_graph_loads() {
        let g = parse_graph(crate::TOY_GRAPH, true).unwrap();
        assert!(g.node_count() >= 150, "{}", g.node_count());
        let bc = g.node_index("breast_cancer").unwrap();
        assert_eq!(g.resolve("breast carcinoma"), Some(bc));
        for d in fixtures::DISEASES {
            assert!(g.resolve(d).is_some(), "{d}");
        }
    }

    #[test]
    fn embedding_export_round_trip() {
        use pico_core::kgraph::NodeEmbeddings;
        use pico_core::numerics::Mat;
        let mut g = KnowledgeGraph::new();
        g.add_node("a", "type 2 diabetes");
        g.add_node("b", "gout");
        let emb = GraphEmbedding {
            graph: g,
            embeddings: NodeEmbeddings {
                vectors: Mat::from_vec(2, 2, vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0]).unwrap(),
            },
        };
        let text = write_embeddings(&emb);
        assert!(text.starts_with("2 2\ntype 2 diabetes 0.1 "));
        let back = parse_embeddings(&text).unwrap();
        assert_eq!(back[0].0, "type 2 diabetes");
        assert_eq!(back[1].1, vec![3.0, 1.0 / 3.0]);
    }

    #[test]
    fn rule_file() {
        let rules = parse_rules("# comment\nO\trisk of <outcome>\nP\tpatients with <population>\n").unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[1].id, "file-2");
        let e = parse_rules("O\trisk of\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn span_and_mapping_rows() {
        let rows = vec![SpanRow {
            doc_id: "d".into(),
            sentence: 2,
            start: 3,
            end: 5,
            surface: "type 2".into(),
        }];
        assert_eq!(parse_spans(&write_spans(&rows)).unwrap(), rows);
        assert!(parse_spans("d\t0\t3\t3\tx\n").is_err());
        let m = vec![MappingRow {
            doc_id: "d".into(),
            label: EntityClass::O,
            surface: "stroke".into(),
        }];
        assert_eq!(parse_mapping(&write_mapping(&m)).unwrap(), m);
    }
}
