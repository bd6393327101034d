//! Documents, sentences, tokens and vocabularies.
//!
//! Sentence splitting and tokenization are rule based. A title is split the
//! same way as the abstract and its sentences come first in the document.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::argmax;

/// Sentence-level PICO class. Comparison is folded into intervention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PicoLabel {
    P,
    IC,
    O,
    N,
}

impl PicoLabel {
    /// Fixed class order used by every model and checkpoint.
    pub const ALL: [PicoLabel; 4] = [PicoLabel::P, PicoLabel::IC, PicoLabel::O, PicoLabel::N];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PicoLabel::P => "P",
            PicoLabel::IC => "IC",
            PicoLabel::O => "O",
            PicoLabel::N => "N",
        }
    }
}

impl fmt::Display for PicoLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PicoLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P" => Ok(PicoLabel::P),
            "IC" | "I/C" => Ok(PicoLabel::IC),
            "O" => Ok(PicoLabel::O),
            "N" => Ok(PicoLabel::N),
            other => Err(alloc::format!("unknown PICO label `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub tokens: Vec<String>,
    pub pico_label: Option<PicoLabel>,
    pub pico_probs: Option<[f64; 4]>,
}

impl Sentence {
    pub fn new(index: usize, text: &str) -> Self {
        Sentence {
            index,
            text: text.to_string(),
            tokens: tokenize(text),
            pico_label: None,
            pico_probs: None,
        }
    }

    /// Sets the distribution and its argmax label (ties go to the earlier class).
    pub fn set_probs(&mut self, probs: [f64; 4]) {
        self.pico_label = PicoLabel::from_index(argmax(&probs));
        self.pico_probs = Some(probs);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    pub fn new(id: &str, title: &str, abstract_text: &str) -> Self {
        let sentences = split_sentences(title)
            .into_iter()
            .chain(split_sentences(abstract_text))
            .filter(|s| !tokenize(s).is_empty())
            .enumerate()
            .map(|(i, s)| Sentence::new(i, &s))
            .collect();
        Document {
            id: id.to_string(),
            title: title.to_string(),
            abstract_text: abstract_text.to_string(),
            sentences,
        }
    }

    /// First line is the title, the rest is the abstract.
    pub fn from_text(id: &str, text: &str) -> Self {
        let mut lines = text.splitn(2, '\n');
        let title = lines.next().unwrap_or("").trim();
        let rest = lines.next().unwrap_or("");
        Self::new(id, title, rest)
    }
}

const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "ca", "cf", "dr", "e.g", "eg", "eq", "et al", "etc", "fig", "figs", "i.e", "ie", "jr", "mr", "mrs", "ms",
    "no", "prof", "resp", "sr", "st", "vol", "vs",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, ')' | ']' | '"' | '\'' | '”' | '’')
}

/// The whitespace-delimited word that ends right before byte `end` (exclusive).
fn word_before(text: &str, end: usize) -> &str {
    let head = &text[..end];
    let start = head.rfind(char::is_whitespace).map(|i| i + 1).unwrap_or(0);
    &head[start..]
}

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_start_matches(|c: char| matches!(c, '(' | '[' | '"' | '\''));
    let lower = w.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Splits at `.`, `!` or `?` followed by whitespace and an uppercase letter
/// (or by the end of the text), unless the period ends an abbreviation.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        // Swallow runs like "?!" and closing brackets/quotes.
        let mut j = i + 1;
        while j < chars.len() && (is_terminal(chars[j].1) || is_closer(chars[j].1)) {
            j += 1;
        }
        let end = chars.get(j).map(|&(p, _)| p).unwrap_or(text.len());
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = if k == chars.len() {
            true
        } else if k > j {
            let next = chars[k].1;
            let opens_upper = next.is_uppercase()
                || (matches!(next, '(' | '[' | '"' | '“') && chars.get(k + 1).is_some_and(|&(_, c)| c.is_uppercase()));
            opens_upper && !(c == '.' && is_abbreviation(word_before(text, pos)))
        } else {
            false
        };
        if boundary {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = end;
        }
        i = j;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

fn is_edge_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | ';' | ':' | '!' | '?' | '(' | ')' | '[' | ']' | '{' | '}' | '"' | '\'' | '“' | '”' | '‘' | '’'
    )
}

/// Whitespace split, then leading and trailing punctuation become separate tokens.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in sentence.split_whitespace() {
        let lead: Vec<char> = chunk.chars().take_while(|&c| is_edge_punct(c)).collect();
        let rest = &chunk[lead.iter().map(|c| c.len_utf8()).sum::<usize>()..];
        let mut trail: Vec<char> = rest.chars().rev().take_while(|&c| is_edge_punct(c)).collect();
        trail.reverse();
        let core_len = rest.len() - trail.iter().map(|c| c.len_utf8()).sum::<usize>();
        out.extend(lead.iter().map(|c| c.to_string()));
        if core_len > 0 {
            out.push(rest[..core_len].to_string());
        }
        out.extend(trail.iter().map(|c| c.to_string()));
    }
    out
}

/// Token with its vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_ids: Vec<u32>,
    pub word_id: u32,
}

/// Word and character vocabularies. Id 0 is the unknown entry in both.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    chars: Vec<char>,
    lowercase: bool,
    word_index: BTreeMap<String, u32>,
    char_index: BTreeMap<char, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    chars: Vec<char>,
    lowercase: bool,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_lists(r.words, r.chars, r.lowercase)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            words: v.words,
            chars: v.chars,
            lowercase: v.lowercase,
        }
    }
}

pub const UNKNOWN: &str = "<unk>";

impl Vocabulary {
    /// `words[0]` and `chars[0]` are the unknown entries.
    pub fn from_lists(words: Vec<String>, chars: Vec<char>, lowercase: bool) -> Self {
        let word_index = words.iter().enumerate().skip(1).map(|(i, w)| (w.clone(), i as u32)).collect();
        let char_index = chars.iter().enumerate().skip(1).map(|(i, &c)| (c, i as u32)).collect();
        Vocabulary {
            words,
            chars,
            lowercase,
            word_index,
            char_index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn char_len(&self) -> usize {
        self.chars.len()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn key(&self, word: &str) -> String {
        if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        }
    }

    pub fn word_id(&self, word: &str) -> u32 {
        self.word_index.get(&self.key(word)).copied().unwrap_or(0)
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_index.get(&c).copied().unwrap_or(0)
    }

    pub fn char_ids(&self, word: &str) -> Vec<u32> {
        word.chars().map(|c| self.char_id(c)).collect()
    }

    pub fn encode(&self, word: &str) -> Token {
        Token {
            text: word.to_string(),
            char_ids: self.char_ids(word),
            word_id: self.word_id(word),
        }
    }
}

/// Builds word and character vocabularies in first-occurrence order.
/// Words seen fewer than `min_count` times stay unknown. Word lookups are
/// lowercased; characters keep their case.
pub fn build_vocabulary<'a, I>(tokens: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    build_vocabulary_with(tokens, min_count, true)
}

pub fn build_vocabulary_with<'a, I>(tokens: I, min_count: usize, lowercase: bool) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    let min_count = min_count.max(1);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut chars: Vec<char> = alloc::vec!['\u{0}'];
    let mut seen_chars: BTreeMap<char, ()> = BTreeMap::new();
    for tok in tokens {
        let key = if lowercase { tok.to_lowercase() } else { tok.to_string() };
        let n = counts.entry(key.clone()).or_insert(0);
        if *n == 0 {
            order.push(key);
        }
        *n += 1;
        for c in tok.chars() {
            if seen_chars.insert(c, ()).is_none() {
                chars.push(c);
            }
        }
    }
    let mut words = alloc::vec![UNKNOWN.to_string()];
    words.extend(order.into_iter().filter(|w| counts[w] >= min_count));
    Vocabulary::from_lists(words, chars, lowercase)
}

/// BIO tag; the index order `B, I, O` is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BioTag {
    B,
    I,
    O,
}

impl BioTag {
    pub const ALL: [BioTag; 3] = [BioTag::B, BioTag::I, BioTag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BioTag::B => "B",
            BioTag::I => "I",
            BioTag::O => "O",
        }
    }
}

impl FromStr for BioTag {
    type Err = String;

    /// Also accepts a single entity type suffix (`B-Disease`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tag = match s.split_once('-') {
            Some((t @ ("B" | "I"), kind)) if !kind.is_empty() => t,
            _ => s,
        };
        match tag {
            "B" => Ok(BioTag::B),
            "I" => Ok(BioTag::I),
            "O" => Ok(BioTag::O),
            other => Err(alloc::format!("unknown tag `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<BioTag>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioCorpus {
    pub sentences: Vec<BioSentence>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    /// Number of B-initiated spans.
    pub annotations: usize,
    /// Distinct token strings, case-sensitive.
    pub unique_tokens: usize,
}

impl BioCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str))
    }

    pub fn stats(&self) -> CorpusStats {
        let mut unique = BTreeMap::new();
        for t in self.tokens() {
            unique.insert(t, ());
        }
        CorpusStats {
            sentences: self.sentences.len(),
            tokens: self.sentences.iter().map(|s| s.tokens.len()).sum(),
            annotations: self
                .sentences
                .iter()
                .map(|s| s.tags.iter().filter(|&&t| t == BioTag::B).count())
                .sum(),
            unique_tokens: unique.len(),
        }
    }
}
