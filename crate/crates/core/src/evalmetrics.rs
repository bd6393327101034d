//! Precision, recall and F1 at sentence level (one class vs rest) and at
//! entity level (exact span match), plus per-class recall of the mapping step.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::PicoLabel;
use crate::mapping::{normalize_surface, EntityClass};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Counts { tp, fp, fn_ }
    }

    pub fn prf(&self) -> Prf {
        prf(*self)
    }
}

impl core::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Any zero denominator yields 0 for that metric.
pub fn prf(counts: Counts) -> Prf {
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    // Equal to 2PR/(P+R), but exact on integer counts.
    let f1 = ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_);
    Prf { precision, recall, f1 }
}

/// Exact-match counts with one-to-one matching: each gold item absorbs at
/// most one identical prediction.
pub fn entity_counts<K: Ord + Clone>(gold: &[K], predicted: &[K]) -> Counts {
    let mut remaining: BTreeMap<K, usize> = BTreeMap::new();
    for g in gold {
        *remaining.entry(g.clone()).or_insert(0) += 1;
    }
    let mut tp = 0;
    for p in predicted {
        if let Some(n) = remaining.get_mut(p) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    Counts {
        tp,
        fp: predicted.len() - tp,
        fn_: gold.len() - tp,
    }
}

/// One-vs-rest counts for `class`.
pub fn sentence_counts(gold: &[PicoLabel], predicted: &[PicoLabel], class: PicoLabel) -> Result<Counts> {
    if gold.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    let mut c = Counts::default();
    for (&g, &p) in gold.iter().zip(predicted) {
        match (g == class, p == class) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Per-class counts and P/R/F1 for the four PICO classes.
pub fn pico_report(gold: &[PicoLabel], predicted: &[PicoLabel]) -> Result<Vec<(PicoLabel, Counts, Prf)>> {
    PicoLabel::ALL
        .iter()
        .map(|&c| {
            let counts = sentence_counts(gold, predicted, c)?;
            Ok((c, counts, prf(counts)))
        })
        .collect()
}

/// Macro-averaged F1 over the four PICO classes.
pub fn macro_f1(report: &[(PicoLabel, Counts, Prf)]) -> f64 {
    if report.is_empty() {
        return 0.0;
    }
    report.iter().map(|(_, _, p)| p.f1).sum::<f64>() / report.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingScores {
    pub recall_p: f64,
    pub recall_o: f64,
    /// Low by construction of the task; reported for reference only.
    pub precision_p: f64,
    pub precision_o: f64,
}

/// Surface-level recall per mapped class: a gold `(class, surface)` is found
/// when a prediction carries the same class and normalized surface.
pub fn mapping_recall(gold: &[(EntityClass, String)], predicted: &[(EntityClass, String)]) -> MappingScores {
    let set = |items: &[(EntityClass, String)], class: EntityClass| -> Vec<String> {
        let mut v: Vec<String> = items
            .iter()
            .filter(|(c, _)| *c == class)
            .map(|(_, s)| normalize_surface(s))
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let score = |class: EntityClass| {
        let g = set(gold, class);
        let p = set(predicted, class);
        let hits = g.iter().filter(|s| p.binary_search(s).is_ok()).count();
        (ratio(hits, g.len()), ratio(hits, p.len()))
    };
    let (recall_p, precision_p) = score(EntityClass::P);
    let (recall_o, precision_o) = score(EntityClass::O);
    MappingScores {
        recall_p,
        recall_o,
        precision_p,
        precision_o,
    }
}

/// Plain-text table followed by a `key=value` block per row.
pub fn render_report(title: &str, rows: &[(String, Counts)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
        "class", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    for (name, c) in rows {
        let m = prf(*c);
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
            name, c.tp, c.fp, c.fn_, m.precision, m.recall, m.f1
        );
    }
    out.push('\n');
    for (name, c) in rows {
        let m = prf(*c);
        let _ = writeln!(out, "[{name}]");
        let _ = writeln!(out, "tp={}", c.tp);
        let _ = writeln!(out, "fp={}", c.fp);
        let _ = writeln!(out, "fn={}", c.fn_);
        let _ = writeln!(out, "precision={:.6}", m.precision);
        let _ = writeln!(out, "recall={:.6}", m.recall);
        let _ = writeln!(out, "f1={:.6}", m.f1);
    }
    out
}
