//! Small synthetic corpora built from templates, used for overfit tests,
//! demos and the service examples.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::{tokenize, BioCorpus, BioSentence, BioTag, Document, PicoLabel};
use crate::pico::{PicoDataset, PicoItem};

pub const DISEASES: [&str; 10] = [
    "breast cancer",
    "type 2 diabetes",
    "stroke",
    "coronary heart disease",
    "asthma",
    "chronic kidney disease",
    "gout",
    "hypertension",
    "lung cancer",
    "atrial fibrillation",
];

const PICO_TEMPLATES: [(PicoLabel, &str); 20] = [
    (PicoLabel::P, "Patients with {d} were enrolled from outpatient clinics."),
    (PicoLabel::P, "We recruited adults aged 40 to 70 years with {d}."),
    (PicoLabel::P, "The cohort comprised women diagnosed with {d}."),
    (PicoLabel::P, "Eligible participants had a history of {d}."),
    (PicoLabel::P, "Subjects with {d} were included in the population."),
    (PicoLabel::IC, "Participants were randomly assigned to {x} or placebo."),
    (PicoLabel::IC, "The intervention group received {x} twice daily."),
    (PicoLabel::IC, "Controls were given usual care instead of {x}."),
    (PicoLabel::IC, "Treatment consisted of {x} administered for twelve weeks."),
    (PicoLabel::IC, "We compared {x} against standard therapy."),
    (PicoLabel::O, "The primary outcome was incident {d}."),
    (PicoLabel::O, "Higher scores predicted the risk of {d}."),
    (PicoLabel::O, "The model discriminated future {d} events well."),
    (PicoLabel::O, "Hazard ratios for developing {d} were estimated."),
    (PicoLabel::O, "Outcome events included fatal and nonfatal {d}."),
    (PicoLabel::N, "This work was funded by a national research council."),
    (PicoLabel::N, "Statistical analyses used commercially available software."),
    (PicoLabel::N, "The authors declare no competing interests."),
    (PicoLabel::N, "Further studies are warranted in other settings."),
    (PicoLabel::N, "Ethics approval was obtained from the review board."),
];

const INTERVENTIONS: [&str; 2] = ["metformin", "aspirin"];

/// 40 sentences, 10 per class.
pub fn pico_fixture() -> PicoDataset {
    let mut items = Vec::with_capacity(40);
    for k in 0..2 {
        for (label, template) in PICO_TEMPLATES {
            let text = template.replace("{d}", DISEASES[(k * 3 + items.len()) % DISEASES.len()]).replace("{x}", INTERVENTIONS[k]);
            items.push(PicoItem {
                tokens: tokenize(&text),
                label,
            });
        }
    }
    PicoDataset { items }
}

const BIO_TEMPLATES: [&str; 5] = [
    "Patients with {d} were enrolled .",
    "The risk of {d} increased with age .",
    "{d} was associated with higher mortality .",
    "We studied the incidence of {d} and {e} in adults .",
    "No participant developed {d} during follow-up .",
];

fn bio_sentence(template: &str, fills: &[&str]) -> BioSentence {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut fill = fills.iter();
    for word in template.split(' ') {
        if word == "{d}" || word == "{e}" {
            let disease = fill.next().expect("enough fills");
            for (i, t) in disease.split(' ').enumerate() {
                tokens.push(t.to_string());
                tags.push(if i == 0 { BioTag::B } else { BioTag::I });
            }
        } else {
            tokens.push(word.to_string());
            tags.push(BioTag::O);
        }
    }
    BioSentence { tokens, tags }
}

/// 50 tagged sentences: every template with every disease.
pub fn bio_fixture() -> BioCorpus {
    let mut sentences = Vec::with_capacity(50);
    for template in BIO_TEMPLATES {
        for (i, d) in DISEASES.iter().enumerate() {
            let e = DISEASES[(i + 3) % DISEASES.len()];
            sentences.push(bio_sentence(template, &[d, e]));
        }
    }
    BioCorpus { sentences }
}

const TITLE_TEMPLATES: [&str; 4] = [
    "Risk of {d} in patients with {e}",
    "Predicting {d} in adults with {e}",
    "Incidence of {d} among people with {e}",
    "A prediction model for {d}",
];

fn tagged(text: &str, fills: &[&str]) -> BioSentence {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut rest = text;
    let mut fill = fills.iter();
    while let Some(at) = rest.find('{') {
        let close = rest[at..].find('}').expect("closed placeholder") + at;
        for t in tokenize(&rest[..at]) {
            tokens.push(t);
            tags.push(BioTag::O);
        }
        let entity = fill.next().expect("enough fills");
        for (i, t) in tokenize(entity).into_iter().enumerate() {
            tokens.push(t);
            tags.push(if i == 0 { BioTag::B } else { BioTag::I });
        }
        rest = &rest[close + 1..];
    }
    for t in tokenize(rest) {
        tokens.push(t);
        tags.push(BioTag::O);
    }
    BioSentence { tokens, tags }
}

/// Broader tagged corpus for demo models: every PICO template and a few
/// title patterns with every disease, plus [`bio_fixture`]. Intervention
/// mentions are untagged.
pub fn demo_bio_corpus() -> BioCorpus {
    let mut sentences = bio_fixture().sentences;
    for (i, d) in DISEASES.iter().enumerate() {
        let e = DISEASES[(i + 1) % DISEASES.len()];
        for (_, template) in PICO_TEMPLATES {
            let text = template.replace("{x}", INTERVENTIONS[i % 2]);
            if text.contains("{d}") || i < 2 {
                sentences.push(tagged(&text, &[d]));
            }
        }
        for template in TITLE_TEMPLATES {
            sentences.push(tagged(template, &[d, e]));
        }
    }
    BioCorpus { sentences }
}

pub const FIXTURE_TITLE: &str = "Risk of stroke in patients with type 2 diabetes";

pub const FIXTURE_ABSTRACT: &str = "Patients with type 2 diabetes were enrolled from outpatient clinics. \
Participants were randomly assigned to metformin or placebo. \
Higher scores predicted the risk of stroke. \
The authors declare no competing interests.";

/// Disease surfaces a perfect tagger finds in [`pico_fixture_document`], by sentence.
pub const FIXTURE_GOLD_SPANS: [(usize, &str); 4] = [(0, "stroke"), (0, "type 2 diabetes"), (1, "type 2 diabetes"), (3, "stroke")];

pub fn pico_fixture_document() -> Document {
    Document::new("fixture-1", FIXTURE_TITLE, FIXTURE_ABSTRACT)
}

/// Renders the PICO fixture as `LABEL<TAB>sentence` lines.
pub fn pico_fixture_tsv() -> String {
    pico_fixture()
        .items
        .iter()
        .map(|i| format!("{}\t{}\n", i.label, i.tokens.join(" ")))
        .collect()
}
