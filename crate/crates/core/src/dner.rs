//! Disease mention tagging with BIO tags: per-token features (word
//! embedding, character encoder, graph embedding) feed a BiLSTM whose
//! outputs are projected to tag scores, decoded by softmax or a CRF.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{BioCorpus, BioSentence, BioTag, Document, PicoLabel, Vocabulary};
use crate::crf::{crf_nll_and_grad, viterbi_decode, CrfParams};
use crate::evalmetrics::{entity_counts, prf, Counts, Prf};
use crate::kgraph::GraphEmbedding;
use crate::mapping::EntityClass;
use crate::numerics::{
    argmax, dropout_mask, hadamard, prefixed, softmax_cross_entropy, zeros_like, AdamConfig, Mat, OptimizerState, Parameterized, Rng,
};
use crate::seqmodels::{Affine, BiLstmCache, BiLstmParams, CharCache, CharEncoderParams};
use crate::{Error, Result};

const TAGS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Softmax,
    Crf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharKind {
    None,
    Cnn,
    BiLstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnerConfig {
    pub word_dim: usize,
    /// Hidden size of each LSTM direction.
    pub hidden: usize,
    pub chars: CharKind,
    pub head: HeadKind,
    /// Forbid `O → I` and `START → I` in the CRF.
    pub hard_bio: bool,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: Option<usize>,
    /// Stop once validation entity F1 reaches this value.
    pub stop_at_f1: Option<f64>,
    pub shuffle: bool,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for DnerConfig {
    fn default() -> Self {
        DnerConfig {
            word_dim: 100,
            hidden: 100,
            chars: CharKind::Cnn,
            head: HeadKind::Crf,
            hard_bio: false,
            dropout: 0.25,
            batch_size: 32,
            epochs: 50,
            patience: Some(5),
            stop_at_f1: None,
            shuffle: true,
            adam: AdamConfig::default(),
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnerParams {
    pub word_embeddings: Mat,
    pub chars: Option<CharEncoderParams>,
    pub lstm: BiLstmParams,
    pub emission: Affine,
    pub crf: Option<CrfParams>,
}

impl Parameterized for DnerParams {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![(String::from("word_embeddings"), &self.word_embeddings)];
        if let Some(c) = &self.chars {
            out.extend(c.named_params().into_iter().map(|(n, m)| (prefixed("chars", &n), m)));
        }
        out.extend(self.lstm.named_params().into_iter().map(|(n, m)| (prefixed("lstm", &n), m)));
        out.extend(self.emission.named_params().into_iter().map(|(n, m)| (prefixed("emission", &n), m)));
        if let Some(c) = &self.crf {
            out.push((String::from("crf.transitions"), &c.transitions));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.word_embeddings];
        if let Some(c) = &mut self.chars {
            out.extend(c.params_mut());
        }
        out.extend(self.lstm.params_mut());
        out.extend(self.emission.params_mut());
        if let Some(c) = &mut self.crf {
            out.push(&mut c.transitions);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnerModel {
    pub config: DnerConfig,
    pub vocab: Vocabulary,
    pub params: DnerParams,
    /// Fixed (untrained) per-token graph feature.
    pub graph: Option<GraphEmbedding>,
    pub tag_order: [BioTag; 3],
}

struct SentenceCache {
    word_ids: Vec<usize>,
    chars: Vec<CharCache>,
    feats: Vec<Vec<f64>>,
    lstm: BiLstmCache,
    outputs: Vec<Vec<f64>>,
    masks: Option<Vec<Vec<f64>>>,
}

impl DnerModel {
    pub fn new(vocab: Vocabulary, graph: Option<GraphEmbedding>, config: DnerConfig) -> Self {
        let rng = Rng::new(config.seed).split("dner/init");
        let limit = libm::sqrt(3.0 / config.word_dim as f64);
        let word_embeddings = Mat::uniform(vocab.len(), config.word_dim, -limit, limit, &mut rng.split("words"));
        let chars = match config.chars {
            CharKind::None => None,
            CharKind::Cnn => Some(CharEncoderParams::new_cnn(vocab.char_len(), &mut rng.split("chars"))),
            CharKind::BiLstm => Some(CharEncoderParams::new_lstm(vocab.char_len(), &mut rng.split("chars"))),
        };
        let feature_dim = config.word_dim + chars.as_ref().map_or(0, CharEncoderParams::output_dim) + graph.as_ref().map_or(0, GraphEmbedding::dim);
        let lstm = BiLstmParams::new(feature_dim, config.hidden, &mut rng.split("lstm"));
        let emission = Affine::new(2 * config.hidden, TAGS, &mut rng.split("emission"));
        let crf = (config.head == HeadKind::Crf).then(|| {
            let p = CrfParams::zeros(TAGS);
            if config.hard_bio {
                p.with_hard_bio()
            } else {
                p
            }
        });
        DnerModel {
            config,
            vocab,
            params: DnerParams {
                word_embeddings,
                chars,
                lstm,
                emission,
                crf,
            },
            graph,
            tag_order: BioTag::ALL,
        }
    }

    pub fn check_tag_order(&self) -> Result<()> {
        if self.tag_order != BioTag::ALL {
            return Err(Error::Config(format!("unexpected tag order {:?}", self.tag_order)));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.config.word_dim
            + self.params.chars.as_ref().map_or(0, CharEncoderParams::output_dim)
            + self.graph.as_ref().map_or(0, GraphEmbedding::dim)
    }

    fn features(&self, tokens: &[String]) -> Result<(Vec<usize>, Vec<CharCache>, Vec<Vec<f64>>)> {
        let mut ids = Vec::with_capacity(tokens.len());
        let mut char_caches = Vec::new();
        let mut feats = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let enc = self.vocab.encode(tok);
            let id = enc.word_id as usize;
            let mut v = self.params.word_embeddings.row(id).to_vec();
            if let Some(c) = &self.params.chars {
                let (out, cache) = c.forward(&enc.char_ids)?;
                v.extend(out);
                char_caches.push(cache);
            }
            if let Some(g) = &self.graph {
                v.extend(g.feature(tok));
            }
            ids.push(id);
            feats.push(v);
        }
        Ok((ids, char_caches, feats))
    }

    fn forward(&self, tokens: &[String], drop: Option<&mut Rng>) -> Result<(Mat, SentenceCache)> {
        if tokens.is_empty() {
            return Err(Error::Empty("sentence has no tokens"));
        }
        let (word_ids, chars, feats) = self.features(tokens)?;
        let (outputs, lstm) = self.params.lstm.forward(&feats)?;
        let masks = drop.map(|rng| {
            outputs
                .iter()
                .map(|o| dropout_mask(o.len(), self.config.dropout, rng, true))
                .collect::<Vec<_>>()
        });
        let mut emissions = Mat::zeros(tokens.len(), TAGS);
        for t in 0..tokens.len() {
            let x = match &masks {
                Some(m) => hadamard(&outputs[t], &m[t]),
                None => outputs[t].clone(),
            };
            emissions.row_mut(t).copy_from_slice(&self.params.emission.forward(&x));
        }
        Ok((
            emissions,
            SentenceCache {
                word_ids,
                chars,
                feats,
                lstm,
                outputs,
                masks,
            },
        ))
    }

    fn backward(&self, cache: &SentenceCache, d_emissions: &Mat, grads: &mut DnerParams) {
        let n = cache.outputs.len();
        let mut douts = Vec::with_capacity(n);
        for t in 0..n {
            let x = match &cache.masks {
                Some(m) => hadamard(&cache.outputs[t], &m[t]),
                None => cache.outputs[t].clone(),
            };
            let mut d = self.params.emission.backward(&x, d_emissions.row(t), &mut grads.emission);
            if let Some(m) = &cache.masks {
                d = hadamard(&d, &m[t]);
            }
            douts.push(d);
        }
        let dfeats = self.params.lstm.backward(&cache.lstm, &douts, &mut grads.lstm);
        let wd = self.config.word_dim;
        for t in 0..n {
            for (e, v) in grads.word_embeddings.row_mut(cache.word_ids[t]).iter_mut().zip(&dfeats[t][..wd]) {
                *e += v;
            }
            if let (Some(c), Some(gc)) = (&self.params.chars, &mut grads.chars) {
                let cd = c.output_dim();
                c.backward(&cache.chars[t], &dfeats[t][wd..wd + cd], gc);
            }
        }
        debug_assert_eq!(cache.feats.len(), n);
    }

    /// Sentence loss (summed over tokens for the softmax head, CRF NLL
    /// otherwise) with gradients accumulated into `grads`.
    fn loss_and_grad(&self, sentence: &BioSentence, drop: Option<&mut Rng>, grads: &mut DnerParams) -> Result<f64> {
        if sentence.tokens.len() != sentence.tags.len() {
            return Err(Error::Dimension(format!(
                "{} tokens, {} tags",
                sentence.tokens.len(),
                sentence.tags.len()
            )));
        }
        let gold: Vec<usize> = sentence.tags.iter().map(|t| t.index()).collect();
        let (emissions, cache) = self.forward(&sentence.tokens, drop)?;
        let (loss, d_em) = match &self.params.crf {
            Some(crf) => {
                let l = crf_nll_and_grad(&emissions, &gold, crf)?;
                if let Some(gc) = &mut grads.crf {
                    gc.transitions.add_assign(&l.d_transitions);
                }
                (l.nll, l.d_emissions)
            }
            None => {
                let mut d = Mat::zeros(emissions.rows(), TAGS);
                let mut total = 0.0;
                for (t, &y) in gold.iter().enumerate() {
                    let (l, g) = softmax_cross_entropy(emissions.row(t), y, 1.0);
                    total += l;
                    d.row_mut(t).copy_from_slice(&g);
                }
                (total, d)
            }
        };
        self.backward(&cache, &d_em, grads);
        Ok(loss)
    }

    /// Emission scores, `T x 3` in tag order `B, I, O`.
    pub fn emissions(&self, tokens: &[String]) -> Result<Mat> {
        Ok(self.forward(tokens, None)?.0)
    }
}

/// Per-token feature vectors: word ∥ characters ∥ graph.
pub fn assemble_features(tokens: &[String], model: &DnerModel) -> Result<Vec<Vec<f64>>> {
    Ok(model.features(tokens)?.2)
}

pub fn tag_sentence(model: &DnerModel, tokens: &[String]) -> Result<Vec<BioTag>> {
    let em = model.emissions(tokens)?;
    let idx = match &model.params.crf {
        Some(crf) => viterbi_decode(&em, crf)?.0,
        None => (0..em.rows()).map(|t| argmax(em.row(t))).collect(),
    };
    Ok(idx.into_iter().map(|i| BioTag::ALL[i]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub sentence_index: usize,
    /// Token range `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub pico_probs: Option<[f64; 4]>,
    pub class: Option<EntityClass>,
}

/// Maximal `B I*` runs; an `I` that does not continue a span opens one.
pub fn span_ranges(tags: &[BioTag]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (t, tag) in tags.iter().enumerate() {
        match (tag, open) {
            (BioTag::B, Some(s)) => {
                out.push((s, t));
                open = Some(t);
            }
            (BioTag::B, None) | (BioTag::I, None) => open = Some(t),
            (BioTag::I, Some(_)) => {}
            (BioTag::O, Some(s)) => {
                out.push((s, t));
                open = None;
            }
            (BioTag::O, None) => {}
        }
    }
    if let Some(s) = open {
        out.push((s, tags.len()));
    }
    out
}

/// Spans with `sentence_index` 0 and no probabilities; callers fill both.
pub fn decode_spans(tokens: &[String], tags: &[BioTag]) -> Result<Vec<EntitySpan>> {
    if tokens.len() != tags.len() {
        return Err(Error::Dimension(format!("{} tokens, {} tags", tokens.len(), tags.len())));
    }
    Ok(span_ranges(tags)
        .into_iter()
        .map(|(start, end)| EntitySpan {
            sentence_index: 0,
            start,
            end,
            surface: tokens[start..end].join(" "),
            pico_probs: None,
            class: None,
        })
        .collect())
}

/// Inverse of [`span_ranges`] for non-overlapping, non-empty spans.
pub fn encode_tags(len: usize, spans: &[(usize, usize)]) -> Result<Vec<BioTag>> {
    let mut tags = vec![BioTag::O; len];
    for &(s, e) in spans {
        if s >= e || e > len {
            return Err(Error::Dimension(format!("span [{s}, {e}) invalid for length {len}")));
        }
        if tags[s..e].iter().any(|&t| t != BioTag::O) {
            return Err(Error::Config(format!("span [{s}, {e}) overlaps another span")));
        }
        tags[s] = BioTag::B;
        tags[s + 1..e].iter_mut().for_each(|t| *t = BioTag::I);
    }
    Ok(tags)
}

/// Tags sentences whose label is in `scope`; spans carry their sentence's probabilities.
pub fn extract_from_document(doc: &Document, model: &DnerModel, scope: &[PicoLabel]) -> Result<Vec<EntitySpan>> {
    let mut out = Vec::new();
    for s in &doc.sentences {
        if !s.pico_label.is_some_and(|l| scope.contains(&l)) || s.tokens.is_empty() {
            continue;
        }
        let tags = tag_sentence(model, &s.tokens)?;
        for mut span in decode_spans(&s.tokens, &tags)? {
            span.sentence_index = s.index;
            span.pico_probs = s.pico_probs;
            out.push(span);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnerEval {
    pub entity: Counts,
    pub entity_prf: Prf,
    pub token_accuracy: f64,
    /// Token-level counts over non-`O` tags (B and I pooled).
    pub token: Counts,
    pub token_prf: Prf,
}

/// Exact-span entity matching plus token-level figures.
pub fn evaluate_dner(model: &DnerModel, corpus: &BioCorpus) -> Result<DnerEval> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    let (mut right, mut total) = (0usize, 0usize);
    let mut token = Counts::default();
    for (k, s) in corpus.sentences.iter().enumerate() {
        if s.tokens.is_empty() {
            continue;
        }
        let tags = tag_sentence(model, &s.tokens)?;
        gold.extend(span_ranges(&s.tags).into_iter().map(|(a, b)| (k, a, b)));
        pred.extend(span_ranges(&tags).into_iter().map(|(a, b)| (k, a, b)));
        for (g, p) in s.tags.iter().zip(&tags) {
            total += 1;
            right += usize::from(g == p);
            match (*g != BioTag::O, *p != BioTag::O) {
                (true, true) if g == p => token.tp += 1,
                (true, true) => {
                    token.fp += 1;
                    token.fn_ += 1;
                }
                (false, true) => token.fp += 1,
                (true, false) => token.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let entity = entity_counts(&gold, &pred);
    Ok(DnerEval {
        entity,
        entity_prf: prf(entity),
        token_accuracy: if total == 0 { 0.0 } else { right as f64 / total as f64 },
        token,
        token_prf: prf(token),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnerEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub steps: usize,
    pub valid: DnerEval,
}

#[derive(Clone, Debug)]
pub struct DnerTraining {
    /// Parameters from the epoch with the best validation entity F1.
    pub model: DnerModel,
    pub best_epoch: usize,
    pub history: Vec<DnerEpoch>,
}

/// Mini-batch Adam on the sentence loss averaged over each batch.
pub fn train_dner(mut model: DnerModel, train: &BioCorpus, valid: &BioCorpus) -> Result<DnerTraining> {
    let train_items: Vec<&BioSentence> = train.sentences.iter().filter(|s| !s.tokens.is_empty()).collect();
    if train_items.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    model.check_tag_order()?;
    let cfg = model.config.clone();
    let root = Rng::new(cfg.seed).split("dner/train");
    let mut opt = OptimizerState::new(cfg.adam);
    let mut grads = zeros_like(&model.params);
    let batch = cfg.batch_size.max(1);
    let eval_set = if valid.is_empty() { train } else { valid };
    let mut best: Option<(f64, usize, DnerParams)> = None;
    let mut since_best = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        if cfg.shuffle {
            root.split(&format!("order/{epoch}")).shuffle(&mut order);
        }
        let mut drop_rng = root.split(&format!("dropout/{epoch}"));
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(batch) {
            grads.zero_grad();
            for &i in chunk {
                let drop = (cfg.dropout > 0.0).then_some(&mut drop_rng);
                total += model.loss_and_grad(train_items[i], drop, &mut grads)?;
            }
            grads.scale_all(1.0 / chunk.len() as f64);
            opt.update(&mut model.params, &grads)?;
            steps += 1;
        }
        let eval = evaluate_dner(&model, eval_set)?;
        let f1 = eval.entity_prf.f1;
        history.push(DnerEpoch {
            epoch,
            loss: total / train_items.len() as f64,
            steps,
            valid: eval,
        });
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.stop_at_f1.is_some_and(|t| f1 >= t) || cfg.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    let best_epoch = match best {
        Some((_, e, params)) => {
            model.params = params;
            e
        }
        None => 0,
    };
    Ok(DnerTraining {
        model,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use crate::fixtures::bio_fixture;
    use crate::kgraph::{KnowledgeGraph, NodeEmbeddings};
    use crate::numerics::{grad_check_params, Rng};
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(ToString::to_string).collect()
    }

    fn small(head: HeadKind, chars: CharKind) -> DnerConfig {
        DnerConfig {
            word_dim: 8,
            hidden: 6,
            chars,
            head,
            dropout: 0.0,
            ..DnerConfig::default()
        }
    }

    fn graph(dim: usize, zero: bool) -> GraphEmbedding {
        let mut g = KnowledgeGraph::new();
        g.add_node("C1", "cancer");
        g.add_node("C2", "stroke");
        let mut vectors = Mat::filled(2, dim, 0.5);
        if zero {
            vectors.fill(0.0);
        }
        GraphEmbedding {
            graph: g,
            embeddings: NodeEmbeddings { vectors },
        }
    }

    #[test]
    fn feature_dimensions() {
        let v = build_vocabulary(["breast", "cancer"], 1);
        let word = DnerModel::new(v.clone(), None, DnerConfig { chars: CharKind::None, ..DnerConfig::default() });
        assert_eq!(assemble_features(&toks("breast cancer"), &word).unwrap()[0].len(), 100);
        let full = DnerModel::new(v, Some(graph(64, false)), DnerConfig::default());
        let f = assemble_features(&toks("breast cancer gout"), &full).unwrap();
        assert!(f.iter().all(|x| x.len() == 194));
        assert!(f[0][130..].iter().all(|&x| x == 0.0));
        assert!(f[1][130..].iter().all(|&x| x == 0.5));
        assert!(f[2][130..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_softmax_model_tags_everything_b() {
        let v = build_vocabulary(["a", "b"], 1);
        let mut m = DnerModel::new(v, None, small(HeadKind::Softmax, CharKind::None));
        m.params.emission = Affine::zeros(12, 3);
        assert_eq!(tag_sentence(&m, &toks("a b a")).unwrap(), vec![BioTag::B; 3]);
        assert_eq!(decode_spans(&toks("a b a"), &[BioTag::B; 3]).unwrap().len(), 3);
    }

    #[test]
    fn hard_bio_never_emits_i_after_o() {
        let v = build_vocabulary(["a"], 1);
        let cfg = DnerConfig {
            hard_bio: true,
            ..small(HeadKind::Crf, CharKind::None)
        };
        let mut m = DnerModel::new(v, None, cfg);
        m.params.emission.weight.fill(0.0);
        m.params.emission.bias = Mat::column(vec![-5.0, 5.0, 0.0]);
        let tags = tag_sentence(&m, &toks("a a a a")).unwrap();
        assert_eq!(tags[0], BioTag::B, "{tags:?}");
        for w in tags.windows(2) {
            assert!(!(w[0] == BioTag::O && w[1] == BioTag::I));
        }
    }

    #[test]
    fn decode_examples() {
        use BioTag::*;
        let spans = decode_spans(&toks("breast cancer , CHD"), &[B, I, O, B]).unwrap();
        let surfaces: Vec<&str> = spans.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, vec!["breast cancer", "CHD"]);
        assert!(decode_spans(&toks("a b"), &[O, O]).unwrap().is_empty());
        let repaired = decode_spans(&toks("a b"), &[I, I]).unwrap();
        assert_eq!((repaired.len(), repaired[0].start, repaired[0].end), (1, 0, 2));
        assert_eq!(span_ranges(&[O, I, B, I, O, I]), vec![(1, 2), (2, 4), (5, 6)]);
        assert!(decode_spans(&toks("a"), &[O, O]).is_err());
        assert!(encode_tags(3, &[(0, 2), (1, 3)]).is_err());
        assert!(encode_tags(3, &[(2, 4)]).is_err());
    }

    fn random_spans(len: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut t = 0;
        while t < len {
            if rng.bernoulli(0.3) {
                let e = (t + 1 + rng.below(3)).min(len);
                spans.push((t, e));
                t = e;
            } else {
                t += 1;
            }
        }
        spans
    }

    #[test]
    fn encode_decode_round_trip_1000() {
        let mut rng = Rng::new(2024);
        for _ in 0..1000 {
            let len = rng.below(15);
            let spans = random_spans(len, &mut rng);
            assert_eq!(span_ranges(&encode_tags(len, &spans).unwrap()), spans);
        }
    }

    proptest! {
        #[test]
        fn decoded_spans_never_cover_o(tags in proptest::collection::vec(0usize..3, 0..20)) {
            let tags: Vec<BioTag> = tags.into_iter().map(|i| BioTag::ALL[i]).collect();
            let spans = span_ranges(&tags);
            for &(s, e) in &spans {
                prop_assert!(s < e && e <= tags.len());
                prop_assert!(tags[s..e].iter().all(|&t| t != BioTag::O));
            }
            let covered: usize = spans.iter().map(|(s, e)| e - s).sum();
            prop_assert_eq!(covered, tags.iter().filter(|&&t| t != BioTag::O).count());
        }
    }

    #[test]
    fn full_model_gradient_check() {
        let v = build_vocabulary(["breast", "cancer", "risk"], 1);
        for chars in [CharKind::Cnn, CharKind::BiLstm] {
            let cfg = DnerConfig {
                word_dim: 3,
                hidden: 2,
                ..small(HeadKind::Crf, chars)
            };
            let mut m = DnerModel::new(v.clone(), None, cfg);
            if let Some(crf) = &mut m.params.crf {
                crf.transitions = Mat::uniform(5, 5, -0.5, 0.5, &mut Rng::new(4));
            }
            let sent = BioSentence {
                tokens: toks("risk breast cancer"),
                tags: vec![BioTag::O, BioTag::B, BioTag::I],
            };
            let mut g = zeros_like(&m.params);
            m.loss_and_grad(&sent, None, &mut g).unwrap();
            let base = m.clone();
            let err = grad_check_params(
                &m.params,
                &g,
                |p: &DnerParams| {
                    let mut mm = base.clone();
                    mm.params = p.clone();
                    let mut scratch = zeros_like(p);
                    mm.loss_and_grad(&sent, None, &mut scratch).unwrap()
                },
                8,
                &mut Rng::new(8),
            )
            .unwrap();
            assert!(err < 1e-4, "{chars:?}: {err}");
        }
    }

    #[test]
    fn softmax_head_gradient_check() {
        let v = build_vocabulary(["a", "b"], 1);
        let m = DnerModel::new(v, Some(graph(2, false)), DnerConfig { word_dim: 3, hidden: 2, ..small(HeadKind::Softmax, CharKind::None) });
        let sent = BioSentence {
            tokens: toks("a cancer b"),
            tags: vec![BioTag::O, BioTag::B, BioTag::O],
        };
        let mut g = zeros_like(&m.params);
        m.loss_and_grad(&sent, None, &mut g).unwrap();
        let base = m.clone();
        let err = grad_check_params(
            &m.params,
            &g,
            |p: &DnerParams| {
                let mut mm = base.clone();
                mm.params = p.clone();
                mm.loss_and_grad(&sent, None, &mut zeros_like(p)).unwrap()
            },
            8,
            &mut Rng::new(9),
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    fn drop_columns(m: &mut Mat, keep: usize) {
        let rows = m.rows();
        let data: Vec<f64> = (0..rows).flat_map(|r| m.row(r)[..keep].to_vec()).collect();
        *m = Mat::from_vec(rows, keep, data).unwrap();
    }

    #[test]
    fn zero_graph_table_changes_nothing() {
        let v = build_vocabulary(["cancer", "in", "women"], 1);
        let cfg = small(HeadKind::Crf, CharKind::Cnn);
        let with = DnerModel::new(v, Some(graph(5, true)), cfg);
        let mut without = with.clone();
        without.graph = None;
        let keep = with.params.lstm.fwd.hidden() + without.feature_dim();
        for dir in [&mut without.params.lstm.fwd, &mut without.params.lstm.bwd] {
            for w in [&mut dir.w_i, &mut dir.w_f, &mut dir.w_o, &mut dir.w_g] {
                drop_columns(w, keep);
            }
        }
        let s = toks("cancer in women");
        assert_eq!(with.emissions(&s).unwrap(), without.emissions(&s).unwrap());
        assert_eq!(tag_sentence(&with, &s).unwrap(), tag_sentence(&without, &s).unwrap());
    }

    #[test]
    fn steps_per_epoch_follow_batch_size() {
        let data = bio_fixture();
        let mut sentences = data.sentences.clone();
        sentences.extend(data.sentences.iter().take(14).cloned());
        let corpus = BioCorpus { sentences };
        assert_eq!(corpus.len(), 64);
        let cfg = DnerConfig {
            epochs: 1,
            ..small(HeadKind::Softmax, CharKind::None)
        };
        let m = DnerModel::new(build_vocabulary(corpus.tokens(), 1), None, cfg);
        let out = train_dner(m, &corpus, &BioCorpus::default()).unwrap();
        assert_eq!(out.history[0].steps, 2);
    }

    #[test]
    fn extraction_respects_scope() {
        let data = bio_fixture();
        let m = DnerModel::new(build_vocabulary(data.tokens(), 1), None, small(HeadKind::Crf, CharKind::None));
        let mut doc = Document::from_text("d", "Title here.\nSecond sentence here.");
        doc.sentences[0].set_probs([0.1, 0.1, 0.1, 0.7]);
        doc.sentences[1].set_probs([0.1, 0.7, 0.1, 0.1]);
        assert!(extract_from_document(&doc, &m, &[PicoLabel::P, PicoLabel::O]).unwrap().is_empty());
        for span in extract_from_document(&doc, &m, &[PicoLabel::IC]).unwrap() {
            assert_eq!(span.sentence_index, 1);
            assert_eq!(span.pico_probs, doc.sentences[1].pico_probs);
        }
    }
}
