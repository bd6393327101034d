//! Sentence classification into P, IC, O and N with a CNN or BiLSTM over
//! word embeddings. Class probabilities are kept on every sentence.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, PicoLabel, Vocabulary};
use crate::evalmetrics::{macro_f1, pico_report, Counts, Prf};
use crate::numerics::{
    argmax, dropout_mask, prefixed, softmax, softmax_cross_entropy, zeros_like, AdamConfig, Mat, OptimizerState, Parameterized, Rng,
};
use crate::seqmodels::{BiLstmClassifierParams, SentenceCnnParams, SENTENCE_CNN_MAPS, SENTENCE_CNN_WIDTHS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PicoVariant {
    Cnn,
    BiLstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicoConfig {
    pub variant: PicoVariant,
    pub word_dim: usize,
    /// BiLSTM hidden size per direction.
    pub hidden: usize,
    pub cnn_widths: Vec<usize>,
    pub cnn_maps: usize,
    pub dropout: f64,
    pub epochs: usize,
    /// 0 means full-batch.
    pub batch_size: usize,
    pub shuffle: bool,
    pub patience: Option<usize>,
    pub class_weights: Option<[f64; 4]>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PicoConfig {
    fn default() -> Self {
        PicoConfig {
            variant: PicoVariant::Cnn,
            word_dim: 100,
            hidden: 100,
            cnn_widths: SENTENCE_CNN_WIDTHS.to_vec(),
            cnn_maps: SENTENCE_CNN_MAPS,
            dropout: 0.5,
            epochs: 30,
            batch_size: 32,
            shuffle: true,
            patience: None,
            class_weights: None,
            adam: AdamConfig::default(),
            seed: 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PicoNet {
    Cnn(SentenceCnnParams),
    BiLstm(BiLstmClassifierParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicoParams {
    pub embeddings: Mat,
    pub net: PicoNet,
}

impl Parameterized for PicoParams {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![(String::from("embeddings"), &self.embeddings)];
        let (prefix, inner) = match &self.net {
            PicoNet::Cnn(p) => ("cnn", p.named_params()),
            PicoNet::BiLstm(p) => ("lstm", p.named_params()),
        };
        out.extend(inner.into_iter().map(|(n, m)| (prefixed(prefix, &n), m)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.embeddings];
        match &mut self.net {
            PicoNet::Cnn(p) => out.extend(p.params_mut()),
            PicoNet::BiLstm(p) => out.extend(p.params_mut()),
        }
        out
    }
}

enum NetCache {
    Cnn(crate::seqmodels::SentenceCnnCache),
    BiLstm(crate::seqmodels::BiLstmClassifierCache),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicoModel {
    pub config: PicoConfig,
    pub vocab: Vocabulary,
    pub params: PicoParams,
    /// Always `PicoLabel::ALL`; stored so checkpoints can be checked on load.
    pub class_order: [PicoLabel; 4],
}

impl PicoModel {
    pub fn new(vocab: Vocabulary, config: PicoConfig) -> Self {
        let rng = Rng::new(config.seed).split("pico/init");
        let embeddings = Mat::uniform(vocab.len(), config.word_dim, -0.1, 0.1, &mut rng.split("embeddings"));
        let net = match config.variant {
            PicoVariant::Cnn => PicoNet::Cnn(SentenceCnnParams::with_shape(
                config.word_dim,
                &config.cnn_widths,
                config.cnn_maps,
                4,
                &mut rng.split("cnn"),
            )),
            PicoVariant::BiLstm => PicoNet::BiLstm(BiLstmClassifierParams::new(config.word_dim, config.hidden, 4, &mut rng.split("lstm"))),
        };
        PicoModel {
            config,
            vocab,
            params: PicoParams { embeddings, net },
            class_order: PicoLabel::ALL,
        }
    }

    /// Zeroes the output layer, so every sentence gets the uniform distribution.
    pub fn zero_output(&mut self) {
        let out = match &mut self.params.net {
            PicoNet::Cnn(p) => &mut p.output,
            PicoNet::BiLstm(p) => &mut p.output,
        };
        out.weight.fill(0.0);
        out.bias.fill(0.0);
    }

    pub fn check_class_order(&self) -> Result<()> {
        if self.class_order != PicoLabel::ALL {
            return Err(Error::Config(format!("unexpected class order {:?}", self.class_order)));
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        match &self.params.net {
            PicoNet::Cnn(p) => p.feature_dim(),
            PicoNet::BiLstm(p) => p.feature_dim(),
        }
    }

    fn embed(&self, tokens: &[String]) -> (Vec<usize>, Vec<Vec<f64>>) {
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocab.word_id(t) as usize).collect();
        let rows = ids.iter().map(|&i| self.params.embeddings.row(i).to_vec()).collect();
        (ids, rows)
    }

    fn forward(&self, tokens: &[String], mask: Option<&[f64]>) -> Result<(Vec<f64>, Vec<usize>, NetCache)> {
        if tokens.is_empty() {
            return Err(Error::Empty("sentence has no tokens"));
        }
        let (ids, rows) = self.embed(tokens);
        let (logits, cache) = match &self.params.net {
            PicoNet::Cnn(p) => {
                let (l, c) = p.forward(&rows, mask)?;
                (l, NetCache::Cnn(c))
            }
            PicoNet::BiLstm(p) => {
                let (l, c) = p.forward(&rows, mask)?;
                (l, NetCache::BiLstm(c))
            }
        };
        Ok((logits, ids, cache))
    }

    fn backward(&self, ids: &[usize], cache: &NetCache, dlogits: &[f64], grads: &mut PicoParams) {
        let drows = match (&self.params.net, cache, &mut grads.net) {
            (PicoNet::Cnn(p), NetCache::Cnn(c), PicoNet::Cnn(g)) => p.backward(c, dlogits, g),
            (PicoNet::BiLstm(p), NetCache::BiLstm(c), PicoNet::BiLstm(g)) => p.backward(c, dlogits, g),
            _ => unreachable!("gradient buffer shares the model layout"),
        };
        for (&id, d) in ids.iter().zip(&drows) {
            for (e, v) in grads.embeddings.row_mut(id).iter_mut().zip(d) {
                *e += v;
            }
        }
    }

    /// Class distribution in the order P, IC, O, N.
    pub fn classify_tokens(&self, tokens: &[String]) -> Result<[f64; 4]> {
        let (logits, _, _) = self.forward(tokens, None)?;
        let p = softmax(&logits);
        Ok([p[0], p[1], p[2], p[3]])
    }

    /// Softmax cross-entropy of one sentence and its gradient contribution.
    fn loss_and_grad(&self, item: &PicoItem, mask: Option<&[f64]>, grads: &mut PicoParams) -> Result<f64> {
        let (logits, ids, cache) = self.forward(&item.tokens, mask)?;
        let w = self.config.class_weights.map_or(1.0, |cw| cw[item.label.index()]);
        let (loss, dlogits) = softmax_cross_entropy(&logits, item.label.index(), w);
        self.backward(&ids, &cache, &dlogits, grads);
        Ok(loss)
    }
}

/// Fills `pico_probs` and `pico_label` for every sentence.
pub fn classify_document(model: &PicoModel, doc: &Document) -> Result<Document> {
    if doc.sentences.is_empty() {
        return Err(Error::Empty("document has no sentences"));
    }
    let mut out = doc.clone();
    for s in &mut out.sentences {
        let probs = model.classify_tokens(&s.tokens)?;
        s.set_probs(probs);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PicoItem {
    pub tokens: Vec<String>,
    pub label: PicoLabel,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PicoDataset {
    pub items: Vec<PicoItem>,
}

impl PicoDataset {
    pub fn new(items: Vec<PicoItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("empty dataset"));
        }
        if items.iter().any(|i| i.tokens.is_empty()) {
            return Err(Error::Empty("dataset item without tokens"));
        }
        Ok(PicoDataset { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<PicoLabel> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn histogram(&self) -> BTreeMap<PicoLabel, usize> {
        let mut h = BTreeMap::new();
        for i in &self.items {
            *h.entry(i.label).or_insert(0) += 1;
        }
        h
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.items.iter().flat_map(|i| i.tokens.iter().map(String::as_str))
    }

    /// Seeded split stratified by class; each class contributes
    /// `round(n · ratio)` items to the training side.
    pub fn stratified_split(&self, ratio: f64, seed: u64) -> (PicoDataset, PicoDataset) {
        let rng = Rng::new(seed).split("pico/split");
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for class in PicoLabel::ALL {
            let mut idx: Vec<usize> = (0..self.items.len()).filter(|&i| self.items[i].label == class).collect();
            rng.split(class.as_str()).shuffle(&mut idx);
            let cut = libm::round(idx.len() as f64 * ratio) as usize;
            for (k, &i) in idx.iter().enumerate() {
                let dst = if k < cut { &mut train } else { &mut valid };
                dst.push((i, self.items[i].clone()));
            }
        }
        let finish = |mut v: Vec<(usize, PicoItem)>| {
            v.sort_by_key(|(i, _)| *i);
            PicoDataset {
                items: v.into_iter().map(|(_, item)| item).collect(),
            }
        };
        (finish(train), finish(valid))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicoEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub valid: Vec<(PicoLabel, Counts, Prf)>,
    pub macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct PicoTraining {
    /// Parameters from the epoch with the best validation macro-F1.
    pub model: PicoModel,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub history: Vec<PicoEpoch>,
}

pub fn predict_labels(model: &PicoModel, data: &PicoDataset) -> Result<Vec<PicoLabel>> {
    data.items
        .iter()
        .map(|i| {
            let p = model.classify_tokens(&i.tokens)?;
            Ok(PicoLabel::ALL[argmax(&p)])
        })
        .collect()
}

pub fn accuracy(model: &PicoModel, data: &PicoDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = predict_labels(model, data)?;
    let hits = pred.iter().zip(&data.items).filter(|(p, i)| **p == i.label).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Mean (weighted) cross-entropy over `data` without dropout.
pub fn mean_loss(model: &PicoModel, data: &PicoDataset) -> Result<f64> {
    let mut total = 0.0;
    for item in &data.items {
        let (logits, _, _) = model.forward(&item.tokens, None)?;
        let w = model.config.class_weights.map_or(1.0, |cw| cw[item.label.index()]);
        total += softmax_cross_entropy(&logits, item.label.index(), w).0;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Mini-batch Adam on cross-entropy; the returned model is the best
/// validation macro-F1 checkpoint (earliest on ties).
pub fn train_pico(mut model: PicoModel, train: &PicoDataset, valid: &PicoDataset) -> Result<PicoTraining> {
    if train.is_empty() {
        return Err(Error::Empty("empty dataset"));
    }
    model.check_class_order()?;
    let cfg = model.config.clone();
    let root = Rng::new(cfg.seed).split("pico/train");
    let mut opt = OptimizerState::new(cfg.adam);
    let mut grads = zeros_like(&model.params);
    let initial_loss = mean_loss(&model, train)?;
    let batch = if cfg.batch_size == 0 { train.len() } else { cfg.batch_size };
    let mut best: Option<(f64, f64, usize, PicoParams)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            root.split(&format!("order/{epoch}")).shuffle(&mut order);
        }
        let mut drop_rng = root.split(&format!("dropout/{epoch}"));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grads.zero_grad();
            for &i in chunk {
                let mask = (cfg.dropout > 0.0).then(|| dropout_mask(model.feature_dim(), cfg.dropout, &mut drop_rng, true));
                epoch_loss += model.loss_and_grad(&train.items[i], mask.as_deref(), &mut grads)?;
            }
            grads.scale_all(1.0 / chunk.len() as f64);
            opt.update(&mut model.params, &grads)?;
        }
        let eval = if valid.is_empty() { train } else { valid };
        let report = pico_report(&eval.labels(), &predict_labels(&model, eval)?)?;
        let f1 = macro_f1(&report);
        let loss = epoch_loss / train.len() as f64;
        history.push(PicoEpoch {
            epoch,
            loss,
            train_accuracy: accuracy(&model, train)?,
            valid: report,
            macro_f1: f1,
        });
        // ties on macro-F1 go to the lower training loss
        if best.as_ref().is_none_or(|(b, l, _, _)| f1 > *b || (f1 == *b && loss < *l)) {
            best = Some((f1, loss, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, _, e, params)) => {
            model.params = params;
            e
        }
        None => 0,
    };
    Ok(PicoTraining {
        model,
        best_epoch,
        initial_loss,
        history,
    })
}
