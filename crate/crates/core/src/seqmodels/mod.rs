//! Neural sequence layers: the LSTM cell and its bidirectional encoder,
//! character-level encoders, and the two sentence classifiers (Kim-style CNN
//! and BiLSTM final-state).

mod conv;
mod lstm;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use conv::{pad_to, Activation, ConvBank, ConvCache};
pub use lstm::{bilstm_encode, lstm_backward, lstm_cell_step, lstm_forward, BiLstmCache, BiLstmParams, LstmParams, LstmStepCache};

use crate::numerics::{axpy, hadamard, prefixed, Mat, Parameterized, Rng};
use crate::{Error, Result};

/// Default character embedding width.
pub const CHAR_DIM: usize = 30;
/// Output width of the character CNN.
pub const CHAR_CNN_DIM: usize = 30;
/// Hidden size of each direction of the character BiLSTM.
pub const CHAR_LSTM_HIDDEN: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CharEncoderKind {
    Cnn { banks: Vec<ConvBank> },
    BiLstm(BiLstmParams),
}

/// Character embedding table plus either a CNN or a BiLSTM over it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharEncoderParams {
    pub embeddings: Mat,
    pub kind: CharEncoderKind,
}

impl CharEncoderParams {
    /// One width-3 bank with 30 maps, no activation before pooling.
    pub fn new_cnn(char_vocab: usize, rng: &mut Rng) -> Self {
        Self::new_cnn_with(char_vocab, CHAR_DIM, &[(3, CHAR_CNN_DIM)], rng)
    }

    /// `banks` lists `(width, maps)` pairs; the output dimension is the sum of maps.
    pub fn new_cnn_with(char_vocab: usize, char_dim: usize, banks: &[(usize, usize)], rng: &mut Rng) -> Self {
        let embeddings = char_table(char_vocab, char_dim, rng);
        let banks = banks
            .iter()
            .map(|&(w, m)| ConvBank::new(w, char_dim, m, Activation::Identity, rng))
            .collect();
        CharEncoderParams {
            embeddings,
            kind: CharEncoderKind::Cnn { banks },
        }
    }

    pub fn new_lstm(char_vocab: usize, rng: &mut Rng) -> Self {
        Self::new_lstm_with(char_vocab, CHAR_DIM, CHAR_LSTM_HIDDEN, rng)
    }

    pub fn new_lstm_with(char_vocab: usize, char_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let embeddings = char_table(char_vocab, char_dim, rng);
        CharEncoderParams {
            embeddings,
            kind: CharEncoderKind::BiLstm(BiLstmParams::new(char_dim, hidden, rng)),
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            CharEncoderKind::Cnn { banks } => banks.iter().map(ConvBank::maps).sum(),
            CharEncoderKind::BiLstm(p) => p.output_dim(),
        }
    }

    pub fn char_dim(&self) -> usize {
        self.embeddings.cols()
    }

    fn lookup(&self, id: u32) -> usize {
        let id = id as usize;
        if id < self.embeddings.rows() {
            id
        } else {
            0
        }
    }

    pub fn forward(&self, chars: &[u32]) -> Result<(Vec<f64>, CharCache)> {
        if chars.is_empty() {
            return Err(Error::Empty("token has no characters"));
        }
        let ids: Vec<usize> = chars.iter().map(|&c| self.lookup(c)).collect();
        let seq: Vec<Vec<f64>> = ids.iter().map(|&i| self.embeddings.row(i).to_vec()).collect();
        match &self.kind {
            CharEncoderKind::Cnn { banks } => {
                let max_width = banks.iter().map(|b| b.width).max().unwrap_or(1);
                let padded = pad_to(&seq, max_width, self.char_dim());
                let mut out = Vec::with_capacity(self.output_dim());
                let mut caches = Vec::with_capacity(banks.len());
                for b in banks {
                    let (pooled, c) = b.forward(&padded);
                    out.extend(pooled);
                    caches.push(c);
                }
                Ok((
                    out,
                    CharCache {
                        ids,
                        seq: padded,
                        inner: CharCacheInner::Cnn(caches),
                    },
                ))
            }
            CharEncoderKind::BiLstm(p) => {
                let (_, cache) = p.forward(&seq)?;
                let out = BiLstmParams::final_states(&cache);
                Ok((
                    out,
                    CharCache {
                        ids,
                        seq,
                        inner: CharCacheInner::Lstm(cache),
                    },
                ))
            }
        }
    }

    pub fn backward(&self, cache: &CharCache, dout: &[f64], grads: &mut CharEncoderParams) {
        let dseq = match (&self.kind, &cache.inner, &mut grads.kind) {
            (CharEncoderKind::Cnn { banks }, CharCacheInner::Cnn(caches), CharEncoderKind::Cnn { banks: gbanks }) => {
                let mut dseq = vec![vec![0.0; self.char_dim()]; cache.seq.len()];
                let mut offset = 0;
                for ((b, c), gb) in banks.iter().zip(caches).zip(gbanks.iter_mut()) {
                    b.backward(&cache.seq, c, &dout[offset..offset + b.maps()], gb, &mut dseq);
                    offset += b.maps();
                }
                dseq
            }
            (CharEncoderKind::BiLstm(p), CharCacheInner::Lstm(c), CharEncoderKind::BiLstm(gp)) => p.backward_final(c, dout, gp),
            _ => unreachable!("cache and gradient layout must match the encoder"),
        };
        // Pad positions carry a fixed zero embedding and receive no update.
        for (pos, &id) in cache.ids.iter().enumerate() {
            axpy(grads.embeddings.row_mut(id), 1.0, &dseq[pos]);
        }
    }
}

fn char_table(char_vocab: usize, char_dim: usize, rng: &mut Rng) -> Mat {
    let limit = libm::sqrt(3.0 / char_dim as f64);
    Mat::uniform(char_vocab.max(1), char_dim, -limit, limit, rng)
}

impl Parameterized for CharEncoderParams {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![(String::from("embeddings"), &self.embeddings)];
        match &self.kind {
            CharEncoderKind::Cnn { banks } => out.extend(conv::banks_named(banks, "cnn")),
            CharEncoderKind::BiLstm(p) => out.extend(p.named_params().into_iter().map(|(n, m)| (prefixed("lstm", &n), m))),
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.embeddings];
        match &mut self.kind {
            CharEncoderKind::Cnn { banks } => out.extend(conv::banks_mut(banks)),
            CharEncoderKind::BiLstm(p) => out.extend(p.params_mut()),
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct CharCache {
    ids: Vec<usize>,
    seq: Vec<Vec<f64>>,
    inner: CharCacheInner,
}

#[derive(Clone, Debug)]
enum CharCacheInner {
    Cnn(Vec<ConvCache>),
    Lstm(BiLstmCache),
}

/// CNN: embed, convolve, max-pool, concatenate. BiLSTM: final forward ∥ final backward state.
pub fn char_encode(token_chars: &[u32], params: &CharEncoderParams) -> Result<Vec<f64>> {
    Ok(params.forward(token_chars)?.0)
}

/// Affine output layer `W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Mat,
    pub bias: Mat,
}

impl Affine {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Affine {
            weight: Mat::xavier(output, input, rng),
            bias: Mat::zeros(output, 1),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Affine {
            weight: Mat::zeros(output, input),
            bias: Mat::zeros(output, 1),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        axpy(&mut y, 1.0, self.bias.data());
        y
    }

    /// Accumulates gradients and returns `d loss / d x`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Affine) -> Vec<f64> {
        grads.weight.add_outer(dy, x);
        grads.bias.add_to_column(dy);
        self.weight.matvec_t(dy)
    }
}

impl Parameterized for Affine {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        vec![(String::from("weight"), &self.weight), (String::from("bias"), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Kim-style sentence CNN: ReLU banks of widths {3,4,5}, max-pool, affine to class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceCnnParams {
    pub banks: Vec<ConvBank>,
    pub output: Affine,
}

pub const SENTENCE_CNN_WIDTHS: [usize; 3] = [3, 4, 5];
pub const SENTENCE_CNN_MAPS: usize = 100;

impl SentenceCnnParams {
    pub fn new(input_dim: usize, classes: usize, rng: &mut Rng) -> Self {
        Self::with_shape(input_dim, &SENTENCE_CNN_WIDTHS, SENTENCE_CNN_MAPS, classes, rng)
    }

    pub fn with_shape(input_dim: usize, widths: &[usize], maps: usize, classes: usize, rng: &mut Rng) -> Self {
        let banks: Vec<ConvBank> = widths
            .iter()
            .map(|&w| ConvBank::new(w, input_dim, maps, Activation::Relu, rng))
            .collect();
        let features = widths.len() * maps;
        SentenceCnnParams {
            banks,
            output: Affine::new(features, classes, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.banks.iter().map(ConvBank::maps).sum()
    }

    fn max_width(&self) -> usize {
        self.banks.iter().map(|b| b.width).max().unwrap_or(1)
    }

    /// `dropout` is an inverted-dropout mask over the pooled features.
    pub fn forward(&self, sentence: &[Vec<f64>], dropout: Option<&[f64]>) -> Result<(Vec<f64>, SentenceCnnCache)> {
        let dim = self.banks.first().map(ConvBank::input_dim).unwrap_or(0);
        if sentence.is_empty() {
            return Err(Error::Empty("sentence has no tokens"));
        }
        let padded = pad_to(sentence, self.max_width(), dim);
        let mut pooled = Vec::with_capacity(self.feature_dim());
        let mut caches = Vec::with_capacity(self.banks.len());
        for b in &self.banks {
            let (p, c) = b.forward(&padded);
            pooled.extend(p);
            caches.push(c);
        }
        let features = match dropout {
            Some(mask) => hadamard(&pooled, mask),
            None => pooled,
        };
        let logits = self.output.forward(&features);
        Ok((
            logits,
            SentenceCnnCache {
                padded,
                len: sentence.len(),
                caches,
                features,
                mask: dropout.map(<[f64]>::to_vec),
            },
        ))
    }

    /// Returns gradients w.r.t. the (unpadded) input vectors.
    pub fn backward(&self, cache: &SentenceCnnCache, dlogits: &[f64], grads: &mut SentenceCnnParams) -> Vec<Vec<f64>> {
        let mut dfeat = self.output.backward(&cache.features, dlogits, &mut grads.output);
        if let Some(mask) = &cache.mask {
            dfeat = hadamard(&dfeat, mask);
        }
        let dim = cache.padded[0].len();
        let mut dseq = vec![vec![0.0; dim]; cache.padded.len()];
        let mut offset = 0;
        for ((b, c), gb) in self.banks.iter().zip(&cache.caches).zip(grads.banks.iter_mut()) {
            b.backward(&cache.padded, c, &dfeat[offset..offset + b.maps()], gb, &mut dseq);
            offset += b.maps();
        }
        dseq.truncate(cache.len);
        dseq
    }
}

impl Parameterized for SentenceCnnParams {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = conv::banks_named(&self.banks, "");
        out.extend(self.output.named_params().into_iter().map(|(n, m)| (prefixed("output", &n), m)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = conv::banks_mut(&mut self.banks);
        out.extend(self.output.params_mut());
        out
    }
}

#[derive(Clone, Debug)]
pub struct SentenceCnnCache {
    padded: Vec<Vec<f64>>,
    len: usize,
    caches: Vec<ConvCache>,
    features: Vec<f64>,
    mask: Option<Vec<f64>>,
}

/// Class logits of the sentence CNN (inference, no dropout).
pub fn sentence_cnn_logits(sentence: &[Vec<f64>], params: &SentenceCnnParams) -> Result<Vec<f64>> {
    Ok(params.forward(sentence, None)?.0)
}

/// BiLSTM sentence classifier: final forward ∥ final backward state → affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstmClassifierParams {
    pub lstm: BiLstmParams,
    pub output: Affine,
}

impl BiLstmClassifierParams {
    pub fn new(input_dim: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        BiLstmClassifierParams {
            lstm: BiLstmParams::new(input_dim, hidden, &mut rng.split("lstm")),
            output: Affine::new(2 * hidden, classes, &mut rng.split("output")),
        }
    }

    pub fn forward(&self, sentence: &[Vec<f64>], dropout: Option<&[f64]>) -> Result<(Vec<f64>, BiLstmClassifierCache)> {
        let (_, lstm) = self.lstm.forward(sentence)?;
        let finals = BiLstmParams::final_states(&lstm);
        let features = match dropout {
            Some(mask) => hadamard(&finals, mask),
            None => finals,
        };
        let logits = self.output.forward(&features);
        Ok((
            logits,
            BiLstmClassifierCache {
                lstm,
                features,
                mask: dropout.map(<[f64]>::to_vec),
            },
        ))
    }

    pub fn backward(&self, cache: &BiLstmClassifierCache, dlogits: &[f64], grads: &mut BiLstmClassifierParams) -> Vec<Vec<f64>> {
        let mut dfeat = self.output.backward(&cache.features, dlogits, &mut grads.output);
        if let Some(mask) = &cache.mask {
            dfeat = hadamard(&dfeat, mask);
        }
        self.lstm.backward_final(&cache.lstm, &dfeat, &mut grads.lstm)
    }

    pub fn feature_dim(&self) -> usize {
        self.lstm.output_dim()
    }
}

impl Parameterized for BiLstmClassifierParams {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = self
            .lstm
            .named_params()
            .into_iter()
            .map(|(n, m)| (prefixed("lstm", &n), m))
            .collect();
        out.extend(self.output.named_params().into_iter().map(|(n, m)| (prefixed("output", &n), m)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.lstm.params_mut();
        out.extend(self.output.params_mut());
        out
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmClassifierCache {
    lstm: BiLstmCache,
    features: Vec<f64>,
    mask: Option<Vec<f64>>,
}
