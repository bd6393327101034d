//! Checkpoint container, layout in `docs/checkpoint.md`:
//!
//! ```text
//! pico-extract-checkpoint/1\n
//! {json header}\n
//! payload: little-endian f64 tensors, back to back, in header order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pico_core::corpus::{BioTag, PicoLabel, Vocabulary};
use pico_core::dner::{DnerConfig, DnerModel};
use pico_core::kgraph::{GraphEmbedding, KnowledgeGraph, NodeEmbeddings};
use pico_core::numerics::{Mat, Parameterized};
use pico_core::pico::{PicoConfig, PicoModel};

use crate::error::{write_file, Error, Result};

pub const MAGIC: &str = "pico-extract-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Meta {
    Pico {
        config: PicoConfig,
        vocab: Vocabulary,
        class_order: Vec<PicoLabel>,
    },
    Dner {
        config: DnerConfig,
        vocab: Vocabulary,
        tag_order: Vec<BioTag>,
        graph: Option<KnowledgeGraph>,
    },
    Graph {
        graph: KnowledgeGraph,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: Meta,
    tensors: Vec<TensorEntry>,
}

/// Anything that can be stored in a checkpoint.
#[derive(Clone, Debug)]
pub enum Model {
    Pico(PicoModel),
    Dner(DnerModel),
    Graph(GraphEmbedding),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Pico(_) => "pico",
            Model::Dner(_) => "dner",
            Model::Graph(_) => "graph",
        }
    }
}

fn prefixed<'a>(prefix: &str, params: Vec<(String, &'a Mat)>) -> Vec<(String, &'a Mat)> {
    params.into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)).collect()
}

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let (meta, tensors) = match model {
        Model::Pico(m) => (
            Meta::Pico {
                config: m.config.clone(),
                vocab: m.vocab.clone(),
                class_order: m.class_order.to_vec(),
            },
            prefixed("pico", m.params.named_params()),
        ),
        Model::Dner(m) => {
            let mut t = prefixed("dner", m.params.named_params());
            if let Some(g) = &m.graph {
                t.push(("graph.phi".into(), &g.embeddings.vectors));
            }
            (
                Meta::Dner {
                    config: m.config.clone(),
                    vocab: m.vocab.clone(),
                    tag_order: m.tag_order.to_vec(),
                    graph: m.graph.as_ref().map(|g| g.graph.clone()),
                },
                t,
            )
        }
        Model::Graph(g) => (Meta::Graph { graph: g.graph.clone() }, vec![("graph.phi".into(), &g.embeddings.vectors)]),
    };
    let header = Header {
        meta,
        tensors: tensors
            .iter()
            .map(|(n, m)| TensorEntry {
                name: n.clone(),
                shape: [m.rows(), m.cols()],
            })
            .collect(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(serde_json::to_string(&header)?.as_bytes());
    out.push(b'\n');
    for (_, m) in &tensors {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits a checkpoint into its JSON header and named tensors without
/// interpreting the model kind.
pub fn read_tensors(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(TensorEntry, Vec<f64>)>)> {
    let (header, tensors) = split(bytes)?;
    Ok((serde_json::from_slice(header)?, tensors))
}

fn split(bytes: &[u8]) -> Result<(&[u8], Vec<(TensorEntry, Vec<f64>)>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let magic_end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing version header"))?;
    let magic = std::str::from_utf8(&bytes[..magic_end]).map_err(|_| bad("missing version header"))?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("unsupported version header `{magic}` (expected `{MAGIC}`)")));
    }
    let rest = &bytes[magic_end + 1..];
    let header_end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
    let header = &rest[..header_end];
    #[derive(Deserialize)]
    struct Entries {
        tensors: Vec<TensorEntry>,
    }
    let entries: Entries = serde_json::from_slice(header)?;
    let mut payload = &rest[header_end + 1..];
    let mut out = Vec::with_capacity(entries.tensors.len());
    for t in entries.tensors {
        let n = t.shape[0].checked_mul(t.shape[1]).ok_or_else(|| bad("tensor shape overflows"))?;
        let len = n.checked_mul(8).filter(|&l| l <= payload.len()).ok_or_else(|| Error::Checkpoint(format!("payload truncated in `{}`", t.name)))?;
        let data = payload[..len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        payload = &payload[len..];
        out.push((t, data));
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing payload bytes", payload.len())));
    }
    Ok((header, out))
}

fn fill<P: Parameterized>(params: &mut P, prefix: &str, tensors: &mut Vec<(TensorEntry, Vec<f64>)>) -> Result<()> {
    let names: Vec<(String, (usize, usize))> = params
        .named_params()
        .into_iter()
        .map(|(n, m)| (format!("{prefix}.{n}"), m.shape()))
        .collect();
    for ((name, shape), dst) in names.into_iter().zip(params.params_mut()) {
        let pos = tensors
            .iter()
            .position(|(t, _)| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        let (entry, data) = tensors.swap_remove(pos);
        if (entry.shape[0], entry.shape[1]) != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                entry.shape,
                [shape.0, shape.1]
            )));
        }
        dst.data_mut().copy_from_slice(&data);
    }
    Ok(())
}

fn take_phi(tensors: &mut Vec<(TensorEntry, Vec<f64>)>, nodes: usize) -> Result<Mat> {
    let pos = tensors
        .iter()
        .position(|(t, _)| t.name == "graph.phi")
        .ok_or_else(|| Error::Checkpoint("missing tensor `graph.phi`".into()))?;
    let (entry, data) = tensors.swap_remove(pos);
    if entry.shape[0] != nodes {
        return Err(Error::Checkpoint(format!("graph.phi has {} rows for {nodes} nodes", entry.shape[0])));
    }
    Ok(Mat::from_vec(entry.shape[0], entry.shape[1], data)?)
}

/// Rebuilds the model from its stored configuration, then overwrites every
/// parameter by name. Missing, extra or misshapen tensors are errors.
pub fn decode(bytes: &[u8]) -> Result<Model> {
    let (header, mut tensors) = split(bytes)?;
    let header: Header = serde_json::from_slice(header)?;
    let model = match header.meta {
        Meta::Pico {
            config,
            vocab,
            class_order,
        } => {
            if class_order != PicoLabel::ALL {
                return Err(Error::Checkpoint(format!("class order {class_order:?} differs from {:?}", PicoLabel::ALL)));
            }
            let mut m = PicoModel::new(vocab, config);
            fill(&mut m.params, "pico", &mut tensors)?;
            Model::Pico(m)
        }
        Meta::Dner {
            config,
            vocab,
            tag_order,
            graph,
        } => {
            if tag_order != BioTag::ALL {
                return Err(Error::Checkpoint(format!("tag order {tag_order:?} differs from {:?}", BioTag::ALL)));
            }
            let graph = match graph {
                Some(g) => {
                    let vectors = take_phi(&mut tensors, g.node_count())?;
                    Some(GraphEmbedding {
                        graph: g,
                        embeddings: NodeEmbeddings { vectors },
                    })
                }
                None => None,
            };
            let mut m = DnerModel::new(vocab, graph, config);
            fill(&mut m.params, "dner", &mut tensors)?;
            Model::Dner(m)
        }
        Meta::Graph { graph } => {
            let vectors = take_phi(&mut tensors, graph.node_count())?;
            Model::Graph(GraphEmbedding {
                graph,
                embeddings: NodeEmbeddings { vectors },
            })
        }
    };
    if let Some((t, _)) = tensors.first() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{}`", t.name)));
    }
    Ok(model)
}

/// Hex SHA-256 of the checkpoint bytes.
pub fn version_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the checkpoint and returns its version hash.
pub fn save(path: &Path, model: &Model) -> Result<String> {
    let bytes = encode(model)?;
    write_file(path, &bytes)?;
    Ok(version_hash(&bytes))
}

/// Loads a checkpoint and returns it with its version hash.
pub fn load(path: &Path) -> Result<(Model, String)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let model = decode(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok((model, version_hash(&bytes)))
}

fn wrong_kind(path: &Path, want: &str, got: &Model) -> Error {
    Error::Checkpoint(format!("{}: expected a {want} checkpoint, found {}", path.display(), got.kind()))
}

pub fn load_pico(path: &Path) -> Result<(PicoModel, String)> {
    match load(path)? {
        (Model::Pico(m), v) => Ok((m, v)),
        (other, _) => Err(wrong_kind(path, "pico", &other)),
    }
}

pub fn load_dner(path: &Path) -> Result<(DnerModel, String)> {
    match load(path)? {
        (Model::Dner(m), v) => Ok((m, v)),
        (other, _) => Err(wrong_kind(path, "dner", &other)),
    }
}

pub fn load_graph(path: &Path) -> Result<(GraphEmbedding, String)> {
    match load(path)? {
        (Model::Graph(g), v) => Ok((g, v)),
        (other, _) => Err(wrong_kind(path, "graph", &other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pico_core::corpus::build_vocabulary;
    use pico_core::dner::CharKind;
    use pico_core::fixtures;
    use pico_core::kgraph::bridged_cliques;
    use pico_core::numerics::Rng;
    use pico_core::pico::PicoVariant;

    fn small_pico(variant: PicoVariant) -> PicoModel {
        let data = fixtures::pico_fixture();
        let config = PicoConfig {
            variant,
            word_dim: 6,
            hidden: 4,
            cnn_maps: 3,
            seed: 99,
            ..PicoConfig::default()
        };
        PicoModel::new(build_vocabulary(data.tokens(), 1), config)
    }

    fn small_dner(graph: bool) -> DnerModel {
        let corpus = fixtures::bio_fixture();
        let graph = graph.then(|| {
            let g = bridged_cliques(3);
            let mut rng = Rng::new(3);
            GraphEmbedding {
                embeddings: NodeEmbeddings {
                    vectors: Mat::uniform(g.node_count(), 4, -1.0, 1.0, &mut rng),
                },
                graph: g,
            }
        });
        let config = DnerConfig {
            word_dim: 5,
            hidden: 3,
            chars: CharKind::BiLstm,
            hard_bio: true,
            seed: 4,
            ..DnerConfig::default()
        };
        DnerModel::new(build_vocabulary(corpus.tokens(), 1), graph, config)
    }

    fn perturb<P: Parameterized>(p: &mut P) {
        for (k, m) in p.params_mut().into_iter().enumerate() {
            for (i, v) in m.data_mut().iter_mut().enumerate() {
                *v += 1e-3 * (k + i) as f64 + 1.0 / 7.0;
            }
        }
    }

    #[test]
    fn pico_round_trip_is_exact() {
        for variant in [PicoVariant::Cnn, PicoVariant::BiLstm] {
            let mut m = small_pico(variant);
            perturb(&mut m.params);
            let bytes = encode(&Model::Pico(m.clone())).unwrap();
            let Model::Pico(back) = decode(&bytes).unwrap() else { panic!() };
            assert_eq!(back, m);
            assert_eq!(encode(&Model::Pico(back)).unwrap(), bytes);
        }
    }

    #[test]
    fn dner_round_trip_with_graph() {
        for with_graph in [false, true] {
            let mut m = small_dner(with_graph);
            perturb(&mut m.params);
            let bytes = encode(&Model::Dner(m.clone())).unwrap();
            let Model::Dner(back) = decode(&bytes).unwrap() else { panic!() };
            assert_eq!(back, m);
        }
    }

    #[test]
    fn tensor_names_are_namespaced() {
        let bytes = encode(&Model::Dner(small_dner(true))).unwrap();
        let (header, tensors) = read_tensors(&bytes).unwrap();
        assert_eq!(header["kind"], "dner");
        let names: Vec<&str> = tensors.iter().map(|(t, _)| t.name.as_str()).collect();
        assert!(names.contains(&"dner.lstm.fwd.w_i"), "{names:?}");
        assert!(names.contains(&"dner.crf.transitions"));
        assert!(names.contains(&"graph.phi"));
        let bytes = encode(&Model::Pico(small_pico(PicoVariant::Cnn))).unwrap();
        let (_, tensors) = read_tensors(&bytes).unwrap();
        assert!(tensors.iter().any(|(t, _)| t.name.starts_with("pico.cnn.")));
    }

    #[test]
    fn payload_is_little_endian_f64() {
        let mut g = KnowledgeGraph::new();
        g.add_node("a", "A");
        let emb = GraphEmbedding {
            graph: g,
            embeddings: NodeEmbeddings {
                vectors: Mat::from_vec(1, 2, vec![1.0, -0.5]).unwrap(),
            },
        };
        let bytes = encode(&Model::Graph(emb)).unwrap();
        let tail = &bytes[bytes.len() - 16..];
        assert_eq!(tail[..8], 1.0f64.to_le_bytes());
        assert_eq!(tail[8..], (-0.5f64).to_le_bytes());
        assert!(bytes.starts_with(b"pico-extract-checkpoint/1\n{"));
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = encode(&Model::Pico(small_pico(PicoVariant::Cnn))).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut wrong = bytes.clone();
        wrong[22] = b'9';
        assert!(decode(&wrong).unwrap_err().to_string().contains("version header"));
    }

    #[test]
    fn class_order_is_checked() {
        let bytes = encode(&Model::Pico(small_pico(PicoVariant::Cnn))).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let end = nl + 1 + bytes[nl + 1..].iter().position(|&b| b == b'\n').unwrap();
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[nl + 1..end]).unwrap();
        header["class_order"] = serde_json::json!(["IC", "P", "O", "N"]);
        let mut forged = bytes[..=nl].to_vec();
        forged.extend_from_slice(serde_json::to_string(&header).unwrap().as_bytes());
        forged.extend_from_slice(&bytes[end..]);
        assert!(decode(&forged).unwrap_err().to_string().contains("class order"));
    }

    #[test]
    fn version_hash_tracks_content() {
        let a = encode(&Model::Pico(small_pico(PicoVariant::Cnn))).unwrap();
        let mut m = small_pico(PicoVariant::Cnn);
        perturb(&mut m.params);
        let b = encode(&Model::Pico(m)).unwrap();
        assert_eq!(version_hash(&a).len(), 64);
        assert_ne!(version_hash(&a), version_hash(&b));
        assert_eq!(version_hash(&a), version_hash(&a.clone()));
    }
}
