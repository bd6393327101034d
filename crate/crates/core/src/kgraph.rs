//! Knowledge-graph node embeddings: truncated uniform random walks fed to a
//! skip-gram model with negative sampling (DeepWalk), plus surface-string
//! lookup of the learned vectors.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::numerics::{dot, sigmoid_scalar, Mat, Rng};
use crate::{Error, Result};

/// Undirected graph with node labels and surface aliases.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    ids: Vec<String>,
    labels: Vec<String>,
    adjacency: Vec<Vec<usize>>,
    id_index: BTreeMap<String, usize>,
    /// Lowercased label → node.
    label_index: BTreeMap<String, usize>,
    /// Lowercased alias → node.
    aliases: BTreeMap<String, usize>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node, or returns the existing index for `id`.
    pub fn add_node(&mut self, id: &str, label: &str) -> usize {
        if let Some(&i) = self.id_index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.labels.push(label.to_string());
        self.adjacency.push(Vec::new());
        self.id_index.insert(id.to_string(), i);
        self.label_index.entry(label.to_lowercase()).or_insert(i);
        i
    }

    pub fn add_edge(&mut self, a: &str, b: &str) -> Result<()> {
        let ia = self.node_index(a).ok_or_else(|| Error::UnknownNode(a.to_string()))?;
        let ib = self.node_index(b).ok_or_else(|| Error::UnknownNode(b.to_string()))?;
        if !self.adjacency[ia].contains(&ib) {
            self.adjacency[ia].push(ib);
            if ia != ib {
                self.adjacency[ib].push(ia);
            }
        }
        Ok(())
    }

    pub fn add_alias(&mut self, id: &str, alias: &str) -> Result<()> {
        let i = self.node_index(id).ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        self.aliases.insert(alias.to_lowercase(), i);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        let loops = self.adjacency.iter().enumerate().filter(|(i, n)| n.contains(i)).count();
        (self.adjacency.iter().map(Vec::len).sum::<usize>() + loops) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, usize)> {
        self.aliases.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Lowercased exact match against labels, then aliases.
    pub fn resolve(&self, surface: &str) -> Option<usize> {
        let key = surface.to_lowercase();
        self.label_index.get(&key).or_else(|| self.aliases.get(&key)).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub embedding_dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walk_length: 32,
            walks_per_node: 10,
            window: 5,
            embedding_dim: 64,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.01,
            seed: 7,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_length < 2 || self.window < 1 || self.embedding_dim < 1 {
            return Err(Error::Config(format!(
                "walk_length >= 2, window >= 1 and dim >= 1 required (got {}, {}, {})",
                self.walk_length, self.window, self.embedding_dim
            )));
        }
        Ok(())
    }
}

/// Uniform random walk of at most `length` nodes, stopping early at a node
/// without neighbours.
pub fn random_walk(graph: &KnowledgeGraph, start: usize, length: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if start >= graph.node_count() {
        return Err(Error::UnknownNode(format!("#{start}")));
    }
    let mut walk = Vec::with_capacity(length);
    walk.push(start);
    let mut cur = start;
    while walk.len() < length {
        let nbrs = graph.neighbors(cur);
        if nbrs.is_empty() {
            break;
        }
        cur = nbrs[rng.below(nbrs.len())];
        walk.push(cur);
    }
    Ok(walk)
}

/// `walks_per_node` rounds; each round visits every node once as a start,
/// in an order shuffled per round. Each walk draws from its own generator
/// split off the config seed, so rounds could run in parallel.
pub fn generate_walk_corpus(graph: &KnowledgeGraph, config: &WalkConfig) -> Result<Vec<Vec<usize>>> {
    config.validate()?;
    if graph.is_empty() {
        return Err(Error::Empty("graph has no nodes"));
    }
    let root = Rng::new(config.seed);
    let mut walks = Vec::with_capacity(graph.node_count() * config.walks_per_node);
    for round in 0..config.walks_per_node {
        let mut order: Vec<usize> = (0..graph.node_count()).collect();
        root.split(&format!("order/{round}")).shuffle(&mut order);
        for start in order {
            let mut rng = root.split(&format!("walk/{round}/{start}"));
            walks.push(random_walk(graph, start, config.walk_length, &mut rng)?);
        }
    }
    Ok(walks)
}

/// Node vectors Φ, one row per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddings {
    pub vectors: Mat,
}

impl NodeEmbeddings {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, node: usize) -> &[f64] {
        self.vectors.row(node)
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramOutcome {
    pub embeddings: NodeEmbeddings,
    /// Mean loss per (center, context) pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Row initialisation used by [`skipgram_train`], exposed for tests.
pub fn initial_embeddings(node_count: usize, config: &WalkConfig) -> NodeEmbeddings {
    let d = config.embedding_dim as f64;
    let mut rng = Rng::new(config.seed).split("skipgram/init");
    NodeEmbeddings {
        vectors: Mat::uniform(node_count, config.embedding_dim, -0.5 / d, 0.5 / d, &mut rng),
    }
}

/// Skip-gram with negative sampling over the walk corpus. Every position
/// predicts the nodes within `±window`; noise is drawn ∝ frequency^0.75.
/// The learning rate decays linearly across epochs.
pub fn skipgram_train(walks: &[Vec<usize>], node_count: usize, config: &WalkConfig) -> Result<SkipGramOutcome> {
    config.validate()?;
    if walks.iter().all(|w| w.is_empty()) {
        return Err(Error::Empty("walk corpus"));
    }
    if let Some(bad) = walks.iter().flatten().find(|&&v| v >= node_count) {
        return Err(Error::UnknownNode(format!("#{bad}")));
    }
    let dim = config.embedding_dim;
    let mut input = initial_embeddings(node_count, config).vectors;
    let mut output = Mat::zeros(node_count, dim);

    let mut freq = vec![0.0f64; node_count];
    for &v in walks.iter().flatten() {
        freq[v] += 1.0;
    }
    let weights: Vec<f64> = freq.iter().map(|&f| libm::pow(f, 0.75)).collect();
    let noise = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut rng = Rng::new(config.seed).split("skipgram/train");

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut grad_in = vec![0.0; dim];
    for epoch in 0..config.epochs {
        let lr = (config.learning_rate * (1.0 - epoch as f64 / config.epochs as f64)).max(config.learning_rate * 1e-4);
        let mut total = 0.0;
        let mut pairs = 0usize;
        for walk in walks {
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window + 1).min(walk.len());
                for (j, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let mut loss = 0.0;
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let n = noise.sample(&mut rng);
                            if n == context {
                                continue;
                            }
                            (n, 0.0)
                        };
                        let score = dot(input.row(center), output.row(target));
                        let p = sigmoid_scalar(score);
                        loss -= if label == 1.0 {
                            libm::log(p.max(1e-300))
                        } else {
                            libm::log((1.0 - p).max(1e-300))
                        };
                        let g = lr * (label - p);
                        for (gi, o) in grad_in.iter_mut().zip(output.row(target)) {
                            *gi += g * o;
                        }
                        let center_row = input.row(center).to_vec();
                        for (o, c) in output.row_mut(target).iter_mut().zip(&center_row) {
                            *o += g * c;
                        }
                    }
                    for (c, g) in input.row_mut(center).iter_mut().zip(&grad_in) {
                        *c += g;
                    }
                    total += loss;
                    pairs += 1;
                }
            }
        }
        epoch_losses.push(if pairs == 0 { 0.0 } else { total / pairs as f64 });
    }
    Ok(SkipGramOutcome {
        embeddings: NodeEmbeddings { vectors: input },
        epoch_losses,
    })
}

/// Φ row for `surface` (label first, then alias; case-insensitive).
pub fn lookup_embedding<'a>(graph: &KnowledgeGraph, embeddings: &'a NodeEmbeddings, surface: &str) -> Option<&'a [f64]> {
    graph.resolve(surface).map(|i| embeddings.row(i))
}

/// A graph with trained vectors, used as a fixed tagging feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEmbedding {
    pub graph: KnowledgeGraph,
    pub embeddings: NodeEmbeddings,
}

impl GraphEmbedding {
    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn lookup(&self, surface: &str) -> Option<&[f64]> {
        lookup_embedding(&self.graph, &self.embeddings, surface)
    }

    /// Lookup with the absent case mapped to the zero vector.
    pub fn feature(&self, surface: &str) -> Vec<f64> {
        self.lookup(surface).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.dim()])
    }
}

/// Two `size`-cliques joined by a single bridge edge; node ids `a0..` and `b0..`.
pub fn bridged_cliques(size: usize) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    for side in ["a", "b"] {
        for i in 0..size {
            let id = format!("{side}{i}");
            g.add_node(&id, &id);
        }
    }
    for side in ["a", "b"] {
        for i in 0..size {
            for j in i + 1..size {
                g.add_edge(&format!("{side}{i}"), &format!("{side}{j}")).expect("nodes exist");
            }
        }
    }
    g.add_edge("a0", "b0").expect("nodes exist");
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine;

    fn path2() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        g.add_node("x", "X");
        g.add_node("y", "Y");
        g.add_edge("x", "y").unwrap();
        g
    }

    #[test]
    fn isolated_node_walk() {
        let mut g = KnowledgeGraph::new();
        g.add_node("lonely", "lonely");
        assert_eq!(random_walk(&g, 0, 10, &mut Rng::new(1)).unwrap(), vec![0]);
        assert!(random_walk(&g, 3, 10, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn path_graph_alternates() {
        let w = random_walk(&path2(), 0, 4, &mut Rng::new(1)).unwrap();
        assert_eq!(w, vec![0, 1, 0, 1]);
    }

    #[test]
    fn triangle_visits_are_uniform() {
        let mut g = KnowledgeGraph::new();
        for id in ["a", "b", "c"] {
            g.add_node(id, id);
        }
        g.add_edge("a", "b").unwrap();
        g.add_edge("b", "c").unwrap();
        g.add_edge("c", "a").unwrap();
        let mut rng = Rng::new(99);
        let mut counts = [0usize; 3];
        for k in 0..10_000 {
            for v in random_walk(&g, k % 3, 32, &mut rng).unwrap() {
                counts[v] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        for c in counts {
            assert!((c as f64 / total as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let mut g = KnowledgeGraph::new();
        for i in 0..5 {
            g.add_node(&format!("n{i}"), "x");
        }
        for i in 0..4 {
            g.add_edge(&format!("n{i}"), &format!("n{}", i + 1)).unwrap();
        }
        let cfg = WalkConfig::default();
        let a = generate_walk_corpus(&g, &cfg).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, generate_walk_corpus(&g, &cfg).unwrap());
        let tokens: usize = a.iter().map(Vec::len).sum();
        assert!(tokens <= 5 * cfg.walks_per_node * cfg.walk_length);
        for w in &a {
            for pair in w.windows(2) {
                assert!(g.neighbors(pair[0]).contains(&pair[1]));
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let g = path2();
        let cfg = WalkConfig {
            epochs: 0,
            ..WalkConfig::default()
        };
        let walks = generate_walk_corpus(&g, &cfg).unwrap();
        let out = skipgram_train(&walks, 2, &cfg).unwrap();
        assert_eq!(out.embeddings, initial_embeddings(2, &cfg));
    }

    #[test]
    fn alternating_walk_raises_affinity() {
        let cfg = WalkConfig {
            embedding_dim: 16,
            epochs: 3,
            ..WalkConfig::default()
        };
        let walk: Vec<usize> = (0..32).map(|i| i % 2).collect();
        // A third, never-visited node gives the noise distribution a non-trivial support.
        let walks = vec![walk, vec![2, 2]];
        let init = initial_embeddings(3, &cfg);
        let out = skipgram_train(&walks, 3, &cfg).unwrap();
        let before = cosine(init.row(0), init.row(1));
        let after = cosine(out.embeddings.row(0), out.embeddings.row(1));
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn never_visited_node_keeps_initialisation() {
        let mut g = bridged_cliques(3);
        g.add_node("iso", "iso");
        let cfg = WalkConfig {
            embedding_dim: 8,
            epochs: 2,
            ..WalkConfig::default()
        };
        let walks = generate_walk_corpus(&g, &cfg).unwrap();
        let out = skipgram_train(&walks, g.node_count(), &cfg).unwrap();
        let iso = g.node_index("iso").unwrap();
        assert_eq!(out.embeddings.row(iso), initial_embeddings(g.node_count(), &cfg).row(iso));
    }

    #[test]
    fn clique_separation() {
        let g = bridged_cliques(6);
        let cfg = WalkConfig::default();
        let walks = generate_walk_corpus(&g, &cfg).unwrap();
        let out = skipgram_train(&walks, g.node_count(), &cfg).unwrap();
        let (intra, inter) = clique_cosines(&out.embeddings);
        assert!(intra > inter, "intra {intra} inter {inter}");
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last <= 0.95 * first, "{:?}", out.epoch_losses);
    }

    fn clique_cosines(e: &NodeEmbeddings) -> (f64, f64) {
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for i in 0..12 {
            for j in i + 1..12 {
                let c = cosine(e.row(i), e.row(j));
                if (i < 6) == (j < 6) {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
        (intra / ni as f64, inter / nx as f64)
    }

    #[test]
    fn lookup_by_label_and_alias() {
        let mut g = KnowledgeGraph::new();
        g.add_node("C0006142", "breast cancer");
        g.add_node("C0011849", "diabetes mellitus");
        g.add_alias("C0006142", "Breast Carcinoma").unwrap();
        let e = NodeEmbeddings {
            vectors: Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        };
        assert_eq!(lookup_embedding(&g, &e, "Breast Cancer"), Some(&[1.0, 2.0][..]));
        assert_eq!(lookup_embedding(&g, &e, "breast carcinoma"), Some(&[1.0, 2.0][..]));
        assert_eq!(lookup_embedding(&g, &e, "gout"), None);
        let ge = GraphEmbedding { graph: g, embeddings: e };
        assert_eq!(ge.feature("gout"), vec![0.0, 0.0]);
    }

    #[test]
    fn edges_are_symmetric() {
        let g = bridged_cliques(4);
        for v in 0..g.node_count() {
            for &u in g.neighbors(v) {
                assert!(g.neighbors(u).contains(&v));
            }
        }
        assert_eq!(g.edge_count(), 6 + 6 + 1);
        assert!(KnowledgeGraph::new().add_edge("a", "b").is_err());
    }
}
