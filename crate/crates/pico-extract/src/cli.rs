//! `pico-extract` command line. Results go to stdout; the resolved
//! configuration, epoch lines and errors go to stderr. Exit status is 0 on
//! success, 1 on a domain error and 2 on a usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pico_core::corpus::{build_vocabulary, BioCorpus};
use pico_core::dner::{decode_spans, evaluate_dner, span_ranges, tag_sentence, train_dner, CharKind, DnerConfig, DnerModel, HeadKind};
use pico_core::evalmetrics::{entity_counts, macro_f1, mapping_recall, pico_report, render_report, Counts};
use pico_core::kgraph::{generate_walk_corpus, skipgram_train, GraphEmbedding, WalkConfig};
use pico_core::mapping::{map_document, MappingConfig};
use pico_core::pico::{accuracy, classify_document, predict_labels, train_pico, PicoConfig, PicoModel, PicoVariant};

use crate::checkpoint::{self, Model};
use crate::error::{write_file, Error, Result};
use crate::formats::{self, MappingRow, SpanRow};
use crate::service::{self, AppState, ServiceConfig};

#[derive(Parser, Debug)]
#[command(name = "pico-extract", version, about = "Step-wise PICO disease-entity extraction", arg_required_else_help = true)]
pub struct Cli {
    /// Seed for every random choice (initialisation, shuffling, dropout, walks).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Relative paths are resolved against this directory; `serve` keeps its state here.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the sentence classifier on a `LABEL<TAB>sentence` file.
    TrainPico(TrainPicoArgs),
    /// Train the disease tagger on a BIO file.
    TrainDner(TrainDnerArgs),
    /// Learn DeepWalk vectors for a graph file.
    EmbedGraph(EmbedGraphArgs),
    /// Run the pipeline on documents (or tag a BIO file with `--bio`).
    Predict(PredictArgs),
    /// Per-class precision/recall/F1 of a classifier checkpoint.
    EvalPico(EvalPicoArgs),
    /// Exact-span entity scores against a gold BIO file.
    EvalDner(EvalDnerArgs),
    /// Surface-level P/O recall of mapped entities.
    EvalMapping(EvalMappingArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Cnn,
    Bilstm,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CharArg {
    None,
    Cnn,
    Bilstm,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadArg {
    Crf,
    Softmax,
}

#[derive(Args, Debug)]
pub struct TrainPicoArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation file; without it a stratified split of `--train` is used.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Training share of the stratified split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Cnn)]
    pub variant: VariantArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// 0 means full batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
}

#[derive(Args, Debug)]
pub struct TrainDnerArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation BIO file; the training file is used when absent.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Graph checkpoint from `embed-graph`, used as a per-token feature.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CharArg::Cnn)]
    pub chars: CharArg,
    #[arg(long, value_enum, default_value_t = HeadArg::Crf)]
    pub head: HeadArg,
    #[arg(long)]
    pub hard_bio: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train without early stopping.
    #[arg(long, conflicts_with = "patience")]
    pub no_patience: bool,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
}

#[derive(Args, Debug)]
pub struct EmbedGraphArgs {
    /// Graph file; the bundled toy graph when absent.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Keep non-English nodes.
    #[arg(long)]
    pub all_languages: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a `<count> <dim>` text export.
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[arg(long)]
    pub walk_length: Option<usize>,
    #[arg(long)]
    pub walks_per_node: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Text files: first line title, rest abstract.
    pub docs: Vec<PathBuf>,
    #[arg(long, required_unless_present = "bio")]
    pub pico: Option<PathBuf>,
    #[arg(long)]
    pub dner: PathBuf,
    /// Tag the sentences of a BIO file instead and print span rows.
    #[arg(long, conflicts_with = "docs")]
    pub bio: Option<PathBuf>,
    /// Extra rules, `target<TAB>pattern` per line.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub no_builtin_rules: bool,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Write `doc_id<TAB>label<TAB>surface` rows here.
    #[arg(long)]
    pub mapping_out: Option<PathBuf>,
    /// Write `doc_id<TAB>sentence<TAB>start<TAB>end<TAB>surface` rows here.
    #[arg(long)]
    pub spans_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalPicoArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pico: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalDnerArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// Span rows whose sentence column indexes the gold file.
    #[arg(long, required_unless_present = "dner", conflicts_with = "dner")]
    pub pred: Option<PathBuf>,
    /// Tag the gold sentences with this checkpoint instead.
    #[arg(long)]
    pub dner: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalMappingArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// JSON config file; `PICO_*` variables and flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub pico: Option<PathBuf>,
    #[arg(long)]
    pub dner: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub retrain_threshold: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

struct Ctx<'a> {
    seed: Option<u64>,
    base: PathBuf,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn input(&self, p: &Path) -> Result<PathBuf> {
        let full = self.path(p);
        if !full.is_file() {
            return Err(Error::Format(format!("{}: no such file", full.display())));
        }
        Ok(full)
    }

    fn output(&self, p: &Path) -> Result<PathBuf> {
        let full = self.path(p);
        match full.parent() {
            Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Format(format!("{}: directory does not exist", dir.display()))),
            _ => Ok(full),
        }
    }

    fn config<T: Serialize>(&mut self, command: &str, config: &T) -> Result<()> {
        let line = serde_json::to_string(&serde_json::json!({
            "command": command,
            "seed": self.seed,
            "config": config,
        }))?;
        let _ = writeln!(self.err, "config {line}");
        Ok(())
    }

    fn log(&mut self, line: impl std::fmt::Display) {
        let _ = writeln!(self.err, "{line}");
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{}", text.ansi());
            }
            return code;
        }
    };
    let mut ctx = Ctx {
        seed: cli.seed,
        base: cli.data_dir.clone().unwrap_or_else(|| PathBuf::from(".")),
        out,
        err,
    };
    match dispatch(cli, &mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli, ctx: &mut Ctx) -> Result<()> {
    match cli.command {
        Command::TrainPico(a) => train_pico_cmd(a, ctx),
        Command::TrainDner(a) => train_dner_cmd(a, ctx),
        Command::EmbedGraph(a) => embed_graph_cmd(a, ctx),
        Command::Predict(a) => predict_cmd(a, ctx),
        Command::EvalPico(a) => eval_pico_cmd(a, ctx),
        Command::EvalDner(a) => eval_dner_cmd(a, ctx),
        Command::EvalMapping(a) => eval_mapping_cmd(a, ctx),
        Command::Serve(a) => serve_cmd(a, cli.data_dir, ctx),
    }
}

fn train_pico_cmd(a: TrainPicoArgs, ctx: &mut Ctx) -> Result<()> {
    let train_path = ctx.input(&a.train)?;
    let valid_path = a.valid.as_deref().map(|p| ctx.input(p)).transpose()?;
    let out = ctx.output(&a.out)?;
    let mut config = PicoConfig {
        variant: match a.variant {
            VariantArg::Cnn => PicoVariant::Cnn,
            VariantArg::Bilstm => PicoVariant::BiLstm,
        },
        ..PicoConfig::default()
    };
    if let Some(s) = ctx.seed {
        config.seed = s;
    }
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.batch_size = a.batch_size.unwrap_or(config.batch_size);
    config.dropout = a.dropout.unwrap_or(config.dropout);
    config.word_dim = a.word_dim.unwrap_or(config.word_dim);
    config.adam.lr = a.lr.unwrap_or(config.adam.lr);
    config.patience = a.patience.or(config.patience);
    ctx.config("train-pico", &config)?;

    let data = formats::load_pico(&train_path)?;
    let (train, valid) = match valid_path {
        Some(p) => (data, formats::load_pico(&p)?),
        None => {
            if !(0.0..1.0).contains(&a.split) || a.split == 0.0 {
                return Err(Error::Format(format!("--split must be in (0, 1), got {}", a.split)));
            }
            data.stratified_split(a.split, config.seed)
        }
    };
    let vocab = build_vocabulary(train.tokens(), a.min_count.max(1));
    ctx.log(format_args!("train {} sentences, valid {}, vocabulary {}", train.len(), valid.len(), vocab.len()));
    let result = train_pico(PicoModel::new(vocab, config), &train, &valid)?;
    for e in &result.history {
        ctx.log(format_args!("epoch {} loss {:.6} train_acc {:.4} valid_macro_f1 {:.4}", e.epoch, e.loss, e.train_accuracy, e.macro_f1));
    }
    let version = checkpoint::save(&out, &Model::Pico(result.model))?;
    writeln!(ctx.out, "best_epoch={} checkpoint={} version={version}", result.best_epoch, out.display()).ok();
    Ok(())
}

fn train_dner_cmd(a: TrainDnerArgs, ctx: &mut Ctx) -> Result<()> {
    let train_path = ctx.input(&a.train)?;
    let valid_path = a.valid.as_deref().map(|p| ctx.input(p)).transpose()?;
    let graph_path = a.graph.as_deref().map(|p| ctx.input(p)).transpose()?;
    let out = ctx.output(&a.out)?;
    let mut config = DnerConfig {
        chars: match a.chars {
            CharArg::None => CharKind::None,
            CharArg::Cnn => CharKind::Cnn,
            CharArg::Bilstm => CharKind::BiLstm,
        },
        head: match a.head {
            HeadArg::Crf => HeadKind::Crf,
            HeadArg::Softmax => HeadKind::Softmax,
        },
        hard_bio: a.hard_bio,
        ..DnerConfig::default()
    };
    if let Some(s) = ctx.seed {
        config.seed = s;
    }
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.batch_size = a.batch_size.unwrap_or(config.batch_size);
    if a.no_patience {
        config.patience = None;
    } else if a.patience.is_some() {
        config.patience = a.patience;
    }
    config.dropout = a.dropout.unwrap_or(config.dropout);
    config.word_dim = a.word_dim.unwrap_or(config.word_dim);
    config.hidden = a.hidden.unwrap_or(config.hidden);
    config.adam.lr = a.lr.unwrap_or(config.adam.lr);
    ctx.config("train-dner", &config)?;

    let train = formats::load_bio_corpus(&train_path)?;
    let valid = match valid_path {
        Some(p) => formats::load_bio_corpus(&p)?,
        None => BioCorpus { sentences: Vec::new() },
    };
    let graph = graph_path.map(|p| checkpoint::load_graph(&p)).transpose()?.map(|(g, _)| g);
    let stats = train.stats();
    ctx.log(format_args!(
        "train {} sentences, {} tokens, {} annotations",
        stats.sentences, stats.tokens, stats.annotations
    ));
    let vocab = build_vocabulary(train.tokens(), a.min_count.max(1));
    let result = train_dner(DnerModel::new(vocab, graph, config), &train, &valid)?;
    for e in &result.history {
        ctx.log(format_args!(
            "epoch {} loss {:.6} steps {} entity_f1 {:.4} token_acc {:.4}",
            e.epoch, e.loss, e.steps, e.valid.entity_prf.f1, e.valid.token_accuracy
        ));
    }
    let version = checkpoint::save(&out, &Model::Dner(result.model))?;
    writeln!(ctx.out, "best_epoch={} checkpoint={} version={version}", result.best_epoch, out.display()).ok();
    Ok(())
}

fn embed_graph_cmd(a: EmbedGraphArgs, ctx: &mut Ctx) -> Result<()> {
    let graph_path = a.graph.as_deref().map(|p| ctx.input(p)).transpose()?;
    let out = ctx.output(&a.out)?;
    let export = a.export.as_deref().map(|p| ctx.output(p)).transpose()?;
    let mut config = WalkConfig::default();
    if let Some(s) = ctx.seed {
        config.seed = s;
    }
    config.walk_length = a.walk_length.unwrap_or(config.walk_length);
    config.walks_per_node = a.walks_per_node.unwrap_or(config.walks_per_node);
    config.window = a.window.unwrap_or(config.window);
    config.embedding_dim = a.dim.unwrap_or(config.embedding_dim);
    config.negatives = a.negatives.unwrap_or(config.negatives);
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.learning_rate = a.lr.unwrap_or(config.learning_rate);
    ctx.config("embed-graph", &config)?;
    config.validate()?;

    let graph = match &graph_path {
        Some(p) => formats::load_graph(p, !a.all_languages)?,
        None => formats::parse_graph(crate::TOY_GRAPH, !a.all_languages)?,
    };
    ctx.log(format_args!("graph {} nodes, {} edges", graph.node_count(), graph.edge_count()));
    let walks = generate_walk_corpus(&graph, &config)?;
    let trained = skipgram_train(&walks, graph.node_count(), &config)?;
    for (i, l) in trained.epoch_losses.iter().enumerate() {
        ctx.log(format_args!("epoch {i} loss {l:.6}"));
    }
    let emb = GraphEmbedding {
        graph,
        embeddings: trained.embeddings,
    };
    if let Some(p) = export {
        write_file(&p, formats::write_embeddings(&emb))?;
    }
    let version = checkpoint::save(&out, &Model::Graph(emb))?;
    writeln!(ctx.out, "checkpoint={} version={version}", out.display()).ok();
    Ok(())
}

fn predict_cmd(a: PredictArgs, ctx: &mut Ctx) -> Result<()> {
    let dner_path = ctx.input(&a.dner)?;
    let mapping = MappingConfig {
        lambda: a.lambda,
        ..MappingConfig::default()
    };
    #[derive(Serialize)]
    struct Resolved<'a> {
        docs: &'a [PathBuf],
        bio: &'a Option<PathBuf>,
        pico: &'a Option<PathBuf>,
        dner: &'a Path,
        rules: &'a Option<PathBuf>,
        builtin_rules: bool,
        mapping: &'a MappingConfig,
    }
    ctx.config(
        "predict",
        &Resolved {
            docs: &a.docs,
            bio: &a.bio,
            pico: &a.pico,
            dner: &a.dner,
            rules: &a.rules,
            builtin_rules: !a.no_builtin_rules,
            mapping: &mapping,
        },
    )?;
    mapping.validate()?;
    let (dner, _) = checkpoint::load_dner(&dner_path)?;

    if let Some(bio) = &a.bio {
        let bio_path = ctx.input(bio)?;
        let corpus = formats::load_bio_corpus(&bio_path)?;
        let doc_id = bio_path.file_stem().and_then(|s| s.to_str()).unwrap_or("bio").to_string();
        let mut rows = Vec::new();
        for (k, s) in corpus.sentences.iter().enumerate() {
            let tags = tag_sentence(&dner, &s.tokens)?;
            rows.extend(decode_spans(&s.tokens, &tags)?.into_iter().map(|sp| SpanRow {
                doc_id: doc_id.clone(),
                sentence: k,
                start: sp.start,
                end: sp.end,
                surface: sp.surface,
            }));
        }
        let text = formats::write_spans(&rows);
        match &a.spans_out {
            Some(p) => write_file(&ctx.output(p)?, text)?,
            None => write!(ctx.out, "{text}").map_err(|e| Error::Format(e.to_string()))?,
        }
        return Ok(());
    }

    if a.docs.is_empty() {
        return Err(Error::Format("predict needs at least one document or --bio".into()));
    }
    let pico_path = ctx.input(a.pico.as_deref().expect("clap requires --pico"))?;
    let (pico, _) = checkpoint::load_pico(&pico_path)?;
    let rules_path = a.rules.as_deref().map(|p| ctx.input(p)).transpose()?;
    let rules = formats::load_rule_set(rules_path.as_deref(), !a.no_builtin_rules)?;
    let mut span_rows = Vec::new();
    let mut mapping_rows = Vec::new();
    for d in &a.docs {
        let doc = formats::read_document(&ctx.input(d)?)?;
        let doc = classify_document(&pico, &doc)?;
        let mapped = map_document(&doc, &dner, &rules, &mapping)?;
        let mut text = format!("document {}\n", doc.id);
        for s in &doc.sentences {
            let probs = s.pico_probs.expect("classified");
            let label = s.pico_label.expect("classified");
            text += &format!("  [{}] {:<2} {:.3}  {}\n", s.index, label, probs[label.index()], s.text);
        }
        for (name, list) in [("P", &mapped.population), ("O", &mapped.outcome)] {
            text += &format!("{name} entities:\n");
            if list.is_empty() {
                text += "  (none)\n";
            }
            for e in list {
                let rule = e.rule_id.as_deref().map(|r| format!(" rule={r}")).unwrap_or_default();
                text += &format!(
                    "  {}  sentence={} tokens={}..{} score_p={:.4} score_o={:.4}{rule}\n",
                    e.span.surface, e.span.sentence_index, e.span.start, e.span.end, e.score_p, e.score_o
                );
                span_rows.push(SpanRow {
                    doc_id: doc.id.clone(),
                    sentence: e.span.sentence_index,
                    start: e.span.start,
                    end: e.span.end,
                    surface: e.span.surface.clone(),
                });
                mapping_rows.push(MappingRow {
                    doc_id: doc.id.clone(),
                    label: e.final_label,
                    surface: e.span.surface.clone(),
                });
            }
        }
        if mapped.fallback_used {
            text += "note: no P/O sentence in scope; fell back to all sentences\n";
        }
        write!(ctx.out, "{text}").map_err(|e| Error::Format(e.to_string()))?;
    }
    if let Some(p) = &a.spans_out {
        span_rows.sort();
        write_file(&ctx.output(p)?, formats::write_spans(&span_rows))?;
    }
    if let Some(p) = &a.mapping_out {
        write_file(&ctx.output(p)?, formats::write_mapping(&mapping_rows))?;
    }
    Ok(())
}

fn eval_pico_cmd(a: EvalPicoArgs, ctx: &mut Ctx) -> Result<()> {
    let data_path = ctx.input(&a.data)?;
    let model_path = ctx.input(&a.pico)?;
    ctx.config("eval-pico", &serde_json::json!({ "data": data_path, "pico": model_path }))?;
    let data = formats::load_pico(&data_path)?;
    let (model, version) = checkpoint::load_pico(&model_path)?;
    let predicted = predict_labels(&model, &data)?;
    let report = pico_report(&data.labels(), &predicted)?;
    let rows: Vec<(String, Counts)> = report.iter().map(|(l, c, _)| (l.to_string(), *c)).collect();
    let mut text = render_report(&format!("PICO sentence classification ({} sentences, model {})", data.len(), &version[..12]), &rows);
    text += &format!("accuracy={:.6}\nmacro_f1={:.6}\n", accuracy(&model, &data)?, macro_f1(&report));
    write!(ctx.out, "{text}").ok();
    Ok(())
}

fn eval_dner_cmd(a: EvalDnerArgs, ctx: &mut Ctx) -> Result<()> {
    let gold_path = ctx.input(&a.gold)?;
    let pred_path = a.pred.as_deref().map(|p| ctx.input(p)).transpose()?;
    let model_path = a.dner.as_deref().map(|p| ctx.input(p)).transpose()?;
    ctx.config("eval-dner", &serde_json::json!({ "gold": gold_path, "pred": pred_path, "dner": model_path }))?;
    let gold = formats::load_bio_corpus(&gold_path)?;
    let text = if let Some(p) = model_path {
        let (model, _) = checkpoint::load_dner(&p)?;
        let eval = evaluate_dner(&model, &gold)?;
        let mut t = render_report("Disease entity recognition", &[("entity".into(), eval.entity), ("token".into(), eval.token)]);
        t += &format!("token_accuracy={:.6}\n", eval.token_accuracy);
        t
    } else {
        let pred_path = pred_path.expect("clap requires --pred or --dner");
        let rows = formats::parse_spans(&crate::error::read_to_string(&pred_path)?)?;
        let gold_spans: Vec<(usize, usize, usize)> = gold
            .sentences
            .iter()
            .enumerate()
            .flat_map(|(k, s)| span_ranges(&s.tags).into_iter().map(move |(a, b)| (k, a, b)))
            .collect();
        for r in &rows {
            let ok = gold.sentences.get(r.sentence).is_some_and(|s| r.end <= s.tokens.len());
            if !ok {
                return Err(Error::Format(format!(
                    "{}: span {}:{}..{} lies outside the gold corpus",
                    pred_path.display(),
                    r.sentence,
                    r.start,
                    r.end
                )));
            }
        }
        let pred_spans: Vec<(usize, usize, usize)> = rows.iter().map(|r| (r.sentence, r.start, r.end)).collect();
        render_report("Disease entity recognition", &[("entity".into(), entity_counts(&gold_spans, &pred_spans))])
    };
    write!(ctx.out, "{text}").ok();
    Ok(())
}

fn eval_mapping_cmd(a: EvalMappingArgs, ctx: &mut Ctx) -> Result<()> {
    let gold_path = ctx.input(&a.gold)?;
    let pred_path = ctx.input(&a.pred)?;
    ctx.config("eval-mapping", &serde_json::json!({ "gold": gold_path, "pred": pred_path }))?;
    let keyed = |rows: Vec<MappingRow>| -> Vec<_> { rows.into_iter().map(|r| (r.label, format!("{} {}", r.doc_id, r.surface))).collect() };
    let gold = keyed(formats::parse_mapping(&crate::error::read_to_string(&gold_path)?)?);
    let pred = keyed(formats::parse_mapping(&crate::error::read_to_string(&pred_path)?)?);
    let s = mapping_recall(&gold, &pred);
    writeln!(
        ctx.out,
        "Entity mapping\nrecall_p={:.6}\nrecall_o={:.6}\nprecision_p={:.6}\nprecision_o={:.6}",
        s.recall_p, s.recall_o, s.precision_p, s.precision_o
    )
    .ok();
    Ok(())
}

fn serve_cmd(a: ServeArgs, data_dir: Option<PathBuf>, ctx: &mut Ctx) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => ServiceConfig::from_file(&ctx.input(p)?)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(d) = data_dir {
        config.data_dir = d;
    }
    if let Some(h) = a.host {
        config.host = h;
    }
    config.port = a.port.unwrap_or(config.port);
    config.pico_checkpoint = a.pico.or(config.pico_checkpoint);
    config.dner_checkpoint = a.dner.or(config.dner_checkpoint);
    config.graph_checkpoint = a.graph.or(config.graph_checkpoint);
    config.retrain_threshold = a.retrain_threshold.unwrap_or(config.retrain_threshold);
    config.lambda = a.lambda.unwrap_or(config.lambda);
    ctx.config("serve", &config)?;
    service::check_base_data(&config)?;
    let state = AppState::open(config)?;
    let _ = ctx.err.flush();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Format(format!("runtime: {e}")))?;
    rt.block_on(service::serve(state))
}
