//! Command-line interface of the `conceptree` binary.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conceptree::decompose::{
    render_clues, ChatEndpoint, ClueSet, Decomposer, ExemplarSet, FixtureStore, GenerationClient, HttpChatTransport,
    PromptSet, TemplateMode,
};
use conceptree::embedding::{encode_clues, HttpEncoder, ReplayEncoder, TextEmbeddingCache, TextEncoder};
use conceptree::features::{DepthMode, FeatureTable};
use conceptree::probe::{explain, prune, ClassifierUnit, Ensemble, EnsembleConfig, ProbeConfig, VoteStrategy};
use conceptree::tree::{to_dot, validate, ConceptTree, DotOptions, PathKey};
use rayon::prelude::*;
use serde::Serialize;

use crate::ablation::{run_ablation, AblationAxis};
use crate::evaluate::{format_accuracy, predict_split, train};
use crate::runs::output_dir;
use crate::service::{serve, ServiceState};
use crate::synth::{generate, SynthConfig};
use crate::{read_json, write_json, Corpus, HarnessError, Result, Split};

#[derive(Debug, Parser)]
#[command(name = "conceptree", version, about = "Concept-tree classifiers over precomputed embeddings")]
pub struct Cli {
    /// Root for fresh run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Write outputs here instead of a fresh run directory. Must be new or empty.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate, draw or generate concept trees.
    #[command(subcommand)]
    Tree(TreeCommand),
    /// Render clue texts from a tree.
    #[command(subcommand)]
    Clues(CluesCommand),
    /// Embed texts.
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Compute feature tables.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train an ensemble and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Run an ablation.
    Ablate(AblateArgs),
    /// Greedily drop parts whose removal keeps validation accuracy.
    Prune(PruneArgs),
    /// Per-part contributions for one image.
    Explain(ExplainArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Serve the inspection API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum TreeCommand {
    Validate {
        tree: PathBuf,
    },
    Dot {
        tree: PathBuf,
        /// Only this subclass's leaves.
        #[arg(long)]
        subclass: Option<String>,
    },
    /// Build a tree through the generation stages, replaying recorded
    /// exchanges or calling a chat endpoint.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub domain: String,
    #[arg(long = "subclass", required = true)]
    pub subclasses: Vec<String>,
    /// Recorded exchanges; live responses are appended here.
    #[arg(long)]
    pub fixtures: PathBuf,
    /// Chat-completion URL. Without it, only recorded exchanges are used.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// JSON prompt templates.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// JSON list of three [part, [attributes]] examples.
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CluesCommand {
    Render {
        tree: PathBuf,
        #[arg(long, default_value = "without")]
        template: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum EmbedCommand {
    /// Embed a rendered clue set into a clue embedding file.
    Clues(EmbedCluesArgs),
}

#[derive(Debug, Args)]
pub struct EmbedCluesArgs {
    pub clues: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Persistent text embedding cache.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    /// Text encoder endpoint.
    #[arg(long)]
    pub encoder_url: Option<String>,
    /// Recorded text embeddings to replay instead of calling an encoder.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

impl EncoderArgs {
    fn encoder(&self) -> Result<Option<Box<dyn TextEncoder>>> {
        match (&self.encoder_url, &self.replay) {
            (Some(_), Some(_)) => Err(HarnessError::Config("give either --encoder-url or --replay".into())),
            (Some(url), None) => Ok(Some(Box::new(HttpEncoder::new(url.clone())))),
            (None, Some(path)) => Ok(Some(Box::new(ReplayEncoder::load(path)?))),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCommand {
    Compute {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "attrs")]
        depth: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest's tree.
    #[arg(long)]
    pub tree: Option<PathBuf>,
}

impl DataArgs {
    fn corpus(&self) -> Result<Corpus> {
        Corpus::load(&self.manifest, self.tree.as_deref())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UnitArg {
    TopLevel,
    Nodes,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value = "top_prob")]
    pub vote: String,
    #[arg(long, value_enum, default_value = "top-level")]
    pub unit: UnitArg,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Keep the weighted vote's part-attribute matrix at 1.
    #[arg(long)]
    pub freeze_part_weights: bool,
}

impl TrainingArgs {
    fn config(&self) -> Result<EnsembleConfig> {
        let defaults = ProbeConfig::default();
        let probe = ProbeConfig {
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            epochs: self.epochs.unwrap_or(defaults.epochs),
            l2: self.l2.unwrap_or(defaults.l2),
        };
        probe.check()?;
        Ok(EnsembleConfig {
            probe,
            vote: parse_vote(&self.vote)?,
            unit: match self.unit {
                UnitArg::TopLevel => ClassifierUnit::TopLevelParts,
                UnitArg::Nodes => ClassifierUnit::PartNodes,
            },
            freeze_part_weights: self.freeze_part_weights,
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "attrs")]
    pub depth: String,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Evaluate with another vote strategy.
    #[arg(long)]
    pub vote: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    pub axis: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Allowed accuracy drop below the unpruned ensemble.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value = "val")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image_id: String,
    /// Also write the predicted subclass's tree annotated with leaf scores.
    #[arg(long)]
    pub dot: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthPreset {
    Standard,
    UniformImportance,
    Distractor,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "standard")]
    pub preset: SynthPreset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub subclasses: Option<usize>,
    #[arg(long)]
    pub top_parts: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub uninformative_fraction: Option<f64>,
    #[arg(long)]
    pub distractor_attributes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        let mut cfg = match self.preset {
            SynthPreset::Standard => SynthConfig::default(),
            SynthPreset::UniformImportance => SynthConfig::uniform_importance(),
            SynthPreset::Distractor => SynthConfig::distractor(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        set!(seed, dim, subclasses, top_parts, noise, uninformative_fraction, distractor_attributes, train_per_class, val_per_class, test_per_class);
        cfg
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

fn parse_vote(s: &str) -> Result<VoteStrategy> {
    Ok(s.parse::<VoteStrategy>()?)
}

fn parse_depth(s: &str) -> Result<DepthMode> {
    Ok(s.parse::<DepthMode>()?)
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse::<Split>()
}

fn load_checkpoint(path: &Path) -> Result<Ensemble> {
    Ok(Ensemble::load(path)?)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    depth: DepthMode,
    vote: VoteStrategy,
    parts: Vec<&'a str>,
    skipped_parts: &'a [String],
    train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    val_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct Metrics {
    split: Split,
    vote: VoteStrategy,
    samples: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct PruneReport<'a> {
    split: Split,
    delta: f64,
    baseline_accuracy: f64,
    accuracy: f64,
    removed: &'a [String],
    steps: &'a [conceptree::probe::PruneStep],
}

/// Parses `args` (after config expansion) and runs the command.
pub fn run(args: Vec<OsString>) -> Result<()> {
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    let out = |command: &str| output_dir(cli.out_dir.as_deref(), &cli.runs_dir, command);
    match &cli.command {
        Command::Tree(TreeCommand::Validate { tree }) => {
            let text = std::fs::read_to_string(tree)?;
            let tree = ConceptTree::parse_unchecked(&text)?;
            let report = validate(&tree);
            for f in &report.errors {
                println!("error: {}: {}", f.path, f.message);
            }
            for f in &report.warnings {
                println!("warning: {}: {}", f.path, f.message);
            }
            if !report.is_accepted() {
                return Err(HarnessError::Inconsistent(format!("{} validation errors", report.errors.len())));
            }
            println!("ok: {} warnings", report.warnings.len());
        }
        Command::Tree(TreeCommand::Dot { tree, subclass }) => {
            let tree = ConceptTree::load(tree)?;
            let dot = to_dot(
                &tree,
                &DotOptions {
                    subclass: subclass.clone(),
                    ..Default::default()
                },
            )?;
            print!("{dot}");
        }
        Command::Tree(TreeCommand::Generate(a)) => {
            let store = Arc::new(FixtureStore::open(&a.fixtures)?);
            let client = match &a.endpoint {
                Some(url) => {
                    let model = a
                        .model
                        .clone()
                        .ok_or_else(|| HarnessError::Config("--endpoint needs --model".into()))?;
                    let api_key = match &a.api_key_env {
                        Some(var) => Some(std::env::var(var).map_err(|_| HarnessError::Config(format!("{var} is not set")))?),
                        None => None,
                    };
                    let endpoint = ChatEndpoint {
                        url: url.clone(),
                        model,
                        api_key,
                        temperature: a.temperature,
                    };
                    GenerationClient::live(store, Arc::new(HttpChatTransport::new(endpoint)))
                }
                None => GenerationClient::replay(store),
            };
            let prompts = match &a.prompts {
                Some(p) => PromptSet::from_json(&std::fs::read_to_string(p)?)?,
                None => PromptSet::default(),
            };
            let exemplars: ExemplarSet = match &a.exemplars {
                Some(p) => read_json(p)?,
                None => ExemplarSet::default(),
            };
            let result = Decomposer {
                client: &client,
                prompts: &prompts,
                exemplars: &exemplars,
            }
            .decompose(&a.domain, &a.subclasses)?;
            let dir = out("tree")?;
            std::fs::write(dir.join("tree.json"), result.tree.to_json())?;
            write_json(&dir.join("validation.json"), &result.report)?;
            for p in &result.flagged_parts {
                log::warn!("part {p:?} has an unusual attribute count");
            }
            println!("wrote {}", dir.display());
        }
        Command::Clues(CluesCommand::Render { tree, template }) => {
            let tree = ConceptTree::load(tree)?;
            let mode: TemplateMode = template.parse()?;
            let clues = render_clues(&tree, mode)?;
            let dir = out("clues")?;
            write_json(&dir.join("clues.json"), &clues)?;
            println!("{} clues", clues.len());
            println!("wrote {}", dir.display());
        }
        Command::Embed(EmbedCommand::Clues(a)) => {
            let clues: ClueSet = read_json(&a.clues)?;
            let encoder = a
                .encoder
                .encoder()?
                .ok_or_else(|| HarnessError::Config("give --encoder-url or --replay".into()))?;
            let mut cache = match &a.cache {
                Some(p) => TextEmbeddingCache::open(p)?,
                None => TextEmbeddingCache::in_memory(),
            };
            let matrix = encode_clues(&clues, encoder.as_ref(), &mut cache)?;
            let dir = out("embed")?;
            matrix.save(dir.join("clue_embeddings.jsonl"))?;
            println!("wrote {}", dir.display());
        }
        Command::Features(FeaturesCommand::Compute { data, depth, split }) => {
            let corpus = data.corpus()?;
            let split = parse_split(split)?;
            let pipeline = corpus.pipeline(parse_depth(depth)?);
            let samples = corpus.manifest.split(split);
            if samples.is_empty() {
                return Err(HarnessError::EmptySplit(split));
            }
            let rows = samples
                .par_iter()
                .map(|s| Ok((s.id.clone(), pipeline.features(corpus.image(&s.id)?)?.values)))
                .collect::<Result<Vec<_>>>()?;
            let table = FeatureTable {
                mode: pipeline.mode(),
                keys: pipeline.layout().key_strings(),
                rows,
            };
            let dir = out("features")?;
            table.save(&dir.join("features.jsonl"))?;
            println!("wrote {}", dir.display());
        }
        Command::Train(a) => {
            let corpus = a.data.corpus()?;
            let cfg = a.training.config()?;
            let depth = parse_depth(&a.depth)?;
            let fit = train(&corpus, depth, &cfg)?;
            let ensemble = fit.ensemble;
            let train_accuracy = predict_split(&ensemble, &corpus, Split::Train)?.accuracy();
            let val_accuracy = if corpus.manifest.val.is_empty() {
                None
            } else {
                Some(predict_split(&ensemble, &corpus, Split::Val)?.accuracy())
            };
            let dir = out("train")?;
            ensemble.save(dir.join("checkpoint.json"))?;
            write_json(
                &dir.join("summary.json"),
                &TrainSummary {
                    depth,
                    vote: ensemble.vote,
                    parts: ensemble.parts().collect(),
                    skipped_parts: &fit.skipped,
                    train_accuracy,
                    val_accuracy,
                },
            )?;
            println!("train accuracy {}", format_accuracy(train_accuracy));
            if let Some(v) = val_accuracy {
                println!("val accuracy {}", format_accuracy(v));
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval(a) => {
            let corpus = a.data.corpus()?;
            let mut ensemble = load_checkpoint(&a.checkpoint)?;
            if let Some(v) = &a.vote {
                ensemble.vote = parse_vote(v)?;
                if ensemble.vote == VoteStrategy::Weighted && ensemble.part_weights.is_none() {
                    return Err(conceptree::probe::ProbeError::MissingWeights.into());
                }
            }
            let split = parse_split(&a.split)?;
            let predictions = predict_split(&ensemble, &corpus, split)?;
            let accuracy = predictions.accuracy();
            let dir = out("eval")?;
            write_json(&dir.join("predictions.json"), &predictions.records(&ensemble.subclasses))?;
            write_json(
                &dir.join("metrics.json"),
                &Metrics {
                    split,
                    vote: ensemble.vote,
                    samples: predictions.ids.len(),
                    accuracy,
                },
            )?;
            println!("{split} accuracy {}", format_accuracy(accuracy));
            println!("wrote {}", dir.display());
        }
        Command::Ablate(a) => {
            let axis: AblationAxis = a.axis.parse()?;
            let corpus = a.data.corpus()?;
            let cfg = a.training.config()?;
            let encoder = match a.encoder.encoder()? {
                Some(e) => Some(e),
                None => match &corpus.manifest.embeddings.texts {
                    Some(p) => Some(Box::new(ReplayEncoder::load(corpus.manifest.resolve(p))?) as Box<dyn TextEncoder>),
                    None => None,
                },
            };
            let table = run_ablation(axis, &corpus, &cfg, encoder.as_deref())?;
            let dir = out("ablate")?;
            std::fs::write(dir.join("ablation.json"), table.to_json())?;
            let text = table.render();
            std::fs::write(dir.join("ablation.txt"), &text)?;
            print!("{text}");
            println!("wrote {}", dir.display());
        }
        Command::Prune(a) => {
            let corpus = a.data.corpus()?;
            let ensemble = load_checkpoint(&a.checkpoint)?;
            let split = parse_split(&a.split)?;
            let validation = corpus.dataset(split, ensemble.depth)?;
            let outcome = prune(&ensemble, &validation, a.delta)?;
            let dir = out("prune")?;
            outcome.ensemble.save(dir.join("checkpoint.json"))?;
            write_json(
                &dir.join("prune.json"),
                &PruneReport {
                    split,
                    delta: a.delta,
                    baseline_accuracy: outcome.baseline_accuracy,
                    accuracy: outcome.accuracy,
                    removed: &outcome.removed,
                    steps: &outcome.steps,
                },
            )?;
            println!(
                "removed {} of {} parts; {split} accuracy {} -> {}",
                outcome.removed.len(),
                ensemble.probes.len(),
                format_accuracy(outcome.baseline_accuracy),
                format_accuracy(outcome.accuracy)
            );
            println!("wrote {}", dir.display());
        }
        Command::Explain(a) => {
            let corpus = a.data.corpus()?;
            let ensemble = load_checkpoint(&a.checkpoint)?;
            let image = corpus.image(&a.image_id)?;
            let pipeline = corpus.pipeline(ensemble.depth);
            let explanation = explain(&ensemble, &pipeline.features(image)?)?;
            let dir = out("explain")?;
            write_json(&dir.join("explanation.json"), &explanation)?;
            if a.dot {
                let leaves = pipeline.leaf_features(image)?;
                let annotations: HashMap<PathKey, f64> = leaves
                    .layout
                    .keys()
                    .iter()
                    .zip(&leaves.values)
                    .filter(|(k, _)| k.subclass == explanation.label)
                    .filter_map(|(k, &v)| Some((k.to_path_key()?, v)))
                    .collect();
                let dot = to_dot(
                    &corpus.tree,
                    &DotOptions {
                        annotations,
                        subclass: Some(explanation.label.clone()),
                    },
                )?;
                std::fs::write(dir.join("explanation.dot"), dot)?;
            }
            println!("{} -> {}", a.image_id, explanation.label);
            for p in &explanation.parts {
                println!(
                    "  {}: {} ({:.3}){}",
                    p.part,
                    p.label,
                    p.proba[p.label_index],
                    if p.dissenting { " dissenting" } else { "" }
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Synth(a) => {
            let corpus = generate(&a.config())?;
            let dir = out("synth")?;
            let manifest = corpus.write(&dir)?;
            println!("wrote {}", manifest.display());
        }
        Command::Serve(a) => {
            let corpus = a.data.corpus()?;
            let ensemble = load_checkpoint(&a.checkpoint)?;
            let state = Arc::new(ServiceState::from_corpus(&corpus, ensemble)?);
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&a.bind).await?;
                log::info!("listening on {}", listener.local_addr()?);
                println!("listening on {}", listener.local_addr()?);
                serve(listener, state).await
            })?;
        }
    }
    Ok(())
}
