use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use conjprop::classify::{self, training_set, ModelKind, PropModel};
use conjprop::conllu::Sentence;
use conjprop::convert::{always_baseline, convert, Mode};
use conjprop::embed::{write_sidecar, EmbeddingProvider, HashEmbeddings, SidecarEmbeddings};
use conjprop::eval::{agreement_matrix, diff_stats, exclude_ids, score, DiffScope};
use conjprop::parser::{self, EdgeScoreModel};
use rayon::prelude::*;

mod config;
mod io;

use config::{EmbeddingSpec, HashSpec, Overrides, RunConfig, CONFIG_ENV};

#[derive(Parser)]
#[command(
    name = "conjprop",
    version,
    about = "Propagate dependencies across conjuncts in enhanced Universal Dependencies"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for per-sentence work; output order is input order.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Io {
    /// Input CoNLL-U file (`-` for stdin).
    #[arg(long = "in", default_value = "-", value_name = "FILE")]
    input: PathBuf,

    /// Output CoNLL-U file (`-` for stdout).
    #[arg(long = "out", default_value = "-", value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args, Clone, Debug, Default)]
struct EmbeddingArgs {
    /// Sidecar file with per-token vectors.
    #[arg(long, value_name = "FILE", conflicts_with = "hash_embeddings")]
    embeddings: Option<PathBuf>,

    /// Deterministic pseudo-random vectors instead of a sidecar.
    #[arg(long, value_name = "LAYERS,DIM[,SEED]")]
    hash_embeddings: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scope {
    /// Propagated links only.
    Conj,
    /// Every basic and enhanced edge.
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Rule-based conversion of basic trees.
    Convert {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[command(flatten)]
        io: Io,
    },
    /// Copy every relation of each conjunction head onto its conjuncts.
    Always {
        #[command(flatten)]
        io: Io,
    },
    /// Train a propagation classifier on gold enhanced graphs.
    TrainProp {
        /// Gold CoNLL-U with enhanced layers.
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        /// Basic trees to extract instances from (defaults to the gold file).
        #[arg(long = "in", value_name = "FILE")]
        input: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// kernel or mlp.
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ModelKind>,
        /// Feature groups, e.g. `instance,token,tree`.
        #[arg(long, value_name = "GROUPS")]
        features: Option<String>,
        /// MLP epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        emb: EmbeddingArgs,
    },
    /// Add the edges a propagation classifier accepts.
    ApplyProp {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Classify newly added edges again until nothing changes.
        #[arg(long)]
        iterate: bool,
        /// Rewrite propagated subject labels by voice.
        #[arg(long)]
        relabel_subjects: bool,
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        emb: EmbeddingArgs,
    },
    /// Train the biaffine edge predictor.
    TrainParser {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        /// Development corpus for early stopping.
        #[arg(long, value_name = "FILE")]
        dev: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        emb: EmbeddingArgs,
    },
    /// Predict enhanced layers with a trained edge predictor.
    Predict {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        emb: EmbeddingArgs,
    },
    /// Precision, recall and F1 on propagated links.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        system: PathBuf,
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        /// Sentence ids to leave out, one per line.
        #[arg(long, value_name = "FILE")]
        exclude: Option<PathBuf>,
        /// Fold unlisted subtypes into coarse labels.
        #[arg(long)]
        rollup: bool,
        /// Tab-separated records instead of a table.
        #[arg(long)]
        records: bool,
    },
    /// Pairwise agreement between annotators.
    Agree {
        /// Annotation files as NAME=FILE (or FILE, named by its stem).
        #[arg(required = true, num_args = 2..)]
        files: Vec<String>,
        #[arg(long, value_name = "FILE")]
        exclude: Option<PathBuf>,
    },
    /// Edges added and removed between two versions of a treebank.
    Stats {
        #[arg(long, value_name = "FILE")]
        original: PathBuf,
        #[arg(long, value_name = "FILE")]
        edited: PathBuf,
        #[arg(long, value_enum, default_value = "conj")]
        scope: Scope,
        #[arg(long, value_name = "FILE")]
        exclude: Option<PathBuf>,
        #[arg(long)]
        rollup: bool,
        #[arg(long)]
        records: bool,
    },
    /// Write a sidecar of hash vectors for a corpus.
    Embed {
        #[arg(long, value_name = "LAYERS,DIM[,SEED]")]
        hash_embeddings: String,
        #[command(flatten)]
        io: Io,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

fn parse_hash(s: &str) -> Result<HashSpec> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |i: usize| -> Result<u64> {
        parts[i]
            .parse()
            .with_context(|| format!("--hash-embeddings: `{}` is not a number", parts[i]))
    };
    if !(2..=3).contains(&parts.len()) {
        bail!("--hash-embeddings expects LAYERS,DIM[,SEED], got `{}`", s);
    }
    let spec = HashSpec {
        layers: num(0)? as usize,
        dim: num(1)? as usize,
        seed: if parts.len() == 3 { num(2)? } else { 0 },
    };
    if spec.layers == 0 || spec.dim == 0 {
        bail!("--hash-embeddings: layers and dim must be positive");
    }
    Ok(spec)
}

impl EmbeddingArgs {
    fn spec(&self) -> Result<Option<EmbeddingSpec>> {
        Ok(match (&self.embeddings, &self.hash_embeddings) {
            (Some(p), _) => Some(EmbeddingSpec {
                sidecar: Some(p.clone()),
                hash: None,
            }),
            (None, Some(h)) => Some(EmbeddingSpec {
                sidecar: None,
                hash: Some(parse_hash(h)?),
            }),
            (None, None) => None,
        })
    }
}

fn provider(spec: &EmbeddingSpec) -> Result<Option<Box<dyn EmbeddingProvider>>> {
    if let Some(path) = &spec.sidecar {
        let text = io::read_text(path)?;
        let sidecar = SidecarEmbeddings::parse(&text).with_context(|| path.display().to_string())?;
        log::info!(
            "{}: {} token records, {} layers of {} values",
            path.display(),
            sidecar.len(),
            sidecar.layers(),
            sidecar.dim()
        );
        return Ok(Some(Box::new(sidecar)));
    }
    Ok(spec
        .hash
        .as_ref()
        .map(|h| Box::new(HashEmbeddings::new(h.layers, h.dim, h.seed)) as Box<dyn EmbeddingProvider>))
}

fn require_provider(spec: &EmbeddingSpec) -> Result<Box<dyn EmbeddingProvider>> {
    match provider(spec)? {
        Some(p) => Ok(p),
        None => bail!("the edge predictor needs token vectors: pass --embeddings FILE or --hash-embeddings L,D"),
    }
}

/// Apply `f` to every sentence on `jobs` threads, keeping input order and
/// reporting the first failing sentence.
fn map_sentences<F>(jobs: usize, corpus: &[Sentence], f: F) -> Result<Vec<Sentence>>
where
    F: Fn(usize, &Sentence) -> Result<Sentence> + Sync,
{
    let results: Vec<Result<Sentence>> = if jobs <= 1 {
        corpus.iter().enumerate().map(|(i, s)| f(i, s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("starting worker threads")?;
        pool.install(|| corpus.par_iter().enumerate().map(|(i, s)| f(i, s)).collect())
    };
    results.into_iter().collect()
}

fn excluded(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<Option<std::collections::BTreeSet<String>>> {
    match flag.as_ref().or(cfg.eval.exclude_ids.as_ref()) {
        Some(p) => Ok(Some(io::read_id_list(p)?)),
        None => Ok(None),
    }
}

fn filtered(corpus: Vec<Sentence>, ids: &Option<std::collections::BTreeSet<String>>) -> Vec<Sentence> {
    match ids {
        Some(ids) => exclude_ids(&corpus, ids),
        None => corpus,
    }
}

fn annotator(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_owned(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_owned());
            (name, path)
        }
    }
}

fn overrides(cli: &Cli) -> Result<Overrides> {
    let mut o = Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Convert { mode, .. } => o.mode = *mode,
        Command::Always { .. } => o.mode = Some(Mode::Always),
        Command::TrainProp {
            kind,
            features,
            epochs,
            emb,
            ..
        } => {
            o.kind = *kind;
            o.features = features.clone();
            o.epochs = *epochs;
            o.embeddings = emb.spec()?;
        }
        Command::ApplyProp {
            iterate,
            relabel_subjects,
            emb,
            ..
        } => {
            o.iterate = iterate.then_some(true);
            o.relabel_subjects = relabel_subjects.then_some(true);
            o.embeddings = emb.spec()?;
        }
        Command::TrainParser { epochs, emb, .. } => {
            o.epochs = *epochs;
            o.embeddings = emb.spec()?;
        }
        Command::Predict { emb, .. } => o.embeddings = emb.spec()?,
        Command::Evaluate { exclude, .. } | Command::Agree { exclude, .. } | Command::Stats { exclude, .. } => {
            o.exclude_ids = exclude.clone()
        }
        Command::Embed { .. } => {}
    }
    Ok(o)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides(&cli)?)?;
    log::info!("resolved configuration:\n{}", cfg.to_toml());

    match cli.command {
        Command::Convert { io: paths, .. } | Command::Always { io: paths } => {
            let corpus = io::read_corpus(&paths.input)?;
            let out = map_sentences(cfg.jobs, &corpus, |_, s| {
                Ok(match cfg.mode {
                    Mode::Always => always_baseline(s),
                    _ => convert(s, &cfg.convert),
                })
            })?;
            log::info!("converted {} sentences with {}", out.len(), cfg.mode.name());
            io::write_corpus_file(&paths.output, &out)
        }

        Command::TrainProp {
            gold, input, model, ..
        } => {
            let gold_corpus = io::read_corpus(&gold)?;
            let input_corpus = match &input {
                Some(p) => io::read_corpus(p)?,
                None => gold_corpus.clone(),
            };
            let provider = provider(&cfg.embeddings)?;
            let groups = cfg.prop.groups();
            if groups.embeddings && provider.is_none() {
                log::warn!("dense token features requested but no embeddings given; training without them");
            }
            let (instances, features) = training_set(
                &input_corpus,
                &gold_corpus,
                provider.as_deref(),
                groups,
                &cfg.prop.extract,
            )
            .with_context(|| format!("extracting instances from {}", gold.display()))?;
            let positives = instances.iter().filter(|i| i.gold == Some(true)).count();
            log::info!("{} instances, {} positive", instances.len(), positives);
            let trained = classify::train(&instances, &features, &cfg.prop)?;
            log::info!("trained {:?} model over {} features", trained.kind(), trained.vocab.len());
            io::write_bytes(&model, &trained.to_bytes())
        }

        Command::ApplyProp { model, io: paths, .. } => {
            let bytes = io::read_bytes(&model)?;
            let trained = PropModel::from_bytes(&bytes).with_context(|| format!("loading model {}", model.display()))?;
            let provider = provider(&cfg.embeddings)?;
            let corpus = io::read_corpus(&paths.input)?;
            let out = map_sentences(cfg.jobs, &corpus, |i, s| {
                classify::apply(&trained, s, i, provider.as_deref(), &cfg.apply)
                    .with_context(|| format!("sentence {}", conjprop::embed::sentence_key(s, i)))
            })?;
            io::write_corpus_file(&paths.output, &out)
        }

        Command::TrainParser { train, dev, model, .. } => {
            let train_corpus = io::read_corpus(&train)?;
            let dev_corpus = dev.as_deref().map(io::read_corpus).transpose()?;
            let provider = require_provider(&cfg.embeddings)?;
            let (trained, log) = parser::fit(&train_corpus, dev_corpus.as_deref(), provider.as_ref(), &cfg.parser)?;
            log::info!(
                "{} labels, {} epochs run",
                trained.labels.len(),
                log.len()
            );
            io::write_bytes(&model, &trained.to_bytes())
        }

        Command::Predict { model, io: paths, .. } => {
            let bytes = io::read_bytes(&model)?;
            let trained =
                EdgeScoreModel::from_bytes(&bytes).with_context(|| format!("loading model {}", model.display()))?;
            let provider = require_provider(&cfg.embeddings)?;
            let corpus = io::read_corpus(&paths.input)?;
            let out = map_sentences(cfg.jobs, &corpus, |i, s| {
                parser::predict(&trained, s, i, provider.as_ref())
                    .with_context(|| format!("sentence {}", conjprop::embed::sentence_key(s, i)))
            })?;
            io::write_corpus_file(&paths.output, &out)
        }

        Command::Evaluate {
            system,
            gold,
            exclude,
            rollup,
            records,
        } => {
            let ids = excluded(&cfg, &exclude)?;
            let sys = filtered(io::read_corpus(&system)?, &ids);
            let gld = filtered(io::read_corpus(&gold)?, &ids);
            let mut report =
                score(&sys, &gld).with_context(|| format!("aligning {} with {}", system.display(), gold.display()))?;
            if rollup {
                report.per_label = report.rollup(&cfg.eval.listed_labels);
            }
            let mut out = format!(
                "P {:.1}\nR {:.1}\nF1 {:.1}\n",
                100.0 * report.precision(),
                100.0 * report.recall(),
                100.0 * report.f1()
            );
            out.push_str(&if records { report.records() } else { report.table("system", "gold") });
            io::write_bytes(Path::new("-"), out.as_bytes())
        }

        Command::Agree { files, exclude } => {
            let ids = excluded(&cfg, &exclude)?;
            let mut annotations = Vec::new();
            for arg in &files {
                let (name, path) = annotator(arg);
                annotations.push((name, filtered(io::read_corpus(&path)?, &ids)));
            }
            let agreement = agreement_matrix(&annotations)?;
            let mut out = String::from("# precision of the column annotator against the row annotator\n");
            out.push_str(&agreement.matrix());
            for gold in 0..annotations.len() {
                for system in 0..annotations.len() {
                    if let Some(table) = agreement.pair_table(system, gold) {
                        out.push_str(&format!(
                            "\n# {} as system, {} as gold\n{}",
                            agreement.names[system], agreement.names[gold], table
                        ));
                    }
                }
            }
            io::write_bytes(Path::new("-"), out.as_bytes())
        }

        Command::Stats {
            original,
            edited,
            scope,
            exclude,
            rollup,
            records,
        } => {
            let ids = excluded(&cfg, &exclude)?;
            let a = filtered(io::read_corpus(&original)?, &ids);
            let b = filtered(io::read_corpus(&edited)?, &ids);
            let scope = match scope {
                Scope::Conj => DiffScope::ConjunctIncident,
                Scope::All => DiffScope::All,
            };
            let mut report = diff_stats(&a, &b, scope)
                .with_context(|| format!("aligning {} with {}", original.display(), edited.display()))?;
            if rollup {
                report = report.rollup(&cfg.eval.listed_labels);
            }
            let out = if records { report.records() } else { report.table() };
            io::write_bytes(Path::new("-"), out.as_bytes())
        }

        Command::Embed {
            hash_embeddings,
            io: paths,
        } => {
            let spec = parse_hash(&hash_embeddings)?;
            let corpus = io::read_corpus(&paths.input)?;
            let text = write_sidecar(&corpus, &HashEmbeddings::new(spec.layers, spec.dim, spec.seed))?;
            io::write_bytes(&paths.output, text.as_bytes())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
