//! `imt`: generate a corpus, train, simulate revision sessions, serve.

mod config;

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use imt_core::corpus::{generate, tokenize, ParallelCorpus, SyntheticSpec};
use imt_core::decoding::{beam_search, grid_beam_search, Constraint, SearchConfig, SearchContext, Strategy};
use imt_core::model::{encode_source, Direction, TranslationModel};
use imt_core::pipeline::train_system;
use imt_core::session::render_tokens;
use imt_core::simulator::{corpus_bleu, run_ideal_session, Report};
use imt_service::{AppState, ModelRegistry};

use config::Config;

#[derive(Parser)]
#[command(name = "imt", version, about = "Interactive translation workbench")]
struct Cli {
    /// TOML file with defaults; environment variables and flags win over it.
    #[arg(long, global = true, env = "IMT_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flag and environment layer over the config file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    #[arg(long, global = true, env = "IMT_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "IMT_BEAM")]
    beam: Option<usize>,
    #[arg(long, global = true, env = "IMT_MEMORY_CAPACITY")]
    memory_capacity: Option<usize>,
    /// Revisions before the memory is read.
    #[arg(long, global = true, env = "IMT_MEMORY_THRESHOLD")]
    memory_threshold: Option<u64>,
    #[arg(long, global = true, env = "IMT_ONLINE_LR")]
    online_lr: Option<f64>,
    /// unidir, unidir_g or bidir; `simulate` takes a comma-separated list.
    #[arg(long, global = true, env = "IMT_STRATEGY", value_delimiter = ',')]
    strategy: Vec<Strategy>,
    /// Revisions per sentence in simulation.
    #[arg(long, global = true, env = "IMT_BUDGET")]
    budget: Option<usize>,
    #[arg(long, global = true, env = "IMT_NO_MEMORY")]
    no_memory: bool,
    #[arg(long, global = true, env = "IMT_NO_ONLINE")]
    no_online: bool,
    /// Let online updates carry over from one simulated session to the next.
    #[arg(long, global = true, env = "IMT_GLOBAL_MUTATION")]
    global_mutation: bool,
}

impl Overrides {
    fn apply(&self, c: &mut Config) {
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if let Some(v) = self.beam {
            c.beam = v;
        }
        if let Some(v) = self.memory_capacity {
            c.memory_capacity = v;
        }
        if let Some(v) = self.memory_threshold {
            c.memory_threshold = v;
        }
        if let Some(v) = self.online_lr {
            c.online_lr = v;
        }
        if let Some(&s) = self.strategy.first() {
            c.strategy = s;
        }
        if let Some(v) = self.budget {
            c.budget = v;
        }
        if self.no_memory {
            c.memory = false;
        }
        if self.no_online {
            c.online = false;
        }
        if self.global_mutation {
            c.global_mutation = true;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic corpus into `<out>/train.*` and `<out>/test.*`.
    Gen {
        /// Corpus spec in TOML; the built-in default when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and its memory gate on `<corpus>/train.*`.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Corpus BLEU of plain beam search.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Translate one sentence, or every line of stdin.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Lines of `<order index>\t<word>` that must appear in the output.
        #[arg(long)]
        constraints: Option<PathBuf>,
        source: Option<String>,
    },
    /// Run the simulated reviser and print a report.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Static UI files served under `/`.
        #[arg(long)]
        assets: Option<PathBuf>,
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprintln!("imt: {}", text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("imt: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Gen { spec, out } => gen(&config, spec.as_deref(), &out),
        Command::Train { corpus, out, epochs } => train(config, &corpus, &out, epochs),
        Command::Eval { checkpoint, corpus, split } => eval(&config, &checkpoint, &corpus, &split),
        Command::Translate {
            checkpoint,
            constraints,
            source,
        } => translate(&config, &checkpoint, constraints.as_deref(), source),
        Command::Simulate {
            checkpoint,
            corpus,
            split,
            json,
        } => simulate(&config, &cli.overrides.strategy, &checkpoint, &corpus, &split, json.as_deref()),
        Command::Serve {
            checkpoint,
            host,
            port,
            assets,
            transcripts,
        } => serve(&config, &checkpoint, &host, port, assets, transcripts),
        Command::Config => {
            print!("{}", config.to_toml()?);
            Ok(())
        }
    }
}

fn gen(config: &Config, spec_path: Option<&Path>, out: &Path) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = config.seed {
        spec.seed = seed;
    }
    let corpus = generate(&spec)?;
    corpus.train.save(out, "train")?;
    corpus.test.save(out, "test")?;
    std::fs::write(out.join("spec.toml"), spec.to_toml())?;
    println!(
        "wrote {} training and {} test pairs to {}",
        corpus.train.pairs.len(),
        corpus.test.pairs.len(),
        out.display()
    );
    Ok(())
}

fn load_split(dir: &Path, name: &str) -> Result<ParallelCorpus> {
    ParallelCorpus::load(dir, name).with_context(|| format!("loading {name} split from {}", dir.display()))
}

fn train(mut config: Config, corpus_dir: &Path, out: &Path, epochs: Option<usize>) -> Result<()> {
    if let Some(e) = epochs {
        config.system.train.epochs = e;
    }
    config.system.train.validate()?;
    let corpus = load_split(corpus_dir, "train")?;
    let held_out = if corpus_dir.join("test.src").exists() {
        Some(load_split(corpus_dir, "test")?)
    } else {
        None
    };
    let system = train_system(&corpus, held_out.as_ref(), &config.system)?;
    system.model.save(out)?;
    std::fs::write(out.join("curve.tsv"), system.curve.to_tsv())?;
    std::fs::write(out.join("config.toml"), config.to_toml()?)?;
    println!("saved model to {}", out.display());
    if let Some(last) = system.curve.epoch_loss.last() {
        println!("final epoch loss: {last:.4}");
    }
    match system.held_out_accuracy {
        Some(acc) => println!("held-out token accuracy: {acc:.4}"),
        None => println!("held-out token accuracy: n/a (no test split)"),
    }
    Ok(())
}

fn load_model(dir: &Path) -> Result<TranslationModel> {
    TranslationModel::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn decode(model: &TranslationModel, source: &[String], constraints: &[Constraint], beam: usize) -> Result<Vec<String>> {
    let ids = model.source_vocab.encode(source);
    let encoded = encode_source(&model.params, &ids)?;
    let ctx = SearchContext::new(&model.params, &encoded);
    let search = SearchConfig::for_source(ids.len(), beam);
    let hyp = if constraints.is_empty() {
        beam_search(ctx, Direction::Forward, search)?
    } else {
        grid_beam_search(ctx, Direction::Forward, constraints, search)?
    };
    let tokens: Vec<_> = hyp.tokens.into_iter().filter(|t| !t.is_spacing()).collect();
    Ok(render_tokens(model, &tokens))
}

fn eval(config: &Config, checkpoint: &Path, corpus_dir: &Path, split: &str) -> Result<()> {
    let model = load_model(checkpoint)?;
    let corpus = load_split(corpus_dir, split)?;
    let mut hyps = Vec::with_capacity(corpus.pairs.len());
    let mut refs = Vec::with_capacity(corpus.pairs.len());
    for pair in &corpus.pairs {
        hyps.push(decode(&model, &pair.source, &[], config.beam)?);
        refs.push(vec![pair.target.clone()]);
    }
    println!("BLEU {:.2}", 100.0 * corpus_bleu(&hyps, &refs)?);
    Ok(())
}

/// Parses `<order index>\t<word>` lines and returns the words by index.
fn read_constraints(path: &Path, model: &TranslationModel) -> Result<Vec<Constraint>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((index, word)) = line.split_once('\t') else {
            bail!("{}:{}: expected <index>\\t<word>", path.display(), n + 1);
        };
        let index: usize = index
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad index {index:?}", path.display(), n + 1))?;
        let word = word.trim();
        if word.is_empty() || word.contains(char::is_whitespace) {
            bail!("{}:{}: constraint must be a single word", path.display(), n + 1);
        }
        entries.push((index, word.to_string()));
    }
    entries.sort_by_key(|e| e.0);
    Ok(entries
        .into_iter()
        .map(|(_, w)| {
            let id = model.target_vocab.id(&w);
            if model.target_vocab.contains(&w) {
                Constraint::new(id)
            } else {
                Constraint::with_surface(id, w)
            }
        })
        .collect())
}

fn translate(config: &Config, checkpoint: &Path, constraints: Option<&Path>, source: Option<String>) -> Result<()> {
    let model = load_model(checkpoint)?;
    let constraints = match constraints {
        Some(p) => read_constraints(p, &model)?,
        None => Vec::new(),
    };
    let lines: Vec<String> = match source {
        Some(s) => vec![s],
        None => std::io::stdin().lock().lines().collect::<std::io::Result<_>>()?,
    };
    let mut out = std::io::stdout().lock();
    for line in lines {
        let words = tokenize(&line);
        if words.is_empty() {
            writeln!(out)?;
            continue;
        }
        writeln!(out, "{}", decode(&model, &words, &constraints, config.beam)?.join(" "))?;
    }
    Ok(())
}

fn simulate(
    config: &Config,
    strategies: &[Strategy],
    checkpoint: &Path,
    corpus_dir: &Path,
    split: &str,
    json: Option<&Path>,
) -> Result<()> {
    let model = Arc::new(load_model(checkpoint)?);
    let corpus = load_split(corpus_dir, split)?;
    let strategies = if strategies.is_empty() {
        vec![config.strategy]
    } else {
        strategies.to_vec()
    };
    let mut metrics = Vec::new();
    for s in strategies {
        log::info!("simulating {s}");
        metrics.push(run_ideal_session(model.clone(), &corpus, &config.simulation(s))?);
    }
    let report = Report::new(&metrics)?;
    print!("{}", report.to_text());
    if let Some(path) = json {
        std::fs::write(path, report.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn serve(
    config: &Config,
    checkpoint: &Path,
    host: &str,
    port: u16,
    assets: Option<PathBuf>,
    transcripts: Option<PathBuf>,
) -> Result<()> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .with_context(|| format!("bad address {host}:{port}"))?;
    let mut models = ModelRegistry::new();
    let name = models.load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let state = AppState::new(models, config.session(), transcripts);
    let runtime = tokio::runtime::Runtime::new()?;
    println!("serving checkpoint {name:?} on http://{addr}");
    runtime
        .block_on(imt_service::serve(state, addr, assets.as_deref()))
        .with_context(|| format!("serving on {addr}"))?;
    Ok(())
}
