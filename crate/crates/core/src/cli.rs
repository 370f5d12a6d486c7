//! Command-line front end. Corpora are given as a directory holding
//! `corpus.txt`, `corpus.ann` and `corpus.conll`, or as a path prefix.
//!
//! Exit codes: 0 success, 2 usage, config or parse error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data_io::{
    generate_synthetic, load_corpus, parse_annotations_against, write_corpus, AnnotatedCorpus, CorpusPaths,
    Schema, WriteOptions, CORPUS_STEM,
};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::pipeline::{PipelineModel, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "votelstm", version, about = "Voting bi-LSTM key-phrase and relation extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training threads, 0 for all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train, dev and test corpora under OUT.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the key-phrase ensembles into model file OUT.
    TrainA(TrainArgs),
    /// Train the relation ensembles into model file OUT.
    TrainB(TrainArgs),
    /// Tune class weights and the active relation set on a dev corpus.
    Tune {
        model: PathBuf,
        /// Defaults to `paths.dev` of the stored config.
        dev: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotate INPUT and write the result under OUT.
    Predict {
        model: PathBuf,
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        scenario: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score PRED against GOLD.
    Eval {
        gold: PathBuf,
        pred: PathBuf,
        #[arg(long, default_value_t = 1)]
        scenario: u8,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Configuration whose schema the corpora use.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Defaults to `paths.train` of the config.
    pub train: Option<PathBuf>,
    /// Defaults to `paths.dev` of the config.
    pub dev: Option<PathBuf>,
    /// Model file. An existing compatible model keeps its other half.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { common, out } => cmd_synth(&load_config(&common)?, &out),
        Command::TrainA(a) => cmd_train(&a, Part::KeyPhrases),
        Command::TrainB(a) => cmd_train(&a, Part::Relations),
        Command::Tune { model, dev, top_k, out } => cmd_tune(&model, dev.as_deref(), top_k, &out),
        Command::Predict {
            model,
            input,
            scenario,
            out,
        } => cmd_predict(&model, &input, Scenario::from_number(scenario)?, &out),
        Command::Eval {
            gold,
            pred,
            scenario,
            out,
            config,
        } => {
            let schema = match config {
                Some(p) => RunConfig::load(&p)?.schema()?,
                None => Schema::default(),
            };
            let report = cmd_eval(&gold, &pred, Scenario::from_number(scenario)?, &schema, out.as_deref())?;
            print!("{report}");
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(())
        }
    }
}

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `train/`, `dev/` and `test/` corpus directories under `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let s = &cfg.synth;
    let (train, dev, test) = generate_synthetic(&cfg.grammar()?, cfg.seed, s.n_train, s.n_dev, s.n_test)?;
    for (name, corpus) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        write_corpus(corpus, dir.join(CORPUS_STEM), WriteOptions::default())?;
        log::info!(
            "{name}: {} sentences, {} phrases, {} relations",
            corpus.sentences.len(),
            corpus.kphrases.len(),
            corpus.relations.len()
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    KeyPhrases,
    Relations,
}

fn required(path: Option<&Path>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    path.map(Path::to_path_buf)
        .or_else(|| fallback.cloned())
        .ok_or_else(|| Error::Config(format!("no {what} corpus given")))
}

fn cmd_train(args: &TrainArgs, part: Part) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let schema = cfg.schema()?;
    let train = load_corpus(required(args.train.as_deref(), cfg.paths.train.as_ref(), "training")?, &schema)?;
    let dev = load_corpus(required(args.dev.as_deref(), cfg.paths.dev.as_ref(), "dev")?, &schema)?;
    let mut model = PipelineModel::for_training(&cfg, &train)?;
    if args.out.exists() {
        let old = PipelineModel::load(&args.out)?;
        let compatible = old.encoder == model.encoder
            && old.schema == model.schema
            && old.config.train.hidden1 == cfg.train.hidden1
            && old.config.train.hidden2 == cfg.train.hidden2;
        if compatible {
            match part {
                Part::KeyPhrases => model.relations = old.relations,
                Part::Relations => model.kphrases = old.kphrases,
            }
        } else {
            log::warn!("{} was built with another encoder or shape; replacing it", args.out.display());
        }
    }
    match part {
        Part::KeyPhrases => model.train_kphrases(&train, &dev)?,
        Part::Relations => model.train_relations(&train, &dev)?,
    }
    model.save(&args.out)?;
    log::info!("model written to {}", args.out.display());
    Ok(())
}

pub fn cmd_tune(model_path: &Path, dev: Option<&Path>, top_k: Option<usize>, out: &Path) -> Result<()> {
    let mut model = PipelineModel::load(model_path)?;
    let dev_path = required(dev, model.config.paths.dev.as_ref(), "dev")?;
    let dev = load_corpus(&dev_path, &model.schema)?;
    let record = model.tune(&dev, top_k)?;
    log::info!(
        "tuned: weights {:?} active {:?} dev f1 {:.4} -> {:.4}",
        record.weights,
        record.active_relations,
        record.dev_f1_before,
        record.dev_f1_after
    );
    model.save(out)?;
    Ok(())
}

pub fn cmd_predict(model_path: &Path, input: &Path, scenario: Scenario, out: &Path) -> Result<()> {
    let model = PipelineModel::load(model_path)?;
    let corpus = load_corpus(input, &model.schema)?;
    let pred = model.predict(&corpus, scenario)?;
    fs::create_dir_all(out)?;
    write_corpus(&pred, out.join(CORPUS_STEM), scenario.write_options())?;
    Ok(())
}

/// Scores `pred` against `gold`. In scenario 3 the prediction's relations
/// may refer to the gold phrase ids.
pub fn cmd_eval(
    gold: &Path,
    pred: &Path,
    scenario: Scenario,
    schema: &Schema,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let gold = load_corpus(gold, schema)?;
    let pred = load_prediction(&gold, pred, scenario, schema)?;
    let report = EvalReport::new(scenario.number(), &gold, &pred);
    if let Some(p) = out {
        fs::write(p, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(report)
}

fn load_prediction(
    gold: &AnnotatedCorpus,
    pred: &Path,
    scenario: Scenario,
    schema: &Schema,
) -> Result<AnnotatedCorpus> {
    if scenario != Scenario::Relations {
        return load_corpus(pred, schema);
    }
    let paths = CorpusPaths::resolve(pred);
    let text = fs::read_to_string(&paths.text)?;
    if text.trim_end_matches('\n') != gold.document_text().trim_end_matches('\n') {
        return Err(Error::Alignment(format!(
            "{} does not match the gold text",
            paths.text.display()
        )));
    }
    if paths.ann.exists() {
        parse_annotations_against(gold, &paths.ann)
    } else {
        Ok(gold.unannotated())
    }
}
