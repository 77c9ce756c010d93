//! Command-line surface of the `pde` binary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::{pos_lite, spans_to_token_tags, Annotators};
use crate::config::{AppConfig, DataPaths};
use crate::corpus::{auto_annotate, build_vocab, load_jsonl, synth_corpus, write_jsonl, Channel, MentionRecord};
use crate::metrics::{format_per_label, format_table};
use crate::model::{model_grad_check, EncoderKind, Model};
use crate::pipeline::{run_pipeline, PipelineOutput};
use crate::train::{evaluate, save_log, train};
use crate::typesys::Taxonomy;

/// Checkpoint file written by `train`.
pub const CHECKPOINT_FILE: &str = "model.json";
/// Per-epoch log written by `train`.
pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files. Exit code 1.
    Validation(String),
    /// Failure while running. Exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "pde", version, about = "Fine-grained personal-data entity typing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and write the checkpoint and epoch log to --out.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Add annotator spans and feature channels to JSONL sentences.
    Annotate(AnnotateArgs),
    /// Type the mentions of JSONL sentences with a checkpoint.
    Pipeline(PipelineArgs),
    /// Finite-difference gradient check of each encoder on a toy model.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic corpus with a matching config.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON config; every section is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    /// Comma-separated subset of pos,ner,typ; `none` disables all.
    #[arg(long, value_parser = parse_channels)]
    pub channels: Option<ChannelList>,
    /// Training corpus; overrides `data.train`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Accept a learning rate outside the safe range.
    #[arg(long)]
    pub unsafe_lr: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled corpus; defaults to `data.test`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Writes the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Checks every encoder when omitted.
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelList(pub Vec<Channel>);

fn parse_channels(s: &str) -> Result<ChannelList, String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Ok(ChannelList(Vec::new()));
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let c: Channel = part.trim().parse()?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(ChannelList(out))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let msg = msg.trim_end().strip_prefix("error: ").unwrap_or(msg.trim_end());
            return Err(CliError::Validation(msg.to_owned()));
        }
    };
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{}: no such file", path.display())))
    }
}

fn load_config(arg: &ConfigArg) -> Result<AppConfig, CliError> {
    match &arg.config {
        Some(p) => {
            require_file(p)?;
            AppConfig::load(p).map_err(invalid)
        }
        None => Ok(AppConfig::default()),
    }
}

fn load_records(path: &Path, tax: &Taxonomy, annotators: &Annotators) -> Result<Vec<MentionRecord>, CliError> {
    require_file(path)?;
    let mut recs = load_jsonl(path, tax).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    auto_annotate(&mut recs, annotators, false);
    Ok(recs)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(k) = a.encoder {
        cfg.encoder.kind = k;
    }
    if let Some(ChannelList(c)) = a.channels {
        cfg.encoder.channels = c;
    }
    if a.unsafe_lr {
        cfg.train.unsafe_lr = true;
    }
    cfg.encoder.validate().map_err(invalid)?;
    cfg.train.validate().map_err(invalid)?;
    let train_path = a
        .data
        .or(cfg.data.train.clone())
        .ok_or_else(|| invalid("no training data: pass --data or set data.train"))?;
    let dev_path = cfg.data.dev.clone().ok_or_else(|| invalid("no dev data: set data.dev"))?;
    if let Some(e) = &cfg.embeddings {
        require_file(e)?;
    }

    let tax = cfg.taxonomy().map_err(invalid)?;
    let annotators = cfg.annotators().map_err(invalid)?;
    let train_set = load_records(&train_path, &tax, &annotators)?;
    let dev_set = load_records(&dev_path, &tax, &annotators)?;
    let test_set = match &cfg.data.test {
        Some(p) => Some(load_records(p, &tax, &annotators)?),
        None => None,
    };

    let embeddings = cfg.embeddings.as_deref().map(|p| (p, cfg.encoder.word_dim));
    let (vocab, pretrained) = build_vocab(&train_set, embeddings).map_err(invalid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let model = Model::new(cfg.encoder.clone(), tax, vocab, &pretrained, &mut rng).map_err(invalid)?;
    let outcome = train(model, &train_set, &dev_set, &cfg.train).map_err(runtime)?;

    create_dir(&a.out)?;
    let ck = a.out.join(CHECKPOINT_FILE);
    outcome.best.save(&ck).map_err(runtime)?;
    save_log(a.out.join(LOG_FILE), &outcome.log).map_err(runtime)?;

    let name = cfg.encoder.kind.name().to_uppercase();
    let dev_name = format!("{name} dev (epoch {})", outcome.best_epoch);
    let mut rows = vec![(dev_name, outcome.best_dev.clone())];
    if let Some(t) = &test_set {
        rows.push((format!("{name} test"), evaluate(&outcome.best, t).map_err(runtime)?));
    }
    let table: Vec<(&str, &_)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    print!("{}", format_table(&table));
    println!("checkpoint: {}", ck.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let data = a
        .data
        .or(cfg.data.test.clone())
        .ok_or_else(|| invalid("no evaluation data: pass --data or set data.test"))?;
    require_file(&a.checkpoint)?;
    let expected = match cfg.taxonomy {
        Some(_) => Some(cfg.taxonomy().map_err(invalid)?),
        None => None,
    };
    let model = Model::load(&a.checkpoint, expected.as_ref()).map_err(invalid)?;
    let annotators = cfg.annotators().map_err(invalid)?;
    let records = load_records(&data, &model.taxonomy, &annotators)?;
    let report = evaluate(&model, &records).map_err(runtime)?;
    let name = model.config.kind.name().to_uppercase();
    print!("{}", format_table(&[(name.as_str(), &report)]));
    log::info!("per-label scores:\n{}", format_per_label(&report));
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &report).map_err(runtime)?;
        w.flush().map_err(runtime)?;
    }
    Ok(())
}

fn read_jsonl_values(path: &Path) -> Result<Vec<serde_json::Value>, CliError> {
    require_file(path)?;
    let file = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn tokens_of(v: &serde_json::Value, path: &Path, line: usize) -> Result<Vec<String>, CliError> {
    serde_json::from_value(v.get("tokens").cloned().unwrap_or_default())
        .map_err(|_| CliError::Validation(format!("{} line {line}: missing or malformed tokens", path.display())))
}

fn cmd_annotate(a: AnnotateArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    let annotators = cfg.annotators().map_err(invalid)?;
    let lines = read_jsonl_values(&a.data)?;
    let mut w = output(a.out.as_deref())?;
    for (i, mut v) in lines.into_iter().enumerate() {
        let tokens = tokens_of(&v, &a.data, i + 1)?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| CliError::Validation(format!("{} line {}: not an object", a.data.display(), i + 1)))?;
        let n = tokens.len();
        let spans = annotators.annotate(&tokens);
        let ner = spans_to_token_tags(&annotators.annotate_dictionary(&tokens), n).expect("resolved spans are in range");
        let typ = spans_to_token_tags(&spans, n).expect("resolved spans are in range");
        let fill = |o: &mut serde_json::Map<String, serde_json::Value>, key: &str, tags: Vec<String>| {
            if o.get(key).is_none_or(|x| x.is_null()) {
                o.insert(key.to_owned(), tags.into());
            }
        };
        fill(obj, "pos", pos_lite(&tokens));
        fill(obj, "ner", ner);
        fill(obj, "typ", typ);
        obj.insert("spans".into(), serde_json::to_value(&spans).map_err(runtime)?);
        serde_json::to_writer(&mut w, &v).map_err(runtime)?;
        w.write_all(b"\n").map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

#[derive(Debug, Deserialize)]
struct SentenceIn {
    tokens: Vec<String>,
    #[serde(default)]
    mentions: Option<Vec<MentionIn>>,
}

#[derive(Debug, Deserialize)]
struct MentionIn {
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize)]
struct SentenceOut<'a> {
    sentence: usize,
    #[serde(flatten)]
    output: &'a PipelineOutput,
}

fn cmd_pipeline(a: PipelineArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    require_file(&a.checkpoint)?;
    let tax = cfg.taxonomy().map_err(invalid)?;
    let model = Model::load(&a.checkpoint, Some(&tax)).map_err(invalid)?;
    let annotators = cfg.annotators().map_err(invalid)?;
    let overrides = cfg.override_table(&tax).map_err(invalid)?;
    let lines = read_jsonl_values(&a.data)?;
    let mut w = output(a.out.as_deref())?;
    for (i, v) in lines.into_iter().enumerate() {
        let s: SentenceIn = serde_json::from_value(v)
            .map_err(|e| CliError::Validation(format!("{} line {}: {e}", a.data.display(), i + 1)))?;
        let mentions: Option<Vec<(usize, usize)>> = s.mentions.map(|m| m.iter().map(|m| (m.start, m.end)).collect());
        let outs = run_pipeline(&s.tokens, mentions.as_deref(), &model, &annotators, &overrides)
            .map_err(|e| CliError::Validation(format!("{} line {}: {e}", a.data.display(), i + 1)))?;
        for o in &outs {
            serde_json::to_writer(&mut w, &SentenceOut { sentence: i, output: o }).map_err(runtime)?;
            w.write_all(b"\n").map_err(runtime)?;
        }
    }
    w.flush().map_err(runtime)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let kinds = match a.encoder {
        Some(k) => vec![k],
        None => EncoderKind::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for k in kinds {
        let r = model_grad_check(k, a.seed).map_err(runtime)?;
        let verdict = if r.passed { "ok" } else { "FAILED" };
        println!("{:<4} max relative error {:.3e} {verdict}", k.name().to_uppercase(), r.max_rel_err);
        if !r.passed {
            failed.push(k.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = match a.config.config {
        Some(_) => load_config(&a.config)?,
        None => AppConfig::synthetic(),
    };
    let corpus = synth_corpus(&cfg.synth, a.seed).map_err(invalid)?;
    create_dir(&a.out)?;
    let write_split = |name: &str, recs: &[MentionRecord]| -> Result<(), CliError> {
        let mut w = create(&a.out.join(name))?;
        write_jsonl(&mut w, recs, &corpus.taxonomy).map_err(runtime)?;
        w.flush().map_err(runtime)
    };
    write_split("train.jsonl", &corpus.train)?;
    write_split("dev.jsonl", &corpus.dev)?;
    write_split("test.jsonl", &corpus.test)?;
    let tax_json = serde_json::to_string_pretty(corpus.taxonomy.labels()).map_err(runtime)?;
    std::fs::write(a.out.join("taxonomy.json"), tax_json + "\n").map_err(runtime)?;

    let generated = AppConfig {
        taxonomy: Some("taxonomy.json".into()),
        overrides: Some(Default::default()),
        data: DataPaths {
            train: Some("train.jsonl".into()),
            dev: Some("dev.jsonl".into()),
            test: Some("test.jsonl".into()),
        },
        synth: cfg.synth.clone(),
        ..cfg
    };
    let json = serde_json::to_string_pretty(&generated).map_err(runtime)?;
    std::fs::write(a.out.join("config.json"), json + "\n").map_err(runtime)?;
    println!(
        "wrote {} train, {} dev, {} test mentions over {} labels to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.taxonomy.len(),
        a.out.display()
    );
    Ok(())
}
