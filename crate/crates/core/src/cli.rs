//! Command-line entry points. Each subcommand parses its flags, calls the
//! library, and writes outputs plus a `provenance.json` describing the run.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::corpus::{
    entity_bias_table, load_corpus, load_corpus_with, save_corpus, temporal_split, write_bias_tsv,
    Corpus, Label, LoadOptions, SplitResult,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_with, EvalReport, Metric, PredictionSet, ReportTable};
use crate::models::EncoderKind;
use crate::recognizer::{recognize_corpus, Gazetteer, RecognizeOptions};
use crate::synthetic::{gazetteer_lines, generate, BiasSpec};
use crate::trainer::{
    grid_search_alpha, predict_endef, predict_single, train_baseline_from, train_endef,
    train_entity_only, InputView, PredictMode, TrainConfig,
};
use crate::VERSION;

#[derive(Debug, Parser)]
#[command(name = "endef", version, about = "Entity-debiased fake news detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus with period-dependent entity bias.
    Synthesize(SynthesizeArgs),
    /// Temporal train/validation/test split.
    Split(SplitArgs),
    /// Fill in entity lists with a gazetteer.
    Recognize(RecognizeArgs),
    /// Train a model on a split directory.
    Train(TrainArgs),
    /// Score predictions or a checkpoint on a corpus.
    Evaluate(EvaluateArgs),
    /// Per-entity fake fractions before and after a time boundary.
    BiasReport(BiasReportArgs),
    /// Per-piece entity, detector, fused and debiased probabilities.
    CaseReport(CaseReportArgs),
    /// Train once per alpha in 0.0..=1.0 and pick the best on validation.
    GridAlpha(GridAlphaArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file with a full generator spec.
    #[arg(long, conflicts_with_all = ["entities", "low", "low_later"])]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of entities in the flipped design.
    #[arg(long, default_value_t = 8)]
    pub entities: usize,
    /// Training-period fake fraction of the real-leaning entities.
    #[arg(long, default_value_t = 0.03)]
    pub low: f64,
    /// Later-period fake fraction of the entities that led fake in training.
    #[arg(long, default_value_t = 0.33)]
    pub low_later: f64,
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    pub train_ratio: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Lowercase tokens built from a raw `text` field.
    #[arg(long)]
    pub lowercase: bool,
}

#[derive(Debug, Args)]
pub struct RecognizeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// One entity per line; only the first tab-separated column is used.
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub case_sensitive: bool,
    #[arg(long)]
    pub dedupe: bool,
    /// Also replace entity lists that came with the corpus.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Endef,
    Baseline,
    EntityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Boe,
    Cnn,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Boe => EncoderKind::BagOfEmbeddingsMlp,
            EncoderArg::Cnn => EncoderKind::ConvNgram,
        }
    }
}

/// Flags that override the config file.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// TOML training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    /// Detector encoder.
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    #[arg(long, value_enum)]
    pub entity_encoder: Option<EncoderArg>,
    /// Embedding size of both encoders.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Hidden layer size of both encoders.
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub augment_p: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub early_stop_metric: Option<String>,
}

impl TrainOverrides {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { cfg.$field = v; }
            )*};
        }
        set!(seed, lr, batch_size, max_epochs, patience, alpha, beta, min_freq);
        if let Some(e) = self.encoder {
            cfg.detector.kind = e.into();
        }
        if let Some(e) = self.entity_encoder {
            cfg.entity_model.kind = e.into();
        }
        for spec in [&mut cfg.detector, &mut cfg.entity_model] {
            if let Some(d) = self.embed_dim {
                spec.embed_dim = d;
            }
            if let Some(h) = self.hidden_dim {
                spec.hidden_dim = h;
            }
        }
        if let Some(p) = self.augment_p {
            cfg.augment.p = p;
        }
        if self.no_augment {
            cfg.augment.enabled = false;
        }
        if let Some(m) = &self.early_stop_metric {
            cfg.early_stop_metric = m.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.jsonl, val.jsonl and test.jsonl.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Endef)]
    pub model: ModelKind,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSONL with `score` and `label` per line.
    #[arg(long, conflicts_with_all = ["checkpoint", "corpus"])]
    pub predictions: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_MAXFPR)]
    pub maxfpr: f64,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BiasReportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Unix time separating the two periods; pieces at or after it are "after".
    #[arg(long)]
    pub boundary: i64,
    /// Recognize entities for pieces without them first.
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaseReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only these piece ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GridAlphaArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

/// Parses `args`, runs the command, and returns the process exit code:
/// 0 on success, 1 on a failed operation, 2 on a usage error.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synthesize(a) => synthesize(a),
        Command::Split(a) => split(a),
        Command::Recognize(a) => recognize(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::BiasReport(a) => bias_report(a),
        Command::CaseReport(a) => case_report(a),
        Command::GridAlpha(a) => grid_alpha(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn provenance(command: &str, seed: Option<u64>, config: Value) -> Value {
    json!({
        "command": command,
        "version": VERSION,
        "seed": seed,
        "config": config,
    })
}

/// `out.jsonl` gets `out.jsonl.provenance.json` next to it.
fn provenance_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    out.with_file_name(name)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<BiasSpec>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => BiasSpec::flipped(a.entities, a.low, a.low_later, 0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(s) = a.signal {
        spec.content_signal_strength = s;
    }
    if let Some(n) = a.n_train {
        spec.n_train = n;
    }
    if let Some(n) = a.n_val {
        spec.n_val = n;
    }
    if let Some(n) = a.n_test {
        spec.n_test = n;
    }
    let data = generate(&spec)?;
    create_dir(&a.out_dir)?;
    save_corpus(&data.corpus, a.out_dir.join("corpus.jsonl"))?;
    let mut ledger = Vec::new();
    write_bias_tsv(&data.ledger, &mut ledger).map_err(|e| Error::io(a.out_dir.join("ledger.tsv"), e))?;
    write_file(&a.out_dir.join("ledger.tsv"), ledger)?;
    write_file(&a.out_dir.join("gazetteer.tsv"), gazetteer_lines(&spec))?;
    let (train_ratio, val_ratio) = spec.split_ratios();
    write_json(
        &a.out_dir.join("synthesis.json"),
        &json!({
            "boundary": data.boundary,
            "train_ratio": train_ratio,
            "val_ratio": val_ratio,
            "spec": spec,
        }),
    )?;
    write_json(
        &a.out_dir.join("provenance.json"),
        &provenance("synthesize", Some(spec.seed), serde_json::to_value(&spec)?),
    )?;
    println!(
        "{} pieces, boundary {}, train_ratio {train_ratio}, val_ratio {val_ratio}",
        data.corpus.len(),
        data.boundary
    );
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let corpus = load_corpus_with(&a.corpus, LoadOptions { lowercase: a.lowercase })?;
    let parts = temporal_split(&corpus, a.train_ratio, a.val_ratio, a.seed)?;
    create_dir(&a.out_dir)?;
    for (name, part) in split_files(&parts) {
        save_corpus(part, a.out_dir.join(name))?;
    }
    write_json(
        &a.out_dir.join("provenance.json"),
        &provenance(
            "split",
            Some(a.seed),
            json!({
                "corpus": path_str(&a.corpus),
                "train_ratio": a.train_ratio,
                "val_ratio": a.val_ratio,
                "lowercase": a.lowercase,
            }),
        ),
    )?;
    println!(
        "train {}, val {}, test {}",
        parts.train.len(),
        parts.validation.len(),
        parts.test.len()
    );
    Ok(())
}

fn split_files(parts: &SplitResult) -> [(&'static str, &Corpus); 3] {
    [
        ("train.jsonl", &parts.train),
        ("val.jsonl", &parts.validation),
        ("test.jsonl", &parts.test),
    ]
}

fn load_split(dir: &Path) -> Result<SplitResult> {
    Ok(SplitResult {
        train: load_corpus(dir.join("train.jsonl"))?,
        validation: load_corpus(dir.join("val.jsonl"))?,
        test: load_corpus(dir.join("test.jsonl"))?,
    })
}

fn recognize(a: RecognizeArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let gazetteer = Gazetteer::load(&a.gazetteer, a.case_sensitive)?;
    let opts = RecognizeOptions {
        dedupe: a.dedupe,
        overwrite: a.overwrite,
    };
    let out = recognize_corpus(&corpus, &gazetteer, opts)?;
    save_corpus(&out, &a.out)?;
    write_json(
        &provenance_beside(&a.out),
        &provenance(
            "recognize",
            None,
            json!({
                "corpus": path_str(&a.corpus),
                "gazetteer": path_str(&a.gazetteer),
                "case_sensitive": a.case_sensitive,
                "dedupe": a.dedupe,
                "overwrite": a.overwrite,
            }),
        ),
    )
}

/// Trains one model and writes its checkpoint, history and test report.
fn train_one(model: ModelKind, split: &SplitResult, cfg: &TrainConfig, dir: &Path) -> Result<EvalReport> {
    create_dir(dir)?;
    let (checkpoint, history, test) = match model {
        ModelKind::Endef => {
            let out = train_endef(split, cfg)?;
            let test = predict_endef(&out.model, &split.test, PredictMode::Debiased)?;
            (Checkpoint::Endef(out.model.clone()), out.history_jsonl()?, test)
        }
        ModelKind::Baseline | ModelKind::EntityOnly => {
            let (out, view) = if model == ModelKind::Baseline {
                (train_baseline_from(split, cfg)?, InputView::Tokens)
            } else {
                (train_entity_only(split, cfg)?, InputView::Entities)
            };
            let test = predict_single(&out.model, &split.test, view)?;
            let history = out.history_jsonl()?;
            (Checkpoint::Single { model: out.model, view }, history, test)
        }
    };
    let report = evaluate_with(&test, crate::metrics::DEFAULT_MAXFPR)?;
    checkpoint.save(dir.join("checkpoint.json"))?;
    write_file(&dir.join("history.jsonl"), history)?;
    write_json(&dir.join("test_report.json"), &report)?;
    Ok(report)
}

fn train(a: TrainArgs) -> Result<()> {
    if a.runs == 0 {
        return Err(Error::InvalidArgument("--runs must be at least 1".into()));
    }
    let cfg = a.overrides.resolve()?;
    let split = load_split(&a.data_dir)?;
    create_dir(&a.out_dir)?;
    let mut reports = Vec::new();
    for run in 0..a.runs {
        let run_cfg = TrainConfig {
            seed: cfg.seed + run,
            ..cfg.clone()
        };
        let dir = if a.runs == 1 {
            a.out_dir.clone()
        } else {
            a.out_dir.join(format!("run-{run:02}"))
        };
        log::info!("run {run} seed {}", run_cfg.seed);
        reports.push(train_one(a.model, &split, &run_cfg, &dir)?);
    }
    if a.runs > 1 {
        write_json(&a.out_dir.join("aggregate.json"), &aggregate(&reports)?)?;
    }
    write_json(
        &a.out_dir.join("provenance.json"),
        &provenance(
            "train",
            Some(cfg.seed),
            json!({
                "model": a.model,
                "runs": a.runs,
                "data_dir": path_str(&a.data_dir),
                "train": cfg,
            }),
        ),
    )?;
    let names: Vec<String> = (0..reports.len()).map(|i| format!("run-{i:02}")).collect();
    let table = ReportTable {
        rows: names.into_iter().zip(reports.iter()).collect(),
    };
    print!("{table}");
    Ok(())
}

fn read_predictions(path: &Path) -> Result<PredictionSet> {
    #[derive(serde::Deserialize)]
    struct Row {
        score: f64,
        label: i64,
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let row: Row = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        labels.push(Label::from_i64(row.label).map_err(|e| parse_err(e.to_string()))?);
        scores.push(row.score);
    }
    PredictionSet::new(scores, labels)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let (name, preds) = match (&a.predictions, &a.checkpoint, &a.corpus) {
        (Some(p), _, _) => (path_str(p), read_predictions(p)?),
        (None, Some(ck), Some(corpus)) => {
            let model = Checkpoint::load(ck)?;
            let corpus = load_corpus(corpus)?;
            let scores = corpus.iter().map(|p| model.predict(p)).collect::<Result<Vec<_>>>()?;
            (path_str(ck), PredictionSet::new(scores, corpus.iter().map(|p| p.label).collect())?)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "give --predictions, or --checkpoint with --corpus".into(),
            ))
        }
    };
    let report = evaluate_with(&preds.with_threshold(a.threshold), a.maxfpr)?;
    let text = match a.format {
        ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
        ReportFormat::Table => ReportTable {
            rows: vec![(name, &report)],
        }
        .to_string(),
    };
    match &a.out {
        Some(out) => {
            write_file(out, text)?;
            write_json(
                &provenance_beside(out),
                &provenance(
                    "evaluate",
                    None,
                    json!({
                        "predictions": a.predictions.as_deref().map(path_str),
                        "checkpoint": a.checkpoint.as_deref().map(path_str),
                        "corpus": a.corpus.as_deref().map(path_str),
                        "maxfpr": a.maxfpr,
                        "threshold": a.threshold,
                    }),
                ),
            )
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn bias_report(a: BiasReportArgs) -> Result<()> {
    let mut corpus = load_corpus(&a.corpus)?;
    if let Some(g) = &a.gazetteer {
        corpus = recognize_corpus(&corpus, &Gazetteer::load(g, false)?, RecognizeOptions::default())?;
    }
    let rows = entity_bias_table(&corpus, a.boundary);
    let mut buf = Vec::new();
    write_bias_tsv(&rows, &mut buf).map_err(|e| Error::io("<buffer>", e))?;
    match &a.out {
        Some(out) => {
            write_file(out, buf)?;
            write_json(
                &provenance_beside(out),
                &provenance(
                    "bias-report",
                    None,
                    json!({
                        "corpus": path_str(&a.corpus),
                        "boundary": a.boundary,
                        "gazetteer": a.gazetteer.as_deref().map(path_str),
                    }),
                ),
            )
        }
        None => std::io::stdout().write_all(&buf).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn case_report(a: CaseReportArgs) -> Result<()> {
    let model = match Checkpoint::load(&a.checkpoint)? {
        Checkpoint::Endef(m) => m,
        Checkpoint::Single { .. } => {
            return Err(Error::InvalidArgument(
                "case-report needs a two-branch checkpoint".into(),
            ))
        }
    };
    let corpus = load_corpus(&a.corpus)?;
    let mut out = String::new();
    for piece in corpus.iter().filter(|p| a.ids.is_empty() || a.ids.contains(&p.id)) {
        out.push_str(&serde_json::to_string(&model.case_report(piece)?)?);
        out.push('\n');
    }
    write_file(&a.out, out)?;
    write_json(
        &provenance_beside(&a.out),
        &provenance(
            "case-report",
            None,
            json!({
                "checkpoint": path_str(&a.checkpoint),
                "corpus": path_str(&a.corpus),
                "ids": a.ids,
            }),
        ),
    )
}

fn grid_alpha(a: GridAlphaArgs) -> Result<()> {
    let cfg = a.overrides.resolve()?;
    let split = load_split(&a.data_dir)?;
    let search = grid_search_alpha(&split, &cfg)?;
    create_dir(&a.out_dir)?;
    let mut table = format!("alpha\tval_{}\tbest_epoch\n", metric_key(search.metric));
    for r in &search.rows {
        table.push_str(&format!("{:.1}\t{:.4}\t{}\n", r.alpha, r.val_metric, r.best_epoch));
    }
    write_file(&a.out_dir.join("alpha_grid.tsv"), &table)?;
    write_json(&a.out_dir.join("alpha_grid.json"), &search)?;
    write_json(
        &a.out_dir.join("provenance.json"),
        &provenance(
            "grid-alpha",
            Some(cfg.seed),
            json!({ "data_dir": path_str(&a.data_dir), "train": cfg }),
        ),
    )?;
    print!("{table}");
    println!("best alpha {:.1}", search.best_alpha);
    Ok(())
}

fn metric_key(m: Metric) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}
