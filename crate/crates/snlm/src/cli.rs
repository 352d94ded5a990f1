//! The `snlm` command line. [`main`] maps every outcome to an exit code:
//! 0 success, 1 usage error, 2 runtime or verification failure. Errors go
//! to standard error as one line starting `ERROR <code>:`.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{error::ErrorKind, ArgAction, Args, Parser, Subcommand, ValueEnum};

use snlm_core::corpus::synthetic::{BigramGenerator, SyntheticConfig};
use snlm_core::corpus::{NoiseDistribution, Vocabulary};
use snlm_core::diagnostics::{self, EvalOptions};
use snlm_core::model::LanguageModel;
use snlm_core::objectives::{Method, NoiseSharing, ObjectiveConfig};
use snlm_core::theory;
use snlm_core::trainer::{Clock, NoClock, TrainConfig, TrainLog, Trainer};
use snlm_core::seeded_rng;

use crate::checkpoint::Checkpoint;
use crate::data;
use crate::manifest::Manifest;
use crate::output;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const COMPLETIONS_FILE: &str = "completions.csv";
pub const AUDIT_FILE: &str = "audit.csv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Marks an error as the caller's fault (exit 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "snlm", version, about = "Train and inspect self-normalizing LSTM language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write model.ckpt, train_log.csv and manifest.txt.
    Train(TrainArgs),
    /// Report log-partition statistics and perplexities on a corpus.
    Diagnose(DiagnoseArgs),
    /// Subtract the mean log-partition measured on a dev corpus.
    Shift(ShiftArgs),
    /// Answer a sentence-completion task with normalized and raw scores.
    Complete(CompleteArgs),
    /// Audit the self-normalization bounds on random distributions.
    Verify(VerifyArgs),
    /// Sample train/valid/test corpora from a random bigram source.
    Generate(GenerateArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Sm,
    Dev,
    And,
    Nce,
    NceR,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sm => Method::Sm,
            MethodArg::Dev => Method::Dev,
            MethodArg::And => Method::And,
            MethodArg::Nce => Method::Nce,
            MethodArg::NceR => Method::NceR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SharingArg {
    /// Fresh noise words for every target.
    Token,
    /// One noise set per window.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Schedule {
    /// Divide the rate by 1.2 per epoch after epoch 6.
    Paper,
    /// Halve the rate after every epoch.
    Mscc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Normalized,
    Unnormalized,
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    /// Training corpus, one sentence per line.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation corpus.
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "sm")]
    pub method: MethodArg,
    /// Regularization weight (dev, and, nce-r).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction of contexts penalized (and, nce-r).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Noise samples per target (nce, nce-r).
    #[arg(long)]
    pub k: Option<usize>,
    /// Squash scores before the loss (and, nce, nce-r).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub squash: Option<bool>,
    #[arg(long, value_enum)]
    pub noise_sharing: Option<SharingArg>,
    #[arg(long, default_value_t = 650)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, value_enum, default_value = "paper")]
    pub schedule: Schedule,
    /// Overrides the schedule's decay factor.
    #[arg(long)]
    pub decay: Option<f64>,
    /// Overrides the schedule's first decayed epoch.
    #[arg(long)]
    pub decay_start: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 20)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Lanes used for validation; defaults to --batch.
    #[arg(long)]
    pub valid_batch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Words seen fewer times become <unk>.
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    /// Record wall time in the log; off makes reruns byte-identical.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus to evaluate.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Score every line from a fresh state instead of one running stream.
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub sentences: bool,
    /// Also compute the entropy/log-partition correlation and histogram.csv.
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub histogram: bool,
    #[arg(long, default_value_t = 50)]
    pub h_bins: usize,
    #[arg(long, default_value_t = 50)]
    pub z_bins: usize,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct ShiftArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct CompleteArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Completion items: `sentence with ___ | c1 c2 c3 c4 c5 | answer`.
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub lowercase: bool,
    /// Scores reported in completions.csv.
    #[arg(long, value_enum, default_value = "normalized")]
    pub mode: ModeArg,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 500)]
    pub words: usize,
    /// Training tokens, end markers included.
    #[arg(long, default_value_t = 200_000)]
    pub tokens: usize,
    /// Validation and test tokens each; defaults to a tenth of --tokens.
    #[arg(long)]
    pub heldout_tokens: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Where the repeated run writes; never the original directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs, reports and returns the exit
/// code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => return report_parse_error(&e),
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = if e.downcast_ref::<UsageError>().is_some() { EXIT_USAGE } else { EXIT_FAILURE };
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("ERROR {code}: {line}");
            code
        }
    }
}

fn report_parse_error(e: &clap::Error) -> i32 {
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            print!("{e}");
            EXIT_OK
        }
        _ => {
            let rendered = e.to_string();
            let mut lines = rendered.lines();
            let first = lines.next().unwrap_or_default();
            eprintln!("ERROR {EXIT_USAGE}: {}", first.trim_start_matches("error: "));
            for l in lines {
                eprintln!("{l}");
            }
            EXIT_USAGE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Diagnose(a) => diagnose(&a),
        Command::Shift(a) => shift(&a),
        Command::Complete(a) => complete(&a),
        Command::Verify(a) => verify(&a),
        Command::Generate(a) => generate(&a),
        Command::Rerun(a) => rerun(&a),
    }
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("cannot open {}", path.display()))
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn write_manifest(out: &Path, mut m: Manifest) -> Result<()> {
    m.set("version", env!("CARGO_PKG_VERSION"));
    let path = out.join(MANIFEST_FILE);
    m.save(&path).with_context(|| format!("cannot write {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

impl TrainArgs {
    /// The effective configuration plus warnings for flags the method
    /// ignores.
    pub fn config(&self) -> Result<(TrainConfig, Vec<String>)> {
        let method = Method::from(self.method);
        let mut warnings = Vec::new();
        let mut ignored = |flag: &str, set: bool, used: bool| {
            if set && !used {
                warnings.push(format!("--{flag} has no effect with --method {method}"));
            }
        };
        ignored("alpha", self.alpha.is_some(), method.uses_alpha());
        ignored("gamma", self.gamma.is_some(), method.uses_gamma());
        ignored("k", self.k.is_some(), method.uses_noise());
        ignored("noise-sharing", self.noise_sharing.is_some(), method.uses_noise());
        let squashable = !matches!(method, Method::Sm | Method::Dev);
        ignored("squash", self.squash.is_some(), squashable);

        let mut obj = ObjectiveConfig::new(method);
        if method.uses_alpha() {
            obj.alpha = self.alpha.unwrap_or(obj.alpha);
        }
        if method.uses_gamma() {
            obj.gamma = self.gamma.unwrap_or(obj.gamma);
        }
        if method.uses_noise() {
            obj.k = self.k.unwrap_or(obj.k);
            obj.noise_sharing = match self.noise_sharing {
                Some(SharingArg::Window) => NoiseSharing::PerWindow,
                Some(SharingArg::Token) | None => NoiseSharing::PerToken,
            };
        }
        if squashable {
            obj.squash = self.squash.unwrap_or(obj.squash);
        }

        let mut cfg = match self.schedule {
            Schedule::Paper => TrainConfig::new(obj),
            Schedule::Mscc => TrainConfig::mscc(obj),
        };
        cfg.epochs = self.epochs;
        cfg.lr = self.lr;
        cfg.decay = self.decay.unwrap_or(cfg.decay);
        cfg.decay_start = self.decay_start.unwrap_or(cfg.decay_start);
        cfg.clip = self.clip;
        cfg.batch = self.batch;
        cfg.steps = self.steps;
        cfg.seed = self.seed;
        cfg.eval_every = self.eval_every;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(usage(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.dim == 0 || self.valid_batch == Some(0) || self.min_count == 0 {
            return Err(usage("--dim, --valid-batch and --min-count must be positive"));
        }
        Ok((cfg, warnings))
    }

    /// Every effective setting; flags the method ignores are left out.
    fn manifest(&self, cfg: &TrainConfig, train: &Path, valid: &Path) -> Manifest {
        let obj = &cfg.objective;
        let method = obj.method;
        let mut m = Manifest::new();
        m.set("command", "train");
        m.set("train", train.display());
        m.set("valid", valid.display());
        m.set("out", self.out.display());
        m.set("method", method);
        if method.uses_alpha() {
            m.set("alpha", obj.alpha);
        }
        if method.uses_gamma() {
            m.set("gamma", obj.gamma);
        }
        if method.uses_noise() {
            m.set("k", obj.k);
            let sharing = match obj.noise_sharing {
                NoiseSharing::PerToken => SharingArg::Token,
                NoiseSharing::PerWindow => SharingArg::Window,
            };
            m.set("noise-sharing", value_name(sharing));
        }
        if !matches!(method, Method::Sm | Method::Dev) {
            m.set("squash", obj.squash);
        }
        m.set("dim", self.dim);
        m.set("dropout", self.dropout);
        m.set("epochs", cfg.epochs);
        m.set("lr", cfg.lr);
        m.set("schedule", value_name(self.schedule));
        m.set("decay", cfg.decay);
        m.set("decay-start", cfg.decay_start);
        m.set("clip", cfg.clip);
        m.set("batch", cfg.batch);
        m.set("steps", cfg.steps);
        m.set("valid-batch", self.valid_batch.unwrap_or(cfg.batch));
        m.set("eval-every", cfg.eval_every);
        m.set("seed", cfg.seed);
        m.set("min-count", self.min_count);
        m.set("timing", self.timing);
        m
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    let (cfg, warnings) = a.config()?;
    for w in &warnings {
        warn(w);
    }
    let train_path = absolute(&a.train)?;
    let valid_path = absolute(&a.valid)?;
    prepare_out(&a.out)?;
    write_manifest(&a.out, a.manifest(&cfg, &train_path, &valid_path))?;

    let lines = data::read_lines(&train_path).with_context(|| format!("reading {}", train_path.display()))?;
    let vocab = Vocabulary::build(lines.iter().map(String::as_str), a.min_count)?;
    let train_ids = vocab.encode_lines(lines.iter().map(String::as_str));
    let train_stream = snlm_core::corpus::batchify(&train_ids, cfg.batch, cfg.steps)?;
    let valid_stream = data::stream_file(&valid_path, &vocab, a.valid_batch.unwrap_or(cfg.batch), cfg.steps)
        .with_context(|| format!("reading {}", valid_path.display()))?;
    eprintln!(
        "vocabulary {} words, {} training tokens, {} windows per epoch",
        vocab.len(),
        train_ids.len(),
        train_stream.num_windows()
    );

    let noise = NoiseDistribution::unigram(&vocab)?;
    let mut model = LanguageModel::new(vocab.len(), a.dim, a.dropout, &mut seeded_rng(cfg.seed))?;
    let mut log = TrainLog::default();
    {
        let mut trainer = Trainer::new(&mut model, &noise, cfg.clone())?;
        let mut wall = WallClock(Instant::now());
        let clock: &mut dyn Clock = if a.timing { &mut wall } else { &mut NoClock };
        for _ in 0..cfg.epochs {
            let r = trainer.run_epoch(&train_stream, &valid_stream, clock)?;
            let fmt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            eprintln!(
                "epoch {:>3}  loss {:.4}  ppl {}  mu_z {}  sigma_z {}",
                r.epoch,
                r.loss,
                fmt(r.ppl),
                fmt(r.mu_z),
                fmt(r.sigma_z)
            );
            log.records.push(r);
        }
    }
    output::write_train_log(create(&a.out, TRAIN_LOG_FILE)?, &log)?;
    Checkpoint::new(model, vocab)?.save(&a.out.join(CHECKPOINT_FILE))?;
    Ok(())
}

fn check_shape(batch: usize, steps: usize) -> Result<()> {
    if batch == 0 || steps == 0 {
        return Err(usage("--batch and --steps must be positive"));
    }
    Ok(())
}

fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    check_shape(a.batch, a.steps)?;
    if a.histogram && (a.h_bins == 0 || a.z_bins == 0) {
        return Err(usage("histogram bin counts must be positive"));
    }
    let model_path = absolute(&a.model)?;
    let data_path = absolute(&a.data)?;
    prepare_out(&a.out)?;
    let mut m = Manifest::new();
    m.set("command", "diagnose");
    m.set("model", model_path.display());
    m.set("data", data_path.display());
    m.set("out", a.out.display());
    m.set("batch", a.batch);
    m.set("steps", a.steps);
    m.set("sentences", a.sentences);
    m.set("histogram", a.histogram);
    m.set("h-bins", a.h_bins);
    m.set("z-bins", a.z_bins);
    write_manifest(&a.out, m)?;

    let ckpt = load_checkpoint(&model_path)?;
    let scorer = ckpt.scorer();
    let opts = EvalOptions { correlation: a.histogram, bins: (a.h_bins, a.z_bins) };
    let report = if a.sentences {
        let sentences = data::encode_sentences(&data_path, &ckpt.vocab)?;
        diagnostics::eval_sentences(&scorer, &sentences, opts)?
    } else {
        let stream = data::stream_file(&data_path, &ckpt.vocab, a.batch, a.steps)?;
        diagnostics::eval_diagnostics(&scorer, &stream, opts)?
    };
    let mut rows = report.metrics();
    rows.push(("shift", ckpt.shift.unwrap_or(0.0)));
    output::write_metrics(create(&a.out, DIAGNOSTICS_FILE)?, &rows)?;
    if let Some(h) = &report.histogram {
        output::write_histogram(create(&a.out, HISTOGRAM_FILE)?, h)?;
    }
    print_metrics(&rows);
    Ok(())
}

fn print_metrics(rows: &[(&str, f64)]) {
    for (k, v) in rows {
        println!("{k}={v}");
    }
}

fn shift(a: &ShiftArgs) -> Result<()> {
    check_shape(a.batch, a.steps)?;
    let model_path = absolute(&a.model)?;
    let dev_path = absolute(&a.dev)?;
    prepare_out(&a.out)?;
    let mut m = Manifest::new();
    m.set("command", "shift");
    m.set("model", model_path.display());
    m.set("dev", dev_path.display());
    m.set("out", a.out.display());
    m.set("batch", a.batch);
    m.set("steps", a.steps);
    write_manifest(&a.out, m)?;

    let mut ckpt = load_checkpoint(&model_path)?;
    let stream = data::stream_file(&dev_path, &ckpt.vocab, a.batch, a.steps)?;
    let shifted = diagnostics::shift(&ckpt.model, &stream)?;
    let report = diagnostics::eval_diagnostics(&shifted, &stream, EvalOptions::default())?;
    ckpt.shift = Some(shifted.shift());
    let mut rows = report.metrics();
    rows.push(("shift", shifted.shift()));
    output::write_metrics(create(&a.out, DIAGNOSTICS_FILE)?, &rows)?;
    ckpt.save(&a.out.join(CHECKPOINT_FILE))?;
    print_metrics(&rows);
    Ok(())
}

fn complete(a: &CompleteArgs) -> Result<()> {
    let model_path = absolute(&a.model)?;
    let task_path = absolute(&a.task)?;
    prepare_out(&a.out)?;
    let mut m = Manifest::new();
    m.set("command", "complete");
    m.set("model", model_path.display());
    m.set("task", task_path.display());
    m.set("out", a.out.display());
    m.set("lowercase", a.lowercase);
    m.set("mode", value_name(a.mode));
    write_manifest(&a.out, m)?;

    let ckpt = load_checkpoint(&model_path)?;
    let items = data::read_completions(&task_path, &ckpt.vocab, a.lowercase)?;
    let scorer = ckpt.scorer();
    let [norm, raw] = diagnostics::complete_both(&scorer, &items)?;
    let shown = match a.mode {
        ModeArg::Normalized => &norm,
        ModeArg::Unnormalized => &raw,
    };
    output::write_completions(create(&a.out, COMPLETIONS_FILE)?, &items, shown)?;

    let mut rows = vec![("items", items.len() as f64), ("unanswered", norm.unanswered as f64)];
    if let (Some(an), Some(au), Some(d)) = (norm.accuracy, raw.accuracy, diagnostics::delta_accuracy(&norm, &raw)) {
        rows.extend([("acc_norm", an), ("acc_unnorm", au), ("delta_acc", d)]);
    }
    let answers: Vec<Vec<usize>> =
        items.iter().filter_map(|it| it.answer.map(|c| it.filled(c))).collect();
    if !answers.is_empty() {
        let r = diagnostics::eval_sentences(&scorer, &answers, EvalOptions::default())?;
        rows.extend([("answer_perp", r.perp), ("answer_mu_z", r.mu_z), ("answer_sigma_z", r.sigma_z)]);
    }
    output::write_metrics(create(&a.out, DIAGNOSTICS_FILE)?, &rows)?;
    print_metrics(&rows);
    Ok(())
}

fn verify(a: &VerifyArgs) -> Result<()> {
    if a.instances == 0 {
        return Err(usage("--instances must be positive"));
    }
    prepare_out(&a.out)?;
    let mut m = Manifest::new();
    m.set("command", "verify");
    m.set("instances", a.instances);
    m.set("seed", a.seed);
    m.set("out", a.out.display());
    write_manifest(&a.out, m)?;

    let report = theory::audit(a.instances, a.seed)?;
    output::write_audit(create(&a.out, AUDIT_FILE)?, &report.rows)?;
    println!("instances={}", report.rows.len());
    println!("theorem1_checks={}", report.theorem1_checks);
    println!("theorem2_checks={}", report.theorem2_checks);
    println!("min_slack={}", report.min_slack());
    println!("bound_violations={}", report.bound_violations());
    println!("identity_failures={}", report.identity_failures());
    if !report.passed() {
        bail!(
            "audit failed: {} bound violations, {} identity failures, min slack {}",
            report.bound_violations(),
            report.identity_failures(),
            report.min_slack()
        );
    }
    Ok(())
}

pub const GENERATED_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

fn generate(a: &GenerateArgs) -> Result<()> {
    if a.words < 2 || a.tokens == 0 || a.heldout_tokens == Some(0) {
        return Err(usage("--words must be at least 2 and token counts positive"));
    }
    let heldout = a.heldout_tokens.unwrap_or(a.tokens.div_ceil(10));
    prepare_out(&a.out)?;
    let mut m = Manifest::new();
    m.set("command", "generate");
    m.set("words", a.words);
    m.set("tokens", a.tokens);
    m.set("heldout-tokens", heldout);
    m.set("seed", a.seed);
    m.set("out", a.out.display());
    write_manifest(&a.out, m)?;

    let mut rng = seeded_rng(a.seed);
    let cfg = SyntheticConfig { words: a.words, ..SyntheticConfig::default() };
    let source = BigramGenerator::random(&cfg, &mut rng)?;
    for (name, n) in GENERATED_FILES.into_iter().zip([a.tokens, heldout, heldout]) {
        let mut text = source.generate(n, &mut rng).join("\n");
        text.push('\n');
        let path = a.out.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!("entropy_rate={}", source.entropy_rate());
    Ok(())
}

/// The argument list that repeats the run recorded in `m`, writing to
/// `out`.
pub fn rerun_args(m: &Manifest, out: &Path) -> Result<Vec<OsString>> {
    let command = m.get("command").ok_or_else(|| usage("manifest has no command entry"))?;
    if command == "rerun" {
        return Err(usage("a manifest cannot name rerun"));
    }
    let mut args: Vec<OsString> = vec!["snlm".into(), command.into()];
    for (k, v) in m.entries() {
        if !matches!(k.as_str(), "command" | "out" | "version") {
            args.push(format!("--{k}={v}").into());
        }
    }
    args.push("--out".into());
    args.push(out.into());
    Ok(args)
}

fn rerun(a: &RerunArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    if let Some(v) = m.get("version") {
        if v != env!("CARGO_PKG_VERSION") {
            warn(&format!("manifest was written by version {v}"));
        }
    }
    let original = a.manifest.parent().and_then(|p| fs::canonicalize(p).ok());
    if original.is_some() && fs::canonicalize(&a.out).ok() == original {
        return Err(usage("--out must differ from the manifest's directory"));
    }
    let args = rerun_args(&m, &a.out)?;
    let cli = Cli::try_parse_from(&args).map_err(|e| {
        let first = e.to_string().lines().next().unwrap_or_default().to_string();
        usage(format!("manifest does not describe a valid run: {first}"))
    })?;
    run(cli)
}

