//! `seqfail`: generate rule-labelled telemetry, train and tune the LSTM
//! failure classifier, attribute failures to events, and mine baseline
//! sequential rules.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seqfail::data::{filter_signature_events, Dataset, RuleSpec};
use seqfail::extract::{evaluate_extraction, extract, ExtractConfig, ModelScorer, PerturbMode};
use seqfail::gen::{generate, split, GenConfig};
use seqfail::io::{
    atomic_write, load_dataset, load_model, render_dataset, save_dataset, save_model, SavedModel,
};
use seqfail::mine::{mine_rules, MineConfig};
use seqfail::model::{predict_label, HyperParams, LstmType, OptimizerKind};
use seqfail::train::{evaluate, predict_probs, train_with_progress, Metrics};
use seqfail::tune::{tune, KernelConfig, TuneConfig};

#[derive(Parser)]
#[command(name = "seqfail", version, about, max_term_width = 100)]
struct Cli {
    /// Seed for all randomness (generation, training, tuning).
    #[arg(long, global = true, env = "SEQFAIL_SEED", default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: one per CPU). Results do not depend on it.
    #[arg(long, global = true, env = "SEQFAIL_THREADS")]
    threads: Option<usize>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true, default_value_t = false)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rule-labelled dataset.
    Gen(GenArgs),
    /// Train an LSTM classifier on a dataset.
    Train(TrainArgs),
    /// Search hyper-parameters with Bayesian optimisation.
    Tune(TuneArgs),
    /// Score sequences with a trained model.
    Predict(PredictArgs),
    /// Attribute failures to contributor/blocker events by perturbation.
    Extract(ExtractArgs),
    /// Mine sequential failure rules (support/confidence/lift baseline).
    Mine(MineArgs),
    /// Report classification metrics of a model on a dataset.
    Eval(EvalArgs),
    /// Remove blacklisted event types from a dataset.
    Filter(FilterArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of sessions.
    #[arg(long, default_value_t = 30_000)]
    count: usize,
    /// Events per session.
    #[arg(long, default_value_t = 15)]
    len: usize,
    /// Number of event types (named a, b, c, ...).
    #[arg(long, default_value_t = 20)]
    vocab: usize,
    /// Failure pattern as comma-separated event names, in order. Repeat the
    /// flag for alternative patterns.
    #[arg(long, default_value = "f,b,c")]
    pattern: Vec<String>,
    /// Blocker events (comma-separated names); empty string for none.
    #[arg(long, default_value = "e")]
    blockers: String,
    /// Fraction of failing sessions to aim for.
    #[arg(long, default_value_t = 0.25)]
    target_pos: f64,
    /// Label at the rule's natural rate instead of forcing --target-pos.
    #[arg(long, default_value_t = false)]
    natural: bool,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LstmTypeArg {
    Standard,
    Bidirectional,
}

impl From<LstmTypeArg> for LstmType {
    fn from(v: LstmTypeArg) -> Self {
        match v {
            LstmTypeArg::Standard => LstmType::Standard,
            LstmTypeArg::Bidirectional => LstmType::Bidirectional,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(v: OptimizerArg) -> Self {
        match v {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Args)]
struct HyperArgs {
    /// Event embedding width.
    #[arg(long, default_value_t = 3)]
    embedding: usize,
    /// LSTM hidden size per direction.
    #[arg(long, default_value_t = 6)]
    lstm: usize,
    /// Recurrent architecture.
    #[arg(long, value_enum, default_value_t = LstmTypeArg::Bidirectional)]
    lstm_type: LstmTypeArg,
    /// Learning rate.
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    /// Dropout rate on the final hidden state during training.
    #[arg(long, default_value_t = 0.4)]
    dropout: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 512)]
    batch: usize,
    /// Maximum training epochs.
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// Weight update rule.
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
}

impl HyperArgs {
    fn to_hyperparams(&self, seed: u64) -> HyperParams {
        HyperParams {
            embedding_size: self.embedding,
            lstm_size: self.lstm,
            lstm_type: self.lstm_type.into(),
            learning_rate: self.lr,
            dropout_rate: self.dropout,
            batch_size: self.batch,
            max_epochs: self.epochs,
            optimizer: self.optimizer.into(),
            seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset; when omitted, --data is split.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Train fraction for the split when --valid is omitted.
    #[arg(long, default_value_t = 0.5)]
    train_frac: f64,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Where to write the trained model.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch log (tab-separated).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// Dataset for cross-validated scoring.
    #[arg(long)]
    data: PathBuf,
    /// Total objective evaluations.
    #[arg(long, default_value_t = 20)]
    budget: usize,
    /// Random evaluations before the surrogate starts.
    #[arg(long, default_value_t = 5)]
    init: usize,
    /// Candidate pool size per proposal.
    #[arg(long, default_value_t = 2048)]
    pool: usize,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Max training epochs per fold during scoring.
    #[arg(long, default_value_t = 30)]
    cv_epochs: usize,
    #[arg(long, default_value_t = 512)]
    batch: usize,
    #[arg(long, default_value_t = 0.4)]
    dropout: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    /// Optional trace output (tab-separated).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Void,
    Zero,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Perturbation mode: void deletes events, zero overwrites with the
    /// neutral token.
    #[arg(long, value_enum, default_value_t = ModeArg::Void)]
    mode: ModeArg,
    /// Confidence gate: sequences with max(p, 1-p) at or below this are
    /// skipped.
    #[arg(long, default_value_t = 0.9)]
    conf: f64,
    /// Minimum absolute probability change for an attribution.
    #[arg(long, default_value_t = 0.4)]
    diff: f64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    minsup: f64,
    #[arg(long, default_value_t = 0.25)]
    minconf: f64,
    #[arg(long, default_value_t = 3)]
    max_len: usize,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    data: PathBuf,
    /// Event names to remove, comma-separated.
    #[arg(long)]
    drop: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Gen(args) => run_gen(&cli, args),
        Command::Train(args) => run_train(&cli, args),
        Command::Tune(args) => run_tune(&cli, args),
        Command::Predict(args) => run_predict(args),
        Command::Extract(args) => run_extract(args),
        Command::Mine(args) => run_mine(args),
        Command::Eval(args) => run_eval(args),
        Command::Filter(args) => run_filter(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Writes to the path atomically, or to stdout when no path was given.
fn emit(out: Option<&Path>, contents: &str) -> seqfail::Result<()> {
    match out {
        Some(path) => atomic_write(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn comma_names(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn run_gen(cli: &Cli, args: &GenArgs) -> seqfail::Result<()> {
    let vocab = seqfail::data::Vocab::letters(args.vocab)?;
    let mut patterns = Vec::new();
    for p in &args.pattern {
        let ids: Vec<u32> = comma_names(p)
            .iter()
            .map(|n| vocab.require(n))
            .collect::<seqfail::Result<_>>()?;
        patterns.push(ids);
    }
    let blockers: BTreeSet<u32> = comma_names(&args.blockers)
        .iter()
        .map(|n| vocab.require(n))
        .collect::<seqfail::Result<_>>()?;
    let cfg = GenConfig {
        vocab_size: args.vocab,
        seq_len: args.len,
        num_sequences: args.count,
        rules: RuleSpec::new(patterns, blockers)?,
        target_positive_rate: if args.natural {
            None
        } else {
            Some(args.target_pos)
        },
        seed: cli.seed,
    };
    let ds = generate(&cfg)?;
    if !cli.quiet {
        eprintln!(
            "generated {} sessions ({} failing, rate {:.4})",
            ds.len(),
            ds.positive_count(),
            ds.positive_rate()
        );
    }
    match &args.out {
        Some(path) => save_dataset(&ds, path),
        None => emit(None, &render_dataset(&ds)),
    }
}

fn metrics_line(m: &Metrics) -> String {
    format!(
        "accuracy={:.6} precision={:.6} recall={:.6} f1={:.6} tp={} fp={} tn={} fn={}",
        m.accuracy, m.precision, m.recall, m.f1, m.tp, m.fp, m.tn, m.fn_
    )
}

fn run_train(cli: &Cli, args: &TrainArgs) -> seqfail::Result<()> {
    let hp = args.hyper.to_hyperparams(cli.seed);
    let data = load_dataset(&args.data)?;
    let (train_ds, valid_ds) = match &args.valid {
        Some(path) => (data, load_dataset(path)?),
        None => split(&data, args.train_frac, cli.seed)?,
    };
    if !cli.quiet {
        eprintln!(
            "training on {} sessions, validating on {}",
            train_ds.len(),
            valid_ds.len()
        );
    }
    let mut log = String::from("epoch\ttrain_loss\tvalid_loss\tvalid_f1\n");
    let quiet = cli.quiet;
    let report = train_with_progress(&train_ds, &valid_ds, &hp, |r| {
        let _ = writeln!(
            log,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            r.epoch, r.train_loss, r.valid_loss, r.valid.f1
        );
        if !quiet {
            eprintln!(
                "epoch {:3}  train_loss {:.4}  valid_loss {:.4}  valid_f1 {:.4}",
                r.epoch, r.train_loss, r.valid_loss, r.valid.f1
            );
        }
    })?;
    save_model(
        &SavedModel {
            hp,
            vocab: train_ds.vocab.clone(),
            params: report.params.clone(),
        },
        &args.out,
    )?;
    if let Some(path) = &args.log {
        atomic_write(path, &log)?;
    }
    let last = report.history.last();
    println!(
        "trained epochs={} stopped_early={} {}",
        report.history.len(),
        report.stopped_early,
        last.map(|r| metrics_line(&r.valid)).unwrap_or_default()
    );
    Ok(())
}

fn lstm_type_name(t: LstmType) -> &'static str {
    match t {
        LstmType::Standard => "standard",
        LstmType::Bidirectional => "bidirectional",
    }
}

fn run_tune(cli: &Cli, args: &TuneArgs) -> seqfail::Result<()> {
    let ds = load_dataset(&args.data)?;
    let base = HyperParams {
        batch_size: args.batch,
        max_epochs: args.cv_epochs,
        dropout_rate: args.dropout,
        optimizer: args.optimizer.into(),
        seed: cli.seed,
        ..HyperParams::default()
    };
    let cfg = TuneConfig {
        budget: args.budget,
        init_points: args.init,
        pool_size: args.pool,
        folds: args.folds,
        kernel: KernelConfig::default(),
        seed: cli.seed,
    };
    let outcome = tune(&ds, &base, &cfg)?;
    let mut out = String::from("iteration\tlr\tembedding\tlstm\ttype\tscore\n");
    for t in &outcome.trace {
        let _ = writeln!(
            out,
            "{}\t{:.6e}\t{}\t{}\t{}\t{:.6}",
            t.iteration,
            t.hp.learning_rate,
            t.hp.embedding_size,
            t.hp.lstm_size,
            lstm_type_name(t.hp.lstm_type),
            t.score
        );
    }
    emit(args.out.as_deref(), &out)?;
    println!(
        "best lr={:.6e} embedding={} lstm={} type={} cv_f1={:.6}",
        outcome.best.learning_rate,
        outcome.best.embedding_size,
        outcome.best.lstm_size,
        lstm_type_name(outcome.best.lstm_type),
        outcome.best_score
    );
    Ok(())
}

/// Loads a model and a dataset, requiring their vocabularies to match.
fn load_pair(model: &Path, data: &Path) -> seqfail::Result<(SavedModel, Dataset)> {
    let model = load_model(model)?;
    let ds = load_dataset(data)?;
    if model.vocab != ds.vocab {
        return Err(seqfail::Error::VocabMismatch(
            "model and dataset vocabularies differ".into(),
        ));
    }
    Ok((model, ds))
}

fn run_predict(args: &PredictArgs) -> seqfail::Result<()> {
    let (model, ds) = load_pair(&args.model, &args.data)?;
    let probs = predict_probs(&model.params, &ds)?;
    let mut out = String::from("index\tprob\tpredicted\tlabel\n");
    for (i, (s, &p)) in ds.sessions.iter().zip(&probs).enumerate() {
        let _ = writeln!(
            out,
            "{i}\t{:.6}\t{}\t{}",
            p,
            predict_label(p) as u8,
            s.label as u8
        );
    }
    emit(args.out.as_deref(), &out)
}

fn run_extract(args: &ExtractArgs) -> seqfail::Result<()> {
    let (model, ds) = load_pair(&args.model, &args.data)?;
    let cfg = ExtractConfig {
        mode: match args.mode {
            ModeArg::Void => PerturbMode::VoidInsert,
            ModeArg::Zero => PerturbMode::ZeroInsert,
        },
        confidence_threshold: args.conf,
        diff_threshold: args.diff,
    };
    let scorer = ModelScorer {
        params: &model.params,
    };
    let mut out = String::from("index\tbase_prob\tstatus\tcontributors\tblockers\n");
    // Positions are reported 1-based.
    let render = |occs: &[seqfail::extract::Occurrence]| -> String {
        if occs.is_empty() {
            return "-".to_string();
        }
        occs.iter()
            .map(|o| {
                format!(
                    "{}@{}",
                    ds.vocab.name(o.event).unwrap_or("_"),
                    o.position + 1
                )
            })
            .collect::<Vec<_>>()
            .join(",")
    };
    for (i, s) in ds.sessions.iter().enumerate() {
        let ex = extract(&s.events, &scorer, &cfg)?;
        let status = if ex.confident { "ok" } else { "skipped" };
        let _ = writeln!(
            out,
            "{i}\t{:.6}\t{status}\t{}\t{}",
            ex.base_prob,
            render(&ex.contributors),
            render(&ex.blockers)
        );
    }
    if ds.rules.is_some() {
        let scores = evaluate_extraction(&ds, &scorer, &cfg)?;
        let _ = writeln!(
            out,
            "#contributors precision={:.6} recall={:.6} tp={} fp={} fn={}",
            scores.contributors.precision,
            scores.contributors.recall,
            scores.contributors.tp,
            scores.contributors.fp,
            scores.contributors.fn_
        );
        let _ = writeln!(
            out,
            "#blockers precision={:.6} recall={:.6} tp={} fp={} fn={}",
            scores.blockers.precision,
            scores.blockers.recall,
            scores.blockers.tp,
            scores.blockers.fp,
            scores.blockers.fn_
        );
        let _ = writeln!(
            out,
            "#sequences scored={} skipped={}",
            scores.sequences_scored, scores.sequences_skipped
        );
    }
    emit(args.out.as_deref(), &out)
}

fn run_mine(args: &MineArgs) -> seqfail::Result<()> {
    let ds = load_dataset(&args.data)?;
    let cfg = MineConfig {
        max_len: args.max_len,
        min_support: args.minsup,
        min_confidence: args.minconf,
    };
    let rules = mine_rules(&ds, &cfg)?;
    let mut out = String::from("pattern\tsupport\tconfidence\tlift\n");
    for r in &rules {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            ds.vocab.render(&r.pattern),
            r.support,
            r.confidence,
            r.lift
        );
    }
    emit(args.out.as_deref(), &out)
}

fn run_eval(args: &EvalArgs) -> seqfail::Result<()> {
    let (model, ds) = load_pair(&args.model, &args.data)?;
    let m = evaluate(&model.params, &ds)?;
    println!("{}", metrics_line(&m));
    Ok(())
}

fn run_filter(args: &FilterArgs) -> seqfail::Result<()> {
    let ds = load_dataset(&args.data)?;
    let out = filter_signature_events(&ds, &comma_names(&args.drop))?;
    save_dataset(&out, &args.out)
}
