use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use setfit_core::corpus::{
    load_dataset, load_dataset_with_labels, sample_few_shot, Dataset, DatasetFormat,
};
use setfit_core::cost::{cost_table, presets, NamedCostSpec};
use setfit_core::distill::{distill_with_trace, DistillConfig};
use setfit_core::encoder::{EncoderSpec, FinetuneConfig};
use setfit_core::harness::{
    cost_rows_to_csv, cost_rows_to_text, evaluate_model, load_train_test, run_cost_report,
    run_distill_curve, run_experiment_on, run_sweep, DistillCurvePlan, ExperimentPlan,
    ExperimentReport,
};
use setfit_core::metrics::Metric;
use setfit_core::pairs::{generate_pairs, PairMode};
use setfit_core::pipeline::{fit_with_trace, load_model, save_model, FitConfig};
use setfit_core::synthetic::{generate, generate_unlabeled, SyntheticConfig};

#[derive(Parser)]
#[command(
    name = "setfit",
    version,
    about = "Few-shot text classification with contrastive encoder fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a labeled dataset and save it.
    Train(TrainCmd),
    /// Predict labels for texts with a saved model.
    Predict(PredictCmd),
    /// Score a saved model on a test set, or run a multi-split experiment.
    Evaluate(EvaluateCmd),
    /// Multi-split experiments over several few-shot sizes.
    Sweep(SweepCmd),
    /// Distill a saved teacher into a smaller student.
    Distill(DistillCmd),
    /// Student accuracy as a function of unlabeled set size.
    DistillCurve(DistillCurveCmd),
    /// FLOP estimates and speed-ups for a table of model specs.
    Cost(CostCmd),
    /// Write the contrastive training pairs for a dataset as JSONL.
    DumpPairs(DumpPairsCmd),
    /// Write a seeded synthetic corpus.
    GenSynthetic(GenSyntheticCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutputArgs {
    fn emit(
        &self,
        json: impl FnOnce() -> String,
        csv: impl FnOnce() -> String,
        text: impl FnOnce() -> String,
    ) -> Result<()> {
        let mut body = match self.format {
            Format::Json => json(),
            Format::Csv => csv(),
            Format::Text => text(),
        };
        if !body.ends_with('\n') {
            body.push('\n');
        }
        write_output(self.out.as_deref(), &body)
    }
}

fn write_output(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

/// Training hyperparameters; anything left unset keeps the library default.
#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    r_pairs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    vocab_buckets: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl TrainArgs {
    fn apply_encoder(&self, spec: &mut EncoderSpec) {
        if let Some(d) = self.dim {
            spec.dim = d;
        }
        if let Some(v) = self.vocab_buckets {
            spec.vocab_buckets = v;
        }
        if let Some(l) = self.max_len {
            spec.max_len = l;
        }
    }

    fn apply_training(&self, r_pairs: &mut usize, finetune: &mut FinetuneConfig) {
        if let Some(r) = self.r_pairs {
            *r_pairs = r;
        }
        if let Some(lr) = self.lr {
            finetune.learning_rate = lr;
        }
        if let Some(b) = self.batch {
            finetune.batch_size = b;
        }
        if let Some(e) = self.epochs {
            finetune.epochs = e;
        }
    }

    fn fit_config(&self) -> FitConfig {
        let mut c = FitConfig::seeded(self.seed);
        self.apply_encoder(&mut c.encoder);
        self.apply_training(&mut c.r_pairs, &mut c.finetune);
        c
    }

    fn distill_config(&self, pairs: usize, alpha: f64) -> DistillConfig {
        let mut c = DistillConfig::seeded(self.seed);
        self.apply_encoder(&mut c.student);
        c.pairs = pairs;
        c.alpha = alpha;
        self.apply_training(&mut c.r_pairs, &mut c.finetune);
        c
    }
}

#[derive(Args)]
struct TrainCmd {
    /// Labeled training data (.jsonl or .csv).
    #[arg(long)]
    dataset: PathBuf,
    /// Subsample this many examples per class before training.
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    model_out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct PredictCmd {
    #[arg(long)]
    model_in: PathBuf,
    /// Texts to classify: one per line (.txt) or a .jsonl/.csv file with a text column.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Texts given directly on the command line.
    texts: Vec<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct EvaluateCmd {
    /// Score this saved model on --test.
    #[arg(long, conflicts_with = "dataset")]
    model_in: Option<PathBuf>,
    /// Training pool for a multi-split experiment.
    #[arg(long, required_unless_present = "model_in")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "accuracy")]
    metric: Metric,
    #[arg(long, default_value_t = 8)]
    n_per_class: usize,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "accuracy")]
    metric: Metric,
    /// Comma-separated few-shot sizes.
    #[arg(long, value_delimiter = ',', default_value = "8,64")]
    n_per_class: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct DistillCmd {
    /// Trained teacher model.
    #[arg(long)]
    model_in: PathBuf,
    /// Labeled data shared with the teacher.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    n_per_class: Option<usize>,
    /// Unlabeled texts: one per line (.txt) or .jsonl/.csv with a text column.
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    /// Number of teacher-scored unlabeled pairs.
    #[arg(long, default_value_t = 0)]
    pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    model_out: PathBuf,
    /// Student encoder settings (--dim, --vocab-buckets, ...) and training.
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct DistillCurveCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    unlabeled: PathBuf,
    #[arg(long, default_value = "accuracy")]
    metric: Metric,
    #[arg(long, default_value_t = 16)]
    n_per_class: usize,
    /// Comma-separated unlabeled set sizes.
    #[arg(long, value_delimiter = ',', default_value = "0,8,200")]
    sizes: Vec<usize>,
    /// Fixed pair count per point; by default one pair per unlabeled text.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    /// Student encoder settings and training; the teacher keeps defaults.
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CostCmd {
    /// JSON array of {name, n_params, seq_len, arch[, n_steps, n_batch]};
    /// without it the built-in reference rows are used.
    spec: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct DumpPairsCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long, default_value_t = 20)]
    r_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allow singleton classes to pair with themselves.
    #[arg(long)]
    permissive: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSyntheticCmd {
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.2)]
    shared_fraction: f64,
    /// Write this many unlabeled texts (one per line) instead of a labeled set.
    #[arg(long)]
    unlabeled: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path, DatasetFormat::from_path(path))
        .with_context(|| format!("loading {}", path.display()))
}

fn maybe_subsample(ds: Dataset, n_per_class: Option<usize>, seed: u64) -> Result<Dataset> {
    match n_per_class {
        Some(n) => Ok(sample_few_shot(&ds, n, seed)?),
        None => Ok(ds),
    }
}

/// Reads bare texts: one per line for `.txt`, the `text` field otherwise.
fn read_texts(path: &Path) -> Result<Vec<String>> {
    let is_txt = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
    if is_txt {
        let body =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(String::from)
            .collect());
    }
    if DatasetFormat::from_path(path) == DatasetFormat::Jsonl {
        let body =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return body
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let v: serde_json::Value = serde_json::from_str(l)
                    .with_context(|| format!("{}:{}", path.display(), i + 1))?;
                v.get("text")
                    .and_then(|t| t.as_str())
                    .map(String::from)
                    .with_context(|| format!("{}:{}: missing \"text\"", path.display(), i + 1))
            })
            .collect();
    }
    Ok(load(path)?.texts().map(String::from).collect())
}

fn reports_json(reports: &[ExperimentReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}

fn reports_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("n_per_class,split,metric,score\n");
    for r in reports {
        out.extend(r.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
    }
    out
}

fn reports_text(reports: &[ExperimentReport]) -> String {
    reports.iter().map(|r| r.to_text() + "\n").collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(cmd) => {
            let data = maybe_subsample(load(&cmd.dataset)?, cmd.n_per_class, cmd.train.seed)?;
            let out = fit_with_trace(&data, &cmd.train.fit_config())?;
            save_model(&out.model, &cmd.model_out)?;
            eprintln!(
                "trained on {} examples ({} classes, {} pairs); saved {}",
                data.len(),
                data.n_classes(),
                out.pairs.len(),
                cmd.model_out.display()
            );
        }
        Command::Predict(cmd) => {
            let model = load_model(&cmd.model_in)?;
            let mut texts = cmd.texts;
            if let Some(path) = &cmd.dataset {
                texts.extend(read_texts(path)?);
            }
            if texts.is_empty() {
                bail!("no texts: pass them as arguments or with --dataset");
            }
            let mut rows = Vec::with_capacity(texts.len());
            for (i, t) in texts.iter().enumerate() {
                let p = model.predict_full(t).with_context(|| format!("text {i}"))?;
                rows.push((t, model.label_names()[p.label].clone(), p.probabilities));
            }
            cmd.output.emit(
                || {
                    let v: Vec<_> = rows
                        .iter()
                        .map(|(t, l, p)| serde_json::json!({"text": t, "label": l, "probabilities": p}))
                        .collect();
                    serde_json::to_string_pretty(&v).expect("json")
                },
                || {
                    let mut s = format!("label,{}\n", model.label_names().join(","));
                    for (_, l, p) in &rows {
                        let ps: Vec<String> = p.iter().map(f64::to_string).collect();
                        s += &format!("{l},{}\n", ps.join(","));
                    }
                    s
                },
                || rows.iter().map(|(t, l, _)| format!("{l}\t{t}\n")).collect(),
            )?;
        }
        Command::Evaluate(cmd) => {
            if let Some(model_path) = &cmd.model_in {
                let model = load_model(model_path)?;
                let test = load_dataset_with_labels(
                    &cmd.test,
                    DatasetFormat::from_path(&cmd.test),
                    Some(model.label_names()),
                )
                .with_context(|| format!("loading {}", cmd.test.display()))?;
                let score = evaluate_model(&model, &test, cmd.metric)?;
                cmd.output.emit(
                    || serde_json::json!({"metric": cmd.metric, "score": score, "test_examples": test.len()}).to_string(),
                    || format!("metric,score\n{},{score}", cmd.metric),
                    || format!("{} {score:.4} on {} examples", cmd.metric, test.len()),
                )?;
            } else {
                let train_path = cmd.dataset.as_deref().expect("clap requires --dataset");
                let (train, test) = load_train_test(train_path, &cmd.test)?;
                let plan = ExperimentPlan {
                    metric: cmd.metric,
                    n_per_class: cmd.n_per_class,
                    n_splits: cmd.splits,
                    base_seed: cmd.train.seed,
                    fit: cmd.train.fit_config(),
                };
                let report = run_experiment_on(&train, &test, &plan)?;
                cmd.output
                    .emit(|| report.to_json(), || report.to_csv(), || report.to_text())?;
            }
        }
        Command::Sweep(cmd) => {
            let (train, test) = load_train_test(&cmd.dataset, &cmd.test)?;
            let plan = ExperimentPlan {
                metric: cmd.metric,
                n_per_class: cmd.n_per_class[0],
                n_splits: cmd.splits,
                base_seed: cmd.train.seed,
                fit: cmd.train.fit_config(),
            };
            let reports = run_sweep(&train, &test, &plan, &cmd.n_per_class)?;
            cmd.output.emit(
                || reports_json(&reports),
                || reports_csv(&reports),
                || reports_text(&reports),
            )?;
        }
        Command::Distill(cmd) => {
            let teacher = load_model(&cmd.model_in)?;
            let labeled = load_dataset_with_labels(
                &cmd.dataset,
                DatasetFormat::from_path(&cmd.dataset),
                Some(teacher.label_names()),
            )
            .with_context(|| format!("loading {}", cmd.dataset.display()))?;
            let labeled = maybe_subsample(labeled, cmd.n_per_class, cmd.train.seed)?;
            let unlabeled = match &cmd.unlabeled {
                Some(p) => read_texts(p)?,
                None => Vec::new(),
            };
            let config = cmd.train.distill_config(cmd.pairs, cmd.alpha);
            let out = distill_with_trace(&teacher, &labeled, &unlabeled, &config)?;
            save_model(&out.model, &cmd.model_out)?;
            eprintln!(
                "distilled student (dim {}) from {} labeled, {} unlabeled texts, {} teacher pairs; saved {}",
                out.model.encoder.dim(),
                labeled.len(),
                unlabeled.len(),
                out.similarity_pairs.len(),
                cmd.model_out.display()
            );
        }
        Command::DistillCurve(cmd) => {
            let (train, test) = load_train_test(&cmd.dataset, &cmd.test)?;
            let pool = read_texts(&cmd.unlabeled)?;
            let plan = DistillCurvePlan {
                metric: cmd.metric,
                n_per_class: cmd.n_per_class,
                sizes: cmd.sizes.clone(),
                pairs: cmd.pairs,
                n_splits: cmd.splits,
                base_seed: cmd.train.seed,
                teacher: FitConfig::default(),
                student: cmd.train.distill_config(0, cmd.alpha),
            };
            let report = run_distill_curve(&train, &test, &pool, &plan)?;
            cmd.output
                .emit(|| report.to_json(), || report.to_csv(), || report.to_text())?;
        }
        Command::Cost(cmd) => {
            let rows = match &cmd.spec {
                Some(path) => run_cost_report(path)?,
                None => cost_table(&[
                    NamedCostSpec {
                        name: "t-few-3b".into(),
                        spec: presets::t_few_3b(),
                    },
                    NamedCostSpec {
                        name: "setfit-mpnet".into(),
                        spec: presets::setfit_mpnet(),
                    },
                    NamedCostSpec {
                        name: "setfit-minilm".into(),
                        spec: presets::setfit_minilm(),
                    },
                ])?,
            };
            cmd.output.emit(
                || serde_json::to_string_pretty(&rows).expect("json"),
                || cost_rows_to_csv(&rows),
                || cost_rows_to_text(&rows),
            )?;
            if cmd.spec.is_none() {
                eprintln!("note: {}", presets::MINILM_NOTE);
            }
        }
        Command::DumpPairs(cmd) => {
            let data = maybe_subsample(load(&cmd.dataset)?, cmd.n_per_class, cmd.seed)?;
            let mode = if cmd.permissive {
                PairMode::Permissive
            } else {
                PairMode::Strict
            };
            let set = generate_pairs(
                &data,
                cmd.r_pairs,
                FitConfig::seeded(cmd.seed).pair_seed,
                mode,
            )?;
            let mut buf = Vec::new();
            set.write_jsonl(&mut buf)?;
            write_output(cmd.out.as_deref(), std::str::from_utf8(&buf)?)?;
        }
        Command::GenSynthetic(cmd) => {
            let config = SyntheticConfig {
                n_classes: cmd.classes,
                shared_fraction: cmd.shared_fraction,
                ..SyntheticConfig::default()
            };
            let body = match cmd.unlabeled {
                Some(n) => generate_unlabeled(&config, n, cmd.seed)?.join("\n") + "\n",
                None => {
                    let mut buf = Vec::new();
                    generate(&config, cmd.n_per_class, cmd.seed)?.write_jsonl(&mut buf)?;
                    String::from_utf8(buf)?
                }
            };
            write_output(cmd.out.as_deref(), &body)?;
        }
    }
    Ok(())
}

/// Library errors already spell out their causes, so only causes not yet
/// in the message are appended.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {}", describe(&e));
        std::process::exit(1);
    }
}
