//! Multi-split experiments, distillation curves and cost tables.
//!
//! Split `i` of a run samples its training set with seed
//! `split_seed(base_seed, i)` and reseeds every training stage from that
//! same value, so a report is a pure function of its inputs. Splits run in
//! parallel; scores are always reported in split order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_dataset, load_dataset_with_labels, sample_few_shot, Dataset, DatasetFormat,
};
use crate::cost::{cost_table, parse_cost_table, CostRow};
use crate::distill::{distill, DistillConfig};
use crate::error::{Error, Result, ResultExt};
use crate::metrics::{accuracy, average_precision, mae_x100, mcc, Metric};
use crate::pipeline::{fit, FitConfig, Model};
use crate::rng::{rng_from_seed, split_seed, SeedPlan, PRNG_NAME};

pub const REPORT_SCHEMA_VERSION: &str = "setfit-desk-report/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sample mean and (n-1) standard deviation; the deviation is 0 for a
/// single score.
pub fn mean_std(scores: &[f64]) -> (f64, f64) {
    if scores.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    if scores.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Scores `model` on every example of `test`.
pub fn evaluate_model(model: &Model, test: &Dataset, metric: Metric) -> Result<f64> {
    let gold = test.labels();
    let predictions = test
        .texts()
        .enumerate()
        .map(|(i, t)| {
            model
                .predict_full(t)
                .context(|| format!("test example {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    let score = match metric {
        Metric::Accuracy => accuracy(&labels, &gold)?,
        Metric::Mcc => mcc(&labels, &gold)?,
        Metric::MaeX100 => mae_x100(&labels, &gold)?,
        Metric::AveragePrecision => {
            if model.label_names().len() != 2 {
                return Err(Error::Config(
                    "average_precision needs a binary task".into(),
                ));
            }
            let scores: Vec<f64> = predictions.iter().map(|p| p.probabilities[1]).collect();
            let positives: Vec<bool> = gold.iter().map(|&g| g == 1).collect();
            average_precision(&scores, &positives)?
        }
    };
    Ok(score)
}

/// Everything a multi-split run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub metric: Metric,
    pub n_per_class: usize,
    pub n_splits: usize,
    pub base_seed: u64,
    pub fit: FitConfig,
}

impl ExperimentPlan {
    pub fn new(metric: Metric, n_per_class: usize) -> Self {
        Self {
            metric,
            n_per_class,
            n_splits: 10,
            base_seed: 0,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: String,
    pub tool_version: String,
    pub prng: String,
    pub plan: ExperimentPlan,
    pub train_examples: usize,
    pub test_examples: usize,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_per_class,split,metric,score\n");
        for (i, s) in self.scores.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.plan.n_per_class, i, self.plan.metric, s
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "{} n_per_class={} splits={}: {:.4} ± {:.4}",
            self.plan.metric,
            self.plan.n_per_class,
            self.scores.len(),
            self.mean,
            self.std
        )
    }
}

fn check_splits(n_splits: usize) -> Result<()> {
    if n_splits == 0 {
        return Err(Error::Config("n_splits must be at least 1".into()));
    }
    Ok(())
}

/// Runs one split: sample, fit, score on the full test set.
fn run_split(train: &Dataset, test: &Dataset, plan: &ExperimentPlan, index: usize) -> Result<f64> {
    let seed = split_seed(plan.base_seed, index);
    let few = sample_few_shot(train, plan.n_per_class, seed)?;
    let model = fit(&few, &plan.fit.with_seed(seed))?;
    evaluate_model(&model, test, plan.metric)
}

pub fn run_experiment_on(
    train: &Dataset,
    test: &Dataset,
    plan: &ExperimentPlan,
) -> Result<ExperimentReport> {
    check_splits(plan.n_splits)?;
    let scores = (0..plan.n_splits)
        .into_par_iter()
        .map(|i| run_split(train, test, plan, i).context(|| format!("split {i}")))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&scores);
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        prng: PRNG_NAME.to_string(),
        plan: plan.clone(),
        train_examples: train.len(),
        test_examples: test.len(),
        scores,
        mean,
        std,
    })
}

/// File-backed experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub plan: ExperimentPlan,
}

/// Loads the training file (label names in first-appearance order) and the
/// test file against the same label names.
pub fn load_train_test(train_path: &Path, test_path: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_dataset(train_path, DatasetFormat::from_path(train_path))?;
    let test = load_dataset_with_labels(
        test_path,
        DatasetFormat::from_path(test_path),
        Some(train.label_names()),
    )?;
    Ok((train, test))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (train, test) = load_train_test(&config.train_path, &config.test_path)?;
    run_experiment_on(&train, &test, &config.plan)
}

/// One report per few-shot size.
pub fn run_sweep(
    train: &Dataset,
    test: &Dataset,
    plan: &ExperimentPlan,
    sizes: &[usize],
) -> Result<Vec<ExperimentReport>> {
    sizes
        .iter()
        .map(|&n| {
            let plan = ExperimentPlan {
                n_per_class: n,
                ..plan.clone()
            };
            run_experiment_on(train, test, &plan).context(|| format!("n_per_class {n}"))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillCurvePlan {
    pub metric: Metric,
    /// Labeled examples per class shared by teacher and students.
    pub n_per_class: usize,
    /// Unlabeled pool sizes to evaluate.
    pub sizes: Vec<usize>,
    /// Unlabeled pairs per point; `None` uses one pair per unlabeled text.
    pub pairs: Option<usize>,
    pub n_splits: usize,
    pub base_seed: u64,
    pub teacher: FitConfig,
    pub student: DistillConfig,
}

impl DistillCurvePlan {
    fn pairs_for(&self, n_unlabeled: usize) -> usize {
        if n_unlabeled == 0 {
            0
        } else {
            self.pairs.unwrap_or(n_unlabeled)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_unlabeled: usize,
    pub pairs: usize,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillCurveReport {
    pub schema_version: String,
    pub tool_version: String,
    pub prng: String,
    pub plan: DistillCurvePlan,
    pub teacher_scores: Vec<f64>,
    pub teacher_mean: f64,
    pub teacher_std: f64,
    pub points: Vec<CurvePoint>,
}

impl DistillCurveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_unlabeled,pairs,mean,std\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.n_unlabeled, p.pairs, p.mean, p.std);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "teacher {}: {:.4} ± {:.4}\n",
            self.plan.metric, self.teacher_mean, self.teacher_std
        );
        for p in &self.points {
            let _ = writeln!(
                out,
                "N={:<6} M={:<6} {:.4} ± {:.4}",
                p.n_unlabeled, p.pairs, p.mean, p.std
            );
        }
        out
    }
}

/// For each split: fit a teacher on the labeled sample, then distill one
/// student per unlabeled size from the first `N` texts of a seeded shuffle
/// of the pool.
pub fn run_distill_curve(
    train: &Dataset,
    test: &Dataset,
    pool: &[String],
    plan: &DistillCurvePlan,
) -> Result<DistillCurveReport> {
    check_splits(plan.n_splits)?;
    if let Some(&max) = plan.sizes.iter().max() {
        if max > pool.len() {
            return Err(Error::Config(format!(
                "unlabeled size {max} exceeds pool of {} texts",
                pool.len()
            )));
        }
    }
    let per_split = (0..plan.n_splits)
        .into_par_iter()
        .map(|i| -> Result<(f64, Vec<f64>)> {
            let run = || -> Result<(f64, Vec<f64>)> {
                let seed = split_seed(plan.base_seed, i);
                let labeled = sample_few_shot(train, plan.n_per_class, seed)?;
                let teacher =
                    fit(&labeled, &plan.teacher.with_seed(seed)).context(|| "teacher".into())?;
                let teacher_score = evaluate_model(&teacher, test, plan.metric)?;
                let mut shuffled = pool.to_vec();
                shuffled.shuffle(&mut rng_from_seed(SeedPlan::derive(seed).unlabeled));
                let mut scores = Vec::with_capacity(plan.sizes.len());
                for &n in &plan.sizes {
                    let config = DistillConfig {
                        pairs: plan.pairs_for(n),
                        ..plan.student.with_seed(seed)
                    };
                    let student = distill(&teacher, &labeled, &shuffled[..n], &config)
                        .context(|| format!("student with {n} unlabeled"))?;
                    scores.push(evaluate_model(&student, test, plan.metric)?);
                }
                Ok((teacher_score, scores))
            };
            run().context(|| format!("split {i}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let teacher_scores: Vec<f64> = per_split.iter().map(|(t, _)| *t).collect();
    let (teacher_mean, teacher_std) = mean_std(&teacher_scores);
    let points = plan
        .sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let scores: Vec<f64> = per_split.iter().map(|(_, s)| s[k]).collect();
            let (mean, std) = mean_std(&scores);
            CurvePoint {
                n_unlabeled: n,
                pairs: plan.pairs_for(n),
                scores,
                mean,
                std,
            }
        })
        .collect();
    Ok(DistillCurveReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        prng: PRNG_NAME.to_string(),
        plan: plan.clone(),
        teacher_scores,
        teacher_mean,
        teacher_std,
        points,
    })
}

/// Reads a JSON cost table and computes each row's costs and speed-up
/// relative to the first row.
pub fn run_cost_report(path: &Path) -> Result<Vec<CostRow>> {
    let json = std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
    Ok(cost_table(&parse_cost_table(&json)?)?)
}

pub fn cost_rows_to_csv(rows: &[CostRow]) -> String {
    let mut out = String::from("name,inference_flops,training_flops,speedup\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{}",
            r.name, r.inference_flops, r.training_flops, r.speedup
        );
    }
    out
}

pub fn cost_rows_to_text(rows: &[CostRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!(
        "{:<width$}  {:>10}  {:>10}  {:>8}\n",
        "name", "inf FLOPs", "train FLOPs", "speed-up"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>10.2e}  {:>10.2e}  {:>7.1}x",
            r.name, r.inference_flops, r.training_flops, r.speedup
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance of 1..4 is 5/3
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_splits_rejected() {
        let ds = crate::synthetic::generate(&Default::default(), 10, 0).unwrap();
        let mut plan = ExperimentPlan::new(Metric::Accuracy, 2);
        plan.n_splits = 0;
        assert!(run_experiment_on(&ds, &ds, &plan).is_err());
    }
}
