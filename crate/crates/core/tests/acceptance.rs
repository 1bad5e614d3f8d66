//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed or overran its time budget.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use setfit_core::corpus::{sample_few_shot, Dataset};
use setfit_core::cost::{
    implied_params, inference_flops, presets, round_sig, speedup, training_flops, Architecture,
    CostSpec,
};
use setfit_core::distill::{distill, DistillConfig};
use setfit_core::encoder::SentenceEmbedding;
use setfit_core::harness::{
    mean_std, run_distill_curve, run_experiment_on, DistillCurvePlan, ExperimentPlan,
};
use setfit_core::head::{HeadObjective, HeadParams};
use setfit_core::metrics::{accuracy, average_precision, mae_x100, mcc, Metric};
use setfit_core::pairs::{generate_pairs, max_unique_pairs, PairMode};
use setfit_core::pipeline::{fit, load_model, save_model, FitConfig, Model};
use setfit_core::synthetic::{generate, generate_unlabeled, SyntheticConfig};

use common::*;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "cost model reproduces the reference FLOP table",
            budget: Duration::from_secs(1),
            run: cost_model,
        },
        Criterion {
            name: "pair accounting on 200 random datasets",
            budget: Duration::from_secs(5),
            run: pair_accounting,
        },
        Criterion {
            name: "cosine and head gradients match finite differences",
            budget: Duration::from_secs(10),
            run: gradients,
        },
        Criterion {
            name: "end-to-end synthetic accuracy beats frozen encoder",
            budget: Duration::from_secs(120),
            run: end_to_end,
        },
        Criterion {
            name: "distillation improves with unlabeled pairs and reduces to fit",
            budget: Duration::from_secs(180),
            run: distillation,
        },
        Criterion {
            name: "metrics agree with brute-force oracles",
            budget: Duration::from_secs(10),
            run: metrics,
        },
        Criterion {
            name: "determinism and model persistence",
            budget: Duration::from_secs(60),
            run: determinism,
        },
    ];

    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|()| {
            if elapsed > c.budget {
                Err(format!("took {elapsed:.2?}, budget {:?}", c.budget))
            } else {
                Ok(())
            }
        });
        match outcome {
            Ok(()) => println!("PASS [{}] {} ({elapsed:.2?})", i + 1, c.name),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{}] {} ({elapsed:.2?}): {reason}", i + 1, c.name);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cost_model() -> Check {
    let t_few = presets::t_few_3b();
    let mpnet = presets::setfit_mpnet();
    let minilm = presets::setfit_minilm();
    ensure!(
        (t_few.n_steps, t_few.n_batch, mpnet.n_steps, mpnet.n_batch) == (1000, 8, 1000, 8),
        "preset steps/batch differ from 1000/8"
    );
    ensure!(
        t_few == CostSpec::new(3e9, 54.0, Architecture::EncoderDecoder),
        "T-Few preset mismatch"
    );
    ensure!(
        mpnet == CostSpec::new(110e6, 38.0, Architecture::EncoderOnly),
        "MPNet preset mismatch"
    );

    let err = |e| format!("{e}");
    let checks = [
        (
            "T-Few inference",
            round_sig(inference_flops(&t_few).map_err(err)?, 2),
            1.6e11,
        ),
        (
            "T-Few training",
            round_sig(training_flops(&t_few).map_err(err)?, 2),
            3.9e15,
        ),
        (
            "MPNet inference",
            round_sig(inference_flops(&mpnet).map_err(err)?, 2),
            8.3e9,
        ),
        (
            "MPNet training",
            round_sig(training_flops(&mpnet).map_err(err)?, 2),
            2.0e14,
        ),
        (
            "speed-up",
            speedup(&t_few, &mpnet).map_err(err)?.round(),
            19.0,
        ),
        (
            "MiniLM inference",
            round_sig(inference_flops(&minilm).map_err(err)?, 3),
            1.14e9,
        ),
        (
            "MiniLM training",
            round_sig(training_flops(&minilm).map_err(err)?, 2),
            2.7e13,
        ),
        (
            "params implied by 1.3e9",
            round_sig(implied_params(1.3e9, 38.0, Architecture::EncoderOnly), 3),
            1.71e7,
        ),
        ("printed-row speed-up", (1.6e11f64 / 1.3e9).round(), 123.0),
    ];
    let mismatches: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}: got {got:e}, want {want:e}"))
        .collect();
    ensure!(
        presets::MINILM_NOTE.contains("1.14e9") && presets::MINILM_NOTE.contains("17.1M"),
        "MiniLM discrepancy note missing"
    );
    ensure!(mismatches.is_empty(), "{}", mismatches.join("; "));
    Ok(())
}

fn pair_accounting() -> Check {
    let mut r = rng(0xACC2);
    for case in 0..200 {
        let n_classes = r.random_range(2..=6);
        let sizes: Vec<usize> = (0..n_classes).map(|_| r.random_range(2..=40)).collect();
        let rr = r.random_range(0..=40);
        let ds = dataset(&sizes);
        let labels = ds.labels();
        let set = generate_pairs(&ds, rr, r.random(), PairMode::Strict)
            .map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            set.len() == 2 * rr * n_classes,
            "case {case}: {} pairs, want {}",
            set.len(),
            2 * rr * n_classes
        );
        ensure!(
            set.example_indices.len() == set.len(),
            "case {case}: index list length"
        );
        for (k, (&(i, j), p)) in set.example_indices.iter().zip(&set.pairs).enumerate() {
            let class = k / (2 * rr);
            let positive = k % (2 * rr) < rr;
            ensure!(
                p.first == ds.examples()[i].text && p.second == ds.examples()[j].text,
                "case {case} pair {k}: texts disagree with indices"
            );
            ensure!(
                labels[i] == class,
                "case {case} pair {k}: anchor not from class {class}"
            );
            ensure!(i != j, "case {case} pair {k}: self-pair");
            if positive {
                ensure!(
                    p.target == 1.0 && labels[j] == class,
                    "case {case} pair {k}: bad positive"
                );
            } else {
                ensure!(
                    p.target == 0.0 && labels[j] != class,
                    "case {case} pair {k}: bad negative"
                );
            }
        }
    }
    for k in 0..=50u64 {
        ensure!(
            max_unique_pairs(k) == brute_unique_pairs(k),
            "max_unique_pairs({k}) = {}, brute force {}",
            max_unique_pairs(k),
            brute_unique_pairs(k)
        );
    }
    Ok(())
}

const GRAD_TOL: f64 = 1e-4;

fn gradients() -> Check {
    let mut r = rng(0x6AD);
    let mut checked = 0;
    while checked < 150 {
        let params = small_encoder(&mut r);
        let pair = random_pair(&mut r);
        if params.pair_loss(&pair).is_err() {
            // a bag of tokens can cancel to a near-zero mean; not an instance
            continue;
        }
        let err = encoder_fd_error(&params, &pair, &mut r);
        ensure!(
            err < GRAD_TOL,
            "cosine loss instance {checked}: relative error {err:e}"
        );
        checked += 1;
    }

    for case in 0..150 {
        let (hard, soft, params, l2, alpha) = random_head_instance(&mut r);
        let n_classes = params.n_classes();
        let objective = if soft.0.is_empty() {
            HeadObjective::mean(&hard.0, hard.1.clone(), n_classes, l2)
        } else {
            HeadObjective::mixed(
                (&hard.0, hard.1.clone()),
                (&soft.0, soft.1.clone()),
                alpha,
                n_classes,
                l2,
            )
        }
        .map_err(|e| e.to_string())?;
        let err = head_fd_error(&objective, &params);
        ensure!(
            err < GRAD_TOL,
            "head loss instance {case}: relative error {err:e}"
        );
    }
    Ok(())
}

type Rows = (Vec<SentenceEmbedding>, Vec<Vec<f64>>);

fn random_head_instance(r: &mut rand_pcg::Pcg64) -> (Rows, Rows, HeadParams, f64, f64) {
    let n_classes = r.random_range(2..=5);
    let dim = r.random_range(1..=6);
    let rows = |n: usize, soft: bool, r: &mut rand_pcg::Pcg64| -> Rows {
        let emb = (0..n)
            .map(|_| SentenceEmbedding((0..dim).map(|_| r.random_range(-1.0..1.0)).collect()))
            .collect();
        let targets = (0..n)
            .map(|_| {
                if soft {
                    let raw: Vec<f64> = (0..n_classes).map(|_| r.random_range(0.0..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / s).collect()
                } else {
                    let mut t = vec![0.0; n_classes];
                    t[r.random_range(0..n_classes)] = 1.0;
                    t
                }
            })
            .collect();
        (emb, targets)
    };
    let n_hard = r.random_range(1..=8);
    let hard = rows(n_hard, false, r);
    let n_soft = if r.random_bool(0.5) {
        r.random_range(1..=8)
    } else {
        0
    };
    let soft = rows(n_soft, true, r);
    let mut params = HeadParams::zeros(dim, (0..n_classes).map(|c| c.to_string()).collect());
    params
        .weights
        .iter_mut()
        .for_each(|w| *w = r.random_range(-1.0..1.0));
    params
        .bias
        .iter_mut()
        .for_each(|b| *b = r.random_range(-1.0..1.0));
    let l2 = r.random_range(0.0..0.1);
    let alpha = r.random_range(0.0..=1.0);
    (hard, soft, params, l2, alpha)
}

fn synthetic_pools() -> (Dataset, Dataset) {
    let cfg = SyntheticConfig::default();
    let train = generate(&cfg, 200, 0x7A1).expect("train pool");
    let test = generate(&cfg, 250, 0x7E5).expect("test pool");
    (train, test)
}

fn end_to_end() -> Check {
    let (train, test) = synthetic_pools();
    ensure!(test.len() == 500, "test set has {} examples", test.len());
    let mut plan = ExperimentPlan::new(Metric::Accuracy, 8);
    plan.n_splits = 10;
    ensure!(
        plan.fit.r_pairs == 20 && plan.fit == FitConfig::default(),
        "plan does not use default settings"
    );
    let tuned = run_experiment_on(&train, &test, &plan).map_err(|e| e.to_string())?;
    let mut frozen_plan = plan.clone();
    frozen_plan.fit.finetune.epochs = 0;
    let frozen = run_experiment_on(&train, &test, &frozen_plan).map_err(|e| e.to_string())?;
    println!(
        "     fine-tuned {:.4} ± {:.4}, frozen {:.4} ± {:.4}",
        tuned.mean, tuned.std, frozen.mean, frozen.std
    );
    ensure!(tuned.scores.len() == 10, "expected 10 split scores");
    ensure!(tuned.mean >= 0.90, "mean accuracy {:.4} < 0.90", tuned.mean);
    ensure!(
        tuned.mean > frozen.mean,
        "fine-tuned {:.4} not above frozen {:.4}",
        tuned.mean,
        frozen.mean
    );
    Ok(())
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same_model(a: &Model, b: &Model) -> bool {
    a.encoder.spec() == b.encoder.spec()
        && same_bits(a.encoder.table(), b.encoder.table())
        && same_bits(&a.head.weights, &b.head.weights)
        && same_bits(&a.head.bias, &b.head.bias)
        && a.head.label_names == b.head.label_names
}

fn distillation() -> Check {
    let (train, test) = synthetic_pools();
    let pool =
        generate_unlabeled(&SyntheticConfig::default(), 1000, 0x9001).map_err(|e| e.to_string())?;
    let plan = DistillCurvePlan {
        metric: Metric::Accuracy,
        n_per_class: 16,
        sizes: vec![0, 400],
        pairs: None,
        n_splits: 5,
        base_seed: 0,
        teacher: FitConfig::default(),
        student: DistillConfig::default(),
    };
    let report = run_distill_curve(&train, &test, &pool, &plan).map_err(|e| e.to_string())?;
    let (at_zero, at_400) = (&report.points[0], &report.points[1]);
    println!(
        "     teacher {:.4}, student M={} {:.4}, M={} {:.4}",
        report.teacher_mean, at_zero.pairs, at_zero.mean, at_400.pairs, at_400.mean
    );
    ensure!(
        at_zero.pairs == 0 && at_400.pairs == 400,
        "unexpected pair counts"
    );
    ensure!(
        at_400.mean >= at_zero.mean,
        "student at M=400 ({:.4}) below M=0 ({:.4})",
        at_400.mean,
        at_zero.mean
    );

    for seed in 0..3u64 {
        let labeled = sample_few_shot(&train, 16, seed).map_err(|e| e.to_string())?;
        let teacher = fit(&labeled, &FitConfig::seeded(seed)).map_err(|e| e.to_string())?;
        let config = DistillConfig::seeded(seed);
        let student = distill(&teacher, &labeled, &[], &config).map_err(|e| e.to_string())?;
        let plain = fit(&labeled, &config.aligned_fit_config()).map_err(|e| e.to_string())?;
        ensure!(
            same_model(&student, &plain),
            "seed {seed}: M=0 student differs from fit"
        );
    }
    Ok(())
}

fn metrics() -> Check {
    let mut r = rng(0x3E7);
    for case in 0..1000 {
        let n = r.random_range(1..60);
        let c = r.random_range(2..6);
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let gold: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let got = accuracy(&pred, &gold).map_err(|e| e.to_string())?;
        ensure!(got == brute_accuracy(&pred, &gold), "accuracy case {case}");
        let got = mae_x100(&pred, &gold).map_err(|e| e.to_string())?;
        let want = brute_mae_x100(&pred, &gold);
        ensure!(
            (got - want).abs() < 1e-9,
            "mae case {case}: {got} vs {want}"
        );
    }
    for case in 0..1000 {
        let n = r.random_range(1..60);
        let p_pred = r.random_range(0.0..=1.0);
        let p_gold = r.random_range(0.0..=1.0);
        let pred: Vec<usize> = (0..n).map(|_| r.random_bool(p_pred) as usize).collect();
        let gold: Vec<usize> = (0..n).map(|_| r.random_bool(p_gold) as usize).collect();
        let got = mcc(&pred, &gold).map_err(|e| e.to_string())?;
        let want = pearson_mcc(&pred, &gold);
        ensure!(
            (got - want).abs() < 1e-9,
            "mcc case {case}: {got} vs {want}"
        );
    }
    ensure!(
        mcc(&[1, 1, 1], &[0, 1, 0]) == Ok(0.0),
        "constant prediction MCC"
    );
    ensure!(mcc(&[0, 1, 0], &[1, 1, 1]) == Ok(0.0), "constant gold MCC");
    ensure!(mcc(&[0, 0], &[0, 0]) == Ok(0.0), "all-negative MCC");

    for case in 0..1000 {
        let n = r.random_range(1..40);
        // a coarse score grid makes ties common
        let levels = r.random_range(1..8);
        let scores: Vec<f64> = (0..n)
            .map(|_| r.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut gold: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        gold[r.random_range(0..n)] = true;
        let got = average_precision(&scores, &gold).map_err(|e| e.to_string())?;
        let want = brute_average_precision(&scores, &gold);
        ensure!(
            (got - want).abs() < 1e-12,
            "ap case {case}: {got} vs {want}"
        );

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let s2: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let g2: Vec<bool> = order.iter().map(|&i| gold[i]).collect();
        let permuted = average_precision(&s2, &g2).map_err(|e| e.to_string())?;
        ensure!(
            (got - permuted).abs() < 1e-12,
            "ap case {case}: order within ties matters"
        );
    }
    // one tied threshold holding a positive and a negative: P = 1/2 at R = 1
    ensure!(
        average_precision(&[0.5, 0.5], &[true, false]) == Ok(0.5),
        "tied threshold must be scored as one step"
    );
    ensure!(
        average_precision(&[0.5, 0.5], &[false, true]) == Ok(0.5),
        "tied threshold must be scored as one step"
    );
    Ok(())
}

fn determinism() -> Check {
    let (train, test) = synthetic_pools();
    let mut plan = ExperimentPlan::new(Metric::Accuracy, 8);
    plan.n_splits = 3;
    plan.base_seed = 42;
    let a = run_experiment_on(&train, &test, &plan).map_err(|e| e.to_string())?;
    let b = run_experiment_on(&train, &test, &plan).map_err(|e| e.to_string())?;
    ensure!(
        a.to_json() == b.to_json(),
        "report JSON differs between identical runs"
    );
    ensure!(
        same_bits(&a.scores, &b.scores),
        "split scores differ between identical runs"
    );
    let (mean, std) = mean_std(&a.scores);
    ensure!(
        mean.to_bits() == a.mean.to_bits() && std.to_bits() == a.std.to_bits(),
        "report mean/std disagree with its scores"
    );

    let few = sample_few_shot(&train, 8, 7).map_err(|e| e.to_string())?;
    let config = FitConfig::seeded(7);
    let m1 = fit(&few, &config).map_err(|e| e.to_string())?;
    let m2 = fit(&few, &config).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    save_model(&m1, &p1).map_err(|e| e.to_string())?;
    save_model(&m2, &p2).map_err(|e| e.to_string())?;
    let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    ensure!(b1 == b2, "model files differ between identical fits");

    let loaded = load_model(&p1).map_err(|e| e.to_string())?;
    ensure!(loaded == m1, "loaded model differs from the saved one");
    let mut r = rng(0xD7);
    let mut inputs: Vec<String> = test.texts().take(60).map(String::from).collect();
    inputs.extend((0..40).map(|_| random_text(&mut r)));
    for text in &inputs {
        let before = m1.predict_proba(text).map_err(|e| e.to_string())?;
        let after = loaded.predict_proba(text).map_err(|e| e.to_string())?;
        ensure!(
            same_bits(&before, &after),
            "probabilities changed after reload for {text:?}"
        );
        ensure!(
            m1.predict(text).ok() == loaded.predict(text).ok(),
            "label changed for {text:?}"
        );
    }
    Ok(())
}
