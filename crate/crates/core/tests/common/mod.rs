//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code it checks.

#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use setfit_core::corpus::{Dataset, LabeledExample};
use setfit_core::encoder::{EncoderParams, EncoderSpec};
use setfit_core::head::{HeadObjective, HeadParams};
use setfit_core::pairs::TrainPair;

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Distinct texts `t{class}_{i}` with the given class sizes.
pub fn dataset(sizes: &[usize]) -> Dataset {
    let names = (0..sizes.len()).map(|c| format!("class{c}")).collect();
    let examples = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| LabeledExample::new(format!("t{c}_{i}"), c)))
        .collect();
    Dataset::new(examples, names).unwrap()
}

/// Number of unordered distinct pairs, by enumeration.
pub fn brute_unique_pairs(k: u64) -> u64 {
    let mut n = 0;
    for i in 0..k {
        for _ in i + 1..k {
            n += 1;
        }
    }
    n
}

pub fn brute_accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    let mut hits = 0;
    for i in 0..pred.len() {
        if pred[i] == gold[i] {
            hits += 1;
        }
    }
    hits as f64 / pred.len() as f64
}

/// Pearson correlation of the two 0/1 vectors, which equals MCC; 0 when
/// either vector is constant.
pub fn pearson_mcc(pred: &[usize], gold: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let x: Vec<f64> = pred.iter().map(|&p| p as f64).collect();
    let y: Vec<f64> = gold.iter().map(|&g| g as f64).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn brute_mae_x100(pred: &[usize], gold: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        total += (pred[i] as f64 - gold[i] as f64).abs();
    }
    100.0 * total / pred.len() as f64
}

/// Average precision from its definition: for every distinct score `s`,
/// taken from high to low, precision and recall of the set `{score >= s}`.
pub fn brute_average_precision(scores: &[f64], gold: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let total_pos = gold.iter().filter(|&&g| g).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for s in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= s).collect();
        let tp = selected.iter().filter(|&&i| gold[i]).count() as f64;
        let recall = tp / total_pos;
        let precision = tp / selected.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

/// A small random encoder with a table in the usual init range.
pub fn small_encoder(r: &mut Pcg64) -> EncoderParams {
    let spec = EncoderSpec {
        vocab_buckets: r.random_range(8..64),
        dim: r.random_range(2..8),
        max_len: r.random_range(3..10),
        hash_seed: r.random(),
    };
    let table = (0..spec.vocab_buckets * spec.dim)
        .map(|_| r.random_range(-0.05..0.05))
        .collect();
    EncoderParams::from_table(spec, table).unwrap()
}

const WORDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa",
];

pub fn random_text(r: &mut Pcg64) -> String {
    let n = r.random_range(1..8);
    (0..n)
        .map(|_| *WORDS.choose(r).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_pair(r: &mut Pcg64) -> TrainPair {
    let target = if r.random_bool(0.5) {
        r.random_range(0..2) as f64
    } else {
        r.random_range(-1.0..=1.0)
    };
    TrainPair::new(random_text(r), random_text(r), target).unwrap()
}

/// Worst entrywise relative error between the analytic pair gradient and
/// central differences over every table entry the pair touches, plus a
/// sample of untouched entries (whose gradient must be zero).
pub fn encoder_fd_error(params: &EncoderParams, pair: &TrainPair, r: &mut Pcg64) -> f64 {
    let (_, grad) = params.pair_loss_and_grad(pair).unwrap();
    let d = params.dim();
    let v = params.spec().vocab_buckets;
    let mut rows: Vec<u32> = grad.rows.keys().copied().collect();
    for _ in 0..3 {
        rows.push(r.random_range(0..v as u32));
    }
    rows.sort_unstable();
    rows.dedup();
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for row in rows {
        for k in 0..d {
            let idx = row as usize * d + k;
            let orig = probe.table()[idx];
            probe.table_mut()[idx] = orig + FD_STEP;
            let up = probe.pair_loss(pair).unwrap();
            probe.table_mut()[idx] = orig - FD_STEP;
            let down = probe.pair_loss(pair).unwrap();
            probe.table_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grad.rows.get(&row).map_or(0.0, |g| g[k]);
            worst = worst.max(rel_err(analytic, numeric, FD_FLOOR));
        }
    }
    worst
}

/// Parameter `i` in gradient order: all weights, then the bias.
fn head_slot(p: &mut HeadParams, i: usize) -> &mut f64 {
    let n_w = p.weights.len();
    if i < n_w {
        &mut p.weights[i]
    } else {
        &mut p.bias[i - n_w]
    }
}

/// Worst entrywise relative error between the head objective gradient and
/// central differences over every weight and bias.
pub fn head_fd_error(objective: &HeadObjective<'_>, params: &HeadParams) -> f64 {
    let (_, grad) = objective.loss_and_grad(params);
    let n_w = params.weights.len();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, &analytic) in grad.iter().enumerate().take(n_w + params.bias.len()) {
        let orig = *head_slot(&mut probe, i);
        *head_slot(&mut probe, i) = orig + FD_STEP;
        let up = objective.loss(&probe);
        *head_slot(&mut probe, i) = orig - FD_STEP;
        let down = objective.loss(&probe);
        *head_slot(&mut probe, i) = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic, numeric, FD_FLOOR));
    }
    worst
}
