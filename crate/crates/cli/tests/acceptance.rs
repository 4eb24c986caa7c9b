//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.
//!
//! Oracles (finite differences, loss values, labelling rule, kNN) are
//! written here from their definitions and share no code with the library.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dualsup::data::{generate_synthetic_with, SyntheticConfig};
use dualsup::eval::{
    backbone_features, chance_consistency, chance_consistency_of, cross_class_eval, knn_classify, knn_probe,
    split_classes_by_superclass, ProbeConfig,
};
use dualsup::losses::{
    barlow_twins_loss, contrastive_loss, cosine_pair_loss, noncontrastive_loss, npair_loss, npair_loss_in_batch,
    triplet_loss, wmse_loss, LossConfig, LossOutput, TripletMode,
};
use dualsup::model::{init_encoder, EncoderParams, EncoderSpec};
use dualsup::numerics::{cross_correlation, whiten_batch, Matrix};
use dualsup::protocol::{
    fuzzy_vote, phase1_train, phase2_train_observed, pseudo_label, select_block, ArchConfig, LabelMode,
    Phase2Event, Phase2Plan, ProtocolConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 100;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("loss gradients vs central differences", gradients),
        ("whitened covariance is the identity", whitening),
        ("cross-correlation bounds and Barlow Twins zero set", cross_correlation_bounds),
        ("closed-form loss values", spot_values),
        ("fuzzy labelling vs brute-force rule", fuzzy_labels),
        ("bit-identical reruns, parallel = sequential", determinism),
        ("desk-scale end-to-end", desk_scale),
        ("frozen layers stay bit-identical", freezing),
        ("cross-class superclass consistency", cross_class),
        ("kNN vs exhaustive oracle", knn),
    ];
    let started = Instant::now();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2}: {} | {name} | {} | {:.1} s",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- helpers

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn center(m: &Matrix) -> Vec<Vec<f64>> {
    let mut rows = rows_of(m);
    for c in 0..m.cols() {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
        rows.iter_mut().for_each(|r| r[c] -= mean);
    }
    rows
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",")
}

/// Central differences of `f` with respect to input `which`.
fn numeric_grad(inputs: &[Matrix], which: usize, f: &dyn Fn(&[Matrix]) -> f64) -> Matrix {
    let mut work = inputs.to_vec();
    let mut g = Matrix::zeros(inputs[which].rows(), inputs[which].cols());
    for k in 0..inputs[which].data().len() {
        let x = work[which].data()[k];
        work[which].data_mut()[k] = x + FD_STEP;
        let up = f(&work);
        work[which].data_mut()[k] = x - FD_STEP;
        let down = f(&work);
        work[which].data_mut()[k] = x;
        g.data_mut()[k] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

fn relative_error(a: &Matrix, n: &Matrix) -> f64 {
    let diff: f64 = a.data().iter().zip(n.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |m: &Matrix| m.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(a).max(norm(n)).max(1e-6)
}

// ---------------------------------------------------------- loss oracles

fn triplet_value(z: &[Matrix], margin: f64, mode: TripletMode) -> f64 {
    let s = if mode == TripletMode::Standard { -1.0 } else { 1.0 };
    (0..z[0].rows())
        .map(|r| (s * (dotv(z[0].row(r), z[1].row(r)) - dotv(z[0].row(r), z[2].row(r))) + margin).max(0.0))
        .sum::<f64>()
        / z[0].rows() as f64
}

fn triplet_gaps(z: &[Matrix], margin: f64, mode: TripletMode) -> f64 {
    let s = if mode == TripletMode::Standard { -1.0 } else { 1.0 };
    (0..z[0].rows())
        .map(|r| (s * (dotv(z[0].row(r), z[1].row(r)) - dotv(z[0].row(r), z[2].row(r))) + margin).abs())
        .fold(f64::INFINITY, f64::min)
}

fn npair_value(z: &[Matrix]) -> f64 {
    let (a, p, neg) = (&z[0], &z[1], &z[2]);
    (0..a.rows())
        .map(|r| {
            let pos = dotv(a.row(r), p.row(r));
            (1.0 + (0..neg.rows()).map(|k| (dotv(a.row(r), neg.row(k)) - pos).exp()).sum::<f64>()).ln()
        })
        .sum::<f64>()
        / a.rows() as f64
}

fn npair_in_batch_value(z: &[Matrix]) -> f64 {
    let (a, p) = (&z[0], &z[1]);
    let n = a.rows();
    (0..n)
        .map(|i| {
            let pos = dotv(a.row(i), p.row(i));
            let neg: f64 = (0..n).filter(|&j| j != i).map(|j| (dotv(a.row(i), p.row(j)) - pos).exp()).sum();
            (1.0 + neg).ln()
        })
        .sum::<f64>()
        / n as f64
}

fn contrastive_value(v: &Matrix, pair: &[usize], tau: f64) -> f64 {
    let u: Vec<Vec<f64>> = rows_of(v)
        .into_iter()
        .map(|r| {
            let n = dotv(&r, &r).sqrt();
            r.iter().map(|x| x / n).collect()
        })
        .collect();
    let n = u.len();
    (0..n)
        .map(|i| {
            let denom: f64 = (0..n).filter(|&c| c != i).map(|c| (dotv(&u[i], &u[c]) / tau).exp()).sum();
            denom.ln() - dotv(&u[i], &u[pair[i]]) / tau
        })
        .sum::<f64>()
        / n as f64
}

fn cosine_rows_value(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| 2.0 - 2.0 * dotv(x, y) / (dotv(x, x).sqrt() * dotv(y, y).sqrt()))
        .sum::<f64>()
        / a.len() as f64
}

fn times(rows: &[Vec<f64>], t: &Matrix) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| (0..t.cols()).map(|c| (0..t.rows()).map(|k| r[k] * t[(k, c)]).sum()).collect())
        .collect()
}

/// Unit-norm, centered columns and `C = Âᵀ B̂`.
fn barlow_c(a: &Matrix, b: &Matrix) -> Vec<Vec<f64>> {
    let unit = |m: &Matrix| {
        let mut rows = center(m);
        for c in 0..m.cols() {
            let n = rows.iter().map(|r| r[c] * r[c]).sum::<f64>().sqrt();
            rows.iter_mut().for_each(|r| r[c] /= n);
        }
        rows
    };
    let (ua, ub) = (unit(a), unit(b));
    let d = a.cols();
    (0..d)
        .map(|i| (0..d).map(|j| ua.iter().zip(&ub).map(|(x, y)| x[i] * y[j]).sum()).collect())
        .collect()
}

fn barlow_value(a: &Matrix, b: &Matrix, lambda: f64) -> f64 {
    let c = barlow_c(a, b);
    let mut v = 0.0;
    for (i, row) in c.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            v += if i == j { (1.0 - x).powi(2) } else { lambda * x * x };
        }
    }
    v
}

// ------------------------------------------------------------ criterion 1

#[derive(Default)]
struct GradStats {
    instances: usize,
    grad: f64,
    value: f64,
}

impl GradStats {
    fn record(&mut self, inputs: &[Matrix], out: &LossOutput, which: &[usize], f: &dyn Fn(&[Matrix]) -> f64) {
        self.instances += 1;
        let v = f(inputs);
        self.value = self.value.max((out.value - v).abs() / v.abs().max(1.0));
        for &w in which {
            self.grad = self.grad.max(relative_error(&out.grads[w], &numeric_grad(inputs, w, f)));
        }
    }
}

fn gradients() -> Outcome {
    let mut r = rng(101);
    let mut report = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, stats: GradStats| {
        report.push(format!("{name} {:.1e}", stats.grad));
        stats.instances >= INSTANCES && stats.grad < GRAD_TOL && stats.value < 1e-10
    };

    for mode in [TripletMode::Standard, TripletMode::AsWritten] {
        let cfg = LossConfig {
            triplet_mode: mode,
            margin: 0.5,
            ..LossConfig::default()
        };
        let mut s = GradStats::default();
        while s.instances < INSTANCES {
            let (n, d) = (r.random_range(1..=16), r.random_range(1..=8));
            let z: Vec<Matrix> = (0..3).map(|_| uniform(&mut r, n, d, 1.0)).collect();
            // Stay clear of the hinge's kink, where no derivative exists.
            if triplet_gaps(&z, cfg.margin, mode) < 1e-3 {
                continue;
            }
            let out = triplet_loss(&z[0], &z[1], &z[2], &cfg).unwrap();
            s.record(&z, &out, &[0, 1, 2], &|z| triplet_value(z, cfg.margin, mode));
        }
        pass &= check(if mode == TripletMode::Standard { "triplet" } else { "triplet(as-written)" }, s);
    }

    let mut s = GradStats::default();
    for _ in 0..INSTANCES {
        let (n, d, k) = (r.random_range(1..=16), r.random_range(1..=8), r.random_range(1..=8));
        let z = vec![uniform(&mut r, n, d, 1.0), uniform(&mut r, n, d, 1.0), uniform(&mut r, k, d, 1.0)];
        let out = npair_loss(&z[0], &z[1], &z[2], &LossConfig::default()).unwrap();
        s.record(&z, &out, &[0, 1, 2], &npair_value);
    }
    pass &= check("npair", s);

    let mut s = GradStats::default();
    for _ in 0..INSTANCES {
        let (n, d) = (r.random_range(2..=16), r.random_range(1..=8));
        let z = vec![uniform(&mut r, n, d, 1.0), uniform(&mut r, n, d, 1.0)];
        let out = npair_loss_in_batch(&z[0], &z[1]).unwrap();
        s.record(&z, &out, &[0, 1], &npair_in_batch_value);
    }
    pass &= check("npair(in-batch)", s);

    let mut s = GradStats::default();
    for _ in 0..INSTANCES {
        let (b, d) = (r.random_range(2..=8), r.random_range(1..=8));
        let tau = r.random_range(0.1..1.0);
        let v = uniform(&mut r, 2 * b, d, 1.0);
        let pair: Vec<usize> = (0..2 * b).map(|i| (i + b) % (2 * b)).collect();
        let cfg = LossConfig {
            temperature: tau,
            ..LossConfig::default()
        };
        let out = contrastive_loss(&v, &pair, &cfg).unwrap();
        s.record(std::slice::from_ref(&v), &out, &[0], &|z| contrastive_value(&z[0], &pair, tau));
    }
    pass &= check("contrastive", s);

    let mut s = GradStats::default();
    let mut stopped = true;
    for _ in 0..INSTANCES {
        let (n, d) = (r.random_range(1..=16), r.random_range(1..=8));
        let z: Vec<Matrix> = (0..3).map(|_| uniform(&mut r, n, d, 1.0)).collect();
        let out = noncontrastive_loss(&z[0], &z[1], &z[2]).unwrap();
        stopped &= out.grads[0].data().iter().chain(out.grads[1].data()).all(|&g| g == 0.0);
        s.record(&z, &out, &[2], &|z| cosine_rows_value(&rows_of(&z[2]), &rows_of(&z[1])));
    }
    let ok = check("non-contrastive", s);
    pass &= stopped && ok;

    let mut s = GradStats::default();
    for _ in 0..INSTANCES {
        let d = r.random_range(1..=8);
        let n = r.random_range(d + 2..=16);
        let z = vec![uniform(&mut r, n, d, 1.0), uniform(&mut r, n, d, 1.0)];
        let cfg = LossConfig::default();
        let out = wmse_loss(&z[0], &z[1], &cfg).unwrap();
        // The whitening maps are constants of the step.
        let ti = whiten_batch(&z[0], cfg.whiten_eps).unwrap().transform;
        let tj = whiten_batch(&z[1], cfg.whiten_eps).unwrap().transform;
        s.record(&z, &out, &[0, 1], &|z| {
            cosine_rows_value(&times(&center(&z[0]), &ti), &times(&center(&z[1]), &tj))
        });
    }
    pass &= check("w-mse", s);

    // With two rows every standardized column is ±1/√2, so the loss is
    // locally constant: the gradient must vanish, and central differences
    // would only measure roundoff. The finite-difference check starts at 3.
    let mut flat: f64 = 0.0;
    for _ in 0..INSTANCES {
        let d = r.random_range(1..=8);
        let z = [uniform(&mut r, 2, d, 1.0), uniform(&mut r, 2, d, 1.0)];
        let out = barlow_twins_loss(&z[0], &z[1], &LossConfig::default()).unwrap();
        flat = flat.max(out.grads.iter().flat_map(|g| g.data()).fold(0.0, |m, v| m.max(v.abs())));
    }
    pass &= flat < 1e-10;
    let mut s = GradStats::default();
    for _ in 0..INSTANCES {
        let (n, d) = (r.random_range(3..=16), r.random_range(1..=8));
        let lambda = r.random_range(1e-3..0.5);
        let z = vec![uniform(&mut r, n, d, 1.0), uniform(&mut r, n, d, 1.0)];
        let cfg = LossConfig {
            lambda,
            ..LossConfig::default()
        };
        let out = barlow_twins_loss(&z[0], &z[1], &cfg).unwrap();
        s.record(&z, &out, &[0, 1], &|z| barlow_value(&z[0], &z[1], lambda));
    }
    pass &= check("barlow-twins", s);
    report.push(format!("barlow-twins at batch 2: max |grad| {flat:.1e} (< 1e-10)"));

    outcome(
        pass,
        format!("max relative error per loss over {INSTANCES} instances (< {GRAD_TOL:.0e}): {}", report.join(", ")),
    )
}

// ------------------------------------------------------------ criterion 2

fn whitening() -> Outcome {
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = r.random_range(1..=8);
        let n = r.random_range(2 * d + 2..=64);
        // Correlated, badly scaled but full-rank columns.
        let mix = Matrix::from_fn(d, d, |i, j| if i == j { r.random_range(0.5..3.0) } else { r.random_range(-1.0..1.0) });
        let z = uniform(&mut r, n, d, 1.0).matmul(&mix).unwrap();
        let w = whiten_batch(&z, 0.0).unwrap().whitened;
        let c = center(&w);
        let mut dist = 0.0;
        for i in 0..d {
            for j in 0..d {
                let cov = c.iter().map(|row| row[i] * row[j]).sum::<f64>() / (n - 1) as f64;
                dist += (cov - if i == j { 1.0 } else { 0.0 }).powi(2);
            }
        }
        worst = worst.max(dist.sqrt());
    }
    outcome(worst < 1e-6, format!("worst ‖cov − I‖_F over 100 batches = {worst:.2e} (< 1e-6)"))
}

// ------------------------------------------------------------ criterion 3

/// Columns 1.. of the Sylvester–Hadamard matrix of order `n` (a perfect
/// square), each scaled by a power of two: centered, mutually orthogonal,
/// with exactly representable norms.
fn hadamard_columns(n: usize) -> Matrix {
    Matrix::from_fn(n, n - 1, |i, j| {
        let sign = if ((i & (j + 1)).count_ones() % 2) == 0 { 1.0 } else { -1.0 };
        sign * f64::powi(2.0, j as i32 % 3)
    })
}

fn cross_correlation_bounds() -> Outcome {
    let mut r = rng(303);
    let mut worst: f64 = 0.0;
    let mut min_loss = f64::INFINITY;
    // Two-row batches with one column can give C = I exactly; those are
    // excluded from the "> 0" side of the check and counted.
    let mut at_identity = 0;
    let cfg = LossConfig::default();
    for _ in 0..1000 {
        let (n, d) = (r.random_range(2..=32), r.random_range(1..=8));
        let a = uniform(&mut r, n, d, 3.0);
        let b = uniform(&mut r, n, d, 3.0);
        let raw = cross_correlation(&a, &b).unwrap();
        let centered_rows = |m: &Matrix| Matrix::new(n, d, center(m).concat()).unwrap();
        let cen = cross_correlation(&centered_rows(&a), &centered_rows(&b)).unwrap();
        for v in raw.data().iter().chain(cen.data()) {
            worst = worst.max(v.abs());
        }
        let c = barlow_c(&a, &b);
        let off_identity = c.iter().enumerate().any(|(i, row)| row.iter().enumerate().any(|(j, &x)| (x - f64::from(u8::from(i == j))).abs() > 1e-9));
        if off_identity {
            min_loss = min_loss.min(barlow_twins_loss(&a, &b, &cfg).unwrap().value);
        } else {
            at_identity += 1;
        }
    }
    let bounded = worst <= 1.0 + 1e-9;

    let mut zero = true;
    let mut perturbed = f64::INFINITY;
    for n in [4, 16, 64] {
        let z = hadamard_columns(n);
        let c = barlow_c(&z, &z);
        let identity = c.iter().enumerate().all(|(i, row)| row.iter().enumerate().all(|(j, &x)| x == f64::from(u8::from(i == j))));
        zero &= identity && barlow_twins_loss(&z, &z, &cfg).unwrap().value == 0.0;
        let mut p = z.clone();
        p[(0, 0)] += 1e-3;
        perturbed = perturbed.min(barlow_twins_loss(&z, &p, &cfg).unwrap().value);
    }
    outcome(
        bounded && zero && perturbed > 0.0 && min_loss > 0.0,
        format!(
            "max |C_ij| over 1000 pairs = {worst:.12}; loss = 0 exactly at C = I: {zero}; min loss with C ≠ I = {:.2e} ({at_identity} random pairs had C = I)",
            perturbed.min(min_loss)
        ),
    )
}

// ------------------------------------------------------------ criterion 4

fn spot_values() -> Outcome {
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for n in 3..=12 {
        let z = Matrix::from_fn(n, 5, |_, c| 0.3 + c as f64);
        let pair: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        worst = worst.max((contrastive_loss(&z, &pair, &cfg).unwrap().value - ((n - 1) as f64).ln()).abs());
    }
    let contrastive = worst;

    let mut r = rng(404);
    let mut cosine: f64 = 0.0;
    for _ in 0..20 {
        let a = uniform(&mut r, 1, 6, 2.0);
        let raw = uniform(&mut r, 1, 6, 2.0);
        let proj = dotv(raw.row(0), a.row(0)) / dotv(a.row(0), a.row(0));
        let orth = Matrix::from_fn(1, 6, |_, c| raw[(0, c)] - proj * a[(0, c)]);
        for (b, want) in [(a.scale(3.0), 0.0), (orth, 2.0), (a.scale(-2.0), 4.0)] {
            cosine = cosine.max((cosine_pair_loss(&a, &b).unwrap().value - want).abs());
        }
    }

    let mut npair: f64 = 0.0;
    for k in 1..=10 {
        let z = Matrix::from_fn(4, 3, |_, c| 0.5 - c as f64);
        let neg = Matrix::from_fn(k, 3, |_, c| 0.5 - c as f64);
        npair = npair.max((npair_loss(&z, &z, &neg, &cfg).unwrap().value - (1.0 + k as f64).ln()).abs());
    }
    outcome(
        contrastive < 1e-9 && cosine < 1e-9 && npair < 1e-9,
        format!(
            "|contrastive − log(N−1)| = {contrastive:.1e}, |cosine − {{0,2,4}}| = {cosine:.1e}, |N-pair − log(1+K)| = {npair:.1e} (all < 1e-9)"
        ),
    )
}

// ------------------------------------------------------------ criterion 5

/// The labelling rule, stated directly.
fn oracle_label(votes: &[usize], conf: &[f64], mode: LabelMode) -> (bool, Vec<(usize, f64)>) {
    let classes: Vec<usize> = {
        let mut c = votes.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let count = |c: usize| votes.iter().filter(|&&v| v == c).count();
    let mass = |c: usize| votes.iter().zip(conf).filter(|(&v, _)| v == c).map(|(_, w)| w).sum::<f64>();
    let top = classes.iter().map(|&c| count(c)).max().unwrap();
    let leaders: Vec<usize> = classes.iter().copied().filter(|&c| count(c) == top).collect();
    if classes.len() == 1 {
        return (true, vec![(classes[0], 1.0)]);
    }
    match mode {
        LabelMode::Fuzzy if leaders.len() == 1 => (true, vec![(leaders[0], 1.0)]),
        LabelMode::Fuzzy => {
            let total: f64 = classes.iter().map(|&c| mass(c)).sum();
            (false, classes.iter().map(|&c| (c, mass(c) / total)).collect())
        }
        LabelMode::HardOnly => {
            let best = leaders
                .iter()
                .copied()
                .reduce(|b, c| if mass(c) > mass(b) { c } else { b })
                .unwrap();
            (true, vec![(best, 1.0)])
        }
        LabelMode::SoftOnly => (
            false,
            classes.iter().map(|&c| (c, count(c) as f64 / votes.len() as f64)).collect(),
        ),
    }
}

fn fuzzy_labels() -> Outcome {
    const K: usize = 4;
    let mut r = rng(505);
    let mut patterns = 0;
    let mut mismatches = 0;
    let mut property_failures = 0;
    for m in 1..=4usize {
        for code in 0..K.pow(m as u32) {
            let votes: Vec<usize> = (0..m).map(|b| code / K.pow(b as u32) % K).collect();
            for equal_conf in [false, true] {
                let conf: Vec<f64> = (0..m).map(|_| if equal_conf { 0.5 } else { r.random_range(0.25..1.0) }).collect();
                for mode in [LabelMode::Fuzzy, LabelMode::HardOnly, LabelMode::SoftOnly] {
                    patterns += 1;
                    let got = fuzzy_vote(&votes, &conf, mode);
                    let (hard, want) = oracle_label(&votes, &conf, mode);
                    let support = got.support();
                    let same = got.is_hard() == hard
                        && support.len() == want.len()
                        && support.iter().zip(&want).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < 1e-12);
                    mismatches += usize::from(!same);

                    let sum: f64 = support.iter().map(|s| s.1).sum();
                    let distinct = {
                        let mut v = votes.clone();
                        v.sort_unstable();
                        v.dedup();
                        v.len()
                    };
                    let majority = (0..K).any(|c| 2 * votes.iter().filter(|&&v| v == c).count() > m);
                    let mut ok = (sum - 1.0).abs() < 1e-9 && support.len() <= m && got.check(m).is_ok();
                    if m == 1 {
                        ok &= got.is_hard();
                    }
                    if mode == LabelMode::Fuzzy && majority {
                        ok &= got.is_hard();
                    }
                    if mode != LabelMode::HardOnly && m >= 2 && distinct == m {
                        ok &= !got.is_hard();
                    }
                    property_failures += usize::from(!ok);
                }
            }
        }
    }
    outcome(
        mismatches == 0 && property_failures == 0,
        format!(
            "{patterns} (pattern, confidence, mode) cases for m ≤ 4, K = {K}: {mismatches} oracle mismatches, {property_failures} property violations"
        ),
    )
}

// ------------------------------------------------------------ criterion 6

fn cli(args: &[&str], out: &Path) -> std::process::Output {
    let o = Command::new(env!("CARGO_BIN_EXE_dualsup"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn dualsup");
    assert!(
        o.status.success(),
        "dualsup {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

const SMALL_RUN: &[&str] = &[
    "run",
    "--seed",
    "11",
    "--phase1-epochs",
    "8",
    "--phase2-epochs",
    "4",
    "--phase2-full-epochs",
    "1",
    "--set",
    "synthetic.n_per_class=60",
    "--set",
    "probe.epochs=10",
];

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    cli(SMALL_RUN, &a);
    cli(SMALL_RUN, &b);
    cli(&[SMALL_RUN, &["--set", "parallel=false"]].concat(), &c);
    let files = [
        "metrics.jsonl",
        "labels.jsonl",
        "summary.json",
        "encoder.ckpt",
        "base.ckpt",
        "block0.ckpt",
        "block1.ckpt",
        "block2.ckpt",
    ];
    let same = |x: &Path, y: &Path| files.iter().all(|f| std::fs::read(x.join(f)).unwrap() == std::fs::read(y.join(f)).unwrap());
    let rerun = same(&a, &b);
    let seq_cli = same(&a, &c);

    let ds = generate_synthetic_with(
        &SyntheticConfig {
            n_super: 3,
            classes_per_super: 2,
            dim: 12,
            n_per_class: 40,
            separation: 8.0,
            class_separation: None,
        },
        5,
    )
    .unwrap();
    let cfg = |parallel| ProtocolConfig {
        m: 4,
        phase1_epochs: 5,
        batch_size: 64,
        parallel,
        seed: 9,
        ..ProtocolConfig::default()
    };
    let (ep, mp) = phase1_train(&ds, &cfg(true)).unwrap();
    let (es, ms) = phase1_train(&ds, &cfg(false)).unwrap();
    let fp = |e: &dualsup::protocol::EnsembleState| e.params().iter().map(|p| p.fingerprint()).collect::<Vec<_>>();
    let seq_lib = mp == ms && fp(&ep) == fp(&es);
    outcome(
        rerun && seq_cli && seq_lib,
        format!(
            "rerun identical: {rerun} ({} files); CLI parallel = sequential: {seq_cli}; phase 1 (m = 4) parallel = sequential: {seq_lib}",
            files.len()
        ),
    )
}

// ------------------------------------------------------------ criterion 7

/// Desk-scale settings shared by criteria 7 and 8: 10 classes in 5
/// superclasses, dim 32, separation 8, 200 samples per class, m = 3,
/// Barlow Twins, 1500/500 split.
const DESK: &[&str] = &[
    "--m",
    "3",
    "--loss",
    "barlow-twins",
    "--phase1-epochs",
    "60",
    "--phase2-epochs",
    "30",
    "--phase2-full-epochs",
    "7",
    "--set",
    "arch.proj_out=10",
    "--set",
    "synthetic.n_super=5",
    "--set",
    "synthetic.classes_per_super=2",
    "--set",
    "synthetic.dim=32",
    "--set",
    "synthetic.separation=8",
    "--set",
    "synthetic.n_per_class=200",
    "--set",
    "test_fraction=0.25",
];

fn desk_scale() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (mut base, mut purity, mut delta) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let out = dir.path().join(format!("seed{seed}"));
        let s = seed.to_string();
        cli(&[&["run", "--seed", &s], DESK].concat(), &out);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        let get = |k: &str| summary[k].as_f64().unwrap();
        base.push(get("base_linear_top1"));
        purity.push(get("hard_label_purity"));
        delta.push(get("linear_top1") - get("base_linear_top1"));
    }
    let (b, p, d) = (median(base.clone()), median(purity.clone()), median(delta.clone()));
    outcome(
        b >= 0.80 && p >= 0.20 && d >= -0.02,
        format!(
            "5-seed medians: phase-1 probe top-1 {b:.3} (≥ 0.80) [{}], hard-label purity {p:.3} (≥ 0.20) [{}], phase-2 delta {d:+.3} (≥ −0.02) [{}]",
            fmt_list(&base),
            fmt_list(&purity),
            delta.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(",")
        ),
    )
}

// ------------------------------------------------------------ criterion 8

type Snapshot = Vec<Vec<u64>>;

fn frozen_snapshot(p: &EncoderParams, boundary: usize) -> Snapshot {
    p.backbone[..boundary]
        .iter()
        .map(|l| {
            let mut bits: Vec<u64> = l.weight.data().iter().chain(l.bias.data()).map(|v| v.to_bits()).collect();
            if let Some(bn) = &l.bn {
                bits.extend(
                    bn.gamma
                        .data()
                        .iter()
                        .chain(bn.beta.data())
                        .chain(&bn.running_mean)
                        .chain(&bn.running_var)
                        .map(|v| v.to_bits()),
                );
            }
            bits
        })
        .collect()
}

fn freezing() -> Outcome {
    let ds = generate_synthetic_with(
        &SyntheticConfig {
            n_super: 5,
            classes_per_super: 2,
            dim: 32,
            n_per_class: 200,
            separation: 8.0,
            class_separation: None,
        },
        0,
    )
    .unwrap();
    let (train, _) = ds.split(0.25, 0).unwrap();
    let cfg = ProtocolConfig {
        phase1_epochs: 20,
        phase2_epochs: 12,
        phase2_full_epochs: 3,
        freeze_boundary: 2,
        arch: ArchConfig {
            proj_out: 10,
            ..ArchConfig::default()
        },
        seed: 0,
        ..ProtocolConfig::default()
    };
    let (ens, _) = phase1_train(&train, &cfg).unwrap();
    let labels = pseudo_label(&ens, &train, cfg.label_mode).unwrap();
    let sel = select_block(&ens, &labels, &train).unwrap();
    let base = ens.blocks[sel].params.without_predictor();

    let plan = Phase2Plan::from_config(&cfg, sel);
    let mut snapshot: Option<Snapshot> = None;
    let (mut frozen_events, mut checked, mut violations, mut early_moves) = (0, 0, 0, 0);
    let mut last_free: Option<Snapshot> = None;
    let initial = frozen_snapshot(&base, cfg.freeze_boundary);
    let (encoder, _) = phase2_train_observed(&base, &labels, &train, &plan, |ev| match ev {
        Phase2Event::Frozen { epoch, params } => {
            frozen_events += 1;
            assert_eq!(epoch, cfg.phase2_full_epochs);
            assert_eq!(params.frozen_layers(), cfg.freeze_boundary);
            snapshot = Some(frozen_snapshot(params, cfg.freeze_boundary));
        }
        Phase2Event::Step { epoch, params, .. } => {
            let now = frozen_snapshot(params, cfg.freeze_boundary);
            if epoch >= cfg.phase2_full_epochs {
                checked += 1;
                violations += usize::from(snapshot.as_ref() != Some(&now));
            } else if now != initial {
                early_moves += 1;
            }
            last_free = Some(
                params.backbone[cfg.freeze_boundary..]
                    .iter()
                    .map(|l| l.weight.data().iter().map(|v| v.to_bits()).collect())
                    .collect(),
            );
        }
    })
    .unwrap();
    let trailing_trained = last_free
        != Some(
            base.backbone[cfg.freeze_boundary..]
                .iter()
                .map(|l| l.weight.data().iter().map(|v| v.to_bits()).collect())
                .collect(),
        );
    let bit_exact = frozen_events == 1 && checked > 0 && violations == 0 && early_moves > 0 && trailing_trained;
    assert_eq!(encoder.frozen_layers(), cfg.freeze_boundary);

    // No-freeze ablation at the desk-scale settings, reported only.
    let dir = tempfile::tempdir().unwrap();
    cli(&[&["ablate", "--axis", "freeze", "--seed", "0"], DESK].concat(), dir.path());
    let tsv = std::fs::read_to_string(dir.path().join("summary.tsv")).unwrap();
    let deltas: Vec<String> = tsv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            format!("boundary {} → delta {:+.4}", f[1], f[4].parse::<f64>().unwrap())
        })
        .collect();
    outcome(
        bit_exact,
        format!(
            "{checked} frozen-stretch steps, {violations} changed a frozen parameter (layers trained before freezing: {}); ablation: {}",
            early_moves > 0,
            deltas.join(", ")
        ),
    )
}

// ------------------------------------------------------------ criterion 9

fn cross_class() -> Outcome {
    let (mut cons, mut chances, mut pairs) = (Vec::new(), Vec::new(), Vec::new());
    let mut analytic = 0.0;
    for seed in SEEDS {
        let ds = generate_synthetic_with(
            &SyntheticConfig {
                n_super: 5,
                classes_per_super: 4,
                dim: 32,
                n_per_class: 100,
                separation: 10.0,
                class_separation: Some(2.0),
            },
            seed,
        )
        .unwrap();
        let (a, b) = split_classes_by_superclass(&ds);
        let cfg = ProtocolConfig {
            m: 3,
            label_mode: LabelMode::SoftOnly,
            phase1_epochs: 30,
            phase2_epochs: 10,
            phase2_full_epochs: 2,
            arch: ArchConfig {
                proj_out: 10,
                ..ArchConfig::default()
            },
            seed,
            ..ProtocolConfig::default()
        };
        let probe = ProbeConfig {
            epochs: 50,
            seed,
            ..ProbeConfig::default()
        };
        let rep = cross_class_eval(&ds, &a, &b, &cfg, &probe, 0.25).unwrap();
        analytic = chance_consistency(2, a.len());
        assert!((chance_consistency_of(&a, &ds.class_to_super()) - analytic).abs() < 1e-15);
        assert!((rep.chance - analytic).abs() < 1e-15);
        cons.push(rep.consistency);
        chances.push(rep.chance);
        pairs.push(rep.consistency_pairs as f64);
    }
    let c = median(cons.clone());
    outcome(
        c > analytic,
        format!(
            "soft-only consistency 5-seed median {c:.3} vs chance (cps−1)/(T−1) = {analytic:.3} [{}], label pairs per seed [{}]",
            fmt_list(&cons),
            pairs.iter().map(|p| format!("{p:.0}")).collect::<Vec<_>>().join(",")
        ),
    )
}

// ----------------------------------------------------------- criterion 10

fn oracle_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = dotv(a, a).sqrt();
    let nb = dotv(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dotv(a, b) / (na * nb)
    }
}

/// Exhaustive distance table, then `k` rounds of picking the smallest
/// remaining entry (lowest index first).
fn oracle_knn(train: &Matrix, labels: &[usize], n_class: usize, q: &[f64], k: usize) -> usize {
    let dist: Vec<f64> = (0..train.rows()).map(|i| oracle_distance(q, train.row(i))).collect();
    let mut taken = vec![false; dist.len()];
    let mut votes = vec![0usize; n_class];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..dist.len() {
            if !taken[i] && best.is_none_or(|b| dist[i] < dist[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        votes[labels[b]] += 1;
    }
    (0..n_class).fold(0, |best, c| if votes[c] > votes[best] { c } else { best })
}

fn knn() -> Outcome {
    let mut r = rng(1010);
    let (mut queries, mut mismatches) = (0, 0);
    for inst in 0..20 {
        let d = r.random_range(1..=8);
        let n_class = r.random_range(1..=5);
        // Coarse integer grid: plenty of exact distance ties and a few zero rows.
        let mut train = Matrix::from_fn(100, d, |_, _| r.random_range(-2i32..=2) as f64);
        for i in 0..10 {
            let src = r.random_range(0..100);
            let row = train.row(src).to_vec();
            train.row_mut((i * 7 + inst) % 100).copy_from_slice(&row);
        }
        let labels: Vec<usize> = (0..100).map(|_| r.random_range(0..n_class)).collect();
        let query = Matrix::from_fn(30, d, |_, _| r.random_range(-2i32..=2) as f64);
        for k in [1, 2, 5, 10, 25, 100] {
            let got = knn_classify(&train, &labels, n_class, &query, k).unwrap();
            for (qi, &g) in got.iter().enumerate() {
                queries += 1;
                mismatches += usize::from(g != oracle_knn(&train, &labels, n_class, query.row(qi), k));
            }
        }
    }

    // The probe wrapper on backbone features of a 100-sample dataset.
    let ds = generate_synthetic_with(
        &SyntheticConfig {
            n_super: 2,
            classes_per_super: 2,
            dim: 6,
            n_per_class: 25,
            separation: 3.0,
            class_separation: None,
        },
        3,
    )
    .unwrap();
    let (train, test) = ds.split(0.3, 1).unwrap();
    let enc = init_encoder(&EncoderSpec::mlp(6, &[16, 16], 16, 4, None), 2).unwrap();
    let (ft, fq) = (backbone_features(&enc, &train).unwrap(), backbone_features(&enc, &test).unwrap());
    let mut probe_ok = true;
    for k in [1, 3, 7] {
        let hits = (0..test.len())
            .filter(|&i| oracle_knn(&ft, train.class_labels(), ds.n_class(), fq.row(i), k) == test.class_labels()[i])
            .count();
        probe_ok &= knn_probe(&enc, &train, &test, k).unwrap().top1 == hits as f64 / test.len() as f64;
    }
    outcome(
        mismatches == 0 && probe_ok,
        format!("{queries} queries on 100-sample instances: {mismatches} mismatches; probe top-1 equals oracle: {probe_ok}"),
    )
}
