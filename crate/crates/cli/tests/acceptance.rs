//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p parrot-cli --test acceptance`.

use parrot_core::data::{pair, synth_generate, SynthConfig};
use parrot_core::fusion::{ArchConfig, FusionKind, FusionModel, PlanSource};
use parrot_core::nn::{softmax_xent, Conv1d, ParamSet, Tensor2};
use parrot_core::ot::{sinkhorn, CostMatrix, SinkhornConfig};
use parrot_core::rng::stream;
use parrot_core::train::{cross_validate, metrics, TrainConfig};
use rand::Rng;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn random(rows: usize, cols: usize, seed: u64) -> Tensor2 {
    let mut rng = stream(seed, 4242, 0);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("{what} took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(5)
}

// 1. Sinkhorn marginals on random costs; exact uniform plan for zero cost.
fn sinkhorn_marginals() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(11, 1, 0);
    let epsilons = [0.05, 0.1, 1.0];
    let (mut converged, mut worst, mut zero_cases) = (0, 0.0f64, 0);
    for case in 0..200 {
        let n = rng.random_range(1..=16);
        let m = rng.random_range(1..=16);
        let eps = epsilons[case % 3];
        let zero = case % 20 == 0;
        let values: Vec<f64> = (0..n * m)
            .map(|_| if zero { 0.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        let cost = CostMatrix::from_tensor(Tensor2::from_vec(n, m, values).unwrap()).map_err(|e| e.to_string())?;
        let config = SinkhornConfig { epsilon: eps, max_iters: 2000, tol: 1e-6 };
        let plan = sinkhorn(&cost, &config).map_err(|e| e.to_string())?;
        if zero {
            zero_cases += 1;
            let u = 1.0 / (n * m) as f64;
            if plan.gamma.as_slice().iter().any(|&g| g != u) {
                return Err(format!("zero cost {n}x{m}: plan is not exactly uniform"));
            }
        }
        if !plan.converged {
            continue;
        }
        converged += 1;
        let g = &plan.gamma;
        let mut violation = 0.0f64;
        for i in 0..n {
            let s: f64 = (0..m).map(|j| g.get(i, j)).sum();
            violation = violation.max((s - 1.0 / n as f64).abs());
        }
        for j in 0..m {
            let s: f64 = (0..n).map(|i| g.get(i, j)).sum();
            violation = violation.max((s - 1.0 / m as f64).abs());
        }
        if violation >= 1e-6 {
            return Err(format!("case {case} ({n}x{m}, eps {eps}): violation {violation:.2e}"));
        }
        worst = worst.max(violation);
    }
    within(start.elapsed(), 10.0, "suite")?;
    Ok(format!(
        "{converged}/200 converged, worst violation {worst:.2e}, {zero_cases} zero-cost plans exact, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

// 2. Backprop vs central differences on the full-width model, plan held fixed.
fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    // The network is piecewise linear (ReLU, max-pool); 1e-5 steps occasionally
    // straddle a kink, 1e-6 keeps round-off near 1e-10 and avoids that.
    let (batch, h) = (4, 1e-6);
    let arch = ArchConfig::new(32, 32, 3, FusionKind::Parrot);
    let xp = random(batch, 32, 1);
    let xq = random(batch, 32, 2);
    let labels = [0, 1, 2, 0];
    let mut model = FusionModel::new(arch, 3).map_err(|e| e.to_string())?;
    let mut rng = stream(0, 0, 0);
    let fwd = model.forward(&xp, &xq, false, &mut rng).map_err(|e| e.to_string())?;
    let plan = fwd.plan.clone().ok_or("parrot forward produced no plan")?;
    let xent = softmax_xent(&fwd.logits, &labels).map_err(|e| e.to_string())?;
    model.backward(&xent.logits_grad(&labels)).map_err(|e| e.to_string())?;
    let analytic = model.params().clone();

    let loss = |model: &mut FusionModel| {
        let mut rng = stream(0, 0, 0);
        let out = model
            .forward_with_plan(&xp, &xq, false, &mut rng, PlanSource::Fixed(&plan))
            .unwrap();
        softmax_xent(&out.logits, &labels).unwrap().loss
    };

    let mut pick = stream(9, 2, 0);
    let ids: Vec<_> = model.params().ids().collect();
    let (mut samples, mut worst) = (0, (0.0f64, String::new()));
    for id in ids {
        let len = model.params().value(id).len();
        for index in rand::seq::index::sample(&mut pick, len, 16.min(len)) {
            let original = model.params().value(id).as_slice()[index];
            model.params_mut().value_mut(id).as_mut_slice()[index] = original + h;
            let up = loss(&mut model);
            model.params_mut().value_mut(id).as_mut_slice()[index] = original - h;
            let down = loss(&mut model);
            model.params_mut().value_mut(id).as_mut_slice()[index] = original;
            let numeric = (up - down) / (2.0 * h);
            let exact = analytic.grad(id).as_slice()[index];
            let scale = exact.abs().max(numeric.abs());
            let rel = if scale == 0.0 { 0.0 } else { (exact - numeric).abs() / scale };
            samples += 1;
            if rel > worst.0 {
                worst = (rel, format!("{}[{index}]", analytic.get(id).name));
            }
        }
    }
    if samples < 200 {
        return Err(format!("only {samples} samples"));
    }
    if worst.0 >= 1e-4 {
        return Err(format!("{}: relative error {:.2e}", worst.1, worst.0));
    }
    within(start.elapsed(), 60.0, "gradient check")?;
    Ok(format!(
        "{samples} samples, worst {:.1e} at {}, {:.2}s",
        worst.0,
        worst.1,
        start.elapsed().as_secs_f64()
    ))
}

// 3. Convolution and metrics against brute-force references.
fn conv_and_metric_oracles() -> Outcome {
    let mut rng = stream(21, 3, 0);
    let mut conv_worst = 0.0f64;
    for _ in 0..100 {
        let cin = rng.random_range(1..=5);
        let cout = rng.random_range(1..=6);
        let k = rng.random_range(1..=5);
        let len = rng.random_range(k..=k + 20);
        let mut params = ParamSet::new();
        let conv = Conv1d::new(&mut params, "c", cin, cout, k, &mut rng);
        for b in params.value_mut(conv.bias).as_mut_slice() {
            *b = rng.random_range(-1.0..1.0);
        }
        let x = random(cin, len, rng.random());
        let got = conv.apply(&params, &x).map_err(|e| e.to_string())?;
        let out_len = len - k + 1;
        if got.shape() != (cout, out_len) {
            return Err(format!("conv shape {:?}, expected ({cout}, {out_len})", got.shape()));
        }
        let bias = params.value(conv.bias).as_slice();
        for o in 0..cout {
            for t in 0..out_len {
                let mut direct = bias[o];
                for c in 0..cin {
                    for tap in 0..k {
                        direct += conv.kernel(&params, o, c, tap) * x.get(c, t + tap);
                    }
                }
                conv_worst = conv_worst.max((direct - got.get(o, t)).abs());
            }
        }
    }
    if conv_worst > 1e-12 {
        return Err(format!("conv differs from direct sum by {conv_worst:.2e}"));
    }

    let oracle = |truth: &[usize], pred: &[usize], classes: usize| {
        let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
        let (mut total, mut counted) = (0.0, 0);
        for c in 0..classes {
            let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count();
            let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count();
            let fneg = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count();
            if tp + fp + fneg == 0 {
                continue;
            }
            counted += 1;
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
            if precision + recall > 0.0 {
                total += 2.0 * precision * recall / (precision + recall);
            }
        }
        (hits as f64 / truth.len() as f64, total / counted as f64)
    };
    let mut metric_worst = 0.0f64;
    for _ in 0..1000 {
        let classes = rng.random_range(2..=7);
        let n = rng.random_range(1..=60);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let m = metrics(&truth, &pred, classes).map_err(|e| e.to_string())?;
        let (acc, f1) = oracle(&truth, &pred, classes);
        metric_worst = metric_worst.max((m.accuracy - acc).abs()).max((m.macro_f1 - f1).abs());
    }
    if metric_worst > 1e-12 {
        return Err(format!("metrics differ from brute force by {metric_worst:.2e}"));
    }
    let hand = metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).map_err(|e| e.to_string())?;
    if hand.accuracy != 0.75 || (hand.macro_f1 - 0.7333).abs() >= 1e-4 {
        return Err(format!("hand case gave {} / {}", hand.accuracy, hand.macro_f1));
    }
    Ok(format!(
        "conv max diff {conv_worst:.1e} over 100 shapes, metrics max diff {metric_worst:.1e} over 1000 vectors, hand case {:.2}/{:.4}",
        hand.accuracy, hand.macro_f1
    ))
}

fn synth_cv(classes: usize, gap: f64, seed: u64, kind: FusionKind) -> Result<f64, String> {
    let (p, q) = synth_generate(&SynthConfig::new(classes, 100, (64, 96), gap, seed)).map_err(|e| e.to_string())?;
    let dataset = pair(&p, &q).map_err(|e| e.to_string())?;
    let arch = ArchConfig::new(64, 96, classes, kind);
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let report = cross_validate(&dataset, arch, &config, 5, jobs()).map_err(|e| e.to_string())?;
    Ok(report.mean_accuracy)
}

// 4. Fusion benefit on complementary synthetic streams.
fn fusion_benefit() -> Outcome {
    let start = Instant::now();
    let mut acc = Vec::new();
    for kind in FusionKind::ALL {
        acc.push((kind, synth_cv(6, 10.0, 1, kind)?));
    }
    let get = |k: FusionKind| acc.iter().find(|(kind, _)| *kind == k).unwrap().1;
    let (parrot, concat) = (get(FusionKind::Parrot), get(FusionKind::Concat));
    let single = get(FusionKind::SingleP).max(get(FusionKind::SingleQ));
    let line = acc
        .iter()
        .map(|(k, a)| format!("{k} {:.4}", a))
        .collect::<Vec<_>>()
        .join(", ");
    if parrot < concat + 0.02 {
        return Err(format!("parrot margin over concat below 0.02: {line}"));
    }
    if parrot <= single || concat <= single {
        return Err(format!("a fused model does not beat both single streams: {line}"));
    }
    within(start.elapsed(), 600.0, "experiment")?;
    Ok(format!("{line}, {:.0}s", start.elapsed().as_secs_f64()))
}

// 5. No signal, no accuracy.
fn chance_level() -> Outcome {
    let acc = synth_cv(4, 0.0, 1, FusionKind::Parrot)?;
    if (acc - 0.25).abs() > 0.05 {
        return Err(format!("mean accuracy {acc:.4} outside 0.25 +/- 0.05"));
    }
    Ok(format!("mean accuracy {acc:.4}"))
}

// Dimension pairings of the fused PTM combinations (Mamba x attention, attention x attention).
const PAIRINGS: [(usize, usize); 8] = [
    (960, 768),
    (960, 1280),
    (1920, 768),
    (1920, 1280),
    (3840, 768),
    (3840, 1280),
    (768, 768),
    (768, 1280),
];

// 6. Parameter counts for the real embedding widths.
fn parameter_ledger() -> Outcome {
    let mut parts = Vec::new();
    for (dp, dq) in PAIRINGS {
        for classes in [6, 7] {
            let count = ArchConfig::new(dp, dq, classes, FusionKind::Parrot)
                .param_count()
                .map_err(|e| e.to_string())?;
            let band = if (dp, dq) == (768, 768) { (3.0e6, 8.0e6) } else { (1.6e6, 26.0e6) };
            if !(band.0..=band.1).contains(&(count as f64)) {
                return Err(format!("({dp}, {dq}) K={classes}: {count} outside [{}, {}]", band.0, band.1));
            }
            if classes == 6 {
                parts.push(format!("{dp}+{dq} {:.2}M", count as f64 / 1e6));
            }
        }
    }
    Ok(parts.join(", "))
}

// 7. Two identical `parrot cv` invocations, byte-identical reports.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_parrot");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).env_remove("PARROT_SEED").output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("parrot {}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
        }
    };
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = dir.path().join("data");
    run(&["synth", "--classes", "3", "--per-class", "30", "--dims", "32,40", "--gap", "6", "--seed", "3", "--out", &s(&data)])?;
    let (a, b) = (s(&data.join("synth-a.pfv")), s(&data.join("synth-b.pfv")));
    let mut reports = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        run(&["cv", "--ptm-a", &a, "--ptm-b", &b, "--epochs", "8", "--seed", "3", "--jobs", "2", "--out", &s(&out)])?;
        reports.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
    }
    if reports[0] != reports[1] {
        return Err("report.json differs between runs".into());
    }
    Ok(format!("report.json identical ({} bytes)", reports[0].len()))
}

// 8. Fused widths asserted on real forward passes.
fn dimension_contract() -> Outcome {
    let mut checked = 0;
    let mut rng = stream(0, 0, 0);
    for (dp, dq) in PAIRINGS.into_iter().chain([(64, 96), (32, 32)]) {
        for (kind, ot, hp, fused) in [(FusionKind::Parrot, 480, 120, 600), (FusionKind::Concat, 0, 0, 240)] {
            let arch = ArchConfig::new(dp, dq, 6, kind);
            let mut model = FusionModel::new(arch, 1).map_err(|e| e.to_string())?;
            let fwd = model
                .forward(&random(3, dp, 5), &random(3, dq, 6), false, &mut rng)
                .map_err(|e| e.to_string())?;
            let seen = fwd.observed;
            if (seen.ot_width, seen.hp_width, seen.fused_width) != (ot, hp, fused) || arch.ledger() != seen {
                return Err(format!("{kind} ({dp}, {dq}): observed {seen:?}"));
            }
            checked += 1;
        }
    }
    Ok(format!("parrot 480 + 120 = 600 and concat 240 on {checked} configurations"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("sinkhorn marginals", sinkhorn_marginals),
        ("gradient oracle", gradient_oracle),
        ("conv and metric oracles", conv_and_metric_oracles),
        ("fusion benefit", fusion_benefit),
        ("chance level", chance_level),
        ("parameter ledger", parameter_ledger),
        ("determinism", determinism),
        ("dimension contract", dimension_contract),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[PASS] {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {} {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
