//! wasm-bindgen entry points for `www/index.html`.
//!
//! Each export returns a JSON string; the plain functions underneath are what
//! the native tests exercise.

use parrot_core::data::{pair, stratified_kfold, synth_generate, SynthConfig};
use parrot_core::fusion::{ArchConfig, FusionKind};
use parrot_core::nn::Tensor2;
use parrot_core::ot::{cost_matrix, sinkhorn, SinkhornConfig};
use parrot_core::rng::stream;
use parrot_core::train::{train_one_fold, TrainConfig};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct PlanView {
    pub rows: usize,
    pub cols: usize,
    /// Row-major plan entries.
    pub gamma: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_error: f64,
}

#[derive(Debug, Serialize)]
pub struct CloudView {
    pub source: Vec<[f64; 2]>,
    pub target: Vec<[f64; 2]>,
    /// Barycentric image of each source point under the plan.
    pub mapped: Vec<[f64; 2]>,
    pub plan: PlanView,
}

#[derive(Debug, Serialize)]
pub struct RaceEntry {
    pub fusion: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub epochs: usize,
    pub params: usize,
}

fn cloud(n: usize, center: [f64; 2], spread: f64, seed: u64, index: u64) -> Tensor2 {
    let mut rng = stream(seed, 100, index);
    let mut t = Tensor2::zeros(n, 2);
    for i in 0..n {
        // two lobes so the plan has structure worth looking at
        let lobe = if i % 2 == 0 { 1.0 } else { -1.0 };
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        t.set(i, 0, center[0] + spread * x + lobe);
        t.set(i, 1, center[1] + spread * y + 0.5 * lobe * rng.random_range(0.5..1.0));
    }
    t
}

fn plan_view(rp: &Tensor2, rq: &Tensor2, epsilon: f64, max_iters: usize) -> Result<PlanView, String> {
    let cost = cost_matrix(rp, rq).map_err(|e| e.to_string())?;
    let plan = sinkhorn(
        &cost,
        &SinkhornConfig {
            epsilon,
            max_iters,
            ..SinkhornConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(PlanView {
        rows: plan.gamma.rows(),
        cols: plan.gamma.cols(),
        gamma: plan.gamma.as_slice().to_vec(),
        iterations: plan.iterations_used,
        converged: plan.converged,
        marginal_error: plan.marginal_violation().max(),
    })
}

/// Plan between two seeded 2-D clouds of `n` and `m` points.
pub fn plan_for_clouds(n: usize, m: usize, epsilon: f64, max_iters: usize, seed: u64) -> Result<PlanView, String> {
    Ok(clouds(n, m, 1.5, epsilon, max_iters, seed)?.plan)
}

/// Two clouds `shift` apart, the plan between them and where it sends each source point.
pub fn clouds(n: usize, m: usize, shift: f64, epsilon: f64, max_iters: usize, seed: u64) -> Result<CloudView, String> {
    if n == 0 || m == 0 || n > 256 || m > 256 {
        return Err("cloud sizes must be in 1..=256".into());
    }
    let source = cloud(n, [-shift / 2.0, 0.0], 0.35, seed, 0);
    let target = cloud(m, [shift / 2.0, 0.0], 0.35, seed, 1);
    let plan = plan_view(&source, &target, epsilon, max_iters)?;
    let gamma = Tensor2::from_vec(n, m, plan.gamma.clone()).map_err(|e| e.to_string())?;
    let moved = gamma.matmul(&target).map_err(|e| e.to_string())?;
    let row_mass = gamma.row_sums();
    let mapped = (0..n)
        .map(|i| {
            let w = row_mass[i].max(f64::MIN_POSITIVE);
            [moved.get(i, 0) / w, moved.get(i, 1) / w]
        })
        .collect();
    let points = |t: &Tensor2| (0..t.rows()).map(|i| [t.get(i, 0), t.get(i, 1)]).collect();
    Ok(CloudView {
        source: points(&source),
        target: points(&target),
        mapped,
        plan,
    })
}

/// Trains each fusion kind on one held-out fold of small complementary data.
pub fn race(gap: f64, per_class: usize, epochs: usize, seed: u64) -> Result<Vec<RaceEntry>, String> {
    let (dim_p, dim_q, classes) = (32, 48, 4);
    if !(5..=200).contains(&per_class) {
        return Err("per-class count must be in 5..=200".into());
    }
    let (p, q) = synth_generate(&SynthConfig::new(classes, per_class, (dim_p, dim_q), gap, seed)).map_err(|e| e.to_string())?;
    let dataset = pair(&p, &q).map_err(|e| e.to_string())?;
    let plan = stratified_kfold(&dataset, 5, seed).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: epochs.clamp(1, 200),
        seed,
        ..TrainConfig::default()
    };
    FusionKind::ALL
        .into_iter()
        .map(|kind| {
            let mut arch = ArchConfig::new(dim_p, dim_q, classes, kind);
            arch.conv1_filters = 16;
            arch.conv2_filters = 16;
            arch.latent_dim = 32;
            arch.hidden_dim = 32;
            let (_, report) = train_one_fold(&dataset, arch, &plan, 0, &config).map_err(|e| e.to_string())?;
            Ok(RaceEntry {
                fusion: kind.name().to_string(),
                accuracy: report.accuracy,
                macro_f1: report.macro_f1,
                epochs: report.epochs_ran,
                params: arch.param_count().map_err(|e| e.to_string())?,
            })
        })
        .collect()
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<String, JsValue> {
    value
        .map(|v| serde_json::to_string(&v).expect("plain data"))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = sinkhornPlan)]
pub fn sinkhorn_plan_js(n: usize, m: usize, epsilon: f64, max_iters: usize, seed: u32) -> Result<String, JsValue> {
    to_js(plan_for_clouds(n, m, epsilon, max_iters, u64::from(seed)))
}

#[wasm_bindgen(js_name = transportClouds)]
pub fn transport_clouds_js(n: usize, m: usize, shift: f64, epsilon: f64, seed: u32) -> Result<String, JsValue> {
    to_js(clouds(n, m, shift, epsilon, 200, u64::from(seed)))
}

#[wasm_bindgen(js_name = fusionRace)]
pub fn fusion_race_js(gap: f64, per_class: usize, epochs: usize, seed: u32) -> Result<String, JsValue> {
    to_js(race(gap, per_class, epochs, u64::from(seed)))
}
