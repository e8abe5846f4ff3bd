#![allow(dead_code)]

use parrot_core::fusion::{ArchConfig, FusionModel, PlanSource};
use parrot_core::nn::{softmax_xent, Tensor2};
use parrot_core::rng::stream;
use rand::Rng;

pub fn random(rows: usize, cols: usize, seed: u64) -> Tensor2 {
    let mut rng = stream(seed, 1234, 0);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Backprop gradients vs central differences (step `h`) with the transport
/// plan held at the value solved for the unperturbed batch.
pub fn gradient_check(
    arch: ArchConfig,
    seed: u64,
    batch: usize,
    samples_per_tensor: usize,
    h: f64,
) -> Vec<GradSample> {
    let xp = random(batch, arch.dim_p, seed ^ 1);
    let xq = random(batch, arch.dim_q, seed ^ 2);
    let labels: Vec<usize> = (0..batch).map(|i| i % arch.classes).collect();
    let mut model = FusionModel::new(arch, seed).unwrap();
    let mut no_rng = stream(0, 0, 0);

    let fwd = model.forward(&xp, &xq, false, &mut no_rng).unwrap();
    let plan = fwd.plan.clone();
    let xent = softmax_xent(&fwd.logits, &labels).unwrap();
    model.backward(&xent.logits_grad(&labels)).unwrap();
    let analytic = model.params().clone();

    let loss_at = |model: &mut FusionModel| {
        let mut rng = stream(0, 0, 0);
        let source = match &plan {
            Some(p) => PlanSource::Fixed(p),
            None => PlanSource::Solve,
        };
        let out = model
            .forward_with_plan(&xp, &xq, false, &mut rng, source)
            .unwrap();
        softmax_xent(&out.logits, &labels).unwrap().loss
    };

    let mut pick = stream(seed, 777, 0);
    let mut out = Vec::new();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let len = model.params().value(id).len();
        let mut indices: Vec<usize> = (0..samples_per_tensor.min(len))
            .map(|_| pick.random_range(0..len))
            .collect();
        indices.sort_unstable();
        indices.dedup();
        for index in indices {
            let original = model.params().value(id).as_slice()[index];
            model.params_mut().value_mut(id).as_mut_slice()[index] = original + h;
            let up = loss_at(&mut model);
            model.params_mut().value_mut(id).as_mut_slice()[index] = original - h;
            let down = loss_at(&mut model);
            model.params_mut().value_mut(id).as_mut_slice()[index] = original;
            out.push(GradSample {
                param: analytic.get(id).name.clone(),
                index,
                analytic: analytic.grad(id).as_slice()[index],
                numeric: (up - down) / (2.0 * h),
            });
        }
    }
    out
}
