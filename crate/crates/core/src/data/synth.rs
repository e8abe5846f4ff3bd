//! Seeded complementary embeddings.
//!
//! Class `c` factors into a group `c / 2` and a parity `c % 2`:
//!
//! * table p: group means on its even coordinate blocks; a shared latent `z`
//!   (random sign per coordinate) on its odd blocks.
//! * table q: weak parity means on its odd coordinate blocks; `±z` on its even
//!   blocks, the sign given by parity.
//!
//! So p alone knows the group, q alone knows parity only weakly, and the full
//! label needs both streams, with the strongest parity cue living in products
//! of p and q coordinates. Every signal scales with `sigma_gap`; at zero the
//! features are pure unit Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DataError, DataResult, FeatureTable};
use crate::nn::Tensor2;
use crate::rng::{stream, tag, SeededRng};

/// Parity mean separation in q, as a fraction of `sigma_gap`.
const PARITY_WEIGHT: f64 = 0.35;
/// Latent coupling amplitude per latent dimension, as a fraction of `sigma_gap`.
const COUPLING_WEIGHT: f64 = 0.5;
const LATENT_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim_p: usize,
    pub dim_q: usize,
    pub sigma_gap: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(classes: usize, per_class: usize, dims: (usize, usize), sigma_gap: f64, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            dim_p: dims.0,
            dim_q: dims.1,
            sigma_gap,
            seed,
        }
    }
}

/// Coordinates of even- and odd-indexed blocks.
fn split_blocks(dim: usize) -> (Vec<usize>, Vec<usize>) {
    let block = (dim / 4).clamp(1, 8);
    (0..dim).partition(|j| (j / block).is_multiple_of(2))
}

fn signs(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

pub fn synth_generate(config: &SynthConfig) -> DataResult<(FeatureTable, FeatureTable)> {
    let SynthConfig {
        classes,
        per_class,
        dim_p,
        dim_q,
        sigma_gap,
        seed,
    } = *config;
    if classes < 2 {
        return Err(DataError::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if per_class == 0 || dim_p == 0 || dim_q == 0 {
        return Err(DataError::InvalidArgument("per-class count and dims must be positive".into()));
    }
    if !sigma_gap.is_finite() || sigma_gap < 0.0 {
        return Err(DataError::InvalidArgument(format!("bad sigma_gap {sigma_gap}")));
    }

    let (p_even, p_odd) = split_blocks(dim_p);
    let (q_even, q_odd) = split_blocks(dim_q);
    let groups = classes.div_ceil(2);

    // Fixed structure: patterns are drawn from their own stream so sample
    // noise never shifts them.
    let mut pat = stream(seed, tag::SYNTH, 0);
    // Random sign patterns have expected pairwise distance sqrt(2n) per unit amplitude.
    let group_amp = sigma_gap / (2.0 * p_even.len() as f64).sqrt();
    let group_means: Vec<Vec<f64>> = (0..groups).map(|_| signs(&mut pat, p_even.len())).collect();
    let parity_amp = PARITY_WEIGHT * sigma_gap / (2.0 * (q_odd.len().max(1) as f64).sqrt());
    let parity_pattern = signs(&mut pat, q_odd.len());
    let latent = LATENT_DIM.min(p_odd.len()).min(q_even.len());
    let p_slot: Vec<usize> = (0..p_odd.len()).map(|j| j % latent.max(1)).collect();
    let q_slot: Vec<usize> = (0..q_even.len()).map(|j| j % latent.max(1)).collect();
    let p_sign = signs(&mut pat, p_odd.len());
    let q_sign = signs(&mut pat, q_even.len());
    // Each latent dimension is spread over its coordinates so the total
    // projected amplitude stays COUPLING_WEIGHT * sigma_gap.
    let spread = |count: usize| (count.max(1) as f64).sqrt();
    let p_copies = p_odd.len().div_ceil(latent.max(1));
    let q_copies = q_even.len().div_ceil(latent.max(1));
    let coupling = COUPLING_WEIGHT * sigma_gap;

    let n = classes * per_class;
    let mut noise = stream(seed, tag::SYNTH, 1);
    let mut xp = Tensor2::zeros(n, dim_p);
    let mut xq = Tensor2::zeros(n, dim_q);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut z = vec![0.0; latent];
    for i in 0..n {
        let c = i % classes;
        let (g, parity) = (c / 2, if c % 2 == 0 { 1.0 } else { -1.0 });
        for zk in z.iter_mut() {
            *zk = noise.sample(StandardNormal);
        }
        let rp = xp.row_mut(i);
        for v in rp.iter_mut() {
            *v = noise.sample(StandardNormal);
        }
        for (j, &col) in p_even.iter().enumerate() {
            rp[col] += group_amp * group_means[g][j];
        }
        if latent > 0 {
            for (j, &col) in p_odd.iter().enumerate() {
                rp[col] += coupling * p_sign[j] * z[p_slot[j]] / spread(p_copies);
            }
        }
        let rq = xq.row_mut(i);
        for v in rq.iter_mut() {
            *v = noise.sample(StandardNormal);
        }
        for (j, &col) in q_odd.iter().enumerate() {
            rq[col] += parity * parity_amp * parity_pattern[j];
        }
        if latent > 0 {
            for (j, &col) in q_even.iter().enumerate() {
                rq[col] += parity * coupling * q_sign[j] * z[q_slot[j]] / spread(q_copies);
            }
        }
        labels.push(c);
        ids.push(format!("utt{i:06}"));
    }

    let class_names: Vec<String> = (0..classes).map(|c| format!("class{c}")).collect();
    let p = FeatureTable::new("synth-p".into(), class_names.clone(), ids.clone(), labels.clone(), xp)?;
    let q = FeatureTable::new("synth-q".into(), class_names, ids, labels, xq)?;
    Ok((p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::format_feature_table;

    #[test]
    fn shapes_and_counts() {
        let (p, q) = synth_generate(&SynthConfig::new(6, 50, (64, 96), 3.0, 1)).unwrap();
        assert_eq!((p.len(), p.dim()), (300, 64));
        assert_eq!((q.len(), q.dim()), (300, 96));
        assert_eq!(p.class_counts(), vec![50; 6]);
        assert_eq!(p.utterance_ids(), q.utterance_ids());
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig::new(4, 10, (16, 24), 2.0, 7);
        let (a, _) = synth_generate(&cfg).unwrap();
        let (b, _) = synth_generate(&cfg).unwrap();
        assert_eq!(format_feature_table(&a), format_feature_table(&b));
        let (c, _) = synth_generate(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_gap_is_unit_noise() {
        let (p, q) = synth_generate(&SynthConfig::new(4, 500, (32, 32), 0.0, 3)).unwrap();
        for t in [&p, &q] {
            let means = t.matrix().col_sums();
            let n = t.len() as f64;
            // class means must agree with the grand mean up to sampling noise
            for c in 0..4 {
                let rows: Vec<usize> = (0..t.len()).filter(|&i| t.labels()[i] == c).collect();
                let sub = t.matrix().select_rows(&rows);
                for (j, s) in sub.col_sums().iter().enumerate() {
                    let diff = s / rows.len() as f64 - means[j] / n;
                    assert!(diff.abs() < 0.25, "class {c} col {j} diff {diff}");
                }
            }
            let var = t.matrix().as_slice().iter().map(|v| v * v).sum::<f64>() / t.matrix().len() as f64;
            assert!((var - 1.0).abs() < 0.05, "variance {var}");
        }
    }

    #[test]
    fn group_means_separate_by_gap() {
        let gap = 6.0;
        let (p, _) = synth_generate(&SynthConfig::new(4, 2000, (64, 64), gap, 5)).unwrap();
        let mean_of = |c: usize| {
            let rows: Vec<usize> = (0..p.len()).filter(|&i| p.labels()[i] == c).collect();
            let s = p.matrix().select_rows(&rows).col_sums();
            s.iter().map(|v| v / rows.len() as f64).collect::<Vec<_>>()
        };
        let (m0, m1, m2) = (mean_of(0), mean_of(1), mean_of(2));
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        // same group, different parity: p cannot tell them apart
        assert!(dist(&m0, &m1) < 1.0, "{}", dist(&m0, &m1));
        // different groups: distance near gap (random patterns, so loose)
        assert!(dist(&m0, &m2) > 0.5 * gap, "{}", dist(&m0, &m2));
    }

    #[test]
    fn rejects_single_class() {
        assert!(synth_generate(&SynthConfig::new(1, 10, (8, 8), 1.0, 0)).is_err());
    }
}
