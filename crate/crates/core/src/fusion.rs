//! Two-stream fusion classifiers.
//!
//! Each embedding stream passes through its own branch encoder
//! (conv → ReLU → pool → conv → ReLU → pool → flatten → linear projection to
//! the latent width, then dropout). The latents `R_p`, `R_q` are fused by one
//! of the [`FusionKind`] strategies and classified by a small dense head
//! (`dense → ReLU → dropout → dense`).
//!
//! For [`FusionKind::Parrot`] the fused row is
//! `[Γ·R_p | R_q | Γᵀ·R_q | R_p | R_p ⊙ R_q]`, where `Γ` is the Sinkhorn plan
//! between the two latent batches. `Γ` is treated as a constant when
//! differentiating, so gradients reach the encoders through the two matrix
//! products, the copies and the Hadamard product. Because `Γ` couples the rows
//! of a batch, predictions depend on which samples share a batch.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::nn::{
    dropout, relu, relu_backward, Conv1d, ConvCache, Dense, DropoutMask, MaxPool1d, NnError,
    ParamSet, PoolCache, Signal, Tensor2,
};
use crate::ot::{cost_matrix, sinkhorn, transport, transport_backward, OtError, SinkhornConfig, TransportPlan};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error("{branch} embedding dimension {dim} is too short for two conv+pool stages")]
    InputTooShort { branch: Branch, dim: usize },
    #[error("{branch} input has {got} columns, model expects {expected}")]
    InputDim {
        branch: Branch,
        expected: usize,
        got: usize,
    },
    #[error("streams are not batch-aligned: {p} rows vs {q} rows")]
    RowMismatch { p: usize, q: usize },
    #[error("fused width {got} does not match the head input {expected}")]
    FusedWidth { expected: usize, got: usize },
    #[error("backward called without a recorded forward pass")]
    BackwardBeforeForward,
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
}

pub type FusionResult<T> = Result<T, FusionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    P,
    Q,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::P => "ptm-a",
            Branch::Q => "ptm-b",
        })
    }
}

/// How the two latent batches are combined before the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    /// Optimal-transport block plus Hadamard block, 5 × latent wide.
    Parrot,
    /// Plain concatenation `[R_p | R_q]`.
    Concat,
    /// Stream `p` alone (ablation).
    SingleP,
    /// Stream `q` alone (ablation).
    SingleQ,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [
        FusionKind::Parrot,
        FusionKind::Concat,
        FusionKind::SingleP,
        FusionKind::SingleQ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Parrot => "parrot",
            FusionKind::Concat => "concat",
            FusionKind::SingleP => "single-p",
            FusionKind::SingleQ => "single-q",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FusionKind::Parrot => 0,
            FusionKind::Concat => 1,
            FusionKind::SingleP => 2,
            FusionKind::SingleQ => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    fn uses(self, branch: Branch) -> bool {
        !matches!(
            (self, branch),
            (FusionKind::SingleP, Branch::Q) | (FusionKind::SingleQ, Branch::P)
        )
    }
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown fusion kind `{s}` (expected parrot, concat, single-p or single-q)"))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub dim_p: usize,
    pub dim_q: usize,
    pub classes: usize,
    pub fusion: FusionKind,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel_size: usize,
    pub pool_window: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub sinkhorn: SinkhornConfig,
}

impl ArchConfig {
    /// Standard widths: 64/128 filters, kernel 3, pool 2, latent 120, head 128,
    /// dropout 0.2.
    pub fn new(dim_p: usize, dim_q: usize, classes: usize, fusion: FusionKind) -> Self {
        Self {
            dim_p,
            dim_q,
            classes,
            fusion,
            conv1_filters: 64,
            conv2_filters: 128,
            kernel_size: 3,
            pool_window: 2,
            latent_dim: 120,
            hidden_dim: 128,
            dropout: 0.2,
            sinkhorn: SinkhornConfig::default(),
        }
    }

    pub fn input_dim(&self, branch: Branch) -> usize {
        match branch {
            Branch::P => self.dim_p,
            Branch::Q => self.dim_q,
        }
    }

    /// Sequence length after the second pooling stage.
    pub fn encoder_out_len(&self, branch: Branch) -> FusionResult<usize> {
        let dim = self.input_dim(branch);
        let too_short = || FusionError::InputTooShort { branch, dim };
        let k = self.kernel_size;
        let w = self.pool_window;
        let conv1 = dim.checked_sub(k - 1).filter(|&l| l >= 1).ok_or_else(too_short)?;
        let pool1 = Some(conv1 / w).filter(|&l| l >= 1).ok_or_else(too_short)?;
        let conv2 = pool1.checked_sub(k - 1).filter(|&l| l >= 1).ok_or_else(too_short)?;
        Some(conv2 / w).filter(|&l| l >= 1).ok_or_else(too_short)
    }

    /// Flattened width fed to the projection.
    pub fn flat_dim(&self, branch: Branch) -> FusionResult<usize> {
        Ok(self.encoder_out_len(branch)? * self.conv2_filters)
    }

    pub fn ledger(&self) -> DimensionLedger {
        let l = self.latent_dim;
        let (ot_width, hp_width, fused_width) = match self.fusion {
            FusionKind::Parrot => (4 * l, l, 5 * l),
            FusionKind::Concat => (0, 0, 2 * l),
            FusionKind::SingleP | FusionKind::SingleQ => (0, 0, l),
        };
        DimensionLedger {
            ot_width,
            hp_width,
            fused_width,
        }
    }

    /// Trainable scalar count from shape arithmetic alone.
    pub fn param_count(&self) -> FusionResult<usize> {
        let mut total = 0;
        for branch in [Branch::P, Branch::Q] {
            if !self.fusion.uses(branch) {
                continue;
            }
            let k = self.kernel_size;
            total += k * self.conv1_filters + self.conv1_filters;
            total += k * self.conv1_filters * self.conv2_filters + self.conv2_filters;
            total += self.flat_dim(branch)? * self.latent_dim + self.latent_dim;
        }
        let fused = self.ledger().fused_width;
        total += fused * self.hidden_dim + self.hidden_dim;
        total += self.hidden_dim * self.classes + self.classes;
        Ok(total)
    }

    pub fn validate(&self) -> FusionResult<()> {
        let bad = |msg: &str| Err(FusionError::InvalidArch(msg.to_string()));
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.kernel_size == 0 || self.pool_window == 0 {
            return bad("kernel size and pool window must be positive");
        }
        if [self.conv1_filters, self.conv2_filters, self.latent_dim, self.hidden_dim].contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout rate must lie in [0, 1)");
        }
        if self.sinkhorn.epsilon.is_nan() || self.sinkhorn.epsilon <= 0.0 {
            return bad("sinkhorn epsilon must be positive");
        }
        for branch in [Branch::P, Branch::Q] {
            if self.fusion.uses(branch) {
                self.encoder_out_len(branch)?;
            }
        }
        Ok(())
    }
}

/// Column widths of the fused representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionLedger {
    pub ot_width: usize,
    pub hp_width: usize,
    pub fused_width: usize,
}

/// Per-stream encoder: two conv/ReLU/pool stages, flatten, linear projection.
#[derive(Clone, Debug)]
pub struct BranchEncoder {
    pub branch: Branch,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub pool: MaxPool1d,
    pub proj: Dense,
    input_dim: usize,
    out_len: usize,
}

#[derive(Debug)]
struct EncoderCache {
    conv1: ConvCache,
    act1: Signal,
    pool1: PoolCache,
    conv2: ConvCache,
    act2: Signal,
    pool2: PoolCache,
    flat: Tensor2,
    drop: DropoutMask,
}

impl BranchEncoder {
    fn new<R: rand::Rng + ?Sized>(
        params: &mut ParamSet,
        arch: &ArchConfig,
        branch: Branch,
        rng: &mut R,
    ) -> FusionResult<Self> {
        let prefix = match branch {
            Branch::P => "encoder_p",
            Branch::Q => "encoder_q",
        };
        let out_len = arch.encoder_out_len(branch)?;
        let conv1 = Conv1d::new(params, &format!("{prefix}.conv1"), 1, arch.conv1_filters, arch.kernel_size, rng);
        let conv2 = Conv1d::new(
            params,
            &format!("{prefix}.conv2"),
            arch.conv1_filters,
            arch.conv2_filters,
            arch.kernel_size,
            rng,
        );
        let proj = Dense::new(
            params,
            &format!("{prefix}.proj"),
            out_len * arch.conv2_filters,
            arch.latent_dim,
            rng,
        );
        Ok(Self {
            branch,
            conv1,
            conv2,
            pool: MaxPool1d {
                window: arch.pool_window,
            },
            proj,
            input_dim: arch.input_dim(branch),
            out_len,
        })
    }

    fn forward(
        &self,
        params: &ParamSet,
        x: &Tensor2,
        dropout_rate: f64,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> FusionResult<(Tensor2, EncoderCache)> {
        if x.cols() != self.input_dim {
            return Err(FusionError::InputDim {
                branch: self.branch,
                expected: self.input_dim,
                got: x.cols(),
            });
        }
        let input = Signal::from_rows_single_channel(x);
        let (c1, conv1) = self.conv1.forward(params, &input)?;
        let act1 = relu_signal(&c1)?;
        let (p1, pool1) = self.pool.forward(&act1)?;
        let (c2, conv2) = self.conv2.forward(params, &p1)?;
        let act2 = relu_signal(&c2)?;
        let (p2, pool2) = self.pool.forward(&act2)?;
        let flat = p2.flatten();
        let latent = self.proj.forward(params, &flat)?;
        let (latent, drop) = dropout(&latent, dropout_rate, rng, training)?;
        let cache = EncoderCache {
            conv1,
            act1,
            pool1,
            conv2,
            act2,
            pool2,
            flat,
            drop,
        };
        Ok((latent, cache))
    }

    fn backward(&self, params: &mut ParamSet, cache: &EncoderCache, grad: &Tensor2) -> FusionResult<()> {
        let grad = cache.drop.backward(grad);
        let dflat = self
            .proj
            .backward(params, &cache.flat, &grad, true)?
            .expect("input grad requested");
        let dp2 = Signal::unflatten(dflat, self.out_len, self.conv2.out_channels)?;
        let da2 = self.pool.backward(&cache.pool2, &dp2)?;
        let dc2 = relu_signal_backward(&cache.act2, &da2)?;
        let dp1 = self
            .conv2
            .backward(params, &cache.conv2, &dc2, true)?
            .expect("input grad requested");
        let da1 = self.pool.backward(&cache.pool1, &dp1)?;
        let dc1 = relu_signal_backward(&cache.act1, &da1)?;
        self.conv1.backward(params, &cache.conv1, &dc1, false)?;
        Ok(())
    }
}

fn relu_signal(x: &Signal) -> FusionResult<Signal> {
    Ok(Signal::new(x.batch(), x.len(), relu(x.data()))?)
}

fn relu_signal_backward(out: &Signal, grad: &Signal) -> FusionResult<Signal> {
    Ok(Signal::new(out.batch(), out.len(), relu_backward(out.data(), grad.data()))?)
}

/// Elementwise product of two latent batches.
pub fn hadamard_fuse(rp: &Tensor2, rq: &Tensor2) -> FusionResult<Tensor2> {
    Ok(rp.hadamard(rq)?)
}

/// Optimal-transport block: `[Γ·R_p | R_q | Γᵀ·R_q | R_p]` and the plan used.
pub fn ot_fuse(rp: &Tensor2, rq: &Tensor2, config: &SinkhornConfig) -> FusionResult<(Tensor2, TransportPlan)> {
    let plan = batch_plan(rp, rq, config)?;
    let fused = ot_block(&plan, rp, rq)?;
    Ok((fused, plan))
}

fn batch_plan(rp: &Tensor2, rq: &Tensor2, config: &SinkhornConfig) -> FusionResult<TransportPlan> {
    if rp.rows() != rq.rows() {
        return Err(FusionError::RowMismatch {
            p: rp.rows(),
            q: rq.rows(),
        });
    }
    if rp.rows() == 1 {
        return Ok(TransportPlan::unit());
    }
    Ok(sinkhorn(&cost_matrix(rp, rq)?, config)?)
}

fn ot_block(plan: &TransportPlan, rp: &Tensor2, rq: &Tensor2) -> FusionResult<Tensor2> {
    let (p_to_q, q_to_p) = transport(plan, rp, rq)?;
    Ok(Tensor2::hcat(&[&p_to_q, rq, &q_to_p, rp])?)
}

/// Forward-pass options.
pub enum PlanSource<'a> {
    /// Solve Sinkhorn on the current batch.
    Solve,
    /// Use the given plan; lets finite-difference checks hold `Γ` fixed.
    Fixed(&'a TransportPlan),
}

/// Outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Tensor2,
    /// Head activations after the hidden ReLU (`B × hidden_dim`).
    pub penultimate: Tensor2,
    /// Widths observed while building the fused representation.
    pub observed: DimensionLedger,
    pub plan: Option<TransportPlan>,
}

#[derive(Debug)]
struct ForwardCache {
    enc_p: Option<(Tensor2, EncoderCache)>,
    enc_q: Option<(Tensor2, EncoderCache)>,
    plan: Option<TransportPlan>,
    fused: Tensor2,
    hidden: Tensor2,
    hidden_drop: DropoutMask,
    head_in: Tensor2,
}

/// A fusion classifier: two branch encoders (or one, for ablations) and the head.
#[derive(Debug)]
pub struct FusionModel {
    arch: ArchConfig,
    params: ParamSet,
    encoder_p: Option<BranchEncoder>,
    encoder_q: Option<BranchEncoder>,
    hidden: Dense,
    output: Dense,
    cache: Option<ForwardCache>,
}

impl Clone for FusionModel {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch,
            params: self.params.clone(),
            encoder_p: self.encoder_p.clone(),
            encoder_q: self.encoder_q.clone(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
            cache: None,
        }
    }
}

impl FusionModel {
    /// Builds a model with Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(arch: ArchConfig, seed: u64) -> FusionResult<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, rng::tag::INIT, 0);
        let mut params = ParamSet::new();
        let encoder_p = if arch.fusion.uses(Branch::P) {
            Some(BranchEncoder::new(&mut params, &arch, Branch::P, &mut rng)?)
        } else {
            None
        };
        let encoder_q = if arch.fusion.uses(Branch::Q) {
            Some(BranchEncoder::new(&mut params, &arch, Branch::Q, &mut rng)?)
        } else {
            None
        };
        let ledger = arch.ledger();
        if arch.fusion == FusionKind::Parrot {
            assert_eq!(ledger.ot_width + ledger.hp_width, ledger.fused_width);
        }
        let hidden = Dense::new(&mut params, "head.hidden", ledger.fused_width, arch.hidden_dim, &mut rng);
        let output = Dense::new(&mut params, "head.output", arch.hidden_dim, arch.classes, &mut rng);
        debug_assert_eq!(Some(params.scalar_count()), arch.param_count().ok());
        Ok(Self {
            arch,
            params,
            encoder_p,
            encoder_q,
            hidden,
            output,
            cache: None,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encoder(&self, branch: Branch) -> Option<&BranchEncoder> {
        match branch {
            Branch::P => self.encoder_p.as_ref(),
            Branch::Q => self.encoder_q.as_ref(),
        }
    }

    pub fn head_output(&self) -> &Dense {
        &self.output
    }

    /// Latent batch of one branch in inference mode.
    pub fn encode(&self, branch: Branch, x: &Tensor2) -> FusionResult<Tensor2> {
        let encoder = self.encoder(branch).ok_or_else(|| {
            FusionError::InvalidArch(format!("{} model has no {branch} encoder", self.arch.fusion))
        })?;
        let mut no_rng = rng::stream(0, 0, 0);
        Ok(encoder.forward(&self.params, x, 0.0, false, &mut no_rng)?.0)
    }

    /// Runs the model and records what [`backward`](Self::backward) needs.
    ///
    /// `rng` drives dropout and is only consulted when `training` is set.
    pub fn forward(
        &mut self,
        xp: &Tensor2,
        xq: &Tensor2,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> FusionResult<Forward> {
        self.forward_with_plan(xp, xq, training, rng, PlanSource::Solve)
    }

    pub fn forward_with_plan(
        &mut self,
        xp: &Tensor2,
        xq: &Tensor2,
        training: bool,
        rng: &mut dyn RngCore,
        plan_source: PlanSource<'_>,
    ) -> FusionResult<Forward> {
        self.cache = None;
        if xp.rows() != xq.rows() {
            return Err(FusionError::RowMismatch {
                p: xp.rows(),
                q: xq.rows(),
            });
        }
        let rate = self.arch.dropout;
        let enc_p = match &self.encoder_p {
            Some(e) => Some(e.forward(&self.params, xp, rate, training, rng)?),
            None => None,
        };
        let enc_q = match &self.encoder_q {
            Some(e) => Some(e.forward(&self.params, xq, rate, training, rng)?),
            None => None,
        };

        let mut observed = DimensionLedger {
            ot_width: 0,
            hp_width: 0,
            fused_width: 0,
        };
        let mut plan = None;
        let fused = match self.arch.fusion {
            FusionKind::Parrot => {
                let rp = &enc_p.as_ref().expect("parrot has both encoders").0;
                let rq = &enc_q.as_ref().expect("parrot has both encoders").0;
                let gamma = match plan_source {
                    PlanSource::Solve => batch_plan(rp, rq, &self.arch.sinkhorn)?,
                    PlanSource::Fixed(p) => p.clone(),
                };
                let ot = ot_block(&gamma, rp, rq)?;
                let hp = hadamard_fuse(rp, rq)?;
                observed.ot_width = ot.cols();
                observed.hp_width = hp.cols();
                plan = Some(gamma);
                Tensor2::hcat(&[&ot, &hp])?
            }
            FusionKind::Concat => {
                let rp = &enc_p.as_ref().expect("concat has both encoders").0;
                let rq = &enc_q.as_ref().expect("concat has both encoders").0;
                Tensor2::hcat(&[rp, rq])?
            }
            FusionKind::SingleP => enc_p.as_ref().expect("single-p encoder").0.clone(),
            FusionKind::SingleQ => enc_q.as_ref().expect("single-q encoder").0.clone(),
        };
        observed.fused_width = fused.cols();
        let expected = self.arch.ledger();
        if observed != expected {
            return Err(FusionError::FusedWidth {
                expected: expected.fused_width,
                got: observed.fused_width,
            });
        }

        let hidden = relu(&self.hidden.forward(&self.params, &fused)?);
        let (head_in, hidden_drop) = dropout(&hidden, rate, rng, training)?;
        let logits = self.output.forward(&self.params, &head_in)?;

        let out = Forward {
            logits,
            penultimate: hidden.clone(),
            observed,
            plan: plan.clone(),
        };
        self.cache = Some(ForwardCache {
            enc_p,
            enc_q,
            plan,
            fused,
            hidden,
            hidden_drop,
            head_in,
        });
        Ok(out)
    }

    /// Accumulates parameter gradients for `d loss / d logits` from the most
    /// recent forward pass; the recorded pass is consumed.
    pub fn backward(&mut self, grad_logits: &Tensor2) -> FusionResult<()> {
        let cache = self.cache.take().ok_or(FusionError::BackwardBeforeForward)?;
        let params = &mut self.params;
        let d_head_in = self
            .output
            .backward(params, &cache.head_in, grad_logits, true)?
            .expect("input grad requested");
        let d_hidden = relu_backward(&cache.hidden, &cache.hidden_drop.backward(&d_head_in));
        let d_fused = self
            .hidden
            .backward(params, &cache.fused, &d_hidden, true)?
            .expect("input grad requested");

        let l = self.arch.latent_dim;
        let (d_rp, d_rq) = match self.arch.fusion {
            FusionKind::Parrot => {
                let rp = &cache.enc_p.as_ref().expect("parrot has both encoders").0;
                let rq = &cache.enc_q.as_ref().expect("parrot has both encoders").0;
                let plan = cache.plan.as_ref().expect("parrot records its plan");
                let block = |i: usize| d_fused.slice_cols(i * l, (i + 1) * l);
                let (d_pq, d_rq_copy, d_qp, d_rp_copy, d_hp) = (block(0)?, block(1)?, block(2)?, block(3)?, block(4)?);
                let (mut d_rp, mut d_rq) = transport_backward(plan, &d_pq, &d_qp)?;
                d_rp.add_assign(&d_rp_copy)?;
                d_rp.add_assign(&d_hp.hadamard(rq)?)?;
                d_rq.add_assign(&d_rq_copy)?;
                d_rq.add_assign(&d_hp.hadamard(rp)?)?;
                (Some(d_rp), Some(d_rq))
            }
            FusionKind::Concat => (Some(d_fused.slice_cols(0, l)?), Some(d_fused.slice_cols(l, 2 * l)?)),
            FusionKind::SingleP => (Some(d_fused), None),
            FusionKind::SingleQ => (None, Some(d_fused)),
        };
        if let (Some(enc), Some((_, c)), Some(d)) = (&self.encoder_p, &cache.enc_p, d_rp) {
            enc.backward(params, c, &d)?;
        }
        if let (Some(enc), Some((_, c)), Some(d)) = (&self.encoder_q, &cache.enc_q, d_rq) {
            enc.backward(params, c, &d)?;
        }
        Ok(())
    }
}
