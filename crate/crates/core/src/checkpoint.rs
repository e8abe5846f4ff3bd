//! Binary model checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "PRRT"  u32 version(=1)  u8 fusion
//! u32 dim_p dim_q classes conv1 conv2 kernel pool latent hidden
//! f64 dropout  f64 epsilon  u32 sinkhorn_iters  f64 tol  u64 seed
//! str ptm_a  str ptm_b  u32 n_classes  str class_name * n_classes
//! u32 n_params  { str name  u32 rows  u32 cols  f64 * rows*cols } * n_params
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes.

use std::path::Path;

use thiserror::Error;

use crate::fusion::{ArchConfig, FusionError, FusionKind, FusionModel};
use crate::ot::SinkhornConfig;

const MAGIC: &[u8; 4] = b"PRRT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

pub type CheckpointResult<T> = Result<T, CheckpointError>;

/// Everything besides weights that a checkpoint records.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub ptm_a: String,
    pub ptm_b: String,
    pub class_names: Vec<String>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("checkpoint field fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CheckpointResult<&'a [u8]> {
        if self.0.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn u8(&mut self) -> CheckpointResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> CheckpointResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn count(&mut self) -> CheckpointResult<usize> {
        Ok(self.u32()? as usize)
    }
    fn u64(&mut self) -> CheckpointResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> CheckpointResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> CheckpointResult<String> {
        let n = self.count()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Corrupt("string is not UTF-8".into()))
    }
}

pub fn encode_checkpoint(model: &FusionModel, meta: &CheckpointMeta) -> Vec<u8> {
    let a = model.arch();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.0.push(a.fusion.code());
    for v in [
        a.dim_p,
        a.dim_q,
        a.classes,
        a.conv1_filters,
        a.conv2_filters,
        a.kernel_size,
        a.pool_window,
        a.latent_dim,
        a.hidden_dim,
    ] {
        w.u32(v);
    }
    w.f64(a.dropout);
    w.f64(a.sinkhorn.epsilon);
    w.u32(a.sinkhorn.max_iters);
    w.f64(a.sinkhorn.tol);
    w.0.extend_from_slice(&meta.seed.to_le_bytes());
    w.str(&meta.ptm_a);
    w.str(&meta.ptm_b);
    w.u32(meta.class_names.len());
    for name in &meta.class_names {
        w.str(name);
    }
    w.u32(model.params().len());
    for p in model.params().iter() {
        w.str(&p.name);
        w.u32(p.value.rows());
        w.u32(p.value.cols());
        for &v in p.value.as_slice() {
            w.f64(v);
        }
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> CheckpointResult<(FusionModel, CheckpointMeta)> {
    let mut r = Reader(bytes);
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let code = r.u8()?;
    let fusion = FusionKind::from_code(code).ok_or_else(|| CheckpointError::Corrupt(format!("unknown fusion code {code}")))?;
    let mut arch = ArchConfig::new(r.count()?, r.count()?, r.count()?, fusion);
    arch.conv1_filters = r.count()?;
    arch.conv2_filters = r.count()?;
    arch.kernel_size = r.count()?;
    arch.pool_window = r.count()?;
    arch.latent_dim = r.count()?;
    arch.hidden_dim = r.count()?;
    arch.dropout = r.f64()?;
    arch.sinkhorn = SinkhornConfig {
        epsilon: r.f64()?,
        max_iters: r.count()?,
        tol: r.f64()?,
    };
    let seed = r.u64()?;
    let ptm_a = r.str()?;
    let ptm_b = r.str()?;
    let n_classes = r.count()?;
    if n_classes != arch.classes {
        return Err(CheckpointError::Corrupt(format!(
            "{n_classes} class names for {} classes",
            arch.classes
        )));
    }
    let class_names = (0..n_classes).map(|_| r.str()).collect::<CheckpointResult<Vec<_>>>()?;

    let mut model = FusionModel::new(arch, 0)?;
    let n_params = r.count()?;
    if n_params != model.params().len() {
        return Err(CheckpointError::Corrupt(format!(
            "{n_params} parameter tensors, architecture has {}",
            model.params().len()
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let name = r.str()?;
        let (rows, cols) = (r.count()?, r.count()?);
        let expected = model.params().get(id);
        if name != expected.name || (rows, cols) != expected.value.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {name} ({rows}x{cols}) where {} {:?} was expected",
                expected.name,
                expected.value.shape()
            )));
        }
        let dst = model.params_mut().value_mut(id).as_mut_slice();
        for v in dst.iter_mut() {
            *v = r.f64()?;
        }
    }
    if !r.0.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.0.len())));
    }
    let finite = model.params().iter().all(|p| p.value.is_finite());
    if !finite {
        return Err(CheckpointError::Corrupt("non-finite weight".into()));
    }
    Ok((
        model,
        CheckpointMeta {
            seed,
            ptm_a,
            ptm_b,
            class_names,
        },
    ))
}

pub fn save_checkpoint(model: &FusionModel, meta: &CheckpointMeta, path: impl AsRef<Path>) -> CheckpointResult<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model, meta)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> CheckpointResult<(FusionModel, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
