//! Two-stream embedding fusion with a Hadamard branch and a Sinkhorn
//! optimal-transport branch, plus the data, training and evaluation plumbing
//! around it.
//!
//! The usual flow: load two PFV tables, [`data::pair`] them, then run
//! [`train::cross_validate`] with an [`fusion::ArchConfig`].

pub mod checkpoint;
pub mod data;
pub mod fusion;
pub mod nn;
pub mod ot;
pub mod rng;
pub mod train;

/// Any error the crate can return.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Fusion(#[from] fusion::FusionError),
    #[error(transparent)]
    Ot(#[from] ot::OtError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
}

impl Error {
    /// True for failures caused by non-finite numbers rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Train(e) => e.is_numerical(),
            Error::Nn(nn::NnError::NonFinite { .. }) => true,
            Error::Fusion(fusion::FusionError::Nn(nn::NnError::NonFinite { .. })) => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
