//! Neural information squeezing: learn a coarse-graining of micro-state time
//! series together with its macro dynamics, measure the effective
//! information of the learned dynamics, and search the macro dimension for
//! causal emergence.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod datagen;
pub mod dataset;
pub mod ei;
pub mod error;
pub mod infometrics;
pub mod networks;
pub mod optim;
pub mod rng;
pub mod squeezer;

pub use autodiff::{Graph, Tensor, Var};
pub use error::{NisError, Result};

/// Version string embedded in every emitted artifact.
pub const TOOL_VERSION: &str = concat!("nis ", env!("CARGO_PKG_VERSION"));

/// Short stable digest of a serialisable configuration.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("configuration serialises");
    Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}
