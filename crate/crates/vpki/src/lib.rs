//! Core library for a pseudonym-issuing vehicular PKI: credential
//! primitives, the authority services (LTCA, PCA, RA), pluggable storage,
//! the wire protocol, a replica orchestrator, vehicle client, and the
//! benchmarking toolkit.

pub mod bench;
pub mod clock;
pub mod client;
pub mod credentials;
pub mod gateway;
pub mod ltca;
pub mod orchestrator;
pub mod pca;
pub mod ra;
pub mod store;
pub mod wire;

#[cfg(test)]
pub(crate) mod testutil;
