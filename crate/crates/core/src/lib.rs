//! Tamper-evident sealing, storage and verification of IoT sensor logs.
//!
//! A trusted sealer evaluates data-capture rules against every reading,
//! hash-chains the results into chunks and signs them. The untrusted store
//! keeps the chunks; auditors and users later retrieve and check them.

pub mod ake;
pub mod bench;
pub mod crypto;
pub mod model;
pub mod policy;
pub mod sealing;
pub mod store;
pub mod verify;
pub mod workload;
