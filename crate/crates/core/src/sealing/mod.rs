//! Chunk sealing inside the enclave: hash chains, proofs, zero-run
//! compression, bucketed padding and the streaming [`Sealer`].

mod chunk;
mod feed;
mod sealer;

use thiserror::Error;

pub use chunk::{
    bucket_index, bucket_prefix, chain_link, check_linkage, compress_mixed, compute_chain, fold_user_digests,
    method_for, pi_message, pu_message, seal_chunk_entire, seal_chunk_mixed, seal_chunk_user, seal_optimized,
    seal_padded_batch, seal_records, user_digest, user_digests, BucketBatch, MixedCompressor,
};
pub use feed::{decode_reading, encode_reading, read_blob, read_feed, write_blob, FeedReader, FeedWriter, FEED_MAGIC};
pub use sealer::{ChunkPolicy, ChunkSink, IngestOutcome, MemorySink, Sealer, SealerStats};

use crate::crypto::CryptoError;
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum SealError {
    #[error("cannot seal an empty chunk")]
    EmptyChunk,
    #[error("entire sealing requires every record to be active")]
    NotAllActive,
    #[error("too many padding digests")]
    Padding,
    #[error("configuration: {0}")]
    Config(&'static str),
    #[error("sealed chunk failed its linkage self-check at record {0}")]
    SelfCheck(usize),
    #[error("feed: {0}")]
    Feed(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("sink: {0}")]
    Sink(String),
}
