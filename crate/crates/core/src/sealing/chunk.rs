use rand::{CryptoRng, RngCore};

use super::SealError;
use crate::crypto::{self, KeyPair};
use crate::model::{
    encode_chain_input, encode_user_link, encode_user_preimage, ChunkId, ChunkLinks, Digest, EndOfChunk,
    ProofForUser, ProofOfIntegrity, SealMode, SealedChunk, SensorReading, SensorState, StoredRecord, UserDigest,
    DIGEST_LEN,
};

pub fn chain_link(record: &StoredRecord, prev: &Digest) -> Digest {
    crypto::hash(&encode_chain_input(record, prev))
}

/// `h_1 = H(r_1 || H(0))`, `h_i = H(r_i || h_{i-1})`.
pub fn compute_chain(records: &[StoredRecord]) -> Vec<Digest> {
    let mut out = Vec::with_capacity(records.len());
    let mut prev = crypto::genesis_digest();
    for r in records {
        prev = chain_link(r, &prev);
        out.push(prev);
    }
    out
}

pub fn user_digest(record: &StoredRecord) -> UserDigest {
    let time = record.time();
    UserDigest { o: crypto::hash(&encode_user_preimage(record.user_id_bytes(), time)), state: record.state(), time }
}

pub fn user_digests(records: &[StoredRecord]) -> Vec<UserDigest> {
    records.iter().map(user_digest).collect()
}

/// `hu_end`: XOR of `H(o_i || state_i)` over all entries.
pub fn fold_user_digests<'a>(entries: impl IntoIterator<Item = &'a UserDigest>) -> Digest {
    let mut acc = [0u8; DIGEST_LEN];
    for e in entries {
        let hu = crypto::hash(&encode_user_link(&e.o, e.state));
        for (a, b) in acc.iter_mut().zip(hu.0.iter()) {
            *a ^= b;
        }
    }
    Digest(acc)
}

/// Message signed into PI: `(h_tail ⊕ S_eoc) || pad_count`.
pub fn pi_message(tail: &Digest, eoc: &EndOfChunk, pad_count: u32) -> [u8; DIGEST_LEN + 4] {
    let mut out = [0u8; DIGEST_LEN + 4];
    out[..DIGEST_LEN].copy_from_slice(tail.xor(&eoc.0).as_bytes());
    out[DIGEST_LEN..].copy_from_slice(&pad_count.to_be_bytes());
    out
}

/// Message signed into PU: `hu_end ⊕ S_eoc`.
pub fn pu_message(hu_end: &Digest, eoc: &EndOfChunk) -> [u8; DIGEST_LEN] {
    hu_end.xor(&eoc.0).0
}

/// Streaming zero-run compression. The first passive reading of a run
/// becomes a tombstone; the rest of the run is dropped.
#[derive(Clone, Debug, Default)]
pub struct MixedCompressor {
    in_zero_run: bool,
}

impl MixedCompressor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, reading: &SensorReading) -> Option<StoredRecord> {
        match reading.state {
            SensorState::Active => {
                self.in_zero_run = false;
                Some(StoredRecord::full(reading))
            }
            SensorState::Passive if self.in_zero_run => None,
            SensorState::Passive => {
                self.in_zero_run = true;
                Some(StoredRecord::tombstone(reading))
            }
        }
    }

    pub fn in_zero_run(&self) -> bool {
        self.in_zero_run
    }

    pub fn reset(&mut self) {
        self.in_zero_run = false;
    }
}

/// Stored records for a chunk of policy-evaluated readings.
pub fn compress_mixed(readings: &[SensorReading]) -> Vec<StoredRecord> {
    let mut c = MixedCompressor::new();
    readings.iter().filter_map(|r| c.push(r)).collect()
}

/// The per-chunk method: entire when everything is a full record.
pub fn method_for(records: &[StoredRecord]) -> SealMode {
    if records.iter().all(|r| matches!(r, StoredRecord::Full { .. })) {
        SealMode::Entire
    } else {
        SealMode::Mixed
    }
}

/// User digests and PU for a chunk's records.
pub fn seal_chunk_user(
    records: &[StoredRecord],
    links: &ChunkLinks,
    key: &KeyPair,
) -> Result<(Vec<UserDigest>, ProofForUser), SealError> {
    if records.is_empty() {
        return Err(SealError::EmptyChunk);
    }
    let entries = user_digests(records);
    let hu_end = fold_user_digests(&entries);
    let signature = crypto::sign(key, &pu_message(&hu_end, &links.end_of_chunk()));
    Ok((entries, ProofForUser { g: links.current, signature }))
}

/// Builds the chain, both proofs and the trailing padding for one chunk.
pub fn seal_records(
    id: ChunkId,
    mode: SealMode,
    records: Vec<StoredRecord>,
    links: &ChunkLinks,
    key: &KeyPair,
    padding: Vec<Digest>,
    last_in_stream: bool,
) -> Result<SealedChunk, SealError> {
    if records.is_empty() {
        return Err(SealError::EmptyChunk);
    }
    let mut chain = compute_chain(&records);
    let tail = *chain.last().expect("non-empty");
    let eoc = links.end_of_chunk();
    let pad_count = u32::try_from(padding.len()).map_err(|_| SealError::Padding)?;
    let signature = crypto::sign(key, &pi_message(&tail, &eoc, pad_count));
    let (user_digests, pu) = seal_chunk_user(&records, links, key)?;
    chain.extend(padding);
    Ok(SealedChunk {
        id,
        mode,
        last_in_stream,
        records,
        chain_digests: chain,
        user_digests,
        pi: ProofOfIntegrity { g: links.current, signature, pad_count },
        pu,
    })
}

/// Sealing when every record is active.
pub fn seal_chunk_entire(
    id: ChunkId,
    records: Vec<StoredRecord>,
    links: &ChunkLinks,
    key: &KeyPair,
) -> Result<SealedChunk, SealError> {
    if records.iter().any(|r| !matches!(r, StoredRecord::Full { .. })) {
        return Err(SealError::NotAllActive);
    }
    seal_records(id, SealMode::Entire, records, links, key, Vec::new(), false)
}

/// Sealing of a chunk with mixed states: zero-run compression, then the
/// same chain and proofs as [`seal_chunk_entire`].
pub fn seal_chunk_mixed(
    id: ChunkId,
    readings: &[SensorReading],
    links: &ChunkLinks,
    key: &KeyPair,
) -> Result<SealedChunk, SealError> {
    let records = compress_mixed(readings);
    let mode = method_for(&records);
    seal_records(id, mode, records, links, key, Vec::new(), false)
}

/// One bucket's pending output within a batch.
pub struct BucketBatch {
    pub id: ChunkId,
    pub records: Vec<StoredRecord>,
    pub links: ChunkLinks,
    pub last_in_stream: bool,
}

/// Seals every bucket of a batch, padding each chain section with random
/// fake digests up to the longest bucket.
pub fn seal_padded_batch<R: RngCore + CryptoRng>(
    mode: SealMode,
    buckets: Vec<BucketBatch>,
    key: &KeyPair,
    rng: &mut R,
) -> Result<Vec<SealedChunk>, SealError> {
    let longest = buckets.iter().map(|b| b.records.len()).max().unwrap_or(0);
    buckets
        .into_iter()
        .map(|b| {
            let padding = (b.records.len()..longest)
                .map(|_| {
                    let mut d = [0u8; DIGEST_LEN];
                    rng.fill_bytes(&mut d);
                    Digest(d)
                })
                .collect();
            let m = super::sealer::chunk_mode(mode, &b.records);
            seal_records(b.id, m, b.records, &b.links, key, padding, b.last_in_stream)
        })
        .collect()
}

/// Per-sensor / per-user sealing of a single batch. `bucket_of` assigns each
/// reading to a bucket in `0..bucket_count`; `links_for` supplies each
/// bucket's random strings. Empty buckets produce no chunk.
pub fn seal_optimized<R, B, L>(
    readings: &[SensorReading],
    mode: SealMode,
    bucket_count: u32,
    mut bucket_of: B,
    mut links_for: L,
    key: &KeyPair,
    rng: &mut R,
) -> Result<Vec<SealedChunk>, SealError>
where
    R: RngCore + CryptoRng,
    B: FnMut(&SensorReading) -> u32,
    L: FnMut(u32) -> ChunkLinks,
{
    if bucket_count == 0 || !mode.is_bucketed() {
        return Err(SealError::Config("optimized sealing needs a bucketed mode and at least one bucket"));
    }
    let mut per_bucket: Vec<(MixedCompressor, Vec<StoredRecord>)> =
        (0..bucket_count).map(|_| (MixedCompressor::new(), Vec::new())).collect();
    for r in readings {
        let b = bucket_of(r);
        let (c, recs) = per_bucket.get_mut(b as usize).ok_or(SealError::Config("bucket index out of range"))?;
        if let Some(rec) = c.push(r) {
            recs.push(rec);
        }
    }
    let prefix = bucket_prefix(mode);
    let batch = per_bucket
        .into_iter()
        .enumerate()
        .filter(|(_, (_, recs))| !recs.is_empty())
        .map(|(i, (_, records))| BucketBatch {
            id: ChunkId::new(Some(crate::model::StreamTag::bucket(prefix, i as u32)), 0),
            records,
            links: links_for(i as u32),
            last_in_stream: false,
        })
        .collect();
    seal_padded_batch(mode, batch, key, rng)
}

pub fn bucket_prefix(mode: SealMode) -> &'static str {
    match mode {
        SealMode::PerUser => "user",
        _ => "sensor",
    }
}

/// `H(id) mod bucket_count`, using the first eight digest bytes.
pub fn bucket_index(id: &[u8], bucket_count: u32) -> u32 {
    let h = crypto::hash(id);
    let n = u64::from_be_bytes(h.0[..8].try_into().unwrap());
    (n % bucket_count.max(1) as u64) as u32
}

/// Every stored chain digest (excluding padding) recomputes from its record.
pub fn check_linkage(chunk: &SealedChunk) -> Result<(), usize> {
    let mut prev = crypto::genesis_digest();
    for (i, r) in chunk.records.iter().enumerate() {
        let h = chain_link(r, &prev);
        if chunk.chain_digests.get(i) != Some(&h) {
            return Err(i);
        }
        prev = h;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceId, RandomString, SensorId, Timestamp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn links(seed: u8) -> ChunkLinks {
        ChunkLinks {
            prev: RandomString([seed; 32]),
            current: RandomString([seed.wrapping_add(1); 32]),
            next: RandomString([seed.wrapping_add(2); 32]),
        }
    }

    fn reading(d: &str, s: &str, state: SensorState, t: u64) -> SensorReading {
        SensorReading::new(DeviceId::new(d.as_bytes().to_vec()).unwrap(), SensorId::new(s.as_bytes().to_vec()).unwrap(), Timestamp(t))
            .with_state(state)
    }

    #[test]
    fn empty_chunk_is_an_error() {
        let key = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(0));
        assert!(matches!(
            seal_chunk_entire(ChunkId::new(None, 0), vec![], &links(1), &key),
            Err(SealError::EmptyChunk)
        ));
    }

    #[test]
    fn entire_rejects_tombstones() {
        let key = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(0));
        let recs = compress_mixed(&[reading("d", "s", SensorState::Passive, 1)]);
        assert!(matches!(seal_chunk_entire(ChunkId::new(None, 0), recs, &links(1), &key), Err(SealError::NotAllActive)));
    }

    #[test]
    fn single_record_user_fold_is_its_own_digest() {
        let rec = StoredRecord::full(&reading("d1", "s1", SensorState::Active, 5));
        let e = user_digest(&rec);
        let hu = crypto::hash(&encode_user_link(&e.o, e.state));
        assert_eq!(fold_user_digests([&e]), hu);
    }

    #[test]
    fn same_device_twice_gives_distinct_o() {
        let a = user_digest(&StoredRecord::full(&reading("d1", "s1", SensorState::Active, 5)));
        let b = user_digest(&StoredRecord::full(&reading("d1", "s1", SensorState::Active, 6)));
        assert_ne!(a.o, b.o);
    }

    #[test]
    fn compressor_tracks_zero_runs() {
        let mut c = MixedCompressor::new();
        assert!(c.push(&reading("a", "s", SensorState::Passive, 1)).is_some());
        assert!(c.in_zero_run());
        assert!(c.push(&reading("b", "s", SensorState::Passive, 2)).is_none());
        assert!(c.push(&reading("c", "t", SensorState::Passive, 3)).is_none());
        assert!(matches!(c.push(&reading("a", "s", SensorState::Active, 4)), Some(StoredRecord::Full { .. })));
        assert!(!c.in_zero_run());
        assert!(matches!(c.push(&reading("b", "s", SensorState::Passive, 5)), Some(StoredRecord::Tombstone { .. })));
    }

    #[test]
    fn padding_equalizes_chain_sections() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let key = KeyPair::generate(&mut rng);
        let readings: Vec<_> = (0..10)
            .map(|i| reading("d", if i % 3 == 0 { "a" } else { "b" }, SensorState::Active, i))
            .collect();
        let chunks = seal_optimized(
            &readings,
            SealMode::PerSensor,
            2,
            |r| if r.sensor.as_bytes() == b"a" { 0 } else { 1 },
            |b| links(b as u8 * 10),
            &key,
            &mut rng,
        )
        .unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].chain_digests.len(), chunks[1].chain_digests.len());
        assert_eq!(chunks[0].pi.pad_count, 2);
        assert_eq!(chunks[1].pi.pad_count, 0);
        for c in &chunks {
            check_linkage(c).unwrap();
        }
    }

    #[test]
    fn bucket_index_in_range() {
        for i in 0..200u32 {
            assert!(bucket_index(&i.to_be_bytes(), 7) < 7);
        }
        assert_eq!(bucket_index(b"x", 1), 0);
    }
}
