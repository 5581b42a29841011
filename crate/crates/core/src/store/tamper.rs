//! Deliberate corruption of stored chunks, for exercising verification.

use super::{format, ChunkStore, StoreError};
use crate::model::{ChunkId, Digest, RandomString, SealedChunk, StoredRecord};
use crate::sealing::{chain_link, compute_chain};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tamper {
    ReplaceRecord { id: ChunkId, at: usize, record: StoredRecord },
    InsertRecord { id: ChunkId, at: usize, record: StoredRecord },
    DeleteRecord { id: ChunkId, at: usize },
    SwapRecords { id: ChunkId, a: usize, b: usize },
    /// Keeps the first `keep` records and their digests.
    Truncate { id: ChunkId, keep: usize },
    FlipDigestBit { id: ChunkId, at: usize },
    FlipSignatureBit { id: ChunkId },
    ReplaceG { id: ChunkId, g: RandomString },
    FlipByte { id: ChunkId, offset: usize },
    DeleteChunk { id: ChunkId },
}

impl Tamper {
    pub fn id(&self) -> &ChunkId {
        match self {
            Self::ReplaceRecord { id, .. }
            | Self::InsertRecord { id, .. }
            | Self::DeleteRecord { id, .. }
            | Self::SwapRecords { id, .. }
            | Self::Truncate { id, .. }
            | Self::FlipDigestBit { id, .. }
            | Self::FlipSignatureBit { id }
            | Self::ReplaceG { id, .. }
            | Self::FlipByte { id, .. }
            | Self::DeleteChunk { id } => id,
        }
    }
}

fn out_of_range(what: &str) -> StoreError {
    StoreError::Format(format::FormatError { what: "tamper", reason: format!("{what} out of range") })
}

/// Recomputes the chain over the records, keeping the trailing padding.
fn rechain(c: &mut SealedChunk) {
    let keep = c.chain_digests.len().saturating_sub(c.pi.pad_count as usize);
    let pad: Vec<Digest> = c.chain_digests.split_off(keep);
    c.chain_digests = compute_chain(&c.records);
    c.chain_digests.extend(pad);
}

/// Applies one edit. With `rechain`, record edits are followed by a full
/// recomputation of the chain digests; otherwise only the touched digest is
/// made locally consistent.
pub fn apply_tamper(store: &mut ChunkStore, t: &Tamper, rechain_after: bool) -> Result<(), StoreError> {
    let id = t.id().clone();
    if let Tamper::DeleteChunk { .. } = t {
        return store.remove(&id);
    }
    if let Tamper::FlipByte { offset, .. } = t {
        let mut raw = store.read_raw(&id)?;
        let b = raw.get_mut(*offset).ok_or_else(|| out_of_range("offset"))?;
        *b ^= 0x01;
        return store.put_raw(&id, &raw);
    }
    let mut c = store.get(&id)?;
    let n = c.records.len();
    let prev_of = |c: &SealedChunk, at: usize| if at == 0 { crate::crypto::genesis_digest() } else { c.chain_digests[at - 1] };
    match t {
        Tamper::ReplaceRecord { at, record, .. } => {
            if *at >= n {
                return Err(out_of_range("record"));
            }
            c.records[*at] = record.clone();
            c.chain_digests[*at] = chain_link(record, &prev_of(&c, *at));
        }
        Tamper::InsertRecord { at, record, .. } => {
            if *at > n {
                return Err(out_of_range("record"));
            }
            let h = chain_link(record, &prev_of(&c, *at));
            c.records.insert(*at, record.clone());
            c.chain_digests.insert(*at, h);
        }
        Tamper::DeleteRecord { at, .. } => {
            if *at >= n || n == 1 {
                return Err(out_of_range("record"));
            }
            c.records.remove(*at);
            c.chain_digests.remove(*at);
        }
        Tamper::SwapRecords { a, b, .. } => {
            if *a >= n || *b >= n {
                return Err(out_of_range("record"));
            }
            c.records.swap(*a, *b);
            c.chain_digests.swap(*a, *b);
        }
        Tamper::Truncate { keep, .. } => {
            if *keep == 0 || *keep >= n {
                return Err(out_of_range("keep"));
            }
            c.records.truncate(*keep);
            c.chain_digests.drain(*keep..n);
        }
        Tamper::FlipDigestBit { at, .. } => {
            let d = c.chain_digests.get_mut(*at).ok_or_else(|| out_of_range("digest"))?;
            d.0[0] ^= 0x01;
        }
        Tamper::FlipSignatureBit { .. } => {
            c.pi.signature.0[0] ^= 0x01;
        }
        Tamper::ReplaceG { g, .. } => {
            c.pi.g = *g;
            c.pu.g = *g;
        }
        Tamper::DeleteChunk { .. } | Tamper::FlipByte { .. } => unreachable!(),
    }
    let record_edit = matches!(
        t,
        Tamper::ReplaceRecord { .. }
            | Tamper::InsertRecord { .. }
            | Tamper::DeleteRecord { .. }
            | Tamper::SwapRecords { .. }
            | Tamper::Truncate { .. }
    );
    if rechain_after && record_edit {
        rechain(&mut c);
    }
    store.put_chunk(&c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::model::{DeviceId, SensorId, SensorReading, Timestamp};
    use crate::policy::{Polarity, RuleSet};
    use crate::sealing::{ChunkPolicy, Sealer};
    use crate::store::Query;
    use crate::verify::{verify_auditor, Scope};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sealed(dir: &std::path::Path) -> (ChunkStore, crate::crypto::PublicKey) {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let key = KeyPair::generate(&mut rng);
        let pk = key.public();
        let rules = RuleSet::new(Polarity::OptIn, vec![]).unwrap();
        let mut store = ChunkStore::open(dir).unwrap();
        let mut s = Sealer::new(ChunkPolicy { max_age: 10, ..ChunkPolicy::default() }, rules, None, key, rng).unwrap();
        for t in 0..20 {
            let r = SensorReading::new(DeviceId::new(vec![t as u8; 6]).unwrap(), SensorId::new(b"ap".to_vec()).unwrap(), Timestamp(t));
            s.push(r, &mut store).unwrap();
        }
        s.finish(Timestamp(19), &mut store).unwrap();
        (store, pk)
    }

    fn passes(store: &ChunkStore, pk: &crate::crypto::PublicKey) -> bool {
        let chunks = store.get_chunks(&Query::Stream { tag: None, from: 0, to: 1 }).unwrap();
        verify_auditor(&chunks, pk, &Scope::StreamRange { tag: None, from: 0, to: 1 }).passed()
    }

    #[test]
    fn rechain_does_not_undo_digest_flips() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, pk) = sealed(dir.path());
        assert!(passes(&store, &pk));
        apply_tamper(&mut store, &Tamper::FlipDigestBit { id: ChunkId::new(None, 0), at: 3 }, true).unwrap();
        assert!(!passes(&store, &pk));
    }

    #[test]
    fn rechained_record_edit_still_breaks_the_signature() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, pk) = sealed(dir.path());
        apply_tamper(&mut store, &Tamper::DeleteRecord { id: ChunkId::new(None, 1), at: 2 }, true).unwrap();
        let c = store.get(&ChunkId::new(None, 1)).unwrap();
        assert_eq!(c.chain_digests, crate::sealing::compute_chain(&c.records));
        assert!(!passes(&store, &pk));
    }
}
