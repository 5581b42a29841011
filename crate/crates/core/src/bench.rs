//! Measurements over a sealed store. Nothing here writes to the store.

use std::time::Instant;

use rand::rngs::OsRng;
use rand::RngCore;

use crate::crypto::{KeyPair, PublicKey};
use crate::model::{ChunkId, ChunkLinks, DeviceId, RandomString, SealMode, Timestamp};
use crate::sealing::seal_records;
use crate::store::format::record_len;
use crate::store::{ChunkStore, Query, StoreError};
use crate::verify::{verify_auditor, verify_user, Scope, UserChunkView};

/// Reference figures reported by the original deployment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub seal_ms_per_chunk: f64,
    pub storage_overhead_pct: f64,
    pub per_sensor_saving_pct: f64,
    pub per_user_saving_pct: f64,
    pub per_user_chunks: u64,
    pub non_opt_chunks: u64,
    pub user_verify_s: f64,
}

pub const REFERENCE: Reference = Reference {
    seal_ms_per_chunk: 310.0,
    storage_overhead_pct: 21.0,
    per_sensor_saving_pct: 6.5,
    per_user_saving_pct: 2.1,
    per_user_chunks: 57,
    non_opt_chunks: 3012,
    user_verify_s: 0.71,
};

/// Pass thresholds used by the acceptance suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub seal_ms_per_chunk: f64,
    pub overhead_pct: (f64, f64),
    pub audit_s_per_chunk: f64,
    pub day_audit_s: f64,
    pub user_day_s: f64,
}

pub const THRESHOLDS: Thresholds = Thresholds {
    seal_ms_per_chunk: 3000.0,
    overhead_pct: (10.0, 35.0),
    audit_s_per_chunk: 2.0,
    day_audit_s: 100.0,
    user_day_s: 5.0,
};

#[derive(Clone, Debug, Default)]
pub struct BenchOptions {
    /// How many of the largest chunks to re-seal in memory for timing.
    pub reseal_sample: usize,
    /// Optional user verification of `[from, to]`.
    pub user: Option<(DeviceId, Timestamp, Timestamp)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserBench {
    pub chunks_examined: usize,
    pub digests_examined: usize,
    pub matches: usize,
    pub verify_ms: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoreReport {
    pub modes: Vec<SealMode>,
    pub streams: usize,
    pub chunks: usize,
    pub markers: usize,
    pub records: u64,
    pub largest_chunk_records: usize,
    /// Encoded bytes of the stored records alone.
    pub cleartext_bytes: u64,
    /// Total size of the chunk files.
    pub sealed_bytes: u64,
    pub overhead_pct: f64,
    pub audit_ms: f64,
    pub audit_ms_per_chunk: f64,
    pub audit_passed: bool,
    pub reseal_ms_mean: Option<f64>,
    pub reseal_ms_max: Option<f64>,
    pub user: Option<UserBench>,
}

pub fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

pub fn overhead_pct(sealed: u64, cleartext: u64) -> f64 {
    if cleartext == 0 {
        return 0.0;
    }
    (sealed as f64 - cleartext as f64) / cleartext as f64 * 100.0
}

/// Relative size reduction of `optimized` against `baseline`, in percent.
pub fn saving_pct(optimized: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        return 0.0;
    }
    (baseline as f64 - optimized as f64) / baseline as f64 * 100.0
}

pub fn bench_store(store: &ChunkStore, sealer: &PublicKey, opts: &BenchOptions) -> Result<StoreReport, StoreError> {
    let mut modes: Vec<SealMode> = Vec::new();
    for s in store.streams() {
        if !modes.contains(&s.mode) {
            modes.push(s.mode);
        }
    }
    let sealed_bytes = store.total_bytes();

    let t = Instant::now();
    let all = store.get_chunks(&Query::All)?;
    let audit = verify_auditor(&all, sealer, &Scope::Chunks);
    let audit_ms = ms_since(t);

    let mut records = 0u64;
    let mut cleartext_bytes = 0u64;
    let mut markers = 0;
    let mut largest_chunk_records = 0;
    for c in all.iter().filter_map(|r| r.chunk.as_ref().ok()) {
        records += c.records.len() as u64;
        cleartext_bytes += c.records.iter().map(|r| record_len(r) as u64).sum::<u64>();
        markers += usize::from(c.is_marker());
        largest_chunk_records = largest_chunk_records.max(c.records.len());
    }

    let mut reseal = Vec::new();
    if opts.reseal_sample > 0 {
        let mut sample: Vec<_> = all.iter().filter_map(|r| r.chunk.as_ref().ok()).collect();
        sample.sort_by_key(|c| std::cmp::Reverse(c.records.len()));
        let key = KeyPair::generate(&mut OsRng);
        for c in sample.into_iter().take(opts.reseal_sample) {
            let links = random_links();
            let records = c.records.clone();
            let t = Instant::now();
            seal_records(ChunkId::new(None, 0), c.mode, records, &links, &key, Vec::new(), false)
                .expect("records came from a sealed chunk");
            reseal.push(ms_since(t));
        }
    }

    let user = match &opts.user {
        None => None,
        Some((device, from, to)) => Some(bench_user(store, sealer, device, *from, *to)?),
    };

    let chunks = all.len();
    Ok(StoreReport {
        modes,
        streams: store.streams().count(),
        chunks,
        markers,
        records,
        largest_chunk_records,
        cleartext_bytes,
        sealed_bytes,
        overhead_pct: overhead_pct(sealed_bytes, cleartext_bytes),
        audit_ms,
        audit_ms_per_chunk: if chunks == 0 { 0.0 } else { audit_ms / chunks as f64 },
        audit_passed: audit.passed(),
        reseal_ms_mean: (!reseal.is_empty()).then(|| reseal.iter().sum::<f64>() / reseal.len() as f64),
        reseal_ms_max: reseal.iter().copied().reduce(f64::max),
        user,
    })
}

fn random_links() -> ChunkLinks {
    let r = || {
        let mut b = [0u8; 32];
        OsRng.fill_bytes(&mut b);
        RandomString(b)
    };
    ChunkLinks { prev: r(), current: r(), next: r() }
}

/// What the retrieval service would hand a user for `[from, to]`, timed
/// through user verification.
pub fn bench_user(
    store: &ChunkStore,
    sealer: &PublicKey,
    device: &DeviceId,
    from: Timestamp,
    to: Timestamp,
) -> Result<UserBench, StoreError> {
    use crate::model::StreamTag;
    use crate::sealing::{bucket_index, bucket_prefix};

    let own: Option<StreamTag> = store
        .streams()
        .find(|s| s.mode == SealMode::PerUser)
        .map(|s| StreamTag::bucket(bucket_prefix(SealMode::PerUser), bucket_index(device.as_bytes(), s.bucket_count)));
    let keep = |tag: &Option<StreamTag>| own.is_none() || *tag == own;
    let views: Vec<UserChunkView> = store
        .get_chunks(&Query::TimeRange { from, to })?
        .iter()
        .filter(|r| keep(&r.id.stream))
        .filter_map(|r| UserChunkView::from_retrieved(r).ok())
        .collect();
    let streams = store.streams().filter(|s| keep(&s.tag)).map(|s| s.tag.clone()).collect();
    let t = Instant::now();
    let report = verify_user(device, &views, sealer, from, to, streams);
    let verify_ms = ms_since(t);
    Ok(UserBench {
        chunks_examined: views.len(),
        digests_examined: views.iter().map(|v| v.entries.len()).sum(),
        matches: report.matches.len(),
        verify_ms,
        passed: report.passed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Polarity, RuleSet};
    use crate::sealing::{ChunkPolicy, Sealer};
    use crate::workload::{device_id, WorkloadSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn ratios() {
        assert_eq!(overhead_pct(121, 100), 21.0);
        assert_eq!(saving_pct(90, 100), 10.0);
        assert_eq!(overhead_pct(5, 0), 0.0);
    }

    #[test]
    fn bench_leaves_store_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ChunkStore::open(dir.path()).unwrap();
        let key = KeyPair::generate(&mut OsRng);
        let spec = WorkloadSpec { sensors: 20, devices: 50, events_per_day: 3000, ..WorkloadSpec::default() };
        let policy = ChunkPolicy { mode: SealMode::PerUser, bucket_count: 4, ..ChunkPolicy::default() };
        let rules = RuleSet::new(Polarity::OptIn, vec![]).unwrap();
        let pk = key.public();
        let mut sealer = Sealer::new(policy, rules, None, key, ChaCha20Rng::seed_from_u64(3)).unwrap();
        for r in spec.events() {
            sealer.push(r, &mut store).unwrap();
        }
        let end = Timestamp(spec.start + 86_400);
        sealer.finish(end, &mut store).unwrap();

        let before: Vec<_> = store.metas().map(|m| (m.path.clone(), std::fs::read(&m.path).unwrap())).collect();
        let opts = BenchOptions { reseal_sample: 2, user: Some((device_id(3), Timestamp(spec.start), end)) };
        let rep = bench_store(&store, &pk, &opts).unwrap();
        let after: Vec<_> = store.metas().map(|m| (m.path.clone(), std::fs::read(&m.path).unwrap())).collect();
        assert_eq!(before, after);

        assert!(rep.audit_passed);
        assert!(rep.cleartext_bytes > 0 && rep.sealed_bytes > rep.cleartext_bytes);
        assert!(rep.reseal_ms_mean.is_some());
        let u = rep.user.unwrap();
        assert!(u.passed);
        assert!(u.matches > 0);
        assert!(u.chunks_examined < rep.chunks);
    }
}
