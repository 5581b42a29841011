use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use notary_core::ake::{self, LogQuery, LogResponse, Role, ServerContext, VerifierRegistry};
use notary_core::crypto::KeyPair;
use notary_core::model::{
    ChunkId, ChunkLinks, DeviceId, RandomString, SealMode, SensorId, SensorReading, SensorState, StoredRecord, Timestamp,
};
use notary_core::policy::{DataCaptureRule, Interval, Polarity, RuleSet};
use notary_core::sealing::{bucket_index, compress_mixed, seal_records, ChunkPolicy, Sealer};
use notary_core::store::format::{decode_chunk, encode_chunk};
use notary_core::store::{ChunkStore, Query, Retrieved};
use notary_core::verify::{verify_auditor, verify_chunk, verify_user, Claim, Scope, UserChunkView};

const MODES: [SealMode; 4] = [SealMode::Entire, SealMode::Mixed, SealMode::PerSensor, SealMode::PerUser];

fn dev(i: u8) -> DeviceId {
    DeviceId::new(vec![0x02, 0, 0, 0, 0, i]).unwrap()
}

fn sen(i: u8) -> SensorId {
    SensorId::new(format!("ap-{i}").into_bytes()).unwrap()
}

fn readings() -> impl Strategy<Value = Vec<SensorReading>> {
    prop::collection::vec((0u8..6, 0u8..5, 0u64..40, prop::collection::vec(any::<u8>(), 0..12)), 1..120).prop_map(|v| {
        let mut t = 10_000;
        v.into_iter()
            .map(|(d, s, dt, p)| {
                t += dt;
                SensorReading::new(dev(d), sen(s), Timestamp(t)).with_params(p)
            })
            .collect()
    })
}

fn rules(quiet: &[u8]) -> RuleSet {
    let mut r = DataCaptureRule::new(1, Polarity::OptOut, Interval { start: Timestamp(0), end: Timestamp(u64::MAX) });
    r.sensors = Some(quiet.iter().map(|&i| sen(i)).collect());
    RuleSet::new(Polarity::OptIn, vec![r]).unwrap()
}

struct Sealed {
    _dir: tempfile::TempDir,
    store: ChunkStore,
    pk: notary_core::crypto::PublicKey,
    end: Timestamp,
}

fn seal(readings: &[SensorReading], mode: SealMode, quiet: &[u8], max_bytes: u64, max_age: u64, buckets: u32) -> Sealed {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let key = KeyPair::generate(&mut rng);
    let pk = key.public();
    let policy = ChunkPolicy { mode, max_bytes, max_age, bucket_count: buckets };
    let mut store = ChunkStore::open(dir.path()).unwrap();
    let mut s = Sealer::new(policy, rules(quiet), None, key, rng).unwrap();
    for r in readings {
        s.push(r.clone(), &mut store).unwrap();
    }
    let end = readings.last().unwrap().time;
    s.finish(end, &mut store).unwrap();
    Sealed { _dir: dir, store, pk, end }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn honest_stores_pass_audit_and_keep_every_active_reading(
        rs in readings(),
        mode in prop::sample::select(MODES.to_vec()),
        quiet in prop::collection::vec(0u8..5, 0..3),
        max_bytes in 60u64..2_000,
        max_age in 5u64..400,
        buckets in 1u32..5,
    ) {
        let s = seal(&rs, mode, &quiet, max_bytes, max_age, buckets);
        let streams: Vec<_> = s.store.streams().map(|i| i.tag.clone()).collect();
        let chunks = s.store.get_chunks(&Query::All).unwrap();
        let report = verify_auditor(&chunks, &s.pk, &Scope::TimeRange { from: Timestamp(0), to: s.end, streams });
        prop_assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());

        let mut stored: Vec<(Vec<u8>, u64)> = chunks
            .iter()
            .flat_map(|r| r.chunk.as_ref().unwrap().records.clone())
            .filter_map(|rec| match rec {
                StoredRecord::Full { device, time, .. } => Some((device.as_bytes().to_vec(), time.0)),
                _ => None,
            })
            .collect();
        let mut active: Vec<(Vec<u8>, u64)> = rs
            .iter()
            .filter(|r| !quiet.contains(&r.sensor.as_bytes()[3].wrapping_sub(b'0')))
            .map(|r| (r.device.as_bytes().to_vec(), r.time.0))
            .collect();
        stored.sort();
        active.sort();
        prop_assert_eq!(stored, active);
    }

    #[test]
    fn users_find_exactly_their_active_readings(
        rs in readings(),
        mode in prop::sample::select(MODES.to_vec()),
        quiet in prop::collection::vec(0u8..5, 0..3),
        max_age in 5u64..400,
    ) {
        let s = seal(&rs, mode, &quiet, 5_000, max_age, 3);
        let views: Vec<UserChunkView> = s
            .store
            .get_chunks(&Query::All)
            .unwrap()
            .iter()
            .map(|r| UserChunkView::from_retrieved(r).unwrap())
            .collect();
        let streams: Vec<_> = s.store.streams().map(|i| i.tag.clone()).collect();
        let mut expected: BTreeMap<u8, usize> = BTreeMap::new();
        for r in &rs {
            if !quiet.contains(&(r.sensor.as_bytes()[3] - b'0')) {
                *expected.entry(r.device.as_bytes()[5]).or_default() += 1;
            }
        }
        for d in 0u8..6 {
            let report = verify_user(&dev(d), &views, &s.pk, Timestamp(0), s.end, streams.clone());
            prop_assert!(report.passed());
            let hits = report.matches.iter().filter(|m| m.state == SensorState::Active).count();
            let want = expected.get(&d).copied().unwrap_or(0);
            prop_assert_eq!(hits, want);
            prop_assert_eq!(report.claim == Claim::Present, want > 0);
        }
    }

    #[test]
    fn any_flipped_byte_is_caught(rs in readings(), pad in 0usize..4, at in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let key = KeyPair::generate(&mut rng);
        let links = ChunkLinks { prev: RandomString([1; 32]), current: RandomString([2; 32]), next: RandomString([3; 32]) };
        let records = compress_mixed(&rs.iter().map(|r| r.clone().with_state(SensorState::Active)).collect::<Vec<_>>());
        let padding = (0..pad).map(|i| notary_core::model::Digest([i as u8 + 1; 32])).collect();
        let c = seal_records(ChunkId::new(None, 4), SealMode::Entire, records, &links, &key, padding, false).unwrap();
        let mut bytes = encode_chunk(&c);
        prop_assert_eq!(decode_chunk(&bytes).unwrap(), c.clone());

        // The fake digests carry no meaning; every other byte does.
        let pads = c.records.len() * 32..(c.records.len() + pad) * 32;
        let digests_at = bytes.len() - notary_core::store::format::PROOF_TAIL_LEN - c.chain_digests.len() * 32;
        let i = at.index(bytes.len());
        prop_assume!(!pads.contains(&(i.wrapping_sub(digests_at))));
        bytes[i] ^= 1 << bit;
        let r = Retrieved {
            id: c.id.clone(),
            chunk: decode_chunk(&bytes).map_err(|e| e.to_string()),
            g_prev: Some(links.prev),
            g_next: Some(links.next),
        };
        prop_assert!(verify_chunk(&r, &key.public()).is_err());
    }
}

#[test]
fn per_user_service_returns_only_the_callers_bucket() {
    let rs: Vec<SensorReading> = (0..300u64).map(|t| SensorReading::new(dev((t % 6) as u8), sen((t % 5) as u8), Timestamp(10_000 + t))).collect();
    let s = seal(&rs, SealMode::PerUser, &[], 100_000, 100, 4);

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let sp = KeyPair::generate(&mut rng);
    let user = KeyPair::generate(&mut rng);
    let auditor = KeyPair::generate(&mut rng);
    let sp_pub = sp.public();
    let mut registry = VerifierRegistry::new();
    registry.register(b"dev-2".to_vec(), Role::User(dev(2)), user.public());
    registry.register(b"aud".to_vec(), Role::Auditor, auditor.public());
    let ctx = ServerContext { store_root: s.store.root().to_path_buf(), registry, sp_id: b"sp".to_vec(), sp_key: sp };
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || ake::serve(listener, Arc::new(ctx), Some(3)));

    let q = LogQuery::UserRange { from: Timestamp(0), to: s.end };
    let LogResponse::User { views, streams } = ake::fetch(addr, &sp_pub, b"dev-2", &user, &q).unwrap() else {
        panic!("expected user views");
    };
    let own = format!("user-{:04}", bucket_index(dev(2).as_bytes(), 4));
    assert!(!views.is_empty());
    assert!(views.iter().all(|v| v.id.stream.as_ref().map(|t| t.as_str()) == Some(own.as_str())));
    let report = verify_user(&dev(2), &views, &s.pk, Timestamp(0), s.end, streams.iter().map(|i| i.tag.clone()).collect());
    assert!(report.passed());
    assert_eq!(report.matches.len(), 50);

    let err = ake::fetch(addr, &sp_pub, b"dev-2", &user, &LogQuery::Chunks(Query::All)).unwrap_err();
    assert!(err.to_string().contains("not authorized"), "{err}");

    let LogResponse::Chunks { chunks, .. } = ake::fetch(addr, &sp_pub, b"aud", &auditor, &LogQuery::Chunks(Query::All)).unwrap() else {
        panic!("expected chunks");
    };
    assert_eq!(chunks.len(), s.store.len());
    server.join().unwrap().unwrap();
}
