//! Auditor and user verification of retrieved chunks.

use std::collections::BTreeMap;
use std::fmt;

use crate::crypto::{self, PublicKey};
use crate::model::{
    encode_user_preimage, stream_name, ChunkId, ChunkLinks, DeviceId, ProofForUser, RandomString, SensorState,
    StreamTag, Timestamp, UserDigest,
};
use crate::sealing::{chain_link, fold_user_digests, pi_message, pu_message};
use crate::store::Retrieved;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FailReason {
    Format(String),
    MissingNeighbor { prev: bool, next: bool },
    /// First record whose chain digest does not recompute.
    Link(usize),
    Signature,
    UserProof,
    MissingChunk { stream: String, index: u64 },
    MissingStream(String),
    /// The returned chunks do not provably cover the requested range.
    Coverage { stream: String, reason: &'static str },
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Format(e) => write!(f, "format: {e}"),
            Self::MissingNeighbor { prev, next } => {
                write!(f, "missing neighbour string (prev: {prev}, next: {next})")
            }
            Self::Link(i) => write!(f, "hash chain breaks at record {i}"),
            Self::Signature => write!(f, "proof of integrity does not verify"),
            Self::UserProof => write!(f, "proof for users does not verify"),
            Self::MissingChunk { stream, index } => write!(f, "chunk {stream}#{index} missing"),
            Self::MissingStream(s) => write!(f, "stream {s} missing"),
            Self::Coverage { stream, reason } => write!(f, "stream {stream}: {reason}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkVerdict {
    pub id: ChunkId,
    pub outcome: Result<(), FailReason>,
}

/// What a set of returned chunks is supposed to cover.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Only the chunks themselves; no completeness check.
    Chunks,
    /// Index range `[from, to]` of one stream.
    StreamRange { tag: Option<StreamTag>, from: u64, to: u64 },
    /// Time range `[from, to]` over every listed stream. Responses carry the
    /// chunk just outside each end so that completeness can be checked.
    TimeRange { from: Timestamp, to: Timestamp, streams: Vec<Option<StreamTag>> },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub chunks: Vec<ChunkVerdict>,
    pub range_failures: Vec<FailReason>,
    pub records_checked: u64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.range_failures.is_empty() && self.chunks.iter().all(|c| c.outcome.is_ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (Option<&ChunkId>, &FailReason)> {
        self.chunks
            .iter()
            .filter_map(|c| c.outcome.as_ref().err().map(|e| (Some(&c.id), e)))
            .chain(self.range_failures.iter().map(|e| (None, e)))
    }
}

fn links(g_prev: Option<RandomString>, g: RandomString, g_next: Option<RandomString>) -> Result<ChunkLinks, FailReason> {
    match (g_prev, g_next) {
        (Some(prev), Some(next)) => Ok(ChunkLinks { prev, current: g, next }),
        (p, n) => Err(FailReason::MissingNeighbor { prev: p.is_none(), next: n.is_none() }),
    }
}

/// Full check of one chunk: chain, PI, then PU.
pub fn verify_chunk(r: &Retrieved, sealer: &PublicKey) -> Result<(), FailReason> {
    let c = r.chunk.as_ref().map_err(|e| FailReason::Format(e.clone()))?;
    if c.records.is_empty() || c.chain_digests.len() != c.records.len() + c.pi.pad_count as usize {
        return Err(FailReason::Format("record and digest counts disagree".into()));
    }
    let l = links(r.g_prev, c.pi.g, r.g_next)?;
    let eoc = l.end_of_chunk();
    let mut prev = crypto::genesis_digest();
    for (i, rec) in c.records.iter().enumerate() {
        let h = chain_link(rec, &prev);
        if h != c.chain_digests[i] {
            return Err(FailReason::Link(i));
        }
        prev = h;
    }
    if !crypto::verify_sig(sealer, &pi_message(&prev, &eoc, c.pi.pad_count), &c.pi.signature.0) {
        return Err(FailReason::Signature);
    }
    let hu_end = fold_user_digests(&c.user_digests);
    if c.pu.g != c.pi.g || !crypto::verify_sig(sealer, &pu_message(&hu_end, &eoc), &c.pu.signature.0) {
        return Err(FailReason::UserProof);
    }
    Ok(())
}

struct Span {
    id: ChunkId,
    last_in_stream: bool,
    times: Option<(Timestamp, Timestamp)>,
}

fn check_scope(spans: &[Span], scope: &Scope) -> Vec<FailReason> {
    let mut by_stream: BTreeMap<String, Vec<&Span>> = BTreeMap::new();
    for s in spans {
        by_stream.entry(stream_name(s.id.stream.as_ref()).to_string()).or_default().push(s);
    }
    for v in by_stream.values_mut() {
        v.sort_by_key(|s| s.id.index);
    }
    let mut out = Vec::new();
    match scope {
        Scope::Chunks => {}
        Scope::StreamRange { tag, from, to } => {
            let name = stream_name(tag.as_ref()).to_string();
            let v = by_stream.get(&name).map(Vec::as_slice).unwrap_or(&[]);
            let have: std::collections::BTreeSet<u64> = v.iter().map(|s| s.id.index).collect();
            for index in *from..=*to {
                if !have.contains(&index) {
                    out.push(FailReason::MissingChunk { stream: name.clone(), index });
                }
            }
            if by_stream.keys().any(|k| *k != name) {
                out.push(FailReason::Coverage { stream: name, reason: "response contains chunks of other streams" });
            }
        }
        Scope::TimeRange { from, to, streams } => {
            for tag in streams {
                let name = stream_name(tag.as_ref()).to_string();
                let Some(v) = by_stream.get(&name) else {
                    out.push(FailReason::MissingStream(name));
                    continue;
                };
                for w in v.windows(2) {
                    for index in w[0].id.index + 1..w[1].id.index {
                        out.push(FailReason::MissingChunk { stream: name.clone(), index });
                    }
                }
                let first = v[0];
                let last = v[v.len() - 1];
                let start_ok = first.id.index == 0 || first.times.is_some_and(|(_, hi)| hi < *from);
                if !start_ok {
                    out.push(FailReason::Coverage { stream: name.clone(), reason: "range start not covered" });
                }
                let end_ok = last.last_in_stream || last.times.is_some_and(|(lo, _)| lo > *to);
                if !end_ok {
                    out.push(FailReason::Coverage { stream: name, reason: "range end not covered" });
                }
            }
        }
    }
    out
}

/// Auditor verification: every chunk must pass all checks and the set
/// must cover `scope`.
pub fn verify_auditor(chunks: &[Retrieved], sealer: &PublicKey, scope: &Scope) -> AuditReport {
    let mut report = AuditReport::default();
    let mut spans = Vec::with_capacity(chunks.len());
    for r in chunks {
        let outcome = verify_chunk(r, sealer);
        if let Ok(c) = &r.chunk {
            report.records_checked += c.records.len() as u64;
        }
        spans.push(Span {
            id: r.id.clone(),
            last_in_stream: r.chunk.as_ref().is_ok_and(|c| c.last_in_stream),
            times: r.chunk.as_ref().ok().and_then(|c| c.time_range()),
        });
        report.chunks.push(ChunkVerdict { id: r.id.clone(), outcome });
    }
    report.range_failures = check_scope(&spans, scope);
    report
}

/// What a user receives for one chunk: no cleartext, only the user digests
/// and the proof binding them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserChunkView {
    pub id: ChunkId,
    pub last_in_stream: bool,
    pub entries: Vec<UserDigest>,
    pub pu: ProofForUser,
    pub g_prev: Option<RandomString>,
    pub g_next: Option<RandomString>,
}

impl UserChunkView {
    pub fn from_retrieved(r: &Retrieved) -> Result<Self, String> {
        let c = r.chunk.as_ref().map_err(Clone::clone)?;
        Ok(Self {
            id: r.id.clone(),
            last_in_stream: c.last_in_stream,
            entries: c.user_digests.clone(),
            pu: c.pu,
            g_prev: r.g_prev,
            g_next: r.g_next,
        })
    }

    fn times(&self) -> Option<(Timestamp, Timestamp)> {
        let lo = self.entries.iter().map(|e| e.time).min()?;
        let hi = self.entries.iter().map(|e| e.time).max()?;
        Some((lo, hi))
    }
}

pub fn verify_user_chunk(v: &UserChunkView, sealer: &PublicKey) -> Result<(), FailReason> {
    if v.entries.is_empty() {
        return Err(FailReason::Format("no user digests".into()));
    }
    let l = links(v.g_prev, v.pu.g, v.g_next)?;
    let hu_end = fold_user_digests(&v.entries);
    if !crypto::verify_sig(sealer, &pu_message(&hu_end, &l.end_of_chunk()), &v.pu.signature.0) {
        return Err(FailReason::UserProof);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Claim {
    /// At least one active reading of the device lies in the range.
    Present,
    Absent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserMatch {
    pub chunk: ChunkId,
    pub time: Timestamp,
    pub state: SensorState,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserReport {
    pub chunks: Vec<ChunkVerdict>,
    pub range_failures: Vec<FailReason>,
    pub matches: Vec<UserMatch>,
    pub claim: Claim,
}

impl UserReport {
    pub fn passed(&self) -> bool {
        self.range_failures.is_empty() && self.chunks.iter().all(|c| c.outcome.is_ok())
    }
}

/// User verification: checks every PU, then looks for the device's own
/// readings among the user digests within `[from, to]`.
pub fn verify_user(
    device: &DeviceId,
    views: &[UserChunkView],
    sealer: &PublicKey,
    from: Timestamp,
    to: Timestamp,
    streams: Vec<Option<StreamTag>>,
) -> UserReport {
    let mut chunks = Vec::with_capacity(views.len());
    let mut spans = Vec::with_capacity(views.len());
    let mut matches = Vec::new();
    for v in views {
        let outcome = verify_user_chunk(v, sealer);
        if outcome.is_ok() {
            for e in &v.entries {
                if e.time < from || e.time > to {
                    continue;
                }
                if crypto::hash(&encode_user_preimage(device.as_bytes(), e.time)) == e.o {
                    matches.push(UserMatch { chunk: v.id.clone(), time: e.time, state: e.state });
                }
            }
        }
        spans.push(Span { id: v.id.clone(), last_in_stream: v.last_in_stream, times: v.times() });
        chunks.push(ChunkVerdict { id: v.id.clone(), outcome });
    }
    matches.sort_by_key(|m| m.time);
    let claim = if matches.iter().any(|m| m.state == SensorState::Active) { Claim::Present } else { Claim::Absent };
    let range_failures = check_scope(&spans, &Scope::TimeRange { from, to, streams });
    UserReport { chunks, range_failures, matches, claim }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::model::{SealMode, SensorId, SensorReading, StoredRecord};
    use crate::sealing::{compress_mixed, seal_records};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn g(b: u8) -> RandomString {
        RandomString([b; 32])
    }

    fn setup() -> (KeyPair, Vec<Retrieved>, DeviceId) {
        let key = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(2));
        let dev = DeviceId::new(vec![0xaa; 6]).unwrap();
        let other = DeviceId::new(vec![0xbb; 6]).unwrap();
        let s = SensorId::new(b"ap".to_vec()).unwrap();
        let gs = [g(0), g(1), g(2), g(3), g(0)];
        let mut out = Vec::new();
        for i in 0..3u64 {
            let readings: Vec<_> = (0..4)
                .map(|k| {
                    let d = if k == 1 && i == 1 { dev.clone() } else { other.clone() };
                    SensorReading::new(d, s.clone(), Timestamp(i * 10 + k)).with_state(SensorState::Active)
                })
                .collect();
            let l = ChunkLinks { prev: gs[i as usize], current: gs[i as usize + 1], next: gs[i as usize + 2] };
            let c = seal_records(ChunkId::new(None, i), SealMode::Entire, compress_mixed(&readings), &l, &key, vec![], i == 2)
                .unwrap();
            out.push(Retrieved { id: c.id.clone(), chunk: Ok(c), g_prev: Some(l.prev), g_next: Some(l.next) });
        }
        (key, out, dev)
    }

    #[test]
    fn honest_chunks_pass() {
        let (key, rs, _) = setup();
        let scope = Scope::StreamRange { tag: None, from: 0, to: 2 };
        let rep = verify_auditor(&rs, &key.public(), &scope);
        assert!(rep.passed(), "{:?}", rep);
        assert_eq!(rep.records_checked, 12);
    }

    #[test]
    fn edited_record_breaks_link() {
        let (key, mut rs, _) = setup();
        if let Ok(c) = &mut rs[1].chunk {
            if let StoredRecord::Full { time, .. } = &mut c.records[2] {
                time.0 += 1;
            }
        }
        let rep = verify_auditor(&rs, &key.public(), &Scope::Chunks);
        assert_eq!(rep.chunks[1].outcome, Err(FailReason::Link(2)));
    }

    #[test]
    fn wrong_neighbour_breaks_signature() {
        let (key, mut rs, _) = setup();
        rs[1].g_next = Some(g(9));
        assert_eq!(verify_chunk(&rs[1], &key.public()), Err(FailReason::Signature));
        rs[1].g_next = None;
        assert_eq!(verify_chunk(&rs[1], &key.public()), Err(FailReason::MissingNeighbor { prev: false, next: true }));
    }

    #[test]
    fn gap_in_stream_range_is_reported() {
        let (key, mut rs, _) = setup();
        rs.remove(1);
        let rep = verify_auditor(&rs, &key.public(), &Scope::StreamRange { tag: None, from: 0, to: 2 });
        assert!(rep.range_failures.contains(&FailReason::MissingChunk { stream: "main".into(), index: 1 }));
    }

    #[test]
    fn user_finds_own_reading() {
        let (key, rs, dev) = setup();
        let views: Vec<_> = rs.iter().map(|r| UserChunkView::from_retrieved(r).unwrap()).collect();
        let rep = verify_user(&dev, &views, &key.public(), Timestamp(0), Timestamp(25), vec![None]);
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.claim, Claim::Present);
        assert_eq!(rep.matches.len(), 1);
        assert_eq!(rep.matches[0].time, Timestamp(11));
        let rep = verify_user(&dev, &views, &key.public(), Timestamp(12), Timestamp(25), vec![None]);
        assert_eq!(rep.claim, Claim::Absent);
    }

    #[test]
    fn user_detects_dropped_entry() {
        let (key, rs, dev) = setup();
        let mut views: Vec<_> = rs.iter().map(|r| UserChunkView::from_retrieved(r).unwrap()).collect();
        views[1].entries.remove(1);
        let rep = verify_user(&dev, &views, &key.public(), Timestamp(0), Timestamp(25), vec![None]);
        assert_eq!(rep.chunks[1].outcome, Err(FailReason::UserProof));
        assert!(!rep.passed());
    }
}
