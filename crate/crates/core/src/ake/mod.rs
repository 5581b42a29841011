//! Authenticated log retrieval: a SIGMA-style three-message key exchange
//! that keeps the verifier's identity off the wire, followed by one
//! encrypted query and response.

mod net;
mod sigma;
pub mod wire;

use std::collections::BTreeMap;
use std::io;

use thiserror::Error;

pub use net::{answer_query, fetch, handle_connection, run_initiator, serve, ServerContext};
pub use sigma::{msg1_init, msg2_respond, Authorized, Initiator, Responder};

use crate::crypto::{CryptoError, PublicKey};
use crate::model::{
    ChunkId, Digest, ProofForUser, RandomString, SensorState, SignatureBytes, StreamInfo, StreamTag, Timestamp,
    UserDigest,
};
use crate::store::{format, Query, Retrieved};
use crate::verify::UserChunkView;
use crate::model::DeviceId;
use wire::{lp, split_lp};

#[derive(Debug, Error)]
pub enum AkeError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error("peer aborted: {0}")]
    Remote(String),
    #[error("MAC check failed")]
    Mac,
    #[error("signature check failed")]
    Signature,
    #[error("unknown verifier")]
    UnknownVerifier,
    #[error("not authorized: {0}")]
    Unauthorized(&'static str),
    #[error("protocol state: {0}")]
    State(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("store: {0}")]
    Store(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Role {
    Auditor,
    /// A device owner, limited to user digests.
    User(DeviceId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registration {
    pub role: Role,
    pub key: PublicKey,
}

/// Registered verifiers, keyed by verifier id.
///
/// Text form, one per line: `<v_id> auditor <pubkey-hex>` or
/// `<v_id> user:<device-hex> <pubkey-hex>`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifierRegistry {
    entries: BTreeMap<Vec<u8>, Registration>,
}

impl VerifierRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, v_id: impl Into<Vec<u8>>, role: Role, key: PublicKey) {
        self.entries.insert(v_id.into(), Registration { role, key });
    }

    pub fn get(&self, v_id: &[u8]) -> Option<&Registration> {
        self.entries.get(v_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, reg) in &self.entries {
            let role = match &reg.role {
                Role::Auditor => "auditor".to_string(),
                Role::User(d) => format!("user:{}", d.to_hex()),
            };
            out.push_str(&format!("{} {} {}\n", String::from_utf8_lossy(id), role, reg.key.to_hex()));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut reg = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [id, role, key] = parts.as_slice() else {
                return Err(format!("line {}: expected `<v_id> <role> <pubkey>`", i + 1));
            };
            let role = match *role {
                "auditor" => Role::Auditor,
                r => match r.strip_prefix("user:") {
                    Some(d) => Role::User(DeviceId::from_hex(d).map_err(|e| format!("line {}: {e}", i + 1))?),
                    None => return Err(format!("line {}: unknown role {r:?}", i + 1)),
                },
            };
            let key = PublicKey::from_hex(key).map_err(|e| format!("line {}: {e}", i + 1))?;
            reg.register(id.as_bytes().to_vec(), role, key);
        }
        Ok(reg)
    }
}

/// What a verifier asks for once the session is established.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogQuery {
    /// Full chunks; auditors only.
    Chunks(Query),
    /// User digests of every chunk overlapping `[from, to]`.
    UserRange { from: Timestamp, to: Timestamp },
}

fn u64_field(v: u64) -> [u8; 8] {
    v.to_be_bytes()
}

fn read_u64(b: &[u8]) -> Result<u64, AkeError> {
    Ok(u64::from_be_bytes(b.try_into().map_err(|_| AkeError::Malformed("bad integer"))?))
}

fn tag_bytes(tag: &Option<StreamTag>) -> &[u8] {
    tag.as_ref().map(|t| t.as_str().as_bytes()).unwrap_or(&[])
}

fn read_tag(b: &[u8]) -> Result<Option<StreamTag>, AkeError> {
    if b.is_empty() {
        return Ok(None);
    }
    let s = std::str::from_utf8(b).map_err(|_| AkeError::Malformed("bad stream tag"))?;
    StreamTag::new(s).map(Some).map_err(|_| AkeError::Malformed("bad stream tag"))
}

fn parts(bytes: &[u8]) -> Result<Vec<&[u8]>, AkeError> {
    split_lp(bytes).ok_or(AkeError::Malformed("bad length-prefixed payload"))
}

impl LogQuery {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Self::Chunks(Query::All) => lp(&[&[0]]),
            Self::Chunks(Query::TimeRange { from, to }) => lp(&[&[1], &u64_field(from.0), &u64_field(to.0)]),
            Self::Chunks(Query::Stream { tag, from, to }) => {
                lp(&[&[2], tag_bytes(tag), &u64_field(*from), &u64_field(*to)])
            }
            Self::Chunks(Query::Ids(ids)) => {
                let items: Vec<Vec<u8>> = ids.iter().map(|id| lp(&[tag_bytes(&id.stream), &u64_field(id.index)])).collect();
                let mut all: Vec<&[u8]> = vec![&[3]];
                all.extend(items.iter().map(Vec::as_slice));
                lp(&all)
            }
            Self::UserRange { from, to } => lp(&[&[4], &u64_field(from.0), &u64_field(to.0)]),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AkeError> {
        let p = parts(bytes)?;
        let bad = AkeError::Malformed("bad query");
        match (p.first().copied(), p.len()) {
            (Some([0]), 1) => Ok(Self::Chunks(Query::All)),
            (Some([1]), 3) => Ok(Self::Chunks(Query::TimeRange { from: Timestamp(read_u64(p[1])?), to: Timestamp(read_u64(p[2])?) })),
            (Some([2]), 4) => Ok(Self::Chunks(Query::Stream { tag: read_tag(p[1])?, from: read_u64(p[2])?, to: read_u64(p[3])? })),
            (Some([3]), _) => {
                let ids = p[1..]
                    .iter()
                    .map(|item| {
                        let q = parts(item)?;
                        match q.as_slice() {
                            [tag, idx] => Ok(ChunkId::new(read_tag(tag)?, read_u64(idx)?)),
                            _ => Err(AkeError::Malformed("bad chunk id")),
                        }
                    })
                    .collect::<Result<_, _>>()?;
                Ok(Self::Chunks(Query::Ids(ids)))
            }
            (Some([4]), 3) => Ok(Self::UserRange { from: Timestamp(read_u64(p[1])?), to: Timestamp(read_u64(p[2])?) }),
            _ => Err(bad),
        }
    }
}

/// A chunk as sent to an auditor: the stored bytes verbatim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawChunk {
    pub id: ChunkId,
    pub bytes: Vec<u8>,
    pub g_prev: Option<RandomString>,
    pub g_next: Option<RandomString>,
}

impl RawChunk {
    pub fn into_retrieved(self) -> Retrieved {
        Retrieved {
            id: self.id,
            chunk: format::decode_chunk(&self.bytes).map_err(|e| e.to_string()),
            g_prev: self.g_prev,
            g_next: self.g_next,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogResponse {
    Chunks { streams: Vec<StreamInfo>, chunks: Vec<RawChunk> },
    User { streams: Vec<StreamInfo>, views: Vec<UserChunkView> },
}

fn opt_g(g: &Option<RandomString>) -> &[u8] {
    g.as_ref().map(|g| g.as_bytes().as_slice()).unwrap_or(&[])
}

fn read_opt_g(b: &[u8]) -> Result<Option<RandomString>, AkeError> {
    match b.len() {
        0 => Ok(None),
        32 => Ok(Some(RandomString(b.try_into().unwrap()))),
        _ => Err(AkeError::Malformed("bad random string")),
    }
}

fn encode_view(v: &UserChunkView) -> Vec<u8> {
    let mut entries = Vec::with_capacity(v.entries.len() * 41);
    for e in &v.entries {
        entries.extend_from_slice(e.o.as_bytes());
        entries.push(e.state.bit());
        entries.extend_from_slice(&e.time.to_be_bytes());
    }
    lp(&[
        tag_bytes(&v.id.stream),
        &u64_field(v.id.index),
        &[v.last_in_stream as u8],
        v.pu.g.as_bytes(),
        &v.pu.signature.0,
        opt_g(&v.g_prev),
        opt_g(&v.g_next),
        &entries,
    ])
}

fn decode_view(bytes: &[u8]) -> Result<UserChunkView, AkeError> {
    let p = parts(bytes)?;
    let [tag, idx, last, g, sig, gp, gn, entries] = p.as_slice() else {
        return Err(AkeError::Malformed("bad user view"));
    };
    if entries.len() % 41 != 0 || g.len() != 32 || sig.len() != 64 || last.len() != 1 {
        return Err(AkeError::Malformed("bad user view"));
    }
    let entries = entries
        .chunks(41)
        .map(|e| {
            Ok(UserDigest {
                o: Digest(e[..32].try_into().unwrap()),
                state: SensorState::from_bit(e[32]).ok_or(AkeError::Malformed("bad state"))?,
                time: Timestamp(read_u64(&e[33..])?),
            })
        })
        .collect::<Result<_, AkeError>>()?;
    Ok(UserChunkView {
        id: ChunkId::new(read_tag(tag)?, read_u64(idx)?),
        last_in_stream: last[0] == 1,
        entries,
        pu: ProofForUser { g: RandomString((*g).try_into().unwrap()), signature: SignatureBytes((*sig).try_into().unwrap()) },
        g_prev: read_opt_g(gp)?,
        g_next: read_opt_g(gn)?,
    })
}

impl LogResponse {
    pub fn streams(&self) -> &[StreamInfo] {
        match self {
            Self::Chunks { streams, .. } | Self::User { streams, .. } => streams,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let streams: Vec<Vec<u8>> = self.streams().iter().map(format::encode_stream).collect();
        let stream_refs: Vec<&[u8]> = streams.iter().map(Vec::as_slice).collect();
        let (kind, items): (u8, Vec<Vec<u8>>) = match self {
            Self::Chunks { chunks, .. } => (
                0,
                chunks
                    .iter()
                    .map(|c| lp(&[tag_bytes(&c.id.stream), &u64_field(c.id.index), &c.bytes, opt_g(&c.g_prev), opt_g(&c.g_next)]))
                    .collect(),
            ),
            Self::User { views, .. } => (1, views.iter().map(encode_view).collect()),
        };
        let item_refs: Vec<&[u8]> = items.iter().map(Vec::as_slice).collect();
        lp(&[&[kind], &lp(&stream_refs), &lp(&item_refs)])
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AkeError> {
        let p = parts(bytes)?;
        let [kind, streams, items] = p.as_slice() else {
            return Err(AkeError::Malformed("bad response"));
        };
        let streams = parts(streams)?
            .into_iter()
            .map(|s| format::decode_stream(s).map_err(|_| AkeError::Malformed("bad stream manifest")))
            .collect::<Result<Vec<_>, _>>()?;
        let items = parts(items)?;
        match *kind {
            [0] => {
                let chunks = items
                    .into_iter()
                    .map(|it| {
                        let q = parts(it)?;
                        let [tag, idx, body, gp, gn] = q.as_slice() else {
                            return Err(AkeError::Malformed("bad chunk item"));
                        };
                        Ok(RawChunk {
                            id: ChunkId::new(read_tag(tag)?, read_u64(idx)?),
                            bytes: body.to_vec(),
                            g_prev: read_opt_g(gp)?,
                            g_next: read_opt_g(gn)?,
                        })
                    })
                    .collect::<Result<_, _>>()?;
                Ok(Self::Chunks { streams, chunks })
            }
            [1] => Ok(Self::User { streams, views: items.into_iter().map(decode_view).collect::<Result<_, _>>()? }),
            _ => Err(AkeError::Malformed("bad response kind")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn query_round_trip() {
        let qs = [
            LogQuery::Chunks(Query::All),
            LogQuery::Chunks(Query::TimeRange { from: Timestamp(5), to: Timestamp(9) }),
            LogQuery::Chunks(Query::Stream { tag: Some(StreamTag::new("user-0001").unwrap()), from: 1, to: 4 }),
            LogQuery::Chunks(Query::Ids(vec![ChunkId::new(None, 3), ChunkId::new(Some(StreamTag::new("x").unwrap()), 1)])),
            LogQuery::UserRange { from: Timestamp(0), to: Timestamp(u64::MAX) },
        ];
        for q in qs {
            assert_eq!(LogQuery::decode(&q.encode()).unwrap(), q);
        }
        assert!(LogQuery::decode(&lp(&[&[9]])).is_err());
    }

    #[test]
    fn response_round_trip() {
        let streams = vec![StreamInfo { tag: None, mode: crate::model::SealMode::Mixed, bucket_count: 1, seed: RandomString([4; 32]) }];
        let r = LogResponse::Chunks {
            streams: streams.clone(),
            chunks: vec![RawChunk { id: ChunkId::new(None, 2), bytes: vec![1, 2, 3], g_prev: Some(RandomString([1; 32])), g_next: None }],
        };
        assert_eq!(LogResponse::decode(&r.encode()).unwrap(), r);
        let v = UserChunkView {
            id: ChunkId::new(None, 0),
            last_in_stream: true,
            entries: vec![UserDigest { o: Digest([7; 32]), state: SensorState::Active, time: Timestamp(3) }],
            pu: ProofForUser { g: RandomString([2; 32]), signature: SignatureBytes([5; 64]) },
            g_prev: None,
            g_next: Some(RandomString([3; 32])),
        };
        let r = LogResponse::User { streams, views: vec![v] };
        assert_eq!(LogResponse::decode(&r.encode()).unwrap(), r);
    }

    #[test]
    fn registry_text_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut reg = VerifierRegistry::new();
        reg.register(b"auditor".to_vec(), Role::Auditor, KeyPair::generate(&mut rng).public());
        reg.register(b"alice".to_vec(), Role::User(DeviceId::from_hex("a1b2c3d4e5f6").unwrap()), KeyPair::generate(&mut rng).public());
        assert_eq!(VerifierRegistry::from_text(&reg.to_text()).unwrap(), reg);
        assert!(VerifierRegistry::from_text("x boss 00").is_err());
    }
}
