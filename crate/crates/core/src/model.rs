//! Domain types shared by every layer, and the canonical byte encodings of
//! everything that gets hashed or signed.
//!
//! Chain inputs use a length-prefixed layout so that two distinct records can
//! never produce the same preimage:
//!
//! ```text
//! Full:      len(d) d | len(s) s | 0x01 | time(8) | [len(p) p] | len(h) h
//! Tombstone: len(s) s | 0x00 | time(8) | len(h) h
//! Marker:    len(0)   | 0x00 | time(8) | len(h) h
//! ```
//!
//! Lengths are 4-byte big-endian. The params field is only emitted when the
//! reading carries params.

use std::fmt;

use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const MAX_ID_LEN: usize = 32;
pub const MAX_PARAMS_LEN: usize = u16::MAX as usize;
pub const MAX_TAG_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("identifier must be 1..={MAX_ID_LEN} bytes, got {0}")]
    IdLength(usize),
    #[error("params exceed {MAX_PARAMS_LEN} bytes")]
    ParamsTooLong,
    #[error("invalid stream tag {0:?}")]
    StreamTag(String),
    #[error("malformed chain input: {0}")]
    Decode(&'static str),
}

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn xor(&self, other: &[u8; DIGEST_LEN]) -> Digest {
        Digest(xor32(&self.0, other))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", hex::encode(self.0))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

fn xor32(a: &[u8; 32], b: &[u8; 32]) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b.iter())) {
        *o = x ^ y;
    }
    out
}

fn check_id(bytes: &[u8]) -> Result<(), ModelError> {
    if bytes.is_empty() || bytes.len() > MAX_ID_LEN {
        return Err(ModelError::IdLength(bytes.len()));
    }
    Ok(())
}

/// Opaque user-device identifier (a MAC address in the WiFi deployment).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceId(Vec<u8>);

impl DeviceId {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, ModelError> {
        let bytes = bytes.into();
        check_id(&bytes)?;
        Ok(Self(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, ModelError> {
        let bytes = hex::decode(s.trim()).map_err(|_| ModelError::Decode("device id is not hex"))?;
        Self::new(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({})", self.to_hex())
    }
}

/// Opaque sensor identifier (an access-point name).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorId(Vec<u8>);

impl SensorId {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, ModelError> {
        let bytes = bytes.into();
        check_id(&bytes)?;
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) => write!(f, "SensorId({s:?})"),
            Err(_) => write!(f, "SensorId({})", hex::encode(&self.0)),
        }
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

/// UTC seconds since the epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn secs(self) -> u64 {
        self.0
    }

    pub fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whether a reading may be kept (`Active`) or must be filtered (`Passive`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SensorState {
    Passive = 0,
    Active = 1,
}

impl SensorState {
    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Self::Passive),
            1 => Some(Self::Active),
            _ => None,
        }
    }
}

/// One connectivity event. `state` is assigned by policy evaluation inside the
/// sealer; freshly decoded readings start out `Passive`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorReading {
    pub device: DeviceId,
    pub sensor: SensorId,
    pub state: SensorState,
    pub time: Timestamp,
    /// Opaque event payload, empty when absent.
    pub params: Vec<u8>,
}

impl SensorReading {
    pub fn new(device: DeviceId, sensor: SensorId, time: Timestamp) -> Self {
        Self { device, sensor, state: SensorState::Passive, time, params: Vec::new() }
    }

    pub fn with_state(mut self, state: SensorState) -> Self {
        self.state = state;
        self
    }

    pub fn with_params(mut self, params: impl Into<Vec<u8>>) -> Self {
        self.params = params.into();
        self
    }
}

/// Label of an independent chunk stream. Single-stream modes use no tag;
/// bucketed modes use one tag per bucket.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamTag(String);

impl StreamTag {
    /// Reserved file-name stem for the untagged stream.
    pub const MAIN: &'static str = "main";

    pub fn new(tag: impl Into<String>) -> Result<Self, ModelError> {
        let tag = tag.into();
        let ok = !tag.is_empty()
            && tag.len() <= MAX_TAG_LEN
            && tag != Self::MAIN
            && tag.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        if ok {
            Ok(Self(tag))
        } else {
            Err(ModelError::StreamTag(tag))
        }
    }

    pub fn bucket(prefix: &str, bucket: u32) -> Self {
        Self(format!("{prefix}-{bucket:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// File-name stem for an optional stream tag.
pub fn stream_name(tag: Option<&StreamTag>) -> &str {
    tag.map_or(StreamTag::MAIN, StreamTag::as_str)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkId {
    pub stream: Option<StreamTag>,
    pub index: u64,
}

impl ChunkId {
    pub fn new(stream: Option<StreamTag>, index: u64) -> Self {
        Self { stream, index }
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", stream_name(self.stream.as_ref()), self.index)
    }
}

/// 256-bit per-chunk random string, only ever drawn by the sealer.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RandomString(pub [u8; DIGEST_LEN]);

impl RandomString {
    pub const ZERO: RandomString = RandomString([0; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

impl fmt::Debug for RandomString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RandomString({})", hex::encode(self.0))
    }
}

/// XOR of the random strings of a chunk and its two neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EndOfChunk(pub [u8; DIGEST_LEN]);

impl EndOfChunk {
    pub fn from_neighbors(prev: &RandomString, current: &RandomString, next: &RandomString) -> Self {
        Self(xor32(&xor32(&prev.0, &current.0), &next.0))
    }
}

/// The three random strings bound into a chunk's proofs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkLinks {
    pub prev: RandomString,
    pub current: RandomString,
    pub next: RandomString,
}

impl ChunkLinks {
    pub fn end_of_chunk(&self) -> EndOfChunk {
        EndOfChunk::from_neighbors(&self.prev, &self.current, &self.next)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SealMode {
    Entire = 0,
    Mixed = 1,
    PerSensor = 2,
    PerUser = 3,
}

impl SealMode {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Entire),
            1 => Some(Self::Mixed),
            2 => Some(Self::PerSensor),
            3 => Some(Self::PerUser),
            _ => None,
        }
    }

    pub fn is_bucketed(self) -> bool {
        matches!(self, Self::PerSensor | Self::PerUser)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Entire => "entire",
            Self::Mixed => "mixed",
            Self::PerSensor => "per-sensor",
            Self::PerUser => "per-user",
        }
    }
}

impl std::str::FromStr for SealMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entire" => Ok(Self::Entire),
            "mixed" => Ok(Self::Mixed),
            "per-sensor" | "per_sensor" => Ok(Self::PerSensor),
            "per-user" | "per_user" => Ok(Self::PerUser),
            other => Err(format!("unknown seal mode {other:?}")),
        }
    }
}

/// What the sealer persists for one ingested reading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoredRecord {
    /// An active reading, kept in cleartext.
    Full { device: DeviceId, sensor: SensorId, time: Timestamp, params: Vec<u8> },
    /// First reading of a run of filtered readings, with the device removed.
    Tombstone { sensor: SensorId, time: Timestamp },
    /// Stand-in for a chunk that closed with nothing buffered.
    Marker { time: Timestamp },
}

impl StoredRecord {
    pub fn full(reading: &SensorReading) -> Self {
        Self::Full {
            device: reading.device.clone(),
            sensor: reading.sensor.clone(),
            time: reading.time,
            params: reading.params.clone(),
        }
    }

    pub fn tombstone(reading: &SensorReading) -> Self {
        Self::Tombstone { sensor: reading.sensor.clone(), time: reading.time }
    }

    pub fn state(&self) -> SensorState {
        match self {
            Self::Full { .. } => SensorState::Active,
            Self::Tombstone { .. } | Self::Marker { .. } => SensorState::Passive,
        }
    }

    pub fn time(&self) -> Timestamp {
        match self {
            Self::Full { time, .. } | Self::Tombstone { time, .. } | Self::Marker { time } => *time,
        }
    }

    pub fn device(&self) -> Option<&DeviceId> {
        match self {
            Self::Full { device, .. } => Some(device),
            _ => None,
        }
    }

    /// The identifier mixed with time into the per-reading user digest.
    pub fn user_id_bytes(&self) -> &[u8] {
        match self {
            Self::Full { device, .. } => device.as_bytes(),
            Self::Tombstone { sensor, .. } => sensor.as_bytes(),
            Self::Marker { .. } => &[],
        }
    }
}

/// Per-reading entry of the user-verifiable view: `o = H(id || time)` paired
/// with the reading's state and time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UserDigest {
    pub o: Digest,
    pub state: SensorState,
    pub time: Timestamp,
}

/// Ed25519 signature bytes.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SignatureBytes(pub [u8; 64]);

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}…)", hex::encode(&self.0[..8]))
    }
}

/// Signed binding of the chain tail to the end-of-chunk string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProofOfIntegrity {
    pub g: RandomString,
    pub signature: SignatureBytes,
    /// Trailing fake digests appended to the chain section.
    pub pad_count: u32,
}

/// Signed binding of the XOR-folded user digests to the end-of-chunk string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProofForUser {
    pub g: RandomString,
    pub signature: SignatureBytes,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedChunk {
    pub id: ChunkId,
    pub mode: SealMode,
    /// Set on the final chunk of a stream, whose successor string is the seed.
    pub last_in_stream: bool,
    pub records: Vec<StoredRecord>,
    /// One digest per record, followed by `pi.pad_count` fakes.
    pub chain_digests: Vec<Digest>,
    pub user_digests: Vec<UserDigest>,
    pub pi: ProofOfIntegrity,
    pub pu: ProofForUser,
}

impl SealedChunk {
    pub fn g(&self) -> RandomString {
        self.pi.g
    }

    pub fn time_range(&self) -> Option<(Timestamp, Timestamp)> {
        let first = self.records.iter().map(StoredRecord::time).min()?;
        let last = self.records.iter().map(StoredRecord::time).max()?;
        Some((first, last))
    }

    pub fn is_marker(&self) -> bool {
        matches!(self.records.as_slice(), [StoredRecord::Marker { .. }])
    }
}

/// Per-stream metadata fixed when the sealer opens a stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamInfo {
    pub tag: Option<StreamTag>,
    pub mode: SealMode,
    pub bucket_count: u32,
    /// Substitute random string at both ends of the stream.
    pub seed: RandomString,
}

fn put_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

/// Preimage of one hash-chain link.
pub fn encode_chain_input(record: &StoredRecord, prev: &Digest) -> Vec<u8> {
    let mut out = Vec::with_capacity(96);
    match record {
        StoredRecord::Full { device, sensor, time, params } => {
            put_field(&mut out, device.as_bytes());
            put_field(&mut out, sensor.as_bytes());
            out.push(SensorState::Active.bit());
            out.extend_from_slice(&time.to_be_bytes());
            if !params.is_empty() {
                put_field(&mut out, params);
            }
        }
        StoredRecord::Tombstone { sensor, time } => {
            put_field(&mut out, sensor.as_bytes());
            out.push(SensorState::Passive.bit());
            out.extend_from_slice(&time.to_be_bytes());
        }
        StoredRecord::Marker { time } => {
            put_field(&mut out, &[]);
            out.push(SensorState::Passive.bit());
            out.extend_from_slice(&time.to_be_bytes());
        }
    }
    put_field(&mut out, prev.as_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::Decode("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn field(&mut self) -> Result<&'a [u8], ModelError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        self.take(len)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Inverse of [`encode_chain_input`].
pub fn decode_chain_input(bytes: &[u8]) -> Result<(StoredRecord, Digest), ModelError> {
    // After the leading field a tombstone or marker has exactly
    // state(1) + time(8) + len(4) + digest(32) bytes left; a full record has
    // at least a second length-prefixed field on top of that.
    const SHORT_TAIL: usize = 1 + 8 + 4 + DIGEST_LEN;
    let mut cur = Cursor { buf: bytes };
    let first = cur.field()?;
    let record = if cur.buf.len() == SHORT_TAIL {
        if cur.u8()? != SensorState::Passive.bit() {
            return Err(ModelError::Decode("bad state byte"));
        }
        let time = Timestamp(cur.u64()?);
        if first.is_empty() {
            StoredRecord::Marker { time }
        } else {
            StoredRecord::Tombstone { sensor: SensorId::new(first.to_vec())?, time }
        }
    } else {
        let device = DeviceId::new(first.to_vec())?;
        let sensor = SensorId::new(cur.field()?.to_vec())?;
        if cur.u8()? != SensorState::Active.bit() {
            return Err(ModelError::Decode("bad state byte"));
        }
        let time = Timestamp(cur.u64()?);
        let params = if cur.buf.len() > 4 + DIGEST_LEN {
            let p = cur.field()?;
            if p.is_empty() {
                return Err(ModelError::Decode("explicit empty params"));
            }
            p.to_vec()
        } else {
            Vec::new()
        };
        StoredRecord::Full { device, sensor, time, params }
    };
    let prev = cur.field()?;
    if prev.len() != DIGEST_LEN || !cur.buf.is_empty() {
        return Err(ModelError::Decode("bad trailing digest"));
    }
    Ok((record, Digest(prev.try_into().unwrap())))
}

/// Preimage of `o = H(id || time)`.
pub fn encode_user_preimage(id: &[u8], time: Timestamp) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + id.len() + 8);
    put_field(&mut out, id);
    out.extend_from_slice(&time.to_be_bytes());
    out
}

/// Preimage of `hu = H(o || state)`.
pub fn encode_user_link(o: &Digest, state: SensorState) -> [u8; 4 + DIGEST_LEN + 1] {
    let mut out = [0u8; 4 + DIGEST_LEN + 1];
    out[..4].copy_from_slice(&(DIGEST_LEN as u32).to_be_bytes());
    out[4..4 + DIGEST_LEN].copy_from_slice(o.as_bytes());
    out[4 + DIGEST_LEN] = state.bit();
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dev(b: &[u8]) -> DeviceId {
        DeviceId::new(b.to_vec()).unwrap()
    }

    fn sen(b: &[u8]) -> SensorId {
        SensorId::new(b.to_vec()).unwrap()
    }

    #[test]
    fn id_bounds() {
        assert!(DeviceId::new(vec![]).is_err());
        assert!(DeviceId::new(vec![0; 33]).is_err());
        assert!(DeviceId::new(vec![0; 32]).is_ok());
        assert!(SensorId::new(Vec::new()).is_err());
    }

    #[test]
    fn stream_tag_rejects_reserved_and_paths() {
        assert!(StreamTag::new("main").is_err());
        assert!(StreamTag::new("../x").is_err());
        assert!(StreamTag::new("").is_err());
        assert_eq!(StreamTag::bucket("sensor", 7).as_str(), "sensor-0007");
    }

    #[test]
    fn full_record_golden_bytes() {
        let prev = Digest([0xAB; 32]);
        let rec = StoredRecord::Full {
            device: dev(&[0xAA]),
            sensor: sen(b"S1"),
            time: Timestamp(0),
            params: vec![],
        };
        let mut expected = vec![0, 0, 0, 1, 0xAA, 0, 0, 0, 2, b'S', b'1', 0x01];
        expected.extend_from_slice(&[0; 8]);
        expected.extend_from_slice(&[0, 0, 0, 0x20]);
        expected.extend_from_slice(&[0xAB; 32]);
        assert_eq!(encode_chain_input(&rec, &prev), expected);
    }

    #[test]
    fn tombstone_has_four_fields() {
        let prev = Digest([1; 32]);
        let rec = StoredRecord::Tombstone { sensor: sen(b"S1"), time: Timestamp(7) };
        let mut expected = vec![0, 0, 0, 2, b'S', b'1', 0x00];
        expected.extend_from_slice(&7u64.to_be_bytes());
        expected.extend_from_slice(&[0, 0, 0, 0x20]);
        expected.extend_from_slice(&[1; 32]);
        assert_eq!(encode_chain_input(&rec, &prev), expected);
    }

    #[test]
    fn end_of_chunk_identity() {
        let g = RandomString([0x5A; 32]);
        let eoc = EndOfChunk::from_neighbors(&RandomString::ZERO, &g, &RandomString::ZERO);
        assert_eq!(eoc.0, g.0);
    }

    fn arb_id() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(any::<u8>(), 1..=MAX_ID_LEN)
    }

    pub(crate) fn arb_record() -> impl Strategy<Value = StoredRecord> {
        prop_oneof![
            (arb_id(), arb_id(), any::<u64>(), prop::collection::vec(any::<u8>(), 0..48)).prop_map(
                |(d, s, t, p)| StoredRecord::Full {
                    device: DeviceId::new(d).unwrap(),
                    sensor: SensorId::new(s).unwrap(),
                    time: Timestamp(t),
                    params: p,
                }
            ),
            (arb_id(), any::<u64>())
                .prop_map(|(s, t)| StoredRecord::Tombstone { sensor: SensorId::new(s).unwrap(), time: Timestamp(t) }),
            any::<u64>().prop_map(|t| StoredRecord::Marker { time: Timestamp(t) }),
        ]
    }

    proptest! {
        #[test]
        fn chain_input_round_trips(rec in arb_record(), prev in any::<[u8; 32]>()) {
            let bytes = encode_chain_input(&rec, &Digest(prev));
            let (back, p) = decode_chain_input(&bytes).unwrap();
            prop_assert_eq!(back, rec);
            prop_assert_eq!(p, Digest(prev));
        }

        #[test]
        fn distinct_records_encode_distinctly(
            a in arb_record(), b in arb_record(),
            pa in any::<[u8; 32]>(), pb in any::<[u8; 32]>(),
        ) {
            prop_assume!(a != b || pa != pb);
            prop_assert_ne!(encode_chain_input(&a, &Digest(pa)), encode_chain_input(&b, &Digest(pb)));
        }
    }

    #[test]
    fn boundary_shift_does_not_collide() {
        // "AB"||"C" vs "A"||"BC" under naive concatenation.
        let a = StoredRecord::Full { device: dev(b"AB"), sensor: sen(b"C"), time: Timestamp(1), params: vec![] };
        let b = StoredRecord::Full { device: dev(b"A"), sensor: sen(b"BC"), time: Timestamp(1), params: vec![] };
        assert_ne!(encode_chain_input(&a, &Digest::ZERO), encode_chain_input(&b, &Digest::ZERO));
    }
}
