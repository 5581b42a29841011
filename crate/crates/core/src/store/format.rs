//! On-disk chunk and stream-manifest layouts. All integers are big-endian.
//!
//! Chunk file:
//!
//! ```text
//! magic "NTRY" | version u8 | mode u8 | flags u8 | reserved u8
//! tag_len u8 | tag | index u64 | first_time u64 | last_time u64
//! record_count u32 | digest_count u32
//! records...
//! chain digests (32 bytes each)
//! g 32 | pad_count u32 | pi_sig 64 | pu_sig 64
//! ```
//!
//! A record is `kind u8` followed by, for kind 1 (full),
//! `dev_len u8 | dev | sen_len u8 | sen | time u64 | params_len u16 | params`;
//! for kind 0 (tombstone), `sen_len u8 | sen | time u64`; and for kind 2
//! (marker), `time u64`. Flag bit 0 marks the last chunk of a stream.

use crate::model::{
    ChunkId, DeviceId, Digest, ProofForUser, ProofOfIntegrity, RandomString, SealMode, SealedChunk, SensorId,
    SignatureBytes, StoredRecord, StreamInfo, StreamTag, Timestamp, DIGEST_LEN,
};
use crate::sealing::{bucket_prefix, method_for, user_digests};

pub const CHUNK_MAGIC: &[u8; 4] = b"NTRY";
pub const STREAM_MAGIC: &[u8; 4] = b"NTSM";
pub const FORMAT_VERSION: u8 = 1;
pub const PROOF_TAIL_LEN: usize = DIGEST_LEN + 4 + 64 + 64;
const FLAG_LAST: u8 = 1;

const KIND_TOMBSTONE: u8 = 0;
const KIND_FULL: u8 = 1;
const KIND_MARKER: u8 = 2;

#[derive(Debug, thiserror::Error)]
#[error("malformed {what}: {reason}")]
pub struct FormatError {
    pub what: &'static str,
    pub reason: String,
}

fn ferr(what: &'static str, reason: impl Into<String>) -> FormatError {
    FormatError { what, reason: reason.into() }
}

/// Encoded size of one record in the records section.
pub fn record_len(r: &StoredRecord) -> usize {
    match r {
        StoredRecord::Full { device, sensor, params, .. } => {
            1 + 1 + device.as_bytes().len() + 1 + sensor.as_bytes().len() + 8 + 2 + params.len()
        }
        StoredRecord::Tombstone { sensor, .. } => 1 + 1 + sensor.as_bytes().len() + 8,
        StoredRecord::Marker { .. } => 1 + 8,
    }
}

fn put_record(out: &mut Vec<u8>, r: &StoredRecord) {
    match r {
        StoredRecord::Full { device, sensor, time, params } => {
            out.push(KIND_FULL);
            out.push(device.as_bytes().len() as u8);
            out.extend_from_slice(device.as_bytes());
            out.push(sensor.as_bytes().len() as u8);
            out.extend_from_slice(sensor.as_bytes());
            out.extend_from_slice(&time.to_be_bytes());
            out.extend_from_slice(&(params.len() as u16).to_be_bytes());
            out.extend_from_slice(params);
        }
        StoredRecord::Tombstone { sensor, time } => {
            out.push(KIND_TOMBSTONE);
            out.push(sensor.as_bytes().len() as u8);
            out.extend_from_slice(sensor.as_bytes());
            out.extend_from_slice(&time.to_be_bytes());
        }
        StoredRecord::Marker { time } => {
            out.push(KIND_MARKER);
            out.extend_from_slice(&time.to_be_bytes());
        }
    }
}

pub fn encode_chunk(c: &SealedChunk) -> Vec<u8> {
    let body: usize = c.records.iter().map(record_len).sum();
    let mut out = Vec::with_capacity(64 + body + c.chain_digests.len() * DIGEST_LEN + PROOF_TAIL_LEN);
    out.extend_from_slice(CHUNK_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(c.mode.code());
    out.push(if c.last_in_stream { FLAG_LAST } else { 0 });
    out.push(0);
    let tag = c.id.stream.as_ref().map(|t| t.as_str()).unwrap_or("");
    out.push(tag.len() as u8);
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(&c.id.index.to_be_bytes());
    let (first, last) = c.time_range().unwrap_or((Timestamp(0), Timestamp(0)));
    out.extend_from_slice(&first.to_be_bytes());
    out.extend_from_slice(&last.to_be_bytes());
    out.extend_from_slice(&(c.records.len() as u32).to_be_bytes());
    out.extend_from_slice(&(c.chain_digests.len() as u32).to_be_bytes());
    for r in &c.records {
        put_record(&mut out, r);
    }
    for d in &c.chain_digests {
        out.extend_from_slice(d.as_bytes());
    }
    out.extend_from_slice(c.pi.g.as_bytes());
    out.extend_from_slice(&c.pi.pad_count.to_be_bytes());
    out.extend_from_slice(&c.pi.signature.0);
    out.extend_from_slice(&c.pu.signature.0);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() < n {
            return Err(ferr(self.what, "truncated"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn short_field(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.u8()? as usize;
        self.take(n)
    }
}

/// Parsed header fields, readable without decoding the body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkHeader {
    pub id: ChunkId,
    pub mode: SealMode,
    pub last_in_stream: bool,
    pub first_time: Timestamp,
    pub last_time: Timestamp,
    pub record_count: u32,
    pub digest_count: u32,
}

fn read_header(cur: &mut Cursor<'_>) -> Result<ChunkHeader, FormatError> {
    if cur.take(4)? != CHUNK_MAGIC {
        return Err(ferr("chunk", "bad magic"));
    }
    let version = cur.u8()?;
    if version != FORMAT_VERSION {
        return Err(ferr("chunk", format!("unsupported version {version}")));
    }
    let mode = SealMode::from_code(cur.u8()?).ok_or_else(|| ferr("chunk", "unknown mode"))?;
    let flags = cur.u8()?;
    if flags & !FLAG_LAST != 0 || cur.u8()? != 0 {
        return Err(ferr("chunk", "unknown flags"));
    }
    let tag = cur.short_field()?;
    let stream = if tag.is_empty() {
        None
    } else {
        let s = std::str::from_utf8(tag).map_err(|_| ferr("chunk", "tag is not utf-8"))?;
        Some(StreamTag::new(s).map_err(|e| ferr("chunk", e.to_string()))?)
    };
    let index = cur.u64()?;
    Ok(ChunkHeader {
        id: ChunkId::new(stream, index),
        mode,
        last_in_stream: flags & FLAG_LAST != 0,
        first_time: Timestamp(cur.u64()?),
        last_time: Timestamp(cur.u64()?),
        record_count: cur.u32()?,
        digest_count: cur.u32()?,
    })
}

pub fn decode_header(bytes: &[u8]) -> Result<ChunkHeader, FormatError> {
    read_header(&mut Cursor { buf: bytes, what: "chunk" })
}

fn read_record(cur: &mut Cursor<'_>) -> Result<StoredRecord, FormatError> {
    let bad = |e: crate::model::ModelError| ferr("record", e.to_string());
    match cur.u8()? {
        KIND_FULL => {
            let device = DeviceId::new(cur.short_field()?.to_vec()).map_err(bad)?;
            let sensor = SensorId::new(cur.short_field()?.to_vec()).map_err(bad)?;
            let time = Timestamp(cur.u64()?);
            let n = cur.u16()? as usize;
            let params = cur.take(n)?.to_vec();
            Ok(StoredRecord::Full { device, sensor, time, params })
        }
        KIND_TOMBSTONE => {
            let sensor = SensorId::new(cur.short_field()?.to_vec()).map_err(bad)?;
            Ok(StoredRecord::Tombstone { sensor, time: Timestamp(cur.u64()?) })
        }
        KIND_MARKER => Ok(StoredRecord::Marker { time: Timestamp(cur.u64()?) }),
        k => Err(ferr("record", format!("unknown kind {k}"))),
    }
}

/// Decodes a chunk file. User digests are re-derived from the records.
pub fn decode_chunk(bytes: &[u8]) -> Result<SealedChunk, FormatError> {
    let mut cur = Cursor { buf: bytes, what: "chunk" };
    let h = read_header(&mut cur)?;
    if h.record_count == 0 || h.digest_count < h.record_count {
        return Err(ferr("chunk", "inconsistent record and digest counts"));
    }
    let mut records = Vec::with_capacity(h.record_count as usize);
    for _ in 0..h.record_count {
        records.push(read_record(&mut cur)?);
    }
    let mut chain_digests = Vec::with_capacity(h.digest_count as usize);
    for _ in 0..h.digest_count {
        chain_digests.push(Digest(cur.array()?));
    }
    let g = RandomString(cur.array()?);
    let pad_count = cur.u32()?;
    let pi_sig = SignatureBytes(cur.array()?);
    let pu_sig = SignatureBytes(cur.array()?);
    if !cur.buf.is_empty() {
        return Err(ferr("chunk", "trailing bytes"));
    }
    if pad_count as u64 + h.record_count as u64 != h.digest_count as u64 {
        return Err(ferr("chunk", "pad count disagrees with digest count"));
    }
    let consistent_mode = match &h.id.stream {
        Some(tag) => h.mode.is_bucketed() && tag.as_str().starts_with(bucket_prefix(h.mode)),
        None => h.mode == method_for(&records),
    };
    if !consistent_mode {
        return Err(ferr("chunk", "mode disagrees with stream tag or records"));
    }
    let first = records.iter().map(StoredRecord::time).min();
    let last = records.iter().map(StoredRecord::time).max();
    if first != Some(h.first_time) || last != Some(h.last_time) {
        return Err(ferr("chunk", "header time range disagrees with records"));
    }
    Ok(SealedChunk {
        id: h.id,
        mode: h.mode,
        last_in_stream: h.last_in_stream,
        user_digests: user_digests(&records),
        records,
        chain_digests,
        pi: ProofOfIntegrity { g, signature: pi_sig, pad_count },
        pu: ProofForUser { g, signature: pu_sig },
    })
}

/// The chunk's random string, read from the fixed-size proof tail.
pub fn tail_g(bytes: &[u8]) -> Result<RandomString, FormatError> {
    if bytes.len() < PROOF_TAIL_LEN {
        return Err(ferr("chunk", "truncated"));
    }
    let start = bytes.len() - PROOF_TAIL_LEN;
    Ok(RandomString(bytes[start..start + DIGEST_LEN].try_into().unwrap()))
}

pub fn encode_stream(info: &StreamInfo) -> Vec<u8> {
    let mut out = STREAM_MAGIC.to_vec();
    out.push(FORMAT_VERSION);
    out.push(info.mode.code());
    out.extend_from_slice(&info.bucket_count.to_be_bytes());
    out.extend_from_slice(info.seed.as_bytes());
    let tag = info.tag.as_ref().map(|t| t.as_str()).unwrap_or("");
    out.push(tag.len() as u8);
    out.extend_from_slice(tag.as_bytes());
    out
}

pub fn decode_stream(bytes: &[u8]) -> Result<StreamInfo, FormatError> {
    let mut cur = Cursor { buf: bytes, what: "stream manifest" };
    if cur.take(4)? != STREAM_MAGIC || cur.u8()? != FORMAT_VERSION {
        return Err(ferr("stream manifest", "bad magic or version"));
    }
    let mode = SealMode::from_code(cur.u8()?).ok_or_else(|| ferr("stream manifest", "unknown mode"))?;
    let bucket_count = cur.u32()?;
    let seed = RandomString(cur.array()?);
    let tag = cur.short_field()?;
    if !cur.buf.is_empty() {
        return Err(ferr("stream manifest", "trailing bytes"));
    }
    let tag = if tag.is_empty() {
        None
    } else {
        let s = std::str::from_utf8(tag).map_err(|_| ferr("stream manifest", "tag is not utf-8"))?;
        Some(StreamTag::new(s).map_err(|e| ferr("stream manifest", e.to_string()))?)
    };
    Ok(StreamInfo { tag, mode, bucket_count, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::model::{ChunkLinks, SensorReading, SensorState};
    use crate::sealing::{compress_mixed, seal_records};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn links() -> ChunkLinks {
        ChunkLinks { prev: RandomString([1; 32]), current: RandomString([2; 32]), next: RandomString([3; 32]) }
    }

    fn sample_chunk(pad: usize) -> SealedChunk {
        let key = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(5));
        let d = DeviceId::new(vec![0xab; 6]).unwrap();
        let s = SensorId::new(b"dbh-ap-01".to_vec()).unwrap();
        let readings = vec![
            SensorReading::new(d.clone(), s.clone(), Timestamp(10)).with_state(SensorState::Active).with_params(b"rssi=-60".to_vec()),
            SensorReading::new(d.clone(), s.clone(), Timestamp(11)),
            SensorReading::new(d, s, Timestamp(12)),
        ];
        let padding = (0..pad).map(|i| Digest([i as u8; 32])).collect();
        let id = ChunkId::new(Some(StreamTag::new("sensor-0003").unwrap()), 7);
        seal_records(id, SealMode::PerSensor, compress_mixed(&readings), &links(), &key, padding, true).unwrap()
    }

    #[test]
    fn chunk_round_trip() {
        for pad in [0, 3] {
            let c = sample_chunk(pad);
            let bytes = encode_chunk(&c);
            assert_eq!(decode_chunk(&bytes).unwrap(), c);
            assert_eq!(tail_g(&bytes).unwrap(), c.g());
            let h = decode_header(&bytes).unwrap();
            assert_eq!((h.first_time, h.last_time, h.record_count), (Timestamp(10), Timestamp(11), 2));
        }
    }

    #[test]
    fn golden_layout() {
        let c = sample_chunk(0);
        let bytes = encode_chunk(&c);
        let tag = b"sensor-0003";
        let mut expect = b"NTRY\x01\x02\x01\x00".to_vec();
        expect.push(tag.len() as u8);
        expect.extend_from_slice(tag);
        expect.extend_from_slice(&7u64.to_be_bytes());
        expect.extend_from_slice(&10u64.to_be_bytes());
        expect.extend_from_slice(&11u64.to_be_bytes());
        expect.extend_from_slice(&2u32.to_be_bytes());
        expect.extend_from_slice(&2u32.to_be_bytes());
        expect.extend_from_slice(&[1, 6, 0xab, 0xab, 0xab, 0xab, 0xab, 0xab, 9]);
        expect.extend_from_slice(b"dbh-ap-01");
        expect.extend_from_slice(&10u64.to_be_bytes());
        expect.extend_from_slice(&[0, 8]);
        expect.extend_from_slice(b"rssi=-60");
        expect.extend_from_slice(&[0, 9]);
        expect.extend_from_slice(b"dbh-ap-01");
        expect.extend_from_slice(&11u64.to_be_bytes());
        assert_eq!(&bytes[..expect.len()], expect.as_slice());
        assert_eq!(bytes.len(), expect.len() + 2 * 32 + PROOF_TAIL_LEN);
        assert_eq!(&bytes[bytes.len() - PROOF_TAIL_LEN..][..32], &[2u8; 32]);
    }

    #[test]
    fn rejects_inconsistent_files() {
        let bytes = encode_chunk(&sample_chunk(2));
        assert!(decode_chunk(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_chunk(&extra).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_chunk(&bad_magic).is_err());
        let mut bad_pad = bytes;
        let n = bad_pad.len();
        bad_pad[n - 128 - 1] ^= 1;
        assert!(decode_chunk(&bad_pad).is_err());
    }

    #[test]
    fn rejects_header_disagreeing_with_body() {
        let bytes = encode_chunk(&sample_chunk(0));
        let mut per_user = bytes.clone();
        per_user[5] = SealMode::PerUser.code();
        assert!(decode_chunk(&per_user).is_err());
        let mut mixed = bytes.clone();
        mixed[5] = SealMode::Mixed.code();
        assert!(decode_chunk(&mixed).is_err());
        let first = 9 + b"sensor-0003".len() + 8;
        let mut early = bytes;
        early[first + 7] ^= 1;
        assert!(decode_chunk(&early).is_err());
    }

    #[test]
    fn stream_round_trip() {
        let info = StreamInfo {
            tag: Some(StreamTag::new("user-0001").unwrap()),
            mode: SealMode::PerUser,
            bucket_count: 490,
            seed: RandomString([9; 32]),
        };
        assert_eq!(decode_stream(&encode_stream(&info)).unwrap(), info);
        let main = StreamInfo { tag: None, mode: SealMode::Entire, bucket_count: 1, seed: RandomString([0; 32]) };
        assert_eq!(decode_stream(&encode_stream(&main)).unwrap(), main);
    }

    proptest! {
        #[test]
        fn record_len_matches_encoding(r in crate::model::tests::arb_record()) {
            let mut out = Vec::new();
            put_record(&mut out, &r);
            prop_assert_eq!(out.len(), record_len(&r));
            let mut cur = Cursor { buf: &out, what: "record" };
            prop_assert_eq!(read_record(&mut cur).unwrap(), r);
        }
    }
}
