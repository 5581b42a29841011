use rand::{CryptoRng, RngCore};

use super::chunk::{bucket_index, bucket_prefix, check_linkage, seal_padded_batch, seal_records, BucketBatch, MixedCompressor};
use super::feed::FeedReader;
use super::SealError;
use crate::crypto::{self, KeyPair};
use crate::model::{
    ChunkId, ChunkLinks, SealMode, SealedChunk, SensorReading, SensorState, StoredRecord, StreamInfo, StreamTag,
    Timestamp,
};
use crate::policy::{AckRegistry, RuleSet};
use crate::store::format::record_len;

/// Chunk closure caps plus the sealing mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkPolicy {
    pub mode: SealMode,
    /// Cap on the encoded record bytes of one chunk.
    pub max_bytes: u64,
    /// Batch length in seconds of event time.
    pub max_age: u64,
    /// Number of buckets in per-sensor / per-user modes.
    pub bucket_count: u32,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self { mode: SealMode::Mixed, max_bytes: 5_000_000, max_age: 1800, bucket_count: 490 }
    }
}

impl ChunkPolicy {
    fn validate(&self) -> Result<(), SealError> {
        if self.max_bytes == 0 || self.max_age == 0 {
            return Err(SealError::Config("max_bytes and max_age must be positive"));
        }
        if self.mode.is_bucketed() && self.bucket_count == 0 {
            return Err(SealError::Config("bucketed modes need at least one bucket"));
        }
        Ok(())
    }

    fn stream_count(&self) -> u32 {
        if self.mode.is_bucketed() {
            self.bucket_count
        } else {
            1
        }
    }
}

/// Receives stream announcements and sealed chunks.
pub trait ChunkSink {
    fn open_stream(&mut self, info: &StreamInfo) -> Result<(), SealError>;
    fn put_chunk(&mut self, chunk: SealedChunk) -> Result<(), SealError>;
}

#[derive(Default, Debug)]
pub struct MemorySink {
    pub streams: Vec<StreamInfo>,
    pub chunks: Vec<SealedChunk>,
}

impl ChunkSink for MemorySink {
    fn open_stream(&mut self, info: &StreamInfo) -> Result<(), SealError> {
        self.streams.push(info.clone());
        Ok(())
    }

    fn put_chunk(&mut self, chunk: SealedChunk) -> Result<(), SealError> {
        self.chunks.push(chunk);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SealerStats {
    pub readings: u64,
    pub rejected: u64,
    pub active: u64,
    pub passive: u64,
    /// Passive readings folded into an earlier tombstone.
    pub dropped: u64,
    pub chunks: u64,
    pub markers: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted(SensorState),
    Rejected,
}

struct StreamState {
    info: StreamInfo,
    next_index: u64,
    links: ChunkLinks,
    records: Vec<StoredRecord>,
    compressor: MixedCompressor,
    bytes: u64,
}

pub struct Sealer<R> {
    policy: ChunkPolicy,
    rules: RuleSet,
    acks: Option<AckRegistry>,
    key: KeyPair,
    rng: R,
    streams: Vec<StreamState>,
    deadline: Option<Timestamp>,
    latest: Option<Timestamp>,
    finished: bool,
    stats: SealerStats,
}

impl<R: RngCore + CryptoRng> Sealer<R> {
    /// `acks` enables notice-and-acknowledge gating.
    pub fn new(
        policy: ChunkPolicy,
        rules: RuleSet,
        acks: Option<AckRegistry>,
        key: KeyPair,
        rng: R,
    ) -> Result<Self, SealError> {
        policy.validate()?;
        rules.check_digest()?;
        Ok(Self { policy, rules, acks, key, rng, streams: Vec::new(), deadline: None, latest: None, finished: false, stats: SealerStats::default() })
    }

    pub fn policy(&self) -> &ChunkPolicy {
        &self.policy
    }

    pub fn stats(&self) -> SealerStats {
        self.stats
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn rules_mut(&mut self) -> &mut RuleSet {
        &mut self.rules
    }

    pub fn acks_mut(&mut self) -> Option<&mut AckRegistry> {
        self.acks.as_mut()
    }

    /// Latest event time pushed so far.
    pub fn latest(&self) -> Option<Timestamp> {
        self.latest
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    fn open(&mut self, now: Timestamp, sink: &mut impl ChunkSink) -> Result<(), SealError> {
        if !self.streams.is_empty() {
            return Ok(());
        }
        let bucketed = self.policy.mode.is_bucketed();
        for i in 0..self.policy.stream_count() {
            let tag = bucketed.then(|| StreamTag::bucket(bucket_prefix(self.policy.mode), i));
            let seed = crypto::random_string(&mut self.rng);
            let info = StreamInfo {
                tag,
                mode: self.policy.mode,
                bucket_count: if bucketed { self.policy.bucket_count } else { 1 },
                seed,
            };
            sink.open_stream(&info)?;
            let links = ChunkLinks {
                prev: seed,
                current: crypto::random_string(&mut self.rng),
                next: crypto::random_string(&mut self.rng),
            };
            self.streams.push(StreamState {
                info,
                next_index: 0,
                links,
                records: Vec::new(),
                compressor: MixedCompressor::new(),
                bytes: 0,
            });
        }
        self.deadline = Some(Timestamp(now.0.saturating_add(self.policy.max_age)));
        Ok(())
    }

    fn route(&self, reading: &SensorReading) -> usize {
        match self.policy.mode {
            SealMode::PerSensor => bucket_index(reading.sensor.as_bytes(), self.policy.bucket_count) as usize,
            SealMode::PerUser => bucket_index(reading.device.as_bytes(), self.policy.bucket_count) as usize,
            _ => 0,
        }
    }

    /// Evaluates policy on `reading` and buffers the result.
    pub fn push(&mut self, mut reading: SensorReading, sink: &mut impl ChunkSink) -> Result<SensorState, SealError> {
        if self.finished {
            return Err(SealError::Config("sealer already finished"));
        }
        self.open(reading.time, sink)?;
        self.tick(reading.time, sink)?;
        let state = self.rules.evaluate_trusted(self.acks.as_ref(), &reading);
        reading.state = state;
        self.latest = self.latest.max(Some(reading.time));
        self.stats.readings += 1;
        match state {
            SensorState::Active => self.stats.active += 1,
            SensorState::Passive => self.stats.passive += 1,
        }
        let idx = self.route(&reading);
        let Some(rec) = self.streams[idx].compressor.push(&reading) else {
            self.stats.dropped += 1;
            return Ok(state);
        };
        let len = record_len(&rec) as u64;
        let st = &self.streams[idx];
        if !st.records.is_empty() && st.bytes + len > self.policy.max_bytes {
            self.close_one(idx, sink)?;
            let st = &mut self.streams[idx];
            let again = st.compressor.push(&reading);
            debug_assert_eq!(again.as_ref(), Some(&rec));
        }
        let st = &mut self.streams[idx];
        st.records.push(rec);
        st.bytes += len;
        Ok(state)
    }

    /// Decrypts one feed frame and pushes it. Undecryptable frames are
    /// counted and skipped.
    pub fn ingest(
        &mut self,
        feed: &mut FeedReader,
        frame: &[u8],
        sink: &mut impl ChunkSink,
    ) -> Result<IngestOutcome, SealError> {
        match feed.open_frame(frame) {
            Ok(r) => self.push(r, sink).map(IngestOutcome::Accepted),
            Err(_) => {
                self.stats.rejected += 1;
                Ok(IngestOutcome::Rejected)
            }
        }
    }

    /// Closes every batch whose deadline is at or before `now`.
    pub fn tick(&mut self, now: Timestamp, sink: &mut impl ChunkSink) -> Result<(), SealError> {
        while let Some(deadline) = self.deadline {
            if now < deadline {
                break;
            }
            self.close_batch(deadline, false, sink)?;
            self.deadline = Some(Timestamp(deadline.0.saturating_add(self.policy.max_age)));
        }
        Ok(())
    }

    /// Seals whatever is buffered as the final chunk of every stream.
    pub fn finish(&mut self, now: Timestamp, sink: &mut impl ChunkSink) -> Result<SealerStats, SealError> {
        if self.finished {
            return Ok(self.stats);
        }
        self.open(now, sink)?;
        self.tick(now, sink)?;
        self.close_batch(now, true, sink)?;
        self.finished = true;
        Ok(self.stats)
    }

    fn close_one(&mut self, idx: usize, sink: &mut impl ChunkSink) -> Result<(), SealError> {
        let st = &mut self.streams[idx];
        let records = std::mem::take(&mut st.records);
        let mode = chunk_mode(self.policy.mode, &records);
        let id = ChunkId::new(st.info.tag.clone(), st.next_index);
        let chunk = seal_records(id, mode, records, &st.links, &self.key, Vec::new(), false)?;
        self.emit(idx, chunk, sink)
    }

    fn close_batch(&mut self, at: Timestamp, last: bool, sink: &mut impl ChunkSink) -> Result<(), SealError> {
        let mut batch = Vec::with_capacity(self.streams.len());
        for st in &mut self.streams {
            let mut records = std::mem::take(&mut st.records);
            if records.is_empty() {
                records.push(StoredRecord::Marker { time: at });
            }
            let mut links = st.links;
            if last {
                links.next = st.info.seed;
            }
            batch.push(BucketBatch {
                id: ChunkId::new(st.info.tag.clone(), st.next_index),
                records,
                links,
                last_in_stream: last,
            });
        }
        let chunks = seal_padded_batch(self.policy.mode, batch, &self.key, &mut self.rng)?;
        for (idx, chunk) in chunks.into_iter().enumerate() {
            self.emit(idx, chunk, sink)?;
        }
        Ok(())
    }

    fn emit(&mut self, idx: usize, chunk: SealedChunk, sink: &mut impl ChunkSink) -> Result<(), SealError> {
        check_linkage(&chunk).map_err(SealError::SelfCheck)?;
        self.stats.chunks += 1;
        if chunk.is_marker() {
            self.stats.markers += 1;
        }
        sink.put_chunk(chunk)?;
        let next = crypto::random_string(&mut self.rng);
        let st = &mut self.streams[idx];
        st.next_index += 1;
        st.links = ChunkLinks { prev: st.links.current, current: st.links.next, next };
        st.compressor.reset();
        st.bytes = 0;
        Ok(())
    }
}

pub(crate) fn chunk_mode(configured: SealMode, records: &[StoredRecord]) -> SealMode {
    if configured.is_bucketed() {
        configured
    } else {
        super::chunk::method_for(records)
    }
}
