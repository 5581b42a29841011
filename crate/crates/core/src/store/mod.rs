//! Untrusted chunk storage on the service provider's side.
//!
//! Layout under the store root:
//!
//! ```text
//! chunks/<stream>-<index:020>.chunk
//! streams/<stream>.stream
//! ```
//!
//! The in-memory index is rebuilt from chunk headers when the store is
//! opened, so deleting or editing files behind the store's back is visible
//! after a reopen.

pub mod format;
mod tamper;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use format::{ChunkHeader, FormatError};
pub use tamper::{apply_tamper, Tamper};

use crate::model::{stream_name, ChunkId, RandomString, SealedChunk, StreamInfo, StreamTag, Timestamp};
use crate::sealing::{ChunkSink, SealError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("no chunk {0}")]
    NotFound(ChunkId),
    #[error("no stream {0}")]
    UnknownStream(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkMeta {
    pub header: ChunkHeader,
    pub path: PathBuf,
    pub size: u64,
}

/// Which chunks to retrieve.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Query {
    All,
    /// Chunks whose time span overlaps `[from, to]`, across every stream.
    TimeRange { from: Timestamp, to: Timestamp },
    /// Index range `[from, to]` of one stream.
    Stream { tag: Option<StreamTag>, from: u64, to: u64 },
    Ids(Vec<ChunkId>),
}

/// A retrieved chunk plus its neighbours' random strings. At a stream end
/// the stream seed stands in; `None` means the neighbour is missing.
#[derive(Clone, Debug)]
pub struct Retrieved {
    pub id: ChunkId,
    pub chunk: Result<SealedChunk, String>,
    pub g_prev: Option<RandomString>,
    pub g_next: Option<RandomString>,
}

pub struct ChunkStore {
    root: PathBuf,
    streams: BTreeMap<String, StreamInfo>,
    index: BTreeMap<String, BTreeMap<u64, ChunkMeta>>,
    unreadable: Vec<PathBuf>,
}

fn read_prefix(path: &Path, n: usize) -> io::Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(n);
    fs::File::open(path)?.take(n as u64).read_to_end(&mut buf)?;
    Ok(buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl ChunkStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["chunks", "streams"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let mut store = Self { root, streams: BTreeMap::new(), index: BTreeMap::new(), unreadable: Vec::new() };
        store.rescan()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Rebuilds the index from the files on disk.
    pub fn rescan(&mut self) -> Result<(), StoreError> {
        self.streams.clear();
        self.index.clear();
        self.unreadable.clear();
        let dir = self.root.join("streams");
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_some_and(|e| e == "stream") {
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                match format::decode_stream(&bytes) {
                    Ok(info) => {
                        self.streams.insert(stream_name(info.tag.as_ref()).to_string(), info);
                    }
                    Err(_) => self.unreadable.push(path),
                }
            }
        }
        let dir = self.root.join("chunks");
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if !path.extension().is_some_and(|e| e == "chunk") {
                continue;
            }
            let size = fs::metadata(&path).map_err(io_err(&path))?.len();
            let head = read_prefix(&path, 128).map_err(io_err(&path))?;
            match format::decode_header(&head) {
                Ok(header) => self.insert_meta(ChunkMeta { header, path, size }),
                Err(_) => self.unreadable.push(path),
            }
        }
        Ok(())
    }

    fn insert_meta(&mut self, meta: ChunkMeta) {
        let name = stream_name(meta.header.id.stream.as_ref()).to_string();
        self.index.entry(name).or_default().insert(meta.header.id.index, meta);
    }

    /// Files whose header or manifest could not be parsed during the last scan.
    pub fn unreadable(&self) -> &[PathBuf] {
        &self.unreadable
    }

    pub fn chunk_path(&self, id: &ChunkId) -> PathBuf {
        self.root.join("chunks").join(format!("{}-{:020}.chunk", stream_name(id.stream.as_ref()), id.index))
    }

    pub fn put_stream(&mut self, info: &StreamInfo) -> Result<(), StoreError> {
        let name = stream_name(info.tag.as_ref()).to_string();
        let path = self.root.join("streams").join(format!("{name}.stream"));
        write_atomic(&path, &format::encode_stream(info))?;
        self.streams.insert(name, info.clone());
        Ok(())
    }

    pub fn put_chunk(&mut self, chunk: &SealedChunk) -> Result<(), StoreError> {
        self.put_raw(&chunk.id, &format::encode_chunk(chunk))
    }

    /// Writes chunk bytes verbatim, replacing any chunk with the same id.
    pub fn put_raw(&mut self, id: &ChunkId, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.chunk_path(id);
        write_atomic(&path, bytes)?;
        if let Some(m) = self.meta(id).cloned() {
            if m.path != path {
                let _ = fs::remove_file(&m.path);
            }
        }
        self.remove_meta(id);
        if let Ok(header) = format::decode_header(bytes) {
            self.insert_meta(ChunkMeta { header, path, size: bytes.len() as u64 });
        }
        Ok(())
    }

    fn remove_meta(&mut self, id: &ChunkId) -> Option<ChunkMeta> {
        self.index.get_mut(stream_name(id.stream.as_ref()))?.remove(&id.index)
    }

    pub fn remove(&mut self, id: &ChunkId) -> Result<(), StoreError> {
        let meta = self.remove_meta(id).ok_or_else(|| StoreError::NotFound(id.clone()))?;
        fs::remove_file(&meta.path).map_err(io_err(&meta.path))
    }

    pub fn meta(&self, id: &ChunkId) -> Option<&ChunkMeta> {
        self.index.get(stream_name(id.stream.as_ref()))?.get(&id.index)
    }

    pub fn read_raw(&self, id: &ChunkId) -> Result<Vec<u8>, StoreError> {
        let meta = self.meta(id).ok_or_else(|| StoreError::NotFound(id.clone()))?;
        fs::read(&meta.path).map_err(io_err(&meta.path))
    }

    pub fn get(&self, id: &ChunkId) -> Result<SealedChunk, StoreError> {
        Ok(format::decode_chunk(&self.read_raw(id)?)?)
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamInfo> {
        self.streams.values()
    }

    pub fn stream(&self, tag: Option<&StreamTag>) -> Option<&StreamInfo> {
        self.streams.get(stream_name(tag))
    }

    /// Every indexed chunk, ordered by stream then index.
    pub fn metas(&self) -> impl Iterator<Item = &ChunkMeta> {
        self.index.values().flat_map(|m| m.values())
    }

    pub fn len(&self) -> usize {
        self.index.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_bytes(&self) -> u64 {
        self.metas().map(|m| m.size).sum()
    }

    fn g_of(&self, stream: &str, index: u64) -> Option<RandomString> {
        let meta = self.index.get(stream)?.get(&index)?;
        let size = meta.size as usize;
        let mut f = fs::File::open(&meta.path).ok()?;
        use std::io::Seek;
        f.seek(io::SeekFrom::Start(size.checked_sub(format::PROOF_TAIL_LEN)? as u64)).ok()?;
        let mut tail = vec![0u8; format::PROOF_TAIL_LEN];
        f.read_exact(&mut tail).ok()?;
        format::tail_g(&tail).ok()
    }

    fn retrieve(&self, meta: &ChunkMeta) -> Retrieved {
        let id = meta.header.id.clone();
        let name = stream_name(id.stream.as_ref());
        let seed = self.streams.get(name).map(|s| s.seed);
        let chunk = fs::read(&meta.path)
            .map_err(|e| e.to_string())
            .and_then(|b| format::decode_chunk(&b).map_err(|e| e.to_string()));
        let g_prev = if id.index == 0 { seed } else { self.g_of(name, id.index - 1) };
        let last = match &chunk {
            Ok(c) => c.last_in_stream,
            Err(_) => meta.header.last_in_stream,
        };
        let g_next = if last { seed } else { self.g_of(name, id.index + 1) };
        Retrieved { id, chunk, g_prev, g_next }
    }

    pub fn get_chunks(&self, query: &Query) -> Result<Vec<Retrieved>, StoreError> {
        let metas: Vec<&ChunkMeta> = match query {
            Query::All => self.metas().collect(),
            Query::TimeRange { from, to } => {
                self.index.values().flat_map(|m| time_window(m.values().collect(), *from, *to)).collect()
            }
            Query::Stream { tag, from, to } => {
                let name = stream_name(tag.as_ref());
                let m = self.index.get(name);
                if m.is_none() && !self.streams.contains_key(name) {
                    return Err(StoreError::UnknownStream(name.to_string()));
                }
                m.map(|m| m.range(*from..=*to).map(|(_, v)| v).collect()).unwrap_or_default()
            }
            Query::Ids(ids) => ids.iter().filter_map(|id| self.meta(id)).collect(),
        };
        Ok(metas.into_iter().map(|m| self.retrieve(m)).collect())
    }
}

/// Chunks overlapping `[from, to]` plus the nearest chunk outside each end.
fn time_window(chunks: Vec<&ChunkMeta>, from: Timestamp, to: Timestamp) -> Vec<&ChunkMeta> {
    let before = chunks.iter().rposition(|m| m.header.last_time < from);
    let after = chunks.iter().position(|m| m.header.first_time > to);
    let lo = before.unwrap_or(0);
    let hi = after.unwrap_or(chunks.len().saturating_sub(1));
    if chunks.is_empty() || lo > hi {
        return Vec::new();
    }
    chunks[lo..=hi].to_vec()
}

impl ChunkSink for ChunkStore {
    fn open_stream(&mut self, info: &StreamInfo) -> Result<(), SealError> {
        self.put_stream(info).map_err(|e| SealError::Sink(e.to_string()))
    }

    fn put_chunk(&mut self, chunk: SealedChunk) -> Result<(), SealError> {
        ChunkStore::put_chunk(self, &chunk).map_err(|e| SealError::Sink(e.to_string()))
    }
}
