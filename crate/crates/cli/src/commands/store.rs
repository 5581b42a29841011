use serde_json::{json, Value};

use notary_core::model::{stream_name, ChunkId, SealedChunk, StoredRecord, StreamTag};
use notary_core::store::{apply_tamper, ChunkStore, Tamper};

use crate::keys::KeyDir;
use crate::{CmdResult, Report, StoreAction, StoreArgs, TamperArgs, TamperKind};

fn chunk_id(stream: &Option<String>, index: u64) -> Result<ChunkId, String> {
    let tag = stream.as_ref().map(|s| StreamTag::new(s.clone())).transpose().map_err(|e| e.to_string())?;
    Ok(ChunkId::new(tag, index))
}

fn record_json(r: &StoredRecord) -> Value {
    match r {
        StoredRecord::Full { device, sensor, time, params } => json!({
            "kind": "full",
            "device": device.to_hex(),
            "sensor": String::from_utf8_lossy(sensor.as_bytes()),
            "time": time.0,
            "params": String::from_utf8_lossy(params),
        }),
        StoredRecord::Tombstone { sensor, time } => json!({
            "kind": "tombstone",
            "sensor": String::from_utf8_lossy(sensor.as_bytes()),
            "time": time.0,
        }),
        StoredRecord::Marker { time } => json!({ "kind": "marker", "time": time.0 }),
    }
}

fn chunk_json(c: &SealedChunk, with_records: bool) -> Value {
    let mut v = json!({
        "stream": stream_name(c.id.stream.as_ref()),
        "index": c.id.index,
        "mode": c.mode.name(),
        "last_in_stream": c.last_in_stream,
        "records": c.records.len(),
        "full": c.records.iter().filter(|r| matches!(r, StoredRecord::Full { .. })).count(),
        "tombstones": c.records.iter().filter(|r| matches!(r, StoredRecord::Tombstone { .. })).count(),
        "pad_count": c.pi.pad_count,
        "time_range": c.time_range().map(|(a, b)| [a.0, b.0]),
        "g": hex::encode(c.pi.g.as_bytes()),
        "chain_tail": c.chain_digests.get(c.records.len().wrapping_sub(1)).map(|d| d.to_string()),
    });
    if with_records {
        v["entries"] = c.records.iter().map(record_json).collect();
    }
    v
}

pub fn run(_dir: &KeyDir, args: &StoreArgs) -> CmdResult {
    let mut store = ChunkStore::open(&args.store).map_err(|e| e.to_string())?;
    match &args.action {
        StoreAction::Ls => {
            let chunks: Vec<Value> = store
                .metas()
                .map(|m| {
                    json!({
                        "stream": stream_name(m.header.id.stream.as_ref()),
                        "index": m.header.id.index,
                        "mode": m.header.mode.name(),
                        "records": m.header.record_count,
                        "digests": m.header.digest_count,
                        "first_time": m.header.first_time.0,
                        "last_time": m.header.last_time.0,
                        "last_in_stream": m.header.last_in_stream,
                        "bytes": m.size,
                    })
                })
                .collect();
            let unreadable: Vec<String> = store.unreadable().iter().map(|p| p.display().to_string()).collect();
            let n = chunks.len();
            Ok(Report::ok(
                json!({
                    "streams": store.streams().count(),
                    "chunks": chunks,
                    "total_bytes": store.total_bytes(),
                    "unreadable": unreadable,
                }),
                format!("{n} chunks in {} streams, {} bytes", store.streams().count(), store.total_bytes()),
            ))
        }
        StoreAction::Cat { stream, index, records } => {
            let id = chunk_id(stream, *index)?;
            let c = store.get(&id).map_err(|e| e.to_string())?;
            Ok(Report::ok(chunk_json(&c, *records), format!("chunk {}:{} with {} records", stream_name(id.stream.as_ref()), index, c.records.len())))
        }
        StoreAction::Tamper(t) => tamper(&mut store, t),
    }
}

fn tamper(store: &mut ChunkStore, args: &TamperArgs) -> CmdResult {
    if !args.allow_tamper {
        return Err("tampering damages the store; pass --allow-tamper to confirm".into());
    }
    let id = chunk_id(&args.stream, args.index)?;
    let at = args.at;
    let edit = match args.kind {
        TamperKind::DeleteRecord => Tamper::DeleteRecord { id, at },
        TamperKind::SwapRecords => Tamper::SwapRecords { id, a: at, b: at + 1 },
        TamperKind::Truncate => Tamper::Truncate { id, keep: at },
        TamperKind::FlipDigest => Tamper::FlipDigestBit { id, at },
        TamperKind::FlipSignature => Tamper::FlipSignatureBit { id },
        TamperKind::FlipByte => Tamper::FlipByte { id, offset: at },
        TamperKind::DeleteChunk => Tamper::DeleteChunk { id },
    };
    apply_tamper(store, &edit, args.rechain).map_err(|e| e.to_string())?;
    Ok(Report::ok(json!({ "applied": format!("{edit:?}") }), format!("applied {edit:?}")))
}
