use std::net::TcpListener;
use std::sync::Arc;

use serde_json::{json, Value};

use notary_core::ake::{self, answer_query, LogQuery, LogResponse, Role, ServerContext};
use notary_core::model::{stream_name, DeviceId, SealMode, StreamTag, Timestamp};
use notary_core::sealing::{bucket_index, bucket_prefix};
use notary_core::store::{ChunkStore, Query, Retrieved};
use notary_core::verify::{verify_auditor, verify_user, AuditReport, Claim, Scope, UserChunkView, UserReport};

use crate::keys::{device_vid, KeyDir, Layout, AUDITOR_VID};
use crate::{AuditArgs, CmdResult, FetchArgs, RangeArgs, Report, RoleArg, ServeArgs, VerifyUserArgs};

pub const SP_ID: &[u8] = b"notary-sp";

fn bounds(r: &RangeArgs) -> (Timestamp, Timestamp) {
    (Timestamp(r.from.unwrap_or(0)), Timestamp(r.to.unwrap_or(u64::MAX)))
}

pub fn serve(dir: &KeyDir, args: &ServeArgs) -> CmdResult {
    let ctx = ServerContext {
        store_root: args.store.clone(),
        registry: dir.registry()?,
        sp_id: SP_ID.to_vec(),
        sp_key: dir.keypair("sp")?,
    };
    ChunkStore::open(&args.store).map_err(|e| e.to_string())?;
    let listener = TcpListener::bind(&args.listen).map_err(|e| format!("{}: {e}", args.listen))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    eprintln!("listening on {addr}");
    ake::serve(listener, Arc::new(ctx), args.sessions).map_err(|e| e.to_string())?;
    Ok(Report::ok(json!({ "listen": addr.to_string(), "sessions": args.sessions }), "server stopped"))
}

fn fetch_as(dir: &KeyDir, server: &str, v_id: &str, identity: &str, query: &LogQuery) -> Result<LogResponse, String> {
    let sp = dir.public("sp")?;
    let key = dir.keypair(identity)?;
    ake::fetch(server, &sp, v_id.as_bytes(), &key, query).map_err(|e| format!("{server}: {e}"))
}

pub fn fetch(dir: &KeyDir, args: &FetchArgs) -> CmdResult {
    let (from, to) = bounds(&args.range);
    let (v_id, identity, query) = match args.role {
        RoleArg::Auditor => {
            let v = args.v_id.clone().unwrap_or_else(|| AUDITOR_VID.into());
            (v, AUDITOR_VID.to_string(), LogQuery::Chunks(Query::TimeRange { from, to }))
        }
        RoleArg::User => {
            let i = args.device.ok_or("--device is required for the user role")?;
            let v = args.v_id.clone().unwrap_or_else(|| device_vid(i));
            (v, device_vid(i), LogQuery::UserRange { from, to })
        }
    };
    let resp = fetch_as(dir, &args.server, &v_id, &identity, &query)?;
    let (kind, items) = match &resp {
        LogResponse::Chunks { chunks, .. } => ("chunks", chunks.len()),
        LogResponse::User { views, .. } => ("user", views.len()),
    };
    Ok(Report::ok(
        json!({
            "v_id": v_id,
            "kind": kind,
            "items": items,
            "response_bytes": resp.encode().len(),
            "streams": resp.streams().len(),
        }),
        format!("received {items} {kind} item(s) from {}", args.server),
    ))
}

fn audit_json(report: &AuditReport) -> Value {
    let failures: Vec<Value> = report
        .failures()
        .map(|(id, why)| {
            json!({
                "stream": id.map(|i| stream_name(i.stream.as_ref()).to_string()),
                "index": id.map(|i| i.index),
                "reason": why.to_string(),
            })
        })
        .collect();
    json!({
        "passed": report.passed(),
        "chunks": report.chunks.len(),
        "records_checked": report.records_checked,
        "failures": failures,
    })
}

pub fn audit(dir: &KeyDir, args: &AuditArgs) -> CmdResult {
    let sealer = dir.public("enclave")?;
    let layout = dir.layout()?;
    let (from, to) = bounds(&args.range);
    let query = Query::TimeRange { from, to };
    let retrieved: Vec<Retrieved> = match (&args.store, &args.server) {
        (Some(root), _) => ChunkStore::open(root).and_then(|s| s.get_chunks(&query)).map_err(|e| e.to_string())?,
        (None, Some(server)) => match fetch_as(dir, server, AUDITOR_VID, AUDITOR_VID, &LogQuery::Chunks(query))? {
            LogResponse::Chunks { chunks, .. } => chunks.into_iter().map(|c| c.into_retrieved()).collect(),
            LogResponse::User { .. } => return Err("server answered with user digests".into()),
        },
        (None, None) => unreachable!("clap requires a source"),
    };
    let report = verify_auditor(&retrieved, &sealer, &Scope::TimeRange { from, to, streams: layout.streams() });
    let mut v = audit_json(&report);
    v["from"] = json!(from.0);
    v["to"] = json!(to.0);
    let summary = if report.passed() {
        format!("PASS: {} chunks, {} records verified", report.chunks.len(), report.records_checked)
    } else {
        format!("FAIL: {} problem(s) in {} chunks", report.failures().count(), report.chunks.len())
    };
    Ok(Report::verdict(report.passed(), v, summary))
}

/// Streams a user expects to see: only their own bucket in per-user mode.
pub fn user_streams(layout: &Layout, device: &DeviceId) -> Vec<Option<StreamTag>> {
    if layout.mode == SealMode::PerUser {
        vec![Some(StreamTag::bucket(bucket_prefix(SealMode::PerUser), bucket_index(device.as_bytes(), layout.buckets)))]
    } else {
        layout.streams()
    }
}

fn user_json(report: &UserReport, device: &DeviceId) -> Value {
    let failures: Vec<Value> = report
        .chunks
        .iter()
        .filter_map(|c| c.outcome.as_ref().err().map(|e| (Some(&c.id), e)))
        .chain(report.range_failures.iter().map(|e| (None, e)))
        .map(|(id, why)| {
            json!({
                "stream": id.map(|i| stream_name(i.stream.as_ref()).to_string()),
                "index": id.map(|i| i.index),
                "reason": why.to_string(),
            })
        })
        .collect();
    let matches: Vec<Value> = report
        .matches
        .iter()
        .map(|m| json!({ "time": m.time.0, "state": m.state.bit(), "stream": stream_name(m.chunk.stream.as_ref()), "index": m.chunk.index }))
        .collect();
    json!({
        "device": device.to_hex(),
        "passed": report.passed(),
        "chunks": report.chunks.len(),
        "claim": match report.claim { Claim::Present => "present", Claim::Absent => "absent" },
        "matches": matches,
        "failures": failures,
    })
}

pub fn verify_user_cmd(dir: &KeyDir, args: &VerifyUserArgs) -> CmdResult {
    let sealer = dir.public("enclave")?;
    let layout = dir.layout()?;
    let (device, _) = dir.device(args.device)?;
    let (from, to) = bounds(&args.range);
    let query = LogQuery::UserRange { from, to };
    let views: Vec<UserChunkView> = match (&args.store, &args.server) {
        (Some(root), _) => {
            let store = ChunkStore::open(root).map_err(|e| e.to_string())?;
            match answer_query(&store, &Role::User(device.clone()), &query).map_err(|e| e.to_string())? {
                LogResponse::User { views, .. } => views,
                LogResponse::Chunks { .. } => unreachable!("user queries yield user views"),
            }
        }
        (None, Some(server)) => match fetch_as(dir, server, &device_vid(args.device), &device_vid(args.device), &query)? {
            LogResponse::User { views, .. } => views,
            LogResponse::Chunks { .. } => return Err("server answered with full chunks".into()),
        },
        (None, None) => unreachable!("clap requires a source"),
    };
    let report = verify_user(&device, &views, &sealer, from, to, user_streams(&layout, &device));
    let v = user_json(&report, &device);
    let summary = if report.passed() {
        format!("PASS: {} chunks verified, {} reading(s) of this device found", report.chunks.len(), report.matches.len())
    } else {
        format!("FAIL: {} chunks checked, verification failed", report.chunks.len())
    };
    Ok(Report::verdict(report.passed(), v, summary))
}
