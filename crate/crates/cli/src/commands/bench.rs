use serde_json::json;

use notary_core::bench::{bench_store, saving_pct, BenchOptions, StoreReport, REFERENCE, THRESHOLDS};
use notary_core::model::Timestamp;
use notary_core::store::ChunkStore;

use crate::keys::KeyDir;
use crate::{BenchArgs, CmdResult, Report};

fn report_json(r: &StoreReport) -> serde_json::Value {
    json!({
        "modes": r.modes.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "streams": r.streams,
        "chunks": r.chunks,
        "markers": r.markers,
        "records": r.records,
        "largest_chunk_records": r.largest_chunk_records,
        "cleartext_bytes": r.cleartext_bytes,
        "sealed_bytes": r.sealed_bytes,
        "overhead_pct": r.overhead_pct,
        "audit_ms": r.audit_ms,
        "audit_ms_per_chunk": r.audit_ms_per_chunk,
        "audit_passed": r.audit_passed,
        "seal_ms_mean": r.reseal_ms_mean,
        "seal_ms_max": r.reseal_ms_max,
        "user": r.user.as_ref().map(|u| json!({
            "chunks_examined": u.chunks_examined,
            "digests_examined": u.digests_examined,
            "matches": u.matches,
            "verify_ms": u.verify_ms,
            "passed": u.passed,
        })),
    })
}

pub fn run(dir: &KeyDir, args: &BenchArgs) -> CmdResult {
    let sealer = dir.public("enclave")?;
    let user = match args.device {
        Some(i) => Some((dir.device(i)?.0, Timestamp(args.range.from.unwrap_or(0)), Timestamp(args.range.to.unwrap_or(u64::MAX)))),
        None => None,
    };
    let opts = BenchOptions { reseal_sample: args.reseal, user };
    let store = ChunkStore::open(&args.store).map_err(|e| e.to_string())?;
    let main = bench_store(&store, &sealer, &opts).map_err(|e| e.to_string())?;
    let baseline = match &args.baseline {
        Some(p) => {
            let s = ChunkStore::open(p).map_err(|e| e.to_string())?;
            Some(bench_store(&s, &sealer, &opts).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    let saving = baseline.as_ref().map(|b| saving_pct(main.sealed_bytes, b.sealed_bytes));

    let mut summary = format!(
        "{} chunks, {} records: overhead {:.1}% (reference {}%, accepted {}-{}%)\n\
         audit {:.1} ms/chunk (limit {} s/chunk), all passed: {}",
        main.chunks,
        main.records,
        main.overhead_pct,
        REFERENCE.storage_overhead_pct,
        THRESHOLDS.overhead_pct.0,
        THRESHOLDS.overhead_pct.1,
        main.audit_ms_per_chunk,
        THRESHOLDS.audit_s_per_chunk,
        main.audit_passed,
    );
    if let Some(ms) = main.reseal_ms_mean {
        summary.push_str(&format!(
            "\nseal {ms:.1} ms/chunk for chunks up to {} records (reference {} ms, limit {} ms)",
            main.largest_chunk_records, REFERENCE.seal_ms_per_chunk, THRESHOLDS.seal_ms_per_chunk
        ));
    }
    if let Some(u) = &main.user {
        summary.push_str(&format!(
            "\nuser verification: {} chunks, {:.1} ms (reference {} chunks / {} s, limit {} s)",
            u.chunks_examined, u.verify_ms, REFERENCE.per_user_chunks, REFERENCE.user_verify_s, THRESHOLDS.user_day_s
        ));
    }
    if let Some(s) = saving {
        summary.push_str(&format!(
            "\nsize saving against baseline: {s:.2}% (reference {}% per-sensor, {}% per-user)",
            REFERENCE.per_sensor_saving_pct, REFERENCE.per_user_saving_pct
        ));
    }

    Ok(Report::ok(
        json!({
            "store": report_json(&main),
            "baseline": baseline.as_ref().map(report_json),
            "saving_pct": saving,
            "reference": {
                "seal_ms_per_chunk": REFERENCE.seal_ms_per_chunk,
                "storage_overhead_pct": REFERENCE.storage_overhead_pct,
                "per_sensor_saving_pct": REFERENCE.per_sensor_saving_pct,
                "per_user_saving_pct": REFERENCE.per_user_saving_pct,
                "per_user_chunks": REFERENCE.per_user_chunks,
                "non_opt_chunks": REFERENCE.non_opt_chunks,
                "user_verify_s": REFERENCE.user_verify_s,
            },
            "thresholds": {
                "seal_ms_per_chunk": THRESHOLDS.seal_ms_per_chunk,
                "overhead_pct": [THRESHOLDS.overhead_pct.0, THRESHOLDS.overhead_pct.1],
                "audit_s_per_chunk": THRESHOLDS.audit_s_per_chunk,
                "day_audit_s": THRESHOLDS.day_audit_s,
                "user_day_s": THRESHOLDS.user_day_s,
            },
        }),
        summary,
    ))
}
