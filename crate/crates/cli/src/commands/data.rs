use std::fs::{self, File};
use std::io::{BufReader, BufWriter};

use serde_json::json;

use notary_core::model::Timestamp;
use notary_core::policy::{AckRegistry, Acknowledgment};
use notary_core::sealing::{read_blob, write_blob, ChunkPolicy, FeedReader, FeedWriter, Sealer};
use notary_core::store::ChunkStore;
use notary_core::workload::{read_events, write_events, WorkloadSpec};

use super::{io_err, Rng};
use crate::keys::{KeyDir, Layout};
use crate::{CmdResult, FeedArgs, GenArgs, Report, SealArgs};

pub fn gen(args: &GenArgs) -> CmdResult {
    let spec = WorkloadSpec {
        days: args.days,
        sensors: args.sensors,
        devices: args.devices,
        events_per_day: args.events_per_day,
        seed: args.seed,
        start: args.start,
        params_len: args.params_len,
        buildings: args.buildings,
    };
    let f = File::create(&args.out).map_err(io_err(&args.out))?;
    let n = write_events(&mut BufWriter::new(f), spec.events()).map_err(io_err(&args.out))?;
    Ok(Report::ok(
        json!({
            "out": args.out,
            "events": n,
            "days": spec.days,
            "sensors": spec.sensors,
            "devices": spec.devices,
            "seed": spec.seed,
            "start": spec.start,
        }),
        format!("wrote {n} events to {}", args.out.display()),
    ))
}

pub fn feed(dir: &KeyDir, args: &FeedArgs) -> CmdResult {
    let enclave = dir.public("enclave")?;
    let mut rng = Rng::new(args.seed);
    let (mut writer, header) = FeedWriter::new(&enclave, &mut rng);
    let input = File::open(&args.events).map_err(io_err(&args.events))?;
    let out = File::create(&args.out).map_err(io_err(&args.out))?;
    let mut out = BufWriter::new(out);
    write_blob(&mut out, &header).map_err(io_err(&args.out))?;
    let mut n = 0u64;
    for r in read_events(BufReader::new(input)) {
        let r = r.map_err(|e| format!("{}: {e}", args.events.display()))?;
        write_blob(&mut out, &writer.seal(&r)).map_err(io_err(&args.out))?;
        n += 1;
    }
    std::io::Write::flush(&mut out).map_err(io_err(&args.out))?;
    Ok(Report::ok(json!({ "out": args.out, "frames": n }), format!("encrypted {n} events into {}", args.out.display())))
}

fn load_acks(dir: &KeyDir, path: &std::path::Path, rules: &notary_core::policy::RuleSet) -> Result<(AckRegistry, u64), String> {
    let mut reg = AckRegistry::new();
    for (d, k) in dir.device_keys()? {
        reg.register_device(d, k);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rejected = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let ok = Acknowledgment::from_line(line).and_then(|a| reg.register_ack(a, rules));
        if ok.is_err() {
            rejected += 1;
        }
    }
    Ok((reg, rejected))
}

pub fn seal(dir: &KeyDir, args: &SealArgs) -> CmdResult {
    let key = dir.keypair("enclave")?;
    let rules = dir.active_rules()?;
    let (acks, acks_rejected) = match &args.acks {
        Some(p) => {
            let (reg, rejected) = load_acks(dir, p, &rules)?;
            (Some(reg), rejected)
        }
        None => (None, 0),
    };
    let acks_admitted = acks.as_ref().map(AckRegistry::len);
    let policy = ChunkPolicy {
        mode: args.mode.into(),
        max_bytes: args.chunk_bytes,
        max_age: args.chunk_age,
        bucket_count: args.buckets,
    };
    let mut store = ChunkStore::open(&args.store).map_err(|e| e.to_string())?;
    if !store.is_empty() {
        return Err(format!("{} already holds chunks", args.store.display()));
    }
    let feed_key = dir.keypair("enclave")?;
    let mut sealer = Sealer::new(policy, rules, acks, key, Rng::new(args.seed)).map_err(|e| e.to_string())?;
    let mut last = Timestamp(0);
    let serr = |e: notary_core::sealing::SealError| e.to_string();

    if let Some(path) = &args.feed {
        let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
        let header = read_blob(&mut r).map_err(io_err(path))?.ok_or("empty feed")?;
        let mut feed = FeedReader::open(&feed_key, &header).map_err(serr)?;
        while let Some(frame) = read_blob(&mut r).map_err(io_err(path))? {
            sealer.ingest(&mut feed, &frame, &mut store).map_err(serr)?;
        }
        last = sealer.latest().unwrap_or(last);
    } else if let Some(path) = &args.events {
        let input = File::open(path).map_err(io_err(path))?;
        for r in read_events(BufReader::new(input)) {
            let r = r.map_err(|e| format!("{}: {e}", path.display()))?;
            last = last.max(r.time);
            sealer.push(r, &mut store).map_err(serr)?;
        }
    }
    let stats = sealer.finish(last, &mut store).map_err(serr)?;
    dir.write_layout(&Layout { mode: policy.mode, buckets: if policy.mode.is_bucketed() { policy.bucket_count } else { 0 } })?;

    Ok(Report::ok(
        json!({
            "store": args.store,
            "mode": policy.mode.name(),
            "readings": stats.readings,
            "rejected_frames": stats.rejected,
            "active": stats.active,
            "passive": stats.passive,
            "dropped": stats.dropped,
            "chunks": stats.chunks,
            "markers": stats.markers,
            "streams": store.streams().count(),
            "sealed_bytes": store.total_bytes(),
            "acks_admitted": acks_admitted,
            "acks_rejected": acks_rejected,
        }),
        format!(
            "sealed {} readings ({} active, {} passive) into {} chunks, {} frames rejected",
            stats.readings, stats.active, stats.passive, stats.chunks, stats.rejected
        ),
    ))
}
