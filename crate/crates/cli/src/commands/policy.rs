use std::fs::{self, OpenOptions};
use std::io::Write;

use rand::rngs::OsRng;
use serde_json::json;

use notary_core::policy::{
    ack_rule_nam, open_notice, parse_rule_file, publish_rule_nam, publish_rule_nom, write_rule_file, Broadcast,
};

use super::io_err;
use crate::keys::KeyDir;
use crate::{AckArgs, CmdResult, NoticeModel, NotifyArgs, Report};

fn append_lines(path: &std::path::Path, lines: &[String]) -> Result<(), String> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    for l in lines {
        writeln!(f, "{l}").map_err(io_err(path))?;
    }
    Ok(())
}

pub fn notify(dir: &KeyDir, args: &NotifyArgs) -> CmdResult {
    let text = fs::read_to_string(&args.rule).map_err(io_err(&args.rule))?;
    let incoming = parse_rule_file(&text).map_err(|e| format!("{}: {e}", args.rule.display()))?;
    let enclave = dir.keypair("enclave")?;
    let mut active = dir.active_rules()?;
    let mut lines = Vec::new();
    let mut published = Vec::new();
    for rule in incoming.rules {
        let id = rule.rule_id;
        let (broadcast, bundle_bytes) = match args.model {
            NoticeModel::Nom => {
                let notifier = dir.keypair("notifier")?;
                let bundle = publish_rule_nom(rule, &enclave, &notifier.public(), &mut active, &mut OsRng)
                    .map_err(|e| e.to_string())?;
                let b = open_notice(&bundle, &notifier, &enclave.public()).map_err(|e| e.to_string())?;
                (b, Some(bundle.to_bytes().len()))
            }
            NoticeModel::Nam => (publish_rule_nam(rule, &enclave, &mut active).map_err(|e| e.to_string())?, None),
        };
        lines.push(broadcast.to_line());
        published.push(json!({ "rule_id": id, "bundle_bytes": bundle_bytes }));
    }
    dir.write("active.rules", &write_rule_file(&active))?;
    append_lines(&args.out, &lines)?;
    let model = match args.model {
        NoticeModel::Nom => "nom",
        NoticeModel::Nam => "nam",
    };
    Ok(Report::ok(
        json!({
            "model": model,
            "published": published,
            "active_rules": active.rules.len(),
            "ruleset_digest": active.digest.to_string(),
            "broadcast": args.out,
        }),
        format!("published {} rule(s) under {model}; {} active", lines.len(), active.rules.len()),
    ))
}

pub fn ack(dir: &KeyDir, args: &AckArgs) -> CmdResult {
    let enclave = dir.public("enclave")?;
    let (device, keys) = dir.device(args.device)?;
    let text = fs::read_to_string(&args.broadcast).map_err(io_err(&args.broadcast))?;
    let mut lines = Vec::new();
    let mut acked = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let b = Broadcast::from_line(line).map_err(|e| e.to_string())?;
        if args.rule_id.is_some_and(|id| id != b.rule.rule_id) {
            continue;
        }
        if !b.verify(&enclave) {
            return Err(format!("broadcast for rule {} is not signed by the enclave", b.rule.rule_id));
        }
        lines.push(ack_rule_nam(&device, &keys, &b.rule).to_line());
        acked.push(b.rule.rule_id);
    }
    if acked.is_empty() {
        return Err("no matching broadcast rule to acknowledge".into());
    }
    append_lines(&args.out, &lines)?;
    Ok(Report::ok(
        json!({ "device": device.to_hex(), "rules": acked, "out": args.out }),
        format!("device {} acknowledged {} rule(s)", device.to_hex(), acked.len()),
    ))
}
