use std::fs;

use rand::rngs::OsRng;
use serde_json::json;

use notary_core::ake::{Role, VerifierRegistry};
use notary_core::crypto::{self, KeyPair};
use notary_core::policy::{write_rule_file, Polarity, RuleSet};
use notary_core::workload::device_id;

use crate::keys::{device_vid, KeyDir, AUDITOR_VID};
use crate::{CmdResult, Report, SetupArgs};

fn self_test(name: &str, kp: &KeyPair, dir: &KeyDir) -> Result<(), String> {
    let msg = format!("self-test {name}");
    let sig = crypto::sign(kp, msg.as_bytes());
    let reread = dir.keypair(name)?;
    if reread.public() != kp.public() || !crypto::verify_sig(&reread.public(), msg.as_bytes(), &sig.0) {
        return Err(format!("self-test failed for {name}"));
    }
    Ok(())
}

pub fn run(dir: &KeyDir, args: &SetupArgs) -> CmdResult {
    let mut names = vec!["enclave".to_string(), "notifier".to_string(), AUDITOR_VID.to_string()];
    names.extend((0..args.devices).map(device_vid));
    fs::create_dir_all(dir.root()).map_err(|e| format!("{}: {e}", dir.root().display()))?;
    let existing: Vec<_> = names
        .iter()
        .map(|n| format!("{n}.key"))
        .chain(["sp.key".into(), "registry.txt".into()])
        .filter(|f| dir.path(f).exists())
        .collect();
    if !existing.is_empty() && !args.force {
        return Err(format!(
            "{} already holds key material ({}); pass --force to replace it",
            dir.root().display(),
            existing.join(", ")
        ));
    }

    let mut registry = VerifierRegistry::new();
    let mut devices = String::new();
    let mut device_list = Vec::new();
    for name in &names {
        let kp = KeyPair::generate(&mut OsRng);
        let path = dir.path(&format!("{name}.key"));
        kp.write_file(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        self_test(name, &kp, dir)?;
        if name == AUDITOR_VID {
            registry.register(name.as_bytes().to_vec(), Role::Auditor, kp.public());
        }
        if name == "enclave" {
            dir.write("enclave.pub", &kp.public().to_hex())?;
        }
    }
    for i in 0..args.devices {
        let d = device_id(i);
        let pk = dir.keypair(&device_vid(i))?.public();
        registry.register(device_vid(i).into_bytes(), Role::User(d.clone()), pk);
        devices.push_str(&format!("{} {}\n", d.to_hex(), pk.to_hex()));
        device_list.push(json!({ "index": i, "device": d.to_hex(), "v_id": device_vid(i) }));
    }

    let sp = KeyPair::generate(&mut OsRng);
    sp.write_file(&dir.path("sp.key")).map_err(|e| e.to_string())?;
    self_test("sp", &sp, dir)?;
    dir.write("sp.pub", &sp.public().to_hex())?;
    dir.write("registry.txt", &registry.to_text())?;
    dir.write("devices.txt", &devices)?;
    let rules = RuleSet::new(Polarity::OptIn, Vec::new()).map_err(|e| e.to_string())?;
    dir.write("active.rules", &write_rule_file(&rules))?;

    Ok(Report::ok(
        json!({
            "key_dir": dir.root(),
            "keypairs": names.len(),
            "service_key": "sp.key",
            "devices": device_list,
            "self_test": "ok",
        }),
        format!(
            "created {} key pairs (enclave, notifier, auditor, {} devices) and a service key in {}",
            names.len(),
            args.devices,
            dir.root().display()
        ),
    ))
}
