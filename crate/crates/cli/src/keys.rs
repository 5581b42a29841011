//! Layout of the key directory.
//!
//! ```text
//! enclave.key notifier.key auditor.key device-NN.key sp.key
//! enclave.pub sp.pub       public keys, hex
//! registry.txt             verifier registry served by `serve`
//! devices.txt              `<device-hex> <pubkey-hex>` per device
//! active.rules             rule set held by the sealer
//! layout.json              stream layout written by `seal`
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use notary_core::ake::VerifierRegistry;
use notary_core::crypto::{KeyPair, PublicKey};
use notary_core::model::{DeviceId, SealMode, StreamTag};
use notary_core::policy::{parse_rule_file, RuleSet};
use notary_core::sealing::bucket_prefix;
use notary_core::workload::device_id;

pub const AUDITOR_VID: &str = "auditor";

pub fn device_vid(i: u32) -> String {
    format!("device-{i:02}")
}

pub struct KeyDir {
    root: PathBuf,
}

impl KeyDir {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn keypair(&self, name: &str) -> Result<KeyPair, String> {
        let p = self.path(&format!("{name}.key"));
        KeyPair::read_file(&p).map_err(|e| format!("{}: {e}", p.display()))
    }

    pub fn public(&self, name: &str) -> Result<PublicKey, String> {
        let p = self.path(&format!("{name}.pub"));
        let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        PublicKey::from_hex(&text).map_err(|e| format!("{}: {e}", p.display()))
    }

    pub fn registry(&self) -> Result<VerifierRegistry, String> {
        let p = self.path("registry.txt");
        let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        VerifierRegistry::from_text(&text).map_err(|e| format!("{}: {e}", p.display()))
    }

    pub fn device_keys(&self) -> Result<Vec<(DeviceId, PublicKey)>, String> {
        let p = self.path("devices.txt");
        let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (d, k) = l.split_once(' ').ok_or_else(|| format!("{}: malformed line", p.display()))?;
                Ok((
                    DeviceId::from_hex(d).map_err(|e| e.to_string())?,
                    PublicKey::from_hex(k).map_err(|e| e.to_string())?,
                ))
            })
            .collect()
    }

    pub fn device(&self, i: u32) -> Result<(DeviceId, KeyPair), String> {
        Ok((device_id(i), self.keypair(&device_vid(i))?))
    }

    pub fn active_rules(&self) -> Result<RuleSet, String> {
        let p = self.path("active.rules");
        let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        parse_rule_file(&text).map_err(|e| format!("{}: {e}", p.display()))
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), String> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| format!("{}: {e}", p.display()))
    }

    pub fn layout(&self) -> Result<Layout, String> {
        let p = self.path("layout.json");
        let text = fs::read_to_string(&p).map_err(|e| format!("{}: {e} (run `notary seal` first)", p.display()))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
        let mode = v["mode"]
            .as_str()
            .and_then(|m| [SealMode::Entire, SealMode::Mixed, SealMode::PerSensor, SealMode::PerUser].into_iter().find(|x| x.name() == m))
            .ok_or_else(|| format!("{}: bad mode", p.display()))?;
        let buckets = v["buckets"].as_u64().and_then(|b| u32::try_from(b).ok()).unwrap_or(0);
        Ok(Layout { mode, buckets })
    }

    pub fn write_layout(&self, layout: &Layout) -> Result<(), String> {
        let v = serde_json::json!({ "mode": layout.mode.name(), "buckets": layout.buckets });
        self.write("layout.json", &serde_json::to_string_pretty(&v).expect("serializable"))
    }
}

/// The verifier's own record of how the log is partitioned into streams.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub mode: SealMode,
    pub buckets: u32,
}

impl Layout {
    pub fn streams(&self) -> Vec<Option<StreamTag>> {
        if self.mode.is_bucketed() {
            (0..self.buckets).map(|b| Some(StreamTag::bucket(bucket_prefix(self.mode), b))).collect()
        } else {
            vec![None]
        }
    }
}
