//! Notification of rules to users: notice-only (through a trusted notifier
//! holding its own key pair) and notice-and-acknowledgment (devices sign
//! their consent).

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};

use super::{DataCaptureRule, PolicyError, RuleSet};
use crate::crypto::{self, KeyPair, PublicKey};
use crate::model::{DeviceId, Digest, SignatureBytes};

const NOTICE_DOMAIN: &[u8] = b"notary-notice-v1";
const BUNDLE_DOMAIN: &[u8] = b"notary-bundle-v1";
const ACK_DOMAIN: &[u8] = b"notary-ack-v1";

fn notice_message(rule_bytes: &[u8]) -> Vec<u8> {
    [NOTICE_DOMAIN, rule_bytes].concat()
}

/// What the enclave hands to SP for forwarding to the notifier. SP sees
/// only ciphertext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoticeBundle {
    pub rule_id: u64,
    pub ciphertext: Vec<u8>,
    pub signature: SignatureBytes,
}

impl NoticeBundle {
    fn signed_message(rule_id: u64, ciphertext: &[u8]) -> Vec<u8> {
        let mut m = BUNDLE_DOMAIN.to_vec();
        m.extend_from_slice(&rule_id.to_be_bytes());
        m.extend_from_slice(ciphertext);
        m
    }

    pub fn verify(&self, enclave: &PublicKey) -> bool {
        crypto::verify_sig(enclave, &Self::signed_message(self.rule_id, &self.ciphertext), &self.signature.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.rule_id.to_be_bytes().to_vec();
        out.extend_from_slice(&self.signature.0);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        if bytes.len() < 8 + 64 {
            return Err(PolicyError::Notice("truncated bundle"));
        }
        Ok(Self {
            rule_id: u64::from_be_bytes(bytes[..8].try_into().unwrap()),
            signature: SignatureBytes(bytes[8..72].try_into().unwrap()),
            ciphertext: bytes[72..].to_vec(),
        })
    }
}

/// A rule as users receive it, signed by the enclave.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Broadcast {
    pub rule: DataCaptureRule,
    pub enclave_signature: SignatureBytes,
}

impl Broadcast {
    pub fn verify(&self, enclave: &PublicKey) -> bool {
        crypto::verify_sig(enclave, &notice_message(&self.rule.canonical_bytes()), &self.enclave_signature.0)
    }

    /// One line: the rule in rule-file syntax followed by `sig=<hex>`.
    pub fn to_line(&self) -> String {
        format!("{} sig={}", super::text::format_rule_line(&self.rule), hex::encode(self.enclave_signature.0))
    }

    pub fn from_line(line: &str) -> Result<Self, PolicyError> {
        let (rule_part, sig) = line
            .trim()
            .rsplit_once(" sig=")
            .ok_or(PolicyError::Notice("broadcast line lacks signature"))?;
        let sig: [u8; 64] = hex::decode(sig)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or(PolicyError::Notice("bad signature hex"))?;
        let rule = super::text::parse_rule_file(&format!("default=opt-in\n{rule_part}\n"))?
            .rules
            .pop()
            .ok_or(PolicyError::Notice("empty broadcast"))?;
        Ok(Self { rule, enclave_signature: SignatureBytes(sig) })
    }
}

/// Notice-only model. The rule enters the active set before the bundle is
/// returned, so enforcement never lags the notice.
pub fn publish_rule_nom<R: RngCore + CryptoRng>(
    rule: DataCaptureRule,
    enclave: &KeyPair,
    notifier: &PublicKey,
    active: &mut RuleSet,
    rng: &mut R,
) -> Result<NoticeBundle, PolicyError> {
    let rule_bytes = rule.canonical_bytes();
    let rule_id = rule.rule_id;
    active.add_rule(rule)?;
    let rule_sig = crypto::sign(enclave, &notice_message(&rule_bytes));
    let mut payload = rule_sig.0.to_vec();
    payload.extend_from_slice(&rule_bytes);
    let ciphertext = crypto::pk_encrypt(notifier, &payload, rng);
    let signature = crypto::sign(enclave, &NoticeBundle::signed_message(rule_id, &ciphertext));
    Ok(NoticeBundle { rule_id, ciphertext, signature })
}

/// Notifier side: check the bundle came from the enclave, decrypt, and
/// produce the broadcast users will see.
pub fn open_notice(bundle: &NoticeBundle, notifier: &KeyPair, enclave: &PublicKey) -> Result<Broadcast, PolicyError> {
    if !bundle.verify(enclave) {
        return Err(PolicyError::Notice("bundle signature invalid"));
    }
    let payload = crypto::pk_decrypt(notifier, &bundle.ciphertext)?;
    if payload.len() < 64 {
        return Err(PolicyError::Notice("truncated notice payload"));
    }
    let (sig, rule_bytes) = payload.split_at(64);
    let rule = DataCaptureRule::from_canonical_bytes(rule_bytes)?;
    if rule.rule_id != bundle.rule_id {
        return Err(PolicyError::Notice("rule id mismatch"));
    }
    let b = Broadcast { rule, enclave_signature: SignatureBytes(sig.try_into().unwrap()) };
    if !b.verify(enclave) {
        return Err(PolicyError::Notice("rule signature invalid"));
    }
    Ok(b)
}

/// Notice-and-acknowledgment model: no notifier, users receive the signed
/// rule directly and answer with an [`Acknowledgment`].
pub fn publish_rule_nam(rule: DataCaptureRule, enclave: &KeyPair, active: &mut RuleSet) -> Result<Broadcast, PolicyError> {
    let sig = crypto::sign(enclave, &notice_message(&rule.canonical_bytes()));
    active.add_rule(rule.clone())?;
    Ok(Broadcast { rule, enclave_signature: sig })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Acknowledgment {
    pub device: DeviceId,
    pub rule_id: u64,
    pub rule_digest: Digest,
    pub signature: SignatureBytes,
}

impl Acknowledgment {
    fn message(device: &DeviceId, rule_id: u64, digest: &Digest) -> Vec<u8> {
        let mut m = ACK_DOMAIN.to_vec();
        m.extend_from_slice(&(device.as_bytes().len() as u32).to_be_bytes());
        m.extend_from_slice(device.as_bytes());
        m.extend_from_slice(&rule_id.to_be_bytes());
        m.extend_from_slice(digest.as_bytes());
        m
    }

    pub fn to_line(&self) -> String {
        format!(
            "device={} rule_id={} digest={} sig={}",
            self.device.to_hex(),
            self.rule_id,
            self.rule_digest,
            hex::encode(self.signature.0)
        )
    }

    pub fn from_line(line: &str) -> Result<Self, PolicyError> {
        let bad = PolicyError::AckRejected("malformed acknowledgment line");
        let mut fields = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or(PolicyError::AckRejected("malformed acknowledgment line"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or(PolicyError::AckRejected("missing field"));
        let device = DeviceId::from_hex(get("device")?).map_err(|_| PolicyError::AckRejected("bad device"))?;
        let rule_id = get("rule_id")?.parse().map_err(|_| PolicyError::AckRejected("bad rule id"))?;
        let digest: [u8; 32] = hex::decode(get("digest")?).ok().and_then(|b| b.try_into().ok()).ok_or(bad)?;
        let sig: [u8; 64] = hex::decode(get("sig")?)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or(PolicyError::AckRejected("bad signature"))?;
        Ok(Self { device, rule_id, rule_digest: Digest(digest), signature: SignatureBytes(sig) })
    }
}

/// Device side of the notice-and-acknowledgment model.
pub fn ack_rule_nam(device: &DeviceId, device_keys: &KeyPair, rule: &DataCaptureRule) -> Acknowledgment {
    let digest = rule.digest();
    let signature = crypto::sign(device_keys, &Acknowledgment::message(device, rule.rule_id, &digest));
    Acknowledgment { device: device.clone(), rule_id: rule.rule_id, rule_digest: digest, signature }
}

/// Devices that consented, keyed by device id. Only acknowledgments that
/// verify under the device's registered key are admitted.
#[derive(Clone, Debug, Default)]
pub struct AckRegistry {
    device_keys: BTreeMap<DeviceId, PublicKey>,
    acks: BTreeMap<DeviceId, Acknowledgment>,
}

impl AckRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_device(&mut self, device: DeviceId, key: PublicKey) {
        self.device_keys.insert(device, key);
    }

    /// Admits `ack` if it is correctly signed over a rule present in `rules`.
    /// The registry is left untouched on error.
    pub fn register_ack(&mut self, ack: Acknowledgment, rules: &RuleSet) -> Result<(), PolicyError> {
        let key = self.device_keys.get(&ack.device).ok_or(PolicyError::AckRejected("unknown device"))?;
        let rule = rules.rule(ack.rule_id).ok_or(PolicyError::AckRejected("unknown rule"))?;
        if rule.digest() != ack.rule_digest {
            return Err(PolicyError::AckRejected("rule digest mismatch"));
        }
        let msg = Acknowledgment::message(&ack.device, ack.rule_id, &ack.rule_digest);
        if !crypto::verify_sig(key, &msg, &ack.signature.0) {
            return Err(PolicyError::AckRejected("bad signature"));
        }
        self.acks.insert(ack.device.clone(), ack);
        Ok(())
    }

    pub fn is_acknowledged(&self, device: &DeviceId) -> bool {
        self.acks.contains_key(device)
    }

    pub fn len(&self) -> usize {
        self.acks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acks.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SensorId, SensorReading, SensorState, Timestamp};
    use crate::policy::{evaluate, Interval, Polarity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rule(id: u64, polarity: Polarity) -> DataCaptureRule {
        DataCaptureRule::new(id, polarity, Interval { start: Timestamp(0), end: Timestamp(1_000_000) })
    }

    #[test]
    fn nom_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let enclave = KeyPair::generate(&mut rng);
        let notifier = KeyPair::generate(&mut rng);
        let mut active = RuleSet::new(Polarity::OptIn, vec![]).unwrap();
        let r = rule(5, Polarity::OptOut);
        let bundle = publish_rule_nom(r.clone(), &enclave, &notifier.public(), &mut active, &mut rng).unwrap();
        assert_eq!(active.rules, vec![r.clone()]);
        active.check_digest().unwrap();
        assert!(bundle.verify(&enclave.public()));
        let b = open_notice(&NoticeBundle::from_bytes(&bundle.to_bytes()).unwrap(), &notifier, &enclave.public())
            .unwrap();
        assert_eq!(b.rule.canonical_bytes(), r.canonical_bytes());
        assert_eq!(Broadcast::from_line(&b.to_line()).unwrap(), b);
        assert!(b.verify(&enclave.public()));
    }

    #[test]
    fn nom_tampered_ciphertext_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let enclave = KeyPair::generate(&mut rng);
        let notifier = KeyPair::generate(&mut rng);
        let mut active = RuleSet::new(Polarity::OptIn, vec![]).unwrap();
        let bundle = publish_rule_nom(rule(1, Polarity::OptIn), &enclave, &notifier.public(), &mut active, &mut rng)
            .unwrap();
        for i in 0..bundle.ciphertext.len() {
            let mut b = bundle.clone();
            b.ciphertext[i] ^= 0x80;
            assert!(open_notice(&b, &notifier, &enclave.public()).is_err());
            // Even with a re-signed bundle the AEAD layer rejects the edit.
            b.signature = crypto::sign(&enclave, &NoticeBundle::signed_message(b.rule_id, &b.ciphertext));
            assert!(open_notice(&b, &notifier, &enclave.public()).is_err());
        }
    }

    #[test]
    fn nam_acks_gate_capture() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let enclave = KeyPair::generate(&mut rng);
        let alice_keys = KeyPair::generate(&mut rng);
        let bob_keys = KeyPair::generate(&mut rng);
        let alice = DeviceId::new(b"alice".to_vec()).unwrap();
        let bob = DeviceId::new(b"bob".to_vec()).unwrap();
        let mut active = RuleSet::new(Polarity::OptOut, vec![]).unwrap();
        let r = rule(9, Polarity::OptIn);
        let notice = publish_rule_nam(r.clone(), &enclave, &mut active).unwrap();
        assert!(notice.verify(&enclave.public()));

        let mut reg = AckRegistry::new();
        reg.register_device(alice.clone(), alice_keys.public());
        reg.register_device(bob.clone(), bob_keys.public());
        let ack = ack_rule_nam(&alice, &alice_keys, &r);
        assert_eq!(Acknowledgment::from_line(&ack.to_line()).unwrap(), ack);
        reg.register_ack(ack, &active).unwrap();

        // Bob's ack signed with the wrong key is rejected.
        let forged = ack_rule_nam(&bob, &alice_keys, &r);
        assert!(reg.register_ack(forged, &active).is_err());
        assert_eq!(reg.len(), 1);

        let s = SensorId::new(b"ap".to_vec()).unwrap();
        let ra = SensorReading::new(alice, s.clone(), Timestamp(10));
        let rb = SensorReading::new(bob, s, Timestamp(10));
        assert_eq!(evaluate(&active, Some(&reg), &ra).unwrap(), SensorState::Active);
        assert_eq!(evaluate(&active, Some(&reg), &rb).unwrap(), SensorState::Passive);
    }
}
