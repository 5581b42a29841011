//! The three-message exchange.
//!
//! ```text
//! V -> SP  msg1  [g^x]
//! SP -> V  msg2  [g^y, SP_id, MAC(SP_id, g^x, g^y), Sig_SP(g^x, g^y, SP_id)]
//! V -> SP  msg3  [MAC(v_id, SP_id, g^x, g^y), AEAD_e(v_id, Sig_V(transcript), query)]
//! SP -> V  resp  [AEAD_e(response)]
//! ```
//!
//! `e = KDF(g^xy, "session")` and the MAC key is `KDF(e, "mac")`. MAC and
//! signature inputs are length-prefixed.

use rand::{CryptoRng, RngCore};

use super::wire::{lp, split_lp, Frame, MSG1, MSG2, MSG3, RESPONSE};
use super::{AkeError, LogQuery, LogResponse, Role, VerifierRegistry};
use crate::crypto::{self, DhSecret, GroupElement, KeyPair, PublicKey, SessionKey};

const SP_SIG_LABEL: &[u8] = b"notary-sigma-responder";
const V_SIG_LABEL: &[u8] = b"notary-sigma-initiator";
const MSG3_AAD: &[u8] = b"notary-sigma-msg3";
const RESPONSE_AAD: &[u8] = b"notary-sigma-response";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    SentExp,
    KeyDerived,
    Authenticated,
    Closed,
}

pub struct Initiator {
    state: State,
    secret: Option<DhSecret>,
    gx: GroupElement,
    gy: Option<GroupElement>,
    sp_id: Vec<u8>,
    sp_key: PublicKey,
    keys: Option<SessionKey>,
}

/// Starts a session; `sp_key` is the responder's long-term public key.
pub fn msg1_init<R: RngCore + CryptoRng>(sp_key: PublicKey, rng: &mut R) -> (Initiator, Vec<u8>) {
    let (secret, gx) = crypto::dh_keygen(rng);
    let frame = Frame::new(MSG1, vec![gx.0.to_vec()]).encode();
    (Initiator { state: State::SentExp, secret: Some(secret), gx, gy: None, sp_id: Vec::new(), sp_key, keys: None }, frame)
}

impl Initiator {
    pub fn handle_msg2(&mut self, bytes: &[u8]) -> Result<(), AkeError> {
        if self.state != State::SentExp {
            return Err(AkeError::State("msg2 out of order"));
        }
        let r = self.handle_msg2_inner(bytes);
        if r.is_err() {
            self.close();
        }
        r
    }

    fn handle_msg2_inner(&mut self, bytes: &[u8]) -> Result<(), AkeError> {
        let f = Frame::decode(bytes)?.expect(MSG2, 4)?;
        let gy = GroupElement::from_slice(&f[0])?;
        let sp_id = &f[1];
        let secret = self.secret.take().ok_or(AkeError::State("no ephemeral secret"))?;
        let shared = crypto::dh_shared(&secret, &gy)?;
        drop(secret);
        let keys = SessionKey::derive(&shared);
        if !crypto::mac_verify(&keys.mac_key, &lp(&[sp_id, &self.gx.0, &gy.0]), &f[2]) {
            return Err(AkeError::Mac);
        }
        if !crypto::verify_sig(&self.sp_key, &lp(&[SP_SIG_LABEL, &self.gx.0, &gy.0, sp_id]), &f[3]) {
            return Err(AkeError::Signature);
        }
        self.gy = Some(gy);
        self.sp_id = sp_id.clone();
        self.keys = Some(keys);
        self.state = State::KeyDerived;
        Ok(())
    }

    /// Reveals `v_id` under the session key, signs the transcript with
    /// `identity` and sends the query.
    pub fn msg3_finish<R: RngCore + CryptoRng>(
        &mut self,
        v_id: &[u8],
        identity: &KeyPair,
        query: &LogQuery,
        rng: &mut R,
    ) -> Result<Vec<u8>, AkeError> {
        if self.state != State::KeyDerived {
            return Err(AkeError::State("msg3 before msg2 was verified"));
        }
        let keys = self.keys.as_ref().expect("keys derived");
        let gy = self.gy.expect("gy set");
        let mac = crypto::mac(&keys.mac_key, &lp(&[v_id, &self.sp_id, &self.gx.0, &gy.0]));
        let sig = crypto::sign(identity, &lp(&[V_SIG_LABEL, v_id, &self.sp_id, &self.gx.0, &gy.0]));
        let aad = lp(&[MSG3_AAD, &self.gx.0, &gy.0]);
        let ct = crypto::aead_encrypt(&keys.e, &aad, &lp(&[v_id, &sig.0, &query.encode()]), rng);
        self.state = State::Authenticated;
        Ok(Frame::new(MSG3, vec![mac.to_vec(), ct]).encode())
    }

    pub fn open_response(&mut self, bytes: &[u8]) -> Result<LogResponse, AkeError> {
        if self.state != State::Authenticated {
            return Err(AkeError::State("response before msg3"));
        }
        let r = (|| {
            let f = Frame::decode(bytes)?.expect(RESPONSE, 1)?;
            let keys = self.keys.as_ref().expect("keys derived");
            let pt = crypto::aead_decrypt(&keys.e, RESPONSE_AAD, &f[0])?;
            LogResponse::decode(&pt)
        })();
        self.close();
        r
    }

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.keys.as_ref()
    }

    pub fn sp_id(&self) -> &[u8] {
        &self.sp_id
    }

    pub fn close(&mut self) {
        self.secret = None;
        self.state = State::Closed;
    }
}

pub struct Responder<'a> {
    state: State,
    registry: &'a VerifierRegistry,
    sp_id: Vec<u8>,
    gx: GroupElement,
    gy: GroupElement,
    keys: Option<SessionKey>,
}

/// A verified msg3: who asked, in which role, for what.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Authorized {
    pub v_id: Vec<u8>,
    pub role: Role,
    pub query: LogQuery,
}

/// Answers msg1. The responder's ephemeral secret is dropped as soon as the
/// joint secret is derived.
pub fn msg2_respond<'a, R: RngCore + CryptoRng>(
    registry: &'a VerifierRegistry,
    sp_id: &[u8],
    sp_key: &KeyPair,
    msg1: &[u8],
    rng: &mut R,
) -> Result<(Responder<'a>, Vec<u8>), AkeError> {
    let f = Frame::decode(msg1)?.expect(MSG1, 1)?;
    let gx = GroupElement::from_slice(&f[0])?;
    let (secret, gy) = crypto::dh_keygen(rng);
    let shared = crypto::dh_shared(&secret, &gx)?;
    drop(secret);
    let keys = SessionKey::derive(&shared);
    let mac = crypto::mac(&keys.mac_key, &lp(&[sp_id, &gx.0, &gy.0]));
    let sig = crypto::sign(sp_key, &lp(&[SP_SIG_LABEL, &gx.0, &gy.0, sp_id]));
    let frame = Frame::new(MSG2, vec![gy.0.to_vec(), sp_id.to_vec(), mac.to_vec(), sig.0.to_vec()]).encode();
    Ok((Responder { state: State::KeyDerived, registry, sp_id: sp_id.to_vec(), gx, gy, keys: Some(keys) }, frame))
}

impl Responder<'_> {
    pub fn handle_msg3(&mut self, bytes: &[u8]) -> Result<Authorized, AkeError> {
        if self.state != State::KeyDerived {
            return Err(AkeError::State("msg3 out of order"));
        }
        let r = self.handle_msg3_inner(bytes);
        match r {
            Ok(_) => self.state = State::Authenticated,
            Err(_) => self.close(),
        }
        r
    }

    fn handle_msg3_inner(&self, bytes: &[u8]) -> Result<Authorized, AkeError> {
        let f = Frame::decode(bytes)?.expect(MSG3, 2)?;
        let keys = self.keys.as_ref().expect("keys derived");
        let aad = lp(&[MSG3_AAD, &self.gx.0, &self.gy.0]);
        let pt = crypto::aead_decrypt(&keys.e, &aad, &f[1]).map_err(|_| AkeError::Mac)?;
        let parts = split_lp(&pt).ok_or(AkeError::Malformed("bad msg3 payload"))?;
        let [v_id, sig, query] = parts.as_slice() else {
            return Err(AkeError::Malformed("bad msg3 payload"));
        };
        if !crypto::mac_verify(&keys.mac_key, &lp(&[v_id, &self.sp_id, &self.gx.0, &self.gy.0]), &f[0]) {
            return Err(AkeError::Mac);
        }
        let reg = self.registry.get(v_id).ok_or(AkeError::UnknownVerifier)?;
        if !crypto::verify_sig(&reg.key, &lp(&[V_SIG_LABEL, v_id, &self.sp_id, &self.gx.0, &self.gy.0]), sig) {
            return Err(AkeError::Signature);
        }
        let query = LogQuery::decode(query)?;
        if matches!(reg.role, Role::User(_)) && !matches!(query, LogQuery::UserRange { .. }) {
            return Err(AkeError::Unauthorized("users may only request user digests"));
        }
        Ok(Authorized { v_id: v_id.to_vec(), role: reg.role.clone(), query })
    }

    pub fn seal_response<R: RngCore + CryptoRng>(&mut self, resp: &LogResponse, rng: &mut R) -> Result<Vec<u8>, AkeError> {
        if self.state != State::Authenticated {
            return Err(AkeError::State("response before an authorized msg3"));
        }
        let keys = self.keys.as_ref().expect("keys derived");
        let ct = crypto::aead_encrypt(&keys.e, RESPONSE_AAD, &resp.encode(), rng);
        self.close();
        Ok(Frame::new(RESPONSE, vec![ct]).encode())
    }

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.keys.as_ref()
    }

    pub fn close(&mut self) {
        self.state = State::Closed;
    }
}
