//! Primitive layer. SHA-256 hashing, Ed25519 signatures, HMAC-SHA256,
//! HKDF-SHA256, X25519 Diffie-Hellman, ChaCha20-Poly1305 AEAD and an
//! X25519-based sealed-box for public-key encryption.
//!
//! Callers only ever hold [`KeyPair`]/[`PublicKey`] handles; raw key bytes
//! stay inside this module (key files included).

use std::fs;
use std::io::Write;
use std::path::Path;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use x25519_dalek::StaticSecret;
use zeroize::{Zeroize, Zeroizing};

use crate::model::{Digest, RandomString, SignatureBytes, DIGEST_LEN};

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const PUBLIC_KEY_LEN: usize = 64;
const SECRET_KEY_LEN: usize = 64;
const KEY_FILE_MAGIC: &[u8; 4] = b"NTK1";

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("authenticated decryption failed")]
    Decrypt,
    #[error("ciphertext too short")]
    Truncated,
    #[error("group element is invalid or yields a non-contributory secret")]
    InvalidGroupElement,
    #[error("malformed key material")]
    InvalidKey,
    #[error("key file: {0}")]
    Io(#[from] std::io::Error),
}

pub fn hash(input: &[u8]) -> Digest {
    Digest(Sha256::digest(input).into())
}

/// `H(0)`: the hash of a single zero byte, used as the predecessor of the
/// first link in every chunk.
pub fn genesis_digest() -> Digest {
    hash(&[0u8])
}

/// A party's long-term key material: an Ed25519 signing key plus an X25519
/// decryption key.
pub struct KeyPair {
    signing: SigningKey,
    decryption: StaticSecret,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { signing: SigningKey::generate(rng), decryption: StaticSecret::random_from_rng(rng) }
    }

    pub fn public(&self) -> PublicKey {
        PublicKey {
            verifying: self.signing.verifying_key(),
            encryption: x25519_dalek::PublicKey::from(&self.decryption),
        }
    }

    fn secret_bytes(&self) -> Zeroizing<[u8; SECRET_KEY_LEN]> {
        let mut out = Zeroizing::new([0u8; SECRET_KEY_LEN]);
        out[..32].copy_from_slice(self.signing.as_bytes());
        out[32..].copy_from_slice(self.decryption.as_bytes());
        out
    }

    fn from_secret_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != SECRET_KEY_LEN {
            return Err(CryptoError::InvalidKey);
        }
        let mut sk = [0u8; 32];
        let mut dk = [0u8; 32];
        sk.copy_from_slice(&bytes[..32]);
        dk.copy_from_slice(&bytes[32..]);
        let kp = Self { signing: SigningKey::from_bytes(&sk), decryption: StaticSecret::from(dk) };
        sk.zeroize();
        dk.zeroize();
        Ok(kp)
    }

    /// Writes the private key to `path` with owner-only permissions.
    pub fn write_file(&self, path: &Path) -> Result<(), CryptoError> {
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut f = opts.open(path)?;
        f.write_all(KEY_FILE_MAGIC)?;
        f.write_all(&*self.secret_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, CryptoError> {
        let bytes = Zeroizing::new(fs::read(path)?);
        match bytes.strip_prefix(KEY_FILE_MAGIC.as_slice()) {
            Some(rest) => Self::from_secret_bytes(rest),
            None => Err(CryptoError::InvalidKey),
        }
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public()).finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey {
    verifying: VerifyingKey,
    encryption: x25519_dalek::PublicKey,
}

impl PublicKey {
    pub fn to_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        let mut out = [0u8; PUBLIC_KEY_LEN];
        out[..32].copy_from_slice(self.verifying.as_bytes());
        out[32..].copy_from_slice(self.encryption.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bytes: &[u8; PUBLIC_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::InvalidKey)?;
        let verifying =
            VerifyingKey::from_bytes(bytes[..32].try_into().unwrap()).map_err(|_| CryptoError::InvalidKey)?;
        let enc: [u8; 32] = bytes[32..].try_into().unwrap();
        Ok(Self { verifying, encryption: x25519_dalek::PublicKey::from(enc) })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Self::from_bytes(&hex::decode(s.trim()).map_err(|_| CryptoError::InvalidKey)?)
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({}…)", &self.to_hex()[..16])
    }
}

pub fn sign(key: &KeyPair, message: &[u8]) -> SignatureBytes {
    SignatureBytes(key.signing.sign(message).to_bytes())
}

/// Total: malformed signature bytes simply fail verification.
pub fn verify_sig(key: &PublicKey, message: &[u8], signature: &[u8]) -> bool {
    let Ok(bytes) = <[u8; 64]>::try_from(signature) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&bytes);
    key.verifying.verify_strict(message, &sig).is_ok()
}

type HmacSha256 = Hmac<Sha256>;

pub fn mac(key: &[u8; 32], message: &[u8]) -> [u8; 32] {
    let mut m = <HmacSha256 as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    m.update(message);
    m.finalize().into_bytes().into()
}

/// Constant-time tag check.
pub fn mac_verify(key: &[u8; 32], message: &[u8], tag: &[u8]) -> bool {
    let mut m = <HmacSha256 as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    m.update(message);
    m.verify_slice(tag).is_ok()
}

/// HKDF-SHA256 with an empty salt and `label` as the info string.
pub fn kdf(secret: &[u8], label: &str) -> Zeroizing<[u8; 32]> {
    let hk = Hkdf::<Sha256>::new(None, secret);
    let mut out = Zeroizing::new([0u8; 32]);
    hk.expand(label.as_bytes(), &mut *out).expect("32 bytes is a valid HKDF length");
    out
}

/// Ephemeral Diffie-Hellman exponent. Zeroized on drop.
pub struct DhSecret(StaticSecret);

/// A public group element (an X25519 point).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct GroupElement(pub [u8; 32]);

impl GroupElement {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::InvalidGroupElement)?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

pub fn dh_keygen<R: RngCore + CryptoRng>(rng: &mut R) -> (DhSecret, GroupElement) {
    let secret = StaticSecret::random_from_rng(rng);
    let public = x25519_dalek::PublicKey::from(&secret);
    (DhSecret(secret), GroupElement(public.to_bytes()))
}

/// Joint secret `g^xy`. Low-order peer elements are rejected.
pub fn dh_shared(secret: &DhSecret, peer: &GroupElement) -> Result<Zeroizing<[u8; 32]>, CryptoError> {
    let shared = secret.0.diffie_hellman(&x25519_dalek::PublicKey::from(peer.0));
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidGroupElement);
    }
    Ok(Zeroizing::new(shared.to_bytes()))
}

/// Symmetric key pair for one session: `e` and the MAC key derived from it.
pub struct SessionKey {
    pub e: Zeroizing<[u8; 32]>,
    pub mac_key: Zeroizing<[u8; 32]>,
}

impl SessionKey {
    pub fn derive(shared: &[u8; 32]) -> Self {
        let e = kdf(shared, "session");
        let mac_key = kdf(&*e, "mac");
        Self { e, mac_key }
    }
}

/// `nonce || ciphertext || tag`, with a random nonce.
pub fn aead_encrypt<R: RngCore + CryptoRng>(key: &[u8; 32], aad: &[u8], plaintext: &[u8], rng: &mut R) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    aead_encrypt_with_nonce(key, &nonce, aad, plaintext)
}

pub fn aead_encrypt_with_nonce(key: &[u8; 32], nonce: &[u8; NONCE_LEN], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    let ct = cipher
        .encrypt(Nonce::from_slice(nonce), Payload { msg: plaintext, aad })
        .expect("chacha20poly1305 encryption is infallible for in-range lengths");
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(nonce);
    out.extend_from_slice(&ct);
    out
}

pub fn aead_decrypt(key: &[u8; 32], aad: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < NONCE_LEN + TAG_LEN {
        return Err(CryptoError::Truncated);
    }
    let (nonce, ct) = ciphertext.split_at(NONCE_LEN);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    cipher.decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad }).map_err(|_| CryptoError::Decrypt)
}

/// Encrypts to `recipient`: ephemeral X25519 agreement, HKDF, then AEAD.
/// Output is `ephemeral_public || nonce || ciphertext || tag`.
pub fn pk_encrypt<R: RngCore + CryptoRng>(recipient: &PublicKey, plaintext: &[u8], rng: &mut R) -> Vec<u8> {
    let eph = StaticSecret::random_from_rng(&mut *rng);
    let eph_pub = x25519_dalek::PublicKey::from(&eph);
    let shared = eph.diffie_hellman(&recipient.encryption);
    let key = box_key(shared.as_bytes(), eph_pub.as_bytes(), recipient.encryption.as_bytes());
    let mut out = eph_pub.as_bytes().to_vec();
    out.extend_from_slice(&aead_encrypt(&key, eph_pub.as_bytes(), plaintext, rng));
    out
}

pub fn pk_decrypt(key: &KeyPair, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < 32 + NONCE_LEN + TAG_LEN {
        return Err(CryptoError::Truncated);
    }
    let (eph, rest) = ciphertext.split_at(32);
    let eph: [u8; 32] = eph.try_into().unwrap();
    let eph_pub = x25519_dalek::PublicKey::from(eph);
    let shared = key.decryption.diffie_hellman(&eph_pub);
    if !shared.was_contributory() {
        return Err(CryptoError::Decrypt);
    }
    let own = x25519_dalek::PublicKey::from(&key.decryption);
    let k = box_key(shared.as_bytes(), &eph, own.as_bytes());
    aead_decrypt(&k, &eph, rest)
}

fn box_key(shared: &[u8; 32], eph: &[u8; 32], recipient: &[u8; 32]) -> Zeroizing<[u8; 32]> {
    let mut ikm = Zeroizing::new([0u8; 96]);
    ikm[..32].copy_from_slice(shared);
    ikm[32..64].copy_from_slice(eph);
    ikm[64..].copy_from_slice(recipient);
    kdf(&*ikm, "sealed-box")
}

pub fn random_string<R: RngCore + CryptoRng>(rng: &mut R) -> RandomString {
    let mut bytes = [0u8; DIGEST_LEN];
    rng.fill_bytes(&mut bytes);
    RandomString(bytes)
}

/// Fresh 32-byte symmetric key.
pub fn random_key<R: RngCore + CryptoRng>(rng: &mut R) -> Zeroizing<[u8; 32]> {
    let mut k = Zeroizing::new([0u8; 32]);
    rng.fill_bytes(&mut *k);
    k
}
