//! Encrypted controller-to-enclave reading feed.
//!
//! The controller draws a feed key and sends it once, public-key encrypted to
//! the enclave. Every reading then travels as an AEAD frame whose nonce
//! carries a strictly increasing counter.

use std::io::{self, Read, Write};

use rand::{CryptoRng, RngCore};
use zeroize::Zeroizing;

use super::SealError;
use crate::crypto::{self, KeyPair, PublicKey, NONCE_LEN};
use crate::model::{DeviceId, SensorId, SensorReading, Timestamp};

pub const FEED_MAGIC: &[u8; 4] = b"NFD1";
const FEED_AAD: &[u8] = b"notary-feed-v1";

pub fn encode_reading(r: &SensorReading) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + r.device.as_bytes().len() + r.sensor.as_bytes().len() + 8 + r.params.len());
    out.push(r.device.as_bytes().len() as u8);
    out.extend_from_slice(r.device.as_bytes());
    out.push(r.sensor.as_bytes().len() as u8);
    out.extend_from_slice(r.sensor.as_bytes());
    out.extend_from_slice(&r.time.to_be_bytes());
    out.extend_from_slice(&(r.params.len() as u16).to_be_bytes());
    out.extend_from_slice(&r.params);
    out
}

pub fn decode_reading(bytes: &[u8]) -> Option<SensorReading> {
    let (&dl, rest) = bytes.split_first()?;
    let (dev, rest) = rest.split_at_checked(dl as usize)?;
    let (&sl, rest) = rest.split_first()?;
    let (sen, rest) = rest.split_at_checked(sl as usize)?;
    let (t, rest) = rest.split_at_checked(8)?;
    let (pl, rest) = rest.split_at_checked(2)?;
    let pl = u16::from_be_bytes(pl.try_into().ok()?) as usize;
    if rest.len() != pl {
        return None;
    }
    Some(
        SensorReading::new(
            DeviceId::new(dev.to_vec()).ok()?,
            SensorId::new(sen.to_vec()).ok()?,
            Timestamp(u64::from_be_bytes(t.try_into().ok()?)),
        )
        .with_params(rest.to_vec()),
    )
}

fn counter_nonce(counter: u64) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    n[4..].copy_from_slice(&counter.to_be_bytes());
    n
}

pub struct FeedWriter {
    key: Zeroizing<[u8; 32]>,
    counter: u64,
}

impl FeedWriter {
    /// Returns the writer and the header to send ahead of any frame.
    pub fn new<R: RngCore + CryptoRng>(enclave: &PublicKey, rng: &mut R) -> (Self, Vec<u8>) {
        let key = crypto::random_key(rng);
        let mut header = FEED_MAGIC.to_vec();
        header.extend_from_slice(&crypto::pk_encrypt(enclave, &*key, rng));
        (Self { key, counter: 0 }, header)
    }

    pub fn seal(&mut self, reading: &SensorReading) -> Vec<u8> {
        self.counter += 1;
        crypto::aead_encrypt_with_nonce(&self.key, &counter_nonce(self.counter), FEED_AAD, &encode_reading(reading))
    }
}

pub struct FeedReader {
    key: Zeroizing<[u8; 32]>,
    last_counter: u64,
}

impl FeedReader {
    pub fn open(enclave: &KeyPair, header: &[u8]) -> Result<Self, SealError> {
        let body = header.strip_prefix(FEED_MAGIC.as_slice()).ok_or_else(|| SealError::Feed("bad feed magic".into()))?;
        let raw = Zeroizing::new(crypto::pk_decrypt(enclave, body)?);
        let key: [u8; 32] = raw.as_slice().try_into().map_err(|_| SealError::Feed("bad feed key length".into()))?;
        Ok(Self { key: Zeroizing::new(key), last_counter: 0 })
    }

    /// Decrypts one frame. Tampered, truncated and replayed frames fail.
    pub fn open_frame(&mut self, frame: &[u8]) -> Result<SensorReading, SealError> {
        let pt = crypto::aead_decrypt(&self.key, FEED_AAD, frame)?;
        let counter = u64::from_be_bytes(frame[4..NONCE_LEN].try_into().unwrap());
        if counter <= self.last_counter {
            return Err(SealError::Feed(format!("replayed frame {counter}")));
        }
        let reading = decode_reading(&pt).ok_or_else(|| SealError::Feed("malformed reading".into()))?;
        self.last_counter = counter;
        Ok(reading)
    }
}

/// Writes a length-prefixed blob.
pub fn write_blob(w: &mut impl Write, blob: &[u8]) -> io::Result<()> {
    w.write_all(&(blob.len() as u32).to_be_bytes())?;
    w.write_all(blob)
}

/// Reads the next length-prefixed blob, `None` at a clean end of input.
pub fn read_blob(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut blob = vec![0u8; u32::from_be_bytes(len) as usize];
    r.read_exact(&mut blob)?;
    Ok(Some(blob))
}

/// Splits a feed file into its header and frames.
pub fn read_feed(r: &mut impl Read) -> io::Result<(Vec<u8>, Vec<Vec<u8>>)> {
    let header = read_blob(r)?.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "empty feed"))?;
    let mut frames = Vec::new();
    while let Some(b) = read_blob(r)? {
        frames.push(b);
    }
    Ok((header, frames))
}
