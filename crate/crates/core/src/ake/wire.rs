//! Message framing: `total_len u32 | type u8 | fields`, each field a
//! `u32`-length-prefixed byte string. `total_len` counts everything after
//! itself.

use std::io::{self, Read, Write};

use super::AkeError;

pub const MSG1: u8 = 0x01;
pub const MSG2: u8 = 0x02;
pub const MSG3: u8 = 0x03;
pub const RESPONSE: u8 = 0x04;
pub const ERROR: u8 = 0x05;

pub const MAX_FRAME: usize = 1 << 30;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub fields: Vec<Vec<u8>>,
}

impl Frame {
    pub fn new(kind: u8, fields: Vec<Vec<u8>>) -> Self {
        Self { kind, fields }
    }

    pub fn error(reason: &str) -> Self {
        Self::new(ERROR, vec![reason.as_bytes().to_vec()])
    }

    pub fn encode(&self) -> Vec<u8> {
        let body: usize = 1 + self.fields.iter().map(|f| 4 + f.len()).sum::<usize>();
        let mut out = Vec::with_capacity(4 + body);
        out.extend_from_slice(&(body as u32).to_be_bytes());
        out.push(self.kind);
        for f in &self.fields {
            out.extend_from_slice(&(f.len() as u32).to_be_bytes());
            out.extend_from_slice(f);
        }
        out
    }

    /// Parses one complete frame; the input must contain nothing else.
    pub fn decode(bytes: &[u8]) -> Result<Self, AkeError> {
        let (len, rest) = bytes.split_at_checked(4).ok_or(AkeError::Malformed("frame too short"))?;
        if u32::from_be_bytes(len.try_into().unwrap()) as usize != rest.len() {
            return Err(AkeError::Malformed("frame length mismatch"));
        }
        Self::decode_body(rest)
    }

    fn decode_body(body: &[u8]) -> Result<Self, AkeError> {
        let (&kind, mut rest) = body.split_first().ok_or(AkeError::Malformed("empty frame"))?;
        let mut fields = Vec::new();
        while !rest.is_empty() {
            let (n, r) = rest.split_at_checked(4).ok_or(AkeError::Malformed("truncated field length"))?;
            let n = u32::from_be_bytes(n.try_into().unwrap()) as usize;
            let (f, r) = r.split_at_checked(n).ok_or(AkeError::Malformed("truncated field"))?;
            fields.push(f.to_vec());
            rest = r;
        }
        Ok(Self { kind, fields })
    }

    /// Checks the type and field count, turning an error frame into
    /// [`AkeError::Remote`].
    pub fn expect(self, kind: u8, count: usize) -> Result<Vec<Vec<u8>>, AkeError> {
        if self.kind == ERROR {
            let reason = self.fields.first().map(|f| String::from_utf8_lossy(f).into_owned()).unwrap_or_default();
            return Err(AkeError::Remote(reason));
        }
        if self.kind != kind || self.fields.len() != count {
            return Err(AkeError::Malformed("unexpected message"));
        }
        Ok(self.fields)
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, AkeError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_be_bytes(len) as usize;
        if len == 0 || len > MAX_FRAME {
            return Err(AkeError::Malformed("frame length out of range"));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        Self::decode_body(&body)
    }
}

/// Concatenation of `u32`-length-prefixed parts, used for MAC and
/// signature inputs.
pub fn lp(parts: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| 4 + p.len()).sum());
    for p in parts {
        out.extend_from_slice(&(p.len() as u32).to_be_bytes());
        out.extend_from_slice(p);
    }
    out
}

/// Splits the output of [`lp`] back into parts.
pub fn split_lp(mut bytes: &[u8]) -> Option<Vec<&[u8]>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (n, r) = bytes.split_at_checked(4)?;
        let (p, r) = r.split_at_checked(u32::from_be_bytes(n.try_into().ok()?) as usize)?;
        out.push(p);
        bytes = r;
    }
    Some(out)
}
