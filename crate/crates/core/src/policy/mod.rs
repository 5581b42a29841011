//! Data-capture rules and their evaluation to a [`SensorState`].

mod notice;
mod text;

pub use notice::{
    ack_rule_nam, open_notice, publish_rule_nam, publish_rule_nom, Acknowledgment, AckRegistry, Broadcast,
    NoticeBundle,
};
pub use text::{parse_rule_file, write_rule_file};

use std::collections::BTreeSet;

use thiserror::Error;

use crate::crypto::{self, CryptoError};
use crate::model::{DeviceId, Digest, SensorId, SensorReading, SensorState, Timestamp};

pub const SECS_PER_DAY: u32 = 86_400;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("rule set digest mismatch: rules at rest were modified")]
    Integrity,
    #[error("invalid rule {rule_id}: {reason}")]
    InvalidRule { rule_id: u64, reason: &'static str },
    #[error("rule file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("acknowledgment rejected: {0}")]
    AckRejected(&'static str),
    #[error("notice rejected: {0}")]
    Notice(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    /// Matching data is captured.
    OptIn,
    /// Matching data is not captured.
    OptOut,
}

impl Polarity {
    fn code(self) -> u8 {
        match self {
            Self::OptIn => 1,
            Self::OptOut => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::OptIn => "opt-in",
            Self::OptOut => "opt-out",
        }
    }
}

/// Seconds-of-day window `[from, to)`, wrapping past midnight when `from > to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DailyWindow {
    pub from: u32,
    pub to: u32,
}

impl DailyWindow {
    pub fn contains(&self, t: Timestamp) -> bool {
        let sod = (t.0 % SECS_PER_DAY as u64) as u32;
        if self.from < self.to {
            self.from <= sod && sod < self.to
        } else {
            sod >= self.from || sod < self.to
        }
    }
}

/// Half-open `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Interval {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataCaptureRule {
    pub rule_id: u64,
    pub polarity: Polarity,
    /// `None` matches every device.
    pub devices: Option<BTreeSet<DeviceId>>,
    /// `None` matches every sensor. A building is a set of access points.
    pub sensors: Option<BTreeSet<SensorId>>,
    pub daily_window: Option<DailyWindow>,
    pub interval: Option<Interval>,
    pub validity: Interval,
}

impl DataCaptureRule {
    /// A rule with an empty predicate, valid over `validity`.
    pub fn new(rule_id: u64, polarity: Polarity, validity: Interval) -> Self {
        Self { rule_id, polarity, devices: None, sensors: None, daily_window: None, interval: None, validity }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |reason| Err(PolicyError::InvalidRule { rule_id: self.rule_id, reason });
        if self.validity.start >= self.validity.end {
            return bad("empty validity");
        }
        if let Some(w) = self.daily_window {
            if w.from >= SECS_PER_DAY || w.to >= SECS_PER_DAY || w.from == w.to {
                return bad("daily window out of range or empty");
            }
        }
        if let Some(i) = self.interval {
            if i.start >= i.end {
                return bad("empty interval");
            }
        }
        Ok(())
    }

    pub fn is_valid_at(&self, t: Timestamp) -> bool {
        self.validity.contains(t)
    }

    /// Validity plus predicate.
    pub fn matches(&self, reading: &SensorReading) -> bool {
        self.is_valid_at(reading.time)
            && self.devices.as_ref().map_or(true, |d| d.contains(&reading.device))
            && self.sensors.as_ref().map_or(true, |s| s.contains(&reading.sensor))
            && self.daily_window.map_or(true, |w| w.contains(reading.time))
            && self.interval.map_or(true, |i| i.contains(reading.time))
    }

    /// Canonical binary form, used for digests, notices and acknowledgments.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.rule_id.to_be_bytes());
        out.push(self.polarity.code());
        put_set(&mut out, self.devices.as_ref().map(|s| s.iter().map(DeviceId::as_bytes)));
        put_set(&mut out, self.sensors.as_ref().map(|s| s.iter().map(SensorId::as_bytes)));
        match self.daily_window {
            Some(w) => {
                out.push(1);
                out.extend_from_slice(&w.from.to_be_bytes());
                out.extend_from_slice(&w.to.to_be_bytes());
            }
            None => out.push(0),
        }
        match self.interval {
            Some(i) => {
                out.push(1);
                out.extend_from_slice(&i.start.to_be_bytes());
                out.extend_from_slice(&i.end.to_be_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.validity.start.to_be_bytes());
        out.extend_from_slice(&self.validity.end.to_be_bytes());
        out
    }

    pub fn digest(&self) -> Digest {
        crypto::hash(&self.canonical_bytes())
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let mut r = Reader { buf: bytes };
        let bad = |_| PolicyError::Notice("malformed canonical rule");
        let rule_id = r.u64().map_err(bad)?;
        let polarity = match r.u8().map_err(bad)? {
            1 => Polarity::OptIn,
            0 => Polarity::OptOut,
            _ => return Err(PolicyError::Notice("bad polarity")),
        };
        let devices = match r.set().map_err(bad)? {
            Some(items) => Some(
                items
                    .into_iter()
                    .map(DeviceId::new)
                    .collect::<Result<BTreeSet<_>, _>>()
                    .map_err(|_| PolicyError::Notice("bad device id"))?,
            ),
            None => None,
        };
        let sensors = match r.set().map_err(bad)? {
            Some(items) => Some(
                items
                    .into_iter()
                    .map(SensorId::new)
                    .collect::<Result<BTreeSet<_>, _>>()
                    .map_err(|_| PolicyError::Notice("bad sensor id"))?,
            ),
            None => None,
        };
        let daily_window = match r.u8().map_err(bad)? {
            1 => Some(DailyWindow { from: r.u32().map_err(bad)?, to: r.u32().map_err(bad)? }),
            _ => None,
        };
        let interval = match r.u8().map_err(bad)? {
            1 => Some(Interval { start: Timestamp(r.u64().map_err(bad)?), end: Timestamp(r.u64().map_err(bad)?) }),
            _ => None,
        };
        let validity = Interval { start: Timestamp(r.u64().map_err(bad)?), end: Timestamp(r.u64().map_err(bad)?) };
        if !r.buf.is_empty() {
            return Err(PolicyError::Notice("trailing bytes after rule"));
        }
        let rule = Self { rule_id, polarity, devices, sensors, daily_window, interval, validity };
        rule.validate()?;
        if rule.canonical_bytes() != bytes {
            return Err(PolicyError::Notice("non-canonical rule encoding"));
        }
        Ok(rule)
    }
}

fn put_set<'a>(out: &mut Vec<u8>, items: Option<impl Iterator<Item = &'a [u8]>>) {
    match items {
        None => out.push(0),
        Some(items) => {
            out.push(1);
            let items: Vec<&[u8]> = items.collect();
            out.extend_from_slice(&(items.len() as u32).to_be_bytes());
            for it in items {
                out.extend_from_slice(&(it.len() as u32).to_be_bytes());
                out.extend_from_slice(it);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ()> {
        if self.buf.len() < n {
            return Err(());
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }
    fn u8(&mut self) -> Result<u8, ()> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ()> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ()> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn set(&mut self) -> Result<Option<Vec<Vec<u8>>>, ()> {
        if self.u8()? == 0 {
            return Ok(None);
        }
        let n = self.u32()? as usize;
        let mut items = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let len = self.u32()? as usize;
            items.push(self.take(len)?.to_vec());
        }
        Ok(Some(items))
    }
}

/// The active rule list plus the digest the trusted component holds for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleSet {
    pub default_polarity: Polarity,
    pub rules: Vec<DataCaptureRule>,
    pub digest: Digest,
}

impl RuleSet {
    pub fn new(default_polarity: Polarity, rules: Vec<DataCaptureRule>) -> Result<Self, PolicyError> {
        for r in &rules {
            r.validate()?;
        }
        let digest = Self::compute_digest(default_polarity, &rules);
        Ok(Self { default_polarity, rules, digest })
    }

    pub fn compute_digest(default_polarity: Polarity, rules: &[DataCaptureRule]) -> Digest {
        let mut buf = b"notary-ruleset-v1".to_vec();
        buf.push(default_polarity.code());
        buf.extend_from_slice(&(rules.len() as u32).to_be_bytes());
        for r in rules {
            let c = r.canonical_bytes();
            buf.extend_from_slice(&(c.len() as u32).to_be_bytes());
            buf.extend_from_slice(&c);
        }
        crypto::hash(&buf)
    }

    pub fn check_digest(&self) -> Result<(), PolicyError> {
        if Self::compute_digest(self.default_polarity, &self.rules) == self.digest {
            Ok(())
        } else {
            Err(PolicyError::Integrity)
        }
    }

    /// Appends a rule and refreshes the digest.
    pub fn add_rule(&mut self, rule: DataCaptureRule) -> Result<(), PolicyError> {
        rule.validate()?;
        self.rules.push(rule);
        self.digest = Self::compute_digest(self.default_polarity, &self.rules);
        Ok(())
    }

    pub fn rule(&self, rule_id: u64) -> Option<&DataCaptureRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    /// Evaluation without the digest check; callers must have checked once.
    pub fn evaluate_trusted(&self, acks: Option<&AckRegistry>, reading: &SensorReading) -> SensorState {
        let mut opt_in = false;
        let mut opt_out = false;
        for rule in self.rules.iter().filter(|r| r.matches(reading)) {
            match rule.polarity {
                Polarity::OptIn => opt_in = true,
                Polarity::OptOut => opt_out = true,
            }
        }
        // Opt-out wins over a simultaneous opt-in.
        let mut capture = match self.default_polarity {
            Polarity::OptOut => opt_in && !opt_out,
            Polarity::OptIn => !opt_out,
        };
        if let Some(acks) = acks {
            capture &= acks.is_acknowledged(&reading.device);
        }
        if capture {
            SensorState::Active
        } else {
            SensorState::Passive
        }
    }
}

/// State of `reading` under `rules` (and, in notice-and-acknowledgment mode,
/// the registry of device acknowledgments).
pub fn evaluate(
    rules: &RuleSet,
    acks: Option<&AckRegistry>,
    reading: &SensorReading,
) -> Result<SensorState, PolicyError> {
    rules.check_digest()?;
    Ok(rules.evaluate_trusted(acks, reading))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(b: &[u8]) -> DeviceId {
        DeviceId::new(b.to_vec()).unwrap()
    }

    fn sen(b: &str) -> SensorId {
        SensorId::new(b.as_bytes().to_vec()).unwrap()
    }

    fn forever() -> Interval {
        Interval { start: Timestamp(0), end: Timestamp(u64::MAX) }
    }

    #[test]
    fn default_opt_out_without_rules_filters_everything() {
        let rs = RuleSet::new(Polarity::OptOut, vec![]).unwrap();
        let r = SensorReading::new(dev(b"d"), sen("s"), Timestamp(1234));
        assert_eq!(evaluate(&rs, None, &r).unwrap(), SensorState::Passive);
    }

    #[test]
    fn user_time_rule() {
        // Do not capture device d between 09:00 and 11:00 each day.
        let mut rule = DataCaptureRule::new(1, Polarity::OptOut, forever());
        rule.devices = Some([dev(b"d")].into());
        rule.daily_window = Some(DailyWindow { from: 9 * 3600, to: 11 * 3600 });
        let rs = RuleSet::new(Polarity::OptIn, vec![rule]).unwrap();
        let day = 86_400 * 3;
        let inside = SensorReading::new(dev(b"d"), sen("s"), Timestamp(day + 10 * 3600));
        let outside = SensorReading::new(dev(b"d"), sen("s"), Timestamp(day + 12 * 3600));
        let other = SensorReading::new(dev(b"e"), sen("s"), Timestamp(day + 10 * 3600));
        assert_eq!(evaluate(&rs, None, &inside).unwrap(), SensorState::Passive);
        assert_eq!(evaluate(&rs, None, &outside).unwrap(), SensorState::Active);
        assert_eq!(evaluate(&rs, None, &other).unwrap(), SensorState::Active);
    }

    #[test]
    fn expired_rules_are_ignored() {
        let mut rule = DataCaptureRule::new(1, Polarity::OptOut, Interval { start: Timestamp(0), end: Timestamp(100) });
        rule.devices = Some([dev(b"d")].into());
        let rs = RuleSet::new(Polarity::OptIn, vec![rule]).unwrap();
        let r = SensorReading::new(dev(b"d"), sen("s"), Timestamp(100));
        assert_eq!(evaluate(&rs, None, &r).unwrap(), SensorState::Active);
    }

    #[test]
    fn opt_out_beats_opt_in() {
        let a = DataCaptureRule::new(1, Polarity::OptIn, forever());
        let b = DataCaptureRule::new(2, Polarity::OptOut, forever());
        let rs = RuleSet::new(Polarity::OptOut, vec![a, b]).unwrap();
        let r = SensorReading::new(dev(b"d"), sen("s"), Timestamp(5));
        assert_eq!(evaluate(&rs, None, &r).unwrap(), SensorState::Passive);
    }

    #[test]
    fn wrapping_window() {
        let w = DailyWindow { from: 22 * 3600, to: 2 * 3600 };
        assert!(w.contains(Timestamp(23 * 3600)));
        assert!(w.contains(Timestamp(86_400 + 3600)));
        assert!(!w.contains(Timestamp(12 * 3600)));
    }

    #[test]
    fn tampered_rules_rejected() {
        let mut rule = DataCaptureRule::new(1, Polarity::OptOut, forever());
        rule.sensors = Some([sen("ap-1")].into());
        let mut rs = RuleSet::new(Polarity::OptIn, vec![rule]).unwrap();
        rs.rules[0].polarity = Polarity::OptIn;
        let r = SensorReading::new(dev(b"d"), sen("ap-1"), Timestamp(5));
        assert!(matches!(evaluate(&rs, None, &r), Err(PolicyError::Integrity)));
    }

    #[test]
    fn digest_detects_every_single_bit_flip_of_canonical_rules() {
        let mut rule = DataCaptureRule::new(42, Polarity::OptOut, Interval { start: Timestamp(10), end: Timestamp(99) });
        rule.devices = Some([dev(b"abc")].into());
        rule.daily_window = Some(DailyWindow { from: 60, to: 120 });
        let rs = RuleSet::new(Polarity::OptIn, vec![rule.clone()]).unwrap();
        let bytes = rule.canonical_bytes();
        for bit in 0..bytes.len() * 8 {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            if let Ok(r2) = DataCaptureRule::from_canonical_bytes(&b) {
                let tampered = RuleSet { rules: vec![r2], ..rs.clone() };
                assert!(tampered.check_digest().is_err(), "bit {bit}");
            }
        }
    }

    #[test]
    fn canonical_round_trip() {
        let mut rule = DataCaptureRule::new(7, Polarity::OptIn, forever());
        rule.sensors = Some([sen("a"), sen("b")].into());
        rule.interval = Some(Interval { start: Timestamp(3), end: Timestamp(9) });
        assert_eq!(DataCaptureRule::from_canonical_bytes(&rule.canonical_bytes()).unwrap(), rule);
    }

    #[test]
    fn invalid_rules_rejected() {
        let empty = DataCaptureRule::new(1, Polarity::OptIn, Interval { start: Timestamp(5), end: Timestamp(5) });
        assert!(RuleSet::new(Polarity::OptIn, vec![empty]).is_err());
        let mut w = DataCaptureRule::new(2, Polarity::OptIn, forever());
        w.daily_window = Some(DailyWindow { from: 10, to: 10 });
        assert!(w.validate().is_err());
    }
}
