//! Synthetic WiFi connectivity workload and the plain-text event file.
//!
//! Event lines are `device_hex,sensor_id,epoch_seconds[,params]`. Everything
//! after the third comma is the opaque parameter payload.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto;
use crate::model::{DeviceId, SensorId, SensorReading, Timestamp};
use crate::policy::{DataCaptureRule, Interval, Polarity, RuleSet};

pub const SECS_PER_DAY: u64 = 86_400;
/// Monday 2019-01-07 00:00 UTC.
pub const DEFAULT_START: u64 = 1_546_819_200;

/// Relative arrival rate per hour of day.
const HOURLY_WEIGHT: [f64; 24] = [
    0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.8, 0.8, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 0.4,
    0.4,
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub days: u32,
    pub sensors: u32,
    pub devices: u32,
    /// Mean events per weekday; weekends run at half rate.
    pub events_per_day: u64,
    pub seed: u64,
    pub start: u64,
    /// Length of the generated parameter payload, 0 for none.
    pub params_len: usize,
    pub buildings: u32,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            days: 1,
            sensors: 490,
            devices: 5000,
            events_per_day: 600_000,
            seed: 1,
            start: DEFAULT_START,
            params_len: 100,
            buildings: 30,
        }
    }
}

impl WorkloadSpec {
    fn building_count(&self) -> u32 {
        self.buildings.clamp(1, self.sensors.max(1))
    }

    fn building_of(&self, sensor: u32) -> u32 {
        sensor % self.building_count()
    }

    /// Expected number of events in hour `h` (counted from `start`).
    pub fn hour_volume(&self, h: u64) -> f64 {
        let day = h / 24;
        let weekday = (self.start / SECS_PER_DAY + day + 3) % 7;
        let weekend = if weekday >= 5 { 0.5 } else { 1.0 };
        let total: f64 = HOURLY_WEIGHT.iter().sum();
        self.events_per_day as f64 * HOURLY_WEIGHT[(h % 24) as usize] / total * weekend
    }

    pub fn events(&self) -> Events {
        Events::new(self.clone())
    }
}

/// Device `i`: six bytes derived from the index, with the locally
/// administered bit set the way randomized MAC addresses carry it.
pub fn device_id(i: u32) -> DeviceId {
    let h = crypto::hash(&[b"notary-device".as_slice(), &i.to_be_bytes()].concat());
    let mut b = [0u8; 6];
    b.copy_from_slice(&h.as_bytes()[..6]);
    b[0] = (b[0] & 0xfc) | 0x02;
    DeviceId::new(b.to_vec()).expect("six bytes")
}

pub fn sensor_id(i: u32, buildings: u32) -> SensorId {
    let b = i % buildings.max(1);
    SensorId::new(format!("bldg-{b:02}-ap-{i:03}").into_bytes()).expect("short ascii")
}

/// Time-ordered event generator, one hour buffered at a time.
pub struct Events {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    sensors: Vec<SensorId>,
    by_building: Vec<Vec<u32>>,
    home: Vec<u32>,
    devices: Vec<DeviceId>,
    hour: u64,
    buf: std::vec::IntoIter<SensorReading>,
}

impl Events {
    fn new(spec: WorkloadSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let nb = spec.building_count();
        let sensors = (0..spec.sensors).map(|i| sensor_id(i, nb)).collect();
        let mut by_building = vec![Vec::new(); nb as usize];
        for s in 0..spec.sensors {
            by_building[spec.building_of(s) as usize].push(s);
        }
        let home = (0..spec.devices).map(|_| rng.gen_range(0..nb)).collect();
        let devices = (0..spec.devices).map(device_id).collect();
        Self { spec, rng, sensors, by_building, home, devices, hour: 0, buf: Vec::new().into_iter() }
    }

    fn params(&mut self) -> Vec<u8> {
        let n = self.spec.params_len;
        if n == 0 {
            return Vec::new();
        }
        let mut p = format!(
            "rssi=-{};ch={};band={};proto=802.11ac;ssid=campus;session=",
            self.rng.gen_range(30..95),
            self.rng.gen_range(1..166),
            if self.rng.gen_bool(0.6) { "5g" } else { "2g" },
        )
        .into_bytes();
        while p.len() < n {
            p.extend_from_slice(format!("{:02x}", self.rng.gen::<u8>()).as_bytes());
        }
        p.truncate(n);
        p
    }

    fn fill_hour(&mut self) {
        let spec = self.spec.clone();
        let mean = spec.hour_volume(self.hour);
        let jitter = self.rng.gen_range(0.9..1.1);
        let count = (mean * jitter).round() as usize;
        let base = spec.start + self.hour * 3600;
        let mut times: Vec<u64> = (0..count).map(|_| base + self.rng.gen_range(0..3600)).collect();
        times.sort_unstable();
        let mut out = Vec::with_capacity(count);
        for t in times {
            if spec.devices == 0 || spec.sensors == 0 {
                break;
            }
            let d = self.rng.gen_range(0..spec.devices) as usize;
            let s = if self.rng.gen_bool(0.8) {
                let local = &self.by_building[self.home[d] as usize];
                local[self.rng.gen_range(0..local.len())]
            } else {
                self.rng.gen_range(0..spec.sensors)
            };
            let params = self.params();
            out.push(
                SensorReading::new(self.devices[d].clone(), self.sensors[s as usize].clone(), Timestamp(t))
                    .with_params(params),
            );
        }
        self.buf = out.into_iter();
        self.hour += 1;
    }
}

impl Iterator for Events {
    type Item = SensorReading;

    fn next(&mut self) -> Option<SensorReading> {
        loop {
            if let Some(r) = self.buf.next() {
                return Some(r);
            }
            if self.hour >= self.spec.days as u64 * 24 {
                return None;
            }
            self.fill_hour();
        }
    }
}

/// Opts out every even-numbered sensor, so that active and passive readings
/// interleave throughout the stream.
pub fn alternating_rules(spec: &WorkloadSpec) -> RuleSet {
    let nb = spec.building_count();
    let even: BTreeSet<SensorId> = (0..spec.sensors).step_by(2).map(|i| sensor_id(i, nb)).collect();
    let mut rule = DataCaptureRule::new(
        1,
        Polarity::OptOut,
        Interval { start: Timestamp(spec.start), end: Timestamp(spec.start + spec.days as u64 * SECS_PER_DAY + 1) },
    );
    rule.sensors = Some(even);
    RuleSet::new(Polarity::OptIn, vec![rule]).expect("valid rule")
}

#[derive(Debug, thiserror::Error)]
pub enum EventError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn format_event(r: &SensorReading) -> io::Result<String> {
    let sensor = std::str::from_utf8(r.sensor.as_bytes())
        .ok()
        .filter(|s| !s.contains([',', '\n', '\r']))
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "sensor id not representable"))?;
    let mut line = format!("{},{},{}", r.device.to_hex(), sensor, r.time.0);
    if !r.params.is_empty() {
        let p = std::str::from_utf8(&r.params)
            .ok()
            .filter(|p| !p.contains(['\n', '\r']))
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "params not representable"))?;
        line.push(',');
        line.push_str(p);
    }
    Ok(line)
}

pub fn parse_event(line: &str) -> Result<SensorReading, String> {
    let mut it = line.splitn(4, ',');
    let (Some(d), Some(s), Some(t)) = (it.next(), it.next(), it.next()) else {
        return Err("expected device,sensor,time".into());
    };
    let device = DeviceId::from_hex(d.trim()).map_err(|e| e.to_string())?;
    let sensor = SensorId::new(s.trim().as_bytes().to_vec()).map_err(|e| e.to_string())?;
    let time = t.trim().parse::<u64>().map_err(|e| format!("bad time: {e}"))?;
    let reading = SensorReading::new(device, sensor, Timestamp(time));
    Ok(match it.next() {
        Some(p) => reading.with_params(p.as_bytes().to_vec()),
        None => reading,
    })
}

/// Writes events one per line and returns how many were written.
pub fn write_events(w: &mut impl Write, events: impl IntoIterator<Item = SensorReading>) -> io::Result<u64> {
    let mut n = 0;
    for r in events {
        writeln!(w, "{}", format_event(&r)?)?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Streams events back; blank lines and `#` comments are skipped.
pub fn read_events(r: impl BufRead) -> impl Iterator<Item = Result<SensorReading, EventError>> {
    r.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(EventError::Io(e))),
        Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
        Ok(l) => Some(parse_event(&l).map_err(|reason| EventError::Parse { line: i + 1, reason })),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SensorState;

    fn small() -> WorkloadSpec {
        WorkloadSpec { sensors: 40, devices: 200, events_per_day: 5000, ..WorkloadSpec::default() }
    }

    #[test]
    fn deterministic_and_sorted() {
        let a: Vec<_> = small().events().collect();
        let b: Vec<_> = small().events().collect();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].time <= w[1].time));
        let other: Vec<_> = WorkloadSpec { seed: 2, ..small() }.events().collect();
        assert_ne!(a, other);
    }

    #[test]
    fn default_day_is_near_six_hundred_thousand() {
        let spec = WorkloadSpec::default();
        let expected: f64 = (0..24).map(|h| spec.hour_volume(h)).sum();
        assert!((expected - 600_000.0).abs() < 1.0);
    }

    #[test]
    fn peak_hours_are_busier() {
        let ev: Vec<_> = small().events().collect();
        let in_hour = |h: u64| ev.iter().filter(|r| (r.time.0 - DEFAULT_START) / 3600 == h).count();
        assert!(in_hour(10) > 3 * in_hour(3));
        assert!(ev.iter().all(|r| r.params.len() == 100));
    }

    #[test]
    fn event_lines_round_trip() {
        let ev: Vec<_> = small().events().take(50).collect();
        let mut buf = Vec::new();
        assert_eq!(write_events(&mut buf, ev.clone()).unwrap(), 50);
        let back: Vec<_> = read_events(buf.as_slice()).collect::<Result<_, _>>().unwrap();
        assert_eq!(back, ev);
        let bare = parse_event("02aabbccddee,ap-1,17").unwrap();
        assert_eq!(bare.time, Timestamp(17));
        assert!(bare.params.is_empty());
        assert!(parse_event("zz,ap-1,17").is_err());
        assert!(parse_event("02aabbccddee,ap-1").is_err());
    }

    #[test]
    fn alternating_rules_split_sensors() {
        let spec = small();
        let rules = alternating_rules(&spec);
        let states: Vec<_> = spec.events().take(400).map(|r| rules.evaluate_trusted(None, &r)).collect();
        assert!(states.contains(&SensorState::Active));
        assert!(states.contains(&SensorState::Passive));
    }

    #[test]
    fn device_ids_are_locally_administered() {
        for i in 0..20 {
            let d = device_id(i);
            assert_eq!(d.as_bytes().len(), 6);
            assert_eq!(d.as_bytes()[0] & 0x03, 0x02);
        }
    }
}
