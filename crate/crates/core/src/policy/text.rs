//! Line-oriented rule file.
//!
//! ```text
//! # comment
//! default=opt-in
//! rule_id=1 polarity=opt-out device_ids=* sensor_ids=ap-1,ap-2 daily_window=08:00-10:00 validity_start=0 validity_end=3456000
//! ```
//!
//! Device ids are hex, sensor ids are literal text, `*` means "any". An
//! optional `interval=<start>-<end>` restricts a rule to absolute seconds.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{DailyWindow, DataCaptureRule, Interval, PolicyError, Polarity, RuleSet};
use crate::model::{DeviceId, SensorId, Timestamp};

fn perr(line: usize, reason: impl Into<String>) -> PolicyError {
    PolicyError::Parse { line, reason: reason.into() }
}

fn parse_polarity(s: &str) -> Option<Polarity> {
    match s {
        "opt-in" | "opt_in" => Some(Polarity::OptIn),
        "opt-out" | "opt_out" => Some(Polarity::OptOut),
        _ => None,
    }
}

fn parse_clock(s: &str) -> Option<u32> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Option<Vec<u32>> = parts.iter().map(|p| p.parse().ok()).collect();
    let nums = nums?;
    let (h, m, sec) = match nums.as_slice() {
        [h, m] => (*h, *m, 0),
        [h, m, s] => (*h, *m, *s),
        _ => return None,
    };
    (h < 24 && m < 60 && sec < 60).then_some(h * 3600 + m * 60 + sec)
}

fn fmt_clock(secs: u32) -> String {
    let (h, m, s) = (secs / 3600, secs / 60 % 60, secs % 60);
    if s == 0 {
        format!("{h:02}:{m:02}")
    } else {
        format!("{h:02}:{m:02}:{s:02}")
    }
}

pub fn parse_rule_file(text: &str) -> Result<RuleSet, PolicyError> {
    let mut default = None;
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(v) = line.strip_prefix("default=") {
            if default.is_some() {
                return Err(perr(line_no, "duplicate default"));
            }
            default = Some(parse_polarity(v.trim()).ok_or_else(|| perr(line_no, "bad default polarity"))?);
            continue;
        }
        rules.push(parse_rule_line(line, line_no)?);
    }
    let default = default.ok_or_else(|| perr(0, "missing default=opt-in|opt-out line"))?;
    let mut seen = BTreeSet::new();
    for r in &rules {
        if !seen.insert(r.rule_id) {
            return Err(perr(0, format!("duplicate rule_id {}", r.rule_id)));
        }
    }
    RuleSet::new(default, rules)
}

fn parse_rule_line(line: &str, line_no: usize) -> Result<DataCaptureRule, PolicyError> {
    let mut rule_id = None;
    let mut polarity = None;
    let mut devices = None;
    let mut sensors = None;
    let mut daily_window = None;
    let mut interval = None;
    let mut vstart = None;
    let mut vend = None;
    for tok in line.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| perr(line_no, format!("expected key=value, got {tok:?}")))?;
        let num = |v: &str| v.parse::<u64>().map_err(|_| perr(line_no, format!("{k}: not a number")));
        match k {
            "rule_id" => rule_id = Some(num(v)?),
            "polarity" => polarity = Some(parse_polarity(v).ok_or_else(|| perr(line_no, "bad polarity"))?),
            "device_ids" if v != "*" => {
                let set = v
                    .split(',')
                    .map(DeviceId::from_hex)
                    .collect::<Result<BTreeSet<_>, _>>()
                    .map_err(|e| perr(line_no, e.to_string()))?;
                devices = Some(set);
            }
            "sensor_ids" if v != "*" => {
                let set = v
                    .split(',')
                    .map(|s| SensorId::new(s.as_bytes().to_vec()))
                    .collect::<Result<BTreeSet<_>, _>>()
                    .map_err(|e| perr(line_no, e.to_string()))?;
                sensors = Some(set);
            }
            "device_ids" | "sensor_ids" => {}
            "daily_window" if v != "*" => {
                let (a, b) = v.split_once('-').ok_or_else(|| perr(line_no, "daily_window needs HH:MM-HH:MM"))?;
                let from = parse_clock(a).ok_or_else(|| perr(line_no, "bad clock time"))?;
                let to = parse_clock(b).ok_or_else(|| perr(line_no, "bad clock time"))?;
                daily_window = Some(DailyWindow { from, to });
            }
            "daily_window" => {}
            "interval" => {
                let (a, b) = v.split_once('-').ok_or_else(|| perr(line_no, "interval needs start-end"))?;
                interval = Some(Interval { start: Timestamp(num(a)?), end: Timestamp(num(b)?) });
            }
            "validity_start" => vstart = Some(num(v)?),
            "validity_end" => vend = Some(num(v)?),
            other => return Err(perr(line_no, format!("unknown field {other:?}"))),
        }
    }
    let rule = DataCaptureRule {
        rule_id: rule_id.ok_or_else(|| perr(line_no, "missing rule_id"))?,
        polarity: polarity.ok_or_else(|| perr(line_no, "missing polarity"))?,
        devices,
        sensors,
        daily_window,
        interval,
        validity: Interval {
            start: Timestamp(vstart.ok_or_else(|| perr(line_no, "missing validity_start"))?),
            end: Timestamp(vend.ok_or_else(|| perr(line_no, "missing validity_end"))?),
        },
    };
    rule.validate()?;
    Ok(rule)
}

pub fn format_rule_line(rule: &DataCaptureRule) -> String {
    let mut s = format!("rule_id={} polarity={}", rule.rule_id, rule.polarity.name());
    let devices = match &rule.devices {
        Some(d) => d.iter().map(DeviceId::to_hex).collect::<Vec<_>>().join(","),
        None => "*".into(),
    };
    let sensors = match &rule.sensors {
        Some(d) => d.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        None => "*".into(),
    };
    let window = match rule.daily_window {
        Some(w) => format!("{}-{}", fmt_clock(w.from), fmt_clock(w.to)),
        None => "*".into(),
    };
    let _ = write!(s, " device_ids={devices} sensor_ids={sensors} daily_window={window}");
    if let Some(i) = rule.interval {
        let _ = write!(s, " interval={}-{}", i.start, i.end);
    }
    let _ = write!(s, " validity_start={} validity_end={}", rule.validity.start, rule.validity.end);
    s
}

pub fn write_rule_file(rules: &RuleSet) -> String {
    let mut out = format!("default={}\n", rules.default_polarity.name());
    for r in &rules.rules {
        out.push_str(&format_rule_line(r));
        out.push('\n');
    }
    out
}
