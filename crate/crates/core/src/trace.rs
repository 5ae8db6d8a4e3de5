//! File formats, trace generators and departure statistics.
//!
//! Traces are CSV with the header
//! `arrival_tick,packet_id,flow_id,length_bytes,fields`, where `fields` is a
//! possibly empty `name=value;name=value` list. Departure logs are CSV with
//! `packet_id,flow_id,arrival_tick,departure_tick,length_bytes`. Event logs
//! hold one event per line, tick first.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::PacketRecord;
use crate::pifo::{BlockId, LogicalPifoId};
use crate::sim::{Departure, Event};
use crate::tree::{ConfigError, SchedTree, TreeSpec};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("arrival ticks go backwards at line {line}")]
    Unsorted { line: usize },
    #[error("invalid generator: {0}")]
    InvalidSpec(String),
}

impl TraceError {
    fn format(line: usize, msg: impl Into<String>) -> Self {
        TraceError::Format {
            line,
            msg: msg.into(),
        }
    }
}

fn csv_err(e: csv::Error) -> TraceError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(e) => TraceError::Io(e),
        kind => TraceError::format(line, format!("{kind:?}")),
    }
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    arrival_tick: u64,
    packet_id: u64,
    flow_id: u64,
    length_bytes: u32,
    #[serde(default)]
    fields: String,
}

fn parse_fields(text: &str, line: usize) -> Result<BTreeMap<String, i64>, TraceError> {
    let mut out = BTreeMap::new();
    for kv in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| TraceError::format(line, format!("field `{kv}` is not name=value")))?;
        let v = v
            .trim()
            .parse()
            .map_err(|_| TraceError::format(line, format!("field `{kv}` is not an integer")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

fn fields_text(fields: &BTreeMap<String, i64>) -> String {
    let parts: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
    parts.join(";")
}

/// Read a trace. Arrival ticks must not decrease.
pub fn read_trace(r: impl Read) -> Result<Vec<PacketRecord>, TraceError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out: Vec<PacketRecord> = Vec::new();
    for row in rd.deserialize::<TraceRow>() {
        let row = row.map_err(csv_err)?;
        // Header is line 1.
        let line = out.len() + 2;
        if row.length_bytes == 0 {
            return Err(TraceError::format(line, "length_bytes must be positive"));
        }
        if out.last().is_some_and(|p| p.arrival > row.arrival_tick) {
            return Err(TraceError::Unsorted { line });
        }
        let mut p = PacketRecord::new(row.packet_id, row.arrival_tick, row.flow_id, row.length_bytes);
        p.fields = parse_fields(&row.fields, line)?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_trace(w: impl Write, trace: &[PacketRecord]) -> Result<(), TraceError> {
    let mut wr = csv::Writer::from_writer(w);
    for p in trace {
        wr.serialize(TraceRow {
            arrival_tick: p.arrival,
            packet_id: p.id,
            flow_id: p.flow_id,
            length_bytes: p.length,
            fields: fields_text(&p.fields),
        })
        .map_err(csv_err)?;
    }
    if trace.is_empty() {
        wr.write_record(["arrival_tick", "packet_id", "flow_id", "length_bytes", "fields"])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// First tick with more than one arrival.
pub fn crowded_tick(trace: &[PacketRecord]) -> Option<u64> {
    trace.windows(2).find(|w| w[0].arrival == w[1].arrival).map(|w| w[0].arrival)
}

pub fn read_departures(r: impl Read) -> Result<Vec<Departure>, TraceError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    rd.deserialize().map(|d| d.map_err(csv_err)).collect()
}

pub fn write_departures(w: impl Write, log: &[Departure]) -> Result<(), TraceError> {
    let mut wr = csv::Writer::from_writer(w);
    for d in log {
        wr.serialize(d).map_err(csv_err)?;
    }
    if log.is_empty() {
        wr.write_record(["packet_id", "flow_id", "arrival_tick", "departure_tick", "length_bytes"])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_events(mut w: impl Write, events: &[Event]) -> io::Result<()> {
    for e in events {
        writeln!(w, "{e}")?;
    }
    Ok(())
}

pub fn read_events(r: impl BufRead) -> Result<Vec<Event>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_event(&line).map_err(|msg| TraceError::format(i + 1, msg))?);
    }
    Ok(out)
}

/// Parse one event line as written by `Event`'s `Display`.
pub fn parse_event(line: &str) -> Result<Event, String> {
    let mut words = line.trim().splitn(3, ' ');
    let tick: u64 = words
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or("missing tick")?;
    let kind = words.next().ok_or("missing event kind")?;
    let rest = words.next().unwrap_or("");
    if kind == "drop" {
        // The reason is free text and always last.
        let (head, reason) = rest.split_once(" reason=").ok_or("drop without reason")?;
        let packet_id = head
            .strip_prefix("packet=")
            .and_then(|v| v.parse().ok())
            .ok_or("drop without packet")?;
        return Ok(Event::Drop {
            tick,
            packet_id,
            reason: reason.to_string(),
        });
    }
    let mut kv = BTreeMap::new();
    for part in rest.split_whitespace() {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("`{part}` is not key=value"))?;
        let v: u64 = v.parse().map_err(|_| format!("`{part}` is not numeric"))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| format!("{kind} without {k}"));
    Ok(match kind {
        "fault" => Event::Fault {
            tick,
            packet_id: get("packet")?,
        },
        "defer" => Event::Defer {
            tick,
            block: BlockId(get("block")? as u32),
            due: get("due")?,
        },
        "non_monotone_rank" => Event::NonMonotoneRank {
            tick,
            block: BlockId(get("block")? as u32),
            lp: LogicalPifoId(get("lp")? as u32),
            flow: get("flow")?,
        },
        "wrap_hazard" => Event::WrapHazard {
            tick,
            block: BlockId(get("block")? as u32),
            rank: get("rank")?,
        },
        "horizon_exceeded" => Event::HorizonExceeded {
            tick,
            buffered: get("buffered")? as usize,
        },
        other => return Err(format!("unknown event `{other}`")),
    })
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {err}")]
    Io { path: String, err: io::Error },
    #[error("{path}: {err}")]
    Config { path: String, err: ConfigError },
}

/// Load and validate a tree config. Returns the tree and its `option` lines.
pub fn load_config(path: impl AsRef<Path>) -> Result<(Arc<SchedTree>, BTreeMap<String, String>), LoadError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|err| LoadError::Io {
        path: shown.clone(),
        err,
    })?;
    let tree = TreeSpec::load(&text).map_err(|err| LoadError::Config { path: shown, err })?;
    let opts = tree.options().clone();
    Ok((Arc::new(tree), opts))
}

/// A trace generator. Every generator emits at most one packet per tick.
#[derive(Clone, Debug, PartialEq)]
pub enum GenSpec {
    /// One packet per tick, flows in round robin.
    Backlogged { flows: u64, length: u32, ticks: u64 },
    /// Per-tick arrival probability `rates[f]` for flow `f`; the rates must
    /// sum to at most 1.
    Poisson { rates: Vec<f64>, length: u32, ticks: u64 },
    /// Alternating bursts of `burst` ticks with one packet per tick and
    /// `idle` silent ticks. Each packet picks a flow at random.
    OnOff {
        flows: u64,
        burst: u64,
        idle: u64,
        length: u32,
        ticks: u64,
    },
}

impl GenSpec {
    /// Parse `kind:key=value,...`, for example
    /// `poisson:rates=0.2/0.3,len=500,ticks=10000`.
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let bad = |m: String| TraceError::InvalidSpec(m);
        let (kind, args) = text.split_once(':').unwrap_or((text, ""));
        let mut kv = BTreeMap::new();
        for part in args.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("`{part}` is not key=value")))?;
            kv.insert(k.trim(), v.trim());
        }
        let num = |k: &str, default: Option<u64>| -> Result<u64, TraceError> {
            match kv.get(k) {
                Some(v) => v.parse().map_err(|_| bad(format!("{k}={v} is not a count"))),
                None => default.ok_or_else(|| bad(format!("{kind} needs {k}"))),
            }
        };
        let length = num("len", Some(1000))?;
        let length = u32::try_from(length).map_err(|_| bad("len too large".into()))?;
        let ticks = num("ticks", Some(10_000))?;
        let spec = match kind {
            "backlogged" => GenSpec::Backlogged {
                flows: num("flows", None)?,
                length,
                ticks,
            },
            "poisson" => {
                let rates = kv
                    .get("rates")
                    .ok_or_else(|| bad("poisson needs rates".into()))?
                    .split('/')
                    .map(|r| r.parse::<f64>().map_err(|_| bad(format!("rate `{r}` is not a number"))))
                    .collect::<Result<_, _>>()?;
                GenSpec::Poisson { rates, length, ticks }
            }
            "onoff" => GenSpec::OnOff {
                flows: num("flows", Some(1))?,
                burst: num("burst", None)?,
                idle: num("idle", None)?,
                length,
                ticks,
            },
            other => return Err(bad(format!("unknown generator `{other}`"))),
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::InvalidSpec(m.into()));
        match self {
            GenSpec::Backlogged { flows, length, .. } | GenSpec::OnOff { flows, length, .. } => {
                if *flows == 0 {
                    return bad("at least one flow");
                }
                if *length == 0 {
                    return bad("length must be positive");
                }
            }
            GenSpec::Poisson { rates, length, .. } => {
                if rates.is_empty() || *length == 0 {
                    return bad("need at least one rate and a positive length");
                }
                if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
                    return bad("rates must be non-negative");
                }
                if rates.iter().sum::<f64>() > 1.0 {
                    return bad("total rate exceeds one packet per tick");
                }
            }
        }
        if let GenSpec::OnOff { burst: 0, .. } = self {
            return bad("burst must be positive");
        }
        Ok(())
    }
}

/// Generate a trace. The same spec and seed always give the same trace.
pub fn generate_trace(spec: &GenSpec, seed: u64) -> Result<Vec<PacketRecord>, TraceError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |tick: u64, flow: u64, length: u32| {
        let id = out.len() as u64;
        out.push(PacketRecord::new(id, tick, flow, length));
    };
    match spec {
        GenSpec::Backlogged { flows, length, ticks } => {
            for t in 0..*ticks {
                push(t, t % flows, *length);
            }
        }
        GenSpec::Poisson { rates, length, ticks } => {
            // Bernoulli thinning of one slot per tick: a tick carries a packet
            // of flow f with probability rates[f].
            for t in 0..*ticks {
                let mut u: f64 = rng.gen();
                for (f, r) in rates.iter().enumerate() {
                    if u < *r {
                        push(t, f as u64, *length);
                        break;
                    }
                    u -= r;
                }
            }
        }
        GenSpec::OnOff {
            flows,
            burst,
            idle,
            length,
            ticks,
        } => {
            let period = burst + idle;
            for t in 0..*ticks {
                if t % period < *burst {
                    push(t, rng.gen_range(0..*flows), *length);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FlowStat {
    pub packets: u64,
    pub bytes: u64,
    pub mean_sojourn: f64,
    pub max_sojourn: u64,
    /// Bytes departed in each window, starting at tick 0.
    pub throughput: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowStats {
    pub window: u64,
    pub flows: BTreeMap<u64, FlowStat>,
    /// Totals per leaf name, filled by `with_classes`.
    pub classes: BTreeMap<String, FlowStat>,
    pub packets: u64,
    pub bytes: u64,
}

/// Per-flow statistics of a departure log. Sojourn is departure tick minus
/// arrival tick.
pub fn stats(log: &[Departure], window: u64) -> FlowStats {
    let window = window.max(1);
    let windows = log
        .iter()
        .map(|d| d.departure_tick / window + 1)
        .max()
        .unwrap_or(0) as usize;
    let mut out = FlowStats {
        window,
        ..FlowStats::default()
    };
    let mut sojourn_sum: BTreeMap<u64, u128> = BTreeMap::new();
    for d in log {
        let s = out.flows.entry(d.flow_id).or_insert_with(|| FlowStat {
            throughput: vec![0; windows],
            ..FlowStat::default()
        });
        let sojourn = d.departure_tick.saturating_sub(d.arrival_tick);
        s.packets += 1;
        s.bytes += d.length_bytes as u64;
        s.max_sojourn = s.max_sojourn.max(sojourn);
        s.throughput[(d.departure_tick / window) as usize] += d.length_bytes as u64;
        *sojourn_sum.entry(d.flow_id).or_default() += sojourn as u128;
        out.packets += 1;
        out.bytes += d.length_bytes as u64;
    }
    for (f, s) in &mut out.flows {
        s.mean_sojourn = sojourn_sum[f] as f64 / s.packets as f64;
    }
    out
}

impl FlowStats {
    /// Share of all departed bytes that belongs to `flow`.
    pub fn share(&self, flow: u64) -> f64 {
        match (self.flows.get(&flow), self.bytes) {
            (Some(s), b) if b > 0 => s.bytes as f64 / b as f64,
            _ => 0.0,
        }
    }

    /// Aggregate flows by the leaf that classifies them. Flows whose leaf
    /// depends on more than `flow_id` are left out.
    pub fn with_classes(mut self, tree: &SchedTree) -> Self {
        self.classes.clear();
        for (&flow, s) in &self.flows {
            let Ok(leaf) = tree.leaf_for(&PacketRecord::new(0, 0, flow, 1)) else {
                continue;
            };
            let c = self
                .classes
                .entry(tree.node(leaf).name.clone())
                .or_insert_with(|| FlowStat {
                    throughput: vec![0; s.throughput.len()],
                    ..FlowStat::default()
                });
            let total = c.packets + s.packets;
            c.mean_sojourn = (c.mean_sojourn * c.packets as f64 + s.mean_sojourn * s.packets as f64) / total as f64;
            c.packets = total;
            c.bytes += s.bytes;
            c.max_sojourn = c.max_sojourn.max(s.max_sojourn);
            for (a, b) in c.throughput.iter_mut().zip(&s.throughput) {
                *a += b;
            }
        }
        self
    }

    /// Summary CSV: one row per flow, then one per class.
    pub fn write_summary(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "kind,key,packets,bytes,share,mean_sojourn,max_sojourn")?;
        let share = |b: u64| if self.bytes == 0 { 0.0 } else { b as f64 / self.bytes as f64 };
        for (f, s) in &self.flows {
            writeln!(
                w,
                "flow,{f},{},{},{:.6},{:.3},{}",
                s.packets,
                s.bytes,
                share(s.bytes),
                s.mean_sojourn,
                s.max_sojourn
            )?;
        }
        for (c, s) in &self.classes {
            writeln!(
                w,
                "class,{c},{},{},{:.6},{:.3},{}",
                s.packets,
                s.bytes,
                share(s.bytes),
                s.mean_sojourn,
                s.max_sojourn
            )?;
        }
        Ok(())
    }

    /// Throughput series CSV: `window_start,flow_id,bytes`.
    pub fn write_series(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "window_start,flow_id,bytes")?;
        for (f, s) in &self.flows {
            for (i, b) in s.throughput.iter().enumerate() {
                writeln!(w, "{},{f},{b}", i as u64 * self.window)?;
            }
        }
        Ok(())
    }
}

/// Packet ids dropped according to an event log.
pub fn drop_report(events: &[Event]) -> Vec<(u64, String)> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Drop { packet_id, reason, .. } => Some((*packet_id, reason.clone())),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::scalar::Fixed;
    use crate::sim::{run_behavioral, SimConfig};

    #[test]
    fn trace_round_trip_keeps_fields() {
        let trace = vec![
            PacketRecord::new(0, 0, 3, 100).with_field("slack", 40).with_field("prev_wait_time", -2),
            PacketRecord::new(1, 4, 1, 1500),
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "arrival_tick,packet_id,flow_id,length_bytes,fields\n0,0,3,100,prev_wait_time=-2;slack=40\n4,1,1,1500,\n"
        );
        assert_eq!(read_trace(&buf[..]).unwrap(), trace);
    }

    #[test]
    fn unsorted_trace_is_rejected() {
        let text = "arrival_tick,packet_id,flow_id,length_bytes,fields\n5,0,0,10,\n4,1,0,10,\n";
        assert!(matches!(read_trace(text.as_bytes()), Err(TraceError::Unsorted { line: 3 })));
    }

    #[test]
    fn bad_field_carries_line() {
        let text = "arrival_tick,packet_id,flow_id,length_bytes,fields\n0,0,0,10,slack\n";
        assert!(matches!(read_trace(text.as_bytes()), Err(TraceError::Format { line: 2, .. })));
    }

    #[test]
    fn empty_logs_round_trip() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &[]).unwrap();
        assert!(read_trace(&buf[..]).unwrap().is_empty());
        buf.clear();
        write_departures(&mut buf, &[]).unwrap();
        assert!(read_departures(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn event_lines_round_trip() {
        let events = vec![
            Event::Drop {
                tick: 3,
                packet_id: 9,
                reason: "block 0 is full".into(),
            },
            Event::Fault { tick: 4, packet_id: 1 },
            Event::Defer {
                tick: 5,
                block: BlockId(2),
                due: 5,
            },
            Event::NonMonotoneRank {
                tick: 6,
                block: BlockId(0),
                lp: LogicalPifoId(1),
                flow: 7,
            },
            Event::WrapHazard {
                tick: 7,
                block: BlockId(1),
                rank: 70000,
            },
            Event::HorizonExceeded { tick: 8, buffered: 2 },
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        assert_eq!(read_events(&buf[..]).unwrap(), events);
        assert!(parse_event("3 teleport x=1").is_err());
    }

    #[test]
    fn backlogged_alternates_one_per_tick() {
        let spec = GenSpec::parse("backlogged:flows=2,len=100,ticks=10000").unwrap();
        let t = generate_trace(&spec, 0).unwrap();
        assert_eq!(t.len(), 10_000);
        assert!(t.iter().enumerate().all(|(i, p)| p.arrival == i as u64 && p.flow_id == i as u64 % 2));
        assert_eq!(crowded_tick(&t), None);
    }

    #[test]
    fn generators_are_seeded() {
        for text in ["poisson:rates=0.3/0.5,len=64,ticks=5000", "onoff:flows=3,burst=10,idle=20,ticks=5000"] {
            let spec = GenSpec::parse(text).unwrap();
            let a = generate_trace(&spec, 7).unwrap();
            assert_eq!(a, generate_trace(&spec, 7).unwrap());
            assert_ne!(a, generate_trace(&spec, 8).unwrap());
            assert_eq!(crowded_tick(&a), None);
        }
    }

    #[test]
    fn poisson_rate_matches_on_average() {
        let spec = GenSpec::Poisson {
            rates: vec![0.2, 0.6],
            length: 1,
            ticks: 100_000,
        };
        let t = generate_trace(&spec, 1).unwrap();
        let f0 = t.iter().filter(|p| p.flow_id == 0).count() as f64 / 100_000.0;
        let f1 = t.iter().filter(|p| p.flow_id == 1).count() as f64 / 100_000.0;
        assert!((f0 - 0.2).abs() < 0.01 && (f1 - 0.6).abs() < 0.01, "{f0} {f1}");
    }

    #[test]
    fn overloaded_poisson_is_invalid() {
        assert!(matches!(
            GenSpec::parse("poisson:rates=0.6/0.5"),
            Err(TraceError::InvalidSpec(_))
        ));
        assert!(GenSpec::parse("zipf:flows=2").is_err());
        assert!(GenSpec::parse("onoff:burst=0,idle=3").is_err());
    }

    #[test]
    fn empty_log_gives_zero_stats() {
        let s = stats(&[], 100);
        assert_eq!(s.packets, 0);
        assert_eq!(s.bytes, 0);
        assert!(s.flows.is_empty());
        assert_eq!(s.share(0), 0.0);
    }

    #[test]
    fn stats_windows_and_sojourn() {
        let d = |id, flow, a, t, len| Departure {
            packet_id: id,
            flow_id: flow,
            arrival_tick: a,
            departure_tick: t,
            length_bytes: len,
        };
        let log = vec![d(0, 1, 0, 2, 10), d(1, 1, 1, 7, 20), d(2, 2, 5, 12, 30)];
        let s = stats(&log, 5);
        assert_eq!(s.flows[&1].throughput, vec![10, 20, 0]);
        assert_eq!(s.flows[&2].throughput, vec![0, 0, 30]);
        assert_eq!(s.flows[&1].mean_sojourn, 4.0);
        assert_eq!(s.flows[&1].max_sojourn, 6);
        assert_eq!(s.bytes, 60);
    }

    #[test]
    fn bundled_configs_load() {
        let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/");
        let (hpfq, _) = load_config(format!("{root}hpfq.tree")).unwrap();
        assert_eq!(hpfq.len(), 3);
        assert!(!hpfq.has_shaping());
        let (hs, _) = load_config(format!("{root}hshaping.tree")).unwrap();
        let right = hs.find("WFQ_Right").unwrap();
        assert!(hs.node(right).shaping.is_some());
        assert!(matches!(load_config(format!("{root}missing.tree")), Err(LoadError::Io { .. })));
    }

    #[test]
    fn malformed_predicate_reports_line() {
        let dir = std::env::temp_dir().join(format!("pifo-trace-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.tree");
        std::fs::write(&path, "node Root\n  sched fifo\n  match p.flow_id ==\n").unwrap();
        let err = load_config(&path).unwrap_err();
        let LoadError::Config { err, .. } = err else {
            panic!("expected a config error")
        };
        assert_eq!(err.line(), Some(3));
        std::fs::remove_dir_all(dir).ok();
    }

    fn stfq_shares(weights: (u32, u32)) -> (f64, f64) {
        let tree = format!(
            "domain flow_id 0..2\nnode Root\n  sched stfq\n  weight 0 {}\n  weight 1 {}\n",
            weights.0, weights.1
        );
        let tree = Arc::new(TreeSpec::load(&tree).unwrap());
        // Offered load is twice the line rate, so both flows stay backlogged.
        let spec = GenSpec::Backlogged {
            flows: 2,
            length: 100,
            ticks: 20_000,
        };
        let trace = generate_trace(&spec, 0).unwrap();
        let cfg = SimConfig::default().with_line_rate(Fixed::from_int(50));
        let out = run_behavioral(&tree, &trace, &cfg).unwrap();
        // Count only the stretch where both flows are still queued.
        let s = stats(&out.departures[..5_000], 1000);
        (s.share(0), s.share(1))
    }

    #[test]
    fn stfq_shares_follow_weights() {
        let (a, b) = stfq_shares((2, 1));
        assert!((a - 2.0 / 3.0).abs() <= 0.02 && (b - 1.0 / 3.0).abs() <= 0.02, "{a} {b}");
        let (a, b) = stfq_shares((1, 1));
        assert!((a - 0.5).abs() <= 0.02 && (b - 0.5).abs() <= 0.02, "{a} {b}");
    }

    proptest! {
        #[test]
        fn any_trace_round_trips(
            rows in proptest::collection::vec(
                (0u64..5, 0u64..8, 1u32..2000, proptest::collection::btree_map("[a-z_]{1,8}", -1000i64..1000, 0..3)),
                0..40,
            )
        ) {
            let mut t = 0;
            let trace: Vec<PacketRecord> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (gap, flow, len, fields))| {
                    t += gap;
                    let mut p = PacketRecord::new(i as u64, t, flow, len);
                    p.fields = fields;
                    p
                })
                .collect();
            let mut buf = Vec::new();
            write_trace(&mut buf, &trace).unwrap();
            prop_assert_eq!(read_trace(&buf[..]).unwrap(), trace);
        }

        #[test]
        fn stats_conserve_the_log(
            rows in proptest::collection::vec((0u64..6, 0u64..50, 0u64..50, 1u32..1500), 0..60),
            window in 1u64..40,
        ) {
            let log: Vec<Departure> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (f, a, s, len))| Departure {
                    packet_id: i as u64,
                    flow_id: f,
                    arrival_tick: a,
                    departure_tick: a + s,
                    length_bytes: len,
                })
                .collect();
            let mut buf = Vec::new();
            write_departures(&mut buf, &log).unwrap();
            prop_assert_eq!(&read_departures(&buf[..]).unwrap(), &log);
            let s = stats(&log, window);
            prop_assert_eq!(s.packets, log.len() as u64);
            prop_assert_eq!(s.flows.values().map(|f| f.packets).sum::<u64>(), s.packets);
            let series: u64 = s.flows.values().flat_map(|f| f.throughput.iter()).sum();
            prop_assert_eq!(series, s.bytes);
            prop_assert_eq!(s.bytes, log.iter().map(|d| d.length_bytes as u64).sum::<u64>());
        }
    }
}
