//! Text and binary serialization of trajectories and binding histories.
//!
//! Text forms are line oriented: `#` header lines, then one `time<TAB>event`
//! line per event. Binary forms are little-endian with a four-byte magic and
//! a `u32` version. Both layouts are described in `docs/formats.md`.

use std::io::{BufRead, Read, Write};

use thiserror::Error;

use super::{BindKind, BindingHistory, Event, Snapshot, Trajectory, TrajectoryHeader};
use crate::model::SystemState;

pub const HISTORY_TEXT_TAG: &str = "# mcdemod binding-history v1";
pub const TRAJECTORY_TEXT_TAG: &str = "# mcdemod trajectory v1";
const HISTORY_MAGIC: &[u8; 4] = b"MCBH";
const TRAJECTORY_MAGIC: &[u8; 4] = b"MCTJ";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        msg: msg.into(),
    }
}

fn kind_name(kind: BindKind) -> &'static str {
    match kind {
        BindKind::Bind => "bind",
        BindKind::Unbind => "unbind",
    }
}

impl BindingHistory {
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        writeln!(w, "{HISTORY_TEXT_TAG}")?;
        writeln!(w, "# receptors {}", self.receptors)?;
        writeln!(w, "# horizon {}", self.horizon)?;
        writeln!(w, "# initial_bound {}", self.initial_bound)?;
        for &(t, kind) in &self.events {
            writeln!(w, "{t}\t{}", kind_name(kind))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, FormatError> {
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(l))) if l.trim_end() == HISTORY_TEXT_TAG => {}
            _ => return Err(parse_err(1, "missing binding-history header")),
        }
        let mut h = BindingHistory::new(0, f64::NAN);
        for (i, line) in lines {
            let line = line?;
            let n = i + 1;
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, value) = rest
                    .split_once(' ')
                    .ok_or_else(|| parse_err(n, "malformed header"))?;
                let bad = |_| parse_err(n, format!("bad value for {key}"));
                match key {
                    "receptors" => h.receptors = value.parse().map_err(bad)?,
                    "horizon" => h.horizon = value.parse().map_err(|_| parse_err(n, "bad horizon"))?,
                    "initial_bound" => h.initial_bound = value.parse().map_err(bad)?,
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (t, kind) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(n, "expected time<TAB>event"))?;
            let t: f64 = t.parse().map_err(|_| parse_err(n, "bad time"))?;
            let kind = match kind.trim() {
                "bind" => BindKind::Bind,
                "unbind" => BindKind::Unbind,
                other => return Err(parse_err(n, format!("unknown event {other:?}"))),
            };
            h.events.push((t, kind));
        }
        if !h.horizon.is_finite() {
            return Err(FormatError::Invalid("missing horizon".into()));
        }
        h.validate().map_err(FormatError::Invalid)?;
        Ok(h)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        w.write_all(HISTORY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&self.receptors.to_le_bytes())?;
        w.write_all(&self.initial_bound.to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&(self.events.len() as u64).to_le_bytes())?;
        for &(t, kind) in &self.events {
            w.write_all(&t.to_le_bytes())?;
            w.write_all(&[(kind == BindKind::Bind) as u8])?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, FormatError> {
        expect_magic(&mut r, HISTORY_MAGIC)?;
        let receptors = read_u32(&mut r)?;
        let initial_bound = read_u32(&mut r)?;
        let horizon = read_f64(&mut r)?;
        let n = read_u64(&mut r)?;
        let mut events = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            let t = read_f64(&mut r)?;
            let mut k = [0u8];
            r.read_exact(&mut k)?;
            let kind = match k[0] {
                1 => BindKind::Bind,
                0 => BindKind::Unbind,
                x => return Err(FormatError::Invalid(format!("bad event kind {x}"))),
            };
            events.push((t, kind));
        }
        let h = BindingHistory {
            events,
            receptors,
            horizon,
            initial_bound,
        };
        h.validate().map_err(FormatError::Invalid)?;
        Ok(h)
    }
}

fn state_text(s: &SystemState) -> String {
    let counts: Vec<String> = s.counts().iter().map(|c| c.to_string()).collect();
    format!("{};{};{}", s.n_voxels(), counts.join(","), s.absorbed)
}

fn parse_state(text: &str, line: usize) -> Result<SystemState, FormatError> {
    let mut parts = text.trim().split(';');
    let mut next = || parts.next().ok_or_else(|| parse_err(line, "malformed state"));
    let n_voxels: usize = next()?.parse().map_err(|_| parse_err(line, "bad voxel count"))?;
    let counts = next()?
        .split(',')
        .map(|c| c.parse::<u32>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| parse_err(line, "bad count"))?;
    let absorbed = next()?.parse().map_err(|_| parse_err(line, "bad absorbed count"))?;
    if counts.len() <= n_voxels {
        return Err(parse_err(line, "state too short"));
    }
    Ok(SystemState::from_parts(n_voxels, counts, absorbed))
}

impl Trajectory {
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        writeln!(w, "{TRAJECTORY_TEXT_TAG}")?;
        let header = serde_json::to_string(&self.header).map_err(|e| FormatError::Invalid(e.to_string()))?;
        writeln!(w, "# header {header}")?;
        writeln!(w, "# initial {}", state_text(&self.initial))?;
        for e in &self.events {
            writeln!(w, "{}\t{}", e.time, e.channel)?;
        }
        for s in &self.snapshots {
            writeln!(w, "{}\tsnapshot\t{}", s.time, state_text(&s.state))?;
        }
        writeln!(w, "# final {}", state_text(&self.final_state))?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, FormatError> {
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(l))) if l.trim_end() == TRAJECTORY_TEXT_TAG => {}
            _ => return Err(parse_err(1, "missing trajectory header")),
        }
        let mut header: Option<TrajectoryHeader> = None;
        let mut initial = None;
        let mut final_state = None;
        let mut events = Vec::new();
        let mut snapshots = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let n = i + 1;
            if let Some(rest) = line.strip_prefix("# header ") {
                header = Some(serde_json::from_str(rest).map_err(|e| parse_err(n, e.to_string()))?);
            } else if let Some(rest) = line.strip_prefix("# initial ") {
                initial = Some(parse_state(rest, n)?);
            } else if let Some(rest) = line.strip_prefix("# final ") {
                final_state = Some(parse_state(rest, n)?);
            } else if line.starts_with('#') || line.trim().is_empty() {
                continue;
            } else {
                let fields: Vec<&str> = line.split('\t').collect();
                let time: f64 = fields[0].parse().map_err(|_| parse_err(n, "bad time"))?;
                match fields.as_slice() {
                    [_, "snapshot", state] => snapshots.push(Snapshot {
                        time,
                        state: parse_state(state, n)?,
                    }),
                    [_, channel] => events.push(Event {
                        time,
                        channel: channel.parse().map_err(|_| parse_err(n, "bad channel"))?,
                    }),
                    _ => return Err(parse_err(n, "expected time<TAB>event")),
                }
            }
        }
        let missing = |what: &str| FormatError::Invalid(format!("trajectory missing {what}"));
        Ok(Trajectory {
            header: header.ok_or_else(|| missing("header"))?,
            initial: initial.ok_or_else(|| missing("initial state"))?,
            events,
            snapshots,
            final_state: final_state.ok_or_else(|| missing("final state"))?,
        })
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), FormatError> {
        w.write_all(TRAJECTORY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&self.header).map_err(|e| FormatError::Invalid(e.to_string()))?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        write_state(&mut w, &self.initial)?;
        w.write_all(&(self.events.len() as u64).to_le_bytes())?;
        for e in &self.events {
            w.write_all(&e.time.to_le_bytes())?;
            w.write_all(&e.channel.to_le_bytes())?;
        }
        w.write_all(&(self.snapshots.len() as u64).to_le_bytes())?;
        for s in &self.snapshots {
            w.write_all(&s.time.to_le_bytes())?;
            write_state(&mut w, &s.state)?;
        }
        write_state(&mut w, &self.final_state)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, FormatError> {
        expect_magic(&mut r, TRAJECTORY_MAGIC)?;
        let len = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let header = serde_json::from_slice(&buf).map_err(|e| FormatError::Invalid(e.to_string()))?;
        let initial = read_state(&mut r)?;
        let n = read_u64(&mut r)?;
        let mut events = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            let time = read_f64(&mut r)?;
            let channel = read_u32(&mut r)?;
            events.push(Event { time, channel });
        }
        let n = read_u64(&mut r)?;
        let mut snapshots = Vec::with_capacity(n.min(1 << 16) as usize);
        for _ in 0..n {
            let time = read_f64(&mut r)?;
            snapshots.push(Snapshot {
                time,
                state: read_state(&mut r)?,
            });
        }
        let final_state = read_state(&mut r)?;
        Ok(Trajectory {
            header,
            initial,
            events,
            snapshots,
            final_state,
        })
    }
}

fn write_state<W: Write>(w: &mut W, s: &SystemState) -> Result<(), FormatError> {
    w.write_all(&(s.n_voxels() as u32).to_le_bytes())?;
    w.write_all(&(s.counts().len() as u32).to_le_bytes())?;
    for c in s.counts() {
        w.write_all(&c.to_le_bytes())?;
    }
    w.write_all(&s.absorbed.to_le_bytes())?;
    Ok(())
}

fn read_state<R: Read>(r: &mut R) -> Result<SystemState, FormatError> {
    let n_voxels = read_u32(r)? as usize;
    let len = read_u32(r)? as usize;
    if len <= n_voxels {
        return Err(FormatError::Invalid("state too short".into()));
    }
    let counts = (0..len).map(|_| read_u32(r)).collect::<Result<Vec<_>, _>>()?;
    let absorbed = read_u64(r)?;
    Ok(SystemState::from_parts(n_voxels, counts, absorbed))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(), FormatError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(FormatError::Invalid("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != BINARY_VERSION {
        return Err(FormatError::Invalid(format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, FormatError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, FormatError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
