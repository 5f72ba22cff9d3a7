//! Event streams and their CSV / binary encodings.
//!
//! CSV: one `t,x,y,p` line per event. An optional first line
//! `# sensor <width> <height>` records the resolution; without it the caller
//! supplies one. Blank lines and other `#` lines are skipped.
//!
//! Binary: a 16-byte header (`TCJAEVT0`, width `u16`, height `u16`,
//! count `u32`) followed by 9-byte records (`t: u32`, `x: u16`, `y: u16`,
//! `p: u8`), all little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENT_MAGIC: &[u8; 8] = b"TCJAEVT0";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Microseconds.
    pub t: u32,
    pub x: u16,
    pub y: u16,
    /// 0 = OFF, 1 = ON.
    pub p: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Bin,
}

impl EventFormat {
    /// `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Bin,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            EventFormat::Csv => "csv",
            EventFormat::Bin => "bin",
        }
    }
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        let s = EventStream {
            width,
            height,
            events,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Bounds, polarity and timestamp order.
    pub fn validate(&self) -> Result<()> {
        let mut last = 0;
        for (index, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::EventOutOfBounds {
                    index,
                    message: format!(
                        "({}, {}) outside {}×{} sensor",
                        e.x, e.y, self.width, self.height
                    ),
                });
            }
            if e.p > 1 {
                return Err(Error::EventOutOfBounds {
                    index,
                    message: format!("polarity {} not in {{0, 1}}", e.p),
                });
            }
            if e.t < last {
                return Err(Error::EventOutOfBounds {
                    index,
                    message: format!("timestamp {} precedes {}", e.t, last),
                });
            }
            last = e.t;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# sensor {} {}\n", self.width, self.height);
        for e in &self.events {
            out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p));
        }
        out
    }

    pub fn to_bin(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.events.len());
        out.extend_from_slice(EVENT_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(self.events.len() as u32).to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.t.to_le_bytes());
            out.extend_from_slice(&e.x.to_le_bytes());
            out.extend_from_slice(&e.y.to_le_bytes());
            out.push(e.p);
        }
        out
    }
}

/// Parses CSV text. `sensor` is used when the text has no sensor line.
pub fn parse_csv(text: &str, sensor: Option<(u16, u16)>) -> Result<EventStream> {
    let mut dims = None;
    let mut events = Vec::new();
    let mut offset = 0u64;
    for (lineno, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len() as u64;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut words = comment.split_whitespace();
            if lineno == 0 && words.next() == Some("sensor") {
                let w = words.next().and_then(|v| v.parse().ok());
                let h = words.next().and_then(|v| v.parse().ok());
                match (w, h, words.next()) {
                    (Some(w), Some(h), None) => dims = Some((w, h)),
                    _ => {
                        return Err(Error::MalformedEvents {
                            offset: start,
                            message: format!("bad sensor line {line:?}"),
                        })
                    }
                }
            }
            continue;
        }
        let bad = |what: &str| Error::MalformedEvents {
            offset: start,
            message: format!("line {}: {what} in {line:?}", lineno + 1),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields t,x,y,p"));
        }
        events.push(Event {
            t: fields[0].parse().map_err(|_| bad("bad timestamp"))?,
            x: fields[1].parse().map_err(|_| bad("bad x"))?,
            y: fields[2].parse().map_err(|_| bad("bad y"))?,
            p: fields[3].parse().map_err(|_| bad("bad polarity"))?,
        });
    }
    let (width, height) = dims.or(sensor).ok_or_else(|| Error::MalformedEvents {
        offset: 0,
        message: "no sensor line and no resolution supplied".into(),
    })?;
    EventStream::new(width, height, events)
}

pub fn parse_bin(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedEvents {
            offset: bytes.len() as u64,
            message: format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len()),
        });
    }
    if &bytes[..8] != EVENT_MAGIC {
        return Err(Error::MalformedEvents {
            offset: 0,
            message: "bad magic, expected TCJAEVT0".into(),
        });
    }
    let width = u16::from_le_bytes([bytes[8], bytes[9]]);
    let height = u16::from_le_bytes([bytes[10], bytes[11]]);
    let count = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * RECORD_LEN {
        let complete = (body.len() / RECORD_LEN).min(count);
        return Err(Error::MalformedEvents {
            offset: (HEADER_LEN + complete * RECORD_LEN) as u64,
            message: format!(
                "header declares {count} records but payload holds {} bytes",
                body.len()
            ),
        });
    }
    let events = body
        .chunks_exact(RECORD_LEN)
        .map(|r| Event {
            t: u32::from_le_bytes([r[0], r[1], r[2], r[3]]),
            x: u16::from_le_bytes([r[4], r[5]]),
            y: u16::from_le_bytes([r[6], r[7]]),
            p: r[8],
        })
        .collect();
    EventStream::new(width, height, events)
}

pub fn read_events(
    path: &Path,
    format: EventFormat,
    sensor: Option<(u16, u16)>,
) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = match format {
        EventFormat::Bin => parse_bin(&bytes),
        EventFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::MalformedEvents {
                offset: e.valid_up_to() as u64,
                message: "invalid UTF-8".into(),
            })?;
            parse_csv(text, sensor)
        }
    };
    parsed.map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

pub fn write_events(path: &Path, stream: &EventStream, format: EventFormat) -> Result<()> {
    let bytes = match format {
        EventFormat::Csv => stream.to_csv().into_bytes(),
        EventFormat::Bin => stream.to_bin(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
