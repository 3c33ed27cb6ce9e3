//! Uplink transports: a deterministic simulated channel, and length-prefixed
//! framing for a real byte stream.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::clock::{ps_to_secs, secs_to_ps};
use crate::error::TransportError;

pub const BANDWIDTH_3G: f64 = 1.1e6;
pub const BANDWIDTH_4G: f64 = 5.85e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelPreset {
    #[serde(rename = "3g")]
    ThreeG,
    #[serde(rename = "4g")]
    FourG,
}

impl ChannelPreset {
    pub fn bandwidth_bps(self) -> f64 {
        match self {
            ChannelPreset::ThreeG => BANDWIDTH_3G,
            ChannelPreset::FourG => BANDWIDTH_4G,
        }
    }
}

/// Uplink bandwidth, one-way latency and `[start, end)` failure windows, all
/// in bits/s and seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub bandwidth_bps: f64,
    pub latency_s: f64,
    pub failure_windows: Vec<[f64; 2]>,
}

impl ChannelSpec {
    pub fn new(bandwidth_bps: f64) -> Self {
        ChannelSpec { bandwidth_bps, latency_s: 0.0, failure_windows: Vec::new() }
    }

    pub fn preset(preset: ChannelPreset) -> Self {
        Self::new(preset.bandwidth_bps())
    }

    pub fn with_latency(mut self, latency_s: f64) -> Self {
        self.latency_s = latency_s;
        self
    }

    pub fn with_failure(mut self, start: f64, end: f64) -> Self {
        self.failure_windows.push([start, end]);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.bandwidth_bps > 0.0 && self.bandwidth_bps.is_finite()) {
            return Err(format!("bandwidth must be positive, got {}", self.bandwidth_bps));
        }
        if !(self.latency_s >= 0.0 && self.latency_s.is_finite()) {
            return Err(format!("latency must be non-negative, got {}", self.latency_s));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for &[start, end] in &self.failure_windows {
            if !(start >= 0.0 && start < end) {
                return Err(format!("failure window [{start}, {end}) is empty or negative"));
            }
            if start < prev_end {
                return Err(format!("failure window [{start}, {end}) overlaps or precedes the previous one"));
            }
            prev_end = end;
        }
        Ok(())
    }
}

/// `latency + bits / bandwidth`, in seconds.
pub fn transfer_time(bits: u64, channel: &ChannelSpec) -> f64 {
    channel.latency_s + bits as f64 / channel.bandwidth_bps
}

/// Departure and arrival of one delivered frame, in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub depart: u64,
    pub arrival: u64,
}

impl Delivery {
    pub fn duration(&self) -> u64 {
        self.arrival - self.depart
    }
}

/// Simulated uplink. Frames leave in order: a frame cannot depart before the
/// previous one has fully arrived.
#[derive(Debug, Clone)]
pub struct SimChannel {
    spec: ChannelSpec,
    windows: Vec<(u64, u64)>,
    link_free_at: u64,
    frames: u64,
    bits: u64,
}

impl SimChannel {
    pub fn new(spec: ChannelSpec) -> Result<Self, String> {
        spec.validate()?;
        let windows = spec.failure_windows.iter().map(|&[s, e]| (secs_to_ps(s), secs_to_ps(e))).collect();
        Ok(SimChannel { spec, windows, link_free_at: 0, frames: 0, bits: 0 })
    }

    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    /// Transfer duration of `bits` in picoseconds.
    pub fn transfer_ps(&self, bits: u64) -> u64 {
        secs_to_ps(transfer_time(bits, &self.spec))
    }

    /// True if `[depart, arrival]` meets any failure window.
    pub fn fails_during(&self, depart: u64, arrival: u64) -> bool {
        self.windows.iter().any(|&(start, end)| depart < end && arrival >= start)
    }

    /// Sends `bits` no earlier than `depart`; the transfer occupies the link
    /// whether or not it is delivered.
    pub fn send(&mut self, bits: u64, depart: u64) -> Result<Delivery, TransportError> {
        let duration = self.transfer_ps(bits);
        self.send_for(bits, duration, depart)
    }

    /// Like [`send`](Self::send) with an externally fixed transfer duration.
    pub fn send_for(&mut self, bits: u64, duration: u64, depart: u64) -> Result<Delivery, TransportError> {
        let depart = depart.max(self.link_free_at);
        let arrival = depart + duration;
        self.link_free_at = arrival;
        if self.fails_during(depart, arrival) {
            return Err(TransportError::ChannelDown { depart: ps_to_secs(depart), arrival: ps_to_secs(arrival) });
        }
        self.frames += 1;
        self.bits += bits;
        Ok(Delivery { depart, arrival })
    }

    pub fn link_free_at(&self) -> u64 {
        self.link_free_at
    }

    pub fn set_link_free_at(&mut self, t: u64) {
        self.link_free_at = t;
    }

    pub fn delivered_frames(&self) -> u64 {
        self.frames
    }

    pub fn delivered_bits(&self) -> u64 {
        self.bits
    }
}

/// Largest accepted length prefix on a stream (64 MiB).
pub const MAX_STREAM_FRAME: usize = 64 << 20;

/// Writes `u32` little-endian length followed by the frame bytes.
pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> Result<(), TransportError> {
    if frame.len() > MAX_STREAM_FRAME {
        return Err(TransportError::Protocol(format!("frame of {} bytes exceeds limit", frame.len())));
    }
    w.write_all(&(frame.len() as u32).to_le_bytes())?;
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}

/// Reads one length-prefixed frame; `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, TransportError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_STREAM_FRAME {
        return Err(TransportError::Protocol(format!("length prefix {len} exceeds limit")));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}
