//! ThinkGear (TGAM) serial packet codec.
//!
//! A frame on the wire is
//!
//! ```text
//! [SYNC 0xAA]+ [PLENGTH] [PAYLOAD; PLENGTH] [CHKSUM]
//! ```
//!
//! where `CHKSUM` is the one's complement of the low byte of the payload sum.
//! The payload is a sequence of data rows. Single-byte rows (`code < 0x80`)
//! carry one value byte: `0x02` poor-signal quality, `0x04` attention and
//! `0x05` meditation. Multi-byte rows (`code >= 0x80`) carry a length byte
//! followed by that many value bytes: `0x80` is one raw-wave sample
//! (big-endian `i16`) and `0x83` is the eight 24-bit big-endian ASIC band
//! powers. Multi-byte values are always big-endian.
//!
//! The encoder always emits a double sync (`0xAA 0xAA`); the decoder accepts
//! any run of one or more sync bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYNC: u8 = 0xAA;
/// Largest payload the device may announce; longer `PLENGTH` values are garbage.
pub const MAX_PAYLOAD: usize = 169;
pub const MAX_BAND_POWER: u32 = (1 << 24) - 1;
pub const MAX_POOR_SIGNAL: u8 = 200;
pub const MAX_ESENSE: u8 = 100;

pub const CODE_POOR_SIGNAL: u8 = 0x02;
pub const CODE_ATTENTION: u8 = 0x04;
pub const CODE_MEDITATION: u8 = 0x05;
pub const CODE_RAW_WAVE: u8 = 0x80;
pub const CODE_ASIC_EEG_POWER: u8 = 0x83;

/// The eight ASIC band powers in device order. Each value is a unitless
/// 24-bit quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AsicPowers {
    pub delta: u32,
    pub theta: u32,
    pub low_alpha: u32,
    pub high_alpha: u32,
    pub low_beta: u32,
    pub high_beta: u32,
    pub low_gamma: u32,
    pub mid_gamma: u32,
}

impl AsicPowers {
    pub fn from_array(v: [u32; 8]) -> Self {
        AsicPowers {
            delta: v[0],
            theta: v[1],
            low_alpha: v[2],
            high_alpha: v[3],
            low_beta: v[4],
            high_beta: v[5],
            low_gamma: v[6],
            mid_gamma: v[7],
        }
    }

    pub fn to_array(&self) -> [u32; 8] {
        [
            self.delta,
            self.theta,
            self.low_alpha,
            self.high_alpha,
            self.low_beta,
            self.high_beta,
            self.low_gamma,
            self.mid_gamma,
        ]
    }
}

/// One decoded frame. Absent rows are `None`; an empty `raw_samples` means
/// the frame carried no raw-wave rows.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TgamPacket {
    pub poor_signal: Option<u8>,
    pub band_powers: Option<AsicPowers>,
    pub attention: Option<u8>,
    pub meditation: Option<u8>,
    pub raw_samples: Vec<i16>,
}

impl TgamPacket {
    /// A frame carrying only raw-wave samples.
    pub fn raw(samples: Vec<i16>) -> Self {
        TgamPacket {
            raw_samples: samples,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(q) = self.poor_signal {
            if q > MAX_POOR_SIGNAL {
                return Err(Error::invalid(format!(
                    "poor_signal {q} exceeds {MAX_POOR_SIGNAL}"
                )));
            }
        }
        if let Some(bp) = &self.band_powers {
            if let Some(v) = bp.to_array().into_iter().find(|&v| v > MAX_BAND_POWER) {
                return Err(Error::invalid(format!(
                    "band power {v} does not fit in 24 bits"
                )));
            }
        }
        for (name, v) in [
            ("attention", self.attention),
            ("meditation", self.meditation),
        ] {
            if let Some(v) = v {
                if v > MAX_ESENSE {
                    return Err(Error::invalid(format!("{name} {v} exceeds {MAX_ESENSE}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameErrorKind {
    BadChecksum,
    /// `PLENGTH` above the device limit, or a row whose length byte is wrong
    /// or runs past the payload.
    BadLength,
    UnknownCode,
    /// The stream ended inside a frame.
    Truncated,
    /// A checksum-valid row whose value lies outside its documented range.
    OutOfRange,
}

impl FrameErrorKind {
    pub const ALL: [FrameErrorKind; 5] = [
        FrameErrorKind::BadChecksum,
        FrameErrorKind::BadLength,
        FrameErrorKind::UnknownCode,
        FrameErrorKind::Truncated,
        FrameErrorKind::OutOfRange,
    ];
}

/// A dropped frame. `offset` is the absolute stream index of the frame's
/// first sync byte (or of the offending length byte for `BadLength`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameError {
    pub kind: FrameErrorKind,
    pub offset: usize,
}

/// One's complement of the low byte of the payload sum.
pub fn checksum(payload: &[u8]) -> u8 {
    !payload.iter().fold(0u8, |acc, &b| acc.wrapping_add(b))
}

/// Payload rows in the fixed order poor-signal, band powers, attention,
/// meditation, raw wave.
pub fn encode_payload(packet: &TgamPacket) -> Result<Vec<u8>> {
    packet.validate()?;
    let mut out = Vec::with_capacity(32 + 4 * packet.raw_samples.len());
    if let Some(q) = packet.poor_signal {
        out.extend_from_slice(&[CODE_POOR_SIGNAL, q]);
    }
    if let Some(bp) = &packet.band_powers {
        out.extend_from_slice(&[CODE_ASIC_EEG_POWER, 24]);
        for v in bp.to_array() {
            out.extend_from_slice(&v.to_be_bytes()[1..]);
        }
    }
    if let Some(a) = packet.attention {
        out.extend_from_slice(&[CODE_ATTENTION, a]);
    }
    if let Some(m) = packet.meditation {
        out.extend_from_slice(&[CODE_MEDITATION, m]);
    }
    for s in &packet.raw_samples {
        out.extend_from_slice(&[CODE_RAW_WAVE, 2]);
        out.extend_from_slice(&s.to_be_bytes());
    }
    if out.len() > MAX_PAYLOAD {
        return Err(Error::invalid(format!(
            "payload of {} bytes exceeds the {MAX_PAYLOAD}-byte frame limit",
            out.len()
        )));
    }
    Ok(out)
}

/// Encodes one packet as a complete frame.
pub fn encode(packet: &TgamPacket) -> Result<Vec<u8>> {
    let payload = encode_payload(packet)?;
    let mut frame = Vec::with_capacity(payload.len() + 4);
    frame.extend_from_slice(&[SYNC, SYNC, payload.len() as u8]);
    frame.extend_from_slice(&payload);
    frame.push(checksum(&payload));
    Ok(frame)
}

/// Parses a checksum-verified payload into a packet.
pub fn parse_payload(payload: &[u8]) -> std::result::Result<TgamPacket, FrameErrorKind> {
    let mut packet = TgamPacket::default();
    let mut k = 0;
    while k < payload.len() {
        let code = payload[k];
        k += 1;
        if code < 0x80 {
            let &value = payload.get(k).ok_or(FrameErrorKind::BadLength)?;
            k += 1;
            match code {
                CODE_POOR_SIGNAL if value <= MAX_POOR_SIGNAL => packet.poor_signal = Some(value),
                CODE_ATTENTION if value <= MAX_ESENSE => packet.attention = Some(value),
                CODE_MEDITATION if value <= MAX_ESENSE => packet.meditation = Some(value),
                CODE_POOR_SIGNAL | CODE_ATTENTION | CODE_MEDITATION => {
                    return Err(FrameErrorKind::OutOfRange)
                }
                _ => return Err(FrameErrorKind::UnknownCode),
            }
        } else {
            let &vlen = payload.get(k).ok_or(FrameErrorKind::BadLength)?;
            k += 1;
            let value = payload
                .get(k..k + vlen as usize)
                .ok_or(FrameErrorKind::BadLength)?;
            k += vlen as usize;
            match (code, vlen) {
                (CODE_RAW_WAVE, 2) => packet
                    .raw_samples
                    .push(i16::from_be_bytes([value[0], value[1]])),
                (CODE_ASIC_EEG_POWER, 24) => {
                    let mut powers = [0u32; 8];
                    for (p, chunk) in powers.iter_mut().zip(value.chunks_exact(3)) {
                        *p = u32::from_be_bytes([0, chunk[0], chunk[1], chunk[2]]);
                    }
                    packet.band_powers = Some(AsicPowers::from_array(powers));
                }
                (CODE_RAW_WAVE | CODE_ASIC_EEG_POWER, _) => return Err(FrameErrorKind::BadLength),
                _ => return Err(FrameErrorKind::UnknownCode),
            }
        }
    }
    Ok(packet)
}

/// Output of a decoding pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decoded {
    pub packets: Vec<TgamPacket>,
    pub errors: Vec<FrameError>,
}

impl Decoded {
    fn append(&mut self, mut other: Decoded) {
        self.packets.append(&mut other.packets);
        self.errors.append(&mut other.errors);
    }

    pub fn raw_samples(&self) -> impl Iterator<Item = i16> + '_ {
        self.packets
            .iter()
            .flat_map(|p| p.raw_samples.iter().copied())
    }
}

/// Incremental frame decoder.
///
/// Bytes may be fed in arbitrary chunks; frames spanning chunk boundaries are
/// held back until complete. Call [`Decoder::finish`] at end of stream to
/// flush a trailing partial frame as a `Truncated` error.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
    /// Absolute stream offset of `buf[0]`.
    base: usize,
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Decoded {
        self.buf.extend_from_slice(bytes);
        self.drain(false)
    }

    pub fn finish(mut self) -> Decoded {
        self.drain(true)
    }

    fn drain(&mut self, at_end: bool) -> Decoded {
        let mut out = Decoded::default();
        let buf = &self.buf;
        let len = buf.len();
        let mut i = 0;
        while i < len {
            let Some(rel) = buf[i..].iter().position(|&b| b == SYNC) else {
                i = len;
                break;
            };
            let start = i + rel;
            let mut j = start;
            while j < len && buf[j] == SYNC {
                j += 1;
            }
            if j == len {
                if at_end {
                    out.errors
                        .push(self.error(FrameErrorKind::Truncated, start));
                    i = len;
                } else {
                    i = start;
                }
                break;
            }
            let plen = buf[j] as usize;
            if plen > MAX_PAYLOAD {
                out.errors.push(self.error(FrameErrorKind::BadLength, j));
                i = j + 1;
                continue;
            }
            let chk_at = j + 1 + plen;
            if chk_at >= len {
                if at_end {
                    out.errors
                        .push(self.error(FrameErrorKind::Truncated, start));
                    i = j;
                    continue;
                }
                i = start;
                break;
            }
            let payload = &buf[j + 1..chk_at];
            if checksum(payload) != buf[chk_at] {
                out.errors
                    .push(self.error(FrameErrorKind::BadChecksum, start));
                i = j;
                continue;
            }
            match parse_payload(payload) {
                Ok(p) => {
                    out.packets.push(p);
                    i = chk_at + 1;
                }
                Err(kind) => {
                    out.errors.push(self.error(kind, start));
                    i = j;
                }
            }
        }
        self.buf.drain(..i);
        self.base += i;
        out
    }

    fn error(&self, kind: FrameErrorKind, rel: usize) -> FrameError {
        FrameError {
            kind,
            offset: self.base + rel,
        }
    }
}

/// Decodes a complete byte stream. Never aborts: bad frames are reported in
/// `errors` and scanning continues after the failed sync run.
pub fn decode_stream(bytes: &[u8]) -> Decoded {
    let mut dec = Decoder::new();
    let mut out = dec.feed(bytes);
    out.append(dec.finish());
    out
}
