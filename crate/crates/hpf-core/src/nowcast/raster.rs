//! Raster sequences and their on-disk format.
//!
//! The file format is a single ASCII header line
//!
//! ```text
//! HPF-RASTER 1 <width> <height> <frames> <dt_minutes>\n
//! ```
//!
//! followed by the payload as little-endian 32-bit floats, row-major within
//! a frame and frame-major across the sequence. The decoder is total: any
//! malformed input yields a parse error, never a panic or an unbounded
//! allocation.

use crate::{Error, Result};

const MAGIC: &str = "HPF-RASTER";
const FORMAT_VERSION: u32 = 1;
/// Decoder allocation cap (payload bytes).
const MAX_PAYLOAD_BYTES: u64 = 256 * 1024 * 1024;

/// A sequence of equally shaped non-negative grids (precipitation mm/hr).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterSequence {
    pub width: usize,
    pub height: usize,
    /// Minutes between consecutive frames.
    pub dt_minutes: f64,
    frames: Vec<Vec<f32>>,
}

impl RasterSequence {
    pub fn new(
        width: usize,
        height: usize,
        dt_minutes: f64,
        frames: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("raster needs positive dimensions"));
        }
        if !(dt_minutes.is_finite() && dt_minutes > 0.0) {
            return Err(Error::invalid("dt must be a positive number of minutes"));
        }
        for (k, f) in frames.iter().enumerate() {
            if f.len() != width * height {
                return Err(Error::invalid(format!(
                    "frame {k} has {} values, expected {}",
                    f.len(),
                    width * height
                )));
            }
            if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!(
                    "frame {k} contains negative or non-finite values"
                )));
            }
        }
        Ok(RasterSequence {
            width,
            height,
            dt_minutes,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, k: usize) -> FrameView<'_> {
        FrameView {
            width: self.width,
            height: self.height,
            data: &self.frames[k],
        }
    }

    pub fn frames(&self) -> &[Vec<f32>] {
        &self.frames
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!(
            "{MAGIC} {FORMAT_VERSION} {} {} {} {}\n",
            self.width,
            self.height,
            self.frames.len(),
            self.dt_minutes
        )
        .into_bytes();
        out.reserve(self.frames.len() * self.width * self.height * 4);
        for f in &self.frames {
            for v in f {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("missing header line".into()))?;
        if newline > 256 {
            return Err(Error::Parse("header line too long".into()));
        }
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::Parse("header is not ASCII".into()))?;
        let fields: Vec<&str> = header.split_ascii_whitespace().collect();
        if fields.len() != 6 || fields[0] != MAGIC {
            return Err(Error::Parse("malformed header".into()));
        }
        let version: u32 = fields[1]
            .parse()
            .map_err(|_| Error::Parse("bad version field".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported version {version}")));
        }
        let width: usize = fields[2]
            .parse()
            .map_err(|_| Error::Parse("bad width".into()))?;
        let height: usize = fields[3]
            .parse()
            .map_err(|_| Error::Parse("bad height".into()))?;
        let num_frames: usize = fields[4]
            .parse()
            .map_err(|_| Error::Parse("bad frame count".into()))?;
        let dt_minutes: f64 = fields[5]
            .parse()
            .map_err(|_| Error::Parse("bad dt".into()))?;
        let per_frame = (width as u64)
            .checked_mul(height as u64)
            .ok_or_else(|| Error::Parse("dimension overflow".into()))?;
        let payload = per_frame
            .checked_mul(num_frames as u64)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Parse("payload size overflow".into()))?;
        if payload > MAX_PAYLOAD_BYTES {
            return Err(Error::Parse(format!(
                "payload of {payload} bytes exceeds the {MAX_PAYLOAD_BYTES} byte cap"
            )));
        }
        let body = &bytes[newline + 1..];
        if body.len() as u64 != payload {
            return Err(Error::Parse(format!(
                "payload is {} bytes, header promises {payload}",
                body.len()
            )));
        }
        let mut frames = Vec::with_capacity(num_frames);
        let frame_bytes = (per_frame * 4) as usize;
        for k in 0..num_frames {
            let chunk = &body[k * frame_bytes..(k + 1) * frame_bytes];
            let frame: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            frames.push(frame);
        }
        RasterSequence::new(width, height, dt_minutes, frames)
            .map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Read-only view of one frame with clamp-padded access.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [f32],
}

impl<'a> FrameView<'a> {
    /// Integer read with clamp padding at the borders.
    #[inline]
    pub fn at(&self, x: i64, y: i64) -> f64 {
        let xi = x.clamp(0, self.width as i64 - 1) as usize;
        let yi = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yi * self.width + xi] as f64
    }

    /// Bilinear read at real coordinates with clamp padding.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, self.width as f64 - 1.0);
        let yc = y.clamp(0.0, self.height as f64 - 1.0);
        let x0 = xc.floor();
        let y0 = yc.floor();
        let fx = xc - x0;
        let fy = yc - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = self.at(x0, y0);
        let v10 = self.at(x0 + 1, y0);
        let v01 = self.at(x0, y0 + 1);
        let v11 = self.at(x0 + 1, y0 + 1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }
}
