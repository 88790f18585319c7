//! Synthetic raster generator: advected Gaussian blobs plus optional noise.
//!
//! A desk-scale stand-in for licensed radar data. Every frame is the sum of
//! Gaussian blobs translated by a constant velocity per frame, optionally
//! plus non-negative uniform noise; the whole sequence is a pure function of
//! the seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::RasterSequence;
use crate::{Error, Result};

/// Minimum frame edge so that motion matching patches fit.
pub const MIN_SYNTH_EDGE: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: (f64, f64),
    pub amplitude: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub dt_minutes: f64,
    /// Number of randomly drawn blobs (ignored when `blobs` is given).
    pub blob_count: usize,
    /// Advection velocity in pixels per frame.
    pub velocity: (f64, f64),
    /// Amplitude of per-pixel uniform noise in [0, noise].
    pub noise: f64,
    pub seed: u64,
    /// Explicit blob list overriding the random draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs: Option<Vec<Blob>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            frames: 64,
            dt_minutes: 5.0,
            blob_count: 60,
            velocity: (2.0, 0.0),
            noise: 0.0,
            seed: 1,
            blobs: None,
        }
    }
}

pub fn synthesize_rasters(cfg: &SynthConfig) -> Result<RasterSequence> {
    if cfg.width < MIN_SYNTH_EDGE || cfg.height < MIN_SYNTH_EDGE {
        return Err(Error::invalid(format!(
            "synthetic rasters need at least {MIN_SYNTH_EDGE} pixels per edge for motion patches"
        )));
    }
    if cfg.frames == 0 {
        return Err(Error::invalid("need at least one frame"));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::invalid("noise amplitude must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let blobs: Vec<Blob> = match &cfg.blobs {
        Some(b) => b.clone(),
        None => (0..cfg.blob_count)
            .map(|_| Blob {
                center: (
                    rng.random_range(0.12 * cfg.width as f64..0.88 * cfg.width as f64),
                    rng.random_range(0.12 * cfg.height as f64..0.88 * cfg.height as f64),
                ),
                amplitude: rng.random_range(2.0..8.0),
                sigma: rng.random_range(4.0..12.0),
            })
            .collect(),
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut frames = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let mut frame = vec![0.0f32; cfg.width * cfg.height];
        for blob in &blobs {
            let cx = blob.center.0 + k as f64 * cfg.velocity.0;
            let cy = blob.center.1 + k as f64 * cfg.velocity.1;
            // 4σ support keeps the cost proportional to blob area.
            let reach = 4.0 * blob.sigma;
            let x0 = ((cx - reach).floor().max(0.0)) as usize;
            let x1 = ((cx + reach).ceil().min(cfg.width as f64 - 1.0)) as usize;
            let y0 = ((cy - reach).floor().max(0.0)) as usize;
            let y1 = ((cy + reach).ceil().min(cfg.height as f64 - 1.0)) as usize;
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
            for y in y0..=y1 {
                let dy = y as f64 - cy;
                let row = &mut frame[y * cfg.width..(y + 1) * cfg.width];
                for (x, v) in row.iter_mut().enumerate().take(x1 + 1).skip(x0) {
                    let dx = x as f64 - cx;
                    *v += (blob.amplitude * (-(dx * dx + dy * dy) * inv).exp()) as f32;
                }
            }
        }
        if cfg.noise > 0.0 {
            for v in &mut frame {
                *v += noise_rng.random_range(0.0..cfg.noise) as f32;
            }
        }
        frames.push(frame);
    }
    RasterSequence::new(cfg.width, cfg.height, cfg.dt_minutes, frames)
}
