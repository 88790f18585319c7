//! Switching-based block motion estimation.
//!
//! Every stride-th pixel runs one switching instance whose experts are
//! candidate displacements; expert `d`'s per-round loss is the mean squared
//! difference between the patch around the location now and the patch around
//! the location displaced by `d` in the previous frame. The per-location
//! estimate is the candidate with maximum switching weight, and the full
//! field fills the gaps by bilinear interpolation of the stride-grid
//! estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::raster::FrameView;
use crate::switching::{RateSchedule, SwitchingState};
use crate::{Error, Result};

/// Candidate displacement set.
///
/// The ring construction places `4r` directions uniformly on a circle of
/// radius `r`, rounds them to pixel offsets and deduplicates. Candidates are
/// kept sorted by (magnitude², dx, dy), so scanning for the maximum weight
/// resolves ties toward the smallest-magnitude, lexicographically smallest
/// displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionCandidates {
    pub offsets: Vec<(i32, i32)>,
}

impl MotionCandidates {
    /// Union of rings only (the pure ring construction: 60 candidates for
    /// radii 1, 2, 4, 8).
    pub fn ring_union(radii: &[u32]) -> Self {
        let mut offsets = Vec::new();
        for &r in radii {
            let spokes = 4 * r;
            for k in 0..spokes {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / spokes as f64;
                let dx = (r as f64 * angle.cos()).round() as i32;
                let dy = (r as f64 * angle.sin()).round() as i32;
                offsets.push((dx, dy));
            }
        }
        Self::canonical(offsets)
    }

    /// Ring union plus the zero displacement, so static scenes have a
    /// zero-loss expert.
    pub fn ring_union_with_zero(radii: &[u32]) -> Self {
        let mut c = Self::ring_union(radii);
        c.offsets.push((0, 0));
        Self::canonical(c.offsets)
    }

    fn canonical(mut offsets: Vec<(i32, i32)>) -> Self {
        offsets.sort_by_key(|&(dx, dy)| (dx as i64 * dx as i64 + dy as i64 * dy as i64, dx, dy));
        offsets.dedup();
        MotionCandidates { offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

impl Default for MotionCandidates {
    fn default() -> Self {
        Self::ring_union_with_zero(&[1, 2, 4, 8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub candidates: MotionCandidates,
    /// Estimation grid spacing in pixels.
    pub stride: usize,
    /// Pixel-matching patch radius.
    pub match_radius: usize,
    /// Exp-concavity constant of the matching loss.
    pub eta: f64,
    pub schedule: RateSchedule,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            candidates: MotionCandidates::default(),
            stride: 8,
            match_radius: 33,
            // Squared matching loss on values up to ~12 mm/hr.
            eta: 1.0 / (2.0 * 12.0 * 12.0),
            schedule: RateSchedule::Harmonic,
        }
    }
}

/// Dense per-pixel motion field (pixels/frame), bilinear between grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    /// Row-major `(dx, dy)` per pixel.
    pub vectors: Vec<(f64, f64)>,
}

impl MotionField {
    pub fn zero(width: usize, height: usize, stride: usize) -> Self {
        MotionField {
            width,
            height,
            stride,
            vectors: vec![(0.0, 0.0); width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        self.vectors[y * self.width + x]
    }

    /// Bilinear sample at real coordinates, clamp-padded.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let xc = x.clamp(0.0, self.width as f64 - 1.0);
        let yc = y.clamp(0.0, self.height as f64 - 1.0);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let fetch = |xi: usize, yi: usize| self.vectors[yi * self.width + xi];
        let (a, b, c, d) = (fetch(x0, y0), fetch(x1, y0), fetch(x0, y1), fetch(x1, y1));
        (
            a.0 * (1.0 - fx) * (1.0 - fy) + b.0 * fx * (1.0 - fy) + c.0 * (1.0 - fx) * fy + d.0 * fx * fy,
            a.1 * (1.0 - fx) * (1.0 - fy) + b.1 * fx * (1.0 - fy) + c.1 * (1.0 - fx) * fy + d.1 * fx * fy,
        )
    }
}

/// Online motion estimator: one switching instance per stride-grid location.
#[derive(Debug, Clone)]
pub struct MotionEstimator {
    config: MotionConfig,
    width: usize,
    height: usize,
    grid_xs: Vec<usize>,
    grid_ys: Vec<usize>,
    patch: Vec<(i32, i32)>,
    states: Vec<SwitchingState>,
}

impl MotionEstimator {
    pub fn new(width: usize, height: usize, config: MotionConfig) -> Result<Self> {
        let diameter = 2 * config.match_radius + 1;
        if width < diameter || height < diameter {
            return Err(Error::invalid(format!(
                "{width}x{height} frame too small for radius-{} matching patches",
                config.match_radius
            )));
        }
        if config.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if config.candidates.len() < 2 {
            return Err(Error::invalid("need at least two candidate displacements"));
        }
        let grid_xs: Vec<usize> = (0..width).step_by(config.stride).collect();
        let grid_ys: Vec<usize> = (0..height).step_by(config.stride).collect();
        let r = config.match_radius as i32;
        let mut patch = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    patch.push((dx, dy));
                }
            }
        }
        let states = (0..grid_xs.len() * grid_ys.len())
            .map(|_| SwitchingState::init(config.candidates.len(), config.eta, config.schedule.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionEstimator {
            config,
            width,
            height,
            grid_xs,
            grid_ys,
            patch,
            states,
        })
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.grid_xs.len(), self.grid_ys.len())
    }

    /// Stride-grid coordinates whose full matching patch (including the
    /// largest candidate displacement) stays in bounds.
    pub fn interior_grid_points(&self) -> Vec<(usize, usize)> {
        let max_d = self
            .config
            .candidates
            .offsets
            .iter()
            .map(|&(dx, dy)| dx.abs().max(dy.abs()))
            .max()
            .unwrap_or(0) as i64;
        let reach = self.config.match_radius as i64 + max_d;
        let mut out = Vec::new();
        for &gy in &self.grid_ys {
            for &gx in &self.grid_xs {
                let (x, y) = (gx as i64, gy as i64);
                if x - reach >= 0
                    && x + reach < self.width as i64
                    && y - reach >= 0
                    && y + reach < self.height as i64
                {
                    out.push((gx, gy));
                }
            }
        }
        out
    }

    /// One update round from a consecutive frame pair.
    pub fn observe(&mut self, prev: FrameView<'_>, cur: FrameView<'_>) -> Result<()> {
        if prev.width != self.width
            || prev.height != self.height
            || cur.width != self.width
            || cur.height != self.height
        {
            return Err(Error::invalid("frame shape does not match the estimator"));
        }
        let offsets = &self.config.candidates.offsets;
        let patch = &self.patch;
        let grid_xs = &self.grid_xs;
        let n_gx = grid_xs.len();
        let grid_ys = &self.grid_ys;
        let losses: Vec<Vec<f64>> = (0..self.states.len())
            .into_par_iter()
            .map(|idx| {
                let gx = grid_xs[idx % n_gx] as i64;
                let gy = grid_ys[idx / n_gx] as i64;
                let cur_patch: Vec<f64> =
                    patch.iter().map(|&(dx, dy)| cur.at(gx + dx as i64, gy + dy as i64)).collect();
                offsets
                    .iter()
                    .map(|&(cdx, cdy)| {
                        let (sx, sy) = (gx - cdx as i64, gy - cdy as i64);
                        let mut acc = 0.0;
                        for (k, &(dx, dy)) in patch.iter().enumerate() {
                            let d = cur_patch[k] - prev.at(sx + dx as i64, sy + dy as i64);
                            acc += d * d;
                        }
                        acc / patch.len() as f64
                    })
                    .collect()
            })
            .collect();
        for (state, loss_row) in self.states.iter_mut().zip(&losses) {
            state.update(loss_row)?;
        }
        Ok(())
    }

    /// Current argmax-weight estimate at a grid index.
    fn estimate_at(&self, idx: usize) -> (f64, f64) {
        let weights = self.states[idx].beta_normalized();
        let mut best = 0usize;
        for (i, &w) in weights.iter().enumerate() {
            if w > weights[best] {
                best = i;
            }
        }
        let (dx, dy) = self.config.candidates.offsets[best];
        (dx as f64, dy as f64)
    }

    /// Dense field from the current per-location weights.
    pub fn field(&self) -> MotionField {
        let n_gx = self.grid_xs.len();
        let n_gy = self.grid_ys.len();
        let grid: Vec<(f64, f64)> = (0..n_gx * n_gy).map(|i| self.estimate_at(i)).collect();
        let stride = self.config.stride as f64;
        let mut vectors = vec![(0.0, 0.0); self.width * self.height];
        for y in 0..self.height {
            let gy = y as f64 / stride;
            let y0 = (gy.floor() as usize).min(n_gy - 1);
            let y1 = (y0 + 1).min(n_gy - 1);
            let fy = (gy - y0 as f64).clamp(0.0, 1.0);
            for x in 0..self.width {
                let gx = x as f64 / stride;
                let x0 = (gx.floor() as usize).min(n_gx - 1);
                let x1 = (x0 + 1).min(n_gx - 1);
                let fx = (gx - x0 as f64).clamp(0.0, 1.0);
                let a = grid[y0 * n_gx + x0];
                let b = grid[y0 * n_gx + x1];
                let c = grid[y1 * n_gx + x0];
                let d = grid[y1 * n_gx + x1];
                vectors[y * self.width + x] = (
                    a.0 * (1.0 - fx) * (1.0 - fy)
                        + b.0 * fx * (1.0 - fy)
                        + c.0 * (1.0 - fx) * fy
                        + d.0 * fx * fy,
                    a.1 * (1.0 - fx) * (1.0 - fy)
                        + b.1 * fx * (1.0 - fy)
                        + c.1 * (1.0 - fx) * fy
                        + d.1 * fx * fy,
                );
            }
        }
        MotionField {
            width: self.width,
            height: self.height,
            stride: self.config.stride,
            vectors,
        }
    }
}

/// Batch helper: fold a whole frame sequence through one estimator.
pub fn estimate_motion(
    frames: &[FrameView<'_>],
    config: MotionConfig,
) -> Result<MotionField> {
    if frames.len() < 2 {
        return Err(Error::invalid("motion estimation needs at least two frames"));
    }
    let mut est = MotionEstimator::new(frames[0].width, frames[0].height, config)?;
    for pair in frames.windows(2) {
        est.observe(pair[0], pair[1])?;
    }
    Ok(est.field())
}
