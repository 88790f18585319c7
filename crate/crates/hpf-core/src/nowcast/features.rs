//! Motion-path feature construction.
//!
//! To predict a pixel `u` at time `t+H`, the motion field is integrated
//! backwards `H` steps to the source location `u_H` ("where the pixel will
//! come from"), and the context is the circular radius-7 patch around `u_H`
//! at time `t`, rotated so that the displacement direction maps onto the +x
//! axis. The rotation makes the patch layout invariant to the orientation of
//! `u_H` relative to `u`; sub-pixel reads are bilinear with clamp padding.

use super::motion::MotionField;
use super::raster::FrameView;

/// Context disk radius; a radius-7 disk holds 149 lattice points.
pub const DISK_RADIUS: i32 = 7;

/// Displacements shorter than this use rotation angle 0.
pub const MIN_ROTATION_DISPLACEMENT: f64 = 0.5;

/// Integer offsets of the context disk, row-major over the disk mask.
pub fn disk_offsets(radius: i32) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= radius * radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// One forecasting context: the rotated patch read-out plus a bias entry.
#[derive(Debug, Clone, PartialEq)]
pub struct NowcastFeature {
    /// 149 patch values followed by the constant 1 bias (length 150).
    pub context: Vec<f64>,
    pub source_location: (f64, f64),
    pub horizon: usize,
}

impl NowcastFeature {
    pub const LEN: usize = 150;
}

/// Backward path `u_0 = u, u_{k+1} = u_k − d(u_k)` with the field sampled
/// bilinearly at real coordinates and every point clamped to the frame.
pub fn accumulate_path(field: &MotionField, u: (f64, f64), steps: usize) -> Vec<(f64, f64)> {
    let mut path = Vec::with_capacity(steps + 1);
    let clamp = |p: (f64, f64)| {
        (
            p.0.clamp(0.0, field.width as f64 - 1.0),
            p.1.clamp(0.0, field.height as f64 - 1.0),
        )
    };
    let mut cur = clamp(u);
    path.push(cur);
    for _ in 0..steps {
        let d = field.sample(cur.0, cur.1);
        cur = clamp((cur.0 - d.0, cur.1 - d.1));
        path.push(cur);
    }
    path
}

/// Read the rotated radius-7 context around `source` (= `u_H`) for a pixel
/// at `u`, appending the bias entry.
pub fn build_feature(
    frame: FrameView<'_>,
    source: (f64, f64),
    u: (f64, f64),
    horizon: usize,
) -> NowcastFeature {
    let disp = (source.0 - u.0, source.1 - u.1);
    let mag = (disp.0 * disp.0 + disp.1 * disp.1).sqrt();
    let theta = if mag < MIN_ROTATION_DISPLACEMENT {
        0.0
    } else {
        disp.1.atan2(disp.0)
    };
    let (sin, cos) = theta.sin_cos();
    let offsets = disk_offsets(DISK_RADIUS);
    let mut context = Vec::with_capacity(offsets.len() + 1);
    for &(ox, oy) in &offsets {
        // Sampling grid rotated by +θ reads the patch content rotated by −θ.
        let rx = cos * ox as f64 - sin * oy as f64;
        let ry = sin * ox as f64 + cos * oy as f64;
        context.push(frame.sample(source.0 + rx, source.1 + ry));
    }
    context.push(1.0);
    NowcastFeature {
        context,
        source_location: source,
        horizon,
    }
}
