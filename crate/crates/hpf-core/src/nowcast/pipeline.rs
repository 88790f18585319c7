//! End-to-end nowcasting runs: motion estimation, feature construction,
//! online forecasting and verification against persistence.
//!
//! The protocol is honestly online with delayed feedback: at frame `t` the
//! forecaster issues one prediction per evaluated pixel and horizon `H`
//! using only data through `t`; when frame `t+H` arrives, the stored
//! prediction is scored and the learner is updated with the revealed target.
//! Forecasters route by pixel coordinates over a quad-tree of the image
//! while regressing on the rotated motion-path context patch.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::features::{accumulate_path, build_feature, NowcastFeature, DISK_RADIUS};
use super::metrics::{CsiAccumulator, MseAccumulator};
use super::motion::{MotionConfig, MotionEstimator};
use super::raster::RasterSequence;
use crate::ftal::{ftal_gamma, ParameterSet};
use crate::hpf::{HpfConfig, HpfModel, Round};
use crate::losses::{LossFunction, LossKind};
use crate::partition::build_quadtree;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NowcastConfig {
    /// Forecast horizons in frames.
    pub horizons: Vec<usize>,
    /// Predictions issued at frames ≤ warmup are excluded from metrics.
    pub warmup_frames: usize,
    /// Interior margin (pixels) excluded from evaluation.
    pub margin: usize,
    /// Spacing of evaluated pixels.
    pub eval_stride: usize,
    pub quadtree_levels: u32,
    pub motion: MotionConfig,
    /// mm/hr divisor applied to learner inputs and targets.
    pub value_scale: f64,
    /// Radius of the weight ball.
    pub w_radius: f64,
    /// Exp-concavity constant of the (scaled) squared loss.
    pub eta: f64,
    /// Learning rate; `None` takes the certified choice ½·min{1/(4GD), η}
    /// with `G` bounded from the value scale.
    pub gamma: Option<f64>,
    /// CSI thresholds in mm/hr.
    pub thresholds: [f64; 4],
}

impl Default for NowcastConfig {
    fn default() -> Self {
        NowcastConfig {
            horizons: vec![1, 2, 3],
            warmup_frames: 50,
            margin: 40,
            eval_stride: 8,
            quadtree_levels: 4,
            motion: MotionConfig::default(),
            value_scale: 12.0,
            w_radius: 4.0,
            eta: 0.5,
            gamma: None,
            thresholds: [1.0, 2.0, 4.0, 8.0],
        }
    }
}

impl NowcastConfig {
    /// Worst-case gradient bound implied by the value scale: scaled inputs
    /// sit in [0, 1], so `‖x‖ ≤ √150` and deviations stay within
    /// `1 + w_radius·√150`.
    pub fn gradient_bound_estimate(&self) -> f64 {
        let x_norm = (NowcastFeature::LEN as f64).sqrt();
        2.0 * (1.0 + self.w_radius * x_norm) * x_norm
    }

    pub fn resolved_gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| {
            ftal_gamma(self.eta, self.gradient_bound_estimate(), 2.0 * self.w_radius)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lhpf,
    Persistence,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Lhpf => write!(f, "lhpf"),
            ModelKind::Persistence => write!(f, "persistence"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub horizon_frames: usize,
    pub horizon_minutes: f64,
    pub model: ModelKind,
    pub mse: f64,
    /// CSI at the four configured thresholds.
    pub csi: [f64; 4],
    pub scored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub target_frame: usize,
    pub horizon_minutes: f64,
    pub model: ModelKind,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NowcastReport {
    pub rows: Vec<MetricsRow>,
    pub curves: Vec<CurvePoint>,
}

/// Metrics table as delimiter-separated text.
pub fn metrics_to_csv(report: &NowcastReport) -> String {
    let mut out = String::from("horizon_min,model,mse,csi1,csi2,csi4,csi8\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.horizon_minutes, r.model, r.mse, r.csi[0], r.csi[1], r.csi[2], r.csi[3]
        ));
    }
    out
}

/// Per-target-frame loss curves as delimiter-separated text.
pub fn curves_to_csv(report: &NowcastReport) -> String {
    let mut out = String::from("target_frame,horizon_min,model,mse\n");
    for c in &report.curves {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.target_frame, c.horizon_minutes, c.model, c.mse
        ));
    }
    out
}

struct Pending {
    issue_frame: usize,
    px: usize,
    py: usize,
    x_scaled: Vec<f64>,
    lhpf_mm: f64,
    persist_mm: f64,
}

struct HorizonTrack {
    horizon: usize,
    model: HpfModel,
    pending: VecDeque<(usize, Pending)>, // (target_frame, prediction)
    lhpf_mse: MseAccumulator,
    persist_mse: MseAccumulator,
    lhpf_csi: [CsiAccumulator; 4],
    persist_csi: [CsiAccumulator; 4],
    frame_lhpf: Vec<(usize, MseAccumulator)>,
    frame_persist: Vec<(usize, MseAccumulator)>,
}

/// Run the forecaster and the persistence baseline over a raster sequence.
pub fn run_nowcast(seq: &RasterSequence, cfg: &NowcastConfig) -> Result<NowcastReport> {
    if cfg.horizons.is_empty() {
        return Err(Error::invalid("need at least one horizon"));
    }
    if cfg.horizons.iter().any(|&h| h == 0) {
        return Err(Error::invalid("horizons must be >= 1 frame"));
    }
    let max_h = *cfg.horizons.iter().max().expect("non-empty");
    if seq.num_frames() < cfg.warmup_frames + max_h + 2 {
        return Err(Error::invalid(format!(
            "{} frames are insufficient for warm-up {} plus horizon {max_h}",
            seq.num_frames(),
            cfg.warmup_frames
        )));
    }
    if cfg.margin < (DISK_RADIUS + 1) as usize {
        return Err(Error::invalid(format!(
            "margin must cover the context disk (>= {})",
            DISK_RADIUS + 1
        )));
    }
    if cfg.margin * 2 >= seq.width || cfg.margin * 2 >= seq.height {
        return Err(Error::invalid("margin leaves no interior to evaluate"));
    }
    if cfg.eval_stride == 0 {
        return Err(Error::invalid("eval stride must be positive"));
    }
    if !(cfg.value_scale > 0.0) {
        return Err(Error::invalid("value scale must be positive"));
    }

    let eval_xs: Vec<usize> = (cfg.margin..seq.width - cfg.margin)
        .step_by(cfg.eval_stride)
        .collect();
    let eval_ys: Vec<usize> = (cfg.margin..seq.height - cfg.margin)
        .step_by(cfg.eval_stride)
        .collect();

    let gamma = cfg.resolved_gamma();
    let partition = build_quadtree(seq.width as u32, seq.height as u32, cfg.quadtree_levels)?;
    let learner = HpfConfig::new(
        NowcastFeature::LEN,
        ParameterSet::ball(NowcastFeature::LEN, cfg.w_radius),
        gamma,
        cfg.eta,
    );
    let mut tracks: Vec<HorizonTrack> = cfg
        .horizons
        .iter()
        .map(|&h| {
            Ok(HorizonTrack {
                horizon: h,
                model: HpfModel::new(partition.clone(), learner.clone())?,
                pending: VecDeque::new(),
                lhpf_mse: MseAccumulator::default(),
                persist_mse: MseAccumulator::default(),
                lhpf_csi: Default::default(),
                persist_csi: Default::default(),
                frame_lhpf: Vec::new(),
                frame_persist: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut estimator = MotionEstimator::new(seq.width, seq.height, cfg.motion.clone())?;
    let last = seq.num_frames() - 1;

    for t in 1..seq.num_frames() {
        estimator.observe(seq.frame(t - 1), seq.frame(t))?;
        let frame_t = seq.frame(t);

        // Mature predictions whose target frame just arrived.
        for track in &mut tracks {
            let mut frame_lhpf = MseAccumulator::default();
            let mut frame_persist = MseAccumulator::default();
            while track.pending.front().is_some_and(|(tf, _)| *tf == t) {
                let (_, p) = track.pending.pop_front().expect("front checked");
                let target = frame_t.at(p.px as i64, p.py as i64);
                let loss = LossFunction {
                    kind: LossKind::Squared {
                        target: target / cfg.value_scale,
                        lo: 0.0,
                        hi: 1.0,
                    },
                    eta: cfg.eta,
                };
                let round = Round::new(p.x_scaled, loss).with_loc(vec![p.px as f64, p.py as f64]);
                track.model.step(&round)?;
                if p.issue_frame > cfg.warmup_frames {
                    track.lhpf_mse.add(p.lhpf_mm, target);
                    track.persist_mse.add(p.persist_mm, target);
                    frame_lhpf.add(p.lhpf_mm, target);
                    frame_persist.add(p.persist_mm, target);
                    for (k, thr) in [1.0, 2.0, 4.0, 8.0].iter().enumerate() {
                        let thr = cfg.thresholds.get(k).copied().unwrap_or(*thr);
                        track.lhpf_csi[k].add(p.lhpf_mm, target, thr);
                        track.persist_csi[k].add(p.persist_mm, target, thr);
                    }
                }
            }
            if frame_lhpf.count > 0 {
                track.frame_lhpf.push((t, frame_lhpf));
                track.frame_persist.push((t, frame_persist));
            }
        }

        // Issue new predictions from frame t.
        let field = estimator.field();
        for track in &mut tracks {
            let h = track.horizon;
            if t + h > last {
                continue;
            }
            for &py in &eval_ys {
                for &px in &eval_xs {
                    let u = (px as f64, py as f64);
                    let path = accumulate_path(&field, u, h);
                    let source = *path.last().expect("path is never empty");
                    let feature = build_feature(frame_t, source, u, h);
                    let mut x_scaled: Vec<f64> = feature
                        .context
                        .iter()
                        .map(|v| v / cfg.value_scale)
                        .collect();
                    x_scaled[NowcastFeature::LEN - 1] = 1.0; // bias stays 1
                    let loc = vec![px as f64, py as f64];
                    let (y_scaled, _) = track.model.predict(&loc, &x_scaled)?;
                    track.pending.push_back((
                        t + h,
                        Pending {
                            issue_frame: t,
                            px,
                            py,
                            x_scaled,
                            lhpf_mm: y_scaled * cfg.value_scale,
                            persist_mm: frame_t.at(px as i64, py as i64),
                        },
                    ));
                }
            }
        }
    }

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for track in &tracks {
        let minutes = track.horizon as f64 * seq.dt_minutes;
        rows.push(MetricsRow {
            horizon_frames: track.horizon,
            horizon_minutes: minutes,
            model: ModelKind::Lhpf,
            mse: track.lhpf_mse.value(),
            csi: [
                track.lhpf_csi[0].value(),
                track.lhpf_csi[1].value(),
                track.lhpf_csi[2].value(),
                track.lhpf_csi[3].value(),
            ],
            scored: track.lhpf_mse.count,
        });
        rows.push(MetricsRow {
            horizon_frames: track.horizon,
            horizon_minutes: minutes,
            model: ModelKind::Persistence,
            mse: track.persist_mse.value(),
            csi: [
                track.persist_csi[0].value(),
                track.persist_csi[1].value(),
                track.persist_csi[2].value(),
                track.persist_csi[3].value(),
            ],
            scored: track.persist_mse.count,
        });
        for (t, acc) in &track.frame_lhpf {
            curves.push(CurvePoint {
                target_frame: *t,
                horizon_minutes: minutes,
                model: ModelKind::Lhpf,
                mse: acc.value(),
            });
        }
        for (t, acc) in &track.frame_persist {
            curves.push(CurvePoint {
                target_frame: *t,
                horizon_minutes: minutes,
                model: ModelKind::Persistence,
                mse: acc.value(),
            });
        }
    }
    Ok(NowcastReport { rows, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nowcast::synth::{synthesize_rasters, SynthConfig};

    fn small_cfg() -> NowcastConfig {
        NowcastConfig {
            horizons: vec![1],
            warmup_frames: 4,
            margin: 48,
            eval_stride: 32,
            quadtree_levels: 2,
            gamma: Some(0.5),
            ..NowcastConfig::default()
        }
    }

    #[test]
    fn persistence_is_perfect_on_static_sequences() {
        let synth = SynthConfig {
            velocity: (0.0, 0.0),
            frames: 10,
            blob_count: 20,
            seed: 5,
            ..SynthConfig::default()
        };
        let seq = synthesize_rasters(&synth).unwrap();
        let report = run_nowcast(&seq, &small_cfg()).unwrap();
        let p = report
            .rows
            .iter()
            .find(|r| r.model == ModelKind::Persistence)
            .unwrap();
        assert_eq!(p.mse, 0.0);
        assert_eq!(p.csi, [1.0, 1.0, 1.0, 1.0]);
        assert!(p.scored > 0);
        // Schema: one row per (horizon, model).
        assert_eq!(report.rows.len(), 2);
    }

    #[test]
    fn insufficient_frames_are_rejected() {
        let synth = SynthConfig {
            frames: 4,
            ..SynthConfig::default()
        };
        let seq = synthesize_rasters(&synth).unwrap();
        let cfg = NowcastConfig {
            warmup_frames: 10,
            ..small_cfg()
        };
        assert!(matches!(
            run_nowcast(&seq, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn csv_emission_has_expected_shape() {
        let synth = SynthConfig {
            velocity: (0.0, 0.0),
            frames: 10,
            blob_count: 5,
            seed: 6,
            ..SynthConfig::default()
        };
        let seq = synthesize_rasters(&synth).unwrap();
        let report = run_nowcast(&seq, &small_cfg()).unwrap();
        let csv = metrics_to_csv(&report);
        assert!(csv.starts_with("horizon_min,model,mse,csi1,csi2,csi4,csi8\n"));
        assert_eq!(csv.lines().count(), 1 + report.rows.len());
        let curves = curves_to_csv(&report);
        assert!(curves.starts_with("target_frame,horizon_min,model,mse\n"));
    }
}
