//! The hierarchical partitioning forecaster and its reference competitor.
//!
//! Forecasts are assembled bottom-up along the routing path of the incoming
//! feature vector: the leaf contributes its linear learner's prediction, and
//! every divisible ancestor blends its own embedded linear prediction `u`
//! with the value `v` bubbling up from below using a two-expert switching
//! mixture, `h = (β₁u + β₂v)/(β₁+β₂)`. Learning is local: after a round,
//! only states on the routing path have changed, and every update consumes
//! the pre-update forecasts of that same round.
//!
//! Each segment keeps its own round clock, so its switching rate `α = 1/(t+1)`
//! counts only the rounds that actually reached it; regret accounting is per
//! segment. A global-clock variant is available for comparison.
//!
//! Routing may look at a dedicated location key instead of the regression
//! features (e.g. image coordinates route while patch contents regress);
//! when no key is given the feature vector itself routes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ftal::{FtalConfig, FtalState, ParameterSet};
use crate::losses::LossFunction;
use crate::partition::{HierarchicalPartition, InducedPartition, SegmentId};
use crate::switching::{RateSchedule, SwitchingState};
use crate::{Error, Result};

/// One online round: regression features, an optional routing key, and the
/// revealed loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc: Option<Vec<f64>>,
    pub loss: LossFunction,
}

impl Round {
    pub fn new(x: Vec<f64>, loss: LossFunction) -> Self {
        Round { x, loc: None, loss }
    }

    pub fn with_loc(mut self, loc: Vec<f64>) -> Self {
        self.loc = Some(loc);
        self
    }

    /// The vector that drives routing.
    pub fn routing_key(&self) -> &[f64] {
        self.loc.as_deref().unwrap_or(&self.x)
    }
}

/// Learner state of a divisible segment: an embedded linear learner plus the
/// two-expert switch over (own prediction, child prediction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivisibleLearnerState {
    pub ftal: FtalState,
    pub switch: SwitchingState,
}

/// Per-segment forecast values of one round, in path order (root first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub segment: SegmentId,
    /// Blended forecast h^S of this segment.
    pub h: f64,
    /// Embedded linear prediction u of a divisible segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
}

/// Shared learner parameters for every segment of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpfConfig {
    pub n: usize,
    pub w_set: ParameterSet,
    pub gamma: f64,
    /// Exp-concavity constant used by the switching mixtures.
    pub eta: f64,
    #[serde(default)]
    pub g_bound: Option<f64>,
    #[serde(default)]
    pub strict_paper_indexing: bool,
    /// Advance every switch on the model's global round counter instead of
    /// the segment-local clock.
    #[serde(default)]
    pub global_switch_clock: bool,
}

impl HpfConfig {
    pub fn new(n: usize, w_set: ParameterSet, gamma: f64, eta: f64) -> Self {
        HpfConfig {
            n,
            w_set,
            gamma,
            eta,
            g_bound: None,
            strict_paper_indexing: false,
            global_switch_clock: false,
        }
    }

    fn ftal_config(&self) -> FtalConfig {
        let mut cfg = FtalConfig::new(self.w_set.clone(), self.gamma)
            .with_strict_paper_indexing(self.strict_paper_indexing);
        if let Some(g) = self.g_bound {
            cfg = cfg.with_g_bound(g);
        }
        cfg
    }
}

/// Hierarchical partitioning forecaster with per-segment learner states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HpfModel {
    partition: HierarchicalPartition,
    divisible: BTreeMap<SegmentId, DivisibleLearnerState>,
    indivisible: BTreeMap<SegmentId, FtalState>,
    config: HpfConfig,
    rounds_seen: u64,
}

impl HpfModel {
    pub fn new(partition: HierarchicalPartition, config: HpfConfig) -> Result<Self> {
        let ftal_cfg = config.ftal_config();
        let mut divisible = BTreeMap::new();
        let mut indivisible = BTreeMap::new();
        for seg in partition.segments() {
            if seg.is_divisible() {
                divisible.insert(
                    seg.id,
                    DivisibleLearnerState {
                        ftal: FtalState::init(config.n, ftal_cfg.clone())?,
                        switch: SwitchingState::init(2, config.eta, RateSchedule::Harmonic)?,
                    },
                );
            } else {
                indivisible.insert(seg.id, FtalState::init(config.n, ftal_cfg.clone())?);
            }
        }
        Ok(HpfModel {
            partition,
            divisible,
            indivisible,
            config,
            rounds_seen: 0,
        })
    }

    pub fn partition(&self) -> &HierarchicalPartition {
        &self.partition
    }

    pub fn config(&self) -> &HpfConfig {
        &self.config
    }

    pub fn rounds_seen(&self) -> u64 {
        self.rounds_seen
    }

    pub fn divisible_state(&self, id: SegmentId) -> Option<&DivisibleLearnerState> {
        self.divisible.get(&id)
    }

    pub fn divisible_state_mut(&mut self, id: SegmentId) -> Option<&mut DivisibleLearnerState> {
        self.divisible.get_mut(&id)
    }

    pub fn indivisible_state(&self, id: SegmentId) -> Option<&FtalState> {
        self.indivisible.get(&id)
    }

    /// Canonical snapshot of one segment's state; bit-identical states give
    /// identical strings (locality checks compare these).
    pub fn segment_snapshot(&self, id: SegmentId) -> String {
        if let Some(s) = self.divisible.get(&id) {
            serde_json::to_string(s).expect("state serialization cannot fail")
        } else if let Some(s) = self.indivisible.get(&id) {
            serde_json::to_string(s).expect("state serialization cannot fail")
        } else {
            String::new()
        }
    }

    /// Forecast for features `x` routed by `loc`, plus the per-segment trace
    /// (root first; the returned value is the root entry's `h`).
    pub fn predict(&self, loc: &[f64], x: &[f64]) -> Result<(f64, Vec<TraceEntry>)> {
        let path = self.partition.route(loc)?;
        let trace = self.trace_along(&path, x)?;
        Ok((trace[0].h, trace))
    }

    /// Convenience for models routed by the feature vector itself.
    pub fn predict_features(&self, x: &[f64]) -> Result<(f64, Vec<TraceEntry>)> {
        self.predict(x, x)
    }

    fn trace_along(&self, path: &[SegmentId], x: &[f64]) -> Result<Vec<TraceEntry>> {
        let mut entries = vec![
            TraceEntry {
                segment: 0,
                h: 0.0,
                base: None
            };
            path.len()
        ];
        // Bottom-up: leaf value first, then blend at each divisible ancestor.
        let leaf = *path.last().expect("routing path is never empty");
        let leaf_state = self
            .indivisible
            .get(&leaf)
            .ok_or_else(|| Error::invalid(format!("no learner for leaf segment {leaf}")))?;
        let mut child_h = leaf_state.predict(x)?;
        let last = path.len() - 1;
        entries[last] = TraceEntry {
            segment: leaf,
            h: child_h,
            base: None,
        };
        for i in (0..last).rev() {
            let seg = path[i];
            let state = self
                .divisible
                .get(&seg)
                .ok_or_else(|| Error::invalid(format!("no learner for segment {seg}")))?;
            let u = state.ftal.predict(x)?;
            let h = state.switch.combine(&[u, child_h])?;
            entries[i] = TraceEntry {
                segment: seg,
                h,
                base: Some(u),
            };
            child_h = h;
        }
        Ok(entries)
    }

    /// One full online round: forecast, then update every segment on the
    /// routing path with that same pre-update trace. Off-path segments are
    /// untouched.
    pub fn step(&mut self, round: &Round) -> Result<RoundRecord> {
        if round.x.len() != self.config.n {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.config.n,
                round.x.len()
            )));
        }
        let path = self.partition.route(round.routing_key())?;
        let trace = self.trace_along(&path, &round.x)?;
        let global_alpha = RateSchedule::Harmonic.alpha(self.rounds_seen + 1);

        let leaf = *path.last().expect("routing path is never empty");
        self.indivisible
            .get_mut(&leaf)
            .expect("trace construction verified the leaf state")
            .update(&round.loss, &round.x)?;

        for i in 0..path.len() - 1 {
            let seg = path[i];
            let u = trace[i].base.expect("divisible entries carry a base");
            let v = trace[i + 1].h;
            let loss_u = round.loss.eval(u)?;
            let loss_v = round.loss.eval(v)?;
            let state = self
                .divisible
                .get_mut(&seg)
                .expect("trace construction verified divisible states");
            state.ftal.update(&round.loss, &round.x)?;
            if self.config.global_switch_clock {
                state.switch.update_with_alpha(&[loss_u, loss_v], global_alpha)?;
            } else {
                state.switch.update(&[loss_u, loss_v])?;
            }
        }
        self.rounds_seen += 1;
        Ok(RoundRecord {
            round: round.clone(),
            y: trace[0].h,
            trace,
        })
    }

    /// Model checkpoint as structured text; loading reproduces subsequent
    /// predictions bit-exactly on replay.
    pub fn checkpoint_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let model: HpfModel =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        // Structural sanity: one state of the right kind per segment.
        for seg in model.partition.segments() {
            let ok = if seg.is_divisible() {
                model.divisible.contains_key(&seg.id) && !model.indivisible.contains_key(&seg.id)
            } else {
                model.indivisible.contains_key(&seg.id) && !model.divisible.contains_key(&seg.id)
            };
            if !ok {
                return Err(Error::Parse(format!(
                    "checkpoint missing or misplacing state for segment {}",
                    seg.id
                )));
            }
        }
        if model.divisible.len() + model.indivisible.len() != model.partition.len() {
            return Err(Error::Parse("checkpoint carries orphan states".into()));
        }
        Ok(model)
    }
}

/// Run a model over a stream, collecting the full run log.
pub fn run_online(model: &mut HpfModel, rounds: &[Round]) -> Result<RunLog> {
    let mut records = Vec::with_capacity(rounds.len());
    for round in rounds {
        records.push(model.step(round)?);
    }
    Ok(RunLog {
        config: model.config().clone(),
        records,
    })
}

/// Everything needed to audit a finished run: the learner parameters and,
/// per round, the input, the forecast and the per-segment trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub config: HpfConfig,
    pub records: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: Round,
    pub y: f64,
    pub trace: Vec<TraceEntry>,
}

impl RunLog {
    /// Total forecaster loss `Σ_t ℓ_t(y_t)`.
    pub fn total_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for r in &self.records {
            total += r.round.loss.eval(r.y)?;
        }
        Ok(total)
    }

    /// Accumulated per-segment forecast losses `L^S_T = Σ_{t: x_t∈S} ℓ_t(h^S_t)`
    /// and activity counts `n_S`.
    pub fn per_segment_losses(&self) -> Result<BTreeMap<SegmentId, (f64, u64)>> {
        let mut acc: BTreeMap<SegmentId, (f64, u64)> = BTreeMap::new();
        for r in &self.records {
            for e in &r.trace {
                let entry = acc.entry(e.segment).or_insert((0.0, 0));
                entry.0 += r.round.loss.eval(e.h)?;
                entry.1 += 1;
            }
        }
        Ok(acc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run log serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Constant partitioning forecaster: fixed weights on a fixed induced
/// partition. This is the competitor class, not a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpfModel {
    pub p: InducedPartition,
    pub weights: BTreeMap<SegmentId, Vec<f64>>,
}

impl CpfModel {
    pub fn new(p: InducedPartition, weights: BTreeMap<SegmentId, Vec<f64>>) -> Result<Self> {
        if p.segment_ids.iter().any(|id| !weights.contains_key(id))
            || weights.keys().any(|id| !p.segment_ids.contains(id))
        {
            return Err(Error::invalid(
                "weights must be keyed exactly by the partition members",
            ));
        }
        Ok(CpfModel { p, weights })
    }

    /// `w_Sᵀx` for the unique member segment containing the routing key.
    pub fn predict(&self, h: &HierarchicalPartition, loc: &[f64], x: &[f64]) -> Result<f64> {
        let member = self
            .p
            .segment_ids
            .iter()
            .find(|&&id| h.segment(id).membership.contains(loc))
            .ok_or_else(|| Error::invalid(format!("no member segment contains {loc:?}")))?;
        Ok(crate::linalg::dot(&self.weights[member], x))
    }

    /// Total loss over a stream.
    pub fn total_loss(&self, h: &HierarchicalPartition, rounds: &[Round]) -> Result<f64> {
        let mut total = 0.0;
        for r in rounds {
            let y = self.predict(h, r.routing_key(), &r.x)?;
            total += r.loss.eval(y)?;
        }
        Ok(total)
    }
}

/// Certified loss budget vs a CPF on partition `P`:
/// `(A·|P| + B·C_{H,P})·(1 + log T)` with `A = 64n(1/η + GD)`, `B = 1/η`.
pub fn lhpf_regret_bound(
    n: usize,
    eta: f64,
    g: f64,
    d: f64,
    p_size: usize,
    c: usize,
    t: u64,
) -> f64 {
    let a = crate::ftal::ftal_regret_constant(n, eta, g, d);
    let b = 1.0 / eta;
    (a * p_size as f64 + b * c as f64) * (1.0 + (t as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::build_quadtree;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(n: usize) -> HpfConfig {
        HpfConfig::new(n, ParameterSet::ball(n, 1.0), 0.05, 0.5)
    }

    fn random_round(rng: &mut ChaCha8Rng, grid: f64) -> Round {
        let x = vec![rng.random_range(0.0..grid), rng.random_range(0.0..grid)];
        let target = rng.random_range(0.0..1.0);
        let loss = LossFunction::squared(target, -8.0, 8.0).unwrap();
        Round::new(x, loss)
    }

    #[test]
    fn regret_bound_values() {
        let b = lhpf_regret_bound(2, 0.5, 1.0, 2.0, 4, 3, 1000);
        let expected = (512.0 * 4.0 + 2.0 * 3.0) * (1.0 + 1000f64.ln());
        assert!((b - expected).abs() < 1e-9);
        assert!((b - 16242.6).abs() < 0.1);

        // |P| = 1, C = 0 collapses to the single-learner budget.
        let single = lhpf_regret_bound(2, 0.5, 1.0, 2.0, 1, 0, 1000);
        let a_only = 512.0 * (1.0 + 1000f64.ln());
        assert!((single - a_only).abs() < 1e-9);
    }

    #[test]
    fn trace_has_path_length_and_initial_blend() {
        let h = build_quadtree(4, 4, 2).unwrap();
        let model = HpfModel::new(h, config(2)).unwrap();
        let x = [0.5, 0.5];
        let (y, trace) = model.predict_features(&x).unwrap();
        assert_eq!(trace.len(), 2);
        // Fresh model: u_root = u_leaf = mean(x), β = (½, ½) ⇒ y = mean(x).
        let mean = (x[0] + x[1]) / 2.0;
        assert!((y - mean).abs() < 1e-12);
        assert!((trace[0].base.unwrap() - mean).abs() < 1e-15);
        // Blend stays within [min(u, v), max(u, v)].
        let (u, v) = (trace[0].base.unwrap(), trace[1].h);
        assert!(y >= u.min(v) - 1e-15 && y <= u.max(v) + 1e-15);
    }

    #[test]
    fn degenerate_hierarchy_equals_standalone_learner() {
        let h = build_quadtree(4, 4, 1).unwrap();
        let mut model = HpfModel::new(h, config(2)).unwrap();
        let mut standalone = FtalState::init(
            2,
            FtalConfig::new(ParameterSet::ball(2, 1.0), 0.05),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let round = random_round(&mut rng, 4.0);
            let y_model = model.predict_features(&round.x).unwrap().0;
            let y_alone = standalone.predict(&round.x).unwrap();
            assert_eq!(y_model.to_bits(), y_alone.to_bits());
            model.step(&round).unwrap();
            standalone.update(&round.loss, &round.x).unwrap();
        }
    }

    #[test]
    fn off_path_segments_stay_bit_identical() {
        let h = build_quadtree(4, 4, 2).unwrap();
        let mut model = HpfModel::new(h, config(2)).unwrap();
        let quadrant_points = [[0.5, 0.5], [2.5, 0.5], [0.5, 2.5], [2.5, 2.5]];
        let leaf_of: Vec<SegmentId> = quadrant_points
            .iter()
            .map(|p| *model.partition().route(p).unwrap().last().unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for round_idx in 0..40 {
            let active = round_idx % 2; // alternate two quadrants
            let before: Vec<String> = leaf_of
                .iter()
                .map(|&id| model.segment_snapshot(id))
                .collect();
            let mut round = random_round(&mut rng, 4.0);
            round.x = quadrant_points[active].to_vec();
            model.step(&round).unwrap();
            for (k, &leaf) in leaf_of.iter().enumerate() {
                if k != active {
                    assert_eq!(before[k], model.segment_snapshot(leaf));
                }
            }
        }
    }

    #[test]
    fn forced_pass_through_returns_child_value() {
        let h = build_quadtree(4, 4, 2).unwrap();
        let mut model = HpfModel::new(h, config(2)).unwrap();
        model
            .divisible_state_mut(0)
            .unwrap()
            .switch
            .set_weights(vec![0.0, 1.0])
            .unwrap();
        let x = [1.3, 0.2];
        let (y, trace) = model.predict_features(&x).unwrap();
        assert_eq!(y.to_bits(), trace[1].h.to_bits());
    }

    #[test]
    fn divisible_beta_matches_hand_update() {
        let h = build_quadtree(4, 4, 2).unwrap();
        let mut model = HpfModel::new(h, config(2)).unwrap();
        let round = Round::new(
            vec![0.5, 0.5],
            LossFunction::squared(0.7, -8.0, 8.0).unwrap(),
        );
        let (_, trace) = model.predict_features(&round.x).unwrap();
        let u = trace[0].base.unwrap();
        let v = trace[1].h;
        let eta = 0.5;
        let lu = (u - 0.7) * (u - 0.7);
        let lv = (v - 0.7) * (v - 0.7);
        model.step(&round).unwrap();
        // Appendix update at m = 2 with α₁ = ½ and β₀ = (½, ½).
        let alpha = 0.5;
        let gu = 0.5 * (-eta * lu).exp();
        let gv = 0.5 * (-eta * lv).exp();
        let expected = [
            (1.0 - alpha) * gu + alpha * gv,
            (1.0 - alpha) * gv + alpha * gu,
        ];
        let beta = model.divisible_state(0).unwrap().switch.beta();
        assert!((beta[0] - expected[0]).abs() < 1e-15);
        assert!((beta[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn cpf_predicts_per_segment() {
        let h = build_quadtree(4, 4, 2).unwrap();
        let p = InducedPartition::new(vec![1, 2, 3, 4]);
        let mut weights = BTreeMap::new();
        weights.insert(1, vec![0.0, 0.0]);
        weights.insert(2, vec![1.0, 0.0]);
        weights.insert(3, vec![0.0, 1.0]);
        weights.insert(4, vec![0.5, 0.5]);
        let cpf = CpfModel::new(p, weights).unwrap();
        assert_eq!(cpf.predict(&h, &[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(cpf.predict(&h, &[2.5, 0.5], &[2.5, 0.5]).unwrap(), 2.5);
        assert!(cpf.predict(&h, &[9.0, 0.5], &[9.0, 0.5]).is_err());

        // Total loss decomposes as Σ_S Σ_{t: x_t∈S} ℓ_t(w_Sᵀx_t).
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rounds: Vec<Round> = (0..50).map(|_| random_round(&mut rng, 4.0)).collect();
        let total = cpf.total_loss(&h, &rounds).unwrap();
        let mut by_segment = 0.0;
        for &seg in &cpf.p.segment_ids {
            for r in &rounds {
                if h.segment(seg).membership.contains(r.routing_key()) {
                    let y = crate::linalg::dot(&cpf.weights[&seg], &r.x);
                    by_segment += r.loss.eval(y).unwrap();
                }
            }
        }
        assert!((total - by_segment).abs() < 1e-12);
    }

    #[test]
    fn cpf_rejects_mismatched_weights() {
        let p = InducedPartition::new(vec![1, 2]);
        let mut weights = BTreeMap::new();
        weights.insert(1, vec![0.0, 0.0]);
        assert!(CpfModel::new(p, weights).is_err());
    }

    #[test]
    fn checkpoint_replay_is_bit_exact() {
        let h = build_quadtree(8, 8, 3).unwrap();
        let mut model = HpfModel::new(h, config(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let round = random_round(&mut rng, 8.0);
            model.step(&round).unwrap();
        }
        let checkpoint = model.checkpoint_json();
        let mut restored = HpfModel::from_checkpoint_json(&checkpoint).unwrap();
        for _ in 0..60 {
            let round = random_round(&mut rng, 8.0);
            let y1 = model.predict_features(&round.x).unwrap().0;
            let y2 = restored.predict_features(&round.x).unwrap().0;
            assert_eq!(y1.to_bits(), y2.to_bits());
            model.step(&round).unwrap();
            restored.step(&round).unwrap();
        }
        assert_eq!(model.checkpoint_json(), restored.checkpoint_json());
    }

    #[test]
    fn run_log_replays_per_segment_losses() {
        let h = build_quadtree(4, 4, 2).unwrap();
        let mut model = HpfModel::new(h, config(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rounds: Vec<Round> = (0..30).map(|_| random_round(&mut rng, 4.0)).collect();
        let log = run_online(&mut model, &rounds).unwrap();
        let text = log.to_json();
        let back = RunLog::from_json(&text).unwrap();
        assert_eq!(back.total_loss().unwrap(), log.total_loss().unwrap());
        let per_seg = back.per_segment_losses().unwrap();
        // Root sees every round.
        assert_eq!(per_seg[&0].1, 30);
    }
}
