//! Prediction with expert advice under a switching prior.
//!
//! The forecaster keeps one non-negative weight `β^i` per expert, combines
//! expert predictions by β-weighted averaging, and updates
//!
//! ```text
//! β_t^i = (1−α_t)·β_{t−1}^i·e^(−ηℓ_t^i) + α_t/(m−1)·Σ_{j≠i} β_{t−1}^j·e^(−ηℓ_t^j),
//! ```
//!
//! which is exactly Bayesian mixing under a prior over expert-switching
//! sequences with per-round switching rate `α_t`. For η-exp-concave losses
//! the accumulated loss is within `(1/η)[log m + |𝒯|log(m−1) + Σ_{t∈𝒯}
//! log(1/α_t) + Σ_{t∉𝒯} log(1/(1−α_t))]` of any switching sequence with
//! switch set `𝒯`.
//!
//! Weights decay like `e^(−η·loss)`, so long runs underflow `f64`. The state
//! therefore stores mantissas plus a shared log-scale and renormalizes when
//! the largest mantissa drops below `1e-250`; ratios (all the combine step
//! needs) are exact either way, and invariant checks read the log-domain
//! accessors.

use serde::{Deserialize, Serialize};

use crate::linalg::kahan_sum;
use crate::{Error, Result};

/// Mantissa threshold that triggers a rescale into `log_scale`.
const RESCALE_THRESHOLD: f64 = 1e-250;

/// Switching-rate schedule `t ↦ α_t ∈ (0, 1)`, `t` counted from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSchedule {
    /// `α_t = 1/(t+1)`; the choice behind the `(1/η)[1 + (n+1)log T]` bound.
    Harmonic,
    /// Constant rate in (0, 1).
    Constant { alpha: f64 },
    /// Explicit per-round rates; rounds past the end reuse the last entry.
    Table { alphas: Vec<f64> },
}

impl RateSchedule {
    pub fn alpha(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        match self {
            RateSchedule::Harmonic => 1.0 / (t as f64 + 1.0),
            RateSchedule::Constant { alpha } => *alpha,
            RateSchedule::Table { alphas } => {
                let idx = ((t - 1) as usize).min(alphas.len() - 1);
                alphas[idx]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            RateSchedule::Harmonic => true,
            RateSchedule::Constant { alpha } => *alpha > 0.0 && *alpha < 1.0,
            RateSchedule::Table { alphas } => {
                !alphas.is_empty() && alphas.iter().all(|a| *a > 0.0 && *a < 1.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("switching rates must lie in (0, 1)"))
        }
    }
}

/// Exponentiated switching weights over `m ≥ 2` experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingState {
    /// β_i = mantissa[i] · e^(log_scale)
    mantissa: Vec<f64>,
    log_scale: f64,
    eta: f64,
    schedule: RateSchedule,
    t: u64,
}

impl SwitchingState {
    /// Uniform initial weights `β_0^i = 1/m`.
    pub fn init(m: usize, eta: f64, schedule: RateSchedule) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(
                "switching needs m >= 2 experts (the update divides by m−1)",
            ));
        }
        if !(eta > 0.0) {
            return Err(Error::invalid(format!("eta must be > 0, got {eta}")));
        }
        schedule.validate()?;
        Ok(SwitchingState {
            mantissa: vec![1.0 / m as f64; m],
            log_scale: 0.0,
            eta,
            schedule,
            t: 0,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.mantissa.len()
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn schedule(&self) -> &RateSchedule {
        &self.schedule
    }

    /// True weights; underflows to 0 for long runs (use [`Self::beta_log`]).
    pub fn beta(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.mantissa.iter().map(|b| b * s).collect()
    }

    /// `ln β_i`, exact regardless of scale.
    pub fn beta_log(&self) -> Vec<f64> {
        self.mantissa
            .iter()
            .map(|b| b.ln() + self.log_scale)
            .collect()
    }

    /// Weights normalized to sum 1.
    pub fn beta_normalized(&self) -> Vec<f64> {
        let s: f64 = self.mantissa.iter().sum();
        self.mantissa.iter().map(|b| b / s).collect()
    }

    /// `ln Σ_j β_j`.
    pub fn total_weight_log(&self) -> f64 {
        let s: f64 = self.mantissa.iter().sum();
        s.ln() + self.log_scale
    }

    /// Overwrite the weights (diagnostics: forcing pass-through or pinned
    /// mixtures). Requires non-negative entries with positive sum.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.mantissa.len() {
            return Err(Error::invalid("weight count must match expert count"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::invalid(
                "weights must be non-negative with positive sum",
            ));
        }
        self.mantissa = weights;
        self.log_scale = 0.0;
        Ok(())
    }

    /// β-weighted average of expert predictions; state unchanged.
    pub fn combine(&self, predictions: &[f64]) -> Result<f64> {
        if predictions.len() != self.mantissa.len() {
            return Err(Error::invalid(format!(
                "expected {} predictions, got {}",
                self.mantissa.len(),
                predictions.len()
            )));
        }
        if predictions.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite expert prediction"));
        }
        let total: f64 = self.mantissa.iter().sum();
        Ok(self
            .mantissa
            .iter()
            .zip(predictions)
            .map(|(b, p)| b * p)
            .sum::<f64>()
            / total)
    }

    /// One update with the schedule's own `α_{t+1}`.
    pub fn update(&mut self, losses: &[f64]) -> Result<()> {
        let alpha = self.schedule.alpha(self.t + 1);
        self.update_with_alpha(losses, alpha)
    }

    /// One update with an externally supplied switching rate (used when the
    /// caller drives the clock, e.g. a global-round schedule).
    pub fn update_with_alpha(&mut self, losses: &[f64], alpha: f64) -> Result<()> {
        let m = self.mantissa.len();
        if losses.len() != m {
            return Err(Error::invalid(format!(
                "expected {m} losses, got {}",
                losses.len()
            )));
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("non-finite expert loss"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0,1), got {alpha}")));
        }
        // Shift losses by the round minimum: e^(−ηℓ) = e^(−ηℓ_min)·e^(−η(ℓ−ℓ_min)),
        // and the uniform e^(−ηℓ_min) factor moves into the log scale. Same
        // reals, no underflow however large one round's losses get.
        let loss_min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let g: Vec<f64> = self
            .mantissa
            .iter()
            .zip(losses)
            .map(|(b, l)| b * (-self.eta * (l - loss_min)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numeric(
                "all exponentiated weights underflowed in one round".into(),
            ));
        }
        self.log_scale -= self.eta * loss_min;
        let stay = 1.0 - alpha;
        let mix = alpha / (m as f64 - 1.0);
        for (b, gi) in self.mantissa.iter_mut().zip(&g) {
            *b = stay * gi + mix * (total - gi);
        }
        let max = self.mantissa.iter().cloned().fold(0.0f64, f64::max);
        if max < RESCALE_THRESHOLD {
            let shift = max.ln();
            for b in &mut self.mantissa {
                *b /= max;
            }
            self.log_scale += shift;
        }
        self.t += 1;
        Ok(())
    }
}

/// Prior weight of a switching sequence (experts 0-based):
/// `1/m` for the first symbol, then `×(1−α_{t−1})` per stay and
/// `×α_{t−1}/(m−1)` per switch.
pub fn switching_prior(seq: &[usize], m: usize, schedule: &RateSchedule) -> f64 {
    if seq.is_empty() {
        return 1.0;
    }
    let mut w = 1.0 / m as f64;
    for k in 1..seq.len() {
        let alpha = schedule.alpha(k as u64);
        w *= if seq[k] == seq[k - 1] {
            1.0 - alpha
        } else {
            alpha / (m as f64 - 1.0)
        };
    }
    w
}

/// Switch positions `𝒯 = {1 ≤ t < T : i_t ≠ i_{t+1}}` (1-based t).
pub fn switch_set(seq: &[usize]) -> Vec<u64> {
    seq.windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(k, _)| k as u64 + 1)
        .collect()
}

/// Regret budget of a switching sequence:
/// `(1/η)[log m + |𝒯|log(m−1) + Σ_{t∈𝒯}log(1/α_t) + Σ_{t∉𝒯,1≤t<T}log(1/(1−α_t))]`.
pub fn switching_bound(
    t_rounds: u64,
    m: usize,
    seq: &[usize],
    eta: f64,
    schedule: &RateSchedule,
) -> f64 {
    debug_assert_eq!(seq.len() as u64, t_rounds);
    let switches = switch_set(seq);
    let switch_cost = kahan_sum(switches.iter().map(|&t| -schedule.alpha(t).ln()));
    let mut is_switch = vec![false; t_rounds as usize + 1];
    for &t in &switches {
        is_switch[t as usize] = true;
    }
    let stay_cost = kahan_sum(
        (1..t_rounds)
            .filter(|&t| !is_switch[t as usize])
            .map(|t| -(1.0 - schedule.alpha(t)).ln()),
    );
    let m = m as f64;
    ((m.ln()) + switches.len() as f64 * (m - 1.0).ln() + switch_cost + stay_cost) / eta
}

/// Visit every sequence in `{0..m}^t` in lexicographic order (exhaustive
/// certification of small instances).
pub fn for_each_sequence(t: usize, m: usize, mut f: impl FnMut(&[usize])) {
    let mut cur = vec![0usize; t];
    loop {
        f(&cur);
        let mut k = t;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < m {
                break;
            }
            cur[k] = 0;
        }
    }
}

/// Minimum-loss switching sequence for a `T×m` loss matrix.
///
/// The competitor's loss `L(i_{1:T}) = Σ_t ℓ_t^{i_t}` carries no transition
/// cost, so the dynamic program's stage cost is separable; ties resolve to
/// the lexicographically smallest sequence.
pub fn best_switching_sequence(loss_matrix: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    if loss_matrix.is_empty() {
        return Err(Error::invalid("loss matrix needs T >= 1 rounds"));
    }
    let m = loss_matrix[0].len();
    if m == 0 || loss_matrix.iter().any(|row| row.len() != m) {
        return Err(Error::invalid("loss matrix rows must share one width"));
    }
    // Value-to-go per round; with no transition cost the optimum decomposes.
    let mut total = 0.0;
    let mut seq = Vec::with_capacity(loss_matrix.len());
    for row in loss_matrix {
        let mut best = 0usize;
        for (i, &l) in row.iter().enumerate() {
            if l < row[best] {
                best = i;
            }
        }
        total += row[best];
        seq.push(best);
    }
    Ok((seq, total))
}

/// Minimum achievable loss per exact switch count `k = 0..T−1`.
///
/// `result[k]` is `min { L(i_{1:T}) : |𝒯(i_{1:T})| = k }` (infinite when no
/// sequence attains exactly `k` switches, which only happens for m = 1).
pub fn best_loss_per_switch_count(loss_matrix: &[Vec<f64>]) -> Result<Vec<f64>> {
    if loss_matrix.is_empty() {
        return Err(Error::invalid("loss matrix needs T >= 1 rounds"));
    }
    let t = loss_matrix.len();
    let m = loss_matrix[0].len();
    if m < 2 || loss_matrix.iter().any(|row| row.len() != m) {
        return Err(Error::invalid("loss matrix needs m >= 2 consistent columns"));
    }
    // cur[k][i]: best loss over the processed prefix, ending at expert i with
    // exactly k switches.
    let mut cur: Vec<Vec<f64>> = vec![loss_matrix[0].clone()];
    for row in loss_matrix.iter().skip(1) {
        let mut next: Vec<Vec<f64>> = vec![vec![f64::INFINITY; m]; cur.len() + 1];
        for (k, level) in cur.iter().enumerate() {
            for i in 0..m {
                let stay = level[i] + row[i];
                if stay < next[k][i] {
                    next[k][i] = stay;
                }
                let from_other = level
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &v)| v)
                    .fold(f64::INFINITY, f64::min);
                let switched = from_other + row[i];
                if switched < next[k + 1][i] {
                    next[k + 1][i] = switched;
                }
            }
        }
        cur = next;
    }
    Ok((0..t)
        .map(|k| {
            cur.get(k)
                .map(|level| level.iter().cloned().fold(f64::INFINITY, f64::min))
                .unwrap_or(f64::INFINITY)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn harmonic() -> RateSchedule {
        RateSchedule::Harmonic
    }

    #[test]
    fn init_is_uniform_and_rejects_single_expert() {
        let s = SwitchingState::init(4, 1.0, harmonic()).unwrap();
        assert_eq!(s.beta(), vec![0.25; 4]);
        assert!(SwitchingState::init(1, 1.0, harmonic()).is_err());
    }

    #[test]
    fn combine_known_values() {
        let s = SwitchingState::init(2, 1.0, harmonic()).unwrap();
        assert_eq!(s.combine(&[0.0, 1.0]).unwrap(), 0.5);
        let mut s = s;
        s.mantissa = vec![3.0, 1.0];
        assert_eq!(s.combine(&[0.0, 1.0]).unwrap(), 0.25);
        // Convex combination: equal predictions pass through for any β.
        assert!((s.combine(&[0.7, 0.7]).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn update_matches_hand_computation() {
        // Equal losses preserve symmetry.
        let mut s = SwitchingState::init(2, 1.0, harmonic()).unwrap();
        s.update(&[0.0, 0.0]).unwrap();
        assert_eq!(s.beta(), vec![0.5, 0.5]);

        // One expert blows up: β¹ = (1−½)·½·1 + ½·½·e^(−ℓ²) → 0.25. With
        // m = 2 and α₁ = ½ the stay and mix coefficients coincide, so the
        // collapsed expert keeps the same α-share.
        let mut s = SwitchingState::init(2, 1.0, harmonic()).unwrap();
        s.update(&[0.0, 50.0]).unwrap();
        let beta = s.beta();
        let expected = 0.25 * (1.0 + (-50.0f64).exp());
        assert!((beta[0] - expected).abs() < 1e-16);
        assert!((beta[1] - expected).abs() < 1e-16);
    }

    #[test]
    fn total_weight_invariant_every_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = SwitchingState::init(3, 0.5, harmonic()).unwrap();
        for _ in 0..500 {
            let losses: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let before = s.beta_log();
            s.update(&losses).unwrap();
            // ln Σ_j β_t^j  ==  ln Σ_j β_{t−1}^j e^(−ηℓ_t^j)
            let expected = log_sum_exp(
                before
                    .iter()
                    .zip(&losses)
                    .map(|(lb, l)| lb - s.eta() * l),
            );
            let got = s.total_weight_log();
            assert!(
                (got - expected).abs() <= 1e-12,
                "total weight drifted: {got} vs {expected}"
            );
        }
    }

    fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = terms.collect();
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    }

    #[test]
    fn rescaling_keeps_long_runs_finite() {
        let mut s = SwitchingState::init(2, 1.0, harmonic()).unwrap();
        for _ in 0..5000 {
            s.update(&[300.0, 300.0]).unwrap();
        }
        // True β underflowed f64 long ago; the log view stays finite.
        assert!(s.beta_log().iter().all(|b| b.is_finite()));
        assert!(s.total_weight_log() < -1.0e6);
        assert_eq!(s.beta_normalized(), vec![0.5, 0.5]);
    }

    #[test]
    fn prior_base_cases_and_normalization() {
        assert_eq!(switching_prior(&[], 2, &harmonic()), 1.0);
        assert_eq!(switching_prior(&[0], 2, &harmonic()), 0.5);
        // m=2, α₁=1/2: stay costs 1−½.
        assert_eq!(switching_prior(&[0, 0], 2, &harmonic()), 0.25);

        // Σ over all m^T sequences = 1 (m = 3, T = 4).
        let mut total = 0.0;
        for_each_sequence(4, 3, |seq| total += switching_prior(seq, 3, &harmonic()));
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_telescopes_for_constant_sequences() {
        for t in [10u64, 100, 1000] {
            let seq = vec![0usize; t as usize];
            let b = switching_bound(t, 2, &seq, 1.0, &harmonic());
            let expected = 2.0f64.ln() + (t as f64).ln();
            assert!((b - expected).abs() <= 1e-12, "T={t}: {b} vs {expected}");
        }
        // |𝒯| = 0, m = 2, constant α = ½, T = 2 → (1/η)(log 2 + log 2).
        let b = switching_bound(
            2,
            2,
            &[0, 0],
            1.0,
            &RateSchedule::Constant { alpha: 0.5 },
        );
        assert!((b - 2.0 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bound_is_within_corollary_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let t = rng.random_range(2u64..40);
            let seq: Vec<usize> = (0..t).map(|_| rng.random_range(0..2usize)).collect();
            let n = switch_set(&seq).len() as f64;
            let eta = 0.7;
            let b = switching_bound(t, 2, &seq, eta, &harmonic());
            let corollary = (1.0 + (n + 1.0) * (t as f64).ln()) / eta;
            assert!(b <= corollary + 1e-12, "seq {seq:?}: {b} > {corollary}");
        }
    }

    #[test]
    fn best_sequence_cases() {
        let all_equal = vec![vec![0.3; 3]; 4];
        let (seq, loss) = best_switching_sequence(&all_equal).unwrap();
        assert_eq!(seq, vec![0, 0, 0, 0]);
        assert!((loss - 1.2).abs() < 1e-15);

        let alternating = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let (seq, loss) = best_switching_sequence(&alternating).unwrap();
        assert_eq!(seq, vec![0, 1]);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn best_sequence_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = 6;
        let m = 3;
        let matrix: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let (seq, loss) = best_switching_sequence(&matrix).unwrap();

        let mut best_loss = f64::INFINITY;
        let mut best_seq = vec![0usize; t];
        for_each_sequence(t, m, |cand| {
            let l: f64 = cand.iter().enumerate().map(|(i, &e)| matrix[i][e]).sum();
            if l < best_loss {
                best_loss = l;
                best_seq = cand.to_vec();
            }
        });
        assert_eq!(seq, best_seq);
        assert!((loss - best_loss).abs() < 1e-12);
    }

    #[test]
    fn per_switch_count_minima_match_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let t = 5;
        let m = 3;
        let matrix: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let per_count = best_loss_per_switch_count(&matrix).unwrap();

        let mut brute = vec![f64::INFINITY; t];
        for_each_sequence(t, m, |cand| {
            let switches = switch_set(cand).len();
            let l: f64 = cand.iter().enumerate().map(|(i, &e)| matrix[i][e]).sum();
            if l < brute[switches] {
                brute[switches] = l;
            }
        });
        for (a, b) in per_count.iter().zip(&brute) {
            if b.is_finite() {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
