//! Batch experiment entry points behind the command-line interface.
//!
//! A run is a pure function of its configuration: every artifact is written
//! under the chosen output directory and two runs with identical
//! configuration produce byte-identical files. The resolved configuration
//! (defaults filled in, flag overrides applied) is itself recorded into the
//! output directory.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ftal::{ftal_gamma, ParameterSet};
use crate::hpf::{run_online, HpfConfig, HpfModel, Round, RunLog};
use crate::losses::LossFunction;
use crate::nowcast::{
    curves_to_csv, metrics_to_csv, run_nowcast, synthesize_rasters, ModelKind, NowcastConfig,
    SynthConfig,
};
use crate::oracle::{
    check_lhpf_bound, check_structure_decomposition, check_switching_bound_dp,
    check_switching_bound_exhaustive, certificates_to_csv, measure_gradient_bound, LhpfBoundMode,
    SwitchingCheck,
};
use crate::partition::{build_quadtree, HierarchicalPartition};
use crate::switching::RateSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    RegretCertify,
    SwitchingCertify,
    Nowcast,
    SynthData,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regret-certify" => Ok(Mode::RegretCertify),
            "switching-certify" => Ok(Mode::SwitchingCertify),
            "nowcast" => Ok(Mode::Nowcast),
            "synth-data" => Ok(Mode::SynthData),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCertifyConfig {
    pub grid_width: u32,
    pub grid_height: u32,
    pub levels: u32,
    pub rounds: usize,
    /// Uniform target noise amplitude.
    pub noise: f64,
    pub w_radius: f64,
    pub bound_mode: LhpfBoundMode,
    pub enumeration_cap: u64,
    /// Optional γ override; default is the certified ½·min{1/(4GD), η}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Default for RegretCertifyConfig {
    fn default() -> Self {
        RegretCertifyConfig {
            grid_width: 8,
            grid_height: 8,
            levels: 2,
            rounds: 1000,
            noise: 0.1,
            w_radius: 1.0,
            bound_mode: LhpfBoundMode::GlobalT,
            enumeration_cap: 1_000_000,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchingCheckMode {
    Exhaustive,
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingCertifyConfig {
    pub experts: usize,
    pub rounds: usize,
    pub eta: f64,
    pub matrices: usize,
    pub mode: SwitchingCheckMode,
}

impl Default for SwitchingCertifyConfig {
    fn default() -> Self {
        SwitchingCertifyConfig {
            experts: 3,
            rounds: 6,
            eta: 1.0,
            matrices: 20,
            mode: SwitchingCheckMode::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NowcastExperimentConfig {
    pub synth: SynthConfig,
    pub nowcast: NowcastConfig,
}

impl Default for NowcastExperimentConfig {
    fn default() -> Self {
        NowcastExperimentConfig {
            synth: SynthConfig::default(),
            nowcast: NowcastConfig::default(),
        }
    }
}

/// Top-level experiment description (a structured text document plus
/// command-line overrides).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Master seed; overrides the per-section seeds.
    pub seed: u64,
    #[serde(default)]
    pub strict_paper_indexing: bool,
    #[serde(default)]
    pub global_switch_clock: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret: Option<RegretCertifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switching: Option<SwitchingCertifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nowcast: Option<NowcastExperimentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = &self.nowcast {
            if let Some(g) = n.nowcast.gamma {
                if !(g > 0.0) {
                    return Err(Error::invalid("gamma override must be > 0"));
                }
            }
        }
        if let Some(r) = &self.regret {
            if let Some(g) = r.gamma {
                if !(g > 0.0) {
                    return Err(Error::invalid("gamma override must be > 0"));
                }
            }
            if r.rounds == 0 {
                return Err(Error::invalid("regret certification needs rounds >= 1"));
            }
        }
        if let Some(s) = &self.switching {
            if s.experts < 2 || s.rounds == 0 || !(s.eta > 0.0) || s.matrices == 0 {
                return Err(Error::invalid("bad switching certification parameters"));
            }
        }
        Ok(())
    }

    /// Fill in the section the mode needs, apply the master seed, and return
    /// the fully resolved configuration that gets recorded on disk.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut out = self.clone();
        match out.mode {
            Mode::RegretCertify => {
                out.regret.get_or_insert_with(Default::default);
            }
            Mode::SwitchingCertify => {
                out.switching.get_or_insert_with(Default::default);
            }
            Mode::Nowcast => {
                let n = out.nowcast.get_or_insert_with(Default::default);
                n.synth.seed = out.seed;
            }
            Mode::SynthData => {
                let s = out.synth.get_or_insert_with(Default::default);
                s.seed = out.seed;
            }
        }
        out
    }
}

/// Outcome of a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// False iff some certificate failed.
    pub all_satisfied: bool,
    /// Human-readable summary (includes the violating row on failure).
    pub message: String,
}

/// Execute a resolved configuration, writing artifacts under `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    let resolved = config.resolved();
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("resolved_config.json"), resolved.to_json())?;
    match resolved.mode {
        Mode::RegretCertify => run_regret_certify(&resolved, out_dir),
        Mode::SwitchingCertify => run_switching_certify(&resolved, out_dir),
        Mode::Nowcast => run_nowcast_mode(&resolved, out_dir),
        Mode::SynthData => run_synth_data(&resolved, out_dir),
    }
}

/// Piecewise-linear stream over a grid partition: each leaf carries its own
/// generator weights (kept 10% inside the ball so offline optima are
/// interior and the regularity constants honest), targets get uniform noise,
/// and the declared squared-loss range covers every reachable prediction.
pub fn piecewise_linear_stream(
    h: &HierarchicalPartition,
    grid_width: f64,
    grid_height: f64,
    rounds: usize,
    noise: f64,
    w_radius: f64,
    seed: u64,
) -> Result<(Vec<Round>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaf_weights = std::collections::BTreeMap::new();
    for leaf in h.indivisible_ids() {
        let w = loop {
            let cand = [
                rng.random_range(-w_radius..w_radius),
                rng.random_range(-w_radius..w_radius),
            ];
            if (cand[0] * cand[0] + cand[1] * cand[1]).sqrt() <= 0.9 * w_radius {
                break cand;
            }
        };
        leaf_weights.insert(leaf, w);
    }
    let x_max = (grid_width * grid_width + grid_height * grid_height).sqrt();
    let range = w_radius * x_max + noise;
    let proto = LossFunction::squared(0.0, -range, range)?;
    let eta = proto.eta;
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let x = vec![
            rng.random_range(0.0..grid_width),
            rng.random_range(0.0..grid_height),
        ];
        let leaf = *h.route(&x)?.last().expect("path non-empty");
        let w = &leaf_weights[&leaf];
        let jitter = if noise > 0.0 {
            rng.random_range(-noise..noise)
        } else {
            0.0
        };
        let z = w[0] * x[0] + w[1] * x[1] + jitter;
        let loss = LossFunction::squared(z, -range, range)?;
        out.push(Round::new(x, loss));
    }
    Ok((out, eta))
}

/// Run the forecaster over a freshly generated stream and certify the loss
/// bound for every induced partition. Exposed for tests and the CLI alike.
pub fn regret_certify(
    cfg: &RegretCertifyConfig,
    seed: u64,
    strict_paper_indexing: bool,
    global_switch_clock: bool,
) -> Result<(RunLog, HierarchicalPartition, Vec<crate::oracle::PartitionCertificate>, f64)> {
    let h = build_quadtree(cfg.grid_width, cfg.grid_height, cfg.levels)?;
    let (rounds, eta) = piecewise_linear_stream(
        &h,
        cfg.grid_width as f64,
        cfg.grid_height as f64,
        cfg.rounds,
        cfg.noise,
        cfg.w_radius,
        seed,
    )?;
    let w_set = ParameterSet::ball(2, cfg.w_radius);
    let g = measure_gradient_bound(&rounds, &w_set);
    let gamma = cfg.gamma.unwrap_or_else(|| ftal_gamma(eta, g, w_set.diameter()));
    let mut learner = HpfConfig::new(2, w_set, gamma, eta);
    learner.g_bound = Some(g);
    learner.strict_paper_indexing = strict_paper_indexing;
    learner.global_switch_clock = global_switch_clock;
    let mut model = HpfModel::new(h.clone(), learner)?;
    let log = run_online(&mut model, &rounds)?;
    let certs = check_lhpf_bound(&log, &h, g, cfg.bound_mode, cfg.enumeration_cap as u128)?;
    Ok((log, h, certs, g))
}

fn run_regret_certify(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let cfg = config.regret.as_ref().expect("resolved");
    let (log, h, certs, _g) = regret_certify(
        cfg,
        config.seed,
        config.strict_paper_indexing,
        config.global_switch_clock,
    )?;
    fs::write(out_dir.join("partition.json"), h.to_json())?;
    fs::write(out_dir.join("runlog.json"), log.to_json())?;
    fs::write(out_dir.join("certificates.csv"), certificates_to_csv(&certs))?;
    let structure = check_structure_decomposition(&log, &h, cfg.enumeration_cap as u128)?;
    let mut s_csv = String::from("p_size,lhs,rhs,satisfied,partition\n");
    for row in &structure {
        let ids: Vec<String> = row.partition.segment_ids.iter().map(|i| i.to_string()).collect();
        s_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.partition.len(),
            row.lhs,
            row.rhs,
            row.satisfied,
            ids.join("|")
        ));
    }
    fs::write(out_dir.join("structure.csv"), s_csv)?;
    let violations: Vec<&crate::oracle::PartitionCertificate> =
        certs.iter().filter(|c| !c.certificate.satisfied).collect();
    let structure_ok = structure.iter().all(|r| r.satisfied);
    if violations.is_empty() && structure_ok {
        Ok(RunOutcome {
            all_satisfied: true,
            message: format!("{} certificates satisfied", certs.len()),
        })
    } else {
        let worst = violations
            .first()
            .map(|c| {
                format!(
                    "partition {:?}: margin {}",
                    c.partition.segment_ids, c.certificate.margin
                )
            })
            .unwrap_or_else(|| "structure decomposition violated".into());
        Ok(RunOutcome {
            all_satisfied: false,
            message: format!("certificate violation: {worst}"),
        })
    }
}

fn run_switching_certify(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let cfg = config.switching.as_ref().expect("resolved");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut csv = String::from(
        "matrix,mode,sequences_checked,algorithm_loss,competitor_loss,bound,min_margin,satisfied\n",
    );
    let mut all_ok = true;
    let mut first_violation = None;
    for idx in 0..cfg.matrices {
        let matrix: Vec<Vec<f64>> = (0..cfg.rounds)
            .map(|_| (0..cfg.experts).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let check: SwitchingCheck = match cfg.mode {
            SwitchingCheckMode::Exhaustive => {
                check_switching_bound_exhaustive(&matrix, cfg.eta, RateSchedule::Harmonic)?
            }
            SwitchingCheckMode::Dp => check_switching_bound_dp(&matrix, cfg.eta)?,
        };
        let mode_name = match cfg.mode {
            SwitchingCheckMode::Exhaustive => "exhaustive",
            SwitchingCheckMode::Dp => "dp",
        };
        csv.push_str(&format!(
            "{idx},{mode_name},{},{},{},{},{},{}\n",
            check.sequences_checked,
            check.worst.algorithm_loss,
            check.worst.competitor_loss,
            check.worst.bound_value,
            check.worst.margin,
            check.worst.satisfied,
        ));
        if !check.worst.satisfied {
            all_ok = false;
            if first_violation.is_none() {
                first_violation = Some(format!(
                    "matrix {idx}: sequence {:?} margin {}",
                    check.worst_sequence, check.worst.margin
                ));
            }
        }
    }
    fs::write(out_dir.join("certificate.csv"), csv)?;
    Ok(RunOutcome {
        all_satisfied: all_ok,
        message: first_violation
            .unwrap_or_else(|| format!("{} matrices certified", cfg.matrices)),
    })
}

fn run_nowcast_mode(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let cfg = config.nowcast.as_ref().expect("resolved");
    let seq = synthesize_rasters(&cfg.synth)?;
    let report = run_nowcast(&seq, &cfg.nowcast)?;
    fs::write(out_dir.join("metrics.csv"), metrics_to_csv(&report))?;
    fs::write(out_dir.join("curves.csv"), curves_to_csv(&report))?;

    // Plot-ready wide tables: one column per model, one row per horizon.
    let mut mse_csv = String::from("horizon_min,lhpf,persistence\n");
    let horizons: Vec<f64> = {
        let mut hs: Vec<f64> = report.rows.iter().map(|r| r.horizon_minutes).collect();
        hs.dedup();
        hs
    };
    let find = |h: f64, m: ModelKind| {
        report
            .rows
            .iter()
            .find(|r| r.horizon_minutes == h && r.model == m)
            .expect("row exists for every (horizon, model)")
    };
    for &h in &horizons {
        mse_csv.push_str(&format!(
            "{h},{},{}\n",
            find(h, ModelKind::Lhpf).mse,
            find(h, ModelKind::Persistence).mse
        ));
    }
    fs::write(out_dir.join("plot_mse.csv"), mse_csv)?;
    let mut csi_csv = String::from("horizon_min,threshold,lhpf,persistence\n");
    for &h in &horizons {
        for (k, thr) in cfg.nowcast.thresholds.iter().enumerate() {
            csi_csv.push_str(&format!(
                "{h},{thr},{},{}\n",
                find(h, ModelKind::Lhpf).csi[k],
                find(h, ModelKind::Persistence).csi[k]
            ));
        }
    }
    fs::write(out_dir.join("plot_csi.csv"), csi_csv)?;
    Ok(RunOutcome {
        all_satisfied: true,
        message: format!("{} metric rows written", report.rows.len()),
    })
}

fn run_synth_data(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let cfg = config.synth.as_ref().expect("resolved");
    let seq = synthesize_rasters(cfg)?;
    fs::write(out_dir.join("raster.hpfr"), seq.encode())?;
    Ok(RunOutcome {
        all_satisfied: true,
        message: format!(
            "{} frames of {}x{} written",
            seq.num_frames(),
            seq.width,
            seq.height
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nowcast::RasterSequence;
    use crate::oracle::certificates_to_csv;

    fn read(dir: &Path, name: &str) -> Vec<u8> {
        fs::read(dir.join(name)).unwrap()
    }

    #[test]
    fn mode_parses_from_kebab_case() {
        assert_eq!("regret-certify".parse::<Mode>().unwrap(), Mode::RegretCertify);
        assert!("bogus".parse::<Mode>().is_err());
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = ExperimentConfig {
            mode: Mode::SwitchingCertify,
            seed: 7,
            strict_paper_indexing: false,
            global_switch_clock: false,
            regret: None,
            switching: Some(SwitchingCertifyConfig::default()),
            nowcast: None,
            synth: None,
        };
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        assert!(ExperimentConfig::from_json("{").is_err());
        assert!(ExperimentConfig::from_json("{\"mode\":\"nope\",\"seed\":1}").is_err());
    }

    #[test]
    fn regret_mode_writes_consistent_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            mode: Mode::RegretCertify,
            seed: 3,
            strict_paper_indexing: false,
            global_switch_clock: false,
            regret: Some(RegretCertifyConfig {
                rounds: 200,
                ..Default::default()
            }),
            switching: None,
            nowcast: None,
            synth: None,
        };
        let outcome = run(&cfg, dir.path()).unwrap();
        assert!(outcome.all_satisfied, "{}", outcome.message);

        // Replay: the stored run log and partition regenerate the table.
        let log = RunLog::from_json(std::str::from_utf8(&read(dir.path(), "runlog.json")).unwrap())
            .unwrap();
        let h = HierarchicalPartition::from_json(
            std::str::from_utf8(&read(dir.path(), "partition.json")).unwrap(),
        )
        .unwrap();
        let g = measure_gradient_bound(
            &log.records.iter().map(|r| r.round.clone()).collect::<Vec<_>>(),
            &log.config.w_set,
        );
        let certs = check_lhpf_bound(&log, &h, g, LhpfBoundMode::GlobalT, 1 << 20).unwrap();
        let replayed = certificates_to_csv(&certs);
        assert_eq!(read(dir.path(), "certificates.csv"), replayed.into_bytes());
    }

    #[test]
    fn switching_mode_exits_clean() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            mode: Mode::SwitchingCertify,
            seed: 1,
            strict_paper_indexing: false,
            global_switch_clock: false,
            regret: None,
            switching: Some(SwitchingCertifyConfig {
                matrices: 3,
                ..Default::default()
            }),
            nowcast: None,
            synth: None,
        };
        let outcome = run(&cfg, dir.path()).unwrap();
        assert!(outcome.all_satisfied);
        let cert = String::from_utf8(read(dir.path(), "certificate.csv")).unwrap();
        assert_eq!(cert.lines().count(), 4);
    }

    #[test]
    fn synth_mode_is_byte_deterministic() {
        let cfg = ExperimentConfig {
            mode: Mode::SynthData,
            seed: 9,
            strict_paper_indexing: false,
            global_switch_clock: false,
            regret: None,
            switching: None,
            nowcast: None,
            synth: Some(SynthConfig {
                frames: 3,
                ..SynthConfig::default()
            }),
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run(&cfg, d1.path()).unwrap();
        run(&cfg, d2.path()).unwrap();
        for name in ["resolved_config.json", "raster.hpfr"] {
            assert_eq!(read(d1.path(), name), read(d2.path(), name), "{name}");
        }
        let raster = RasterSequence::decode(&read(d1.path(), "raster.hpfr")).unwrap();
        assert_eq!(raster.num_frames(), 3);
    }
}
