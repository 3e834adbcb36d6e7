//! Seeded random search with median pruning and a resumable JSONL ledger.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use radsurr_nn::{Control, NetworkSpec, TrainConfig};

use crate::dataset::{Dataset, Encoding, Target};
use crate::error::{CoreError, Result};
use crate::surrogate::{train_surrogate, TrainRun};

/// Inclusive integer ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub mlp_layers: [usize; 2],
    pub mlp_nodes: [usize; 2],
    pub cnn_dense_layers: [usize; 2],
    pub cnn_dense_nodes: [usize; 2],
    pub conv_layers: [usize; 2],
    pub filters: [usize; 2],
    pub filter_size: [usize; 2],
    pub pool_size: [usize; 2],
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            mlp_layers: [1, 3],
            mlp_nodes: [1000, 10000],
            cnn_dense_layers: [1, 3],
            cnn_dense_nodes: [20, 1000],
            conv_layers: [1, 3],
            filters: [3, 27],
            filter_size: [1, 6],
            pool_size: [1, 6],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("mlp_layers", self.mlp_layers),
            ("mlp_nodes", self.mlp_nodes),
            ("cnn_dense_layers", self.cnn_dense_layers),
            ("cnn_dense_nodes", self.cnn_dense_nodes),
            ("conv_layers", self.conv_layers),
            ("filters", self.filters),
            ("filter_size", self.filter_size),
            ("pool_size", self.pool_size),
        ];
        for (name, [lo, hi]) in ranges {
            if lo < 1 || lo > hi {
                return Err(CoreError::config(format!("search_space.{name}"), format!("need 1 <= lo <= hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

fn trial_rng(seed: u64, trial_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_id);
    rng
}

/// Draws one architecture; identical for identical `(seed, trial_id)`.
pub fn sample_spec(space: &SearchSpace, kind: Encoding, seed: u64, trial_id: u64) -> NetworkSpec {
    let mut rng = trial_rng(seed, trial_id);
    let mut draw = |[lo, hi]: [usize; 2]| rng.gen_range(lo..=hi);
    let net_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial_id);
    match kind {
        Encoding::Mlp => {
            let layers = draw(space.mlp_layers);
            let nodes = draw(space.mlp_nodes);
            NetworkSpec::mlp(layers, nodes, net_seed)
        }
        Encoding::Cnn => {
            let conv = draw(space.conv_layers);
            let filters = draw(space.filters);
            let fsize = [draw(space.filter_size), draw(space.filter_size)];
            let pool = [draw(space.pool_size), draw(space.pool_size)];
            let dense = draw(space.cnn_dense_layers);
            let nodes = draw(space.cnn_dense_nodes);
            NetworkSpec::cnn(conv, filters, fsize, pool, dense, nodes, net_seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Complete,
    Pruned,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub spec: NetworkSpec,
    pub budget_epochs: usize,
    /// `(epoch, validation MAE)` at each checkpoint reached.
    pub val_mae: Vec<(usize, f64)>,
    pub objective: Option<f64>,
    pub status: TrialStatus,
    pub error: Option<String>,
    pub wall_clock_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub kind: Encoding,
    /// Set from the run's target selector rather than stored.
    #[serde(skip)]
    pub target: Target,
    pub n_trials: usize,
    pub budget_epochs: usize,
    /// Validation checkpoints every this many epochs.
    pub checkpoint_every: usize,
    /// Trials that must finish before pruning starts.
    pub startup_trials: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            kind: Encoding::Cnn,
            target: Target::All,
            n_trials: 50,
            budget_epochs: 500,
            checkpoint_every: 100,
            startup_trials: 2,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 1 || self.budget_epochs < 1 || self.checkpoint_every < 1 {
            return Err(CoreError::config("tune", "n_trials, budget_epochs and checkpoint_every must be >= 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(CoreError::config("tune.validation_fraction", "must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Pruning state of the running trial, backed by the ledger so far.
#[derive(Debug)]
pub struct TrialMonitor<'a> {
    previous: &'a [TrialRecord],
    startup_trials: usize,
    trajectory: Vec<(usize, f64)>,
}

impl TrialMonitor<'_> {
    /// Records a checkpoint; true when the trial should be pruned because it
    /// is worse than the median of earlier trials at the same epoch.
    pub fn report(&mut self, epoch: usize, val_mae: f64) -> bool {
        self.trajectory.push((epoch, val_mae));
        let finished = self.previous.iter().filter(|r| r.status == TrialStatus::Complete).count();
        if finished < self.startup_trials {
            return false;
        }
        let mut at: Vec<f64> = self
            .previous
            .iter()
            .filter(|r| r.status != TrialStatus::Failed)
            .filter_map(|r| r.val_mae.iter().find(|(e, _)| *e == epoch).map(|&(_, v)| v))
            .collect();
        if at.is_empty() {
            return false;
        }
        let median = crate::dtrm::median(&mut at);
        val_mae > median
    }
}

/// Lowest objective among complete trials; ties go to the earliest id.
pub fn select_best(records: &[TrialRecord]) -> Option<&TrialRecord> {
    records
        .iter()
        .filter(|r| r.status == TrialStatus::Complete)
        .fold(None, |best: Option<&TrialRecord>, r| match best {
            Some(b) if b.objective.unwrap_or(f64::INFINITY) <= r.objective.unwrap_or(f64::INFINITY) => Some(b),
            _ => Some(r),
        })
}

pub fn read_ledger(path: &Path) -> Result<Vec<TrialRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Rewrites the whole ledger through a temporary file and a rename.
pub fn write_ledger(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        for r in records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub best: TrialRecord,
    pub ledger: Vec<TrialRecord>,
}

/// What a trial evaluation produced: an objective, or `None` when pruned.
pub type TrialOutcome = Result<Option<f64>>;

/// Runs trials `0..n_trials`, skipping those already in the ledger at
/// `ledger_path`. `evaluate` trains one spec and reports checkpoints to the
/// monitor.
pub fn run_study_with(
    space: &SearchSpace,
    study: &StudyConfig,
    ledger_path: Option<&Path>,
    deterministic: bool,
    mut evaluate: impl FnMut(&NetworkSpec, &mut TrialMonitor<'_>) -> TrialOutcome,
) -> Result<StudyResult> {
    space.validate()?;
    study.validate()?;
    let mut ledger = match ledger_path {
        Some(p) => read_ledger(p)?,
        None => Vec::new(),
    };
    for (i, r) in ledger.iter().enumerate() {
        let expected = sample_spec(space, study.kind, study.seed, i as u64);
        if r.trial_id != i as u64 || r.spec != expected || r.budget_epochs != study.budget_epochs {
            return Err(CoreError::config(
                "tune",
                format!("existing ledger entry {i} does not belong to this study (different seed, space or budget)"),
            ));
        }
    }
    ledger.truncate(study.n_trials);

    for trial_id in ledger.len() as u64..study.n_trials as u64 {
        let spec = sample_spec(space, study.kind, study.seed, trial_id);
        let start = Instant::now();
        let mut monitor = TrialMonitor { previous: &ledger, startup_trials: study.startup_trials, trajectory: Vec::new() };
        let outcome = evaluate(&spec, &mut monitor);
        let trajectory = monitor.trajectory;
        let (status, objective, error) = match outcome {
            Ok(Some(v)) if v.is_finite() => (TrialStatus::Complete, Some(v), None),
            Ok(Some(v)) => (TrialStatus::Failed, None, Some(format!("non-finite objective {v}"))),
            Ok(None) => (TrialStatus::Pruned, None, None),
            Err(e) => (TrialStatus::Failed, None, Some(e.to_string())),
        };
        ledger.push(TrialRecord {
            trial_id,
            spec,
            budget_epochs: study.budget_epochs,
            val_mae: trajectory,
            objective,
            status,
            error,
            wall_clock_s: (!deterministic).then(|| start.elapsed().as_secs_f64()),
        });
        if let Some(p) = ledger_path {
            write_ledger(p, &ledger)?;
        }
    }
    match select_best(&ledger) {
        Some(best) => Ok(StudyResult { best: best.clone(), ledger }),
        None => Err(CoreError::AllTrialsFailed { ledger }),
    }
}

/// Splits training rows into (fit, validation) with a seeded shuffle.
pub fn validation_split(rows: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((rows.len() as f64 * fraction).round() as usize).clamp(1, rows.len().saturating_sub(1).max(1));
    let mut val = shuffled.split_off(rows.len() - n_val);
    shuffled.sort_unstable();
    val.sort_unstable();
    (shuffled, val)
}

/// Full study on a dataset: every trial trains on the fit rows and is
/// scored by validation MAE (normalized units) at the end of its budget.
pub fn run_study(
    space: &SearchSpace,
    dataset: &Dataset,
    study: &StudyConfig,
    train_config: &TrainConfig,
    ledger_path: Option<&Path>,
    deterministic: bool,
) -> Result<StudyResult> {
    let train_rows: Vec<usize> = dataset.train_indices().collect();
    if train_rows.len() < 2 {
        return Err(CoreError::Dataset("tuning needs at least 2 training rows".into()));
    }
    let (fit, val) = validation_split(&train_rows, study.validation_fraction, study.seed);
    let config = TrainConfig {
        epochs: study.budget_epochs,
        validate_every: study.checkpoint_every,
        ..train_config.clone()
    };
    run_study_with(space, study, ledger_path, deterministic, |spec, monitor| {
        let run = TrainRun { val_rows: Some(&val), deterministic, ..Default::default() };
        let mut pruned = false;
        let (_, outcome) = train_surrogate(dataset, spec, study.target, &config, &fit, &run, |r| match r.val_mae {
            Some(v) if r.epoch + 1 < study.budget_epochs && monitor.report(r.epoch + 1, v) => {
                pruned = true;
                Control::Stop
            }
            Some(v) if r.epoch + 1 == study.budget_epochs => {
                monitor.trajectory.push((r.epoch + 1, v));
                Control::Continue
            }
            _ => Control::Continue,
        })?;
        if pruned {
            return Ok(None);
        }
        Ok(outcome.history.last().and_then(|r| r.val_mae))
    })
}
