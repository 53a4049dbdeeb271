use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{hash64, Rng};
use crate::net::{save_checkpoint, BlockKind, HeadSource, LossSpec, Network, NetworkConfig};

use super::run::{train, RunRecord, TrainConfig};

const TEACHER_TAG: u64 = 0x7465_6163_6865_7200;
const STUDENT_TAG: u64 = 0x7374_7564_656e_7400;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNS_DIR: &str = "runs";

/// A grid of runs: every temperature × teacher replicate × student depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub temperatures: Vec<f64>,
    pub n_teachers: usize,
    pub student_depths: Vec<usize>,
    pub teacher: NetworkConfig,
    /// `train.seed` is the base seed; `train.loss` supplies the objective,
    /// with its temperature replaced per run.
    pub train: TrainConfig,
    #[serde(default)]
    pub student_block: BlockKind,
    #[serde(default)]
    pub student_head: HeadSource,
}

/// One cell of the grid with its derived seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub id: String,
    pub temperature_index: usize,
    pub temperature: f64,
    pub teacher_index: usize,
    pub depth: usize,
    pub teacher_seed: u64,
    pub run_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Done,
    Diverged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub run: PlannedRun,
    pub status: RunStatus,
    pub record: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub config: SweepConfig,
    pub runs: Vec<ManifestEntry>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    /// One record per planned run, in plan order.
    pub records: Vec<RunRecord>,
    /// Runs that were trained in this call.
    pub trained: usize,
    /// Runs whose stored record was reused.
    pub resumed: usize,
}

/// Teacher seeds depend only on the replicate index, so every temperature
/// and student depth sees the same teachers.
pub fn teacher_seed(base: u64, teacher_index: usize) -> u64 {
    hash64(&[base, TEACHER_TAG, teacher_index as u64])
}

pub fn run_seed(base: u64, temperature_index: usize, teacher_index: usize, depth: usize) -> u64 {
    hash64(&[base, temperature_index as u64, teacher_index as u64, depth as u64])
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() || self.student_depths.is_empty() || self.n_teachers == 0 {
            return Err(Error::InvalidArgument(
                "sweep needs at least one temperature, teacher and depth".into(),
            ));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidArgument(format!("temperature {t}")));
        }
        if self.student_depths.contains(&0) {
            return Err(Error::InvalidArgument("student depth 0".into()));
        }
        self.teacher.validate()?;
        self.train.validate()
    }

    pub fn with_rho(mut self, rho: u8) -> Self {
        self.teacher.tie_weights = rho == 1;
        self
    }

    pub fn plan(&self) -> Vec<PlannedRun> {
        let base = self.train.seed;
        let mut out = Vec::new();
        for (ti, &temperature) in self.temperatures.iter().enumerate() {
            for k in 0..self.n_teachers {
                for &depth in &self.student_depths {
                    out.push(PlannedRun {
                        id: format!("t{ti:02}-k{k}-l{depth:03}"),
                        temperature_index: ti,
                        temperature,
                        teacher_index: k,
                        depth,
                        teacher_seed: teacher_seed(base, k),
                        run_seed: run_seed(base, ti, k, depth),
                    });
                }
            }
        }
        out
    }

    /// Training settings for one run: per-run seed and, for KL objectives,
    /// the run's temperature.
    pub fn run_train_config(&self, run: &PlannedRun) -> TrainConfig {
        let loss = match self.train.loss {
            LossSpec::KlToTeacher { .. } => LossSpec::KlToTeacher {
                temperature: run.temperature,
            },
            other => other,
        };
        TrainConfig {
            loss,
            seed: run.run_seed,
            ..self.train
        }
    }

    pub fn student_config(&self, depth: usize) -> NetworkConfig {
        NetworkConfig::new(self.teacher.width, self.teacher.logit_dim, depth)
            .with_block_kind(self.student_block)
    }

    pub fn build_teacher(&self, teacher_index: usize) -> Result<Network> {
        let mut rng = Rng::new(teacher_seed(self.train.seed, teacher_index));
        Network::build_teacher(self.teacher, &mut rng)
    }

    pub fn build_student(&self, run: &PlannedRun, teacher: &Network) -> Result<Network> {
        let mut rng = Rng::new(hash64(&[run.run_seed, STUDENT_TAG]));
        let mut student = Network::init(self.student_config(run.depth), &mut rng)?;
        if self.student_head == HeadSource::CopiedFromTeacher {
            student.copy_head_from(teacher)?;
        }
        Ok(student)
    }

    /// Trains one planned run from scratch and returns it with the
    /// trained student.
    pub fn execute(&self, run: &PlannedRun, teacher: &Network) -> Result<(RunRecord, Network)> {
        let mut student = self.build_student(run, teacher)?;
        let mut record = train(&mut student, teacher, &self.run_train_config(run))?;
        record.id = run.id.clone();
        record.temperature = Some(run.temperature);
        record.temperature_index = Some(run.temperature_index);
        record.teacher_index = Some(run.teacher_index);
        record.teacher_seed = Some(run.teacher_seed);
        Ok((record, student))
    }
}

/// `n` values spaced evenly in log between `lo` and `hi`, endpoints exact.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| match i {
                0 => lo,
                i if i == n - 1 => hi,
                i => (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp(),
            })
            .collect(),
    }
}

fn record_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(RUNS_DIR).join(format!("{id}.json"))
}

fn checkpoint_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(RUNS_DIR).join(format!("{id}.dpth"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    crate::net::checkpoint::write_atomic(path, text.as_bytes())
}

/// A stored record counts as done when it parsed, finished, and was produced
/// by exactly this run's settings.
fn reusable(record: &RunRecord, sweep: &SweepConfig, run: &PlannedRun) -> bool {
    record.completed()
        && record.id == run.id
        && record.config == sweep.run_train_config(run)
        && record.depth == run.depth
        && record.teacher_seed == Some(run.teacher_seed)
        && record.block_kind == sweep.student_block
        && record.rho == sweep.teacher.rho()
}

fn status_of(record: &RunRecord) -> RunStatus {
    if record.error.is_some() {
        RunStatus::Failed
    } else if record.diverged {
        RunStatus::Diverged
    } else {
        RunStatus::Done
    }
}

/// Loads the stored records of a sweep directory in manifest order,
/// skipping runs that have not finished.
pub fn load_sweep(dir: &Path) -> Result<(SweepManifest, Vec<RunRecord>)> {
    let manifest: SweepManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut records = Vec::new();
    for entry in &manifest.runs {
        let path = record_path(dir, &entry.run.id);
        if path.exists() {
            records.push(read_json(&path)?);
        }
    }
    Ok((manifest, records))
}

/// Runs every cell of the grid on up to `workers` threads.
///
/// With an output directory, each run writes its record and checkpoint as
/// soon as it finishes and the manifest is refreshed; runs whose stored
/// record matches are loaded instead of retrained. Results do not depend on
/// the worker count.
pub fn run_sweep(sweep: &SweepConfig, out: Option<&Path>, workers: usize) -> Result<SweepOutcome> {
    sweep.validate()?;
    let plan = sweep.plan();

    let mut stored: Vec<Option<RunRecord>> = vec![None; plan.len()];
    if let Some(dir) = out {
        let runs_dir = dir.join(RUNS_DIR);
        std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let old: SweepManifest = read_json(&manifest_path)?;
            if old.config != *sweep {
                return Err(Error::InvalidArgument(format!(
                    "{} holds a different sweep; use a fresh output directory",
                    dir.display()
                )));
            }
        }
        for (slot, run) in stored.iter_mut().zip(&plan) {
            let path = record_path(dir, &run.id);
            if !path.exists() {
                continue;
            }
            match read_json::<RunRecord>(&path) {
                Ok(rec) if reusable(&rec, sweep, run) => *slot = Some(rec),
                Ok(_) => log::info!("{}: stored record is stale, retraining", run.id),
                Err(e) => log::warn!("{}: unreadable record ({e}), retraining", run.id),
            }
        }
    }

    let manifest = Mutex::new(SweepManifest {
        config: sweep.clone(),
        runs: plan
            .iter()
            .zip(&stored)
            .map(|(run, rec)| ManifestEntry {
                run: run.clone(),
                status: rec.as_ref().map_or(RunStatus::Pending, status_of),
                record: rec.as_ref().map(|_| PathBuf::from(RUNS_DIR).join(format!("{}.json", run.id))),
            })
            .collect(),
    });
    if let Some(dir) = out {
        write_json(&dir.join(MANIFEST_FILE), &*manifest.lock().expect("manifest lock"))?;
    }

    let resumed = stored.iter().filter(|r| r.is_some()).count();
    let todo: Vec<usize> = (0..plan.len()).filter(|&i| stored[i].is_none()).collect();
    let mut needed: Vec<usize> = todo.iter().map(|&i| plan[i].teacher_index).collect();
    needed.sort_unstable();
    needed.dedup();
    let teachers: Vec<Option<Network>> = (0..sweep.n_teachers)
        .map(|k| needed.binary_search(&k).ok().map(|_| sweep.build_teacher(k)).transpose())
        .collect::<Result<_>>()?;

    let run_one = |i: usize| -> Result<RunRecord> {
        let run = &plan[i];
        let teacher = teachers[run.teacher_index].as_ref().expect("teacher built");
        let (mut record, student) = sweep.execute(run, teacher)?;
        if let Some(dir) = out {
            let ckpt = checkpoint_path(dir, &run.id);
            match save_checkpoint(&student, &ckpt) {
                Ok(()) => record.checkpoint = Some(PathBuf::from(RUNS_DIR).join(format!("{}.dpth", run.id))),
                Err(e) => record.error = Some(e.to_string()),
            }
            if let Err(e) = write_json(&record_path(dir, &run.id), &record) {
                record.error = Some(e.to_string());
            }
            let mut m = manifest.lock().expect("manifest lock");
            m.runs[i].status = status_of(&record);
            m.runs[i].record = Some(PathBuf::from(RUNS_DIR).join(format!("{}.json", run.id)));
            if let Err(e) = write_json(&dir.join(MANIFEST_FILE), &*m) {
                log::warn!("manifest update failed: {e}");
            }
        }
        log::info!(
            "{}: depth {} T={:.4} final loss {:?}{}",
            run.id,
            run.depth,
            run.temperature,
            record.final_test_loss,
            if record.diverged { " (diverged)" } else { "" }
        );
        Ok(record)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let fresh: Vec<Result<RunRecord>> = pool.install(|| todo.par_iter().map(|&i| run_one(i)).collect());

    let mut fresh = fresh.into_iter();
    let mut records = Vec::with_capacity(plan.len());
    for slot in stored {
        match slot {
            Some(rec) => records.push(rec),
            None => records.push(fresh.next().expect("one result per pending run")?),
        }
    }
    Ok(SweepOutcome {
        records,
        trained: todo.len(),
        resumed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepConfig {
        SweepConfig {
            temperatures: vec![1.0, 0.1],
            n_teachers: 1,
            student_depths: vec![1, 2],
            teacher: NetworkConfig::new(4, 5, 3),
            train: TrainConfig {
                steps: 4,
                batch_size: 8,
                lr: 1e-3,
                loss: LossSpec::KlToTeacher { temperature: 1.0 },
                eval_every: 2,
                n_eval_batches: 1,
                seed: 11,
            },
            student_block: BlockKind::FirstOrder,
            student_head: HeadSource::Own,
        }
    }

    #[test]
    fn plan_covers_grid_with_distinct_seeds() {
        let plan = tiny().plan();
        assert_eq!(plan.len(), 4);
        let mut seeds: Vec<u64> = plan.iter().map(|r| r.run_seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 4);
        assert!(plan.iter().all(|r| r.teacher_seed == plan[0].teacher_seed));
    }

    #[test]
    fn log_spacing_hits_endpoints() {
        let t = log_spaced(1e-2, 1.0, 16);
        assert_eq!(t.len(), 16);
        assert_eq!(t[0], 1e-2);
        assert_eq!(t[15], 1.0);
        for w in t.windows(2) {
            assert!((w[1] / w[0] - 10f64.powf(2.0 / 15.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn per_run_temperature_reaches_loss() {
        let sweep = tiny();
        let plan = sweep.plan();
        let cfg = sweep.run_train_config(&plan[3]);
        assert_eq!(cfg.loss, LossSpec::KlToTeacher { temperature: 0.1 });
        assert_eq!(cfg.seed, plan[3].run_seed);
    }

    #[test]
    fn in_memory_sweep_yields_one_record_per_cell() {
        let out = run_sweep(&tiny(), None, 2).unwrap();
        assert_eq!(out.records.len(), 4);
        assert_eq!(out.trained, 4);
        let ids: Vec<&str> = out.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["t00-k0-l001", "t00-k0-l002", "t01-k0-l001", "t01-k0-l002"]);
    }
}
