//! Run directories: a distillation with its config, metrics, selection logs,
//! checkpoints and final model on disk.
//!
//! ```text
//! <run>/config.json          resolved run config
//! <run>/metrics.csv          t,queries,labeled,acc,success_rate (one row per round, round 0 first)
//! <run>/selections/round_<t>.json
//! <run>/checkpoints/latest.json
//! <run>/final_model.json
//! <run>/summary.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_json, save_model, write_atomic, write_json};
use crate::data::{BlobTask, Dataset, DatasetSource};
use crate::distill::{
    sample_x, DistillConfig, DistillOutcome, Distiller, RoundMetrics, RoundRecord, RunCheckpoint,
    StopReason,
};
use crate::error::{Error, Result};
use crate::mixup::PairId;
use crate::select::Selector;
use crate::teacher::{QueryLedger, SoftLabel, Teacher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset `X` is sampled from (labels, if any, are dropped).
    pub unlabeled: DatasetSource,
    pub test: DatasetSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            unlabeled: DatasetSource::Blobs(BlobTask::default()),
            test: DatasetSource::Blobs(BlobTask {
                seed: 1,
                ..BlobTask::default()
            }),
        }
    }
}

/// Everything needed to reproduce a run, given the teacher.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub distill: DistillConfig,
}

impl RunConfig {
    /// Loads `X` (sampled with the run seed) and the test set.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let pool = self.data.unlabeled.load()?;
        let x = sample_x(&pool, &self.distill)?;
        let test = self.data.test.load()?;
        Ok((x, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub pair: PairId,
    pub lambda: f64,
    /// Student confidence that ranked this candidate; absent for random search.
    pub confidence: Option<f64>,
    pub teacher_probs: SoftLabel,
}

/// What was selected in one round and what the teacher said about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub round: usize,
    pub selector: Selector,
    pub entries: Vec<SelectionEntry>,
}

impl SelectionLog {
    pub fn from_record(record: &RoundRecord) -> Self {
        let s = &record.selection;
        SelectionLog {
            round: record.metrics.round,
            selector: s.selector,
            entries: s
                .chosen
                .iter()
                .zip(&s.confidences)
                .zip(&record.teacher_probs)
                .map(|((c, conf), probs)| SelectionEntry {
                    pair: c.pair,
                    lambda: c.lambda,
                    confidence: *conf,
                    teacher_probs: probs.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stop: StopReason,
    pub teacher_accuracy: f64,
    pub final_metrics: RoundMetrics,
    pub ledger: QueryLedger,
}

#[derive(Serialize, Deserialize)]
struct MetricsRow {
    t: usize,
    queries: u64,
    labeled: usize,
    acc: f64,
    success_rate: f64,
}

/// Renders metrics as CSV with the fixed header `t,queries,labeled,acc,success_rate`.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in metrics {
        w.serialize(MetricsRow {
            t: m.round,
            queries: m.queries,
            labeled: m.labeled,
            acc: m.accuracy,
            success_rate: m.success_rate,
        })
        .expect("in-memory csv write");
    }
    if metrics.is_empty() {
        w.write_record(["t", "queries", "labeled", "acc", "success_rate"])
            .expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn parse_metrics_csv(bytes: &[u8]) -> Result<Vec<RoundMetrics>> {
    csv::Reader::from_reader(bytes)
        .deserialize::<MetricsRow>()
        .map(|row| {
            let r = row.map_err(|e| Error::format("metrics.csv", e.to_string()))?;
            Ok(RoundMetrics {
                round: r.t,
                queries: r.queries,
                labeled: r.labeled,
                accuracy: r.acc,
                success_rate: r.success_rate,
            })
        })
        .collect()
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn selections(&self) -> PathBuf {
        self.root.join("selections")
    }

    pub fn selection(&self, round: usize) -> PathBuf {
        self.selections().join(format!("round_{round}.json"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.json")
    }

    pub fn final_model(&self) -> PathBuf {
        self.root.join("final_model.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    fn create(&self) -> Result<()> {
        for d in [self.selections(), self.root.join("checkpoints")] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(())
    }

    pub fn read_config(&self) -> Result<RunConfig> {
        read_json(&self.config())
    }

    pub fn read_metrics(&self) -> Result<Vec<RoundMetrics>> {
        let p = self.metrics();
        parse_metrics_csv(&fs::read(&p).map_err(|e| Error::io(&p, e))?)
    }

    pub fn read_selection(&self, round: usize) -> Result<SelectionLog> {
        let p = self.selection(round);
        if !p.exists() {
            return Err(Error::input(format!(
                "run has no selection log for round {round}"
            )));
        }
        read_json(&p)
    }

    fn save_progress<T: Teacher + ?Sized>(&self, d: &Distiller<'_, T>) -> Result<()> {
        write_atomic(&self.metrics(), &metrics_csv(d.metrics()))?;
        let bytes = serde_json::to_vec(&d.checkpoint()).map_err(|e| Error::logic(e.to_string()))?;
        write_atomic(&self.checkpoint(), &bytes)
    }
}

/// Runs (or, with `resume`, continues) a distillation inside `dir`.
///
/// A checkpoint is written after the initial round and after each later
/// round. If the teacher fails mid-round the error is returned and the last
/// checkpoint still describes the state before that round.
pub fn run_in_dir<T: Teacher + ?Sized>(
    teacher: &T,
    cfg: &RunConfig,
    dir: &RunDir,
    resume: bool,
) -> Result<DistillOutcome> {
    dir.create()?;
    let (x, test) = cfg.load_data()?;
    let mut d = if resume && dir.checkpoint().exists() {
        let ckpt: RunCheckpoint = read_json(&dir.checkpoint())?;
        Distiller::resume(teacher, x, test, cfg.distill.clone(), ckpt)?
    } else if resume {
        return Err(Error::input(format!(
            "no checkpoint to resume in {}",
            dir.root().display()
        )));
    } else {
        write_json(&dir.config(), cfg)?;
        Distiller::start(teacher, x, test, cfg.distill.clone())?
    };
    dir.save_progress(&d)?;
    while let Some(record) = d.step()? {
        write_json(
            &dir.selection(record.metrics.round),
            &SelectionLog::from_record(&record),
        )?;
        dir.save_progress(&d)?;
    }
    dir.save_progress(&d)?;
    let out = d.finish();
    let last = out
        .metrics
        .last()
        .cloned()
        .ok_or_else(|| Error::logic("run produced no metrics"))?;
    let mut meta = BTreeMap::new();
    meta.insert("round".into(), serde_json::json!(last.round));
    meta.insert("test_accuracy".into(), serde_json::json!(last.accuracy));
    meta.insert("queries".into(), serde_json::json!(last.queries));
    save_model(&out.student, meta, &dir.final_model())?;
    write_json(
        &dir.summary(),
        &RunSummary {
            stop: out.stop,
            teacher_accuracy: out.teacher_accuracy,
            final_metrics: last,
            ledger: out.ledger.clone(),
        },
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::load_model;
    use crate::data::Image;
    use crate::distill::Provenance;
    use crate::nn::{train, Architecture, NetworkSpec, TrainConfig};
    use crate::teacher::{LocalTeacher, TeacherInfo};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn small_cfg() -> RunConfig {
        let blobs = |seed| {
            DatasetSource::Blobs(BlobTask {
                num_classes: 3,
                per_class: 30,
                image_side: 6,
                seed,
                ..BlobTask::default()
            })
        };
        RunConfig {
            data: DataConfig {
                unlabeled: blobs(3),
                test: blobs(4),
            },
            distill: DistillConfig {
                n: 12,
                rounds: 3,
                k_per_round: 6,
                student: Architecture::Mlp { hidden: vec![8] },
                train: TrainConfig {
                    epochs: 4,
                    ..TrainConfig::default()
                },
                ..DistillConfig::default()
            },
        }
    }

    fn teacher() -> LocalTeacher {
        let ds = BlobTask {
            num_classes: 3,
            per_class: 30,
            image_side: 6,
            seed: 5,
            ..BlobTask::default()
        }
        .generate();
        let y: Vec<SoftLabel> = ds
            .labels()
            .unwrap()
            .iter()
            .map(|&l| SoftLabel::one_hot(3, l).unwrap())
            .collect();
        let spec = NetworkSpec::mlp([6, 6, 1], &[12], 3);
        let m = train(&spec, ds.images(), &y, &TrainConfig::default())
            .unwrap()
            .model;
        LocalTeacher::new(m, "t")
    }

    /// Local teacher that stops answering after a number of calls.
    struct Dies {
        inner: LocalTeacher,
        left: AtomicUsize,
    }

    impl Teacher for Dies {
        fn info(&self) -> &TeacherInfo {
            self.inner.info()
        }
        fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
            if self.left.fetch_sub(1, Ordering::SeqCst) == 0 {
                self.left.store(0, Ordering::SeqCst);
                return Err(Error::Transport("connection refused".into()));
            }
            self.inner.predict_batch(images)
        }
    }

    #[test]
    fn layout_and_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::new(dir.path().join("run"));
        let out = run_in_dir(&teacher(), &small_cfg(), &rd, false).unwrap();
        let metrics = rd.read_metrics().unwrap();
        assert_eq!(metrics, out.metrics);
        assert_eq!(metrics.len(), 4);
        let text = fs::read_to_string(rd.metrics()).unwrap();
        assert!(text.starts_with("t,queries,labeled,acc,success_rate\n"));
        assert_eq!(rd.read_config().unwrap(), small_cfg());
        let log = rd.read_selection(2).unwrap();
        assert_eq!(log.entries.len(), 6);
        assert!(rd.read_selection(9).is_err());
        let (model, _) = load_model(&rd.final_model()).unwrap();
        assert_eq!(model, out.student);
    }

    #[test]
    fn empty_metrics_still_have_header() {
        assert_eq!(metrics_csv(&[]), b"t,queries,labeled,acc,success_rate\n");
    }

    #[test]
    fn transport_failure_then_resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let t = teacher();
        let full = RunDir::new(dir.path().join("full"));
        let full_out = run_in_dir(&t, &cfg, &full, false).unwrap();

        // Calls: test-set evaluation, X, round 1, round 2 (fails).
        let dying = Dies {
            inner: t.clone(),
            left: AtomicUsize::new(3),
        };
        let broken = RunDir::new(dir.path().join("broken"));
        let err = run_in_dir(&dying, &cfg, &broken, false).unwrap_err();
        assert!(matches!(err, Error::Transport(_)));
        let ckpt: RunCheckpoint = read_json(&broken.checkpoint()).unwrap();
        assert_eq!(ckpt.round, 1);
        assert_eq!(ckpt.ledger.total(), 12 + 6);
        assert!(ckpt
            .provenance
            .iter()
            .all(|p| !matches!(p, Provenance::Mixup { round: 2, .. })));

        let resumed = run_in_dir(&t, &cfg, &broken, true).unwrap();
        assert_eq!(resumed.metrics, full_out.metrics);
        assert_eq!(
            fs::read(broken.metrics()).unwrap(),
            fs::read(full.metrics()).unwrap()
        );
    }

    #[test]
    fn resume_without_checkpoint_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::new(dir.path().join("none"));
        assert!(matches!(
            run_in_dir(&teacher(), &small_cfg(), &rd, true),
            Err(Error::Input(_))
        ));
    }
}
