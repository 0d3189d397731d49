//! The distillation loop.
//!
//! 1. Query the teacher on the unlabeled set `X` and train an initial student.
//! 2. Build a mixup candidate pool.
//! 3. For each round: select candidates with the current student, query the
//!    teacher on them, merge into the labeled set, retrain from scratch, and
//!    drop the used pairs from the pool.
//!
//! [`Distiller`] exposes the loop one round at a time so callers can
//! checkpoint between rounds; [`distill`] runs it to completion.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::ModelFile;
use crate::data::{sample_unlabeled, Dataset, DatasetSource, Image};
use crate::error::{Error, Result};
use crate::mixup::{
    build_pool, CandidatePool, LambdaGrid, MixupCandidate, PairId, DEFAULT_PAIR_CAP,
};
use crate::nn::{evaluate, train, train_from, Architecture, Model, NetworkSpec, TrainConfig};
use crate::select::{select, SelectionResult, Selector};
use crate::teacher::{query, teacher_accuracy, QueryLedger, SoftLabel, Teacher};

/// Minimum accuracy gain (as a fraction) that counts as progress for plateau stopping.
pub const PLATEAU_MIN_GAIN: f64 = 0.001;
/// Rounds without progress before plateau stopping kicks in.
pub const PLATEAU_PATIENCE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Train on the teacher's full probability vectors.
    Soft,
    /// Train on one-hot argmax labels.
    Hard,
}

/// Where mixup candidates are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSource {
    /// Pairs of images from `X` itself.
    InDomain,
    /// Pairs from a different dataset, optionally subsampled to `size` images.
    External {
        dataset: DatasetSource,
        #[serde(default)]
        size: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Size of the unlabeled set `X`.
    pub n: usize,
    /// Number of active rounds `T`.
    pub rounds: usize,
    pub k_per_round: usize,
    pub selector: Selector,
    pub grid: LambdaGrid,
    pub label_mode: LabelMode,
    pub pool_source: PoolSource,
    pub student: Architecture,
    pub train: TrainConfig,
    /// Upper bound on the number of pairs kept in the pool; `null` keeps all.
    pub pair_cap: Option<usize>,
    pub seed: u64,
    /// Stop once test accuracy has not improved for a couple of rounds.
    pub plateau_stop: bool,
    /// Continue from the previous round's student instead of a fresh initialisation.
    pub warm_start: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            n: 60,
            rounds: 3,
            k_per_round: 60,
            selector: Selector::ActiveMixup,
            grid: LambdaGrid::default(),
            label_mode: LabelMode::Soft,
            pool_source: PoolSource::InDomain,
            student: Architecture::default(),
            train: TrainConfig::default(),
            pair_cap: Some(DEFAULT_PAIR_CAP),
            seed: 0,
            plateau_stop: false,
            warm_start: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.rounds > 0 && self.k_per_round == 0 {
            return Err(Error::input(
                "k_per_round must be at least 1 when rounds > 0",
            ));
        }
        if self.pool_source == PoolSource::InDomain && self.n < 2 {
            return Err(Error::input("an in-domain pool needs n >= 2"));
        }
        if self.pair_cap == Some(0) {
            return Err(Error::input("pair_cap must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; ties checkpoints to their config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SampleX = 1,
    Pool = 2,
    Train = 3,
    Select = 4,
    PoolSample = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `stream` at position `index` (e.g. the round number).
pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(base ^ splitmix64((stream as u64) << 56 ^ index))
}

/// Draws `X` from a larger dataset the way a run does.
pub fn sample_x(ds: &Dataset, cfg: &DistillConfig) -> Result<Dataset> {
    sample_unlabeled(ds, cfg.n, derive_seed(cfg.seed, Stream::SampleX, 0))
}

/// Source images of the candidate pool.
pub fn pool_dataset(x: &Dataset, cfg: &DistillConfig) -> Result<Dataset> {
    match &cfg.pool_source {
        PoolSource::InDomain => Ok(x.clone()),
        PoolSource::External { dataset, size } => {
            let ds = dataset.load()?;
            if ds.shape() != x.shape() && !x.is_empty() {
                return Err(Error::input(format!(
                    "external pool images are {:?}, X images are {:?}",
                    ds.shape(),
                    x.shape()
                )));
            }
            let n = size.unwrap_or(ds.len());
            sample_unlabeled(&ds, n, derive_seed(cfg.seed, Stream::PoolSample, 0))
        }
    }
}

/// `student_acc / teacher_acc`; may exceed one.
pub fn success_rate(student_acc: f64, teacher_acc: f64) -> Result<f64> {
    if !(teacher_acc > 0.0) {
        return Err(Error::input(format!(
            "teacher accuracy {teacher_acc} must be positive"
        )));
    }
    Ok(student_acc / teacher_acc)
}

/// Origin of one labeled training example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    /// Image `index` of `X`.
    Original { index: usize },
    Mixup {
        round: usize,
        pair: PairId,
        lambda: f64,
    },
}

/// Images with teacher labels, growing round by round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    images: Vec<Image>,
    labels: Vec<SoftLabel>,
    provenance: Vec<Provenance>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[SoftLabel] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    fn push(&mut self, image: Image, label: SoftLabel, origin: Provenance) {
        self.images.push(image);
        self.labels.push(label);
        self.provenance.push(origin);
    }

    /// Distinct pairs that contributed mixup images.
    pub fn used_pairs(&self) -> BTreeSet<PairId> {
        self.provenance
            .iter()
            .filter_map(|p| match p {
                Provenance::Mixup { pair, .. } => Some(*pair),
                Provenance::Original { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Cumulative teacher queries.
    pub queries: u64,
    pub labeled: usize,
    pub accuracy: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    /// The pool had nothing left to select at the start of `round`.
    PoolExhausted {
        round: usize,
    },
    Plateau {
        round: usize,
    },
}

/// Everything one round produced, for logging.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub metrics: RoundMetrics,
    pub selection: SelectionResult,
    /// Raw teacher answers, aligned with `selection.chosen`.
    pub teacher_probs: Vec<SoftLabel>,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: Model,
    pub metrics: Vec<RoundMetrics>,
    pub ledger: QueryLedger,
    pub teacher_accuracy: f64,
    pub stop: StopReason,
    pub labeled: LabeledSet,
}

pub const RUN_FORMAT: &str = "activemix-run";
pub const RUN_VERSION: u32 = 1;

/// Resumable state between rounds. Images are not stored; they are rebuilt
/// from `X`, the pool source and the provenance tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunCheckpoint {
    pub format: String,
    pub version: u32,
    pub cfg_hash: String,
    pub teacher_id: String,
    pub x_fingerprint: String,
    pub pool_fingerprint: String,
    pub round: usize,
    pub teacher_accuracy: f64,
    pub labels: Vec<SoftLabel>,
    pub provenance: Vec<Provenance>,
    pub ledger: QueryLedger,
    pub metrics: Vec<RoundMetrics>,
    pub stop: Option<StopReason>,
    pub student: ModelFile,
}

/// Adds context to teacher failures without changing the error kind.
fn round_failure(e: Error, round: usize, acknowledged: u64) -> Error {
    let note = format!("round {round} aborted, {acknowledged} acknowledged queries discarded");
    match e {
        Error::Transport(m) => Error::Transport(format!("{m} ({note})")),
        Error::Protocol(m) => Error::Protocol(format!("{m} ({note})")),
        other => other,
    }
}

/// The loop, advanced one round per [`Distiller::step`].
pub struct Distiller<'t, T: Teacher + ?Sized> {
    teacher: &'t T,
    cfg: DistillConfig,
    spec: NetworkSpec,
    x: Dataset,
    test: Dataset,
    pool: CandidatePool,
    labeled: LabeledSet,
    ledger: QueryLedger,
    student: Model,
    metrics: Vec<RoundMetrics>,
    teacher_accuracy: f64,
    round: usize,
    stop: Option<StopReason>,
}

impl<'t, T: Teacher + ?Sized> std::fmt::Debug for Distiller<'t, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Distiller")
            .field("round", &self.round)
            .field("labeled", &self.labeled.len())
            .field("queries", &self.ledger.total())
            .finish()
    }
}

struct Prepared {
    spec: NetworkSpec,
    pool: CandidatePool,
}

fn prepare<T: Teacher + ?Sized>(
    teacher: &T,
    x: &Dataset,
    test: &Dataset,
    cfg: &DistillConfig,
) -> Result<Prepared> {
    cfg.validate()?;
    let info = teacher.info();
    if x.len() != cfg.n {
        return Err(Error::input(format!(
            "X has {} images, config says n = {}",
            x.len(),
            cfg.n
        )));
    }
    if x.labels().is_some() {
        return Err(Error::input("X must be unlabeled"));
    }
    if !x.is_empty() && x.shape() != info.input_shape {
        return Err(Error::input(format!(
            "X images are {:?}, teacher expects {:?}",
            x.shape(),
            info.input_shape
        )));
    }
    test.require_labels()?;
    if test.num_classes() != info.num_classes || test.shape() != info.input_shape {
        return Err(Error::input(
            "test set does not match the teacher's classes or input shape",
        ));
    }
    let spec = cfg.student.resolve(info.input_shape, info.num_classes)?;
    let source = pool_dataset(x, cfg)?;
    if source.shape() != info.input_shape {
        return Err(Error::input(
            "pool images do not match the teacher's input shape",
        ));
    }
    let pool = build_pool(
        source,
        cfg.grid.clone(),
        cfg.pair_cap,
        derive_seed(cfg.seed, Stream::Pool, 0),
    )?;
    Ok(Prepared { spec, pool })
}

fn fit(
    spec: &NetworkSpec,
    cfg: &DistillConfig,
    labeled: &LabeledSet,
    round: usize,
    previous: Option<&Model>,
) -> Result<Model> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(cfg.seed, Stream::Train, round as u64);
    match previous {
        Some(m) if cfg.warm_start && !labeled.is_empty() => {
            Ok(train_from(m.clone(), labeled.images(), labeled.labels(), &train_cfg)?.model)
        }
        _ if labeled.is_empty() => Model::init(spec, train_cfg.seed, train_cfg.weight_init),
        _ => Ok(train(spec, labeled.images(), labeled.labels(), &train_cfg)?.model),
    }
}

impl<'t, T: Teacher + ?Sized> Distiller<'t, T> {
    /// Labels `X`, trains the initial student and builds the pool.
    pub fn start(teacher: &'t T, x: Dataset, test: Dataset, cfg: DistillConfig) -> Result<Self> {
        let Prepared { spec, pool } = prepare(teacher, &x, &test, &cfg)?;
        let mut eval_ledger = QueryLedger::new();
        let teacher_acc = teacher_accuracy(teacher, &test, &mut eval_ledger)?;
        success_rate(1.0, teacher_acc)?;

        let mut ledger = QueryLedger::new();
        let mut labeled = LabeledSet::default();
        if !x.is_empty() {
            let y0 = query(teacher, x.images(), &mut ledger, 0)?;
            for (index, (im, y)) in x.images().iter().zip(y0).enumerate() {
                let y = to_target(y, cfg.label_mode)?;
                labeled.push(im.clone(), y, Provenance::Original { index });
            }
        }
        let student = fit(&spec, &cfg, &labeled, 0, None)?;
        let mut d = Distiller {
            teacher,
            cfg,
            spec,
            x,
            test,
            pool,
            labeled,
            ledger,
            student,
            metrics: Vec::new(),
            teacher_accuracy: teacher_acc,
            round: 0,
            stop: None,
        };
        d.record_metrics()?;
        if d.cfg.rounds == 0 {
            d.stop = Some(StopReason::Completed);
        }
        Ok(d)
    }

    /// Restores a run from a checkpoint taken by [`Distiller::checkpoint`].
    pub fn resume(
        teacher: &'t T,
        x: Dataset,
        test: Dataset,
        cfg: DistillConfig,
        ckpt: RunCheckpoint,
    ) -> Result<Self> {
        if ckpt.format != RUN_FORMAT || ckpt.version != RUN_VERSION {
            return Err(Error::format(
                "checkpoint.format",
                format!(
                    "expected {RUN_FORMAT} v{RUN_VERSION}, found {} v{}",
                    ckpt.format, ckpt.version
                ),
            ));
        }
        if ckpt.cfg_hash != cfg.hash() {
            return Err(Error::input(
                "checkpoint was written with a different config; refusing to resume",
            ));
        }
        if ckpt.teacher_id != teacher.info().model_id {
            return Err(Error::input(format!(
                "checkpoint was written against teacher `{}`, this teacher is `{}`",
                ckpt.teacher_id,
                teacher.info().model_id
            )));
        }
        if ckpt.x_fingerprint != x.fingerprint() {
            return Err(Error::input("X differs from the checkpointed run"));
        }
        let Prepared { spec, mut pool } = prepare(teacher, &x, &test, &cfg)?;
        if ckpt.pool_fingerprint != pool.source().fingerprint() {
            return Err(Error::input(
                "pool source differs from the checkpointed run",
            ));
        }
        if ckpt.labels.len() != ckpt.provenance.len() {
            return Err(Error::format(
                "checkpoint.labels",
                "labels and provenance lengths differ",
            ));
        }
        ckpt.ledger.validate()?;
        let mut labeled = LabeledSet::default();
        for (label, origin) in ckpt.labels.into_iter().zip(ckpt.provenance) {
            let image = match origin {
                Provenance::Original { index } if index < x.len() => x.image(index).clone(),
                Provenance::Mixup { pair, lambda, .. } => {
                    pool.image(&MixupCandidate { pair, lambda })?
                }
                Provenance::Original { index } => {
                    return Err(Error::format(
                        "checkpoint.provenance",
                        format!("X index {index} out of range"),
                    ))
                }
            };
            labeled.push(image, label, origin);
        }
        let used: Vec<PairId> = labeled.used_pairs().into_iter().collect();
        pool.remove_pairs(&used)
            .map_err(|e| Error::format("checkpoint.provenance", e.to_string()))?;
        let student = ckpt.student.into_model()?;
        if *student.spec() != spec {
            return Err(Error::format(
                "checkpoint.student",
                "architecture does not match the config",
            ));
        }
        Ok(Distiller {
            teacher,
            cfg,
            spec,
            x,
            test,
            pool,
            labeled,
            ledger: ckpt.ledger,
            student,
            metrics: ckpt.metrics,
            teacher_accuracy: ckpt.teacher_accuracy,
            round: ckpt.round,
            stop: ckpt.stop,
        })
    }

    pub fn checkpoint(&self) -> RunCheckpoint {
        RunCheckpoint {
            format: RUN_FORMAT.into(),
            version: RUN_VERSION,
            cfg_hash: self.cfg.hash(),
            teacher_id: self.teacher.info().model_id.clone(),
            x_fingerprint: self.x.fingerprint(),
            pool_fingerprint: self.pool.source().fingerprint(),
            round: self.round,
            teacher_accuracy: self.teacher_accuracy,
            labels: self.labeled.labels.clone(),
            provenance: self.labeled.provenance.clone(),
            ledger: self.ledger.clone(),
            metrics: self.metrics.clone(),
            stop: self.stop,
            student: ModelFile::from_model(&self.student, Default::default()),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.stop.is_some()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn metrics(&self) -> &[RoundMetrics] {
        &self.metrics
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn student(&self) -> &Model {
        &self.student
    }

    pub fn pool(&self) -> &CandidatePool {
        &self.pool
    }

    pub fn labeled(&self) -> &LabeledSet {
        &self.labeled
    }

    pub fn config(&self) -> &DistillConfig {
        &self.cfg
    }

    fn record_metrics(&mut self) -> Result<RoundMetrics> {
        let labels = self.test.require_labels()?;
        let accuracy = evaluate(&self.student, self.test.images(), labels)?;
        let m = RoundMetrics {
            round: self.round,
            queries: self.ledger.total(),
            labeled: self.labeled.len(),
            accuracy,
            success_rate: success_rate(accuracy, self.teacher_accuracy)?,
        };
        self.metrics.push(m.clone());
        Ok(m)
    }

    fn plateaued(&self) -> bool {
        let accs: Vec<f64> = self.metrics.iter().map(|m| m.accuracy).collect();
        if accs.len() <= PLATEAU_PATIENCE {
            return false;
        }
        let split = accs.len() - PLATEAU_PATIENCE;
        let best_before = accs[..split]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        accs[split..]
            .iter()
            .all(|&a| a <= best_before + PLATEAU_MIN_GAIN)
    }

    /// Runs one round. Returns `None` once the run is over.
    ///
    /// On a teacher failure the run is left exactly as it was before the
    /// round, so a checkpoint taken earlier is still consistent.
    pub fn step(&mut self) -> Result<Option<RoundRecord>> {
        if self.stop.is_some() {
            return Ok(None);
        }
        let t = self.round + 1;
        let seed = derive_seed(self.cfg.seed, Stream::Select, t as u64);
        let selection = if self.pool.is_empty() {
            None
        } else {
            Some(select(
                self.cfg.selector,
                &self.student,
                &self.pool,
                self.cfg.k_per_round,
                seed,
            )?)
        };
        let selection = match selection {
            Some(s) if !s.is_empty() => s,
            _ => {
                self.stop = Some(StopReason::PoolExhausted { round: t });
                return Ok(None);
            }
        };
        let images = selection
            .chosen
            .iter()
            .map(|c| self.pool.image(c))
            .collect::<Result<Vec<_>>>()?;

        let mut ledger = self.ledger.clone();
        let probs = query(self.teacher, &images, &mut ledger, t)
            .map_err(|e| round_failure(e, t, ledger.total() - self.ledger.total()))?;
        self.pool.remove_pairs(&selection.pairs())?;
        self.ledger = ledger;
        for ((image, y), c) in images.into_iter().zip(&probs).zip(&selection.chosen) {
            let origin = Provenance::Mixup {
                round: t,
                pair: c.pair,
                lambda: c.lambda,
            };
            self.labeled
                .push(image, to_target(y.clone(), self.cfg.label_mode)?, origin);
        }
        self.student = fit(&self.spec, &self.cfg, &self.labeled, t, Some(&self.student))?;
        self.round = t;
        let metrics = self.record_metrics()?;
        if t >= self.cfg.rounds {
            self.stop = Some(StopReason::Completed);
        } else if self.cfg.plateau_stop && self.plateaued() {
            self.stop = Some(StopReason::Plateau { round: t });
        }
        Ok(Some(RoundRecord {
            metrics,
            selection,
            teacher_probs: probs,
        }))
    }

    pub fn finish(self) -> DistillOutcome {
        DistillOutcome {
            student: self.student,
            metrics: self.metrics,
            ledger: self.ledger,
            teacher_accuracy: self.teacher_accuracy,
            stop: self.stop.unwrap_or(StopReason::Completed),
            labeled: self.labeled,
        }
    }
}

fn to_target(label: SoftLabel, mode: LabelMode) -> Result<SoftLabel> {
    match mode {
        LabelMode::Soft => Ok(label),
        LabelMode::Hard => SoftLabel::one_hot(label.num_classes(), label.argmax()),
    }
}

/// Runs every round and returns the final student, metrics and ledger.
pub fn distill<T: Teacher + ?Sized>(
    teacher: &T,
    x: Dataset,
    test: Dataset,
    cfg: DistillConfig,
) -> Result<DistillOutcome> {
    let mut d = Distiller::start(teacher, x, test, cfg)?;
    while d.step()?.is_some() {}
    Ok(d.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::NetworkSpec;
    use crate::teacher::LocalTeacher;

    fn setup() -> (LocalTeacher, Dataset, Dataset) {
        let train = synth_blobs(3, 40, 6, 1);
        let test = synth_blobs(3, 20, 6, 2);
        let spec = NetworkSpec::mlp([6, 6, 1], &[16], 3);
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let labels = train.labels().unwrap();
        let targets: Vec<SoftLabel> = labels
            .iter()
            .map(|&l| SoftLabel::one_hot(3, l).unwrap())
            .collect();
        let model = crate::nn::train(&spec, train.images(), &targets, &cfg)
            .unwrap()
            .model;
        (LocalTeacher::new(model, "blob-teacher"), train, test)
    }

    fn cfg(n: usize, rounds: usize, k: usize) -> DistillConfig {
        DistillConfig {
            n,
            rounds,
            k_per_round: k,
            student: Architecture::Mlp { hidden: vec![8] },
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            ..DistillConfig::default()
        }
    }

    #[test]
    fn success_rate_examples() {
        assert_eq!(success_rate(0.9, 0.9).unwrap(), 1.0);
        assert!((success_rate(98.74, 99.29).unwrap() - 0.9945).abs() < 5e-5);
        assert!((success_rate(45.71, 53.69).unwrap() - 0.8514).abs() < 5e-5);
        assert!(success_rate(0.5, 0.0).is_err());
    }

    #[test]
    fn zero_rounds_costs_n() {
        let (t, train, test) = setup();
        let c = cfg(20, 0, 1);
        let x = sample_x(&train, &c).unwrap();
        let out = distill(&t, x, test, c).unwrap();
        assert_eq!(out.ledger.total(), 20);
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.stop, StopReason::Completed);
    }

    #[test]
    fn ledger_matches_labeled_set_and_provenance_is_unique() {
        let (t, train, test) = setup();
        for selector in [
            Selector::ActiveMixup,
            Selector::RandomSearch,
            Selector::VanillaAl,
        ] {
            let c = DistillConfig {
                selector,
                ..cfg(12, 3, 7)
            };
            let x = sample_x(&train, &c).unwrap();
            let out = distill(&t, x, test.clone(), c).unwrap();
            assert_eq!(out.ledger.total(), 12 + 3 * 7);
            assert_eq!(out.ledger.total() as usize, out.labeled.len());
            let mixed: Vec<_> = out
                .labeled
                .provenance()
                .iter()
                .filter_map(|p| match p {
                    Provenance::Mixup { pair, lambda, .. } => Some((*pair, lambda.to_bits())),
                    _ => None,
                })
                .collect();
            let distinct: BTreeSet<_> = mixed.iter().collect();
            assert_eq!(distinct.len(), mixed.len());
            let queries: Vec<u64> = out.metrics.iter().map(|m| m.queries).collect();
            assert!(queries.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn pool_exhaustion_stops_early() {
        let (t, train, test) = setup();
        // 4 images give 6 pairs; 4 per round leaves 2, then nothing.
        let c = cfg(4, 5, 4);
        let x = sample_x(&train, &c).unwrap();
        let out = distill(&t, x, test, c).unwrap();
        assert_eq!(out.stop, StopReason::PoolExhausted { round: 3 });
        assert_eq!(out.ledger.total(), 4 + 4 + 2);
        assert_eq!(out.metrics.len(), 3);
    }

    #[test]
    fn hard_mode_trains_on_one_hot() {
        let (t, train, test) = setup();
        let c = DistillConfig {
            label_mode: LabelMode::Hard,
            ..cfg(6, 1, 3)
        };
        let x = sample_x(&train, &c).unwrap();
        let out = distill(&t, x, test, c).unwrap();
        assert!(out.labeled.labels().iter().all(|l| l
            .probs()
            .iter()
            .filter(|&&p| p == 1.0)
            .count()
            == 1));
    }

    #[test]
    fn random_search_only_uses_half() {
        let (t, train, test) = setup();
        let c = DistillConfig {
            selector: Selector::RandomSearch,
            ..cfg(10, 2, 5)
        };
        let x = sample_x(&train, &c).unwrap();
        let out = distill(&t, x, test, c).unwrap();
        for p in out.labeled.provenance() {
            if let Provenance::Mixup { lambda, .. } = p {
                assert_eq!(*lambda, 0.5);
            }
        }
    }

    #[test]
    fn resume_continues_identically() {
        let (t, train, test) = setup();
        let c = cfg(10, 3, 6);
        let x = sample_x(&train, &c).unwrap();
        let full = distill(&t, x.clone(), test.clone(), c.clone()).unwrap();

        let mut d = Distiller::start(&t, x.clone(), test.clone(), c.clone()).unwrap();
        d.step().unwrap();
        let ckpt = d.checkpoint();
        let json = serde_json::to_string(&ckpt).unwrap();
        drop(d);
        let ckpt: RunCheckpoint = serde_json::from_str(&json).unwrap();
        let mut d =
            Distiller::resume(&t, x.clone(), test.clone(), c.clone(), ckpt.clone()).unwrap();
        while d.step().unwrap().is_some() {}
        let resumed = d.finish();
        assert_eq!(resumed.metrics, full.metrics);
        assert_eq!(resumed.ledger, full.ledger);
        assert_eq!(resumed.student, full.student);

        let mut other = c.clone();
        other.k_per_round = 5;
        assert!(matches!(
            Distiller::resume(&t, x, test, other, ckpt),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn warm_start_continues_from_previous_student() {
        let (t, train, test) = setup();
        let cold = cfg(10, 2, 6);
        let warm = DistillConfig {
            warm_start: true,
            ..cold.clone()
        };
        let x = sample_x(&train, &cold).unwrap();
        let a = distill(&t, x.clone(), test.clone(), cold).unwrap();
        let b = distill(&t, x.clone(), test.clone(), warm.clone()).unwrap();
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.metrics[0], b.metrics[0]);
        assert_ne!(a.student.params(), b.student.params());

        let mut d = Distiller::start(&t, x.clone(), test.clone(), warm.clone()).unwrap();
        d.step().unwrap();
        let ckpt = d.checkpoint();
        let mut d = Distiller::resume(&t, x, test, warm, ckpt).unwrap();
        while d.step().unwrap().is_some() {}
        assert_eq!(d.finish().student, b.student);
    }

    #[test]
    fn external_pool_with_empty_x() {
        let (t, _, test) = setup();
        let c = DistillConfig {
            n: 0,
            pool_source: PoolSource::External {
                dataset: DatasetSource::Blobs(crate::data::BlobTask {
                    num_classes: 3,
                    per_class: 4,
                    image_side: 6,
                    seed: 9,
                    ..Default::default()
                }),
                size: Some(8),
            },
            ..cfg(0, 2, 5)
        };
        let x = Dataset::new("empty", [6, 6, 1], vec![], None, 3).unwrap();
        let out = distill(&t, x, test, c).unwrap();
        assert_eq!(out.ledger.total(), 10);
        assert_eq!(out.metrics[0].queries, 0);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let (t, train, test) = setup();
        let c = cfg(10, 1, 2);
        let x = sample_x(&train, &c).unwrap();
        assert!(distill(&t, train.clone(), test.clone(), c.clone()).is_err());
        assert!(distill(&t, x.clone(), test.without_labels(), c.clone()).is_err());
        let bad = DistillConfig {
            k_per_round: 0,
            ..c
        };
        assert!(distill(&t, x, test, bad).is_err());
    }
}
