//! Blackbox teacher access and query bookkeeping.
//!
//! A [`Teacher`] exposes nothing but `images -> class probabilities`. Every
//! image sent through [`query`] is charged to a [`QueryLedger`], which is the
//! cost measure for a distillation run.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Image, ImageShape};
use crate::error::{Error, Result};
use crate::nn::loss::{argmax, check_stochastic};
use crate::nn::Model;

/// A teacher's probability vector for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::input("a soft label needs at least two classes"));
        }
        check_stochastic(&probs, "soft label")?;
        Ok(SoftLabel(probs))
    }

    pub fn one_hot(num_classes: usize, class: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::input(format!("class {class} >= {num_classes}")));
        }
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        Self::new(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// The `n` most probable classes, descending; equal probabilities keep index order.
    pub fn top(&self, n: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<(usize, f64)> = self.0.iter().copied().enumerate().collect();
        idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        idx.truncate(n);
        idx
    }
}

impl AsRef<[f64]> for SoftLabel {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for SoftLabel {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SoftLabel::new(v)
    }
}

impl From<SoftLabel> for Vec<f64> {
    fn from(s: SoftLabel) -> Self {
        s.0
    }
}

/// Argmax of each label; ties go to the lowest class index.
pub fn to_hard(labels: &[SoftLabel]) -> Vec<usize> {
    labels.iter().map(SoftLabel::argmax).collect()
}

/// What a teacher publishes about itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherInfo {
    pub num_classes: usize,
    pub input_shape: ImageShape,
    pub model_id: String,
}

/// Opaque classifier that answers probability queries.
pub trait Teacher: Send + Sync {
    fn info(&self) -> &TeacherInfo;

    /// Largest number of images accepted per call, if limited.
    fn batch_limit(&self) -> Option<usize> {
        None
    }

    /// How many sub-batches may be in flight at once.
    fn max_in_flight(&self) -> usize {
        1
    }

    /// Raw probability rows for one sub-batch. Validation happens in [`query`].
    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Teacher + ?Sized> Teacher for Box<T> {
    fn info(&self) -> &TeacherInfo {
        (**self).info()
    }
    fn batch_limit(&self) -> Option<usize> {
        (**self).batch_limit()
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        (**self).predict_batch(images)
    }
}

/// In-process teacher wrapping a trained model.
#[derive(Debug, Clone)]
pub struct LocalTeacher {
    model: Model,
    info: TeacherInfo,
}

impl LocalTeacher {
    pub fn new(model: Model, model_id: impl Into<String>) -> Self {
        let info = TeacherInfo {
            num_classes: model.num_classes(),
            input_shape: model.spec().input_shape,
            model_id: model_id.into(),
        };
        LocalTeacher { model, info }
    }
}

impl Teacher for LocalTeacher {
    fn info(&self) -> &TeacherInfo {
        &self.info
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        images
            .iter()
            .map(|im| self.model.probabilities(im.pixels()))
            .collect()
    }
}

/// Running count of teacher queries, broken down by round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLedger {
    total: u64,
    per_round: Vec<(usize, u64)>,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn per_round(&self) -> &[(usize, u64)] {
        &self.per_round
    }

    pub fn round(&self, round: usize) -> u64 {
        self.per_round
            .iter()
            .find(|(r, _)| *r == round)
            .map_or(0, |(_, c)| *c)
    }

    /// Charges `count` queries to `round`. Rounds must be recorded in nondecreasing order.
    pub fn record(&mut self, round: usize, count: u64) -> Result<()> {
        match self.per_round.last_mut() {
            Some((r, c)) if *r == round => *c += count,
            Some((r, _)) if *r > round => {
                return Err(Error::logic(format!(
                    "ledger at round {r} cannot record round {round}"
                )))
            }
            _ => self.per_round.push((round, count)),
        }
        self.total += count;
        Ok(())
    }

    /// Checks `total == Σ per_round` and round ordering.
    pub fn validate(&self) -> Result<()> {
        let sum: u64 = self.per_round.iter().map(|(_, c)| c).sum();
        if sum != self.total {
            return Err(Error::format(
                "ledger.total",
                format!("{} != sum {sum}", self.total),
            ));
        }
        if self.per_round.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::format("ledger.per_round", "rounds out of order"));
        }
        Ok(())
    }
}

fn validate_response(rows: Vec<Vec<f64>>, expected: usize, k: usize) -> Result<Vec<SoftLabel>> {
    if rows.len() != expected {
        return Err(Error::Protocol(format!(
            "teacher answered {} rows for {expected} images",
            rows.len()
        )));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != k {
                return Err(Error::Protocol(format!(
                    "row {i} has {} classes, teacher declared {k}",
                    row.len()
                )));
            }
            SoftLabel::new(row).map_err(|e| Error::Protocol(format!("row {i}: {e}")))
        })
        .collect()
}

/// Asks the teacher for soft labels, charging each acknowledged image to `round`.
///
/// Images are split into sub-batches of the teacher's batch limit. Up to
/// `max_in_flight` sub-batches run concurrently, but ledger updates and label
/// assembly follow batch order. If any sub-batch fails, the error is returned
/// and no labels are handed back; sub-batches that were answered stay charged.
pub fn query<T: Teacher + ?Sized>(
    teacher: &T,
    images: &[Image],
    ledger: &mut QueryLedger,
    round: usize,
) -> Result<Vec<SoftLabel>> {
    if images.is_empty() {
        return Err(Error::input("query needs at least one image"));
    }
    let info = teacher.info();
    if let Some(i) = images.iter().position(|im| im.shape() != info.input_shape) {
        return Err(Error::input(format!(
            "image {i} has shape {:?}, teacher expects {:?}",
            images[i].shape(),
            info.input_shape
        )));
    }
    let chunk = teacher.batch_limit().unwrap_or(images.len()).max(1);
    let window = teacher.max_in_flight().max(1);
    let chunks: Vec<&[Image]> = images.chunks(chunk).collect();
    let mut labels = Vec::with_capacity(images.len());
    let mut failure = None;
    for group in chunks.chunks(window) {
        let answers: Vec<Result<Vec<Vec<f64>>>> = if group.len() == 1 {
            vec![teacher.predict_batch(group[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|c| s.spawn(move || teacher.predict_batch(c)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join().unwrap_or_else(|_| {
                            Err(Error::Transport("query worker panicked".into()))
                        })
                    })
                    .collect()
            })
        };
        for (c, answer) in group.iter().zip(answers) {
            match answer.and_then(|rows| validate_response(rows, c.len(), info.num_classes)) {
                Ok(rows) => {
                    ledger.record(round, c.len() as u64)?;
                    labels.extend(rows);
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(labels)
}

/// Teacher accuracy on a labeled set, charged to a separate ledger.
pub fn teacher_accuracy<T: Teacher + ?Sized>(
    teacher: &T,
    test: &Dataset,
    ledger: &mut QueryLedger,
) -> Result<f64> {
    let labels = test.require_labels()?;
    if test.is_empty() {
        return Err(Error::input("cannot evaluate on an empty set"));
    }
    let soft = query(teacher, test.images(), ledger, 0)?;
    let correct = to_hard(&soft)
        .iter()
        .zip(labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / test.len() as f64)
}
