//! Grids of distillation runs over real-image count and synthetic budget.
//!
//! Every cell is one run per seed against the same teacher. The table CSV has
//! one row per synthetic budget and one column per real-image count, holding
//! the seed-mean final accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distill::{distill, sample_x};
use crate::error::{Error, Result};
use crate::run::RunConfig;
use crate::select::Selector;
use crate::teacher::Teacher;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Sizes of the unlabeled set `X`.
    pub n_values: Vec<usize>,
    /// Total synthetic images queried over a run, ascending.
    pub budgets: Vec<usize>,
    pub selector: Selector,
    pub seeds: Vec<u64>,
    /// Rounds each nonzero budget is spread over.
    #[serde(default = "one")]
    pub rounds: usize,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.budgets.is_empty() || self.seeds.is_empty() {
            return Err(Error::input("sweep axes and seed list must be non-empty"));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1])
            || self.n_values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::input("sweep axes must be strictly ascending"));
        }
        if self.rounds == 0 {
            return Err(Error::input("rounds must be positive"));
        }
        if let Some(b) = self.budgets.iter().find(|&&b| b % self.rounds != 0) {
            return Err(Error::input(format!(
                "budget {b} is not divisible by {} rounds",
                self.rounds
            )));
        }
        Ok(())
    }

    /// Run config for one cell.
    pub fn cell_config(&self, base: &RunConfig, n: usize, budget: usize, seed: u64) -> RunConfig {
        let mut cfg = base.clone();
        let d = &mut cfg.distill;
        d.n = n;
        d.selector = self.selector;
        d.seed = seed;
        if budget == 0 {
            d.rounds = 0;
            d.k_per_round = d.k_per_round.max(1);
        } else {
            d.rounds = self.rounds;
            d.k_per_round = budget / self.rounds;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub budget: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub success_rate: f64,
    pub queries: u64,
}

/// A drop of more than the tolerance between neighbouring cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `"n"` when moving along real images, `"budget"` along synthetic images.
    pub axis: String,
    /// The other coordinate, held fixed.
    pub fixed: usize,
    pub from: usize,
    pub to: usize,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    /// Seed-mean accuracy keyed by `(budget, n)`.
    pub fn means(&self) -> BTreeMap<(usize, usize), f64> {
        let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for c in &self.cells {
            let e = sums.entry((c.budget, c.n)).or_default();
            e.0 += c.accuracy;
            e.1 += 1;
        }
        sums.into_iter()
            .map(|(k, (s, c))| (k, s / c as f64))
            .collect()
    }

    /// Table layout: header `synthetic\real,<n...>`, one row per budget.
    pub fn table_csv(&self) -> Vec<u8> {
        let means = self.means();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["synthetic\\real".to_string()];
        header.extend(self.spec.n_values.iter().map(|n| n.to_string()));
        w.write_record(&header).expect("in-memory csv write");
        for &b in &self.spec.budgets {
            let mut row = vec![b.to_string()];
            row.extend(
                self.spec
                    .n_values
                    .iter()
                    .map(|&n| format!("{:.6}", means[&(b, n)])),
            );
            w.write_record(&row).expect("in-memory csv write");
        }
        w.into_inner().expect("in-memory csv flush")
    }

    /// One row per run: `n,budget,seed,accuracy,success_rate,queries`.
    pub fn cells_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            w.serialize(c).expect("in-memory csv write");
        }
        w.into_inner().expect("in-memory csv flush")
    }

    /// Neighbouring cells whose mean accuracy falls by more than `tolerance`.
    pub fn monotonicity(&self, tolerance: f64) -> Vec<Violation> {
        let means = self.means();
        let mut out = Vec::new();
        for &b in &self.spec.budgets {
            for w in self.spec.n_values.windows(2) {
                let drop = means[&(b, w[0])] - means[&(b, w[1])];
                if drop > tolerance {
                    out.push(Violation {
                        axis: "n".into(),
                        fixed: b,
                        from: w[0],
                        to: w[1],
                        drop,
                    });
                }
            }
        }
        for &n in &self.spec.n_values {
            for w in self.spec.budgets.windows(2) {
                let drop = means[&(w[0], n)] - means[&(w[1], n)];
                if drop > tolerance {
                    out.push(Violation {
                        axis: "budget".into(),
                        fixed: n,
                        from: w[0],
                        to: w[1],
                        drop,
                    });
                }
            }
        }
        out
    }
}

/// Runs every `(budget, n, seed)` cell against one teacher.
pub fn run_sweep<T: Teacher + ?Sized>(
    teacher: &T,
    base: &RunConfig,
    spec: &SweepSpec,
) -> Result<SweepReport> {
    spec.validate()?;
    let unlabeled = base.data.unlabeled.load()?;
    let test = base.data.test.load()?;
    let mut cells = Vec::new();
    for &budget in &spec.budgets {
        for &n in &spec.n_values {
            for &seed in &spec.seeds {
                let cfg = spec.cell_config(base, n, budget, seed).distill;
                let x = sample_x(&unlabeled, &cfg)?;
                let out = distill(teacher, x, test.clone(), cfg)?;
                let last = out
                    .metrics
                    .last()
                    .ok_or_else(|| Error::logic("run produced no metrics"))?;
                cells.push(SweepCell {
                    n,
                    budget,
                    seed,
                    accuracy: last.accuracy,
                    success_rate: last.success_rate,
                    queries: out.ledger.total(),
                });
            }
        }
    }
    Ok(SweepReport {
        spec: spec.clone(),
        cells,
    })
}
