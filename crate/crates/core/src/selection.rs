//! Parent selection over per-case candidate correctness.
//!
//! Lexicase selection walks a shuffled case sequence and keeps, at every
//! case, only the surviving candidates that predict it correctly. In the
//! default *modified* mode a case that every survivor fails ends the event
//! with a uniform pick among the survivors; the *original* mode keeps
//! everyone and moves on. Random picks are always drawn as
//! `survivors[rng.gen_range(0..survivors.len())]` with survivors kept in
//! pool order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gather, CaseSequence};
use crate::nn::ModelState;
use crate::{Error, Result, Tensor};

/// Parent-selection strategy of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    SgdBaseline,
    Random,
    Tournament,
    Lexicase,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::SgdBaseline,
        Strategy::Random,
        Strategy::Tournament,
        Strategy::Lexicase,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::SgdBaseline => "sgd-baseline",
            Strategy::Random => "random",
            Strategy::Tournament => "tournament",
            Strategy::Lexicase => "lexicase",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown strategy {s:?} (expected sgd-baseline, random, tournament or lexicase)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LexicaseMode {
    /// Stop with a uniform pick as soon as every survivor fails a case.
    #[default]
    Modified,
    /// Keep all survivors on an all-fail case.
    Original,
}

impl LexicaseMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LexicaseMode::Modified => "modified",
            LexicaseMode::Original => "original",
        }
    }
}

impl fmt::Display for LexicaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LexicaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modified" => Ok(LexicaseMode::Modified),
            "original" => Ok(LexicaseMode::Original),
            other => Err(Error::invalid(format!(
                "unknown selection mode {other:?} (expected modified or original)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    SingleSurvivor,
    AllFailRandom,
    ExhaustedRandom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selected: usize,
    pub cases_consumed: usize,
    pub termination: Termination,
    /// Survivor count after each consumed case.
    pub survivor_trace: Vec<usize>,
}

/// Source of per-case correctness for candidates.
pub trait CorrectnessProvider {
    /// `result[i][j]` is whether `candidates[i]` predicts `cases[j]`
    /// correctly.
    fn evaluate(&mut self, candidates: &[usize], cases: &[usize]) -> Result<Vec<Vec<bool>>>;
}

/// Dense boolean matrix `[candidate][case]`, mostly useful for tests and
/// precomputed fixtures. Counts how many cells were requested.
#[derive(Clone, Debug)]
pub struct MatrixProvider {
    pub rows: Vec<Vec<bool>>,
    pub requests: usize,
}

impl MatrixProvider {
    pub fn new(rows: Vec<Vec<bool>>) -> Self {
        Self { rows, requests: 0 }
    }
}

impl CorrectnessProvider for MatrixProvider {
    fn evaluate(&mut self, candidates: &[usize], cases: &[usize]) -> Result<Vec<Vec<bool>>> {
        self.requests += candidates.len() * cases.len();
        Ok(candidates
            .iter()
            .map(|&c| cases.iter().map(|&k| self.rows[c][k]).collect())
            .collect())
    }
}

/// Lexicase selection from `pool` along `seq`, evaluating survivors
/// `window` cases at a time. Eliminations are applied case by case in
/// sequence order, so the outcome does not depend on `window`.
pub fn lexicase_select<P, R>(
    provider: &mut P,
    pool: &[usize],
    seq: &CaseSequence,
    rng: &mut R,
    mode: LexicaseMode,
    window: usize,
) -> Result<SelectionOutcome>
where
    P: CorrectnessProvider + ?Sized,
    R: Rng + ?Sized,
{
    if pool.is_empty() {
        return Err(Error::invalid("lexicase selection needs a nonempty pool"));
    }
    if pool.len() == 1 {
        return Ok(SelectionOutcome {
            selected: pool[0],
            cases_consumed: 0,
            termination: Termination::SingleSurvivor,
            survivor_trace: Vec::new(),
        });
    }
    if seq.is_empty() {
        return Err(Error::invalid("lexicase selection needs a nonempty case sequence"));
    }
    let window = window.max(1);
    let mut survivors: Vec<usize> = pool.to_vec();
    let mut trace = Vec::new();
    let mut consumed = 0;
    for chunk in seq.0.chunks(window) {
        let block = provider.evaluate(&survivors, chunk)?;
        // (candidate, row in block) for everyone still alive in this window
        let mut alive: Vec<(usize, usize)> =
            survivors.iter().copied().enumerate().map(|(r, c)| (c, r)).collect();
        for j in 0..chunk.len() {
            consumed += 1;
            let correct: Vec<(usize, usize)> =
                alive.iter().copied().filter(|&(_, r)| block[r][j]).collect();
            if correct.is_empty() {
                if mode == LexicaseMode::Modified {
                    trace.push(alive.len());
                    let pick = alive[rng.gen_range(0..alive.len())].0;
                    return Ok(SelectionOutcome {
                        selected: pick,
                        cases_consumed: consumed,
                        termination: Termination::AllFailRandom,
                        survivor_trace: trace,
                    });
                }
            } else {
                alive = correct;
            }
            trace.push(alive.len());
            if alive.len() == 1 {
                return Ok(SelectionOutcome {
                    selected: alive[0].0,
                    cases_consumed: consumed,
                    termination: Termination::SingleSurvivor,
                    survivor_trace: trace,
                });
            }
        }
        survivors = alive.into_iter().map(|(c, _)| c).collect();
    }
    let pick = survivors[rng.gen_range(0..survivors.len())];
    Ok(SelectionOutcome {
        selected: pick,
        cases_consumed: consumed,
        termination: Termination::ExhaustedRandom,
        survivor_trace: trace,
    })
}

/// Index of the highest accuracy; ties are broken uniformly at random.
pub fn tournament_select<R: Rng + ?Sized>(accuracies: &[f64], rng: &mut R) -> Result<usize> {
    if accuracies.is_empty() {
        return Err(Error::invalid("tournament selection needs at least one candidate"));
    }
    let best = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..accuracies.len())
        .filter(|&i| accuracies[i] == best)
        .collect();
    Ok(match ties.len() {
        1 => ties[0],
        n => ties[rng.gen_range(0..n)],
    })
}

pub fn random_select<R: Rng + ?Sized>(pool_size: usize, rng: &mut R) -> Result<usize> {
    if pool_size == 0 {
        return Err(Error::invalid("random selection needs a nonempty pool"));
    }
    Ok(rng.gen_range(0..pool_size))
}

/// Correctness of each model on each case, one batched prediction per
/// model. Models are evaluated concurrently; the result order follows
/// `models`.
pub fn batched_correctness(
    models: &[&ModelState],
    cases: &[usize],
    images: &Tensor,
    labels: &[usize],
) -> Result<Vec<Vec<bool>>> {
    if cases.is_empty() {
        return Ok(vec![Vec::new(); models.len()]);
    }
    let batch = gather(images, cases);
    models
        .par_iter()
        .map(|m| {
            let pred = m.predict(&batch)?;
            Ok(pred
                .iter()
                .zip(cases)
                .map(|(&p, &k)| p == labels[k])
                .collect())
        })
        .collect()
}

/// Lazily evaluated, cached correctness of a fixed candidate list against
/// a fixed (normalized, un-augmented) case set. Each (candidate, case)
/// pair is predicted at most once.
pub struct ModelCorrectness<'a> {
    models: Vec<&'a ModelState>,
    images: &'a Tensor,
    labels: &'a [usize],
    cache: Vec<Vec<Option<bool>>>,
    evaluations: usize,
}

impl<'a> ModelCorrectness<'a> {
    pub fn new(models: Vec<&'a ModelState>, images: &'a Tensor, labels: &'a [usize]) -> Self {
        let cache = vec![vec![None; labels.len()]; models.len()];
        Self {
            models,
            images,
            labels,
            cache,
            evaluations: 0,
        }
    }

    /// Number of (candidate, case) predictions performed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Fraction of `cases` each candidate predicts correctly.
    pub fn accuracies(&mut self, cases: &[usize], chunk: usize) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.models.len()).collect();
        let mut correct = vec![0usize; all.len()];
        for part in cases.chunks(chunk.max(1)) {
            for (c, row) in self.evaluate(&all, part)?.into_iter().enumerate() {
                correct[c] += row.iter().filter(|&&ok| ok).count();
            }
        }
        Ok(correct
            .into_iter()
            .map(|c| c as f64 / cases.len().max(1) as f64)
            .collect())
    }
}

impl CorrectnessProvider for ModelCorrectness<'_> {
    fn evaluate(&mut self, candidates: &[usize], cases: &[usize]) -> Result<Vec<Vec<bool>>> {
        let pending: Vec<Vec<usize>> = candidates
            .iter()
            .map(|&c| {
                cases
                    .iter()
                    .copied()
                    .filter(|&k| self.cache[c][k].is_none())
                    .collect()
            })
            .collect();
        let (images, labels) = (self.images, self.labels);
        let fresh: Vec<Vec<bool>> = candidates
            .par_iter()
            .zip(&pending)
            .map(|(&c, todo)| {
                Ok(batched_correctness(&[self.models[c]], todo, images, labels)?.remove(0))
            })
            .collect::<Result<_>>()?;
        for ((&c, todo), results) in candidates.iter().zip(&pending).zip(fresh) {
            self.evaluations += todo.len();
            for (&k, ok) in todo.iter().zip(results) {
                self.cache[c][k] = Some(ok);
            }
        }
        Ok(candidates
            .iter()
            .map(|&c| {
                cases
                    .iter()
                    .map(|&k| self.cache[c][k].expect("filled above"))
                    .collect()
            })
            .collect())
    }
}
