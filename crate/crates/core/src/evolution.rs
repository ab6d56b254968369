//! The generational loop: clone the parent, mutate every clone with one
//! pass of mini-batch SGD over its own disjoint data subset, then select
//! the next parent.
//!
//! Random streams (all `ChaCha8Rng`, see [`crate::seed`]):
//!
//! - initial parameters: `derive_seed(seed, STREAM_INIT, 0)`
//! - initial lineage seed: `derive_seed(seed, STREAM_LINEAGE, 0)`
//! - subset partition of generation `g`: `derive_seed(seed, STREAM_PARTITION, g)`
//! - selection event of generation `g`: `derive_seed(seed, STREAM_SELECTION, g)`
//! - clone `i` of generation `g` (augmentation): `derive_seed(parent_seed, g, i)`

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{augment_into, partition, shuffle_cases, AugmentConfig, Dataset};
use crate::nn::{Architecture, ModelState};
use crate::optim::{apply_momentum_policy, sgd_step, LrSchedule, MomentumPolicy, OptimizerState};
use crate::seed::{self, derive_seed, STREAM_INIT, STREAM_LINEAGE, STREAM_PARTITION, STREAM_SELECTION};
use crate::selection::{
    lexicase_select, random_select, tournament_select, LexicaseMode, ModelCorrectness, Strategy,
    Termination,
};
use crate::{Error, Result, Tensor};

const ACCURACY_CHUNK: usize = 512;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub population: usize,
    pub generations: u64,
    pub strategy: Strategy,
    pub momentum_policy: MomentumPolicy,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Total scheduled optimizer steps; derived from the run when `None`.
    pub lr_horizon: Option<u64>,
    pub batch_size: usize,
    pub seed: u64,
    pub selection_mode: LexicaseMode,
    pub selection_window: usize,
    /// Cap on the number of cases per selection event; 0 means all.
    pub selection_cases: usize,
    pub augment: AugmentConfig,
    pub workers: usize,
    /// Evaluate every candidate on the selection cases and log accuracies.
    pub record_accuracy: bool,
    /// Maximum survivor-trace length kept in each record.
    pub trace_cap: usize,
    pub model: Architecture,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            population: 4,
            generations: 10,
            strategy: Strategy::Lexicase,
            momentum_policy: MomentumPolicy::ResetEachGeneration,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_max: 0.1,
            lr_min: 0.0,
            lr_horizon: None,
            batch_size: 128,
            seed: 0,
            selection_mode: LexicaseMode::Modified,
            selection_window: 32,
            selection_cases: 0,
            augment: AugmentConfig::default(),
            workers: 1,
            record_accuracy: true,
            trace_cap: 64,
            model: Architecture::MlpSmall { hidden: 32 },
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.population == 0 {
            return fail("population must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lr_max >= 0.0 && self.lr_max.is_finite()) {
            return fail(format!("lr must be >= 0, got {}", self.lr_max));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return fail(format!("lr_min must be in [0, lr], got {}", self.lr_min));
        }
        if self.lr_horizon == Some(0) {
            return fail("lr_horizon must be positive".into());
        }
        if self.selection_window == 0 {
            return fail("selection_window must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.augment.hflip_prob) {
            return fail(format!("hflip_prob must be in [0, 1], got {}", self.augment.hflip_prob));
        }
        Ok(())
    }

    /// Population actually trained; the SGD baseline always runs one model.
    pub fn effective_population(&self) -> usize {
        match self.strategy {
            Strategy::SgdBaseline => 1,
            _ => self.population,
        }
    }

    /// Momentum policy actually applied. With a single candidate there is
    /// no selection event to reset after, so velocity carries over exactly
    /// as in plain momentum SGD.
    pub fn effective_policy(&self) -> MomentumPolicy {
        match self.momentum_policy {
            MomentumPolicy::ResetEachGeneration if self.effective_population() == 1 => {
                MomentumPolicy::Inherit
            }
            p => p,
        }
    }

    fn initial_momentum(&self) -> f64 {
        match self.momentum_policy {
            MomentumPolicy::NoMomentum => 0.0,
            _ => self.momentum,
        }
    }

    /// Upper bound on lineage steps: `G * ceil(ceil(N / p) / B)`.
    pub fn default_horizon(&self, n: usize) -> u64 {
        let p = self.effective_population();
        let per_gen = n.div_ceil(p).div_ceil(self.batch_size) as u64;
        (self.generations * per_gen).max(1)
    }
}

/// Generations giving the selected lineage about as many optimizer steps as
/// an `epochs`-epoch baseline: `epochs * p`.
pub fn parity_generations(epochs: u64, population: usize) -> u64 {
    epochs * population as u64
}

/// The `epochs * (p + 1)` budget preset.
pub fn plus_one_generations(epochs: u64, population: usize) -> u64 {
    epochs * (population as u64 + 1)
}

/// One population member.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub model: ModelState,
    pub opt: OptimizerState,
    pub rng_seed: u64,
}

/// `p` parameter-identical copies of `parent` with optimizer state set by
/// `policy` and per-clone seeds `derive_seed(parent.rng_seed, generation, i)`.
pub fn clone_parent(
    parent: &Candidate,
    p: usize,
    policy: MomentumPolicy,
    momentum: f64,
    generation: u64,
) -> Vec<Candidate> {
    (0..p)
        .map(|i| Candidate {
            id: i,
            model: parent.model.clone(),
            opt: apply_momentum_policy(policy, &parent.opt, momentum),
            rng_seed: derive_seed(parent.rng_seed, generation, i as u64),
        })
        .collect()
}

/// Per-generation metrics; serialized as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u64,
    pub strategy: Strategy,
    pub population: usize,
    pub selected: usize,
    /// Accuracy of each candidate on the selection cases (empty when not
    /// recorded).
    pub train_accuracy: Vec<f64>,
    /// Mean mini-batch loss of each candidate during mutation.
    pub train_loss: Vec<f64>,
    pub subset_sizes: Vec<usize>,
    pub cases_consumed: usize,
    pub termination: Option<Termination>,
    pub survivor_trace: Vec<usize>,
    /// (candidate, case) predictions made for selection.
    pub evaluations: usize,
    /// Optimizer steps taken by the selected candidate this generation.
    pub steps: u64,
    pub lineage_steps: u64,
    pub learning_rate: f64,
    pub wall_time_ms: f64,
}

/// Result of mutating one candidate.
#[derive(Clone, Debug)]
pub struct Mutation {
    pub candidate: Candidate,
    /// Sample indices consumed, in order.
    pub consumed: Vec<usize>,
    pub mean_loss: f64,
    pub steps: u64,
    pub last_eta: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub parent: Candidate,
    pub records: Vec<GenerationRecord>,
    pub generations_completed: u64,
    pub carries_velocity: bool,
}

impl TrainingOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.parent.model.clone(),
            momentum: self.parent.opt.momentum,
            weight_decay: self.parent.opt.weight_decay,
            steps: self.parent.opt.steps,
            velocity: self.carries_velocity.then(|| self.parent.opt.velocity.clone()),
            generation: self.generations_completed,
            lineage_seed: self.parent.rng_seed,
        }
    }
}

/// Runs generations of a fixed configuration over one training set.
pub struct Trainer {
    cfg: RunConfig,
    images: Tensor,
    labels: Vec<usize>,
    sample_shape: [usize; 3],
    num_classes: usize,
    schedule: LrSchedule,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, dataset: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let n = dataset.len();
        let p = cfg.effective_population();
        if n < p {
            return Err(Error::invalid(format!(
                "population {p} larger than the {n}-sample training set"
            )));
        }
        let &[c, h, w] = dataset.sample_shape() else {
            return Err(Error::Shape("dataset samples must be [C, H, W]".into()));
        };
        let horizon = cfg.lr_horizon.unwrap_or_else(|| cfg.default_horizon(n));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        Ok(Self {
            cfg: cfg.clone(),
            images: dataset.normalized(),
            labels: dataset.labels().to_vec(),
            sample_shape: [c, h, w],
            num_classes: dataset.num_classes(),
            schedule: LrSchedule::new(cfg.lr_max, cfg.lr_min, horizon)?,
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    /// Freshly initialized generation-0 parent.
    pub fn initial_parent(&self) -> Result<Candidate> {
        let mut rng = seed::rng(derive_seed(self.cfg.seed, STREAM_INIT, 0));
        let model = self
            .cfg
            .model
            .init(&self.sample_shape, self.num_classes, &mut rng)?;
        let opt = OptimizerState::new(&model, self.cfg.initial_momentum())
            .with_weight_decay(self.cfg.weight_decay);
        Ok(Candidate {
            id: 0,
            model,
            opt,
            rng_seed: derive_seed(self.cfg.seed, STREAM_LINEAGE, 0),
        })
    }

    /// Parent stored in a checkpoint, with the generation to continue from.
    pub fn resume_parent(&self, ck: &Checkpoint) -> Result<(Candidate, u64)> {
        if ck.model.input_shape() != self.sample_shape.as_slice() {
            return Err(Error::Shape(format!(
                "checkpoint expects samples {:?}, dataset has {:?}",
                ck.model.input_shape(),
                self.sample_shape
            )));
        }
        let parent = Candidate {
            id: 0,
            model: ck.model.clone(),
            opt: ck.optimizer_state(),
            rng_seed: ck.lineage_seed,
        };
        Ok((parent, ck.generation))
    }

    /// One pass of mini-batch SGD over `subset`, with augmentation drawn
    /// from the candidate's own stream.
    pub fn mutate(&self, mut candidate: Candidate, subset: &[usize]) -> Result<Mutation> {
        let id = candidate.id;
        let diverged = |e: Error| Error::CandidateDiverged {
            candidate: id,
            source: Box::new(e),
        };
        let mut rng = seed::rng(candidate.rng_seed);
        let sample_len: usize = self.sample_shape.iter().product();
        let mut total_loss = 0.0;
        let mut steps = 0u64;
        let mut last_eta = self.schedule.eta(candidate.opt.steps);
        for chunk in subset.chunks(self.cfg.batch_size) {
            let mut data = vec![0.0; chunk.len() * sample_len];
            for (dst, &idx) in data.chunks_exact_mut(sample_len).zip(chunk) {
                augment_into(
                    self.images.row(idx),
                    self.sample_shape,
                    &self.cfg.augment,
                    &mut rng,
                    dst,
                );
            }
            let mut shape = vec![chunk.len()];
            shape.extend_from_slice(&self.sample_shape);
            let batch = Tensor::new(shape, data)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| self.labels[i]).collect();
            let (loss, grads) = candidate
                .model
                .loss_and_grad(&batch, &labels)
                .map_err(diverged)?;
            if !loss.is_finite() {
                return Err(diverged(Error::NonFinite {
                    index: candidate.model.layers().len() - 1,
                    kind: "loss",
                }));
            }
            last_eta = self.schedule.eta(candidate.opt.steps);
            sgd_step(&mut candidate.model, &mut candidate.opt, &grads, last_eta).map_err(diverged)?;
            total_loss += loss;
            steps += 1;
        }
        Ok(Mutation {
            candidate,
            consumed: subset.to_vec(),
            mean_loss: if steps > 0 { total_loss / steps as f64 } else { 0.0 },
            steps,
            last_eta,
        })
    }

    /// Clone, mutate and select once. Returns the next parent.
    pub fn run_generation(
        &self,
        parent: &Candidate,
        generation: u64,
    ) -> Result<(Candidate, GenerationRecord)> {
        self.pool
            .install(|| self.run_generation_inner(parent, generation))
    }

    fn run_generation_inner(
        &self,
        parent: &Candidate,
        generation: u64,
    ) -> Result<(Candidate, GenerationRecord)> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let p = cfg.effective_population();
        let n = self.labels.len();

        let clones = clone_parent(parent, p, cfg.effective_policy(), cfg.momentum, generation);
        let part = partition(
            n,
            p,
            &mut seed::rng(derive_seed(cfg.seed, STREAM_PARTITION, generation)),
        )?;
        let mutations: Vec<Mutation> = clones
            .into_par_iter()
            .zip(part.subsets.par_iter())
            .map(|(c, subset)| self.mutate(c, subset))
            .collect::<Result<_>>()?;

        let mut rng = seed::rng(derive_seed(cfg.seed, STREAM_SELECTION, generation));
        let mut cases = shuffle_cases(n, &mut rng);
        if cfg.selection_cases > 0 {
            cases.truncate(cfg.selection_cases);
        }
        let models: Vec<&ModelState> = mutations.iter().map(|m| &m.candidate.model).collect();
        let mut provider = ModelCorrectness::new(models, &self.images, &self.labels);
        let accuracies = if cfg.record_accuracy || (cfg.strategy == Strategy::Tournament && p > 1) {
            provider.accuracies(&cases.0, ACCURACY_CHUNK)?
        } else {
            Vec::new()
        };

        let mut cases_consumed = 0;
        let mut termination = None;
        let mut trace = Vec::new();
        let selected = if p == 1 {
            termination = Some(Termination::SingleSurvivor);
            0
        } else {
            match cfg.strategy {
                Strategy::Random => random_select(p, &mut rng)?,
                Strategy::Tournament => tournament_select(&accuracies, &mut rng)?,
                Strategy::Lexicase => {
                    let pool: Vec<usize> = (0..p).collect();
                    let out = lexicase_select(
                        &mut provider,
                        &pool,
                        &cases,
                        &mut rng,
                        cfg.selection_mode,
                        cfg.selection_window,
                    )?;
                    cases_consumed = out.cases_consumed;
                    termination = Some(out.termination);
                    trace = out.survivor_trace;
                    trace.truncate(cfg.trace_cap);
                    out.selected
                }
                Strategy::SgdBaseline => unreachable!("baseline always runs one candidate"),
            }
        };
        let evaluations = provider.evaluations();

        let record = GenerationRecord {
            generation,
            strategy: cfg.strategy,
            population: p,
            selected,
            train_accuracy: accuracies,
            train_loss: mutations.iter().map(|m| m.mean_loss).collect(),
            subset_sizes: part.subsets.iter().map(Vec::len).collect(),
            cases_consumed,
            termination,
            survivor_trace: trace,
            evaluations,
            steps: mutations[selected].steps,
            lineage_steps: mutations[selected].candidate.opt.steps,
            learning_rate: mutations[selected].last_eta,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        let mut next = mutations
            .into_iter()
            .nth(selected)
            .expect("selected index within population")
            .candidate;
        next.id = 0;
        Ok((next, record))
    }

    /// Runs generations `start..cfg.generations` from `parent`, handing each
    /// record to `on_record` as soon as it is produced.
    pub fn run(
        &self,
        mut parent: Candidate,
        start: u64,
        mut on_record: impl FnMut(&GenerationRecord) -> Result<()>,
    ) -> Result<TrainingOutcome> {
        let mut records = Vec::new();
        for generation in start..self.cfg.generations {
            let (next, record) = self.run_generation(&parent, generation)?;
            log::info!(
                "generation {generation}: selected {} ({} cases, lr {:.5})",
                record.selected,
                record.cases_consumed,
                record.learning_rate
            );
            on_record(&record)?;
            records.push(record);
            parent = next;
        }
        Ok(TrainingOutcome {
            parent,
            records,
            generations_completed: self.cfg.generations.max(start),
            carries_velocity: self.cfg.effective_policy() == MomentumPolicy::Inherit,
        })
    }
}

/// Trains from scratch with `cfg` on `dataset`.
pub fn run_training(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainingOutcome> {
    let trainer = Trainer::new(cfg, dataset)?;
    let parent = trainer.initial_parent()?;
    trainer.run(parent, 0, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn moons(n: usize) -> Dataset {
        SyntheticSpec::two_moons(n, 1, 0.1).generate().unwrap()
    }

    fn cfg() -> RunConfig {
        RunConfig {
            generations: 3,
            batch_size: 16,
            augment: AugmentConfig::disabled(),
            model: Architecture::MlpSmall { hidden: 8 },
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_generations_returns_initial_model() {
        let ds = moons(40);
        let c = RunConfig { generations: 0, ..cfg() };
        let trainer = Trainer::new(&c, &ds).unwrap();
        let init = trainer.initial_parent().unwrap();
        let out = run_training(&c, &ds).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.parent.model, init.model);
    }

    #[test]
    fn clones_are_identical_with_distinct_seeds() {
        let ds = moons(40);
        let trainer = Trainer::new(&cfg(), &ds).unwrap();
        let mut parent = trainer.initial_parent().unwrap();
        parent.opt.velocity[0].data_mut()[0] = 0.25;
        let clones = clone_parent(&parent, 4, MomentumPolicy::Inherit, 0.9, 2);
        assert_eq!(clones.len(), 4);
        for c in &clones {
            assert_eq!(c.model, parent.model);
            assert_eq!(c.opt.velocity, parent.opt.velocity);
        }
        let seeds: std::collections::HashSet<u64> = clones.iter().map(|c| c.rng_seed).collect();
        assert_eq!(seeds.len(), 4);
        assert_eq!(clones[3].rng_seed, derive_seed(parent.rng_seed, 2, 3));
    }

    #[test]
    fn frozen_learning_rate_keeps_parent() {
        let ds = moons(40);
        let c = RunConfig {
            population: 2,
            lr_max: 0.0,
            ..cfg()
        };
        let trainer = Trainer::new(&c, &ds).unwrap();
        let parent = trainer.initial_parent().unwrap();
        let (next, rec) = trainer.run_generation(&parent, 0).unwrap();
        assert_eq!(next.model, parent.model);
        assert!(matches!(
            rec.termination,
            Some(Termination::ExhaustedRandom | Termination::AllFailRandom)
        ));
    }

    #[test]
    fn data_isolation_between_candidates() {
        let ds = moons(50);
        let c = RunConfig { population: 4, ..cfg() };
        let trainer = Trainer::new(&c, &ds).unwrap();
        let parent = trainer.initial_parent().unwrap();
        let part = partition(50, 4, &mut seed::rng(derive_seed(c.seed, STREAM_PARTITION, 0))).unwrap();
        let clones = clone_parent(&parent, 4, c.effective_policy(), c.momentum, 0);
        let mut seen = std::collections::HashSet::new();
        for (cand, subset) in clones.into_iter().zip(&part.subsets) {
            let m = trainer.mutate(cand, subset).unwrap();
            assert_eq!(m.steps, subset.len().div_ceil(c.batch_size) as u64);
            for i in m.consumed {
                assert!(seen.insert(i), "sample {i} consumed twice");
            }
        }
        assert_eq!(seen.len(), 50);
    }

    #[test]
    fn lineage_step_accounting() {
        let ds = moons(50);
        let c = RunConfig {
            population: 3,
            generations: 4,
            ..cfg()
        };
        let out = run_training(&c, &ds).unwrap();
        let mut expected = 0u64;
        for r in &out.records {
            let size = r.subset_sizes[r.selected];
            assert_eq!(r.steps, size.div_ceil(c.batch_size) as u64);
            expected += r.steps;
            assert_eq!(r.lineage_steps, expected);
        }
        assert_eq!(out.parent.opt.steps, expected);
        assert!(expected <= c.default_horizon(50));
    }

    #[test]
    fn population_larger_than_data_is_rejected() {
        let ds = moons(3);
        assert!(Trainer::new(&RunConfig { population: 4, ..cfg() }, &ds).is_err());
    }

    #[test]
    fn baseline_forces_single_candidate() {
        let c = RunConfig {
            strategy: Strategy::SgdBaseline,
            population: 4,
            ..cfg()
        };
        assert_eq!(c.effective_population(), 1);
        assert_eq!(c.effective_policy(), MomentumPolicy::Inherit);
        let none = RunConfig {
            momentum_policy: MomentumPolicy::NoMomentum,
            ..c
        };
        assert_eq!(none.effective_policy(), MomentumPolicy::NoMomentum);
    }

    #[test]
    fn divergence_names_candidate() {
        let ds = moons(40);
        let c = RunConfig {
            population: 2,
            lr_max: 1e300,
            momentum: 0.0,
            ..cfg()
        };
        let trainer = Trainer::new(&c, &ds).unwrap();
        let mut parent = trainer.initial_parent().unwrap();
        let mut result = Ok(());
        for g in 0..5 {
            match trainer.run_generation(&parent, g) {
                Ok((next, _)) => parent = next,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        let err = result.unwrap_err();
        assert!(matches!(err, Error::CandidateDiverged { .. }), "{err}");
    }
}
