//! Greedy simplified swarm optimization over filter banks.
//!
//! Each generation updates exactly one solution: a selection draw picks the
//! global best, a random member, the persistent current member, or a brand
//! new random bank. A selected bank gets one weight of one filter nudged,
//! every later filter redrawn, and the result replaces the original unless
//! it is strictly worse. Every solution remembers the prefix depth
//! (`p_filter`) at which its filters score best, and only that prefix is
//! ever reported or edited.

use std::cell::Cell;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::convolution::{convolve_layer, transform_dataset, Filter, FilterBank, WEIGHT_BOUND};
use crate::data_io::{Dataset, Record};
use crate::error::{CsvmError, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::svm::{correct_count, train_svc, SvmConfig, SvmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessMode {
    /// Train and score the SVM on the same records.
    #[default]
    Transductive,
    /// Train on a seeded 80% of the records and score on the other 20%.
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsoParams {
    /// Selection probabilities `(c_g, c_p, c_w, c_r)`.
    pub c: [f64; 4],
    pub n_sol: usize,
    pub n_filter: usize,
    pub n_var: usize,
    pub n_gen: usize,
    pub bound: f64,
    pub step_scale: f64,
    pub step_low: f64,
    pub step_high: f64,
    pub svm: SvmConfig,
    pub fitness_mode: FitnessMode,
    /// Seed of the inner split used by holdout fitness.
    pub holdout_seed: u64,
}

impl Default for SsoParams {
    fn default() -> Self {
        SsoParams {
            c: [0.40, 0.30, 0.20, 0.10],
            n_sol: 25,
            n_filter: 1,
            n_var: 2,
            n_gen: 100,
            bound: WEIGHT_BOUND,
            step_scale: 0.05,
            step_low: -0.01,
            step_high: 0.04,
            svm: SvmConfig::default(),
            fitness_mode: FitnessMode::Transductive,
            holdout_seed: 0,
        }
    }
}

impl SsoParams {
    pub fn validate(&self, n_att: usize) -> Result<()> {
        if self.c.iter().any(|&p| !(p >= 0.0)) || (self.c.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(CsvmError::param(format!("selection probabilities {:?} must be nonnegative and sum to 1", self.c)));
        }
        if self.n_sol == 0 || self.n_filter == 0 || self.n_var == 0 {
            return Err(CsvmError::param("n_sol, n_filter and n_var must be positive"));
        }
        if self.n_var > n_att {
            return Err(CsvmError::FilterTooLong { n_var: self.n_var, n_att });
        }
        if !(self.step_low < self.step_high) {
            return Err(CsvmError::param("step_low must be below step_high"));
        }
        if !(self.bound > 0.0) {
            return Err(CsvmError::param("bound must be positive"));
        }
        Ok(())
    }
}

/// Scores filter banks by SVM accuracy on the transformed records.
pub struct Fitness<'a> {
    params: &'a SsoParams,
    train: Dataset,
    /// Scoring set; `None` means score on `train`.
    test: Option<Dataset>,
    work: Cell<u64>,
}

impl<'a> Fitness<'a> {
    pub fn new(data: &Dataset, params: &'a SsoParams) -> Result<Self> {
        if data.is_empty() {
            return Err(CsvmError::EmptyInput);
        }
        if !data.has_both_classes() {
            return Err(CsvmError::SingleClass);
        }
        let (train, test) = match params.fitness_mode {
            FitnessMode::Transductive => (data.clone(), None),
            FitnessMode::Holdout => {
                let (train, test) = holdout_split(data, params.holdout_seed)?;
                (train, Some(test))
            }
        };
        Ok(Fitness { params, train, test, work: Cell::new(0) })
    }

    pub fn params(&self) -> &SsoParams {
        self.params
    }

    pub fn n_att(&self) -> usize {
        self.train.n_att
    }

    /// Size of the set accuracy is counted over.
    pub fn denominator(&self) -> usize {
        self.test.as_ref().unwrap_or(&self.train).len()
    }

    /// Deterministic cost of all evaluations so far, in multiply-add units.
    pub fn work(&self) -> u64 {
        self.work.get()
    }

    /// Accuracy of `bank` truncated to `depth` (0 means untransformed).
    pub fn value(&self, bank: &FilterBank, depth: usize) -> Result<f64> {
        let train = transform_dataset(&self.train, bank, depth)?;
        let test = self.test.as_ref().map(|t| transform_dataset(t, bank, depth)).transpose()?;
        self.charge_convolution(bank, depth);
        self.score(&train, test.as_ref()).map(|(v, _)| v)
    }

    /// Accuracy of the SVM on untransformed records.
    pub fn baseline(&self) -> Result<f64> {
        self.score(&self.train, self.test.as_ref()).map(|(v, _)| v)
    }

    /// The SVM trained at `depth`, as used for scoring.
    pub fn model_at(&self, bank: &FilterBank, depth: usize) -> Result<SvmModel> {
        let train = transform_dataset(&self.train, bank, depth)?;
        train_svc(&train, &self.params.svm)
    }

    /// Fitness at every depth in `from..=n_filter`, building each layer from
    /// the previous one.
    fn prefix_values(&self, bank: &FilterBank, from: usize) -> Result<Vec<f64>> {
        let mut train = transform_dataset(&self.train, bank, from - 1)?;
        let mut test = self.test.as_ref().map(|t| transform_dataset(t, bank, from - 1)).transpose()?;
        self.charge_convolution(bank, from - 1);
        let mut out = Vec::with_capacity(bank.n_filter() + 1 - from);
        for filter in &bank.filters()[from - 1..] {
            train = apply_filter(&train, filter)?;
            test = test.map(|t| apply_filter(&t, filter)).transpose()?;
            self.charge_convolution(bank, 1);
            out.push(self.score(&train, test.as_ref())?.0);
        }
        Ok(out)
    }

    /// Evaluate every depth of a fresh bank.
    pub fn evaluate(&self, bank: FilterBank) -> Result<Candidate> {
        let prefix_fitness = self.prefix_values(&bank, 1)?;
        Ok(Candidate::new(bank, prefix_fitness))
    }

    /// Fill in the stale depths of a proposal.
    pub fn complete(&self, proposal: Proposal) -> Result<Candidate> {
        let mut prefix = proposal.known_prefix;
        prefix.extend(self.prefix_values(&proposal.bank, proposal.edited_filter)?);
        Ok(Candidate::new(proposal.bank, prefix))
    }

    fn score(&self, train: &Dataset, test: Option<&Dataset>) -> Result<(f64, SvmModel)> {
        let model = train_svc(train, &self.params.svm)?;
        let eval = test.unwrap_or(train);
        let hits = correct_count(&model, eval)?;
        let n = train.len() as u64;
        let dim = train.n_att as u64;
        let svs = model.support_vectors.len() as u64;
        self.work.set(self.work.get() + n * n * dim + model.iterations as u64 * n + eval.len() as u64 * svs * dim);
        Ok((hits as f64 / eval.len() as f64, model))
    }

    fn charge_convolution(&self, bank: &FilterBank, layers: usize) {
        let records = (self.train.len() + self.test.as_ref().map_or(0, Dataset::len)) as u64;
        let per_layer = records * self.train.n_att as u64 * bank.n_var() as u64;
        self.work.set(self.work.get() + per_layer * layers as u64);
    }
}

fn apply_filter(data: &Dataset, filter: &Filter) -> Result<Dataset> {
    let records = data
        .records
        .iter()
        .map(|r| Ok(Record { attributes: convolve_layer(&r.attributes, filter)?, label: r.label }))
        .collect::<Result<Vec<_>>>()?;
    Ok(data.with_records(records))
}

/// Seeded 80/20 split; both classes must land in the training part.
pub fn holdout_split(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if data.len() < 2 {
        return Err(CsvmError::param("holdout fitness needs at least two records"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let cut = ((data.len() as f64 * 0.8).round() as usize).clamp(1, data.len() - 1);
    let (mut tr, mut te) = (idx[..cut].to_vec(), idx[cut..].to_vec());
    tr.sort_unstable();
    te.sort_unstable();
    let train = data.subset(&tr);
    if !train.has_both_classes() {
        return Err(CsvmError::SingleClass);
    }
    Ok((train, data.subset(&te)))
}

/// Accuracy of `bank` at `depth` on `data` under the given parameters.
pub fn fitness(bank: &FilterBank, depth: usize, data: &Dataset, params: &SsoParams) -> Result<f64> {
    Fitness::new(data, params)?.value(bank, depth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bank: FilterBank,
    /// Fitness at depths 1..=n_filter.
    pub prefix_fitness: Vec<f64>,
    /// Best depth, 1-based; the shallowest one on ties.
    pub p_filter: usize,
}

impl Candidate {
    pub fn new(bank: FilterBank, prefix_fitness: Vec<f64>) -> Self {
        debug_assert_eq!(prefix_fitness.len(), bank.n_filter());
        let p_filter = best_depth(&prefix_fitness);
        Candidate { bank, prefix_fitness, p_filter }
    }

    pub fn best_fitness(&self) -> f64 {
        self.prefix_fitness[self.p_filter - 1]
    }
}

fn best_depth(prefix: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in prefix.iter().enumerate() {
        if v > prefix[best] {
            best = i;
        }
    }
    best + 1
}

/// A bank with one edited filter; depths from `edited_filter` on are stale.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bank: FilterBank,
    /// Cached fitness for depths `1..edited_filter`.
    pub known_prefix: Vec<f64>,
    /// 1-based index of the nudged filter.
    pub edited_filter: usize,
}

pub struct Population {
    pub candidates: Vec<Candidate>,
    pub g_best: usize,
    /// Referent of the "keep the current solution" selection branch.
    pub current: usize,
    pub rng: Rng,
}

impl Population {
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.g_best]
    }

    /// Number of members whose best fitness equals the global best.
    pub fn count_at_best(&self) -> usize {
        let top = self.best().best_fitness();
        self.candidates.iter().filter(|c| c.best_fitness() == top).count()
    }
}

pub fn random_bank(params: &SsoParams, rng: &mut Rng) -> FilterBank {
    let rows = (0..params.n_filter)
        .map(|_| (0..params.n_var).map(|_| rng.gen_range(-params.bound..=params.bound)).collect())
        .collect();
    FilterBank::from_rows(rows).expect("bank shape is valid")
}

pub fn init_population(fitness: &Fitness, seed: u64) -> Result<Population> {
    let params = fitness.params();
    params.validate(fitness.n_att())?;
    let mut rng = rng_from_seed(seed);
    let mut candidates = Vec::with_capacity(params.n_sol);
    for _ in 0..params.n_sol {
        let bank = random_bank(params, &mut rng);
        candidates.push(fitness.evaluate(bank)?);
    }
    let mut g_best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.best_fitness() > candidates[g_best].best_fitness() {
            g_best = i;
        }
    }
    Ok(Population { candidates, g_best, current: g_best, rng })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Existing(usize),
    /// A new random solution that competes against the current one.
    Fresh,
}

/// Map a uniform draw onto the four selection branches.
pub fn select_with(rho: f64, pop: &mut Population, params: &SsoParams) -> Selection {
    let [cg, cp, cw, _] = params.c;
    let sel = if rho < cg {
        Selection::Existing(pop.g_best)
    } else if rho < cg + cp {
        Selection::Existing(pop.rng.gen_range(0..pop.candidates.len()))
    } else if rho < cg + cp + cw {
        Selection::Existing(pop.current)
    } else {
        Selection::Fresh
    };
    if let Selection::Existing(i) = sel {
        pop.current = i;
    }
    sel
}

pub fn select_solution(pop: &mut Population, params: &SsoParams) -> Selection {
    let rho: f64 = pop.rng.gen();
    select_with(rho, pop, params)
}

/// Nudge weight `k` of filter `f` (both 1-based) and redraw every filter
/// after `f`.
pub fn propose_at(cand: &Candidate, params: &SsoParams, f: usize, k: usize, rng: &mut Rng) -> Proposal {
    let mut bank = cand.bank.clone();
    let step = params.step_scale * rng.gen_range(params.step_low..=params.step_high);
    {
        let filters = bank.filters_mut();
        let w = &mut filters[f - 1].weights[k - 1];
        *w = (*w + step).clamp(-params.bound, params.bound);
        for filter in &mut filters[f..] {
            for w in &mut filter.weights {
                *w = rng.gen_range(-params.bound..=params.bound);
            }
        }
    }
    Proposal { bank, known_prefix: cand.prefix_fitness[..f - 1].to_vec(), edited_filter: f }
}

pub fn propose_update(cand: &Candidate, params: &SsoParams, rng: &mut Rng) -> Proposal {
    let f = rng.gen_range(1..=cand.p_filter);
    let k = rng.gen_range(1..=cand.bank.n_var());
    propose_at(cand, params, f, k, rng)
}

/// Replace member `index` unless the candidate is strictly worse, then move
/// the global best onto it when it ties or beats the incumbent best.
pub fn accept_step(pop: &mut Population, index: usize, candidate: Candidate) -> bool {
    if pop.candidates[index].best_fitness() > candidate.best_fitness() {
        return false;
    }
    let best = candidate.best_fitness();
    pop.candidates[index] = candidate;
    if pop.candidates[pop.g_best].best_fitness() <= best {
        pop.g_best = index;
    }
    true
}

/// Debug-build spot check that the reused prefix fitness matches a fresh
/// evaluation at the deepest cached depth.
fn check_cache(fitness: &Fitness, cand: &Candidate, edited: usize) -> Result<()> {
    if cfg!(debug_assertions) && edited > 1 {
        let depth = edited - 1;
        let fresh = fitness.value(&cand.bank, depth)?;
        debug_assert_eq!(fresh, cand.prefix_fitness[depth - 1], "stale prefix fitness at depth {depth}");
    }
    Ok(())
}

/// One generation: select, propose, evaluate, accept.
pub fn step(pop: &mut Population, fitness: &Fitness) -> Result<bool> {
    let params = fitness.params();
    match select_solution(pop, params) {
        Selection::Existing(s) => {
            let proposal = propose_update(&pop.candidates[s], params, &mut pop.rng);
            let edited = proposal.edited_filter;
            let candidate = fitness.complete(proposal)?;
            let accepted = accept_step(pop, s, candidate);
            if accepted {
                check_cache(fitness, &pop.candidates[s], edited)?;
            }
            Ok(accepted)
        }
        Selection::Fresh => {
            let bank = random_bank(params, &mut pop.rng);
            let candidate = fitness.evaluate(bank)?;
            Ok(accept_step(pop, pop.current, candidate))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub generation: usize,
    /// Global best fitness after this generation.
    pub fitness: f64,
    /// First generation at which `fitness` was reached (0 = initialization).
    pub earliest_generation: usize,
    /// `p_filter` of the global best.
    pub depth: usize,
    /// Members whose best fitness equals `fitness`.
    pub n_at_best: usize,
    /// Global best bank truncated to `depth`.
    pub bank: FilterBank,
    pub work: u64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    /// Global best bank truncated to its best depth.
    pub bank: FilterBank,
    pub depth: usize,
    pub fitness: f64,
    pub svm: SvmModel,
    pub checkpoints: Vec<CheckpointStat>,
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trained model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Run `params.n_gen` generations and record global-best statistics after
/// each generation listed in `checkpoints` (0 = after initialization).
pub fn train(data: &Dataset, params: &SsoParams, seed: u64, checkpoints: &[usize]) -> Result<TrainedModel> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.last().is_some_and(|&c| c > params.n_gen) {
        return Err(CsvmError::param(format!(
            "checkpoints {checkpoints:?} must be strictly increasing and at most n_gen = {}",
            params.n_gen
        )));
    }
    let start = Instant::now();
    let fitness = Fitness::new(data, params)?;
    let mut pop = init_population(&fitness, seed)?;
    let mut best = pop.best().best_fitness();
    let mut best_gen = 0;
    let mut stats = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();

    let snapshot = |pop: &Population, gen: usize, best_gen: usize, fitness: &Fitness| -> CheckpointStat {
        let b = pop.best();
        CheckpointStat {
            generation: gen,
            fitness: b.best_fitness(),
            earliest_generation: best_gen,
            depth: b.p_filter,
            n_at_best: pop.count_at_best(),
            bank: b.bank.truncated(b.p_filter).expect("p_filter within bank"),
            work: fitness.work(),
            elapsed_seconds: start.elapsed().as_secs_f64(),
        }
    };

    if next.peek() == Some(&&0) {
        stats.push(snapshot(&pop, 0, best_gen, &fitness));
        next.next();
    }
    for gen in 1..=params.n_gen {
        step(&mut pop, &fitness)?;
        let now = pop.best().best_fitness();
        debug_assert!(now >= best, "global best fell from {best} to {now}");
        if now > best {
            best = now;
            best_gen = gen;
        }
        if next.peek() == Some(&&gen) {
            stats.push(snapshot(&pop, gen, best_gen, &fitness));
            next.next();
        }
    }

    let b = pop.best();
    let bank = b.bank.truncated(b.p_filter)?;
    let svm = fitness.model_at(&bank, b.p_filter)?;
    Ok(TrainedModel { bank, depth: b.p_filter, fitness: b.best_fitness(), svm, checkpoints: stats })
}
