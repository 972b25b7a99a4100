//! L9(3^4) orthogonal-array tuning of the optimizer parameters.
//!
//! Factors, in column order: `n_filter`, `n_sol`, `n_var`, `c`. Each try of
//! the array is trained several times on one small fold and the tries are
//! ranked by best accuracy, then runtime, then how many repetitions reached
//! that accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::error::{CsvmError, Result};
use crate::rng::derive_seed;
use crate::sso::{train, SsoParams};

/// Runtimes within this fraction of the fastest tied try count as tied.
pub const RUNTIME_TIE_GAP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OaDesign {
    pub rows: Vec<[u8; 4]>,
}

/// The canonical L9(3^4) array.
pub fn build_l9() -> OaDesign {
    OaDesign {
        rows: vec![
            [1, 1, 1, 1],
            [1, 2, 2, 2],
            [1, 3, 3, 3],
            [2, 1, 2, 3],
            [2, 2, 3, 1],
            [2, 3, 1, 2],
            [3, 1, 3, 2],
            [3, 2, 1, 3],
            [3, 3, 2, 1],
        ],
    }
}

impl OaDesign {
    /// The nine-row assignment printed alongside the published tuning
    /// results. It is not orthogonal (column 2 holds level 3 four times) but
    /// matches the published per-try settings.
    pub fn published() -> OaDesign {
        OaDesign {
            rows: vec![
                [1, 1, 1, 1],
                [1, 2, 2, 2],
                [1, 3, 3, 3],
                [2, 3, 2, 1],
                [2, 3, 3, 2],
                [2, 1, 1, 3],
                [3, 2, 3, 1],
                [3, 3, 1, 2],
                [3, 1, 2, 3],
            ],
        }
    }

    /// Every level appears equally often in every column.
    pub fn is_level_balanced(&self) -> bool {
        let per_level = self.rows.len() / 3;
        (0..4).all(|col| (1..=3).all(|lvl| self.rows.iter().filter(|r| r[col] == lvl).count() == per_level))
    }

    /// Every ordered level pair appears exactly once in every column pair.
    pub fn has_pairwise_coverage(&self) -> bool {
        for a in 0..4 {
            for b in a + 1..4 {
                for la in 1..=3 {
                    for lb in 1..=3 {
                        if self.rows.iter().filter(|r| r[a] == la && r[b] == lb).count() != 1 {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    pub n_filter: [usize; 3],
    pub n_sol: [usize; 3],
    /// `n_var` at level `l` is `ceil(quarters[l] * n_att / 4)`.
    pub n_var_quarters: [usize; 3],
    pub c: [[f64; 4]; 3],
}

impl Default for LevelTable {
    fn default() -> Self {
        LevelTable {
            n_filter: [1, 3, 4],
            n_sol: [25, 50, 75],
            n_var_quarters: [1, 2, 3],
            c: [[0.40, 0.30, 0.20, 0.10], [0.35, 0.25, 0.15, 0.25], [0.45, 0.30, 0.20, 0.05]],
        }
    }
}

impl LevelTable {
    pub fn n_var(&self, level: u8, n_att: usize) -> usize {
        let q = self.n_var_quarters[level as usize - 1];
        (q * n_att).div_ceil(4).clamp(1, n_att)
    }
}

/// Override the four tuned factors of `base` with the levels of one row.
pub fn params_for_try(row: [u8; 4], n_att: usize, levels: &LevelTable, base: &SsoParams) -> Result<SsoParams> {
    if row.iter().any(|l| !(1..=3).contains(l)) {
        return Err(CsvmError::param(format!("level codes {row:?} must be in 1..=3")));
    }
    if n_att == 0 {
        return Err(CsvmError::param("n_att must be positive"));
    }
    let at = |l: u8| l as usize - 1;
    Ok(SsoParams {
        n_filter: levels.n_filter[at(row[0])],
        n_sol: levels.n_sol[at(row[1])],
        n_var: levels.n_var(row[2], n_att),
        c: levels.c[at(row[3])],
        ..base.clone()
    })
}

/// Statistics of one try at one checkpoint, over all repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAgg {
    pub generation: usize,
    /// Best fitness over repetitions.
    pub phi: f64,
    /// Earliest generation at which a repetition reached `phi`.
    pub earliest_generation: usize,
    /// Best depth of that repetition's global best.
    pub depth: usize,
    /// Repetitions that reached `phi`.
    pub n_at_best: usize,
    /// Summed deterministic cost up to this checkpoint.
    pub work: u64,
    /// Summed wall-clock seconds up to this checkpoint.
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TryStats {
    /// 1-based row of the design.
    pub try_id: usize,
    pub params: SsoParams,
    pub checkpoints: Vec<CheckpointAgg>,
}

/// Train every try `reps` times on `fold` and aggregate at `checkpoints`.
pub fn run_trials(
    fold: &Dataset,
    design: &OaDesign,
    levels: &LevelTable,
    base: &SsoParams,
    reps: usize,
    checkpoints: &[usize],
    seed: u64,
) -> Result<Vec<TryStats>> {
    if reps == 0 {
        return Err(CsvmError::param("reps must be at least 1"));
    }
    if fold.is_empty() {
        return Err(CsvmError::EmptyInput);
    }
    let n_gen = *checkpoints.last().ok_or_else(|| CsvmError::param("at least one checkpoint is required"))?;
    let tries = design
        .rows
        .iter()
        .map(|&row| Ok(SsoParams { n_gen, ..params_for_try(row, fold.n_att, levels, base)? }))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..tries.len()).flat_map(|t| (0..reps).map(move |r| (t, r))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(t, r)| train(fold, &tries[t], derive_seed(seed, &[t as u64, r as u64]), checkpoints))
        .collect::<Result<Vec<_>>>()?;

    let stats = tries
        .into_iter()
        .enumerate()
        .map(|(t, params)| {
            let reps_of_try = &runs[t * reps..(t + 1) * reps];
            let checkpoints = (0..checkpoints.len())
                .map(|ci| {
                    let at: Vec<_> = reps_of_try.iter().map(|m| &m.checkpoints[ci]).collect();
                    let phi = at.iter().map(|c| c.fitness).fold(f64::NEG_INFINITY, f64::max);
                    let best = at
                        .iter()
                        .filter(|c| c.fitness == phi)
                        .min_by_key(|c| c.earliest_generation)
                        .expect("some repetition attains the maximum");
                    CheckpointAgg {
                        generation: best.generation,
                        phi,
                        earliest_generation: best.earliest_generation,
                        depth: best.depth,
                        n_at_best: at.iter().filter(|c| c.fitness == phi).count(),
                        work: at.iter().map(|c| c.work).sum(),
                        runtime_seconds: at.iter().map(|c| c.elapsed_seconds).sum(),
                    }
                })
                .collect();
            TryStats { try_id: t + 1, params, checkpoints }
        })
        .collect();
    Ok(stats)
}

/// Which runtime Rule 2 compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuntimeSource {
    /// Deterministic cost proxy; keeps selection reproducible.
    #[default]
    Work,
    Wall,
}

/// The three numbers the selection rules look at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrySummary {
    pub phi: f64,
    pub runtime: f64,
    pub n_at_best: usize,
}

/// Rule 1: highest accuracy. Rule 2: among those, runtimes within `gap` of
/// the fastest. Rule 3: most repetitions at the best accuracy. Remaining
/// ties go to the lowest index. Returns a 0-based index.
pub fn select_by_rules(tries: &[TrySummary], gap: f64) -> usize {
    assert!(!tries.is_empty(), "no tries to select from");
    let phi = tries.iter().map(|t| t.phi).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..tries.len()).filter(|&i| tries[i].phi == phi).collect();
    let fastest = tied.iter().map(|&i| tries[i].runtime).fold(f64::INFINITY, f64::min);
    let quick: Vec<usize> = tied.into_iter().filter(|&i| tries[i].runtime <= fastest * (1.0 + gap)).collect();
    let most = quick.iter().map(|&i| tries[i].n_at_best).max().expect("nonempty");
    quick.into_iter().find(|&i| tries[i].n_at_best == most).expect("nonempty")
}

fn summaries(stats: &[TryStats], ci: usize, source: RuntimeSource) -> Vec<TrySummary> {
    stats
        .iter()
        .map(|s| {
            let c = &s.checkpoints[ci];
            let runtime = match source {
                RuntimeSource::Work => c.work as f64,
                RuntimeSource::Wall => c.runtime_seconds,
            };
            TrySummary { phi: c.phi, runtime, n_at_best: c.n_at_best }
        })
        .collect()
}

/// Winning try (0-based) at checkpoint index `ci`.
pub fn select_best_try(stats: &[TryStats], ci: usize, source: RuntimeSource) -> usize {
    select_by_rules(&summaries(stats, ci, source), RUNTIME_TIE_GAP)
}

/// Index of the earliest checkpoint at which the overall best accuracy
/// appears in any try.
pub fn earliest_peak(phi_by_checkpoint: &[Vec<f64>]) -> usize {
    let top = phi_by_checkpoint.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    phi_by_checkpoint.iter().position(|row| row.contains(&top)).expect("nonempty")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub design: OaDesign,
    pub checkpoints: Vec<usize>,
    pub stats: Vec<TryStats>,
    /// 1-based winning row.
    pub selected_try: usize,
    pub runtime_source: RuntimeSource,
    /// Winning parameters with `n_gen` set to the peak checkpoint.
    pub params: SsoParams,
}

impl TuneReport {
    /// One row per try with runtime, G, f, N and 100·Φ per checkpoint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("try");
        for g in &self.checkpoints {
            out.push_str(&format!(",T{g},W{g},G{g},f{g},N{g},F{g}"));
        }
        out.push('\n');
        for s in &self.stats {
            out.push_str(&s.try_id.to_string());
            for c in &s.checkpoints {
                out.push_str(&format!(
                    ",{:.3},{},{},{},{},{}",
                    c.runtime_seconds,
                    c.work,
                    c.earliest_generation,
                    c.depth,
                    c.n_at_best,
                    100.0 * c.phi
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// Run the trials and pick parameters: the checkpoint is the earliest one
/// where the overall best accuracy shows up, and the rules pick the try.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    fold: &Dataset,
    design: &OaDesign,
    levels: &LevelTable,
    base: &SsoParams,
    reps: usize,
    checkpoints: &[usize],
    seed: u64,
    source: RuntimeSource,
) -> Result<TuneReport> {
    let stats = run_trials(fold, design, levels, base, reps, checkpoints, seed)?;
    let phi: Vec<Vec<f64>> = (0..checkpoints.len()).map(|ci| stats.iter().map(|s| s.checkpoints[ci].phi).collect()).collect();
    let ci = earliest_peak(&phi);
    let winner = select_best_try(&stats, ci, source);
    let params = SsoParams { n_gen: checkpoints[ci], ..stats[winner].params.clone() };
    Ok(TuneReport {
        design: design.clone(),
        checkpoints: checkpoints.to_vec(),
        stats,
        selected_try: winner + 1,
        runtime_source: source,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Record;

    #[test]
    fn canonical_array_is_orthogonal() {
        let d = build_l9();
        assert_eq!(d.rows[0], [1, 1, 1, 1]);
        assert_eq!(d.rows[3], [2, 1, 2, 3]);
        assert!(d.is_level_balanced());
        assert!(d.has_pairwise_coverage());
    }

    #[test]
    fn published_array_is_not() {
        let d = OaDesign::published();
        assert!(!d.is_level_balanced());
        assert!(!d.has_pairwise_coverage());
    }

    #[test]
    fn level_mapping() {
        let lv = LevelTable::default();
        let base = SsoParams::default();
        assert_eq!(params_for_try([1, 1, 1, 1], 13, &lv, &base).unwrap().n_var, 4);
        assert_eq!(params_for_try([1, 1, 3, 1], 14, &lv, &base).unwrap().n_var, 11);
        assert_eq!(params_for_try([1, 1, 3, 1], 2, &lv, &base).unwrap().n_var, 2);
        assert_eq!(params_for_try([1, 1, 1, 1], 2, &lv, &base).unwrap().n_var, 1);
        let p = params_for_try([3, 2, 1, 2], 9, &lv, &base).unwrap();
        assert_eq!(p.c, [0.35, 0.25, 0.15, 0.25]);
        assert_eq!((p.n_filter, p.n_sol), (4, 50));
        assert!(params_for_try([0, 1, 1, 1], 9, &lv, &base).is_err());
        for c in lv.c {
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn s(phi: f64, runtime: f64, n: usize) -> TrySummary {
        TrySummary { phi, runtime, n_at_best: n }
    }

    #[test]
    fn rule_chain() {
        // Rule 1 alone.
        assert_eq!(select_by_rules(&[s(0.8, 1.0, 9), s(0.9, 50.0, 1)], 0.05), 1);
        // Rule 2 beats Rule 3 outside the gap.
        assert_eq!(select_by_rules(&[s(0.9, 10.0, 1), s(0.9, 20.0, 15)], 0.05), 0);
        // Within the gap, Rule 3 decides.
        assert_eq!(select_by_rules(&[s(0.9, 10.0, 1), s(0.9, 10.2, 15)], 0.05), 1);
        // Full tie goes to the lowest index.
        assert_eq!(select_by_rules(&[s(0.9, 10.0, 3), s(0.9, 10.0, 3)], 0.05), 0);
        // With no gap only the exact minimum survives.
        assert_eq!(select_by_rules(&[s(0.9, 10.0, 1), s(0.9, 10.2, 15)], 0.0), 0);
    }

    #[test]
    fn peak_checkpoint() {
        assert_eq!(earliest_peak(&[vec![0.8, 0.85], vec![0.8, 0.85], vec![0.86, 0.8]]), 2);
        assert_eq!(earliest_peak(&[vec![0.9, 0.85], vec![0.9, 0.9]]), 0);
    }

    fn toy() -> Dataset {
        let records = (0..24)
            .map(|i| {
                let x = i as f64 / 24.0;
                let label = if (i * 7) % 5 < 2 { 1 } else { -1 };
                Record { attributes: vec![x, (x * 3.0).fract(), 1.0 - x], label }
            })
            .collect();
        Dataset::new("toy", records).unwrap()
    }

    #[test]
    fn trials_are_reproducible_and_monotone() {
        let data = toy();
        let lv = LevelTable { n_sol: [2, 3, 4], ..LevelTable::default() };
        let base = SsoParams::default();
        let a = run_trials(&data, &build_l9(), &lv, &base, 2, &[2, 4], 5).unwrap();
        let b = run_trials(&data, &build_l9(), &lv, &base, 2, &[2, 4], 5).unwrap();
        assert_eq!(a.len(), 9);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.checkpoints[1].phi >= x.checkpoints[0].phi);
            assert!(x.checkpoints[0].n_at_best >= 1 && x.checkpoints[0].n_at_best <= 2);
            for (cx, cy) in x.checkpoints.iter().zip(&y.checkpoints) {
                assert_eq!((cx.phi, cx.earliest_generation, cx.depth, cx.n_at_best, cx.work), (cy.phi, cy.earliest_generation, cy.depth, cy.n_at_best, cy.work));
            }
        }
    }

    #[test]
    fn single_rep_phi_is_that_run() {
        let data = toy();
        let lv = LevelTable { n_sol: [2, 3, 4], ..LevelTable::default() };
        let base = SsoParams::default();
        let design = OaDesign { rows: vec![[2, 1, 2, 3]] };
        let stats = run_trials(&data, &design, &lv, &base, 1, &[3], 9).unwrap();
        let p = SsoParams { n_gen: 3, ..params_for_try([2, 1, 2, 3], 3, &lv, &base).unwrap() };
        let run = train(&data, &p, derive_seed(9, &[0, 0]), &[3]).unwrap();
        assert_eq!(stats[0].checkpoints[0].phi, run.fitness);
        assert_eq!(stats[0].checkpoints[0].n_at_best, 1);
    }

    #[test]
    fn tune_sets_generation_budget() {
        let data = toy();
        let lv = LevelTable { n_sol: [2, 3, 4], ..LevelTable::default() };
        let r = tune(&data, &build_l9(), &lv, &SsoParams::default(), 1, &[1, 3], 2, RuntimeSource::Work).unwrap();
        assert!(r.checkpoints.contains(&r.params.n_gen));
        assert!((1..=9).contains(&r.selected_try));
        assert_eq!(r.to_csv().lines().count(), 10);
        assert!(r.to_csv().starts_with("try,T1,W1,G1,f1,N1,F1,T3,"));
    }
}
