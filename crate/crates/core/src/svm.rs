//! Soft-margin kernel SVM (C-SVC) trained by sequential minimal optimization.
//!
//! The solver follows Platt's two-loop scheme: an outer loop alternates
//! between sweeps over all multipliers and sweeps over the non-bound ones,
//! and the second multiplier is chosen by the largest error gap, falling
//! back to scans that start at a seeded random offset. The full kernel
//! matrix is precomputed; there is no shrinking.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::error::{CsvmError, Result};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    /// `(x.z + 1)^degree`
    Polynomial { degree: u32 },
    /// `exp(-|x - z|^2 / (2 sigma^2))`
    Rbf { sigma: f64 },
    /// `tanh(kappa x.z - delta)`
    Sigmoid { kappa: f64, delta: f64 },
}

impl KernelSpec {
    /// RBF width matching the usual `gamma = 1 / n_att` default.
    pub fn default_rbf(n_att: usize) -> Self {
        KernelSpec::Rbf { sigma: (n_att as f64 / 2.0).sqrt() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(CsvmError::param(format!("rbf sigma must be positive, got {sigma}")))
            }
            KernelSpec::Polynomial { degree } if degree < 1 => {
                Err(CsvmError::param("polynomial degree must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, z),
            KernelSpec::Polynomial { degree } => (dot(x, z) + 1.0).powi(degree as i32),
            KernelSpec::Rbf { sigma } => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            KernelSpec::Sigmoid { kappa, delta } => (kappa * dot(x, z) - delta).tanh(),
        }
    }
}

fn dot(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| a * b).sum()
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != z.len() {
        return Err(CsvmError::DimensionMismatch { expected: x.len(), got: z.len() });
    }
    Ok(spec.eval_unchecked(x, z))
}

/// Solver settings. A `kernel` of `None` means RBF with `2 sigma^2 = n_att`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub kernel: Option<KernelSpec>,
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
    /// Seeds the random scan offsets used when picking the second multiplier.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { kernel: None, c: 1.0, tol: 1e-3, max_passes: 1000, seed: 0 }
    }
}

impl SvmConfig {
    pub fn resolve_kernel(&self, n_att: usize) -> KernelSpec {
        self.kernel.unwrap_or_else(|| KernelSpec::default_rbf(n_att))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `lambda_i * y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c: f64,
    /// False when `max_passes` ran out before the KKT conditions held.
    pub converged: bool,
    /// Number of accepted pair updates.
    pub iterations: usize,
}

impl SvmModel {
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if let Some(sv) = self.support_vectors.first() {
            if sv.len() != x.len() {
                return Err(CsvmError::DimensionMismatch { expected: sv.len(), got: x.len() });
            }
        }
        Ok(self.decision_unchecked(x))
    }

    fn decision_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, &coef)| coef * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("svm model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Sign of the decision value; zero maps to +1.
pub fn predict(model: &SvmModel, record: &[f64]) -> Result<i8> {
    Ok(if model.decision_value(record)? >= 0.0 { 1 } else { -1 })
}

/// Number of records whose predicted label matches.
pub fn correct_count(model: &SvmModel, dataset: &Dataset) -> Result<usize> {
    let mut hits = 0;
    for r in &dataset.records {
        if predict(model, &r.attributes)? == r.label {
            hits += 1;
        }
    }
    Ok(hits)
}

pub fn accuracy(model: &SvmModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(CsvmError::EmptyInput);
    }
    Ok(correct_count(model, dataset)? as f64 / dataset.len() as f64)
}

pub fn train_svc(dataset: &Dataset, config: &SvmConfig) -> Result<SvmModel> {
    let x: Vec<&[f64]> = dataset.records.iter().map(|r| r.attributes.as_slice()).collect();
    let y: Vec<f64> = dataset.records.iter().map(|r| f64::from(r.label)).collect();
    train_on(&x, &y, config)
}

/// Train on raw vectors and labels in {-1, +1}.
pub fn train_on(x: &[&[f64]], y: &[f64], config: &SvmConfig) -> Result<SvmModel> {
    train_with_multipliers(x, y, config).map(|(model, _)| model)
}

/// Like [`train_on`], also returning every multiplier `lambda_i`, including
/// the zero ones.
pub fn train_with_multipliers(x: &[&[f64]], y: &[f64], config: &SvmConfig) -> Result<(SvmModel, Vec<f64>)> {
    if !(config.c > 0.0) || !(config.tol > 0.0) {
        return Err(CsvmError::param("C and tol must be positive"));
    }
    if x.is_empty() {
        return Err(CsvmError::EmptyInput);
    }
    if x.len() != y.len() {
        return Err(CsvmError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let dim = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(CsvmError::DimensionMismatch { expected: dim, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(CsvmError::NonFinite(i));
        }
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(CsvmError::SingleClass);
    }
    let kernel = config.resolve_kernel(dim);
    kernel.validate()?;

    let n = x.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval_unchecked(x[i], x[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }

    let mut solver = Smo {
        n,
        gram,
        y,
        c: config.c,
        tol: config.tol,
        alpha: vec![0.0; n],
        errors: y.iter().map(|v| -v).collect(),
        bias: 0.0,
        rng: rng_from_seed(config.seed),
        iterations: 0,
    };
    let converged = solver.run(config.max_passes);

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for i in 0..n {
        if solver.alpha[i] > 0.0 {
            support_vectors.push(x[i].to_vec());
            dual_coefs.push(solver.alpha[i] * y[i]);
        }
    }
    let model = SvmModel {
        support_vectors,
        dual_coefs,
        bias: solver.bias,
        kernel,
        c: config.c,
        converged,
        iterations: solver.iterations,
    };
    Ok((model, solver.alpha))
}

struct Smo<'a> {
    n: usize,
    gram: Vec<f64>,
    y: &'a [f64],
    c: f64,
    tol: f64,
    alpha: Vec<f64>,
    /// `f(x_i) - y_i` under the current multipliers and bias.
    errors: Vec<f64>,
    bias: f64,
    rng: Rng,
    iterations: usize,
}

const STEP_EPS: f64 = 1e-12;

impl Smo<'_> {
    fn k(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.n + j]
    }

    fn is_free(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.c
    }

    /// Returns true when the last full sweep found no KKT violator.
    fn run(&mut self, max_passes: usize) -> bool {
        let mut examine_all = true;
        let mut passes = 0;
        loop {
            let mut changed = 0;
            if examine_all {
                for i in 0..self.n {
                    changed += usize::from(self.examine(i));
                }
            } else {
                for i in 0..self.n {
                    if self.is_free(i) {
                        changed += usize::from(self.examine(i));
                    }
                }
            }
            passes += 1;
            if examine_all && changed == 0 {
                self.refit_bias();
                if !(0..self.n).any(|i| self.violates_kkt(i)) {
                    return true;
                }
            }
            if examine_all {
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
            if passes >= max_passes {
                return false;
            }
        }
    }

    /// Reset the bias from the KKT conditions: the mean over free
    /// multipliers, or the middle of the feasible interval when none is free.
    fn refit_bias(&mut self) {
        let mut free_sum = 0.0;
        let mut free_n = 0usize;
        let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..self.n {
            let b = self.bias - self.errors[i];
            if self.is_free(i) {
                free_sum += b;
                free_n += 1;
            } else if (self.alpha[i] == 0.0) == (self.y[i] > 0.0) {
                lower = lower.max(b);
            } else {
                upper = upper.min(b);
            }
        }
        let new_bias = if free_n > 0 {
            free_sum / free_n as f64
        } else if lower.is_finite() && upper.is_finite() {
            0.5 * (lower + upper)
        } else if lower.is_finite() {
            lower
        } else {
            upper
        };
        let db = new_bias - self.bias;
        for e in &mut self.errors {
            *e += db;
        }
        self.bias = new_bias;
    }

    fn violates_kkt(&self, i: usize) -> bool {
        let r = self.errors[i] * self.y[i];
        (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > 0.0)
    }

    fn examine(&mut self, i2: usize) -> bool {
        if !self.violates_kkt(i2) {
            return false;
        }
        let n = self.n;
        let e2 = self.errors[i2];

        // Largest |E1 - E2| among free multipliers; the scan starts at a
        // random offset so ties do not always favor low indices.
        let start = self.rng.gen_range(0..n);
        let mut best: Option<(usize, f64)> = None;
        for off in 0..n {
            let i1 = (start + off) % n;
            if i1 != i2 && self.is_free(i1) {
                let gap = (self.errors[i1] - e2).abs();
                if best.is_none_or(|(_, g)| gap > g) {
                    best = Some((i1, gap));
                }
            }
        }
        if let Some((i1, _)) = best {
            if self.take_step(i1, i2) {
                return true;
            }
        }

        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.is_free(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }

    /// Change of the dual objective when multipliers `i1`, `i2` move by
    /// `d1`, `d2` (with `y1 d1 + y2 d2 = 0`).
    fn objective_delta(&self, i1: usize, i2: usize, d1: f64, d2: f64) -> f64 {
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let g1 = self.errors[i1] + y1 - self.bias;
        let g2 = self.errors[i2] + y2 - self.bias;
        d1 + d2
            - y1 * d1 * g1
            - y2 * d2 * g2
            - 0.5 * (d1 * d1 * self.k(i1, i1) + d2 * d2 * self.k(i2, i2) + 2.0 * y1 * y2 * d1 * d2 * self.k(i1, i2))
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;
        let c = self.c;

        let (lo, hi) = if y1 != y2 {
            ((a2 - a1).max(0.0), (c + a2 - a1).min(c))
        } else {
            ((a1 + a2 - c).max(0.0), (a1 + a2).min(c))
        };
        if hi - lo <= STEP_EPS * c {
            return false;
        }

        let k11 = self.k(i1, i1);
        let k22 = self.k(i2, i2);
        let k12 = self.k(i1, i2);
        let eta = k11 + k22 - 2.0 * k12;

        let mut new2 = if eta > 0.0 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Objective is linear or convex along the line: take the better end.
            let at = |v: f64| self.objective_delta(i1, i2, s * (a2 - v), v - a2);
            let (w_lo, w_hi) = (at(lo), at(hi));
            if w_lo > w_hi + STEP_EPS {
                lo
            } else if w_hi > w_lo + STEP_EPS {
                hi
            } else {
                a2
            }
        };
        if new2 < STEP_EPS * c {
            new2 = 0.0;
        } else if new2 > c * (1.0 - STEP_EPS) {
            new2 = c;
        }
        if (new2 - a2).abs() < STEP_EPS * (new2 + a2 + STEP_EPS) {
            return false;
        }
        let mut new1 = a1 + s * (a2 - new2);
        if new1 < STEP_EPS * c {
            new1 = 0.0;
        } else if new1 > c * (1.0 - STEP_EPS) {
            new1 = c;
        }

        let d1 = new1 - a1;
        let d2 = new2 - a2;
        if cfg!(debug_assertions) {
            let gain = self.objective_delta(i1, i2, d1, d2);
            let scale = 1.0 + c * self.n as f64;
            debug_assert!(gain >= -1e-9 * scale, "dual objective decreased by {gain}");
        }

        let b1 = self.bias - e1 - y1 * d1 * k11 - y2 * d2 * k12;
        let b2 = self.bias - e2 - y1 * d1 * k12 - y2 * d2 * k22;
        let new_bias = if new1 > 0.0 && new1 < c {
            b1
        } else if new2 > 0.0 && new2 < c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = new_bias - self.bias;

        let n = self.n;
        for k in 0..n {
            self.errors[k] += y1 * d1 * self.gram[i1 * n + k] + y2 * d2 * self.gram[i2 * n + k] + db;
        }
        self.alpha[i1] = new1;
        self.alpha[i2] = new2;
        self.bias = new_bias;
        self.iterations += 1;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Record;

    fn ds(points: &[(&[f64], i8)]) -> Dataset {
        Dataset::new(
            "t",
            points.iter().map(|(x, l)| Record { attributes: x.to_vec(), label: *l }).collect(),
        )
        .unwrap()
    }

    fn linear() -> SvmConfig {
        SvmConfig { kernel: Some(KernelSpec::Linear), ..SvmConfig::default() }
    }

    #[test]
    fn rbf_values() {
        let k = KernelSpec::Rbf { sigma: 1.0 };
        assert_eq!(kernel_eval(&k, &[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0);
        let v = kernel_eval(&k, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_and_polynomial_values() {
        let s = KernelSpec::Sigmoid { kappa: 3.7, delta: 0.0 };
        assert_eq!(kernel_eval(&s, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let p = KernelSpec::Polynomial { degree: 2 };
        assert_eq!(kernel_eval(&p, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 144.0);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        assert!(matches!(
            kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]),
            Err(CsvmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_kernels_rejected() {
        assert!(KernelSpec::Rbf { sigma: 0.0 }.validate().is_err());
        assert!(KernelSpec::Polynomial { degree: 0 }.validate().is_err());
    }

    #[test]
    fn separable_pair() {
        let data = ds(&[(&[-1.0], -1), (&[1.0], 1)]);
        let model = train_svc(&data, &linear()).unwrap();
        assert_eq!(predict(&model, &[-1.0]).unwrap(), -1);
        assert_eq!(predict(&model, &[1.0]).unwrap(), 1);
        // The boundary sits at 0; a zero decision value maps to +1.
        assert!(model.decision_value(&[0.0]).unwrap().abs() < 1e-12);
        assert_eq!(predict(&model, &[0.0]).unwrap(), 1);
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
        assert!(model.dual_coefs.iter().sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn xor_with_rbf() {
        let data = ds(&[(&[0.0, 0.0], -1), (&[1.0, 1.0], -1), (&[1.0, 0.0], 1), (&[0.0, 1.0], 1)]);
        let cfg = SvmConfig { kernel: Some(KernelSpec::Rbf { sigma: 0.5 }), c: 10.0, ..SvmConfig::default() };
        let model = train_svc(&data, &cfg).unwrap();
        assert!(model.converged);
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
        assert_eq!(predict(&model, &[1.0, 1.0]).unwrap(), -1);
    }

    #[test]
    fn constant_predictor_accuracy() {
        let model = SvmModel {
            support_vectors: vec![],
            dual_coefs: vec![],
            bias: 1.0,
            kernel: KernelSpec::Linear,
            c: 1.0,
            converged: true,
            iterations: 0,
        };
        let data = ds(&[(&[0.0], 1), (&[1.0], -1), (&[2.0], -1)]);
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn training_errors() {
        let one_class = ds(&[(&[0.0], 1), (&[1.0], 1)]);
        assert!(matches!(train_svc(&one_class, &linear()), Err(CsvmError::SingleClass)));
        let x: Vec<&[f64]> = vec![&[f64::NAN], &[1.0]];
        assert!(matches!(train_on(&x, &[1.0, -1.0], &linear()), Err(CsvmError::NonFinite(0))));
        let bad_c = SvmConfig { c: 0.0, ..linear() };
        assert!(train_svc(&ds(&[(&[0.0], 1), (&[1.0], -1)]), &bad_c).is_err());
        let empty = Dataset { records: vec![], ..ds(&[(&[0.0], 1)]) };
        let model = train_svc(&ds(&[(&[0.0], 1), (&[1.0], -1)]), &linear()).unwrap();
        assert!(matches!(accuracy(&model, &empty), Err(CsvmError::EmptyInput)));
        assert!(predict(&model, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let data = ds(&[(&[0.0, 1.0], -1), (&[1.0, 0.0], 1), (&[0.2, 0.9], -1)]);
        let model = train_svc(&data, &SvmConfig::default()).unwrap();
        assert_eq!(SvmModel::from_json(&model.to_json()).unwrap(), model);
    }
}
