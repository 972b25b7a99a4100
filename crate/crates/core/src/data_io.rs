//! Dataset loading, normalization and fold partitioning.
//!
//! Two input layouts are supported: sparse `label idx:val ...` lines with
//! 1-based indices, and delimited rows with a label column. Records with a
//! missing value (`?`) are dropped while parsing.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CsvmError, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub attributes: Vec<f64>,
    /// Class tag, always -1 or +1.
    pub label: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub n_att: usize,
    pub records: Vec<Record>,
    /// Per-attribute divisor applied by [`normalize`]; all ones for raw data.
    pub norm_divisors: Vec<f64>,
    /// Per-attribute shift subtracted before dividing; zero unless the
    /// column held negative values.
    pub norm_shifts: Vec<f64>,
    /// Raw label values mapped to -1 and +1, in that order.
    pub class_names: [String; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Sparse,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = CsvmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" | "libsvm" => Ok(Format::Sparse),
            "csv" => Ok(Format::Csv),
            other => Err(CsvmError::param(format!("unknown format {other:?}"))),
        }
    }
}

impl Dataset {
    /// Build a dataset from already-mapped records.
    pub fn new(name: impl Into<String>, records: Vec<Record>) -> Result<Self> {
        let n_att = records.first().map(|r| r.attributes.len()).ok_or(CsvmError::EmptyInput)?;
        for r in &records {
            if r.attributes.len() != n_att {
                return Err(CsvmError::DimensionMismatch { expected: n_att, got: r.attributes.len() });
            }
            if r.label != 1 && r.label != -1 {
                return Err(CsvmError::param(format!("label {} is not -1 or +1", r.label)));
            }
        }
        Ok(Dataset {
            name: name.into(),
            n_att,
            records,
            norm_divisors: vec![1.0; n_att],
            norm_shifts: vec![0.0; n_att],
            class_names: ["-1".to_string(), "1".to_string()],
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.records.iter().any(|r| r.label > 0);
        let neg = self.records.iter().any(|r| r.label < 0);
        pos && neg
    }

    /// A new dataset holding the given records (by index), same metadata.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.metadata_clone()
        }
    }

    pub(crate) fn with_records(&self, records: Vec<Record>) -> Dataset {
        Dataset { records, ..self.metadata_clone() }
    }

    fn metadata_clone(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            n_att: self.n_att,
            records: Vec::new(),
            norm_divisors: self.norm_divisors.clone(),
            norm_shifts: self.norm_shifts.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Canonical CSV dump: attributes at full precision, label last as -1/1.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            for v in &r.attributes {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(if r.label > 0 { "1" } else { "-1" });
            out.push('\n');
        }
        out
    }
}

/// Load a dataset from a file; the dataset name is the file stem.
pub fn load_dataset(path: &Path, format: Format, label_column: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut ds = parse_dataset(std::io::BufReader::new(file), format, label_column)?;
    ds.name = name;
    Ok(ds)
}

/// Parse a dataset from text. `label_column` only applies to CSV and
/// defaults to the last column.
pub fn parse_dataset<R: BufRead>(source: R, format: Format, label_column: Option<usize>) -> Result<Dataset> {
    let mut raw: Vec<(Vec<f64>, String)> = Vec::new();
    let mut width: Option<usize> = None;

    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed = match format {
            Format::Sparse => parse_sparse_line(trimmed, lineno)?,
            Format::Csv => parse_csv_line(trimmed, lineno, label_column, &mut width)?,
        };
        if let Some(row) = parsed {
            raw.push(row);
        }
    }
    if raw.is_empty() {
        return Err(CsvmError::EmptyInput);
    }

    let n_att = raw.iter().map(|(a, _)| a.len()).max().unwrap_or(0);
    if n_att == 0 {
        return Err(CsvmError::Parse { line: 1, message: "no attributes".into() });
    }
    let (pos_label, class_names) = label_mapping(raw.iter().map(|(_, l)| l.as_str()))?;

    let records = raw
        .into_iter()
        .map(|(mut attributes, label)| {
            attributes.resize(n_att, 0.0);
            let label = if pos_label.as_deref() == Some(label.as_str()) { 1 } else { -1 };
            Record { attributes, label }
        })
        .collect();

    Ok(Dataset {
        name: String::new(),
        n_att,
        records,
        norm_divisors: vec![1.0; n_att],
        norm_shifts: vec![0.0; n_att],
        class_names,
    })
}

fn parse_number(tok: &str, lineno: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| CsvmError::Parse { line: lineno, message: format!("unparsable number {tok:?}") })?;
    if !v.is_finite() {
        return Err(CsvmError::Parse { line: lineno, message: format!("non-finite value {tok:?}") });
    }
    Ok(v)
}

fn parse_sparse_line(line: &str, lineno: usize) -> Result<Option<(Vec<f64>, String)>> {
    let mut toks = line.split_whitespace();
    let label = toks.next().unwrap_or_default().to_string();
    let mut attrs: Vec<f64> = Vec::new();
    for tok in toks {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| CsvmError::Parse { line: lineno, message: format!("expected idx:val, got {tok:?}") })?;
        let idx: usize = idx
            .parse()
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| CsvmError::Parse { line: lineno, message: format!("bad index {idx:?}") })?;
        if val == "?" {
            return Ok(None);
        }
        let val = parse_number(val, lineno)?;
        if attrs.len() < idx {
            attrs.resize(idx, 0.0);
        }
        attrs[idx - 1] = val;
    }
    Ok(Some((attrs, label)))
}

fn parse_csv_line(
    line: &str,
    lineno: usize,
    label_column: Option<usize>,
    width: &mut Option<usize>,
) -> Result<Option<(Vec<f64>, String)>> {
    let fields: Vec<&str> = if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    };
    match *width {
        None => *width = Some(fields.len()),
        Some(w) if w != fields.len() => {
            return Err(CsvmError::Parse {
                line: lineno,
                message: format!("expected {w} columns, found {}", fields.len()),
            })
        }
        _ => {}
    }
    if fields.len() < 2 {
        return Err(CsvmError::Parse { line: lineno, message: "need at least one attribute and a label".into() });
    }
    let label_idx = label_column.unwrap_or(fields.len() - 1);
    if label_idx >= fields.len() {
        return Err(CsvmError::Parse { line: lineno, message: format!("label column {label_idx} out of range") });
    }
    if fields.contains(&"?") {
        return Ok(None);
    }
    let mut attrs = Vec::with_capacity(fields.len() - 1);
    for (i, f) in fields.iter().enumerate() {
        if i != label_idx {
            attrs.push(parse_number(f, lineno)?);
        }
    }
    Ok(Some((attrs, fields[label_idx].to_string())))
}

/// Map raw label strings to -1/+1. Numeric labels already in {-1, +1} keep
/// their sign; otherwise the smaller of the two values (numerically when
/// both parse, lexicographically otherwise) becomes -1.
/// Returns the raw value that maps to +1 (if any) and the class names.
fn label_mapping<'a>(labels: impl Iterator<Item = &'a str>) -> Result<(Option<String>, [String; 2])> {
    let distinct: BTreeSet<String> = labels.map(str::to_string).collect();
    if distinct.len() > 2 {
        return Err(CsvmError::TooManyClasses(distinct.into_iter().collect()));
    }
    let values: Vec<String> = distinct.into_iter().collect();
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();

    let (neg, pos): (Option<String>, Option<String>) = match &numeric {
        Some(nums) if nums.iter().all(|&x| x == 1.0 || x == -1.0) => {
            let neg = values.iter().zip(nums).find(|(_, &x)| x < 0.0).map(|(v, _)| v.clone());
            let pos = values.iter().zip(nums).find(|(_, &x)| x > 0.0).map(|(v, _)| v.clone());
            (neg, pos)
        }
        Some(nums) if values.len() == 2 => {
            if nums[0] < nums[1] {
                (Some(values[0].clone()), Some(values[1].clone()))
            } else {
                (Some(values[1].clone()), Some(values[0].clone()))
            }
        }
        Some(nums) => {
            if nums[0] > 0.0 {
                (None, Some(values[0].clone()))
            } else {
                (Some(values[0].clone()), None)
            }
        }
        None if values.len() == 2 => (Some(values[0].clone()), Some(values[1].clone())),
        None => (Some(values[0].clone()), None),
    };
    let names = [
        neg.unwrap_or_else(|| "-1".into()),
        pos.clone().unwrap_or_else(|| "1".into()),
    ];
    Ok((pos, names))
}

/// Max-divisor scaling: shift a column by its minimum only when it holds
/// negatives, then divide by the column maximum. All-zero columns keep a
/// divisor of 1.
pub fn normalize(dataset: &Dataset) -> Dataset {
    let n_att = dataset.n_att;
    let mut shifts = vec![0.0; n_att];
    let mut divisors = vec![1.0; n_att];
    for a in 0..n_att {
        let min = dataset.records.iter().map(|r| r.attributes[a]).fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            shifts[a] = min;
        }
        let max = dataset
            .records
            .iter()
            .map(|r| (r.attributes[a] - shifts[a]).abs())
            .fold(0.0, f64::max);
        if max > 0.0 {
            divisors[a] = max;
        }
    }
    let records = dataset
        .records
        .iter()
        .map(|r| Record {
            attributes: r
                .attributes
                .iter()
                .enumerate()
                .map(|(a, &v)| (v - shifts[a]) / divisors[a])
                .collect(),
            label: r.label,
        })
        .collect();

    let mut out = dataset.with_records(records);
    // Compose with any earlier normalization so the stored transform maps raw
    // values to the current ones.
    for a in 0..n_att {
        out.norm_shifts[a] = dataset.norm_shifts[a] + dataset.norm_divisors[a] * shifts[a];
        out.norm_divisors[a] = dataset.norm_divisors[a] * divisors[a];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index of every record, in record order.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

/// Shuffle record indices with a seeded generator and cut the permutation
/// into `k` contiguous chunks; the first `n % k` chunks get one extra record.
pub fn split_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = dataset.len();
    if k < 2 || k > n {
        return Err(CsvmError::InvalidFoldCount { k, n_rec: n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));

    let (q, r) = (n / k, n % k);
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = q + usize::from(fold < r);
        for &idx in &perm[pos..pos + size] {
            assignment[idx] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan { k, assignment, seed })
}

impl FoldPlan {
    /// Record indices of fold `j`, ascending.
    pub fn indices(&self, j: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == j).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn fold(&self, dataset: &Dataset, j: usize) -> Dataset {
        dataset.subset(&self.indices(j))
    }

    /// Every record not in fold `j`.
    pub fn complement(&self, dataset: &Dataset, j: usize) -> Dataset {
        let idx: Vec<usize> = (0..self.assignment.len()).filter(|&i| self.assignment[i] != j).collect();
        dataset.subset(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str) -> Result<Dataset> {
        parse_dataset(text.as_bytes(), Format::Csv, None)
    }

    #[test]
    fn sparse_line_maps_fields() {
        let ds = parse_dataset("+1 1:0.5 2:0.1\n".as_bytes(), Format::Sparse, None).unwrap();
        assert_eq!(ds.n_att, 2);
        assert_eq!(ds.records[0], Record { attributes: vec![0.5, 0.1], label: 1 });
    }

    #[test]
    fn sparse_absent_indices_are_zero() {
        let ds = parse_dataset("-1 3:2\n+1 1:1\n".as_bytes(), Format::Sparse, None).unwrap();
        assert_eq!(ds.n_att, 3);
        assert_eq!(ds.records[0].attributes, vec![0.0, 0.0, 2.0]);
        assert_eq!(ds.records[1].attributes, vec![1.0, 0.0, 0.0]);
        assert_eq!(ds.records[0].label, -1);
    }

    #[test]
    fn csv_record_with_named_labels() {
        let ds = csv("5,1,1,1,2,1,3,1,1,benign\n4,1,1,3,2,1,3,1,1,malignant\n").unwrap();
        assert_eq!(ds.n_att, 9);
        assert_eq!(ds.records[0].attributes, vec![5.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 1.0]);
        assert_eq!(ds.records[0].label, -1);
        assert_eq!(ds.records[1].label, 1);
        assert_eq!(ds.class_names, ["benign".to_string(), "malignant".to_string()]);
    }

    #[test]
    fn csv_explicit_label_column_and_whitespace() {
        let ds = parse_dataset("2 0.5 7\n4 0.25 8\n".as_bytes(), Format::Csv, Some(0)).unwrap();
        assert_eq!(ds.records[0].label, -1);
        assert_eq!(ds.records[1].attributes, vec![0.25, 8.0]);
    }

    #[test]
    fn three_labels_rejected() {
        let err = csv("1,A\n2,B\n3,C\n").unwrap_err();
        assert!(matches!(err, CsvmError::TooManyClasses(_)));
        assert!(err.to_string().contains("more than two classes"));
    }

    #[test]
    fn errors_name_the_line() {
        match csv("1,2,a\n1,x,b\n").unwrap_err() {
            CsvmError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        match csv("1,2,a\n1,b\n").unwrap_err() {
            CsvmError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(csv("\n\n").unwrap_err(), CsvmError::EmptyInput));
    }

    #[test]
    fn missing_values_are_dropped() {
        let ds = csv("1,?,a\n1,2,b\n").unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn normalize_first_breast_cancer_record() {
        let mut text = String::from("5,1,1,1,2,1,3,1,1,benign\n");
        text.push_str("10,10,10,10,10,10,10,10,10,malignant\n");
        let ds = normalize(&csv(&text).unwrap());
        let expected = [0.50, 0.10, 0.10, 0.10, 0.20, 0.10, 0.30, 0.10, 0.10];
        for (got, want) in ds.records[0].attributes.iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(ds.norm_divisors, vec![10.0; 9]);
    }

    #[test]
    fn normalize_identity_and_zero_columns() {
        let ds = csv("1.0,0,0.5,a\n0.25,0,1.0,b\n").unwrap();
        let n = normalize(&ds);
        assert_eq!(n.records, ds.records);
        assert_eq!(n.norm_divisors, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn normalize_shifts_negative_columns() {
        let ds = csv("-1,a\n1,b\n3,a\n").unwrap();
        let n = normalize(&ds);
        let col: Vec<f64> = n.records.iter().map(|r| r.attributes[0]).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
        assert_eq!(n.norm_shifts, vec![-1.0]);
        assert_eq!(n.norm_divisors, vec![4.0]);
    }

    fn toy(n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| Record { attributes: vec![i as f64, 1.0], label: if i % 2 == 0 { 1 } else { -1 } })
            .collect();
        Dataset::new("toy", records).unwrap()
    }

    #[test]
    fn exact_fold_division() {
        let plan = split_folds(&toy(10), 5, 3).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn uneven_fold_sizes() {
        let plan = split_folds(&toy(683), 10, 1).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, [vec![68; 7], vec![69; 3]].concat());
    }

    #[test]
    fn fold_plan_deterministic_and_validated() {
        let ds = toy(30);
        assert_eq!(split_folds(&ds, 4, 9).unwrap(), split_folds(&ds, 4, 9).unwrap());
        assert_ne!(split_folds(&ds, 4, 9).unwrap(), split_folds(&ds, 4, 10).unwrap());
        assert!(matches!(split_folds(&ds, 31, 0), Err(CsvmError::InvalidFoldCount { .. })));
        assert!(split_folds(&ds, 1, 0).is_err());
    }

    #[test]
    fn fold_and_complement_partition() {
        let ds = toy(23);
        let plan = split_folds(&ds, 4, 5).unwrap();
        for j in 0..4 {
            assert_eq!(plan.fold(&ds, j).len() + plan.complement(&ds, j).len(), 23);
        }
    }
}
