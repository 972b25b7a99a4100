//! Cyclic (repeated-attribute) convolution.
//!
//! Each layer slides a filter of `n_var` weights over the record with
//! stride 1 and no padding. The window for position `a` reads
//! `values[a], values[a+1], ..., values[a+n_var-1]`, wrapping around to the
//! start of the record, so the output keeps the input length.

use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, Record};
use crate::error::{CsvmError, Result};

/// Weight bound used for initialization and updates.
pub const WEIGHT_BOUND: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Filter {
    pub weights: Vec<f64>,
}

impl Filter {
    pub fn new(weights: Vec<f64>) -> Self {
        Filter { weights }
    }

    pub fn n_var(&self) -> usize {
        self.weights.len()
    }
}

/// A stack of filters applied in index order. Serializes as a JSON list of
/// rows, one row per filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct FilterBank {
    filters: Vec<Filter>,
}

impl FilterBank {
    pub fn new(filters: Vec<Filter>) -> Result<Self> {
        let n_var = filters.first().map(Filter::n_var).ok_or_else(|| CsvmError::param("filter bank needs at least one filter"))?;
        if n_var == 0 {
            return Err(CsvmError::param("filters need at least one weight"));
        }
        if filters.iter().any(|f| f.n_var() != n_var) {
            return Err(CsvmError::param("filters in a bank must have equal length"));
        }
        Ok(FilterBank { filters })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        FilterBank::new(rows.into_iter().map(Filter::new).collect())
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn filters_mut(&mut self) -> &mut [Filter] {
        &mut self.filters
    }

    pub fn n_filter(&self) -> usize {
        self.filters.len()
    }

    pub fn n_var(&self) -> usize {
        self.filters[0].n_var()
    }

    /// The leading `depth` filters as a new bank.
    pub fn truncated(&self, depth: usize) -> Result<FilterBank> {
        if depth == 0 || depth > self.n_filter() {
            return Err(CsvmError::DepthOutOfRange { depth, max: self.n_filter() });
        }
        Ok(FilterBank { filters: self.filters[..depth].to_vec() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("filter bank serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl TryFrom<Vec<Vec<f64>>> for FilterBank {
    type Error = CsvmError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        FilterBank::from_rows(rows)
    }
}

impl From<FilterBank> for Vec<Vec<f64>> {
    fn from(bank: FilterBank) -> Self {
        bank.filters.into_iter().map(|f| f.weights).collect()
    }
}

/// One convolution layer: `out[a] = sum_j values[(a + j) % n] * w[j]`.
pub fn convolve_layer(values: &[f64], filter: &Filter) -> Result<Vec<f64>> {
    let n = values.len();
    let n_var = filter.n_var();
    if n_var > n {
        return Err(CsvmError::FilterTooLong { n_var, n_att: n });
    }
    let out = (0..n)
        .map(|a| {
            filter
                .weights
                .iter()
                .enumerate()
                .fold(0.0, |acc, (j, &w)| acc + values[(a + j) % n] * w)
        })
        .collect();
    Ok(out)
}

/// Apply the first `depth` filters of `bank` in order. Depth 0 is identity.
pub fn apply_bank(values: &[f64], bank: &FilterBank, depth: usize) -> Result<Vec<f64>> {
    if depth > bank.n_filter() {
        return Err(CsvmError::DepthOutOfRange { depth, max: bank.n_filter() });
    }
    bank.filters[..depth]
        .iter()
        .try_fold(values.to_vec(), |layer, filter| convolve_layer(&layer, filter))
}

/// Transform every record of a dataset, keeping labels and order.
pub fn transform_dataset(dataset: &Dataset, bank: &FilterBank, depth: usize) -> Result<Dataset> {
    if depth == 0 {
        return Ok(dataset.clone());
    }
    let records = dataset
        .records
        .iter()
        .map(|r| {
            Ok(Record { attributes: apply_bank(&r.attributes, bank, depth)?, label: r.label })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(dataset.with_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    const I1: [f64; 9] = [0.50, 0.10, 0.10, 0.10, 0.20, 0.10, 0.30, 0.10, 0.10];

    /// Literal append-and-slide: copy the first n_var-1 attributes onto the
    /// end of the record, then take plain dot products.
    fn append_and_slide(values: &[f64], weights: &[f64]) -> Vec<f64> {
        let n = values.len();
        let mut extended = values.to_vec();
        extended.extend_from_slice(&values[..weights.len() - 1]);
        (0..n)
            .map(|a| {
                let mut b = 0.0;
                for (j, w) in weights.iter().enumerate() {
                    b += extended[a + j] * w;
                }
                b
            })
            .collect()
    }

    #[test]
    fn single_layer_matches_oracle() {
        let f = Filter::new(vec![-1.0, 0.0, 1.0]);
        let got = convolve_layer(&I1, &f).unwrap();
        assert_eq!(got, append_and_slide(&I1, &f.weights));
        // Position 7 is -0.2 by direct evaluation.
        assert!((got[6] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn unit_filter_is_identity() {
        let f = Filter::new(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(convolve_layer(&I1, &f).unwrap(), I1.to_vec());
    }

    #[test]
    fn filter_longer_than_record_rejected() {
        let f = Filter::new(vec![1.0; 4]);
        assert!(matches!(convolve_layer(&[1.0, 2.0, 3.0], &f), Err(CsvmError::FilterTooLong { .. })));
    }

    #[test]
    fn depth_bounds() {
        let bank = FilterBank::from_rows(vec![vec![1.0, 0.5]]).unwrap();
        assert_eq!(apply_bank(&I1, &bank, 0).unwrap(), I1.to_vec());
        assert!(matches!(apply_bank(&I1, &bank, 2), Err(CsvmError::DepthOutOfRange { .. })));
    }

    #[test]
    fn bank_rejects_ragged_rows() {
        assert!(FilterBank::from_rows(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(FilterBank::from_rows(vec![]).is_err());
        assert!(FilterBank::from_json("[[1.0],[2.0,3.0]]").is_err());
    }

    #[test]
    fn bank_json_is_row_major_list() {
        let bank = FilterBank::from_rows(vec![vec![-1.0, 0.0, 1.0], vec![1.8, -0.9, 0.7]]).unwrap();
        assert_eq!(bank.to_json(), "[[-1.0,0.0,1.0],[1.8,-0.9,0.7]]");
        assert_eq!(FilterBank::from_json(&bank.to_json()).unwrap(), bank);
    }

    #[test]
    fn transform_keeps_labels_and_delegates() {
        let ds = Dataset::new(
            "one",
            vec![Record { attributes: I1.to_vec(), label: -1 }],
        )
        .unwrap();
        let bank = FilterBank::from_rows(vec![vec![-1.0, 0.0, 1.0]]).unwrap();
        assert_eq!(transform_dataset(&ds, &bank, 0).unwrap(), ds);
        let t = transform_dataset(&ds, &bank, 1).unwrap();
        assert_eq!(t.records[0].attributes, convolve_layer(&I1, &bank.filters()[0]).unwrap());
        assert_eq!(t.records[0].label, -1);
    }
}
