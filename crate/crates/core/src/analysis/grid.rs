use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    pub label: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A scalar quantity over a two-dimensional parameter grid, row-major in
/// `axis1`. Missing cells are NaN and always carry a reason.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityGrid {
    pub axis1: Axis,
    pub axis2: Axis,
    pub quantity: String,
    cells: Vec<f64>,
    reasons: Vec<Option<String>>,
    pub metadata: BTreeMap<String, String>,
}

impl SensitivityGrid {
    pub fn new(axis1: Axis, axis2: Axis, quantity: impl Into<String>) -> Self {
        let count = axis1.len() * axis2.len();
        Self {
            axis1,
            axis2,
            quantity: quantity.into(),
            cells: vec![f64::NAN; count],
            reasons: vec![Some("not evaluated".into()); count],
            metadata: BTreeMap::new(),
        }
    }

    fn index(&self, i: usize, j: usize) -> usize {
        assert!(
            i < self.axis1.len() && j < self.axis2.len(),
            "cell ({i}, {j}) outside the grid"
        );
        i * self.axis2.len() + j
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axis1.len(), self.axis2.len())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[self.index(i, j)]
    }

    pub fn reason(&self, i: usize, j: usize) -> Option<&str> {
        self.reasons[self.index(i, j)].as_deref()
    }

    /// Stores a value; a non-finite value is kept as missing.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        if value.is_finite() {
            let k = self.index(i, j);
            self.cells[k] = value;
            self.reasons[k] = None;
        } else {
            self.set_missing(i, j, format!("non-finite value {value}"));
        }
    }

    pub fn set_missing(&mut self, i: usize, j: usize, reason: impl Into<String>) {
        let k = self.index(i, j);
        self.cells[k] = f64::NAN;
        self.reasons[k] = Some(reason.into());
    }

    pub fn set_result(&mut self, i: usize, j: usize, value: Result<f64, String>) {
        match value {
            Ok(v) => self.set(i, j, v),
            Err(reason) => self.set_missing(i, j, reason),
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.axis2.len()).map(|j| self.get(i, j)).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.axis1.len()).map(|i| self.get(i, j)).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.reasons.iter().filter(|r| r.is_some()).count()
    }

    /// `(i, j, reason)` for every missing cell.
    pub fn missing(&self) -> Vec<(usize, usize, String)> {
        let m = self.axis2.len();
        self.reasons
            .iter()
            .enumerate()
            .filter_map(|(k, r)| r.as_ref().map(|r| (k / m, k % m, r.clone())))
            .collect()
    }

    /// `(axis1 value, axis2 value, cell)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let m = self.axis2.len();
        self.cells
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.axis1.values[k / m], self.axis2.values[k % m], v))
    }
}
