use crate::error::{invalid, Result};

/// Replicate × index matrix of field values, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePaths {
    replicates: usize,
    indices: usize,
    data: Vec<f64>,
}

impl SamplePaths {
    pub fn new(replicates: usize, indices: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != replicates * indices {
            return Err(invalid(format!(
                "expected {replicates}x{indices} = {} values, got {}",
                replicates * indices,
                data.len()
            )));
        }
        Ok(Self { replicates, indices, data })
    }

    pub fn zeros(replicates: usize, indices: usize) -> Self {
        Self { replicates, indices, data: vec![0.0; replicates * indices] }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let indices = columns.len();
        let replicates = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != replicates) {
            return Err(invalid("columns differ in length"));
        }
        let mut data = Vec::with_capacity(replicates * indices);
        for r in 0..replicates {
            data.extend(columns.iter().map(|c| c[r]));
        }
        Ok(Self { replicates, indices, data })
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn indices(&self) -> usize {
        self.indices
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.indices..(r + 1) * self.indices]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.indices..(r + 1) * self.indices]
    }

    pub fn get(&self, r: usize, t: usize) -> f64 {
        self.data[r * self.indices + t]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.replicates).map(|r| self.get(r, t)).collect()
    }

    /// Column differences `ξ(t) − ξ(s)` per replicate.
    pub fn difference(&self, t: usize, s: usize) -> Vec<f64> {
        (0..self.replicates).map(|r| self.get(r, t) - self.get(r, s)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Multiplies every value by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { data: self.data.iter().map(|v| v * c).collect(), ..self.clone() }
    }

    /// Keeps the listed columns in the given order.
    pub fn select(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.replicates * cols.len());
        for r in 0..self.replicates {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Self { replicates: self.replicates, indices: cols.len(), data }
    }
}

/// Subtracts the empirical mean.
pub fn centered(samples: &[f64]) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.iter().map(|x| x - mean).collect()
}
