//! Dense row-major `f64` arrays.
//!
//! Axis 0 is the batch axis and axis 1 the channel axis; any further axes are
//! spatial and get pooled together with the batch axis by the per-channel
//! reductions. Every operation copies.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Which per-channel statistic [`Tensor::reduce_channel`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelStat {
    Mean,
    /// Biased (divide-by-count) variance.
    Var,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    /// Number of spatial positions per (sample, channel) pair.
    pub fn spatial(&self) -> usize {
        self.shape.iter().skip(2).product()
    }

    /// Values per sample (`channels * spatial`).
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn rows(&self, range: Range<usize>) -> Result<Tensor> {
        if range.start > range.end || range.end > self.batch() {
            return Err(Error::Dimension(format!(
                "row range {range:?} outside batch of {}",
                self.batch()
            )));
        }
        let w = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = range.len();
        Ok(Tensor {
            shape,
            data: self.data[range.start * w..range.end * w].to_vec(),
        })
    }

    /// Gathers rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= self.batch() {
                return Err(Error::Index {
                    what: "tensor row",
                    index: i,
                    limit: self.batch(),
                });
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }

    /// Stacks two tensors along the batch axis.
    pub fn concat_batch(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != other.shape.len() || self.shape[1..] != other.shape[1..] {
            return Err(Error::Dimension(format!(
                "cannot stack {:?} on {:?}",
                other.shape, self.shape
            )));
        }
        let mut shape = self.shape.clone();
        shape[0] += other.shape[0];
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Tensor { shape, data })
    }

    fn check_finite(self, op: &'static str) -> Result<Tensor> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
        .check_finite(op)
    }

    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
        .check_finite(op)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        self.map("add_scalar", |a| a + s)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        self.map("scale", |a| a * s)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain(format!("sqrt of negative value {v}")));
        }
        self.map("sqrt", f64::sqrt)
    }

    pub fn ln(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("ln of non-positive value {v}")));
        }
        self.map("ln", f64::ln)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.map("exp", f64::exp)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Per-channel mean or biased variance over the batch rows in `subset`,
    /// pooling all spatial positions.
    pub fn reduce_channel(&self, stat: ChannelStat, subset: Range<usize>) -> Result<Vec<f64>> {
        if subset.start > subset.end || subset.end > self.batch() {
            return Err(Error::Dimension(format!(
                "subset {subset:?} outside batch of {}",
                self.batch()
            )));
        }
        if subset.is_empty() || self.spatial() == 0 {
            return Err(Error::EmptyReduction);
        }
        let (c, s) = (self.channels(), self.spatial());
        let count = (subset.len() * s) as f64;
        // Shifted by the first value so constant channels reduce exactly.
        let shift: Vec<f64> = (0..c).map(|ch| self.data[(subset.start * c + ch) * s]).collect();
        let mut mean = vec![0.0; c];
        for i in subset.clone() {
            for (ch, m) in mean.iter_mut().enumerate() {
                let base = (i * c + ch) * s;
                *m += self.data[base..base + s].iter().map(|x| x - shift[ch]).sum::<f64>();
            }
        }
        for (m, sh) in mean.iter_mut().zip(&shift) {
            *m = sh + *m / count;
        }
        if stat == ChannelStat::Mean {
            return Ok(mean);
        }
        let mut var = vec![0.0; c];
        for i in subset {
            for (ch, v) in var.iter_mut().enumerate() {
                let base = (i * c + ch) * s;
                *v += self.data[base..base + s]
                    .iter()
                    .map(|x| (x - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        Ok(var)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b = &other.data[p * m..(p + 1) * m];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
        .check_finite("matmul")
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!("transpose of {:?}", self.shape)));
        }
        let (n, m) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
