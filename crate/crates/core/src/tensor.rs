//! Dense real arrays of rank 1 to 3.
//!
//! Storage is row-major. For rank-3 tensors the leading axis is the channel,
//! so element `(c, h, w)` lives at `(c * H + h) * W + w`. Flattening walks
//! exactly this order.

use crate::error::{shape_err, Error, Result};

/// Upper bound on the element count of a single tensor.
pub const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(shape_err(format!(
            "rank must be 1..=3, got shape {shape:?}"
        )));
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(shape_err(format!("zero extent in shape {shape:?}")));
        }
        n = n
            .checked_mul(d)
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| shape_err(format!("shape {shape:?} exceeds {MAX_ELEMENTS} elements")))?;
    }
    Ok(n)
}

impl Tensor {
    /// Tensor of the given shape with every element set to `fill`.
    pub fn filled(shape: &[usize], fill: f64) -> Result<Self> {
        let n = element_count(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = element_count(shape)?;
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Rank-1 tensor over `values`. Panics on an empty slice.
    pub fn vector(values: &[f64]) -> Self {
        Self::from_vec(&[values.len()], values.to_vec()).expect("non-empty vector")
    }

    /// Rank-2 tensor from equal-length rows.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(shape_err("ragged rows"));
        }
        Self::from_vec(&[h, w], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err(format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(shape_err(format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[(c * self.shape[1] + h) * self.shape[2] + w]
    }

    /// Channel `c` of a rank-3 tensor as a rank-2 tensor.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        let (ch, h, w) = self.dims3()?;
        if c >= ch {
            return Err(shape_err(format!(
                "channel {c} out of range for {ch} channels"
            )));
        }
        let plane = h * w;
        Tensor::from_vec(&[h, w], self.data[c * plane..(c + 1) * plane].to_vec())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the largest element; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Rotates a matrix by 180 degrees: `out[i][j] = m[H-1-i][W-1-j]`.
pub fn rot180(m: &Tensor) -> Result<Tensor> {
    m.dims2()?;
    let mut data = m.data.clone();
    data.reverse();
    Tensor::from_vec(&m.shape, data)
}

/// `W · a` for `W` of shape `n_out × n_in`, summing each row in ascending column order.
pub fn matvec(w: &Tensor, a: &Tensor) -> Result<Tensor> {
    let (n_out, n_in) = w.dims2()?;
    if a.shape() != [n_in] {
        return Err(shape_err(format!(
            "matvec of {:?} with {:?}",
            w.shape(),
            a.shape()
        )));
    }
    let out = w
        .data
        .chunks_exact(n_in)
        .map(|row| {
            let mut acc = 0.0;
            for (wij, aj) in row.iter().zip(&a.data) {
                acc += wij * aj;
            }
            acc
        })
        .collect();
    Tensor::from_vec(&[n_out], out)
}

pub fn flatten(t: &Tensor) -> Tensor {
    Tensor {
        shape: vec![t.len()],
        data: t.data.clone(),
    }
}

pub fn unflatten(v: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if v.rank() != 1 {
        return Err(shape_err(format!(
            "unflatten expects rank 1, got {:?}",
            v.shape()
        )));
    }
    Tensor::from_vec(shape, v.data.clone()).map_err(|e| match e {
        Error::Shape(m) => shape_err(format!("cannot unflatten {} values: {m}", v.len())),
        other => other,
    })
}
