//! Dense row-major f32 tensor with explicit dims. The universal value carrier
//! for images, features, voxel patterns, and network parameters.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorF32 {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorF32 {
    /// Build a tensor, enforcing the type invariants: at least one dim,
    /// every dim >= 1, product(dims) == data.len().
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDims(dims));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                dims,
                expected,
                got: data.len(),
            });
        }
        Ok(TensorF32 { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        assert!(!dims.is_empty() && dims.iter().all(|&d| d >= 1), "bad dims {dims:?}");
        TensorF32 {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(dims: &[usize], value: f32) -> Self {
        let mut t = Self::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(dims);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret under new dims; element count must match.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        TensorF32::new(dims.to_vec(), self.data)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f32> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // -- 2-D helpers (row-major [rows, cols]) --------------------------------

    pub fn rows(&self) -> usize {
        assert_eq!(self.ndim(), 2, "rows() on non-matrix {:?}", self.dims);
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.ndim(), 2, "cols() on non-matrix {:?}", self.dims);
        self.dims[1]
    }

    pub fn at2(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.dims[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.dims[1] + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let w = self.dims[1];
        &self.data[r * w..(r + 1) * w]
    }

    /// Stack row vectors of equal length into an [N, D] matrix.
    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("from_rows".into()));
        }
        let d = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::shape(format!("from_rows row {i}"), &[d], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        TensorF32::new(vec![rows.len(), d], data)
    }

    pub fn check_dims(&self, context: &str, expected: &[usize]) -> Result<()> {
        if self.dims != expected {
            return Err(Error::shape(context, expected, &self.dims));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_enforces_invariants() {
        assert!(TensorF32::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            TensorF32::new(vec![], vec![]),
            Err(Error::InvalidDims(_))
        ));
        assert!(matches!(
            TensorF32::new(vec![2, 0], vec![]),
            Err(Error::InvalidDims(_))
        ));
        assert!(matches!(
            TensorF32::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn two_d_access() {
        let t = TensorF32::new(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.at2(0, 0), 0.0);
        assert_eq!(t.at2(1, 2), 5.0);
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn reshape_checks_len() {
        let t = TensorF32::zeros(&[4]);
        assert!(t.clone().reshape(&[2, 2]).is_ok());
        assert!(t.reshape(&[3]).is_err());
    }
}
