//! Dense N-dimensional tensors of double-precision values.
//!
//! A [`Tensor`] is a plain value: shape plus row-major data. It carries no
//! gradient bookkeeping of its own — differentiation happens on a
//! [`crate::numerics::Tape`], which owns the values produced during a
//! forward pass. Tensors detached from any tape are immutable data and safe
//! to share read-only across threads.
//!
//! Broadcasting (used by elementwise ops): the right-hand operand is aligned
//! to the trailing axes of the left-hand operand, missing leading axes are
//! treated as extent 1, and every aligned axis must either match or be 1 on
//! the right-hand side. The left-hand shape is never expanded.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating extent/data agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::config(format!(
                "tensor shape {shape:?} implies {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite value {bad} rejected at tensor creation"
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D tensor from a value sequence.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Single stored value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::config(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "cannot reshape {:?} ({} values) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row-major strides for this shape.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Resolve a possibly negative axis against a rank.
pub(crate) fn resolve_axis(axis: isize, ndim: usize) -> Result<usize> {
    let resolved = if axis < 0 {
        axis + ndim as isize
    } else {
        axis
    };
    if resolved < 0 || resolved as usize >= ndim {
        return Err(Error::config(format!(
            "axis {axis} out of range for rank-{ndim} tensor"
        )));
    }
    Ok(resolved as usize)
}

/// Check that `rhs` broadcasts to `lhs` (trailing alignment, singleton
/// expansion on the right-hand side only). Returns the per-axis source
/// extents of `rhs` aligned to `lhs`'s rank.
pub(crate) fn broadcast_to(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    if rhs.len() > lhs.len() {
        return Err(Error::config(format!(
            "shape {rhs:?} does not broadcast to {lhs:?}: higher rank"
        )));
    }
    let offset = lhs.len() - rhs.len();
    let mut aligned = vec![1usize; lhs.len()];
    for (i, &r) in rhs.iter().enumerate() {
        let l = lhs[offset + i];
        if r != l && r != 1 {
            return Err(Error::config(format!(
                "shape {rhs:?} does not broadcast to {lhs:?}: axis {} is {r} vs {l}",
                offset + i
            )));
        }
        aligned[offset + i] = r;
    }
    Ok(aligned)
}

/// Map a flat index in the broadcast (lhs) shape to the flat index of the
/// broadcast source whose aligned extents are `src_aligned`.
pub(crate) struct BroadcastMap {
    lhs_strides: Vec<usize>,
    lhs_shape: Vec<usize>,
    src_strides: Vec<usize>,
    src_aligned: Vec<usize>,
}

impl BroadcastMap {
    pub(crate) fn new(lhs_shape: &[usize], src_aligned: &[usize]) -> Self {
        let mut src_strides = vec![0usize; src_aligned.len()];
        let mut acc = 1usize;
        for i in (0..src_aligned.len()).rev() {
            src_strides[i] = if src_aligned[i] == 1 { 0 } else { acc };
            acc *= src_aligned[i];
        }
        BroadcastMap {
            lhs_strides: strides_of(lhs_shape),
            lhs_shape: lhs_shape.to_vec(),
            src_strides,
            src_aligned: src_aligned.to_vec(),
        }
    }

    /// True when the source fills the target exactly (no expansion).
    pub(crate) fn is_identity(&self) -> bool {
        self.lhs_shape == self.src_aligned
    }

    #[inline]
    pub(crate) fn source_index(&self, flat: usize) -> usize {
        let mut rem = flat;
        let mut src = 0usize;
        for axis in 0..self.lhs_shape.len() {
            let coord = rem / self.lhs_strides[axis];
            rem %= self.lhs_strides[axis];
            src += coord * self.src_strides[axis];
        }
        src
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn creation_validates_shape_and_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn creation_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn negative_axis_resolution() {
        assert_eq!(resolve_axis(-1, 3).unwrap(), 2);
        assert_eq!(resolve_axis(1, 3).unwrap(), 1);
        assert!(resolve_axis(3, 3).is_err());
        assert!(resolve_axis(-4, 3).is_err());
    }

    #[test]
    fn broadcast_alignment() {
        // [m] against [n, d, m]: trailing alignment.
        assert_eq!(broadcast_to(&[2, 3, 4], &[4]).unwrap(), vec![1, 1, 4]);
        assert_eq!(broadcast_to(&[2, 3], &[2, 1]).unwrap(), vec![2, 1]);
        assert!(broadcast_to(&[2, 3], &[3, 3]).is_err());
        assert!(broadcast_to(&[2], &[2, 2]).is_err());
    }

    #[test]
    fn broadcast_map_indexes_source() {
        let map = BroadcastMap::new(&[2, 3], &[1, 3]);
        assert_eq!(map.source_index(0), 0);
        assert_eq!(map.source_index(4), 1); // row 1, col 1 -> source col 1
        assert!(!map.is_identity());
    }
}
