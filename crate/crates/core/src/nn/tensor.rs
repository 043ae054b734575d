use crate::error::{Error, Result};

use super::Real;

/// Dense NHWC activation tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<Real>,
}

impl Tensor4 {
    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Tensor4 { dims: [batch, height, width, channels], data: vec![0.0; batch * height * width * channels] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<Real>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::contract(format!("{} values do not fill a tensor of dims {dims:?}", data.len())));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    pub fn sample(&self, b: usize) -> &[Real] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(self, dims: [usize; 4]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    #[inline]
    pub fn at(&self, b: usize, y: usize, x: usize, c: usize) -> Real {
        let [_, h, w, ch] = self.dims;
        self.data[((b * h + y) * w + x) * ch + c]
    }
}
