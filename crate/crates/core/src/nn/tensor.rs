use super::Real;
use crate::{Error, Result};

/// Dense `(batch, channels, length)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The `(channels, length)` block of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let sz = self.shape[1] * self.shape[2];
        &self.data[n * sz..(n + 1) * sz]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let sz = self.shape[1] * self.shape[2];
        &mut self.data[n * sz..(n + 1) * sz]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] {
            return Err(Error::Shape(format!("cannot concat {:?} with {:?}", a.shape, b.shape)));
        }
        let shape = [a.shape[0], a.shape[1] + b.shape[1], a.shape[2]];
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..a.shape[0] {
            data.extend_from_slice(a.item(n));
            data.extend_from_slice(b.item(n));
        }
        Ok(Tensor { shape, data })
    }

    /// Splits the channel axis after `first` channels.
    pub fn split_channels(&self, first: usize) -> (Tensor<T>, Tensor<T>) {
        let [nb, c, l] = self.shape;
        assert!(first <= c);
        let mut a = Vec::with_capacity(nb * first * l);
        let mut b = Vec::with_capacity(nb * (c - first) * l);
        for n in 0..nb {
            let item = self.item(n);
            a.extend_from_slice(&item[..first * l]);
            b.extend_from_slice(&item[first * l..]);
        }
        (Tensor { shape: [nb, first, l], data: a }, Tensor { shape: [nb, c - first, l], data: b })
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }
}
