use crate::Scalar;

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub shape: [usize; 4],
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![S::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<S>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape {shape:?} vs {} values", data.len());
        Self { shape, data }
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[S] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}
