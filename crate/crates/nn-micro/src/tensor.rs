//! Dense `C x H x W` tensors in row-major order.

use rand::Rng;

use crate::error::{NnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(NnError::invalid(format!(
                "{} values do not fill a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(NnError::invalid(format!("non-finite tensor value {v}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![v; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Values drawn uniformly from `[-scale, scale]`.
    pub fn uniform(channels: usize, height: usize, width: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(channels, height, width, |_, _, _| rng.random_range(-scale..=scale))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
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

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_shape(&self, other: &Tensor3, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(NnError::invalid(format!(
                "{op}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_shape(other, "elementwise op")?;
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor3) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor3) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        self.check_shape(other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Tensor3) -> Result<f64> {
        self.check_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// First and second halves along the channel axis.
    pub fn split_channels(&self) -> Result<(Tensor3, Tensor3)> {
        if self.channels % 2 != 0 {
            return Err(NnError::invalid(format!(
                "cannot split {} channels into equal halves",
                self.channels
            )));
        }
        let half = self.channels / 2;
        let cut = half * self.plane();
        let part = |d: &[f64]| Tensor3 {
            channels: half,
            height: self.height,
            width: self.width,
            data: d.to_vec(),
        };
        Ok((part(&self.data[..cut]), part(&self.data[cut..])))
    }

    pub fn concat_channels(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
        if (a.height, a.width) != (b.height, b.width) {
            return Err(NnError::invalid("concat: spatial extents differ"));
        }
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Ok(Tensor3 {
            channels: a.channels + b.channels,
            height: a.height,
            width: a.width,
            data,
        })
    }
}
