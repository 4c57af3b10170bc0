use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense `height x width x channels` array, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor { height, width, channels, data: vec![T::zero(); height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Tensor { height, width, channels, data })
    }

    /// Interleaves equally sized row-major planes into one tensor.
    pub fn from_planes<P: AsRef<[T]>>(height: usize, width: usize, planes: &[P]) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![T::zero(); height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            let plane = plane.as_ref();
            if plane.len() != height * width {
                return Err(Error::ShapeMismatch(format!(
                    "plane {c} holds {} values, expected {}",
                    plane.len(),
                    height * width
                )));
            }
            for (i, &v) in plane.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Ok(Tensor { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Row-major copy of one channel.
    pub fn plane(&self, c: usize) -> Vec<T> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Channel-wise concatenation of tensors with equal spatial size.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::ShapeMismatch("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(p) = parts.iter().find(|p| p.height != h || p.width != w) {
            return Err(Error::ShapeMismatch(format!("cannot concatenate {}x{} with {h}x{w}", p.height, p.width)));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for px in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[px * p.channels..(px + 1) * p.channels]);
            }
        }
        Ok(Tensor { height: h, width: w, channels, data })
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::ShapeMismatch(format!("crop {h}x{w}+{y0}+{x0} outside {}x{}", self.height, self.width)));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Tensor { height: h, width: w, channels: c, data })
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, v| if v > m { v } else { m })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planes_round_trip() {
        let p0 = [1.0f32, 2.0, 3.0, 4.0];
        let p1 = [5.0f32, 6.0, 7.0, 8.0];
        let t = Tensor::from_planes(2, 2, &[p0, p1]).unwrap();
        assert_eq!(t.data(), &[1.0, 5.0, 2.0, 6.0, 3.0, 7.0, 4.0, 8.0]);
        assert_eq!(t.plane(1), p1.to_vec());
        assert_eq!(t.get(1, 0, 1), 7.0);
    }

    #[test]
    fn concat_and_crop() {
        let a = Tensor::from_vec(2, 2, 1, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = a.map(|v| -v);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), (2, 2, 2));
        assert_eq!(c.get(1, 1, 1), -4.0);
        let k = c.crop(1, 0, 1, 2).unwrap();
        assert_eq!(k.data(), &[3.0, -3.0, 4.0, -4.0]);
        assert!(Tensor::<f64>::from_vec(2, 2, 2, vec![0.0; 3]).is_err());
    }
}
