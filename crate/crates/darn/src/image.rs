//! `H x W x 3` image container with unit-interval RGB intensities.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major interleaved RGB (`data[(y*w + x)*3 + c]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(Error::shape(format!(
                "image {h}x{w} needs {} values, got {}",
                h * w * 3,
                data.len()
            )));
        }
        Ok(Image { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![T::zero(); h * w * 3],
        }
    }

    pub fn full(h: usize, w: usize, value: T) -> Self {
        Image {
            h,
            w,
            data: vec![value; h * w * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Pixel count (channels not included).
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.w + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.w + x) * 3 + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise product with `other`.
    pub fn product(&self, other: &Image<T>) -> Result<Image<T>> {
        if self.h != other.h || self.w != other.w {
            return Err(Error::shape(format!(
                "image product: {}x{} vs {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Image {
            h: self.h,
            w: self.w,
            data,
        })
    }

    /// Largest absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &Image<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, v| m.max(v))
    }

    /// Channels-first `[1, 3, H, W]` layout for the network.
    pub fn to_chw(&self) -> Array<T> {
        let mut out = vec![T::zero(); self.data.len()];
        let plane = self.h * self.w;
        for y in 0..self.h {
            for x in 0..self.w {
                for c in 0..3 {
                    out[c * plane + y * self.w + x] = self.get(y, x, c);
                }
            }
        }
        Array::new(vec![1, 3, self.h, self.w], out).expect("consistent dims")
    }

    /// Inverse of [`Image::to_chw`] for a single-sample `[1, 3, H, W]` array.
    pub fn from_chw(array: &Array<T>) -> Result<Self> {
        let s = array.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::shape(format!("expected [1,3,H,W], got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let plane = h * w;
        let src = array.data();
        let mut img = Image::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.set(y, x, c, src[c * plane + y * w + x]);
                }
            }
        }
        Ok(img)
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        }
    }
}
