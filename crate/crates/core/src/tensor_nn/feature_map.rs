use std::fmt;

use crate::{Error, Result, Scalar};

/// Channel, height and width of a [`FeatureMap`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Dense `channels x height x width` array stored row-major, channel-major.
///
/// Images, encoder activations, warp grids and their gradients all share this
/// representation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(channels, height, width);
        if data.len() != shape.len() {
            return Err(Error::shape(
                "FeatureMap::new",
                format!("{} values for {shape}", shape.len()),
                data.len(),
            ));
        }
        Ok(FeatureMap { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        FeatureMap {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds a map by evaluating `f(channel, y, x)` at every cell.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        FeatureMap { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: T) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.shape.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.shape.plane();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FeatureMap {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// Elementwise `f(a, b)`; shapes must agree.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape, "FeatureMap::zip_map")?;
        Ok(FeatureMap {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape(other.shape, "FeatureMap::add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn expect_shape(&self, expected: Shape, context: &'static str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(context, expected, self.shape));
        }
        Ok(())
    }

    /// Stacks maps of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&FeatureMap<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels of nothing"))?;
        let (h, w) = (first.height(), first.width());
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.height() != h || p.width() != w {
                return Err(Error::shape(
                    "concat_channels",
                    format!("spatial {h}x{w}"),
                    format!("{}x{}", p.height(), p.width()),
                ));
            }
            channels += p.channels();
            data.extend_from_slice(&p.data);
        }
        FeatureMap::new(channels, h, w, data)
    }

    /// Inverse of [`concat_channels`](Self::concat_channels).
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let total: usize = sizes.iter().sum();
        if total != self.channels() {
            return Err(Error::shape("split_channels", self.channels(), total));
        }
        let plane = self.shape.plane();
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &c in sizes {
            out.push(FeatureMap {
                shape: Shape::new(c, self.height(), self.width()),
                data: self.data[start * plane..(start + c) * plane].to_vec(),
            });
            start += c;
        }
        Ok(out)
    }

    /// Circular spatial shift: output `(y, x)` reads input `(y - dy, x - dx)`.
    pub fn roll(&self, dy: isize, dx: isize) -> Self {
        let (h, w) = (self.height() as isize, self.width() as isize);
        FeatureMap::from_fn(self.shape, |c, y, x| {
            let sy = (y as isize - dy).rem_euclid(h) as usize;
            let sx = (x as isize - dx).rem_euclid(w) as usize;
            self.get(c, sy, sx)
        })
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}
