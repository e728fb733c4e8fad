//! Warp grids and differentiable bilinear sampling.
//!
//! Coordinates are normalized per axis so that `-1` is the center of the first
//! pixel and `+1` the center of the last: coordinate `x` addresses pixel index
//! `(x + 1) / 2 * (W - 1)`. A one-pixel axis always addresses pixel 0.
//! Samples outside the image clamp to the border pixel.

use crate::tensor_nn::{FeatureMap, Shape};
use crate::{Error, Result, Scalar};

/// Per-cell `(x, y)` source coordinates, stored as a `2 x H x W` map
/// (x-plane, then y-plane).
#[derive(Clone, Debug, PartialEq)]
pub struct WarpGrid<T> {
    coords: FeatureMap<T>,
}

/// Normalized coordinate to (fractional) pixel index along an axis of `n`.
#[inline]
pub fn to_pixel<T: Scalar>(coord: T, n: usize) -> T {
    if n <= 1 {
        return T::zero();
    }
    (coord + T::one()) * T::lit(0.5) * T::lit((n - 1) as f64)
}

/// Pixel index to normalized coordinate along an axis of `n`.
#[inline]
pub fn to_normalized<T: Scalar>(pixel: T, n: usize) -> T {
    if n <= 1 {
        return T::zero();
    }
    pixel * T::lit(2.0 / (n - 1) as f64) - T::one()
}

/// Index of the source cell nearest to target cell `j` when an axis of
/// `n_source` cells is resampled to `n_target` cells, end points aligned.
pub fn nearest_index(j: usize, n_target: usize, n_source: usize) -> usize {
    if n_target <= 1 {
        return n_source.saturating_sub(1) / 2;
    }
    let pos = j as f64 * (n_source - 1) as f64 / (n_target - 1) as f64;
    (pos.round() as usize).min(n_source - 1)
}

impl<T: Scalar> WarpGrid<T> {
    pub fn from_map(coords: FeatureMap<T>) -> Result<Self> {
        if coords.channels() != 2 {
            return Err(Error::shape("WarpGrid", "2 x H x W", coords.shape()));
        }
        Ok(WarpGrid { coords })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let mut coords = FeatureMap::zeros(Shape::new(2, height, width));
        for y in 0..height {
            for x in 0..width {
                let (cx, cy) = f(y, x);
                coords.set(0, y, x, cx);
                coords.set(1, y, x, cy);
            }
        }
        WarpGrid { coords }
    }

    pub fn identity(height: usize, width: usize) -> Result<Self> {
        identity_grid(height, width)
    }

    pub fn height(&self) -> usize {
        self.coords.height()
    }

    pub fn width(&self) -> usize {
        self.coords.width()
    }

    pub fn cells(&self) -> usize {
        self.height() * self.width()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (T, T) {
        (self.coords.get(0, y, x), self.coords.get(1, y, x))
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: (T, T)) {
        self.coords.set(0, y, x, value.0);
        self.coords.set(1, y, x, value.1);
    }

    pub fn as_map(&self) -> &FeatureMap<T> {
        &self.coords
    }

    pub fn into_map(self) -> FeatureMap<T> {
        self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.is_finite()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(WarpGrid {
            coords: self.coords.add(&other.coords)?,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(WarpGrid {
            coords: self.coords.sub(&other.coords)?,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.coords.max_abs_diff(&other.coords)
    }

    pub fn cast<U: Scalar>(&self) -> WarpGrid<U> {
        WarpGrid {
            coords: self.coords.cast(),
        }
    }
}

pub fn identity_grid<T: Scalar>(height: usize, width: usize) -> Result<WarpGrid<T>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("identity grid of size {height}x{width}")));
    }
    Ok(WarpGrid::from_fn(height, width, |y, x| {
        (to_normalized(T::lit(x as f64), width), to_normalized(T::lit(y as f64), height))
    }))
}

/// `grid - identity`.
pub fn to_relative<T: Scalar>(grid: &WarpGrid<T>) -> WarpGrid<T> {
    let id = identity_grid(grid.height(), grid.width()).expect("non-empty grid");
    grid.sub(&id).expect("same shape")
}

/// `relative + identity`.
pub fn from_relative<T: Scalar>(relative: &WarpGrid<T>) -> WarpGrid<T> {
    let id = identity_grid(relative.height(), relative.width()).expect("non-empty grid");
    relative.add(&id).expect("same shape")
}

/// Where one coordinate lands on an axis of `n` pixels.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
    /// d(pixel index) / d(coordinate); zero when clamped.
    slope: T,
}

#[inline]
fn tap<T: Scalar>(coord: T, n: usize) -> Tap<T> {
    if n <= 1 {
        return Tap {
            i0: 0,
            i1: 0,
            frac: T::zero(),
            slope: T::zero(),
        };
    }
    let last = T::lit((n - 1) as f64);
    let mut p = to_pixel(coord, n);
    let mut slope = T::lit(0.5) * last;
    if p <= T::zero() || p >= last {
        slope = if p == T::zero() || p == last { slope } else { T::zero() };
        p = p.max(T::zero()).min(last);
    }
    // Coordinates produced by to_normalized can miss the integer by rounding;
    // snapping keeps identity sampling exact.
    let r = p.round();
    if (p - r).abs() <= T::epsilon() * T::lit(8.0) * r.max(T::one()) {
        p = r;
    }
    let i0 = (p.floor().to_usize().unwrap_or(0)).min(n - 2);
    Tap {
        i0,
        i1: i0 + 1,
        frac: p - T::lit(i0 as f64),
        slope,
    }
}

fn check_input<T: Scalar>(input: &FeatureMap<T>) -> Result<()> {
    if input.height() == 0 || input.width() == 0 || input.channels() == 0 {
        return Err(Error::invalid(format!("cannot sample an empty map {}", input.shape())));
    }
    Ok(())
}

fn taps<T: Scalar>(input: Shape, grid: &WarpGrid<T>) -> Vec<(Tap<T>, Tap<T>)> {
    let mut out = Vec::with_capacity(grid.cells());
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            let (cx, cy) = grid.get(y, x);
            out.push((tap(cx, input.width), tap(cy, input.height)));
        }
    }
    out
}

/// Bilinear interpolation of `input` at every grid cell. The output has the
/// input's channels and the grid's spatial size.
pub fn bilinear_sample<T: Scalar>(input: &FeatureMap<T>, grid: &WarpGrid<T>) -> Result<FeatureMap<T>> {
    check_input(input)?;
    let taps = taps(input.shape(), grid);
    let (h, w) = (grid.height(), grid.width());
    let mut out = FeatureMap::zeros(Shape::new(input.channels(), h, w));
    for c in 0..input.channels() {
        let plane = input.plane(c);
        let iw = input.width();
        let dst = out.plane_mut(c);
        for (k, (tx, ty)) in taps.iter().enumerate() {
            let top = plane[ty.i0 * iw + tx.i0] * (T::one() - tx.frac) + plane[ty.i0 * iw + tx.i1] * tx.frac;
            let bottom = plane[ty.i1 * iw + tx.i0] * (T::one() - tx.frac) + plane[ty.i1 * iw + tx.i1] * tx.frac;
            dst[k] = top * (T::one() - ty.frac) + bottom * ty.frac;
        }
    }
    Ok(out)
}

/// Forward state of [`bilinear_sample_traced`].
#[derive(Clone, Debug)]
pub struct SampleCache<T> {
    input: FeatureMap<T>,
    grid: WarpGrid<T>,
}

pub fn bilinear_sample_traced<T: Scalar>(
    input: &FeatureMap<T>,
    grid: &WarpGrid<T>,
) -> Result<(FeatureMap<T>, SampleCache<T>)> {
    let out = bilinear_sample(input, grid)?;
    Ok((
        out,
        SampleCache {
            input: input.clone(),
            grid: grid.clone(),
        },
    ))
}

/// Gradients of the sampler with respect to the input map and the grid.
///
/// The input gradient touches at most four pixels per output cell. The grid
/// gradient is zero where a coordinate was clamped to the border.
pub fn bilinear_sample_backward<T: Scalar>(
    cache: &SampleCache<T>,
    upstream: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, WarpGrid<T>)> {
    let (input, grid) = (&cache.input, &cache.grid);
    upstream.expect_shape(
        Shape::new(input.channels(), grid.height(), grid.width()),
        "bilinear_sample_backward upstream",
    )?;
    let taps = taps(input.shape(), grid);
    let iw = input.width();
    let mut input_grad = FeatureMap::zeros(input.shape());
    let mut grid_grad = FeatureMap::zeros(Shape::new(2, grid.height(), grid.width()));
    for c in 0..input.channels() {
        let plane = input.plane(c);
        let up = upstream.plane(c);
        {
            let g = input_grad.plane_mut(c);
            for (k, (tx, ty)) in taps.iter().enumerate() {
                let u = up[k];
                let (wx0, wx1) = (T::one() - tx.frac, tx.frac);
                let (wy0, wy1) = (T::one() - ty.frac, ty.frac);
                g[ty.i0 * iw + tx.i0] += u * wy0 * wx0;
                g[ty.i0 * iw + tx.i1] += u * wy0 * wx1;
                g[ty.i1 * iw + tx.i0] += u * wy1 * wx0;
                g[ty.i1 * iw + tx.i1] += u * wy1 * wx1;
            }
        }
        let cells = grid.cells();
        let gg = grid_grad.data_mut();
        for (k, (tx, ty)) in taps.iter().enumerate() {
            let u = up[k];
            let v00 = plane[ty.i0 * iw + tx.i0];
            let v01 = plane[ty.i0 * iw + tx.i1];
            let v10 = plane[ty.i1 * iw + tx.i0];
            let v11 = plane[ty.i1 * iw + tx.i1];
            let dx = (v01 - v00) * (T::one() - ty.frac) + (v11 - v10) * ty.frac;
            let dy = (v10 - v00) * (T::one() - tx.frac) + (v11 - v01) * tx.frac;
            gg[k] += u * dx * tx.slope;
            gg[cells + k] += u * dy * ty.slope;
        }
    }
    Ok((input_grad, WarpGrid { coords: grid_grad }))
}

/// Stateful sampler: `backward` needs a preceding `forward`.
#[derive(Clone, Debug, Default)]
pub struct BilinearSampler<T> {
    cache: Option<SampleCache<T>>,
}

impl<T: Scalar> BilinearSampler<T> {
    pub fn new() -> Self {
        BilinearSampler { cache: None }
    }

    pub fn forward(&mut self, input: &FeatureMap<T>, grid: &WarpGrid<T>) -> Result<FeatureMap<T>> {
        let (out, cache) = bilinear_sample_traced(input, grid)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &FeatureMap<T>) -> Result<(FeatureMap<T>, WarpGrid<T>)> {
        let cache = self.cache.take().ok_or(Error::MissingCache)?;
        bilinear_sample_backward(&cache, upstream)
    }
}

/// `result(i, j)` = `inner`'s coordinate field bilinearly read at
/// `outer(i, j)`. Warping by the result equals warping by `inner`, then by
/// `outer`.
pub fn compose<T: Scalar>(outer: &WarpGrid<T>, inner: &WarpGrid<T>) -> WarpGrid<T> {
    let coords = bilinear_sample(&inner.coords, outer).expect("grids are non-empty 2-channel maps");
    WarpGrid { coords }
}

/// Resamples a grid to `height x width` by bilinear interpolation of its
/// relative field, so identity stays identity and shifts stay shifts.
pub fn upsample_grid<T: Scalar>(grid: &WarpGrid<T>, height: usize, width: usize) -> Result<WarpGrid<T>> {
    let target = identity_grid(height, width)?;
    let rel = to_relative(grid);
    let coords = bilinear_sample(&rel.coords, &target)?;
    Ok(from_relative(&WarpGrid { coords }))
}

/// Mean Euclidean distance between two grids in pixels of a `source_height x
/// source_width` image, over cells where `mask` is set (all cells if `None`).
pub fn endpoint_error<T: Scalar>(
    pred: &WarpGrid<T>,
    truth: &WarpGrid<T>,
    mask: Option<&[bool]>,
    source_height: usize,
    source_width: usize,
) -> Result<f64> {
    pred.coords.expect_shape(truth.coords.shape(), "endpoint_error")?;
    if let Some(m) = mask {
        if m.len() != pred.cells() {
            return Err(Error::shape("endpoint_error mask", pred.cells(), m.len()));
        }
    }
    let sx = 0.5 * source_width.saturating_sub(1) as f64;
    let sy = 0.5 * source_height.saturating_sub(1) as f64;
    let (mut total, mut count) = (0.0, 0usize);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let k = y * pred.width() + x;
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            let (px, py) = pred.get(y, x);
            let (tx, ty) = truth.get(y, x);
            let dx = (px.as_f64() - tx.as_f64()) * sx;
            let dy = (py.as_f64() - ty.as_f64()) * sy;
            total += (dx * dx + dy * dy).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("endpoint error over an empty mask"));
    }
    Ok(total / count as f64)
}
