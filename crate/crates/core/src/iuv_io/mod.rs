//! IUV maps, frames and sequences, the `.dwt` container, checkpoints and the
//! synthetic scene generator.

mod checkpoint;
mod container;
mod sequence;
pub mod synthetic;

use std::collections::BTreeMap;

pub use checkpoint::{load_params, save_params};
pub use container::{read_map, read_tensor, write_map, write_tensor, DType, DwTensor, TensorData, MAGIC};
pub use sequence::{
    read_grid, read_ground_truth, read_iuv, read_keypoint_track, read_keypoints, read_manifest, read_mask, read_sequence,
    write_grid, write_iuv, write_keypoint_track, write_keypoints, write_mask, write_sequence, SequenceFiles,
};
pub use synthetic::{generate_synthetic_sequence, SyntheticScene, SyntheticSequence};

use crate::metrics::Keypoint;
use crate::tensor_nn::{FeatureMap, Shape};
use crate::warp::nearest_index;
use crate::{Error, FormatError, Result, Scalar};

/// Dense-pose output: per-pixel body-part label (0 = background) and surface
/// coordinates `(u, v)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IuvMap<T> {
    height: usize,
    width: usize,
    part: Vec<u8>,
    u: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> IuvMap<T> {
    pub fn new(height: usize, width: usize, part: Vec<u8>, u: Vec<T>, v: Vec<T>) -> Result<Self> {
        let n = height * width;
        if part.len() != n || u.len() != n || v.len() != n {
            return Err(Error::shape(
                "IuvMap::new",
                format!("{n} entries per plane"),
                format!("{} / {} / {}", part.len(), u.len(), v.len()),
            ));
        }
        Ok(IuvMap {
            height,
            width,
            part,
            u,
            v,
        })
    }

    pub fn background(height: usize, width: usize) -> Self {
        let n = height * width;
        IuvMap {
            height,
            width,
            part: vec![0; n],
            u: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn part(&self, y: usize, x: usize) -> u8 {
        self.part[y * self.width + x]
    }

    #[inline]
    pub fn uv(&self, y: usize, x: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn set(&mut self, y: usize, x: usize, part: u8, u: T, v: T) {
        let i = y * self.width + x;
        self.part[i] = part;
        self.u[i] = u;
        self.v[i] = v;
    }

    pub fn parts(&self) -> &[u8] {
        &self.part
    }

    pub fn foreground_count(&self) -> usize {
        self.part.iter().filter(|&&p| p > 0).count()
    }

    /// Storage form: three planes `(part as real, u, v)`.
    pub fn to_planes(&self) -> FeatureMap<T> {
        let mut data = Vec::with_capacity(3 * self.part.len());
        data.extend(self.part.iter().map(|&p| T::lit(p as f64)));
        data.extend_from_slice(&self.u);
        data.extend_from_slice(&self.v);
        FeatureMap::new(3, self.height, self.width, data).expect("consistent planes")
    }

    pub fn from_planes(planes: &FeatureMap<T>) -> Result<Self, FormatError> {
        if planes.channels() != 3 {
            return Err(FormatError::ShapeMismatch {
                expected: "3 planes (part, u, v)".into(),
                found: planes.shape().to_string(),
            });
        }
        let mut part = Vec::with_capacity(planes.shape().plane());
        for &p in planes.plane(0) {
            let r = p.round();
            if r != p || p < T::zero() || p > T::lit(255.0) {
                return Err(FormatError::ShapeMismatch {
                    expected: "integer part labels in [0, 255]".into(),
                    found: p.to_string(),
                });
            }
            part.push(p.as_f64() as u8);
        }
        Ok(IuvMap {
            height: planes.height(),
            width: planes.width(),
            part,
            u: planes.plane(1).to_vec(),
            v: planes.plane(2).to_vec(),
        })
    }

    /// Network input encoding: `(part / n_parts, u, v)` with background UV
    /// zeroed.
    pub fn encode(&self, n_parts: usize) -> FeatureMap<T> {
        let scale = T::lit(1.0 / n_parts.max(1) as f64);
        let n = self.part.len();
        let mut data = Vec::with_capacity(3 * n);
        data.extend(self.part.iter().map(|&p| T::lit(p as f64) * scale));
        let fg = |i: usize, x: T| if self.part[i] > 0 { x } else { T::zero() };
        data.extend(self.u.iter().enumerate().map(|(i, &x)| fg(i, x)));
        data.extend(self.v.iter().enumerate().map(|(i, &x)| fg(i, x)));
        FeatureMap::new(3, self.height, self.width, data).expect("consistent planes")
    }

    /// Nearest-cell subsampling to `height x width`, using the same cell
    /// mapping as grid downsampling.
    pub fn subsample(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("subsample to zero size"));
        }
        let mut out = IuvMap::background(height, width);
        for y in 0..height {
            let sy = nearest_index(y, height, self.height);
            for x in 0..width {
                let sx = nearest_index(x, width, self.width);
                let (u, v) = self.uv(sy, sx);
                out.set(y, x, self.part(sy, sx), u, v);
            }
        }
        Ok(out)
    }
}

/// Result of [`validate_iuv`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IuvReport {
    /// `(y, x, part)` for labels above the part count.
    pub part_violations: Vec<(usize, usize, u8)>,
    /// `(y, x, u, v)` for foreground pixels with UV outside `[0, 1]`.
    pub uv_violations: Vec<(usize, usize, f64, f64)>,
    pub background_fraction: f64,
    pub no_foreground: bool,
}

impl IuvReport {
    pub fn is_valid(&self) -> bool {
        self.part_violations.is_empty() && self.uv_violations.is_empty()
    }

    pub fn violation_count(&self) -> usize {
        self.part_violations.len() + self.uv_violations.len()
    }
}

impl std::fmt::Display for IuvReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} part violations, {} uv violations, background {:.1}%",
            self.part_violations.len(),
            self.uv_violations.len(),
            100.0 * self.background_fraction
        )?;
        if self.no_foreground {
            write!(f, ", no foreground")?;
        }
        for (y, x, p) in self.part_violations.iter().take(5) {
            write!(f, "\n  part {p} at ({x}, {y})")?;
        }
        for (y, x, u, v) in self.uv_violations.iter().take(5) {
            write!(f, "\n  uv ({u}, {v}) at ({x}, {y})")?;
        }
        Ok(())
    }
}

/// Lists out-of-range labels and UV coordinates. Background pixels' UV are
/// ignored.
pub fn validate_iuv<T: Scalar>(map: &IuvMap<T>, n_parts: usize) -> IuvReport {
    let mut report = IuvReport::default();
    let mut background = 0usize;
    for y in 0..map.height {
        for x in 0..map.width {
            let p = map.part(y, x);
            if p == 0 {
                background += 1;
                continue;
            }
            if p as usize > n_parts {
                report.part_violations.push((y, x, p));
            }
            let (u, v) = map.uv(y, x);
            let in_range = |t: T| t.is_finite() && t >= T::zero() && t <= T::one();
            if !in_range(u) || !in_range(v) {
                report.uv_violations.push((y, x, u.as_f64(), v.as_f64()));
            }
        }
    }
    let total = map.height * map.width;
    report.background_fraction = if total == 0 {
        1.0
    } else {
        background as f64 / total as f64
    };
    report.no_foreground = background == total;
    report
}

/// An image together with its dense-pose map and optional keypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    pub image: FeatureMap<T>,
    pub iuv: IuvMap<T>,
    pub keypoints: Option<Vec<Keypoint>>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(image: FeatureMap<T>, iuv: IuvMap<T>) -> Result<Self> {
        if image.height() != iuv.height() || image.width() != iuv.width() {
            return Err(Error::shape(
                "Frame image vs IUV",
                format!("{}x{}", iuv.height(), iuv.width()),
                format!("{}x{}", image.height(), image.width()),
            ));
        }
        Ok(Frame {
            image,
            iuv,
            keypoints: None,
        })
    }
}

/// A source frame and the driving frames it is animated with.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample<T> {
    pub source: Frame<T>,
    pub driving: Vec<Frame<T>>,
}

impl<T: Scalar> VideoSample<T> {
    pub fn new(source: Frame<T>, driving: Vec<Frame<T>>) -> Result<Self> {
        if driving.is_empty() {
            return Err(Error::invalid("video sample needs at least one driving frame"));
        }
        let shape: Shape = source.image.shape();
        for (i, f) in driving.iter().enumerate() {
            if f.image.shape() != shape || f.iuv.height() != source.iuv.height() || f.iuv.width() != source.iuv.width() {
                return Err(Error::shape("driving frame", shape, format!("frame {i}: {}", f.image.shape())));
            }
        }
        Ok(VideoSample { source, driving })
    }

    /// All frames as one video: the source first, then the driving frames.
    pub fn frames(&self) -> impl Iterator<Item = &Frame<T>> {
        std::iter::once(&self.source).chain(self.driving.iter())
    }

    pub fn len(&self) -> usize {
        1 + self.driving.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frame(&self, i: usize) -> Option<&Frame<T>> {
        if i == 0 {
            Some(&self.source)
        } else {
            self.driving.get(i - 1)
        }
    }
}

/// Parses UTF-8 `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, FormatError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::Manifest(format!("line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
