//! Sequence directories:
//!
//! ```text
//! manifest.txt          source=<index>, frames=<count>
//! frames/0000.img.dwt   3 x H x W image in [-1, 1]
//! frames/0000.iuv.dwt   3 x H x W planes (part, u, v)
//! frames/0000.kp.dwt    K x 3 keypoints (x, y, visible), optional
//! frames/0001.gt.dwt    2 x H x W ground-truth grid, optional
//! frames/0001.gtmask.dwt 1 x H x W foreground mask, optional
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::container::{read_tensor, write_map, write_tensor, DwTensor, TensorData};
use super::{parse_key_values, read_map, Frame, IuvMap, VideoSample};
use crate::metrics::Keypoint;
use crate::warp::WarpGrid;
use crate::{Error, FormatError, Result, Scalar};

pub const MANIFEST: &str = "manifest.txt";

/// Paths of one frame's files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceFiles {
    pub image: PathBuf,
    pub iuv: PathBuf,
    pub keypoints: PathBuf,
    pub gt_grid: PathBuf,
    pub gt_mask: PathBuf,
}

impl SequenceFiles {
    pub fn new(dir: impl AsRef<Path>, index: usize) -> Self {
        let base = dir.as_ref().join("frames");
        let f = |ext: &str| base.join(format!("{index:04}.{ext}.dwt"));
        SequenceFiles {
            image: f("img"),
            iuv: f("iuv"),
            keypoints: f("kp"),
            gt_grid: f("gt"),
            gt_mask: f("gtmask"),
        }
    }
}

fn format_err(path: &Path, source: FormatError) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_keypoints(path: impl AsRef<Path>, keypoints: &[Keypoint]) -> Result<()> {
    let data = keypoints
        .iter()
        .flat_map(|k| [k.x as f32, k.y as f32, if k.visible { 1.0 } else { 0.0 }])
        .collect();
    let t = DwTensor::new(vec![keypoints.len(), 3], TensorData::F32(data)).map_err(|e| format_err(path.as_ref(), e))?;
    write_tensor(path, &t)
}

/// Reads `K x 3` keypoints; `F x K x 3` tracks go through [`read_keypoint_track`].
pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<Keypoint>> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    if t.shape.len() != 2 || t.shape[1] != 3 {
        return Err(format_err(
            path,
            FormatError::ShapeMismatch {
                expected: "K x 3".into(),
                found: format!("{:?}", t.shape),
            },
        ));
    }
    keypoint_rows(path, &t)
}

/// Reads an `F x K x 3` keypoint track.
pub fn read_keypoint_track(path: impl AsRef<Path>) -> Result<Vec<Vec<Keypoint>>> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    if t.shape.len() != 3 || t.shape[2] != 3 {
        return Err(format_err(
            path,
            FormatError::ShapeMismatch {
                expected: "F x K x 3".into(),
                found: format!("{:?}", t.shape),
            },
        ));
    }
    let rows = keypoint_rows(path, &t)?;
    let k = t.shape[1];
    Ok(if k == 0 {
        vec![Vec::new(); t.shape[0]]
    } else {
        rows.chunks(k).map(|c| c.to_vec()).collect()
    })
}

pub fn write_keypoint_track(path: impl AsRef<Path>, track: &[Vec<Keypoint>]) -> Result<()> {
    let k = track.first().map_or(0, |f| f.len());
    if track.iter().any(|f| f.len() != k) {
        return Err(Error::invalid("keypoint track frames differ in keypoint count"));
    }
    let data = track
        .iter()
        .flatten()
        .flat_map(|p| [p.x as f32, p.y as f32, if p.visible { 1.0 } else { 0.0 }])
        .collect();
    let t = DwTensor::new(vec![track.len(), k, 3], TensorData::F32(data)).map_err(|e| format_err(path.as_ref(), e))?;
    write_tensor(path, &t)
}

fn keypoint_rows(path: &Path, t: &DwTensor) -> Result<Vec<Keypoint>> {
    let values: Vec<f64> = match &t.data {
        TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        TensorData::F64(v) => v.clone(),
        _ => {
            return Err(format_err(
                path,
                FormatError::DtypeMismatch {
                    expected: "f32 or f64",
                    found: t.dtype().name(),
                },
            ))
        }
    };
    Ok(values
        .chunks_exact(3)
        .map(|r| Keypoint {
            x: r[0],
            y: r[1],
            visible: r[2] > 0.5,
        })
        .collect())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &[bool], height: usize, width: usize) -> Result<()> {
    let t = DwTensor::new(
        vec![1, height, width],
        TensorData::U8(mask.iter().map(|&m| m as u8).collect()),
    )
    .map_err(|e| format_err(path.as_ref(), e))?;
    write_tensor(path, &t)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    match t.data {
        TensorData::U8(v) if t.shape.len() == 3 && t.shape[0] == 1 => Ok(v.into_iter().map(|b| b != 0).collect()),
        _ => Err(format_err(
            path,
            FormatError::ShapeMismatch {
                expected: "1 x H x W u8 mask".into(),
                found: format!("{:?} {}", t.shape, t.dtype().name()),
            },
        )),
    }
}

pub fn read_iuv<T: Scalar>(path: impl AsRef<Path>) -> Result<IuvMap<T>> {
    let path = path.as_ref();
    let planes = read_map::<T>(path)?;
    IuvMap::from_planes(&planes).map_err(|e| format_err(path, e))
}

pub fn write_iuv<T: Scalar>(path: impl AsRef<Path>, iuv: &IuvMap<T>) -> Result<()> {
    write_map(path, &iuv.to_planes())
}

pub fn read_grid<T: Scalar>(path: impl AsRef<Path>) -> Result<WarpGrid<T>> {
    let path = path.as_ref();
    let map = read_map::<T>(path)?;
    WarpGrid::from_map(map).map_err(|_| {
        format_err(
            path,
            FormatError::ShapeMismatch {
                expected: "2 x H x W grid".into(),
                found: "other channel count".into(),
            },
        )
    })
}

pub fn write_grid<T: Scalar>(path: impl AsRef<Path>, grid: &WarpGrid<T>) -> Result<()> {
    write_map(path, grid.as_map())
}

/// Writes a sequence directory; frame 0 is the source. `ground_truth`, if
/// given, holds one grid and mask per driving frame.
pub fn write_sequence<T: Scalar>(
    dir: impl AsRef<Path>,
    sample: &VideoSample<T>,
    ground_truth: Option<(&[WarpGrid<T>], &[Vec<bool>])>,
) -> Result<()> {
    let dir = dir.as_ref();
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    for (i, frame) in sample.frames().enumerate() {
        let files = SequenceFiles::new(dir, i);
        write_map(&files.image, &frame.image)?;
        write_iuv(&files.iuv, &frame.iuv)?;
        if let Some(kp) = &frame.keypoints {
            write_keypoints(&files.keypoints, kp)?;
        }
    }
    if let Some((grids, masks)) = ground_truth {
        if grids.len() != sample.driving.len() || masks.len() != sample.driving.len() {
            return Err(Error::invalid("one ground-truth grid and mask per driving frame"));
        }
        for (k, (g, m)) in grids.iter().zip(masks).enumerate() {
            let files = SequenceFiles::new(dir, k + 1);
            write_grid(&files.gt_grid, g)?;
            write_mask(&files.gt_mask, m, g.height(), g.width())?;
        }
    }
    let manifest = dir.join(MANIFEST);
    fs::write(&manifest, format!("source=0\nframes={}\n", sample.len())).map_err(|e| Error::io(&manifest, e))
}

/// Frame count and source index from a sequence manifest.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let kv = parse_key_values(&text).map_err(|e| format_err(&path, e))?;
    let field = |k: &str| -> Result<usize> {
        kv.get(k)
            .ok_or_else(|| format_err(&path, FormatError::Manifest(format!("missing `{k}`"))))?
            .parse()
            .map_err(|_| format_err(&path, FormatError::Manifest(format!("`{k}` is not a count"))))
    };
    let (frames, source) = (field("frames")?, field("source")?);
    if source >= frames {
        return Err(format_err(
            &path,
            FormatError::Manifest(format!("source {source} outside {frames} frames")),
        ));
    }
    Ok((frames, source))
}

/// Reads a sequence directory. Driving frames are all frames except the
/// source, in index order.
pub fn read_sequence<T: Scalar>(dir: impl AsRef<Path>) -> Result<VideoSample<T>> {
    let dir = dir.as_ref();
    let (count, source_idx) = read_manifest(dir)?;
    let mut source = None;
    let mut driving = Vec::with_capacity(count.saturating_sub(1));
    for i in 0..count {
        let files = SequenceFiles::new(dir, i);
        let mut frame = Frame::new(read_map(&files.image)?, read_iuv(&files.iuv)?)?;
        if files.keypoints.exists() {
            frame.keypoints = Some(read_keypoints(&files.keypoints)?);
        }
        if i == source_idx {
            source = Some(frame);
        } else {
            driving.push(frame);
        }
    }
    VideoSample::new(source.expect("source index checked"), driving)
}

/// Ground-truth grids and masks of the driving frames, if present.
pub fn read_ground_truth<T: Scalar>(dir: impl AsRef<Path>) -> Result<Option<(Vec<WarpGrid<T>>, Vec<Vec<bool>>)>> {
    let dir = dir.as_ref();
    let (count, source_idx) = read_manifest(dir)?;
    let (mut grids, mut masks) = (Vec::new(), Vec::new());
    for i in (0..count).filter(|&i| i != source_idx) {
        let files = SequenceFiles::new(dir, i);
        if !files.gt_grid.exists() {
            return Ok(None);
        }
        grids.push(read_grid(&files.gt_grid)?);
        masks.push(read_mask(&files.gt_mask)?);
    }
    Ok(Some((grids, masks)))
}
