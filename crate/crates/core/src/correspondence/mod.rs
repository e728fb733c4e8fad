//! Coarse warp grids from per-part nearest neighbours in UV space.
//!
//! For every driving pixel the source pixel of the same body part with the
//! nearest `(u, v)` (Euclidean) is taken as its correspondence. Ties are broken
//! by the smallest source `y`, then `x`. Driving pixels that are background, or
//! whose part is absent from the source, keep the identity coordinate and are
//! flagged unmatched.

mod kdtree;

use rayon::prelude::*;

pub use kdtree::{match_order, uv_distance2, KdTree, UvPoint};

use crate::iuv_io::IuvMap;
use crate::warp::{identity_grid, nearest_index, to_normalized, WarpGrid};
use crate::{Error, Result, Scalar};

/// Source foreground pixels grouped by part, each with a KD-tree over UV.
#[derive(Clone, Debug)]
pub struct PartIndexUV {
    height: usize,
    width: usize,
    /// `trees[p - 1]` indexes part `p`.
    trees: Vec<KdTree>,
}

impl PartIndexUV {
    pub fn n_parts(&self) -> usize {
        self.trees.len()
    }

    pub fn source_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// The part's `(u, v, x, y)` entries (in tree order); empty for parts
    /// without pixels or out of range.
    pub fn part(&self, p: usize) -> &[UvPoint] {
        match p.checked_sub(1).and_then(|i| self.trees.get(i)) {
            Some(t) => t.points(),
            None => &[],
        }
    }

    pub fn tree(&self, p: usize) -> Option<&KdTree> {
        p.checked_sub(1).and_then(|i| self.trees.get(i))
    }
}

/// Indexes every foreground pixel of `source` under its part. Labels above
/// `n_parts` are not indexed (validate the map first).
pub fn build_part_index<T: Scalar>(source: &IuvMap<T>, n_parts: usize) -> PartIndexUV {
    let mut lists: Vec<Vec<UvPoint>> = vec![Vec::new(); n_parts];
    for y in 0..source.height() {
        for x in 0..source.width() {
            let p = source.part(y, x) as usize;
            if p == 0 || p > n_parts {
                continue;
            }
            let (u, v) = source.uv(y, x);
            lists[p - 1].push(UvPoint {
                u: u.as_f64(),
                v: v.as_f64(),
                x: x as u32,
                y: y as u32,
            });
        }
    }
    PartIndexUV {
        height: source.height(),
        width: source.width(),
        trees: lists.into_par_iter().map(KdTree::build).collect(),
    }
}

/// Grid, per-cell matched flag and UV match distance.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceResult<T> {
    pub grid: WarpGrid<T>,
    pub matched: Vec<bool>,
    pub match_distance: Vec<T>,
}

impl<T: Scalar> CorrespondenceResult<T> {
    pub fn matched_count(&self) -> usize {
        self.matched.iter().filter(|&&m| m).count()
    }
}

/// Per-part nearest-neighbour correspondence for every driving pixel. Grid
/// coordinates are normalized with respect to the source image size.
pub fn coarse_warp<T: Scalar>(index: &PartIndexUV, driving: &IuvMap<T>) -> Result<CorrespondenceResult<T>> {
    let (h, w) = (driving.height(), driving.width());
    let mut grid = identity_grid::<T>(h, w)?;
    let rows: Vec<Vec<Option<(UvPoint, f64)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let p = driving.part(y, x) as usize;
                    let tree = index.tree(p)?;
                    let (u, v) = driving.uv(y, x);
                    tree.nearest(u.as_f64(), v.as_f64()).map(|(pt, d)| (*pt, d))
                })
                .collect()
        })
        .collect();
    let mut matched = vec![false; h * w];
    let mut match_distance = vec![T::zero(); h * w];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, hit) in row.into_iter().enumerate() {
            if let Some((pt, d2)) = hit {
                let k = y * w + x;
                matched[k] = true;
                match_distance[k] = T::lit(d2.sqrt());
                grid.set(
                    y,
                    x,
                    (
                        to_normalized(T::lit(pt.x as f64), index.width),
                        to_normalized(T::lit(pt.y as f64), index.height),
                    ),
                );
            }
        }
    }
    Ok(CorrespondenceResult {
        grid,
        matched,
        match_distance,
    })
}

/// Nearest-cell subsampling to `height x width`. The offset of each picked
/// cell from its own identity coordinate is re-applied at the target cell's
/// identity coordinate, so identity and constant-shift grids are preserved
/// exactly at any ratio.
pub fn downsample_grid<T: Scalar>(
    result: &CorrespondenceResult<T>,
    height: usize,
    width: usize,
) -> Result<CorrespondenceResult<T>> {
    let (sh, sw) = (result.grid.height(), result.grid.width());
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("downsample to {height}x{width}")));
    }
    if height > sh || width > sw {
        return Err(Error::invalid(format!(
            "downsample target {height}x{width} exceeds grid {sh}x{sw}"
        )));
    }
    let id_s = identity_grid::<T>(sh, sw)?;
    let id_t = identity_grid::<T>(height, width)?;
    let mut grid = id_t.clone();
    let mut matched = vec![false; height * width];
    let mut match_distance = vec![T::zero(); height * width];
    for y in 0..height {
        let sy = nearest_index(y, height, sh);
        for x in 0..width {
            let sx = nearest_index(x, width, sw);
            let (gx, gy) = result.grid.get(sy, sx);
            let (ix, iy) = id_s.get(sy, sx);
            let (tx, ty) = id_t.get(y, x);
            grid.set(y, x, (tx + (gx - ix), ty + (gy - iy)));
            matched[y * width + x] = result.matched[sy * sw + sx];
            match_distance[y * width + x] = result.match_distance[sy * sw + sx];
        }
    }
    Ok(CorrespondenceResult {
        grid,
        matched,
        match_distance,
    })
}
