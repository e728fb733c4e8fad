//! Synthetic videos with exact ground-truth warps.
//!
//! A scene is a rigid "body" of 2–4 elliptical parts over a static background.
//! Each part has an affine UV parameterization and a texture tile. The source
//! frame shows the body at rest; driving frame `k` applies rigid motion `k`
//! (rotation and scale about the body origin, then translation).
//!
//! Driving foreground colors are the source image bilinearly resampled at the
//! closed-form rest location, so the ground-truth grid reproduces them with the
//! bilinear sampler up to rounding.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Frame, IuvMap, VideoSample};
use crate::metrics::Keypoint;
use crate::tensor_nn::{FeatureMap, Shape};
use crate::warp::{bilinear_sample, identity_grid, to_normalized, upsample_grid, WarpGrid};
use crate::{Error, Result, Scalar, DEFAULT_PARTS};

/// Rotation (radians) and scale about the body origin, then translation in
/// pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub translation: (f64, f64),
    pub rotation: f64,
    pub scale: f64,
}

impl RigidMotion {
    pub const REST: RigidMotion = RigidMotion {
        translation: (0.0, 0.0),
        rotation: 0.0,
        scale: 1.0,
    };

    pub fn translation(dx: f64, dy: f64) -> Self {
        RigidMotion {
            translation: (dx, dy),
            ..Self::REST
        }
    }

    /// Body-frame offset `b` to its moved offset.
    pub fn apply(&self, b: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            self.scale * (c * b.0 - s * b.1) + self.translation.0,
            self.scale * (s * b.0 + c * b.1) + self.translation.1,
        )
    }

    /// Moved offset back to the body frame.
    pub fn invert(&self, q: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (x, y) = (q.0 - self.translation.0, q.1 - self.translation.1);
        ((c * x + s * y) / self.scale, (-s * x + c * y) / self.scale)
    }
}

/// An elliptical part in body coordinates. `u` runs along the first axis and
/// `v` along the second, both affinely over `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipsePart {
    pub label: u8,
    pub center: (f64, f64),
    pub axes: (f64, f64),
    pub angle: f64,
}

impl EllipsePart {
    /// `(u, v)` if the body point lies inside the ellipse.
    pub fn uv_at(&self, b: (f64, f64)) -> Option<(f64, f64)> {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (b.0 - self.center.0, b.1 - self.center.1);
        let lx = (c * dx + s * dy) / self.axes.0;
        let ly = (-s * dx + c * dy) / self.axes.1;
        if lx * lx + ly * ly <= 1.0 {
            Some((0.5 * (lx + 1.0), 0.5 * (ly + 1.0)))
        } else {
            None
        }
    }
}

/// Optional damage applied to driving IUV maps, imitating dense-pose errors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IuvCorruption {
    /// Standard deviation of Gaussian noise added to `u` and `v` (clamped).
    pub uv_sigma: f64,
    /// Probability that a part is missing from a driving frame.
    pub drop_part_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub height: usize,
    pub width: usize,
    /// Drawing order; later parts cover earlier ones.
    pub parts: Vec<EllipsePart>,
    /// Integer pixel position of the body origin in the source frame.
    pub origin: (f64, f64),
    /// `3 x tile x (parts * tile)`: part `i` uses columns `[i*tile, (i+1)*tile)`.
    pub atlas: FeatureMap<f64>,
    pub background: FeatureMap<f64>,
    /// Motion of each driving frame.
    pub motions: Vec<RigidMotion>,
    pub corruption: Option<IuvCorruption>,
}

/// Parameters for [`SyntheticScene::random`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Inclusive range of part counts.
    pub parts: (usize, usize),
    pub tile: usize,
    /// Peak deviation of texture values from the tile's base color.
    pub texture_amplitude: f64,
    /// Sinusoid cycles across a tile.
    pub texture_frequency: f64,
    /// Peak translation in pixels, as a fraction of the image size.
    pub max_translation: f64,
    pub max_rotation: f64,
    pub max_scale_change: f64,
    pub corruption: Option<IuvCorruption>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            frames: 32,
            parts: (2, 4),
            tile: 16,
            texture_amplitude: 0.5,
            texture_frequency: 0.5,
            max_translation: 0.12,
            max_rotation: 0.35,
            max_scale_change: 0.1,
            corruption: None,
        }
    }
}

/// A rendered sequence with per-driving-frame ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence<T> {
    pub sample: VideoSample<T>,
    /// Driving frame `k` cell to its exact source location; identity on
    /// background.
    pub gt_grids: Vec<WarpGrid<T>>,
    pub foreground: Vec<Vec<bool>>,
    /// Foreground cells whose source location has all four bilinear
    /// neighbours inside the same part.
    pub interior: Vec<Vec<bool>>,
}

fn smooth_tile(tile: usize, amplitude: f64, frequency: f64, rng: &mut impl Rng) -> [Vec<f64>; 3] {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
    std::array::from_fn(|c| {
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (g, d) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let mut out = Vec::with_capacity(tile * tile);
        for y in 0..tile {
            let v = y as f64 / (tile - 1) as f64;
            for x in 0..tile {
                let u = x as f64 / (tile - 1) as f64;
                let ramp = 0.5 * (a * (u - 0.5) + b * (v - 0.5));
                let wave = 0.5 * (std::f64::consts::TAU * frequency * (g * u + d * v) + phase).sin();
                out.push((base[c] + amplitude * (ramp + wave)).clamp(-0.95, 0.95));
            }
        }
        out
    })
}

impl SyntheticScene {
    pub fn new(
        height: usize,
        width: usize,
        parts: Vec<EllipsePart>,
        origin: (f64, f64),
        atlas: FeatureMap<f64>,
        background: FeatureMap<f64>,
        motions: Vec<RigidMotion>,
    ) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("scene needs at least one part"));
        }
        let mut labels: Vec<u8> = parts.iter().map(|p| p.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != parts.len() || labels[0] == 0 || labels[labels.len() - 1] as usize > DEFAULT_PARTS {
            return Err(Error::invalid("part labels must be distinct and in 1..=24"));
        }
        if atlas.channels() != 3 || atlas.width() != parts.len() * atlas.height() || atlas.height() < 2 {
            return Err(Error::shape("texture atlas", format!("3 x t x {}t", parts.len()), atlas.shape()));
        }
        background.expect_shape(Shape::new(3, height, width), "scene background")?;
        if origin.0.fract() != 0.0 || origin.1.fract() != 0.0 {
            return Err(Error::invalid("body origin must be an integer pixel"));
        }
        Ok(SyntheticScene {
            height,
            width,
            parts,
            origin,
            atlas,
            background,
            motions,
            corruption: None,
        })
    }

    /// A seeded random scene with smooth, temporally coherent motion.
    pub fn random(config: &SceneConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (config.height, config.width);
        if h < 8 || w < 8 || config.tile < 2 {
            return Err(Error::invalid("scene must be at least 8x8 with tiles of at least 2"));
        }
        let size = h.min(w) as f64;
        let n = rng.random_range(config.parts.0..=config.parts.1).clamp(1, DEFAULT_PARTS);
        let labels = sample(&mut rng, DEFAULT_PARTS, n);
        let origin = ((w / 2) as f64, (h / 2) as f64);
        let parts: Vec<EllipsePart> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let spread = 0.16 * size;
                let angle = std::f64::consts::TAU * i as f64 / n as f64 + rng.random_range(-0.4..0.4);
                EllipsePart {
                    label: l as u8 + 1,
                    center: (spread * angle.cos(), spread * angle.sin()),
                    axes: (
                        rng.random_range(0.14..0.22) * size,
                        rng.random_range(0.10..0.16) * size,
                    ),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                }
            })
            .collect();

        let t = config.tile;
        let mut atlas = FeatureMap::zeros(Shape::new(3, t, n * t));
        for i in 0..n {
            let tile = smooth_tile(t, config.texture_amplitude, config.texture_frequency, &mut rng);
            for (c, plane) in tile.iter().enumerate() {
                for y in 0..t {
                    for x in 0..t {
                        atlas.set(c, y, i * t + x, plane[y * t + x]);
                    }
                }
            }
        }
        let bg_base: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.8..-0.2));
        let bg_slope: [(f64, f64); 3] =
            std::array::from_fn(|_| (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)));
        let background = FeatureMap::from_fn(Shape::new(3, h, w), |c, y, x| {
            bg_base[c] + bg_slope[c].0 * (x as f64 / w as f64 - 0.5) + bg_slope[c].1 * (y as f64 / h as f64 - 0.5)
        });

        let amp_t = config.max_translation * size;
        let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
        let speeds: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.08..0.2));
        let motions = (1..=config.frames)
            .map(|k| {
                let k = k as f64;
                RigidMotion {
                    translation: (
                        amp_t * (speeds[0] * k + phases[0]).sin() - amp_t * phases[0].sin(),
                        amp_t * (speeds[1] * k + phases[1]).sin() - amp_t * phases[1].sin(),
                    ),
                    rotation: config.max_rotation * ((speeds[2] * k + phases[2]).sin() - phases[2].sin()) / 2.0,
                    scale: 1.0 + config.max_scale_change * ((speeds[3] * k + phases[3]).sin() - phases[3].sin()) / 2.0,
                }
            })
            .collect();
        let mut scene = SyntheticScene::new(h, w, parts, origin, atlas, background, motions)?;
        scene.corruption = config.corruption;
        Ok(scene)
    }

    pub fn tile(&self) -> usize {
        self.atlas.height()
    }

    /// Part index (into `parts`) and `(u, v)` of the topmost part at a body
    /// point.
    pub fn surface_at(&self, b: (f64, f64)) -> Option<(usize, f64, f64)> {
        self.parts
            .iter()
            .enumerate()
            .rev()
            .find_map(|(i, p)| p.uv_at(b).map(|(u, v)| (i, u, v)))
    }

    /// Texture color of part `i` at `(u, v)`, bilinear within its tile.
    pub fn texture(&self, i: usize, u: f64, v: f64) -> [f64; 3] {
        let t = self.tile();
        let last = (t - 1) as f64;
        let px = (u.clamp(0.0, 1.0) * last).min(last);
        let py = (v.clamp(0.0, 1.0) * last).min(last);
        let (x0, y0) = ((px.floor() as usize).min(t - 2), (py.floor() as usize).min(t - 2));
        let (fx, fy) = (px - x0 as f64, py - y0 as f64);
        let off = i * t;
        std::array::from_fn(|c| {
            let a = |y: usize, x: usize| self.atlas.get(c, y, off + x);
            let top = a(y0, x0) * (1.0 - fx) + a(y0, x0 + 1) * fx;
            let bottom = a(y0 + 1, x0) * (1.0 - fx) + a(y0 + 1, x0 + 1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    /// Source frame in 64-bit: image and exact IUV.
    pub fn render_source(&self) -> (FeatureMap<f64>, IuvMap<f64>) {
        let mut image = self.background.clone();
        let mut iuv = IuvMap::background(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let b = (x as f64 - self.origin.0, y as f64 - self.origin.1);
                if let Some((i, u, v)) = self.surface_at(b) {
                    let rgb = self.texture(i, u, v);
                    for (c, val) in rgb.iter().enumerate() {
                        image.set(c, y, x, *val);
                    }
                    iuv.set(y, x, self.parts[i].label, u, v);
                }
            }
        }
        (image, iuv)
    }

    /// Keypoints (one per part center) under a motion; invisible when outside
    /// the frame.
    pub fn keypoints(&self, motion: &RigidMotion) -> Vec<Keypoint> {
        self.parts
            .iter()
            .map(|p| {
                let (dx, dy) = motion.apply(p.center);
                let (x, y) = (self.origin.0 + dx, self.origin.1 + dy);
                let visible = x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64;
                Keypoint { x, y, visible }
            })
            .collect()
    }

    pub fn with_motions(&self, motions: Vec<RigidMotion>) -> Self {
        SyntheticScene {
            motions,
            ..self.clone()
        }
    }
}

struct DrivingRender {
    image: FeatureMap<f64>,
    iuv: IuvMap<f64>,
    grid: WarpGrid<f64>,
    foreground: Vec<bool>,
    interior: Vec<bool>,
}

fn render_driving(
    scene: &SyntheticScene,
    source: &FeatureMap<f64>,
    source_iuv: &IuvMap<f64>,
    motion: &RigidMotion,
) -> DrivingRender {
    let (h, w) = (scene.height, scene.width);
    let mut image = scene.background.clone();
    let mut iuv = IuvMap::background(h, w);
    let mut grid = identity_grid::<f64>(h, w).expect("non-empty scene");
    let mut foreground = vec![false; h * w];
    let mut interior = vec![false; h * w];
    let mut locations = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let q = (x as f64 - scene.origin.0, y as f64 - scene.origin.1);
            let b = motion.invert(q);
            let Some((i, u, v)) = scene.surface_at(b) else {
                continue;
            };
            let label = scene.parts[i].label;
            let p = (scene.origin.0 + b.0, scene.origin.1 + b.1);
            let k = y * w + x;
            iuv.set(y, x, label, u, v);
            foreground[k] = true;
            grid.set(y, x, (to_normalized(p.0, w), to_normalized(p.1, h)));
            let (x0, y0) = (p.0.floor(), p.1.floor());
            interior[k] = x0 >= 0.0
                && y0 >= 0.0
                && x0 + 1.0 <= (w - 1) as f64
                && y0 + 1.0 <= (h - 1) as f64
                && [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .all(|&(dy, dx)| source_iuv.part(y0 as usize + dy, x0 as usize + dx) == label);
            locations.push((y, x));
        }
    }
    let warped = bilinear_sample(source, &grid).expect("non-empty source");
    for (y, x) in locations {
        for c in 0..3 {
            image.set(c, y, x, warped.get(c, y, x));
        }
    }
    DrivingRender {
        image,
        iuv,
        grid,
        foreground,
        interior,
    }
}

fn corrupt<T: Scalar>(iuv: &mut IuvMap<T>, labels: &[u8], c: &IuvCorruption, rng: &mut ChaCha8Rng) {
    let dropped: Vec<u8> = labels
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < c.drop_part_prob)
        .collect();
    let noise = Normal::new(0.0, c.uv_sigma.max(0.0)).expect("finite sigma");
    for y in 0..iuv.height() {
        for x in 0..iuv.width() {
            let p = iuv.part(y, x);
            if p == 0 {
                continue;
            }
            if dropped.contains(&p) {
                iuv.set(y, x, 0, T::zero(), T::zero());
                continue;
            }
            if c.uv_sigma > 0.0 {
                let (u, v) = iuv.uv(y, x);
                let nu = (u.as_f64() + noise.sample(rng)).clamp(0.0, 1.0);
                let nv = (v.as_f64() + noise.sample(rng)).clamp(0.0, 1.0);
                iuv.set(y, x, p, T::lit(nu), T::lit(nv));
            }
        }
    }
}

fn cast_iuv<T: Scalar>(m: &IuvMap<f64>) -> IuvMap<T> {
    let planes = m.to_planes().cast::<T>();
    IuvMap::from_planes(&planes).expect("labels survive the cast")
}

/// Renders the source frame and `n_frames` driving frames from the scene's
/// first `n_frames` motions.
///
/// `seed` drives the optional IUV corruption; everything else is a pure
/// function of the scene.
pub fn generate_synthetic_sequence<T: Scalar>(
    scene: &SyntheticScene,
    n_frames: usize,
    seed: u64,
) -> Result<SyntheticSequence<T>> {
    if n_frames < 2 {
        return Err(Error::invalid(format!("synthetic sequences need at least 2 frames, got {n_frames}")));
    }
    if scene.motions.len() < n_frames {
        return Err(Error::invalid(format!(
            "scene has {} motions, {n_frames} frames requested",
            scene.motions.len()
        )));
    }
    let (src_img, src_iuv) = scene.render_source();
    let src_fg = src_iuv.foreground_count();
    if src_fg == 0 {
        return Err(Error::OutOfFrame("source frame has no foreground".into()));
    }
    let labels: Vec<u8> = scene.parts.iter().map(|p| p.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = Frame::new(src_img.cast::<T>(), cast_iuv(&src_iuv))?;
    source.keypoints = Some(scene.keypoints(&RigidMotion::REST));
    let mut driving = Vec::with_capacity(n_frames);
    let mut gt_grids = Vec::with_capacity(n_frames);
    let mut foreground = Vec::with_capacity(n_frames);
    let mut interior = Vec::with_capacity(n_frames);
    for (k, motion) in scene.motions.iter().take(n_frames).enumerate() {
        let r = render_driving(scene, &src_img, &src_iuv, motion);
        let count = r.foreground.iter().filter(|&&f| f).count() as f64;
        let expected = src_fg as f64 * motion.scale * motion.scale;
        if count < 0.5 * expected {
            return Err(Error::OutOfFrame(format!(
                "driving frame {} keeps {count} of ~{expected:.0} foreground pixels",
                k + 1
            )));
        }
        let mut iuv = cast_iuv::<T>(&r.iuv);
        if let Some(c) = &scene.corruption {
            corrupt(&mut iuv, &labels, c, &mut rng);
        }
        let mut frame = Frame::new(r.image.cast::<T>(), iuv)?;
        frame.keypoints = Some(scene.keypoints(motion));
        driving.push(frame);
        gt_grids.push(r.grid.cast::<T>());
        foreground.push(r.foreground);
        interior.push(r.interior);
    }
    Ok(SyntheticSequence {
        sample: VideoSample::new(source, driving)?,
        gt_grids,
        foreground,
        interior,
    })
}

/// Spatially smooth random offsets (a relative grid) with per-axis marginal
/// standard deviation `sigma_px` pixels of a `source_height x source_width`
/// image. Gaussian values on a `lattice x lattice` control grid are bilinearly
/// upsampled, then rescaled to the requested deviation.
pub fn smooth_noise_field<T: Scalar>(
    height: usize,
    width: usize,
    sigma_px: f64,
    lattice: usize,
    source_height: usize,
    source_width: usize,
    rng: &mut impl Rng,
) -> Result<WarpGrid<T>> {
    let lattice = lattice.max(2);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let control = WarpGrid::<f64>::from_fn(lattice, lattice, |_, _| (normal.sample(rng), normal.sample(rng)));
    let id_c = identity_grid::<f64>(lattice, lattice)?;
    let dense = upsample_grid(&control.add(&id_c)?, height, width)?;
    let rel = crate::warp::to_relative(&dense);
    let n = rel.cells() as f64;
    let mut out = rel.clone();
    for (axis, size) in [(0usize, source_width), (1usize, source_height)] {
        let plane = rel.as_map().plane(axis);
        let mean = plane.iter().sum::<f64>() / n;
        let var = plane.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let px_to_norm = if size > 1 { 2.0 / (size - 1) as f64 } else { 0.0 };
        let gain = if var > 0.0 { sigma_px * px_to_norm / var.sqrt() } else { 0.0 };
        for y in 0..height {
            for x in 0..width {
                let (mut cx, mut cy) = out.get(y, x);
                if axis == 0 {
                    cx = (cx - mean) * gain;
                } else {
                    cy = (cy - mean) * gain;
                }
                out.set(y, x, (cx, cy));
            }
        }
    }
    Ok(out.cast())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motion_inverts() {
        let m = RigidMotion {
            translation: (3.0, -2.0),
            rotation: 0.3,
            scale: 1.1,
        };
        let b = (4.0, 7.0);
        let r = m.invert(m.apply(b));
        assert!((r.0 - b.0).abs() < 1e-12 && (r.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn random_scene_is_deterministic() {
        let cfg = SceneConfig {
            frames: 4,
            ..Default::default()
        };
        let a = SyntheticScene::random(&cfg, 3).unwrap();
        assert_eq!(a, SyntheticScene::random(&cfg, 3).unwrap());
        assert!((2..=4).contains(&a.parts.len()));
    }

    #[test]
    fn one_frame_rejected() {
        let cfg = SceneConfig {
            frames: 4,
            ..Default::default()
        };
        let s = SyntheticScene::random(&cfg, 1).unwrap();
        assert!(generate_synthetic_sequence::<f32>(&s, 1, 0).is_err());
    }
}
