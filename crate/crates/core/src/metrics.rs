//! Evaluation metrics: perceptual distance, Fréchet distance between
//! embedding sets, and average keypoint distance. All in `f64`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::losses::{reconstruction_loss, FeatureExtractor};
use crate::tensor_nn::FeatureMap;
use crate::{Error, Result, Scalar};

/// Eigenvalues below this fraction of the largest one are treated as zero.
/// Relative, so tiny but well-conditioned covariances keep their spectrum.
pub const EIGEN_FLOOR: f64 = 1e-14;
/// Largest tolerated `|A - A^T|` entry.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// A 2-D keypoint in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Keypoint { x, y, visible: true }
    }
}

/// `K` keypoints per frame, the same `K` in every frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeypointTrack {
    frames: Vec<Vec<Keypoint>>,
}

impl KeypointTrack {
    pub fn new(frames: Vec<Vec<Keypoint>>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != first.len()) {
                return Err(Error::shape("keypoint track", first.len(), format!("{} in frame {i}", f.len())));
            }
        }
        Ok(KeypointTrack { frames })
    }

    pub fn frames(&self) -> &[Vec<Keypoint>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn keypoints_per_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }
}

/// `n x d` embedding vectors, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::shape("EmbeddingSet", format!("{n} x {d}"), data.len()));
        }
        if n < 2 || d == 0 {
            return Err(Error::invalid(format!("need n >= 2 and d >= 1 embeddings, got {n} x {d}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding {} component {}", i / d, i % d)));
        }
        Ok(EmbeddingSet { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("embedding rows differ in length"));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.d);
        for i in 0..self.n {
            for (k, v) in self.row(i).iter().enumerate() {
                m[k] += v;
            }
        }
        m / self.n as f64
    }

    /// Unbiased (`n - 1`) sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut c = DMatrix::zeros(self.d, self.d);
        for i in 0..self.n {
            let r = DVector::from_iterator(self.d, self.row(i).iter().copied()) - &mu;
            c += &r * r.transpose();
        }
        c / (self.n - 1) as f64
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::shape("matrix_sqrt_product", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if let Some(v) = m.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} contains {v}")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!("{name} is not symmetric (max |A - A^T| = {asym:e})")));
    }
    Ok(())
}

fn eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.amax().max(1.0);
    SymmetricEigen::try_new(sym, f64::EPSILON, 10_000).ok_or(Error::NonConvergent { residual: scale })
}

fn floored_roots(eigenvalues: &DVector<f64>) -> DVector<f64> {
    let floor = EIGEN_FLOOR * eigenvalues.max().max(0.0);
    eigenvalues.map(|l| if l <= floor { 0.0 } else { l.sqrt() })
}

/// Principal square root of a symmetric PSD matrix; eigenvalues below
/// [`EIGEN_FLOOR`] times the largest are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = eigen(m)?;
    let roots = floored_roots(&e.eigenvalues);
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose())
}

/// `Tr((A B)^{1/2})` for symmetric PSD `A`, `B`, computed as
/// `Tr((A^{1/2} B A^{1/2})^{1/2})`.
pub fn matrix_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(a, "A")?;
    check_symmetric(b, "B")?;
    if a.shape() != b.shape() {
        return Err(Error::shape("matrix_sqrt_product", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let ra = psd_sqrt(a)?;
    let m = &ra * b * &ra;
    let e = eigen(&m)?;
    let roots = floored_roots(&e.eigenvalues);
    let s = &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose();
    let residual = (&s * &s - (&m + m.transpose()) * 0.5).norm();
    if residual > 1e-6 * m.norm().max(1.0) {
        return Err(Error::NonConvergent { residual });
    }
    Ok(roots.sum())
}

/// Fréchet distance between Gaussian fits of two embedding sets, clamped at
/// zero.
pub fn frechet_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.d != b.d {
        return Err(Error::shape("frechet_distance", format!("d = {}", a.d), format!("d = {}", b.d)));
    }
    let dm = a.mean() - b.mean();
    let (ca, cb) = (a.covariance(), b.covariance());
    let cross = matrix_sqrt_product(&ca, &cb)?;
    let fd = dm.dot(&dm) + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(fd.max(0.0))
}

/// Mean Euclidean distance over `(frame, keypoint)` pairs visible in both
/// tracks.
pub fn akd(pred: &KeypointTrack, gt: &KeypointTrack) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("akd frames", gt.len(), pred.len()));
    }
    if pred.keypoints_per_frame() != gt.keypoints_per_frame() {
        return Err(Error::shape("akd keypoints", gt.keypoints_per_frame(), pred.keypoints_per_frame()));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (fp, fg) in pred.frames.iter().zip(&gt.frames) {
        for (p, g) in fp.iter().zip(fg) {
            if p.visible && g.visible {
                total += (p.x - g.x).hypot(p.y - g.y);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("akd: no keypoint visible in both tracks"));
    }
    Ok(total / count as f64)
}

/// Reconstruction loss with a single fixed extractor.
pub fn perceptual_distance<T: Scalar>(
    extractor: &dyn FeatureExtractor<T>,
    a: &FeatureMap<T>,
    b: &FeatureMap<T>,
) -> Result<f64> {
    Ok(reconstruction_loss(&[extractor], a, b)?.as_f64())
}

/// Embeds each image as the channel means of every extractor tap,
/// concatenated.
pub fn pooled_embeddings<T: Scalar>(extractor: &dyn FeatureExtractor<T>, images: &[FeatureMap<T>]) -> Result<EmbeddingSet> {
    let rows = images
        .iter()
        .map(|img| {
            Ok(extractor
                .extract(img)?
                .iter()
                .flat_map(|f| (0..f.channels()).map(|c| {
                    let p = f.plane(c);
                    p.iter().map(|v| v.as_f64()).sum::<f64>() / p.len().max(1) as f64
                }).collect::<Vec<_>>())
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    EmbeddingSet::from_rows(&rows)
}
