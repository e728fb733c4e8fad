use std::borrow::Borrow;

use super::net::{FrameGenerator, GeneratorNet};
use crate::iuv_io::{Frame, IuvMap};
use crate::tensor_nn::FeatureMap;
use crate::{Result, Scalar};

/// An image produced by a generator. Only this crate can construct one, so a
/// real driving frame cannot be passed where a generated frame is expected.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedFrame<T> {
    image: FeatureMap<T>,
    /// Position in the rollout that produced it (0-based).
    index: usize,
}

impl<T: Scalar> GeneratedFrame<T> {
    pub(crate) fn new(image: FeatureMap<T>, index: usize) -> Self {
        GeneratedFrame { image, index }
    }

    pub fn image(&self) -> &FeatureMap<T> {
        &self.image
    }

    pub fn into_image(self) -> FeatureMap<T> {
        self.image
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

/// What the previous-frame path is conditioned on.
#[derive(Clone, Copy, Debug)]
pub enum PrevFrame<'a, T> {
    /// First frame: the source stands in for the previous frame.
    Source,
    /// A generated frame and the pose it was generated for.
    Generated {
        frame: &'a GeneratedFrame<T>,
        pose: &'a IuvMap<T>,
    },
}

/// Where a rollout frame's previous-frame input came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrevOrigin {
    Source,
    Generated(usize),
}

impl<T: Scalar> GeneratorNet<T> {
    /// Generates the frame for `pose`, conditioned on the source and `prev`.
    pub fn generate_frame(&self, source: &Frame<T>, prev: PrevFrame<'_, T>, pose: &IuvMap<T>) -> Result<FeatureMap<T>> {
        let (prev_img, prev_pose) = match prev {
            PrevFrame::Source => (&source.image, &source.iuv),
            PrevFrame::Generated { frame, pose } => (&frame.image, pose),
        };
        self.infer_frame(&source.image, &source.iuv, prev_img, prev_pose, pose)
    }
}

/// Lazy markovian rollout. Frame 1 conditions on the source twice; frame
/// `k > 1` on the source and generated frame `k - 1` with its pose. Only the
/// previous frame and pose are retained.
pub struct Rollout<'a, T, G, I> {
    generator: &'a G,
    source: &'a Frame<T>,
    poses: I,
    prev: Option<(GeneratedFrame<T>, IuvMap<T>)>,
    produced: usize,
    origins: Vec<PrevOrigin>,
    failed: bool,
}

impl<'a, T, G, I, B> Rollout<'a, T, G, I>
where
    T: Scalar,
    G: FrameGenerator<T>,
    I: Iterator<Item = B>,
    B: Borrow<IuvMap<T>>,
{
    pub fn new(generator: &'a G, source: &'a Frame<T>, poses: impl IntoIterator<IntoIter = I>) -> Self {
        Rollout {
            generator,
            source,
            poses: poses.into_iter(),
            prev: None,
            produced: 0,
            origins: Vec::new(),
            failed: false,
        }
    }

    /// Origin of the previous-frame input of every frame produced so far.
    pub fn origins(&self) -> &[PrevOrigin] {
        &self.origins
    }

    pub fn produced(&self) -> usize {
        self.produced
    }
}

impl<T, G, I, B> Iterator for Rollout<'_, T, G, I>
where
    T: Scalar,
    G: FrameGenerator<T>,
    I: Iterator<Item = B>,
    B: Borrow<IuvMap<T>>,
{
    type Item = Result<GeneratedFrame<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let pose = self.poses.next()?;
        let pose = pose.borrow();
        let (prev_img, prev_pose, origin) = match &self.prev {
            None => (&self.source.image, &self.source.iuv, PrevOrigin::Source),
            Some((f, p)) => (&f.image, p, PrevOrigin::Generated(f.index)),
        };
        let expected = match self.produced {
            0 => PrevOrigin::Source,
            k => PrevOrigin::Generated(k - 1),
        };
        assert_eq!(origin, expected, "previous-frame path must see the source or the last generated frame");
        let out = self
            .generator
            .forward_frame(&self.source.image, &self.source.iuv, prev_img, prev_pose, pose);
        match out {
            Ok((image, _)) => {
                let frame = GeneratedFrame::new(image, self.produced);
                self.origins.push(origin);
                self.prev = Some((frame.clone(), pose.clone()));
                self.produced += 1;
                Some(Ok(frame))
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Generates one frame per driving pose and collects the images.
pub fn rollout<T: Scalar, G: FrameGenerator<T>>(generator: &G, source: &Frame<T>, poses: &[IuvMap<T>]) -> Result<Vec<FeatureMap<T>>> {
    Rollout::new(generator, source, poses.iter())
        .map(|f| f.map(GeneratedFrame::into_image))
        .collect()
}
