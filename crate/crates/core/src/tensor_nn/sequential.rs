use super::{Cache, FeatureMap, GradMode, Layer, Module, ParamTensor};
use crate::{Error, Result, Scalar};

/// A chain of layers, optionally exposing intermediate activations ("taps").
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    /// Forward pass that also returns the outputs of the layers listed in
    /// `taps` (indices into `layers`), in the order given.
    pub fn forward_taps(
        &self,
        input: &FeatureMap<T>,
        taps: &[usize],
    ) -> Result<(FeatureMap<T>, Vec<FeatureMap<T>>, Cache<T>)> {
        if let Some(&bad) = taps.iter().find(|&&t| t >= self.layers.len()) {
            return Err(Error::invalid(format!("tap {bad} beyond {} layers", self.layers.len())));
        }
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut tapped = vec![None; taps.len()];
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(&x)?;
            for (slot, &t) in taps.iter().enumerate() {
                if t == i {
                    tapped[slot] = Some(y.clone());
                }
            }
            caches.push(c);
            x = y;
        }
        let cache = Cache::new(input.shape(), x.shape()).with_children(caches);
        let tapped = tapped.into_iter().map(|t| t.expect("every tap visited")).collect();
        Ok((x, tapped, cache))
    }

    /// Backward pass with gradients entering at the final output (optional)
    /// and at any tapped layer outputs.
    pub fn backward_taps(
        &mut self,
        cache: &Cache<T>,
        upstream: Option<&FeatureMap<T>>,
        tap_grads: &[(usize, &FeatureMap<T>)],
        mode: GradMode,
    ) -> Result<FeatureMap<T>> {
        let n = self.layers.len();
        let mut grad = match upstream {
            Some(u) => {
                cache.check_upstream(u)?;
                Some(u.clone())
            }
            None => None,
        };
        for i in (0..n).rev() {
            let child = cache.child(i)?;
            for &(_, g) in tap_grads.iter().filter(|(t, _)| *t == i) {
                match grad.as_mut() {
                    Some(acc) => acc.add_assign(g)?,
                    None => {
                        child.check_upstream(g)?;
                        grad = Some(g.clone());
                    }
                }
            }
            if let Some(g) = grad.take() {
                grad = Some(self.layers[i].backward(child, &g, mode)?);
            }
        }
        Ok(grad.unwrap_or_else(|| FeatureMap::zeros(cache.input)))
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn forward(&self, input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Cache<T>)> {
        let (out, _, cache) = self.forward_taps(input, &[])?;
        Ok((out, cache))
    }

    fn backward(&mut self, cache: &Cache<T>, upstream: &FeatureMap<T>, mode: GradMode) -> Result<FeatureMap<T>> {
        self.backward_taps(cache, Some(upstream), &[], mode)
    }

    fn infer(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?.0;
        }
        Ok(x)
    }

    fn params(&self) -> Vec<&ParamTensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
