//! Named parameter collections shared by every trainable component.

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
}

/// Ordered, named tensors. Order is part of the identity: binding,
/// gradients, optimizer state and checkpoints all follow it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
}

impl<F: Element> Default for ParamSet<F> {
    fn default() -> Self {
        ParamSet { params: Vec::new() }
    }
}

impl<F: Element> ParamSet<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<F>) {
        self.params.push(Param {
            name: name.into(),
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<F> {
        &mut self.params[index].value
    }

    /// Total scalar count.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Record every tensor as a graph leaf, in order.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect()
    }

    /// SHA-256 over names, shapes and values.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update((p.name.len() as u64).to_le_bytes());
            hasher.update(p.name.as_bytes());
            p.value.hash_into(&mut hasher);
        }
        hex::encode(hasher.finalize())
    }

    pub fn cast<G: Element>(&self) -> ParamSet<G> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Check that `other` has the same names and shapes, in the same order.
    pub fn check_layout(&self, other: &ParamSet<F>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }
}

impl<F> FromIterator<Param<F>> for ParamSet<F> {
    fn from_iter<I: IntoIterator<Item = Param<F>>>(iter: I) -> Self {
        ParamSet {
            params: iter.into_iter().collect(),
        }
    }
}

/// Glorot-uniform `[fan_in, fan_out]` weight.
pub fn xavier_uniform<F: Element>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::of(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Tensor<f64> = xavier_uniform(&mut rng, 10, 6);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= limit));
        assert_eq!(w.shape(), &[10, 6]);
    }

    #[test]
    fn layout_check_catches_renames() {
        let mut a = ParamSet::<f32>::new();
        a.push("w", Tensor::zeros(vec![2]));
        let mut b = ParamSet::<f32>::new();
        b.push("v", Tensor::zeros(vec![2]));
        assert!(a.check_layout(&a.clone()).is_ok());
        assert!(a.check_layout(&b).is_err());
    }
}
