use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its pending gradient and optimizer moments.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    pub(crate) first_moment: Vec<f64>,
    pub(crate) second_moment: Vec<f64>,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let n = value.len();
        Self {
            value,
            grad: None,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        }
    }
}

/// Named parameters, ordered by path so iteration is deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    pub(crate) step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    /// Weight matrix with uniform Glorot initialization.
    pub fn insert_weight<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    pub fn insert_bias(&mut self, name: &str, len: usize) -> Result<()> {
        self.insert(name, Tensor::zeros(&[len]))
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if grad.len() != p.value.len() {
            return Err(Error::Shape {
                op: "accumulate_grad",
                left: p.value.shape().to_vec(),
                right: vec![grad.len()],
            });
        }
        match &mut p.grad {
            Some(buf) => buf.iter_mut().zip(grad).for_each(|(b, g)| *b += g),
            None => p.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).and_then(|p| p.grad.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(|p| p.grad = None);
    }

    /// Snapshot of the values only, for checkpointing.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect()
    }

    /// Rebuilds a store from checkpointed values; optimizer state starts fresh.
    pub fn from_tensors(tensors: BTreeMap<String, Tensor>) -> Self {
        Self {
            params: tensors.into_iter().map(|(k, v)| (k, Param::new(v))).collect(),
            step_count: 0,
        }
    }

    /// Copies values from `other` for every name present in both stores.
    pub fn load_values(&mut self, other: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, p) in &mut self.params {
            if let Some(t) = other.get(name) {
                if t.shape() != p.value.shape() {
                    return Err(Error::Shape {
                        op: "load_values",
                        left: p.value.shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
                p.value = t.clone();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert_bias("b", 3).unwrap();
        assert!(s.insert_bias("b", 3).is_err());
    }

    #[test]
    fn glorot_bound_respected() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        s.insert_weight("w", 10, 20, &mut rng).unwrap();
        let bound = (6.0_f64 / 30.0).sqrt();
        assert!(s.value("w").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert_eq!(s.value("w").unwrap().shape(), &[10, 20]);
    }

    #[test]
    fn grad_shape_checked() {
        let mut s = ParamStore::new();
        s.insert_bias("b", 3).unwrap();
        assert!(s.accumulate_grad("b", &[1.0]).is_err());
        s.accumulate_grad("b", &[1.0, 2.0, 3.0]).unwrap();
        s.accumulate_grad("b", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.grad("b").unwrap(), &[2.0, 4.0, 6.0]);
    }
}
