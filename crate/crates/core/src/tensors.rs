//! Named collections of dense matrices (parameters, gradients, moments).

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::nn::Mat;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorMap(BTreeMap<String, Mat>);

impl TensorMap {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Mat) -> Option<Mat> {
        self.0.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.0.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Mat> {
        self.0.remove(name)
    }

    /// Panics when `name` is absent; used on names fixed by the model layout.
    pub fn expect(&self, name: &str) -> &Mat {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mat)> {
        self.0.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), Mat::zeros(v.raw_dim())))
                .collect(),
        )
    }

    pub fn scalar_count(&self) -> usize {
        self.0.values().map(|m| m.len()).sum()
    }

    /// `self[name] += other[name]` for every tensor of `other`; tensors only
    /// present in `other` are inserted.
    pub fn accumulate(&mut self, other: &TensorMap) {
        for (k, v) in &other.0 {
            match self.0.get_mut(k) {
                Some(t) => *t += v,
                None => {
                    self.0.insert(k.clone(), v.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.0.values_mut() {
            v.mapv_inplace(|x| x * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Hex SHA-256 over names, shapes and the exact bit patterns of the
    /// selected tensors.
    pub fn checksum_of<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> String {
        let mut h = Sha256::new();
        for name in names {
            let Some(m) = self.0.get(name) else { continue };
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn checksum(&self) -> String {
        let names: Vec<String> = self.0.keys().cloned().collect();
        self.checksum_of(names.iter().map(String::as_str))
    }
}

impl FromIterator<(String, Mat)> for TensorMap {
    fn from_iter<I: IntoIterator<Item = (String, Mat)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}
