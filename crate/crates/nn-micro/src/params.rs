//! Named parameter and gradient sets.

use std::collections::BTreeMap;

use crate::error::{NnError, Result};

/// Flat vectors keyed by parameter name, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet(BTreeMap<String, Vec<f64>>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.0.insert(name.into(), values);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.0.values().map(Vec::len).sum()
    }

    /// Same entries with every name prefixed by `prefix`.
    pub fn prefixed(&self, prefix: &str) -> Self {
        Self(self.0.iter().map(|(k, v)| (format!("{prefix}{k}"), v.clone())).collect())
    }

    /// Entries whose name starts with one of `prefixes`.
    pub fn select(&self, prefixes: &[&str]) -> Self {
        Self(
            self.0
                .iter()
                .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    /// Union of two sets with disjoint names.
    pub fn union(mut self, other: ParamSet) -> Result<Self> {
        for (k, v) in other.0 {
            if self.0.contains_key(&k) {
                return Err(NnError::invalid(format!("parameter {k:?} appears twice")));
            }
            self.0.insert(k, v);
        }
        Ok(self)
    }

    fn check_keys(&self, other: &ParamSet) -> Result<()> {
        if self.0.len() != other.0.len()
            || self
                .0
                .iter()
                .zip(&other.0)
                .any(|((ka, va), (kb, vb))| ka != kb || va.len() != vb.len())
        {
            return Err(NnError::invalid("parameter sets are keyed differently"));
        }
        Ok(())
    }

    /// `self + alpha * other`, entry by entry.
    pub fn axpy(&self, alpha: f64, other: &ParamSet) -> Result<Self> {
        self.check_keys(other)?;
        Ok(Self(
            self.0
                .iter()
                .zip(other.0.values())
                .map(|((k, a), b)| (k.clone(), a.iter().zip(b).map(|(x, y)| x + alpha * y).collect()))
                .collect(),
        ))
    }

    /// Largest componentwise absolute difference.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_keys(other)?;
        Ok(self
            .0
            .values()
            .zip(other.0.values())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }
}

/// Models whose scalars can be read and perturbed by name.
pub trait Parameters {
    fn params(&self) -> ParamSet;
    fn param_mut(&mut self, name: &str) -> Option<&mut [f64]>;
}

/// Gradient of `L_main + alpha * L_light` over parameters both branches share:
/// `g_main + alpha * g_light` per entry.
pub fn shared_grad_accumulate(grads_main: &ParamSet, grads_light: &ParamSet, alpha: f64) -> Result<ParamSet> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(NnError::invalid(format!("alpha must be a non-negative number, got {alpha}")));
    }
    grads_main.axpy(alpha, grads_light)
}
