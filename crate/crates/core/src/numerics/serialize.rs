//! Flat parameter serialization and digests.
//!
//! Checkpoints list `(name, shape, values)` triples sorted by name; reloading
//! is bit-exact because values round-trip through shortest-representation
//! decimal strings. Digests hash the raw bit patterns in name order.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NamedTensor<F: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<F>,
}

impl<F: Scalar> NamedTensor<F> {
    pub fn new(name: String, tensor: &Tensor<F>) -> Self {
        NamedTensor {
            name,
            shape: tensor.shape().to_vec(),
            values: tensor.data().to_vec(),
        }
    }

    pub fn into_tensor(self) -> Result<Tensor<F>> {
        Tensor::from_vec(self.shape, self.values)
    }
}

/// Hex SHA-256 over `(name, shape, value bits)` in sorted name order.
pub fn digest_params<F: Scalar>(params: &[NamedTensor<F>]) -> String {
    let mut sorted: Vec<&NamedTensor<F>> = params.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut hasher = Sha256::new();
    hasher.update(F::DTYPE.as_bytes());
    for p in sorted {
        hasher.update(p.name.as_bytes());
        hasher.update([0u8]);
        for &d in &p.shape {
            hasher.update((d as u64).to_le_bytes());
        }
        hasher.update([0u8]);
        for &v in &p.values {
            hasher.update(v.bits_u64().to_le_bytes());
        }
    }
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in out {
        hex.push_str(&format!("{:02x}", byte));
    }
    hex
}

/// Lookup table used when rebinding a flat parameter list into model structs.
pub struct ParamReader<F: Scalar> {
    entries: std::collections::BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> ParamReader<F> {
    pub fn new(params: Vec<NamedTensor<F>>) -> Result<Self> {
        let mut entries = std::collections::BTreeMap::new();
        for p in params {
            let name = p.name.clone();
            if entries.insert(name.clone(), p.into_tensor()?).is_some() {
                return Err(Error::Format(format!("duplicate parameter name {name}")));
            }
        }
        Ok(ParamReader { entries })
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor<F>> {
        self.entries
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
    }

    /// Error if any parameter was never consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(name) = self.entries.keys().next() {
            return Err(Error::Format(format!("unexpected parameter {name}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_order_independent_but_value_sensitive() {
        let a = NamedTensor::new("w".into(), &Tensor::<f64>::vector(vec![1.0, 2.0]));
        let b = NamedTensor::new("b".into(), &Tensor::<f64>::vector(vec![0.5]));
        let d1 = digest_params(&[a.clone(), b.clone()]);
        let d2 = digest_params(&[b.clone(), a.clone()]);
        assert_eq!(d1, d2);
        let a2 = NamedTensor::new("w".into(), &Tensor::<f64>::vector(vec![1.0, 2.0 + 1e-15]));
        assert_ne!(d1, digest_params(&[a2, b]));
    }

    #[test]
    fn reader_flags_missing_and_extra() {
        let params = vec![NamedTensor::new(
            "w".into(),
            &Tensor::<f64>::vector(vec![1.0]),
        )];
        let mut reader = ParamReader::new(params.clone()).unwrap();
        assert!(reader.take("nope").is_err());
        let mut reader = ParamReader::new(params).unwrap();
        reader.take("w").unwrap();
        reader.finish().unwrap();
    }
}
