//! Shared on-disk parameter format.
//!
//! One line of compact JSON (`{"dtype":"f32","meta":{..},"params":[{"name","shape"}..]}`)
//! terminated by `\n`, followed by the little-endian `f32` payload of every
//! tensor in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::error::{NumError, Result};
use super::nn::{Dense, Mlp, Module};
use super::{Scalar, Tensor};

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    meta: Map<String, Value>,
    params: Vec<Entry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Map<String, Value>,
    tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> NumError {
    NumError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("meta values serialize");
        self.meta.insert(key.to_string(), v);
    }

    pub fn meta_as<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| bad(format!("missing meta key `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| bad(format!("meta `{key}`: {e}")))
    }

    pub fn push<S: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<S>) {
        self.tensors.push((name.into(), t.cast()));
    }

    pub fn push_module<S: Scalar>(&mut self, prefix: &str, m: &impl Module<S>) {
        for (name, t) in m.named_tensors() {
            self.push(format!("{prefix}.{name}"), t);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn get<S: Scalar>(&self, name: &str) -> Result<Tensor<S>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.cast())
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    pub fn mlp<S: Scalar>(&self, prefix: &str) -> Result<Mlp<S>> {
        let mut layers = Vec::new();
        while self.contains(&format!("{prefix}.{}.weight", layers.len())) {
            let i = layers.len();
            layers.push(Dense {
                weight: self.get(&format!("{prefix}.{i}.weight"))?,
                bias: self.get(&format!("{prefix}.{i}.bias"))?,
            });
        }
        if layers.is_empty() {
            return Err(bad(format!("no layers under `{prefix}`")));
        }
        Mlp::from_layers(layers)
    }

    /// Copies tensors named `{prefix}.{name}` into an existing module of the same layout.
    pub fn load_into<S: Scalar>(&self, prefix: &str, m: &mut impl Module<S>) -> Result<()> {
        let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(m.tensors_mut()) {
            let t: Tensor<S> = self.get(&format!("{prefix}.{name}"))?;
            if t.shape() != slot.shape() {
                return Err(bad(format!("`{prefix}.{name}` has shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: "f32".into(),
            meta: self.meta.clone(),
            params: self
                .tensors
                .iter()
                .map(|(n, t)| Entry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header terminator"))?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
        if header.dtype != "f32" {
            return Err(bad(format!("unsupported dtype {}", header.dtype)));
        }
        let mut payload = &bytes[nl + 1..];
        let mut tensors = Vec::with_capacity(header.params.len());
        for e in header.params {
            let numel: usize = e.shape.iter().product();
            if payload.len() < numel * 4 {
                return Err(bad(format!("payload truncated at `{}`", e.name)));
            }
            let data = payload[..numel * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            payload = &payload[numel * 4..];
            tensors.push((e.name, Tensor::new(&e.shape, data)?));
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing payload bytes", payload.len())));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 of the serialized form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(values in proptest::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 1..40), cut in 1usize..5) {
            let cut = cut.min(values.len());
            let mut ck = Checkpoint::new();
            ck.set_meta("z", 8);
            ck.push("a", &Tensor::new(&[cut], values[..cut].to_vec()).unwrap());
            if values.len() > cut {
                ck.push("b", &Tensor::new(&[values.len() - cut], values[cut..].to_vec()).unwrap());
            }
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), ck.to_bytes());
            let a: Tensor<f32> = back.get("a").unwrap();
            for (x, y) in a.data().iter().zip(&values[..cut]) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn header_is_a_json_line() {
        let mut ck = Checkpoint::new();
        ck.set_meta("part", "back");
        ck.push("w", &Tensor::<f32>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let bytes = ck.to_bytes();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["params"][0]["shape"], serde_json::json!([2, 2]));
        assert_eq!(bytes.len() - nl - 1, 16);
        assert_eq!(&bytes[nl + 1..nl + 5], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut ck = Checkpoint::new();
        ck.push("w", &Tensor::<f32>::zeros(&[4]));
        let mut bytes = ck.to_bytes();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
