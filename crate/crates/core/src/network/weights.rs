//! Named parameter storage, seeded initialization and the on-disk format.
//!
//! File layout: an 8-byte little-endian header length, a UTF-8 JSON header
//! `{"format", "version", "seed", "tensors": [{"name", "shape"}]}`, then every
//! tensor's values as little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::attention::TAU_FLOOR;
use crate::tensor::Tensor;

pub const FORMAT_TAG: &str = "warpstab-weights";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f32),
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    /// Uniform in `±a`.
    Uniform(f32),
    /// The row-major identity affine `[1, 0, 0, 0, 1, 0]`.
    IdentityAffine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    version: u32,
    seed: Option<u64>,
    order: Vec<String>,
    params: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: Option<u64>,
    tensors: Vec<HeaderEntry>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
}

impl Default for WeightStore {
    fn default() -> Self {
        Self::new()
    }
}

impl WeightStore {
    pub fn new() -> Self {
        Self {
            version: FORMAT_VERSION,
            seed: None,
            order: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    /// Deterministic initialization; parameters are drawn in spec order.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        store.seed = Some(seed);
        for s in specs {
            let t = match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::full(&s.shape, 1.0),
                Init::Const(c) => Tensor::full(&s.shape, c),
                Init::FanIn(fan) => {
                    let a = 1.0 / (fan.max(1) as f32).sqrt();
                    Tensor::from_fn(&s.shape, |_| rng.random_range(-a..a))
                }
                Init::Uniform(a) => Tensor::from_fn(&s.shape, |_| rng.random_range(-a..a)),
                Init::IdentityAffine => Tensor::from_fn(&s.shape, |i| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0][i % 6]),
            };
            store.insert(&s.name, t);
        }
        store
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Names in insertion order.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        if self.params.insert(name.to_string(), t).is_none() {
            self.order.push(name.to_string());
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Fetch a parameter and check its shape.
    pub fn param(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        t.expect_shape(shape, name)?;
        Ok(t)
    }

    /// Set every parameter whose name starts with `prefix` to zero; returns
    /// how many were touched.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (k, t) in self.params.iter_mut() {
            if k.starts_with(prefix) {
                t.data_mut().fill(0.0);
                n += 1;
            }
        }
        n
    }

    /// Check names and shapes against `specs`, reporting the first offender
    /// in spec order.
    pub fn check_specs(&self, specs: &[ParamSpec]) -> Result<()> {
        for s in specs {
            self.param(&s.name, &s.shape)?;
        }
        if self.params.len() != specs.len() {
            let known: std::collections::HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            if let Some(extra) = self.order.iter().find(|n| !known.contains(n.as_str())) {
                return Err(Error::WeightFormat(format!("unexpected parameter `{extra}`")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: FORMAT_TAG.to_string(),
            version: self.version,
            seed: self.seed,
            tensors: self
                .order
                .iter()
                .map(|n| HeaderEntry {
                    name: n.clone(),
                    shape: self.params[n].shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let total: usize = self.params.values().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(8 + json.len() + 4 * total);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for n in &self.order {
            for v in self.params[n].data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse a weight file image. Temperatures (`*.tau`) are floored.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::WeightFormat(m.to_string());
        let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("file shorter than header length"))?.try_into().expect("8 bytes");
        let hlen = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header length overflows"))?;
        let json = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::WeightFormat(format!("header is not valid JSON: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(Error::WeightFormat(format!("format tag `{}`, expected `{FORMAT_TAG}`", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::WeightFormat(format!("version {} unsupported (reader is version {FORMAT_VERSION})", header.version)));
        }
        let mut store = Self::new();
        store.seed = header.seed;
        let mut off = 8 + hlen;
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes
                .get(off..off + 4 * n)
                .ok_or_else(|| Error::WeightFormat(format!("data for `{}` is truncated", e.name)))?;
            off += 4 * n;
            let mut data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            if e.name.ends_with(".tau") {
                data.iter_mut().for_each(|v| *v = v.max(TAU_FLOOR));
            }
            if store.params.contains_key(&e.name) {
                return Err(Error::WeightFormat(format!("duplicate parameter `{}`", e.name)));
            }
            store.insert(&e.name, Tensor::new(e.shape, data)?);
        }
        if off != bytes.len() {
            return Err(Error::WeightFormat(format!("{} trailing bytes", bytes.len() - off)));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}
