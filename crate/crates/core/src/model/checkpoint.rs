//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "DBGENCKP"
//! version      u32
//! manifest_len u64
//! manifest     JSON (UTF-8)
//! count        u32
//! count x { name_len u32, name, ndim u32, dims u64 x ndim, data f64 x prod(dims) }
//! ```
//!
//! Tensors appear in [`ModelParams::all_tensors`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DBGENCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dict_size: usize,
    pub d_z: usize,
    pub architecture: Architecture,
    /// Class index to training problem id.
    pub labels: Vec<String>,
    pub dataset_fingerprint: String,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, labels: Vec<String>, dataset_fingerprint: String) -> Result<Self> {
        if labels.len() != params.arch.num_classes {
            return Err(Error::Precondition(format!(
                "{} labels for {} classes",
                labels.len(),
                params.arch.num_classes
            )));
        }
        let tensors = params
            .all_tensors()
            .into_iter()
            .map(|(name, shape, _)| TensorInfo { name, shape })
            .collect();
        Ok(Self {
            manifest: Manifest {
                format_version: VERSION,
                dict_size: params.arch.dict_size,
                d_z: params.arch.d_z,
                architecture: params.arch.clone(),
                labels,
                dataset_fingerprint,
                tensors,
            },
            params,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let tensors = self.params.all_tensors();
        let mut out = Vec::with_capacity(64 + manifest.len() + 8 * self.params.all_tensors().iter().map(|t| t.2.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mlen = usize::try_from(r.u64()?).map_err(|_| bad("manifest length overflow"))?;
        let manifest: Manifest =
            serde_json::from_slice(r.take(mlen)?).map_err(|e| bad(format!("manifest: {e}")))?;
        let arch = &manifest.architecture;
        arch.validate()?;
        if manifest.dict_size != arch.dict_size || manifest.d_z != arch.d_z || manifest.labels.len() != arch.num_classes {
            return Err(bad("manifest fields disagree with the architecture"));
        }
        let count = r.u32()? as usize;
        let mut raw: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(bad(format!("tensor `{name}` has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut len: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?;
                len = len.checked_mul(d).ok_or_else(|| bad("tensor size overflow"))?;
                shape.push(d);
            }
            let bytes = r.take(len.checked_mul(8).ok_or_else(|| bad("tensor size overflow"))?)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            raw.push((name, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let stored: u128 = raw.iter().map(|t| t.2.len() as u128).sum();
        if parameter_count(arch) != stored {
            return Err(bad("tensor data does not match the architecture"));
        }
        let mut params = ModelParams::init(arch.clone(), 0)?;
        {
            let expected = params.all_tensors();
            if expected.len() != raw.len() {
                return Err(bad(format!("expected {} tensors, found {}", expected.len(), raw.len())));
            }
            for ((en, es, _), (n, s, _)) in expected.iter().zip(&raw) {
                if en != n || es != s {
                    return Err(bad(format!("tensor `{n}` {s:?} where `{en}` {es:?} expected")));
                }
            }
        }
        for (dst, (_, _, src)) in params.all_tensors_mut().into_iter().zip(&raw) {
            dst.copy_from_slice(src);
        }
        let infos: Vec<TensorInfo> = raw.into_iter().map(|(name, shape, _)| TensorInfo { name, shape }).collect();
        if infos != manifest.tensors {
            return Err(bad("manifest tensor table disagrees with stored tensors"));
        }
        Ok(Self { manifest, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format("checkpoint", reason)
}

/// Number of stored floats for an architecture, without allocating.
pub fn parameter_count(arch: &Architecture) -> u128 {
    let lin = |i: usize, o: usize| (i as u128) * (o as u128) + o as u128;
    let h = arch.hidden;
    let dj = arch.d_joint();
    let c = arch.coeff_dim();
    let mlp2 = |i: usize, o: usize| lin(i, h) + lin(h, o);
    let mut n = 2 * mlp2(arch.window_width(), h) + mlp2(2 * h, h) + mlp2(h, c);
    if !arch.ablation.no_basis {
        n += 2 * arch.dict_size as u128 + (arch.dict_size as u128) * (arch.d_struct as u128);
    }
    n += mlp2(arch.num_vars, h) + lin(h, arch.d_z);
    if !arch.ablation.no_vae {
        n += lin(h, arch.d_z);
    }
    n += mlp2(dj, h) + lin(h, arch.num_vars) + mlp2(dj, h) + lin(h, arch.num_objectives);
    n += lin(dj, arch.num_classes) + lin(dj, 1);
    if !arch.ablation.no_basis {
        n += 2 * arch.dict_size as u128;
    }
    n
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;

    fn arch(ablation: Ablation) -> Architecture {
        Architecture {
            hidden: 5,
            dict_size: 4,
            d_struct: 3,
            d_z: 2,
            ablation,
            ..Architecture::new(3, 2, 4, 2)
        }
    }

    fn sample(ablation: Ablation) -> Checkpoint {
        let mut p = ModelParams::init(arch(ablation), 11).unwrap();
        if !ablation.no_basis {
            p.bn.running_mean[1] = -0.25;
            p.bn.running_var[2] = 3.5;
        }
        Checkpoint::new(p, vec!["P64".into(), "P67".into()], "abc123".into()).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for ab in [Ablation::default(), Ablation::single("no_basis").unwrap(), Ablation::single("no_vae").unwrap()] {
            let c = sample(ab);
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
            let n: usize = c.params.all_tensors().iter().map(|t| t.2.len()).sum();
            assert_eq!(parameter_count(&c.params.arch), n as u128);
        }
    }

    #[test]
    fn special_floats_survive() {
        let mut c = sample(Ablation::default());
        c.params.dictionary[[0, 0]] = -0.0;
        c.params.dictionary[[0, 1]] = f64::MIN_POSITIVE / 2.0;
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.params.dictionary[[0, 0]].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.params.dictionary[[0, 1]], f64::MIN_POSITIVE / 2.0);
    }

    #[test]
    fn truncation_and_corruption_are_rejected() {
        let bytes = sample(Ablation::default()).to_bytes();
        for cut in [0, 7, 12, 20, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad_magic).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn label_count_must_match_classes() {
        let p = ModelParams::init(arch(Ablation::default()), 1).unwrap();
        assert!(Checkpoint::new(p, vec!["x".into()], String::new()).is_err());
    }
}
