//! Binary parameter checkpoints.
//!
//! Layout, all little-endian: the magic `PAEF`, a `u32` format version, then
//! one entry per parameter until end of file:
//! `u32` name length, UTF-8 name, `u32` rank, `rank` x `u32` dims, `f64` values.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"PAEF";
pub const VERSION: u32 = 1;

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in params.named() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::data(format!("checkpoint truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Named tensors in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::data("not a checkpoint: bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::data("checkpoint parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::data(format!("parameter `{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::data("parameter too large"))?, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path, cfg: &ModelConfig) -> Result<ModelParams> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    ModelParams::from_named(cfg, decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionCombine, FusionKind};
    use proptest::prelude::*;

    fn small() -> ModelConfig {
        let mut c = ModelConfig::new(5, 3, 4);
        c.proj_dim = 6;
        c
    }

    #[test]
    fn header_layout() {
        let p = ModelParams::init(&small(), 0).unwrap();
        let b = encode(&p);
        assert_eq!(&b[..4], b"PAEF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 6);
        assert_eq!(&b[12..18], b"w_face");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let cfg = small();
        let b = encode(&ModelParams::init(&cfg, 0).unwrap());
        assert!(decode(&b[..b.len() - 3]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut other = cfg.clone();
        other.proj_dim = 7;
        assert!(matches!(
            ModelParams::from_named(&other, decode(&b).unwrap()),
            Err(Error::Dimension(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), concat in any::<bool>(), linear in any::<bool>(), scale in -1e300f64..1e300) {
            let mut cfg = small();
            if concat { cfg.attention_combine = AttentionCombine::Concatenation; }
            if linear { cfg.fusion = FusionKind::Linear; }
            let mut p = ModelParams::init(&cfg, seed).unwrap();
            p.logit_scale.data_mut()[0] = scale;
            p.b_face.data_mut()[0] = f64::MIN_POSITIVE / 4.0;
            let back = ModelParams::from_named(&cfg, decode(&encode(&p)).unwrap()).unwrap();
            for ((n1, a), (n2, b)) in p.named().into_iter().zip(back.named()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(a.shape(), b.shape());
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
