//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "FMBENCH\0"
//! version    u32      1
//! p, k       u64, u64
//! n_groups   u32, then per group: kind u8, start u64, end u64
//! w0         f64
//! w          p × f64
//! V          p·k × f64, row-major
//! has_hyper  u8
//! [alpha f64; per group: lambda_w, mu_w, k × lambda_v, k × mu_v;
//!  priors: shape, rate, mean, mean_precision]
//! ```
//!
//! Floats are stored as raw bits, so a round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FmModel, HyperParams, Priors};
use crate::types::{FeatureGroup, GroupKind};

pub const MAGIC: &[u8; 8] = b"FMBENCH\0";
pub const VERSION: u32 = 1;

pub fn write_model(w: &mut impl Write, m: &FmModel) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.n_cols() as u64).to_le_bytes())?;
    w.write_all(&(m.k() as u64).to_le_bytes())?;
    w.write_all(&(m.groups().len() as u32).to_le_bytes())?;
    for g in m.groups() {
        w.write_all(&[g.kind.code()])?;
        w.write_all(&(g.start as u64).to_le_bytes())?;
        w.write_all(&(g.end as u64).to_le_bytes())?;
    }
    let floats = |w: &mut dyn Write, xs: &[f64]| -> std::io::Result<()> {
        for x in xs {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    floats(w, &[m.w0])?;
    floats(w, &m.w)?;
    floats(w, &m.v)?;
    match &m.hyper {
        None => w.write_all(&[0]),
        Some(h) => {
            w.write_all(&[1])?;
            floats(w, &[h.alpha])?;
            for g in 0..m.groups().len() {
                floats(w, &[h.lambda_w[g], h.mu_w[g]])?;
                floats(w, &h.lambda_v[g])?;
                floats(w, &h.mu_v[g])?;
            }
            let p = h.priors;
            floats(w, &[p.gamma_shape, p.gamma_rate, p.mean, p.mean_precision])
        }
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?))
            .map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_model(r: impl Read) -> Result<FmModel> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let p = r.u64()?;
    let k = r.u64()?;
    let n_groups = r.u32()? as usize;
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let code = r.u8()?;
        let kind = GroupKind::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown group code {code}")))?;
        let start = r.u64()?;
        let end = r.u64()?;
        groups.push(FeatureGroup { kind, start, end });
    }
    let w0 = r.f64()?;
    let w = r.f64s(p)?;
    let v = r.f64s(p.checked_mul(k).ok_or_else(|| Error::Checkpoint("p·k overflows".into()))?)?;
    let hyper = match r.u8()? {
        0 => None,
        1 => {
            let alpha = r.f64()?;
            let mut h = HyperParams::initial(n_groups, k, Priors::default());
            h.alpha = alpha;
            for g in 0..n_groups {
                h.lambda_w[g] = r.f64()?;
                h.mu_w[g] = r.f64()?;
                h.lambda_v[g] = r.f64s(k)?;
                h.mu_v[g] = r.f64s(k)?;
            }
            h.priors = Priors {
                gamma_shape: r.f64()?,
                gamma_rate: r.f64()?,
                mean: r.f64()?,
                mean_precision: r.f64()?,
            };
            Some(h)
        }
        other => return Err(Error::Checkpoint(format!("bad hyperparameter flag {other}"))),
    };
    FmModel::from_parts(w0, w, v, k, groups, hyper)
}

pub fn save_model(path: impl AsRef<Path>, m: &FmModel) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_model(&mut out, m)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FmModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use proptest::prelude::*;

    fn groups(p: usize) -> Vec<FeatureGroup> {
        let split = p / 2;
        vec![
            FeatureGroup::new(GroupKind::User, 0..split),
            FeatureGroup::new(GroupKind::Item, split..p),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            p in 1usize..20,
            k in 1usize..5,
            seed in any::<u64>(),
            w0 in proptest::num::f64::ANY,
            with_hyper in any::<bool>(),
        ) {
            let mut m = init_model(p, k, groups(p), seed, 0.1).unwrap();
            m.w0 = w0;
            for (j, w) in m.w.iter_mut().enumerate() {
                *w = (j as f64 + 0.5) * 1e-3 - (seed % 7) as f64;
            }
            if with_hyper {
                let mut h = HyperParams::initial(2, k, Priors::default());
                h.alpha = 3.25;
                h.lambda_v[1][k - 1] = 0.125;
                m.hyper = Some(h);
            }
            let mut buf = Vec::new();
            write_model(&mut buf, &m).unwrap();
            let back = read_model(buf.as_slice()).unwrap();
            prop_assert_eq!(back.w0.to_bits(), m.w0.to_bits());
            prop_assert_eq!(&back.w, &m.w);
            prop_assert_eq!(&back.v, &m.v);
            prop_assert_eq!(back.groups(), m.groups());
            prop_assert_eq!(&back.hyper, &m.hyper);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(read_model(&b"NOTAMODEL..."[..]), Err(Error::Checkpoint(_))));
        let mut buf = Vec::new();
        write_model(&mut buf, &init_model(3, 1, groups(3), 0, 0.1).unwrap()).unwrap();
        buf[8] = 9;
        assert!(matches!(read_model(buf.as_slice()), Err(Error::Checkpoint(_))));
        buf[8] = 1;
        buf.truncate(buf.len() - 4);
        assert!(matches!(read_model(buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
