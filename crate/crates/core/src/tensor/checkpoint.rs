//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FSFR"            magic
//! u16               format version
//! u16               network count
//! per network:      u32 layer count, then per layer
//!                   u8 kind id, u8 dim count, u32 dims[dim count]
//! payload:          per network, per parameterized layer, f64 values
//! ```
//!
//! A JSCC model is stored as two networks, encoder first.

use std::io::{Read, Write};

use super::{LayerSpec, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSFR";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, nets: &[&Network]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let count = u16::try_from(nets.len())
        .map_err(|_| Error::InvalidArgument("too many networks".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for net in nets {
        w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
        for layer in net.layers() {
            let dims = layer.dims();
            w.write_all(&[layer.kind_id(), dims.len() as u8])?;
            for d in dims {
                let d = u32::try_from(d)
                    .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
                w.write_all(&d.to_le_bytes())?;
            }
        }
    }
    for net in nets {
        for p in net.params() {
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<Network>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = cur.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let count = cur.u16()? as usize;
    let mut tables = Vec::with_capacity(count);
    for _ in 0..count {
        let layers = cur.u32()? as usize;
        let mut specs = Vec::with_capacity(layers.min(1024));
        for _ in 0..layers {
            let head = cur.take(2)?;
            let (kind, ndims) = (head[0], head[1] as usize);
            let dims = (0..ndims)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            specs.push(LayerSpec::from_parts(kind, &dims)?);
        }
        tables.push(specs);
    }
    let mut nets = Vec::with_capacity(count);
    for specs in tables {
        let mut net = Network::zeros(specs)?;
        let n = net.param_count();
        let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::format("checkpoint", "overflow"))?)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        net.load_flat(&values)?;
        nets.push(net);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok(nets)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ConvSpec;
    use rand::SeedableRng;

    fn sample() -> Network {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        Network::new(
            vec![
                LayerSpec::Conv2d(ConvSpec {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                    in_height: 4,
                    in_width: 4,
                }),
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 8, outputs: 3 },
                LayerSpec::Sigmoid,
            ],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_and_header() {
        let a = sample();
        let b = Network::zeros(vec![LayerSpec::Dense { inputs: 3, outputs: 1 }]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[&a, &b]).unwrap();
        assert_eq!(&buf[..4], b"FSFR");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        let nets = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(nets, vec![a, b]);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[&sample()]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(long.as_slice()).is_err());
        let mut ver = buf;
        ver[4] = 9;
        assert!(read_checkpoint(ver.as_slice()).is_err());
    }
}
