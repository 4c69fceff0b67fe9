//! Binary checkpoint archive.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "SEDSTCKP"
//! version      u32       currently 1
//! rng seed     32 bytes  ChaCha8 seed
//! rng word pos u128
//! rng stream   u64
//! meta length  u32, then that many bytes of UTF-8 (opaque to this crate)
//! optimizer    u8        1 if Adam moments follow each tensor, else 0
//! adam step    u64
//! count        u32       number of tensors
//! per tensor:
//!   name length u32, name bytes (UTF-8)
//!   ndim u32, then ndim × u64 dimensions
//!   product(dims) × f64 values
//!   if optimizer == 1: product(dims) × f64 first moment, then second moment
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::{Error, ParamStore, Result, Tensor};

pub const MAGIC: &[u8; 8] = b"SEDSTCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub rng: RngState,
    pub meta: String,
}

pub fn write<W: Write>(
    mut w: W,
    params: &ParamStore,
    rng: &RngState,
    meta: &str,
    with_optimizer: bool,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&rng.seed)?;
    w.write_all(&rng.word_pos.to_le_bytes())?;
    w.write_all(&rng.stream.to_le_bytes())?;
    write_bytes(&mut w, meta.as_bytes())?;
    w.write_all(&[with_optimizer as u8])?;
    w.write_all(&params.step().to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for id in params.ids() {
        write_bytes(&mut w, params.name(id).as_bytes())?;
        let t = params.get(id);
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, t.data())?;
        if with_optimizer {
            let (m, v) = params.moments(id);
            write_f64s(&mut w, m)?;
            write_f64s(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let mut b16 = [0u8; 16];
    r.read_exact(&mut b16)?;
    let word_pos = u128::from_le_bytes(b16);
    let stream = read_u64(&mut r)?;
    let meta = String::from_utf8(read_bytes(&mut r)?)
        .map_err(|_| Error::Format("meta is not UTF-8".into()))?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let with_optimizer = match flag[0] {
        0 => false,
        1 => true,
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    let step = read_u64(&mut r)?;
    let count = read_u32(&mut r)? as usize;
    let mut params = ParamStore::new();
    let mut ms = Vec::with_capacity(count);
    let mut vs = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let data = read_f64s(&mut r, n)?;
        params.insert(&name, Tensor::new(shape, data)?)?;
        if with_optimizer {
            ms.push(read_f64s(&mut r, n)?);
            vs.push(read_f64s(&mut r, n)?);
        } else {
            ms.push(vec![0.0; n]);
            vs.push(vec![0.0; n]);
        }
    }
    params.set_optimizer_state(if with_optimizer { step } else { 0 }, ms, vs);
    Ok(Checkpoint {
        params,
        rng: RngState {
            seed,
            word_pos,
            stream,
        },
        meta,
    })
}

pub fn save(
    path: impl AsRef<Path>,
    params: &ParamStore,
    rng: &RngState,
    meta: &str,
    with_optimizer: bool,
) -> Result<()> {
    write(BufWriter::new(File::create(path)?), params, rng, meta, with_optimizer)
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read(BufReader::new(File::open(path)?))
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut b = vec![0u8; n * 8];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{adam_step, AdamConfig, Gradients};
    use rand::{RngCore, SeedableRng};

    #[test]
    fn round_trip_preserves_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        store.insert_uniform("enc.w", &[3, 2], 0.08, &mut rng).unwrap();
        store.insert_zeros("enc.b", &[3]).unwrap();
        let mut g = Gradients::zeros_like(&store);
        g.scale(0.0);
        adam_step(&mut store, &g, &AdamConfig::default()).unwrap();
        rng.next_u64();
        let state = RngState::capture(&rng);

        let mut buf = Vec::new();
        write(&mut buf, &store, &state, "{\"k\":1}", true).unwrap();
        let ck = read(buf.as_slice()).unwrap();
        assert_eq!(ck.params, store);
        assert_eq!(ck.meta, "{\"k\":1}");
        assert_eq!(ck.rng, state);
        let mut a = state.restore();
        assert_eq!(a.next_u64(), rng.next_u64());

        let mut again = Vec::new();
        write(&mut again, &ck.params, &ck.rng, &ck.meta, true).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOTACKPT\x01\x00\x00\x00".to_vec();
        assert!(matches!(read(buf.as_slice()), Err(Error::Format(_))));
    }
}
