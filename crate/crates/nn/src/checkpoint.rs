//! Versioned little-endian binary snapshot of a model: the configuration
//! followed by named parameter and buffer blocks.

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::model::{build_model, Model, ModelConfig, Readout};

const MAGIC: &[u8; 8] = b"SDNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn put_block<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        put_u64(w, d as u64)?;
    }
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let cfg = model.config();
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for x in [cfg.window, cfg.d_s, cfg.conv_kernel, cfg.conv_stride] {
        put_u64(&mut w, x as u64)?;
    }
    put_u64(&mut w, cfg.seed)?;
    w.write_all(&[cfg.readout.code()])?;
    put_u64(&mut w, cfg.lstm_units.len() as u64)?;
    for &u in &cfg.lstm_units {
        put_u64(&mut w, u as u64)?;
    }
    let store = model.store();
    put_u64(&mut w, store.len() as u64)?;
    for (name, t) in store.named() {
        put_block(&mut w, name, t.shape(), t.data())?;
    }
    let buffers: Vec<_> = store.named_buffers().collect();
    put_u64(&mut w, buffers.len() as u64)?;
    for (name, b) in buffers {
        put_block(&mut w, name, &[b.len()], b)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| NnError::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x).map_err(|_| NnError::Checkpoint(format!("count {x} out of range")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }

    fn block(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return Err(NnError::Checkpoint(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        self.inner
            .read_exact(&mut name)
            .map_err(|e| NnError::Checkpoint(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        Ok((name, shape, self.f64s(n)?))
    }
}

pub fn load_checkpoint<R: Read>(r: R) -> Result<Model> {
    let mut rd = Reader { inner: r };
    if &rd.bytes::<8>()? != MAGIC {
        return Err(NnError::Checkpoint("not a model checkpoint".into()));
    }
    let version = rd.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let window = rd.usize()?;
    let d_s = rd.usize()?;
    let conv_kernel = rd.usize()?;
    let conv_stride = rd.usize()?;
    let seed = rd.u64()?;
    let code = rd.bytes::<1>()?[0];
    let readout = Readout::from_code(code).ok_or_else(|| NnError::Checkpoint(format!("unknown readout code {code}")))?;
    let n_layers = rd.usize()?;
    if n_layers > 64 {
        return Err(NnError::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let lstm_units = (0..n_layers).map(|_| rd.usize()).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        window,
        d_s,
        conv_kernel,
        conv_stride,
        lstm_units,
        seed,
        readout,
    };
    let mut model = build_model(&config)?;
    let store = model.store_mut();

    let n_params = rd.usize()?;
    if n_params != store.len() {
        return Err(NnError::Checkpoint(format!(
            "{n_params} parameter blocks, model has {}",
            store.len()
        )));
    }
    for _ in 0..n_params {
        let (name, shape, data) = rd.block()?;
        let id = store
            .find(&name)
            .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {name}")))?;
        let t = store.get_mut(id);
        if t.shape() != shape.as_slice() {
            return Err(NnError::Checkpoint(format!(
                "parameter {name} has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&data);
    }
    let n_buffers = rd.usize()?;
    for _ in 0..n_buffers {
        let (name, _, data) = rd.block()?;
        let id = store
            .find_buffer(&name)
            .ok_or_else(|| NnError::Checkpoint(format!("unknown buffer {name}")))?;
        let b = store.buffer_mut(id);
        if b.len() != data.len() {
            return Err(NnError::Checkpoint(format!("buffer {name} has wrong length")));
        }
        b.copy_from_slice(&data);
    }
    Ok(model)
}
