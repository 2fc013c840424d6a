//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "RNCDCKPT"
//! version      u32      1
//! dtype        u32      bytes per stored value (4 = f32, 8 = f64)
//! seed         u64
//! height       u32
//! width        u32
//! stages       u32      n
//! channels     n × u32
//! first/last   2 × u32  kernel rows, cols
//! interior     2 × u32  kernel rows, cols
//! classes      u32
//! range_scale  f64
//! tensors      u32      count
//! per tensor:  name_len u32, name (utf-8), ndim u32, dims ndim × u32,
//!              data (product of dims) × dtype bytes
//! ```
//!
//! Each convolution contributes `<name>.weight` (`cout × cin × kh × kw`)
//! followed by `<name>.bias` (`cout`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChangeModel, ConvParams, ModelConfig, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RNCDCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, model: &ChangeModel<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint, converting stored values to `T` if necessary.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ChangeModel<T>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_checkpoint<T: Real>(w: &mut impl Write, model: &ChangeModel<T>) -> Result<()> {
    let cfg = model.config();
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    put_u32(w, T::DTYPE as usize)?;
    w.write_all(&model.seed().to_le_bytes())?;
    put_u32(w, cfg.height)?;
    put_u32(w, cfg.width)?;
    put_u32(w, cfg.encoder_channels.len())?;
    for &c in &cfg.encoder_channels {
        put_u32(w, c)?;
    }
    for k in [cfg.first_last_kernel, cfg.interior_kernel] {
        put_u32(w, k.0)?;
        put_u32(w, k.1)?;
    }
    put_u32(w, cfg.num_classes)?;
    w.write_all(&cfg.range_scale.to_le_bytes())?;

    let convs = cfg.convs();
    put_u32(w, 2 * convs.len())?;
    for ((_, spec), p) in convs.iter().zip(model.params()) {
        let tensors: [(String, Vec<usize>, &[T]); 2] = [
            (format!("{}.weight", p.name), vec![spec.cout, spec.cin, spec.kh, spec.kw], &p.weight),
            (format!("{}.bias", p.name), vec![spec.cout], &p.bias),
        ];
        for (name, dims, data) in tensors {
            put_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            put_u32(w, dims.len())?;
            for d in dims {
                put_u32(w, d)?;
            }
            for &v in data {
                if T::DTYPE == 4 {
                    w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
                } else {
                    w.write_all(&v.as_f64().to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

struct Reader<'a, R> {
    r: &'a mut R,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::InvalidArgument("truncated checkpoint".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn bounded(&mut self, what: &str, max: usize) -> Result<usize> {
        let v = self.u32()?;
        if v > max {
            return Err(Error::InvalidArgument(format!("implausible {what}: {v}")));
        }
        Ok(v)
    }
}

pub fn read_checkpoint<T: Real>(r: &mut impl Read) -> Result<ChangeModel<T>> {
    let mut rd = Reader { r };
    if &rd.bytes::<8>()? != MAGIC {
        return Err(Error::InvalidArgument("not a checkpoint (bad magic)".into()));
    }
    let version = rd.u32()?;
    if version != VERSION as usize {
        return Err(Error::InvalidArgument(format!("unsupported checkpoint version {version}")));
    }
    let dtype = rd.u32()?;
    if dtype != 4 && dtype != 8 {
        return Err(Error::InvalidArgument(format!("unsupported dtype size {dtype}")));
    }
    let seed = u64::from_le_bytes(rd.bytes()?);
    let height = rd.u32()?;
    let width = rd.u32()?;
    let stages = rd.bounded("stage count", 64)?;
    let encoder_channels = (0..stages).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
    let first_last_kernel = (rd.u32()?, rd.u32()?);
    let interior_kernel = (rd.u32()?, rd.u32()?);
    let num_classes = rd.u32()?;
    let range_scale = f64::from_le_bytes(rd.bytes()?);
    let config = ModelConfig {
        height,
        width,
        encoder_channels,
        first_last_kernel,
        interior_kernel,
        num_classes,
        range_scale,
    };
    config.validate()?;
    let convs = config.convs();
    let count = rd.u32()?;
    if count != 2 * convs.len() {
        return Err(Error::InvalidArgument(format!("expected {} tensors, found {count}", 2 * convs.len())));
    }

    let mut read_tensor = |expect_name: String, expect_dims: Vec<usize>| -> Result<Vec<T>> {
        let len = rd.bounded("name length", 256)?;
        let mut name = vec![0u8; len];
        rd.r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::InvalidArgument("tensor name is not utf-8".into()))?;
        let ndim = rd.bounded("tensor rank", 8)?;
        let dims = (0..ndim).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
        if name != expect_name || dims != expect_dims {
            return Err(Error::InvalidArgument(format!(
                "tensor '{name}' {dims:?} where '{expect_name}' {expect_dims:?} was expected"
            )));
        }
        let n: usize = dims.iter().product();
        (0..n)
            .map(|_| {
                Ok(if dtype == 4 {
                    T::from_f64(f32::from_le_bytes(rd.bytes()?) as f64)
                } else {
                    T::from_f64(f64::from_le_bytes(rd.bytes()?))
                })
            })
            .collect()
    };

    let mut params = Vec::with_capacity(convs.len());
    for (name, s) in &convs {
        let weight = read_tensor(format!("{name}.weight"), vec![s.cout, s.cin, s.kh, s.kw])?;
        let bias = read_tensor(format!("{name}.bias"), vec![s.cout])?;
        params.push(ConvParams {
            name: name.clone(),
            weight,
            bias,
        });
    }
    ChangeModel::from_parts(config, seed, params)
}
