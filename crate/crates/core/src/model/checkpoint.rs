//! `MMXR` model checkpoints.
//!
//! All integers little-endian:
//!
//! ```text
//! "MMXR"                  4 bytes
//! version                 u16 (= 1)
//! dims record:
//!   n_modalities          u16
//!   d_f, d_c, d_h, K      u32 each
//!   cell kind             u8   mcu=0 mcu-self=1 mcu-concat=2 mcu-noln=3 gru=4 lstm=5
//!   aso kind              u8   mean=0 max=1 gru=2
//! blob count              u32
//! per blob:
//!   name length           u16
//!   name                  UTF-8, e.g. "stream0.w_f", "head.b_p", "aux1.w_p"
//!   rank                  u8
//!   dims                  u32 x rank
//!   values                f32 x product(dims), row-major
//! ```
//!
//! Values are always stored as f32, so an f64 model round-trips through f32.

use std::fs;
use std::path::Path;

use super::{AsoKind, MixerModel, ModelDims};
use crate::cells::CellKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MMXR";
pub const VERSION: u16 = 1;

pub fn encode<T: Scalar>(model: &MixerModel<T>) -> Result<Vec<u8>> {
    model.validate()?;
    let d = model.dims;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(d.n_modalities as u16).to_le_bytes());
    for v in [d.d_f, d.d_c, d.d_h, d.num_classes] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(model.cell_kind.code());
    buf.push(model.aso_kind.code());
    let params = model.named_params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape().len() as u8);
        for &s in t.shape() {
            buf.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<MixerModel<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"MMXR\""));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = r.u16("modality count")? as usize;
    let d_f = r.u32("d_f")? as usize;
    let d_c = r.u32("d_c")? as usize;
    let d_h = r.u32("d_h")? as usize;
    let k = r.u32("class count")? as usize;
    let at = r.pos as u64;
    let cell = CellKind::from_code(r.u8("cell kind")?)
        .ok_or_else(|| Error::format(at, "unknown cell kind"))?;
    let aso = AsoKind::from_code(r.u8("aso kind")?)
        .ok_or_else(|| Error::format(at + 1, "unknown ASO kind"))?;
    let dims = ModelDims {
        n_modalities: n,
        d_f,
        d_c,
        d_h,
        num_classes: k,
    };
    if d_c != d_f {
        return Err(Error::format(8, format!("content width {d_c} differs from d_f {d_f}")));
    }
    let mut model = MixerModel::<T>::new(dims, cell, aso, 0)?;

    let count = r.u32("blob count")? as usize;
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let start = r.pos as u64;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(start + 2, "blob name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u32("dims").map(|v| v as usize))
            .collect::<Result<_>>()?;
        let elems: usize = shape.iter().product();
        let raw = r.take(elems * 4, "blob values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        blobs.push((start, name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last blob"));
    }
    if blobs.iter().any(|(_, name, _)| name.starts_with("aux")) {
        model.init_aux_heads();
    }

    let mut slots = model.named_params_mut();
    if slots.len() != blobs.len() {
        return Err(Error::format(
            0,
            format!("{} blobs for a model with {} parameters", blobs.len(), slots.len()),
        ));
    }
    for (offset, name, tensor) in blobs {
        let slot = slots
            .iter_mut()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::format(offset, format!("unexpected blob {name:?}")))?;
        if slot.1.shape() != tensor.shape() {
            return Err(Error::format(
                offset,
                format!(
                    "blob {name:?} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.1.shape()
                ),
            ));
        }
        *slot.1 = tensor;
    }
    drop(slots);
    model.validate()?;
    Ok(model)
}

pub fn save<T: Scalar>(model: &MixerModel<T>, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<MixerModel<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
