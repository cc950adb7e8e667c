//! Binary model container.
//!
//! ```text
//! magic            8 bytes  "HOVRMDL1"
//! format_version   u32
//! input_dim        u32
//! hidden_dim       u32
//! grid_n, grid_m   u32, u32
//! proj_channels    u32
//! deconv_channels  u32
//! kernel_x, kernel_y, stride, padding   u32 x 4
//! cell_size, origin_x, origin_y         f64 x 3
//! version tag      u32 byte length + UTF-8 bytes
//! tensor_count     u32
//! per tensor:      u32 name length, name bytes, u32 rank, u32 dims[rank]
//! payload:         every tensor's f64 values in declared order
//! ```
//!
//! All integers and floats are little-endian. The tensor table lists the ten
//! trainable tensors followed by `norm.mean` and `norm.scale`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{IntentModel, ModelError, ModelShape};
use crate::grid::GridSpec;

pub const MAGIC: &[u8; 8] = b"HOVRMDL1";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<usize, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64(r: &mut impl Read) -> Result<f64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn table(shape: &ModelShape) -> Vec<(String, Vec<usize>)> {
    let mut t: Vec<(String, Vec<usize>)> = shape
        .tensors()
        .into_iter()
        .map(|(n, d)| (n.to_string(), d))
        .collect();
    t.push(("norm.mean".into(), vec![shape.input_dim]));
    t.push(("norm.scale".into(), vec![shape.input_dim]));
    t
}

pub fn write_model(model: &IntentModel, w: &mut impl Write) -> Result<(), ModelError> {
    let s = &model.shape;
    w.write_all(MAGIC)?;
    put_u32(w, FORMAT_VERSION as usize)?;
    for v in [
        s.input_dim,
        s.hidden_dim,
        s.grid_n,
        s.grid_m,
        s.proj_channels,
        s.deconv_channels,
        s.kernel_x,
        s.kernel_y,
        s.stride,
        s.padding,
    ] {
        put_u32(w, v)?;
    }
    put_f64(w, model.grid.cell_size)?;
    put_f64(w, model.grid.origin[0])?;
    put_f64(w, model.grid.origin[1])?;
    put_u32(w, model.version.len())?;
    w.write_all(model.version.as_bytes())?;
    let tensors = table(s);
    put_u32(w, tensors.len())?;
    for (name, dims) in &tensors {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, dims.len())?;
        for d in dims {
            put_u32(w, *d)?;
        }
    }
    for v in model
        .params
        .iter()
        .chain(&model.input_mean)
        .chain(&model.input_scale)
    {
        put_f64(w, *v)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<IntentModel, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version as u32 != FORMAT_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let mut dims = [0usize; 10];
    for d in &mut dims {
        *d = get_u32(r)?;
    }
    let cell_size = get_f64(r)?;
    let origin = [get_f64(r)?, get_f64(r)?];
    let grid = GridSpec::new(dims[2], dims[3], cell_size, origin)
        .map_err(|e| ModelError::Format(e.to_string()))?;
    let shape = ModelShape {
        input_dim: dims[0],
        hidden_dim: dims[1],
        grid_n: dims[2],
        grid_m: dims[3],
        proj_channels: dims[4],
        deconv_channels: dims[5],
        kernel_x: dims[6],
        kernel_y: dims[7],
        stride: dims[8],
        padding: dims[9],
    };
    let mut model = IntentModel::zeros(shape, grid)?;

    let tag_len = get_u32(r)?;
    if tag_len > 4096 {
        return Err(ModelError::Format("version tag too long".into()));
    }
    let mut tag = vec![0u8; tag_len];
    r.read_exact(&mut tag)?;
    model.version =
        String::from_utf8(tag).map_err(|_| ModelError::Format("version tag not UTF-8".into()))?;

    let expected = table(&shape);
    let count = get_u32(r)?;
    if count != expected.len() {
        return Err(ModelError::Format(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    for (name, want_dims) in &expected {
        let len = get_u32(r)?;
        if len > 256 {
            return Err(ModelError::Format("tensor name too long".into()));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let rank = get_u32(r)?;
        if rank > 8 {
            return Err(ModelError::Format("tensor rank too large".into()));
        }
        let mut got_dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            got_dims.push(get_u32(r)?);
        }
        if buf != name.as_bytes() || &got_dims != want_dims {
            return Err(ModelError::Format(format!(
                "tensor table mismatch at {name}: found {} {got_dims:?}",
                String::from_utf8_lossy(&buf)
            )));
        }
    }
    for v in model.params.iter_mut() {
        *v = get_f64(r)?;
    }
    for v in model
        .input_mean
        .iter_mut()
        .chain(model.input_scale.iter_mut())
    {
        *v = get_f64(r)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ModelError::Format("trailing bytes after payload".into()));
    }
    Ok(model)
}

pub fn save_model(model: &IntentModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<IntentModel, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    read_model(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = GridSpec::default();
        let mut model = IntentModel::init(ModelShape::default_for(&g), g, 3).unwrap();
        model.input_mean[4] = 0.123456789;
        model.input_scale[2] = f64::MIN_POSITIVE;
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let back = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let g = GridSpec::new(2, 3, 0.1, [0.0, 0.0]).unwrap();
        let model = IntentModel::init(ModelShape::new(4, 8, &g), g, 3).unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_model(&mut bad.as_slice()).is_err());

        let truncated = &buf[..buf.len() - 3];
        assert!(read_model(&mut &truncated[..]).is_err());

        let mut long = buf.clone();
        long.push(0);
        assert!(read_model(&mut long.as_slice()).is_err());
    }
}
