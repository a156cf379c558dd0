//! Flat binary weight container.
//!
//! Layout: magic "TSNN1", then u32 param count, then for each parameter:
//! u32 name length, name bytes (UTF-8), u8 dtype (4 = f32, 8 = f64),
//! u8 rank, u32 dims, payload as little-endian scalars. Parameter order is
//! the network's own order, so loading checks names and shapes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::Network;
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"TSNN1";

pub fn save_weights<E: Element>(net: &Network<E>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(net.params.len() as u32).to_le_bytes())?;
    for p in &net.params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[std::mem::size_of::<E>() as u8])?;
        w.write_all(&[p.value.shape.len() as u8])?;
        for &d in &p.value.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in &p.value.data {
            let v = x.to_f64();
            if std::mem::size_of::<E>() == 4 {
                w.write_all(&(v as f32).to_le_bytes())?;
            } else {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Load weights into an already-constructed network; names, dtype width,
/// and shapes must match exactly.
pub fn load_weights<E: Element>(net: &mut Network<E>, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadWeightFile("bad magic".into()));
    }
    let count = read_u32(&mut r)? as usize;
    if count != net.params.len() {
        return Err(Error::BadWeightFile(format!(
            "expected {} params, file has {count}",
            net.params.len()
        )));
    }
    for p in &mut net.params {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::BadWeightFile("non-utf8 param name".into()))?;
        if name != p.name {
            return Err(Error::BadWeightFile(format!("param {} vs file {name}", p.name)));
        }
        let mut meta = [0u8; 2];
        r.read_exact(&mut meta)?;
        let (dtype, rank) = (meta[0] as usize, meta[1] as usize);
        if dtype != std::mem::size_of::<E>() {
            return Err(Error::BadWeightFile(format!("dtype width {dtype} mismatch")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        if shape != p.value.shape {
            return Err(Error::BadWeightFile(format!("shape mismatch for {name}")));
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        if dtype == 4 {
            let mut buf = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(E::from_f64(f32::from_le_bytes(buf) as f64));
            }
        } else {
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(E::from_f64(f64::from_le_bytes(buf)));
            }
        }
        p.value = Tensor { shape, data };
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::spec::build_patchgan;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsnn");
        let net: Network<f32> =
            Network::new(build_patchgan(6, 4), &[vec![1, 6, 64, 64]], 3).unwrap();
        save_weights(&net, &path).unwrap();
        let mut other: Network<f32> =
            Network::new(build_patchgan(6, 4), &[vec![1, 6, 64, 64]], 99).unwrap();
        assert_ne!(net.params[0].value.data, other.params[0].value.data);
        load_weights(&mut other, &path).unwrap();
        for (a, b) in net.params.iter().zip(&other.params) {
            assert_eq!(a.value.data, b.value.data);
        }
    }

    #[test]
    fn wrong_architecture_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsnn");
        let net: Network<f32> =
            Network::new(build_patchgan(6, 4), &[vec![1, 6, 64, 64]], 3).unwrap();
        save_weights(&net, &path).unwrap();
        let mut other: Network<f32> =
            Network::new(build_patchgan(6, 8), &[vec![1, 6, 64, 64]], 3).unwrap();
        assert!(load_weights(&mut other, &path).is_err());
    }
}
