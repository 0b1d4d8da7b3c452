//! VOFM model files.
//!
//! Layout (little-endian): magic `"VOFM"`, u32 version = 1, u32 layer
//! count, then per layer: u32 name length + name bytes, u32 rank,
//! u32 dims[rank], f32 weights. Files are written atomically
//! (temp file + rename).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"VOFM";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn save_model(path: impl AsRef<Path>, entries: &[ModelEntry]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("vofm.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(entries.len() as u32)?;
        for e in entries {
            let expected: usize = e.shape.iter().product();
            if expected != e.data.len() {
                return Err(Error::ModelFormat(format!(
                    "entry '{}': shape {:?} does not match {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            w.write_u32::<LittleEndian>(e.name.len() as u32)?;
            w.write_all(e.name.as_bytes())?;
            w.write_u32::<LittleEndian>(e.shape.len() as u32)?;
            for &d in &e.shape {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &x in &e.data {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Vec<ModelEntry>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::ModelFormat(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        if name_len > 4096 {
            return Err(Error::ModelFormat("implausible name length".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::ModelFormat("non-utf8 name".into()))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        if rank > 8 {
            return Err(Error::ModelFormat(format!("implausible rank {rank} for '{name}'")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0f32; n];
        for x in &mut data {
            *x = r.read_f32::<LittleEndian>().map_err(|_| {
                Error::ModelFormat(format!("truncated weights for '{name}'"))
            })?;
        }
        entries.push(ModelEntry { name, shape, data });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.vofm");
        let entries = vec![
            ModelEntry { name: "oen.stem.w".into(), shape: vec![4, 1, 3, 3, 3], data: vec![0.5; 108] },
            ModelEntry { name: "oen.stem.b".into(), shape: vec![4], data: vec![0.0, 1.0, -1.0, 2.5] },
        ];
        save_model(&p, &entries).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].name, "oen.stem.w");
        assert_eq!(back[0].shape, vec![4, 1, 3, 3, 3]);
        assert_eq!(back[1].data, entries[1].data);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.vofm");
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(load_model(&p).is_err());
    }

    #[test]
    fn shape_data_mismatch_is_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.vofm");
        let entries =
            vec![ModelEntry { name: "x".into(), shape: vec![2, 2], data: vec![0.0; 3] }];
        assert!(save_model(&p, &entries).is_err());
    }
}
