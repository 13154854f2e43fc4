//! Named parameter registry and flat-file checkpoints.
//!
//! Names are dotted paths ("text_encoder.layer0.attn.wq"). The map is
//! ordered, so iteration, optimizer updates, and checkpoint bytes are all
//! deterministic. Names containing "running_" are statistics buffers and
//! load as non-trainable; everything else loads as trainable.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"QBSLTCKP";
const VERSION: u32 = 1;

fn is_buffer_name(name: &str) -> bool {
    name.contains("running_")
}

#[derive(Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore::default()
    }

    /// Registers a tensor under a unique name and returns the shared handle.
    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<Tensor> {
        if self.entries.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name.to_string(), tensor.clone());
        Ok(tensor)
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    /// Trainable entries in name order.
    pub fn trainable(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect()
    }

    pub fn zero_grads(&self) {
        for t in self.entries.values() {
            t.zero_grad();
        }
    }

    /// Deep copy of all values, for best-model bookkeeping.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<f64>> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.data_vec()))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::invalid(format!(
                "snapshot has {} entries, store has {}",
                snapshot.len(),
                self.entries.len()
            )));
        }
        for (name, data) in snapshot {
            self.get(name)?.set_data(data)?;
        }
        Ok(())
    }

    /// Copies values from `source` into every entry of `self` whose name
    /// starts with one of `prefixes`. Missing names or shape mismatches are
    /// checkpoint errors.
    pub fn adopt_prefixes(&self, source: &ParameterStore, prefixes: &[&str]) -> Result<usize> {
        let mut copied = 0;
        for (name, tensor) in &self.entries {
            if !prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let src = source
                .entries
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    tensor.shape()
                )));
            }
            tensor.set_data(&src.data_vec())?;
            copied += 1;
        }
        Ok(copied)
    }

    // ── checkpoint file format ──────────────────────────────────────
    // magic "QBSLTCKP" | u32 version | u32 count
    // then per entry: u32 name_len | name utf8 | u32 rank | u32 dims…
    //                 | f64 values…, all little endian, entries name-sorted.

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let shape = tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for d in &shape {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in tensor.data_vec() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParameterStore> {
        let mut r = BufReader::new(File::open(path).map_err(|e| {
            Error::Checkpoint(format!("cannot open {}: {e}", path.display()))
        })?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, path)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r, path)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (supported: {VERSION})"
            )));
        }
        let count = read_u32(&mut r, path)? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r, path)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            read_exact(&mut r, &mut name_bytes, path)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
            let rank = read_u32(&mut r, path)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r, path)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                read_exact(&mut r, &mut buf, path)?;
                data.push(f64::from_le_bytes(buf));
            }
            let tensor = Tensor::from_vec(shape, data)?;
            let tensor = if is_buffer_name(&name) {
                tensor
            } else {
                tensor.trainable()
            };
            store.register(&name, tensor)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Checkpoint(format!(
                "{} has trailing bytes after {count} entries",
                path.display()
            )));
        }
        Ok(store)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("{} is truncated", path.display())))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn sample_store() -> ParameterStore {
        let mut rng = derive_rng(3, "params/test");
        let mut store = ParameterStore::new();
        store
            .register("a.w", Tensor::randn(vec![3, 2], 1.0, &mut rng).trainable())
            .unwrap();
        store
            .register("a.bn.running_mean", Tensor::zeros(vec![2]))
            .unwrap();
        store
            .register("b.bias", Tensor::randn(vec![4], 0.5, &mut rng).trainable())
            .unwrap();
        store
    }

    #[test]
    fn save_load_round_trip_preserves_values_and_trainability() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = sample_store();
        store.save(&path).unwrap();
        let loaded = ParameterStore::load(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        for (name, t) in store.iter() {
            let l = loaded.get(name).unwrap();
            assert_eq!(l.shape(), t.shape());
            assert_eq!(l.data_vec(), t.data_vec());
            assert_eq!(l.requires_grad(), t.requires_grad(), "{name}");
        }
    }

    #[test]
    fn checkpoint_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        sample_store().save(&p1).unwrap();
        sample_store().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn load_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample_store().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad = dir.path().join("bad.ckpt");
        std::fs::write(&bad, b"NOTACKPT").unwrap();
        assert!(ParameterStore::load(&bad).is_err());

        let trunc = dir.path().join("trunc.ckpt");
        std::fs::write(&trunc, &bytes[..bytes.len() - 3]).unwrap();
        assert!(ParameterStore::load(&trunc).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParameterStore::new();
        store.register("x", Tensor::zeros(vec![1])).unwrap();
        assert!(store.register("x", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn adopt_prefixes_copies_matching_entries() {
        let src = sample_store();
        let dst = sample_store();
        dst.get("a.w").unwrap().set_data(&[0.0; 6]).unwrap();
        let n = dst.adopt_prefixes(&src, &["a."]).unwrap();
        assert_eq!(n, 2);
        assert_eq!(dst.get("a.w").unwrap().data_vec(), src.get("a.w").unwrap().data_vec());
    }

    #[test]
    fn snapshot_restore_round_trips() {
        let store = sample_store();
        let snap = store.snapshot();
        store.get("b.bias").unwrap().set_data(&[9.0; 4]).unwrap();
        store.restore(&snap).unwrap();
        assert_eq!(store.get("b.bias").unwrap().data_vec(), snap["b.bias"]);
    }
}
