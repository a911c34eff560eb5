//! Checkpoint container: an ordered list of named tensors on disk.
//!
//! Layout: magic `WPCK`, version `u32` LE (currently 1), entry count `u32`
//! LE, then per entry a `u32` LE name length, the UTF-8 name, and the
//! tensor in the single-tensor file format. Optimizer state shares the
//! container by convention, using a `.opt` suffix on its entry names.
//!
//! Entries keep their write order, so serializing the same parameter store
//! twice yields byte-identical files; determinism checks hash checkpoints
//! directly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::peft::group_for_name;
use crate::scalar::Scalar;
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::TensorBase;

const MAGIC: &[u8; 4] = b"WPCK";
const VERSION: u32 = 1;

pub fn write_checkpoint<S: Scalar>(
    w: &mut impl Write,
    entries: &[(String, TensorBase<S>)],
) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (name, _) in entries {
        if !seen.insert(name.as_str()) {
            return Err(Error::contract(format!("duplicate checkpoint entry {name}")));
        }
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::contract("too many checkpoint entries"))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        let len = u32::try_from(bytes.len())
            .map_err(|_| Error::contract(format!("entry name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        write_tensor(w, tensor)?;
    }
    Ok(())
}

fn take(r: &mut impl Read, offset: &mut u64, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(*offset, format!("truncated reading {what}")))?;
    *offset += n as u64;
    Ok(buf)
}

pub fn read_checkpoint<S: Scalar>(r: &mut impl Read) -> Result<Vec<(String, TensorBase<S>)>> {
    let mut offset = 0u64;
    let magic = take(r, &mut offset, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected WPCK")));
    }
    let version = u32::from_le_bytes(take(r, &mut offset, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(r, &mut offset, 4, "entry count")?.try_into().unwrap());
    let mut entries = Vec::with_capacity(count as usize);
    for i in 0..count {
        let len =
            u32::from_le_bytes(take(r, &mut offset, 4, "name length")?.try_into().unwrap()) as usize;
        let name_at = offset;
        let name = String::from_utf8(take(r, &mut offset, len, "entry name")?)
            .map_err(|_| Error::format(name_at, format!("entry {i} name is not UTF-8")))?;
        let tensor_at = offset;
        let tensor = read_tensor(r).map_err(|e| match e {
            Error::Format { offset: inner, message } => Error::Format {
                offset: tensor_at + inner,
                message: format!("entry '{name}': {message}"),
            },
            other => other,
        })?;
        // read_tensor consumed its bytes; recompute so later offsets stay honest.
        offset = tensor_at + tensor_wire_size(&tensor);
        entries.push((name, tensor));
    }
    Ok(entries)
}

/// Byte length of one tensor in the single-tensor wire format.
fn tensor_wire_size<S: Scalar>(t: &TensorBase<S>) -> u64 {
    // magic + version + dtype + rank + dims + payload
    4 + 4 + 1 + 4 + 8 * t.rank() as u64 + (S::WIDTH as u64) * t.numel() as u64
}

pub fn save_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
    entries: &[(String, TensorBase<S>)],
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, entries)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<(String, TensorBase<S>)>> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

/// All parameters of a store, in insertion order, ready for writing.
pub fn store_entries<S: Scalar>(store: &ParamStore<S>) -> Vec<(String, TensorBase<S>)> {
    store
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.tensor.clone()))
        .collect()
}

/// Splits metadata entries (names starting with `meta.`) from parameter
/// entries, preserving order within each.
pub fn split_meta<S: Scalar>(
    entries: Vec<(String, TensorBase<S>)>,
) -> (Vec<(String, TensorBase<S>)>, Vec<(String, TensorBase<S>)>) {
    let (meta, params): (Vec<_>, Vec<_>) =
        entries.into_iter().partition(|(n, _)| n.starts_with("meta."));
    (params, meta)
}

/// Rebuilds a parameter store from checkpoint entries, classifying each
/// name into its parameter group. Everything loads as trainable; the caller
/// applies its freezing policy afterwards.
pub fn store_from_entries<S: Scalar>(
    entries: Vec<(String, TensorBase<S>)>,
) -> Result<ParamStore<S>> {
    let mut store = ParamStore::new();
    for (name, tensor) in entries {
        let group = group_for_name(&name)?;
        store.insert(name, group, tensor)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use crate::Tensor;

    fn sample_entries() -> Vec<(String, Tensor)> {
        vec![
            ("embed.weight".to_string(), Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.25, -0.125]).unwrap()),
            ("head.bias".to_string(), Tensor::new(vec![3], vec![0.5, 0.25, -1.0]).unwrap()),
            ("head.bias.opt".to_string(), Tensor::new(vec![3], vec![0.0, 0.1, 0.2]).unwrap()),
        ]
    }

    #[test]
    fn container_round_trips_bitwise_in_order() {
        let entries = sample_entries();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &entries).unwrap();
        let loaded: Vec<(String, Tensor)> = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.len(), entries.len());
        for ((an, at), (bn, bt)) in entries.iter().zip(&loaded) {
            assert_eq!(an, bn);
            assert!(at.bit_eq(bt));
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &loaded).unwrap();
        assert_eq!(buf, again, "serialization is not canonical");
    }

    #[test]
    fn empty_container_is_valid() {
        let mut buf = Vec::new();
        write_checkpoint::<f64>(&mut buf, &[]).unwrap();
        let loaded: Vec<(String, Tensor)> = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn duplicate_entry_names_are_rejected_at_write() {
        let t = Tensor::zeros(&[1]);
        let entries = vec![("a".to_string(), t.clone()), ("a".to_string(), t)];
        let mut buf = Vec::new();
        assert!(matches!(
            write_checkpoint(&mut buf, &entries),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn corrupt_magic_and_version_are_format_errors() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample_entries()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint::<f64>(&mut bad.as_slice()),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut wrong_version = buf.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            read_checkpoint::<f64>(&mut wrong_version.as_slice()),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn truncation_reports_a_positive_offset() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample_entries()).unwrap();
        let cut = &buf[..buf.len() - 7];
        match read_checkpoint::<f64>(&mut &cut[..]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn store_round_trip_recovers_groups_from_names() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store
            .insert("embed.weight", ParamGroup::Embedding, Tensor::ones(&[2, 2]))
            .unwrap();
        store
            .insert("blocks.0.attn.q.weight", ParamGroup::Backbone, Tensor::ones(&[2, 2]))
            .unwrap();
        store
            .insert("blocks.0.attn.q.lora_a", ParamGroup::Aux, Tensor::ones(&[2, 1]))
            .unwrap();
        store
            .insert("tadp.attn.q.weight", ParamGroup::Tadp, Tensor::ones(&[2, 2]))
            .unwrap();
        store
            .insert("head.weight", ParamGroup::Head, Tensor::ones(&[2, 2]))
            .unwrap();
        let entries = store_entries(&store);
        let rebuilt = store_from_entries(entries).unwrap();
        assert_eq!(rebuilt.len(), store.len());
        for (a, b) in store.entries().iter().zip(rebuilt.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.group, b.group);
            assert!(a.tensor.bit_eq(&b.tensor));
            assert!(b.trainable);
        }
    }

    #[test]
    fn metadata_entries_split_off_cleanly() {
        let mut entries = sample_entries();
        entries.push(("meta.method".to_string(), Tensor::scalar(3.0).unwrap()));
        entries.push(("meta.grid".to_string(), Tensor::new(vec![2], vec![32.0, 32.0]).unwrap()));
        let (params, meta) = split_meta(entries);
        assert_eq!(params.len(), 3);
        assert_eq!(meta.len(), 2);
        assert!(meta.iter().all(|(n, _)| n.starts_with("meta.")));
    }
}
