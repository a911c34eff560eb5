//! Run artifacts: model checkpoints with metadata, CSV files, hashing.
//!
//! A model checkpoint stores every parameter plus a handful of `meta.*`
//! entries (task, method, seed, backbone dimensions) so a file is
//! self-describing: loading reconstructs the backbone configuration and
//! method-specific structure from names, shapes, and metadata alone.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use wpft_core::backbone::BackboneConfig;
use wpft_core::checkpoint::{load_checkpoint, save_checkpoint, split_meta, store_entries, store_from_entries};
use wpft_core::error::{Error, Result};
use wpft_core::peft::{Method, MethodSpec, Model};
use wpft_core::tasks::TaskId;
use wpft_core::{ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub task: TaskId,
    pub method: Method,
    pub seed: u64,
    pub cfg: BackboneConfig,
    pub lora_alpha: f64,
}

fn meta_tensor(name: &str, values: Vec<f64>) -> (String, Tensor) {
    let n = values.len();
    (name.to_string(), Tensor::new(vec![n], values).expect("finite metadata"))
}

fn meta_entries(meta: &ModelMeta) -> Vec<(String, Tensor)> {
    let c = &meta.cfg;
    let task_idx = TaskId::ALL.iter().position(|t| *t == meta.task).unwrap() as f64;
    let method_idx = Method::ALL.iter().position(|m| *m == meta.method).unwrap() as f64;
    vec![
        meta_tensor("meta.task", vec![task_idx]),
        meta_tensor("meta.method", vec![method_idx]),
        meta_tensor(
            "meta.seed",
            vec![(meta.seed >> 32) as f64, (meta.seed & 0xffff_ffff) as f64],
        ),
        meta_tensor("meta.grid", vec![c.grid_h as f64, c.grid_w as f64]),
        meta_tensor("meta.patch", vec![c.patch_h as f64, c.patch_w as f64]),
        meta_tensor(
            "meta.dims",
            vec![
                c.dim as f64,
                c.depth as f64,
                c.n_heads as f64,
                c.mlp_ratio as f64,
                c.input_vars as f64,
                c.output_vars as f64,
            ],
        ),
        meta_tensor("meta.lora_alpha", vec![meta.lora_alpha]),
    ]
}

pub fn save_model(path: &Path, store: &ParamStore, meta: &ModelMeta) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut entries = store_entries(store);
    entries.extend(meta_entries(meta));
    save_checkpoint(path, &entries)
}

fn meta_values<'a>(
    meta: &'a [(String, Tensor)],
    name: &str,
    len: usize,
) -> Result<&'a [f64]> {
    let t = meta
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::format(0, format!("checkpoint is missing {name}")))?;
    if t.numel() != len {
        return Err(Error::format(
            0,
            format!("{name} has {} values, expected {len}", t.numel()),
        ));
    }
    Ok(t.data())
}

pub fn load_model(path: &Path) -> Result<(ParamStore, ModelMeta)> {
    let entries = load_checkpoint::<f64>(path)?;
    let (params, meta) = split_meta(entries);
    let task_idx = meta_values(&meta, "meta.task", 1)?[0] as usize;
    let task = *TaskId::ALL
        .get(task_idx)
        .ok_or_else(|| Error::format(0, format!("task index {task_idx} out of range")))?;
    let method_idx = meta_values(&meta, "meta.method", 1)?[0] as usize;
    let method = *Method::ALL
        .get(method_idx)
        .ok_or_else(|| Error::format(0, format!("method index {method_idx} out of range")))?;
    let seed_parts = meta_values(&meta, "meta.seed", 2)?;
    let seed = ((seed_parts[0] as u64) << 32) | (seed_parts[1] as u64);
    let grid = meta_values(&meta, "meta.grid", 2)?.to_vec();
    let patch = meta_values(&meta, "meta.patch", 2)?.to_vec();
    let dims = meta_values(&meta, "meta.dims", 6)?.to_vec();
    let lora_alpha = meta_values(&meta, "meta.lora_alpha", 1)?[0];
    let cfg = BackboneConfig {
        input_vars: dims[4] as usize,
        output_vars: dims[5] as usize,
        grid_h: grid[0] as usize,
        grid_w: grid[1] as usize,
        patch_h: patch[0] as usize,
        patch_w: patch[1] as usize,
        dim: dims[0] as usize,
        depth: dims[1] as usize,
        n_heads: dims[2] as usize,
        mlp_ratio: dims[3] as usize,
    };
    cfg.validate()
        .map_err(|e| Error::format(0, format!("checkpoint metadata: {e}")))?;
    let store = store_from_entries(params)?;
    Ok((store, ModelMeta { task, method, seed, cfg, lora_alpha }))
}

/// Derives the method's structural knobs back from parameter shapes and
/// assembles the forward model.
pub fn rebuild_model(store: &ParamStore, meta: &ModelMeta) -> Result<(Model, MethodSpec)> {
    let mut spec = MethodSpec::new(meta.method, meta.cfg.dim.max(1));
    spec.lora_alpha = meta.lora_alpha;
    match meta.method {
        Method::Lora => {
            let a = store.tensor("blocks.0.attn.q.lora_a")?;
            spec.lora_rank = a.shape()[1];
        }
        Method::Vpt => {
            let p = store.tensor("vpt.prompts")?;
            spec.vpt_len = p.shape()[0];
        }
        Method::Adaptformer => {
            let d = store.tensor("blocks.0.adapter.down.weight")?;
            spec.adapter_ratio = d.shape()[1] as f64 / meta.cfg.dim as f64;
        }
        Method::TadpOnly | Method::Weatherpeft => {
            let fc2 = store.tensor("tadp.mlp.fc2.weight")?;
            spec.tadp_prompt_len = fc2.shape()[1];
        }
        _ => {}
    }
    let model = Model::assemble(meta.cfg, &spec, store)?;
    Ok((model, spec))
}

/// Writes a CSV with the given header; every row must match its width.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.join(","));
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::contract(format!(
                "CSV row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]; no quoting, fields never contain
/// commas.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::format(0, format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(Error::format(
                0,
                format!("{}: row width {} != header {}", path.display(), row.len(), header.len()),
            ));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wpft_core::backbone::Backbone;
    use wpft_core::peft::attach_for_method;

    fn toy_cfg() -> BackboneConfig {
        BackboneConfig {
            input_vars: 3,
            output_vars: 3,
            grid_h: 8,
            grid_w: 8,
            patch_h: 4,
            patch_w: 4,
            dim: 16,
            depth: 2,
            n_heads: 2,
            mlp_ratio: 4,
        }
    }

    #[test]
    fn checkpoint_reconstructs_model_and_metadata() {
        let tmp = std::env::temp_dir().join(format!("wpft_art_{}", std::process::id()));
        std::fs::create_dir_all(&tmp).unwrap();
        for method in [Method::Lora, Method::Vpt, Method::TadpOnly, Method::Full] {
            let cfg = toy_cfg();
            let bb = Backbone::new(cfg).unwrap();
            let mut store = ParamStore::new();
            bb.init_params(&mut store, 9).unwrap();
            let mut spec = MethodSpec::new(method, 6);
            spec.lora_rank = 2;
            spec.vpt_len = 5;
            attach_for_method(&mut store, &cfg, &spec, 9).unwrap();
            let meta = ModelMeta {
                task: TaskId::Ensemble,
                method,
                seed: (7 << 32) | 123,
                cfg,
                lora_alpha: 2.5,
            };
            let path = tmp.join(format!("{}.wpck", method.id()));
            save_model(&path, &store, &meta).unwrap();
            let (loaded, meta2) = load_model(&path).unwrap();
            assert_eq!(meta2, meta);
            assert_eq!(loaded.len(), store.len());
            for (a, b) in store.entries().iter().zip(loaded.entries()) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.group, b.group);
                assert!(a.tensor.bit_eq(&b.tensor));
            }
            let (model, spec2) = rebuild_model(&loaded, &meta2).unwrap();
            assert_eq!(model.method(), method);
            match method {
                Method::Lora => assert_eq!(spec2.lora_rank, 2),
                Method::Vpt => assert_eq!(spec2.vpt_len, 5),
                Method::TadpOnly => assert_eq!(spec2.tadp_prompt_len, 6),
                _ => {}
            }
        }
        std::fs::remove_dir_all(&tmp).unwrap();
    }

    #[test]
    fn csv_round_trip_and_width_checks() {
        let tmp = std::env::temp_dir().join(format!("wpft_csv_{}.csv", std::process::id()));
        let rows = vec![
            vec!["lora".to_string(), "0.5".to_string()],
            vec!["full".to_string(), "0.25".to_string()],
        ];
        write_csv(&tmp, &["method", "value"], &rows).unwrap();
        let (header, back) = read_csv(&tmp).unwrap();
        assert_eq!(header, vec!["method", "value"]);
        assert_eq!(back, rows);
        let bad = vec![vec!["only-one".to_string()]];
        assert!(write_csv(&tmp, &["a", "b"], &bad).is_err());
        std::fs::remove_file(&tmp).unwrap();
    }

    #[test]
    fn file_hash_is_stable_and_content_sensitive() {
        let tmp = std::env::temp_dir().join(format!("wpft_hash_{}", std::process::id()));
        std::fs::write(&tmp, b"abc").unwrap();
        let h1 = sha256_file(&tmp).unwrap();
        assert_eq!(
            h1,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        std::fs::write(&tmp, b"abd").unwrap();
        assert_ne!(sha256_file(&tmp).unwrap(), h1);
        std::fs::remove_file(&tmp).unwrap();
    }
}
