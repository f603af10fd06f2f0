//! Checkpoint files: a text header followed by raw little-endian `f64` data.
//!
//! ```text
//! hclora-checkpoint 1
//! manifest {"backbone":{...},"mode":"hclora",...}
//! tensor embed 0 32 32
//! tensor block0.attn.o.lora_a 1 32 4
//! end
//! <values of every tensor, in header order>
//! ```
//!
//! Each `tensor` line is `name trainable dims...`. Frozen and trainable tensors
//! are both stored, so a checkpoint is self-contained.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdapterMode, BackboneConfig, Model};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &str = "hclora-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub backbone: BackboneConfig,
    pub mode: AdapterMode,
    /// Whether aux heads carry gaze-vector regressors.
    pub aux_vector: bool,
    /// Free-form description of the run that produced the weights.
    pub label: String,
}

pub fn save(path: &Path, manifest: &Manifest, store: &ParamStore) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str("manifest ");
    header.push_str(&serde_json::to_string(manifest).expect("manifest serializes"));
    header.push('\n');
    for (_, p) in store.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("tensor {} {} {}\n", p.name, p.trainable as u8, dims.join(" ")));
    }
    header.push_str("end\n");
    out.write_all(header.as_bytes()).map_err(io)?;
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Reads the manifest and every stored tensor.
pub fn load(path: &Path) -> Result<(Manifest, ParamStore)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut line_no = 0;
    let mut next_line = |r: &mut BufReader<File>| -> Result<(usize, String)> {
        let mut s = String::new();
        line_no += 1;
        let n = r.read_line(&mut s).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "unexpected end of header".into(),
            });
        }
        Ok((line_no, s.trim_end_matches('\n').to_string()))
    };
    let parse = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let (n, magic) = next_line(&mut r)?;
    if magic != MAGIC {
        return Err(parse(n, format!("not a checkpoint (header '{magic}')")));
    }
    let (n, m) = next_line(&mut r)?;
    let manifest: Manifest = m
        .strip_prefix("manifest ")
        .ok_or_else(|| parse(n, "missing manifest line".into()))
        .and_then(|j| serde_json::from_str(j).map_err(|e| parse(n, e.to_string())))?;

    let mut entries = Vec::new();
    loop {
        let (n, l) = next_line(&mut r)?;
        if l == "end" {
            break;
        }
        let mut it = l.split(' ');
        if it.next() != Some("tensor") {
            return Err(parse(n, format!("expected tensor line, got '{l}'")));
        }
        let name = it.next().ok_or_else(|| parse(n, "missing tensor name".into()))?;
        let trainable = match it.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(parse(n, "bad trainable flag".into())),
        };
        let dims = it
            .map(|d| d.parse::<usize>().map_err(|e| parse(n, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        entries.push((name.to_string(), trainable, dims));
    }

    let mut store = ParamStore::new();
    let mut buf = [0u8; 8];
    for (name, trainable, dims) in entries {
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(|_| {
                Error::Incompatible(format!("{}: truncated data in tensor {name}", path.display()))
            })?;
            data.push(f64::from_le_bytes(buf));
        }
        store.add(&name, Tensor::new(&dims, data)?, trainable);
    }
    if r.read(&mut buf).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Incompatible(format!("{}: trailing bytes after data", path.display())));
    }
    Ok((manifest, store))
}

/// Rebuilds a model from a checkpoint: the architecture comes from the
/// manifest, the values and trainable flags from the stored tensors.
pub fn load_model(path: &Path) -> Result<Model> {
    let (manifest, store) = load(path)?;
    let mut model = Model::new(manifest.backbone.clone(), 0)?;
    model.attach_adapters(manifest.mode, manifest.aux_vector, 0)?;
    if model.store.len() != store.len() {
        return Err(Error::Incompatible(format!(
            "{}: {} tensors stored, architecture has {}",
            path.display(),
            store.len(),
            model.store.len()
        )));
    }
    model.store.load_values(&store)?;
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.get(id).name.clone();
        let t = store.by_name(&name).expect("checked by load_values").trainable;
        model.store.set_trainable(id, t);
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &Model, label: &str) -> Result<()> {
    let manifest = Manifest {
        backbone: model.cfg.clone(),
        mode: model.mode,
        aux_vector: model.aux_heads.iter().any(|h| h.vector.is_some()),
        label: label.to_string(),
    };
    save(path, &manifest, &model.store)
}
