//! Parameter checkpoints: a little-endian binary tensor file next to a
//! `key = value` text manifest that records the architecture.
//!
//! Binary layout: `"TSCK"`, `u32` version, `u32` tensor count, then per tensor
//! `u64` rows, `u64` cols and `rows·cols` row-major `f64` values.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::params::{ModelConfig, TransformerParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSCK";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &TransformerParams, mut w: W) -> Result<()> {
    let tensors = params.tensors();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (t, _) in tensors {
        w.write_all(&(t.nrows() as u64).to_le_bytes())?;
        w.write_all(&(t.ncols() as u64).to_le_bytes())?;
        for &x in t.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Fills a freshly shaped parameter set for `config` from `r`.
pub fn read_checkpoint<R: Read>(config: &ModelConfig, mut r: R) -> Result<TransformerParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Unsupported(format!("checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut params = shaped(config)?;
    let mut slots = params.tensors_mut();
    if slots.len() != count {
        return Err(Error::dims(format!("checkpoint has {count} tensors, config expects {}", slots.len())));
    }
    for (idx, (slot, _)) in slots.iter_mut().enumerate() {
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if (rows, cols) != slot.dim() {
            return Err(Error::dims(format!(
                "tensor {idx} is {rows}x{cols}, config expects {:?}",
                slot.dim()
            )));
        }
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf)?;
        let vals: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        **slot = Array2::from_shape_vec((rows, cols), vals).expect("length checked");
    }
    drop(slots);
    Ok(params)
}

fn shaped(config: &ModelConfig) -> Result<TransformerParams> {
    // Any rng works: every tensor is overwritten.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    TransformerParams::init(config, &mut rng)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Manifest text for `config` plus any extra `(key, value)` pairs.
pub fn manifest_text(config: &ModelConfig, extra: &[(String, String)]) -> String {
    let mut s = String::new();
    let c = config;
    for (k, v) in [
        ("format_version", VERSION.to_string()),
        ("input_dim", c.input_dim.to_string()),
        ("hidden_dim", c.hidden_dim.to_string()),
        ("key_dim", c.key_dim.to_string()),
        ("layers", c.layers.to_string()),
        ("rpe_dim", c.rpe_dim.to_string()),
        ("phi_hidden", c.phi_hidden.to_string()),
        ("head_hidden", c.head_hidden.to_string()),
        ("output_dim", c.output_dim.to_string()),
        ("activation_slope", format!("{:?}", c.activation_slope)),
        ("scaling", c.scaling.to_string()),
        ("bias", c.bias.to_string()),
        ("layer_norm", c.layer_norm.to_string()),
    ] {
        writeln!(s, "{k} = {v}").unwrap();
    }
    for (k, v) in extra {
        writeln!(s, "{k} = {v}").unwrap();
    }
    s
}

/// Parses the architecture keys of a manifest; unknown keys are ignored.
pub fn parse_manifest(text: &str) -> Result<ModelConfig> {
    let mut c = ModelConfig::graph_worst_case();
    let mut seen = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno + 1, format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        let bad = |what: &str| Error::parse(lineno + 1, format!("{k}: cannot parse {v:?} as {what}"));
        let usize_of = |v: &str| v.parse::<usize>().map_err(|_| bad("an integer"));
        let bool_of = |v: &str| v.parse::<bool>().map_err(|_| bad("a boolean"));
        match k {
            "format_version" => {
                if usize_of(v)? != VERSION as usize {
                    return Err(Error::Unsupported(format!("manifest version {v}")));
                }
                continue;
            }
            "input_dim" => c.input_dim = usize_of(v)?,
            "hidden_dim" => c.hidden_dim = usize_of(v)?,
            "key_dim" => c.key_dim = usize_of(v)?,
            "layers" => c.layers = usize_of(v)?,
            "rpe_dim" => c.rpe_dim = usize_of(v)?,
            "phi_hidden" => c.phi_hidden = usize_of(v)?,
            "head_hidden" => c.head_hidden = usize_of(v)?,
            "output_dim" => c.output_dim = usize_of(v)?,
            "activation_slope" => c.activation_slope = v.parse().map_err(|_| bad("a float"))?,
            "scaling" => c.scaling = bool_of(v)?,
            "bias" => c.bias = bool_of(v)?,
            "layer_norm" => c.layer_norm = bool_of(v)?,
            _ => continue,
        }
        seen += 1;
    }
    if seen < 12 {
        return Err(Error::invalid(format!("manifest is missing architecture keys ({seen} of 12 present)")));
    }
    c.validate()?;
    Ok(c)
}

/// Writes `<stem>.bin` and `<stem>.manifest` into `dir`.
pub fn save(dir: &Path, stem: &str, params: &TransformerParams, extra: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut bin = Vec::new();
    write_checkpoint(params, &mut bin)?;
    fs::write(dir.join(format!("{stem}.bin")), bin)?;
    fs::write(dir.join(format!("{stem}.manifest")), manifest_text(&params.config(), extra))?;
    Ok(())
}

pub fn load(dir: &Path, stem: &str) -> Result<TransformerParams> {
    let config = parse_manifest(&fs::read_to_string(dir.join(format!("{stem}.manifest")))?)?;
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    let mut params = read_checkpoint(&config, bytes.as_slice())?;
    params.layer_norm = config.layer_norm;
    Ok(params)
}
