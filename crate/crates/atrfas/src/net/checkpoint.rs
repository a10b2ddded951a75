//! Checkpoint format.
//!
//! ```text
//! ATRFAS-CKPT v1
//! mode<TAB>DGM          config echo, one key per line
//! ...
//! params<TAB>123
//! <name>                then the tensor serialization, repeated per parameter
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarr_core::Tensor;

use super::{AtrFasModel, ModelConfig};
use crate::error::{AtrError, Result};

pub const CHECKPOINT_MAGIC: &str = "ATRFAS-CKPT v1";

pub fn write_checkpoint<W: Write>(model: &AtrFasModel, w: &mut W) -> std::io::Result<()> {
    let c = model.config();
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "mode\t{}", c.mode)?;
    writeln!(w, "experts\t{}", c.experts)?;
    writeln!(w, "stem_channels\t{}", c.stem_channels)?;
    writeln!(w, "n0\t{}", c.n0)?;
    writeln!(w, "input\t{}", c.input.name())?;
    writeln!(w, "standardize\t{}", c.standardize)?;
    writeln!(w, "size\t{}", c.size)?;
    writeln!(w, "tied_experts\t{}", c.tied_experts)?;
    writeln!(w, "params\t{}", model.params().len())?;
    for (name, t) in model.params().names().zip(model.params().tensors()) {
        writeln!(w, "{name}")?;
        t.write_to(w)?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &AtrFasModel, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes).expect("writing to a Vec cannot fail");
    fs::write(path, bytes).map_err(|e| AtrError::io(path, e))
}

fn line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut s = String::new();
    if r.read_line(&mut s).map_err(|e| AtrError::Format(e.to_string()))? == 0 {
        return Err(AtrError::Format("checkpoint ends early".into()));
    }
    Ok(s.trim_end_matches('\n').to_string())
}

fn field<R: BufRead>(r: &mut R, key: &str) -> Result<String> {
    let l = line(r)?;
    match l.split_once('\t') {
        Some((k, v)) if k == key => Ok(v.to_string()),
        _ => Err(AtrError::Format(format!("expected checkpoint key {key:?}, found {l:?}"))),
    }
}

fn parsed<R: BufRead, T: std::str::FromStr>(r: &mut R, key: &str) -> Result<T> {
    let v = field(r, key)?;
    v.parse()
        .map_err(|_| AtrError::Format(format!("bad checkpoint value {v:?} for {key}")))
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<AtrFasModel> {
    if line(r)? != CHECKPOINT_MAGIC {
        return Err(AtrError::Format(format!("missing {CHECKPOINT_MAGIC:?} header")));
    }
    let config = ModelConfig {
        mode: field(r, "mode")?.parse()?,
        experts: parsed(r, "experts")?,
        stem_channels: parsed(r, "stem_channels")?,
        n0: parsed(r, "n0")?,
        input: field(r, "input")?.parse()?,
        standardize: parsed(r, "standardize")?,
        size: parsed(r, "size")?,
        tied_experts: parsed(r, "tied_experts")?,
    };
    let count: usize = parsed(r, "params")?;
    let mut model = AtrFasModel::new(config, 0)?;
    if count != model.params().len() {
        return Err(AtrError::Format(format!(
            "checkpoint has {count} parameters, architecture needs {}",
            model.params().len()
        )));
    }
    for i in 0..count {
        let name = line(r)?;
        let expected = model.params().names().nth(i).unwrap_or_default().to_string();
        if name != expected {
            return Err(AtrError::Format(format!("parameter {i} is {name:?}, expected {expected:?}")));
        }
        let t = Tensor::read_from(r)?;
        if t.shape() != model.params().get(i).shape() {
            return Err(AtrError::Format(format!("parameter {name} has shape {:?}", t.shape())));
        }
        *model.params_mut().get_mut(i) = t;
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<AtrFasModel> {
    let f = fs::File::open(path).map_err(|e| AtrError::io(path, e))?;
    read_checkpoint(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Mode;

    #[test]
    fn round_trip_preserves_config_and_params() {
        let cfg = ModelConfig {
            mode: Mode::Cat,
            size: 16,
            ..ModelConfig::default()
        };
        let model = AtrFasModel::new(cfg, 21).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        assert!(bytes.starts_with(b"ATRFAS-CKPT v1\nmode\tCat\n"));
        let back = read_checkpoint(&mut &bytes[..]).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), model.params());
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let model = AtrFasModel::new(
            ModelConfig {
                size: 16,
                ..ModelConfig::default()
            },
            1,
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        assert!(read_checkpoint(&mut &bytes[..bytes.len() / 2]).is_err());
        assert!(read_checkpoint(&mut &b"ATRFAS-CKPT v0\n"[..]).is_err());
    }
}
