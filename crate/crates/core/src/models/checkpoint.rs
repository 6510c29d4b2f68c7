//! Text checkpoints: a magic/version line, a shape header, one line per named
//! array (`name shape(d0,d1) v v …`), then `#`-prefixed config echo lines.
//! Values use Rust's shortest round-trip float formatting, so loads are
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::drafter::{DrafterParameters, DrafterShape};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "PPOWCKPT";
pub const CHECKPOINT_VERSION: &str = "v1";

pub fn checkpoint_save(params: &DrafterParameters, path: &Path, config_echo: &[String]) -> Result<()> {
    let shape = params.shape();
    let mut s = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nheader {shape}\n");
    for (name, dims, values) in params.named_arrays() {
        let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
        write!(s, "{name} shape({})", dims.join(",")).unwrap();
        for v in values {
            write!(s, " {v:?}").unwrap();
        }
        s.push('\n');
    }
    for line in config_echo {
        writeln!(s, "# {line}").unwrap();
    }
    Ok(std::fs::write(path, s)?)
}

/// Loads a checkpoint, optionally requiring a specific shape.
pub fn checkpoint_load(path: &Path, expected: Option<DrafterShape>) -> Result<DrafterParameters> {
    let text = std::fs::read_to_string(path)?;
    let corrupt = |message: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));

    let magic = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
    match magic.split_once(' ') {
        Some((CHECKPOINT_MAGIC, CHECKPOINT_VERSION)) => {}
        Some((CHECKPOINT_MAGIC, other)) => {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION.into(),
                found: other.into(),
            })
        }
        _ => return Err(corrupt("missing magic line".into())),
    }

    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("header "))
        .ok_or_else(|| corrupt("missing header".into()))?;
    let shape = parse_header(header).ok_or_else(|| corrupt(format!("bad header {header:?}")))?;
    if let Some(exp) = expected {
        if exp != shape {
            return Err(Error::ShapeMismatch {
                expected: exp.to_string(),
                found: shape.to_string(),
            });
        }
    }

    let mut values = Vec::with_capacity(shape.num_params());
    for (name, dims) in shape.arrays() {
        let line = lines.next().ok_or_else(|| corrupt(format!("missing array {name}")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(name) {
            return Err(corrupt(format!("expected array {name}")));
        }
        let want_dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
        let want = format!("shape({})", want_dims.join(","));
        if parts.next() != Some(want.as_str()) {
            return Err(corrupt(format!("array {name} does not have {want}")));
        }
        let before = values.len();
        for tok in parts {
            let v: f64 = tok.parse().map_err(|_| corrupt(format!("bad value {tok:?} in {name}")))?;
            values.push(v);
        }
        let n: usize = dims.iter().product();
        if values.len() - before != n {
            return Err(corrupt(format!("array {name} has {} values, expected {n}", values.len() - before)));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(corrupt("trailing data after arrays".into()));
    }
    DrafterParameters::from_values(shape, values)
}

fn parse_header(h: &str) -> Option<DrafterShape> {
    let get = |key: &str| -> Option<usize> {
        h.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
            .and_then(|v| v.parse().ok())
    };
    Some(DrafterShape {
        vocab: get("vocab")?,
        embed: get("embed")?,
        feature: get("feature")?,
        context: get("context")?,
        hidden: get("hidden")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(vocab: usize) -> DrafterShape {
        DrafterShape {
            vocab,
            embed: 4,
            feature: 3,
            context: 2,
            hidden: 5,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        let mut p = DrafterParameters::init(shape(16), 4).unwrap();
        p.values_mut()[0] = 1.0 / 3.0;
        p.values_mut()[1] = -2.5e-300;
        checkpoint_save(&p, &path, &["seed = 4".into()]).unwrap();
        let back = checkpoint_load(&path, Some(shape(16))).unwrap();
        let a: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert!(std::fs::read_to_string(&path).unwrap().contains("# seed = 4"));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        checkpoint_save(&DrafterParameters::init(shape(16), 4).unwrap(), &path, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(checkpoint_load(&path, None), Err(Error::CorruptCheckpoint { .. })));
    }

    #[test]
    fn shape_and_version_guards() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        checkpoint_save(&DrafterParameters::init(shape(256), 4).unwrap(), &path, &[]).unwrap();
        assert!(matches!(checkpoint_load(&path, Some(shape(16))), Err(Error::ShapeMismatch { .. })));
        let text = std::fs::read_to_string(&path).unwrap().replacen("v1", "v9", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(checkpoint_load(&path, None), Err(Error::CheckpointVersion { .. })));
    }
}
