//! Text checkpoint: the model config followed by every named tensor.
//!
//! ```text
//! dualpath-checkpoint 1
//! config channels=7 lookback=512 horizon=96 d_model=128 heads=8 layers=2 d_ff=256
//! tensor ar.w.0 512 96
//! 0.0019 -0.0003 ...
//! ```
//!
//! Values are written in shortest round-trip form, so a save/load cycle
//! is lossless and identical parameters give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Params};

const MAGIC: &str = "dualpath-checkpoint 1";

pub fn encode_checkpoint(params: &Params, config: &ModelConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(
        s,
        "config channels={} lookback={} horizon={} d_model={} heads={} layers={} d_ff={}",
        config.channels, config.lookback, config.horizon, config.d_model, config.heads, config.layers, config.d_ff
    );
    for (name, t) in params.named() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(s, "tensor {name} {}", dims.join(" "));
        let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    s
}

pub fn decode_checkpoint(text: &str) -> Result<(ModelConfig, Params)> {
    let mut lines = text.lines().enumerate();
    let syntax = |line: usize, msg: &str| Error::Syntax {
        line: line + 1,
        msg: msg.to_string(),
    };
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(syntax(0, "not a checkpoint file")),
    }
    let (n, header) = lines.next().ok_or_else(|| syntax(1, "missing config line"))?;
    let fields = header
        .strip_prefix("config ")
        .ok_or_else(|| syntax(n, "expected `config ...`"))?;
    let get = |key: &str| -> Result<usize> {
        fields
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| syntax(n, &format!("missing or invalid `{key}`")))
    };
    let config = ModelConfig {
        channels: get("channels")?,
        lookback: get("lookback")?,
        horizon: get("horizon")?,
        d_model: get("d_model")?,
        heads: get("heads")?,
        layers: get("layers")?,
        d_ff: get("d_ff")?,
    };
    config.validate()?;

    // a correctly shaped template, then filled by name
    let mut params = Params::init(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut filled = 0;
    {
        let mut slots = params.named_mut();
        while let Some((n, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut head = line.split_whitespace();
            if head.next() != Some("tensor") {
                return Err(syntax(n, "expected `tensor <name> <dims>`"));
            }
            let name = head.next().ok_or_else(|| syntax(n, "missing tensor name"))?;
            let dims = head
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| syntax(n, "bad dimension"))?;
            let (vn, values) = lines.next().ok_or_else(|| syntax(n + 1, "missing tensor values"))?;
            let values = values
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| syntax(vn, "bad value"))?;
            let slot = slots
                .iter_mut()
                .find(|(s, _)| s == name)
                .ok_or_else(|| Error::MissingState(name.to_string()))?;
            if slot.1.shape() != dims.as_slice() || values.len() != slot.1.numel() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("`{name}` stored as {dims:?} with {} values, expected {:?}", values.len(), slot.1.shape()),
                ));
            }
            slot.1.data_mut().copy_from_slice(&values);
            filled += 1;
        }
        if filled != slots.len() {
            let missing = slots.len() - filled;
            return Err(Error::MissingState(format!("{missing} tensors absent from checkpoint")));
        }
    }
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, params: &Params, config: &ModelConfig) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, config))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Params)> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    decode_checkpoint(&std::fs::read_to_string(path)?)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_checksum(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            channels: 3,
            lookback: 6,
            horizon: 2,
            d_model: 4,
            heads: 2,
            layers: 1,
            d_ff: 5,
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let params = Params::init(&cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let text = encode_checkpoint(&params, &cfg());
        let (c, p) = decode_checkpoint(&text).unwrap();
        assert_eq!(c, cfg());
        assert_eq!(p, params);
        assert_eq!(encode_checkpoint(&p, &c), text);
    }

    #[test]
    fn names_carry_branch_prefixes() {
        let params = Params::init(&cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let text = encode_checkpoint(&params, &cfg());
        let names: Vec<&str> = text
            .lines()
            .filter_map(|l| l.strip_prefix("tensor "))
            .map(|l| l.split(' ').next().unwrap())
            .collect();
        assert!(names.iter().all(|n| n.starts_with("ar.") || n.starts_with("cr.")));
        assert!(names.contains(&"ar.w.0") && names.contains(&"cr.head.w"));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(decode_checkpoint("hello\n").is_err());
        let params = Params::init(&cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let text = encode_checkpoint(&params, &cfg());
        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(matches!(decode_checkpoint(&truncated), Err(Error::MissingState(_))));
        let renamed = text.replace("tensor ar.w.0", "tensor ar.w.9");
        assert!(matches!(decode_checkpoint(&renamed), Err(Error::MissingState(n)) if n == "ar.w.9"));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
