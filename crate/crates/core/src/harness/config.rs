//! Line-oriented `key = value` configuration with dotted keys.
//!
//! Overrides are applied to the serialized form of a config struct, so every
//! serializable field is addressable (`rmg.lambda_reg`, `cls.alpha`, ...) and
//! unknown keys are rejected.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{FcotError, Result};

pub const SEED_ENV: &str = "FCOT_SEED";

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FcotError::Parse(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(FcotError::Parse(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| FcotError::Parse(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_value(raw: &str) -> Value {
    match raw {
        "none" | "null" => Value::Null,
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    }
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| FcotError::Config(format!("key {key:?}: {:?} is not a section", parts[..i].join("."))))?;
        let slot = obj.get_mut(*part).ok_or_else(|| FcotError::Config(format!("unknown config key {key:?}")))?;
        if i + 1 == parts.len() {
            let old = slot.clone();
            let mut new = parse_value(raw);
            // integers given where reals are stored
            if old.is_f64() {
                if let Some(f) = new.as_f64() {
                    new = Value::from(f);
                }
            }
            // keep strings that merely look like numbers or booleans
            if old.is_string() && (new.is_number() || new.is_boolean()) {
                new = Value::String(raw.to_string());
            }
            *slot = new;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

/// Applies overrides in order to `base`, then validates by deserializing.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, overrides: &[(String, String)]) -> Result<T> {
    let mut v = serde_json::to_value(base).map_err(|e| FcotError::Config(e.to_string()))?;
    for (k, raw) in overrides {
        set_path(&mut v, k, raw)?;
    }
    serde_json::from_value(v).map_err(|e| FcotError::Config(format!("invalid value: {e}")))
}

/// Reads the seed override from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| FcotError::Config(format!("{SEED_ENV}={s:?} is not an integer"))),
        Err(_) => Ok(None),
    }
}

/// Builds a config from defaults, an optional file, the seed environment
/// variable and command-line overrides, in increasing precedence.
pub fn load<T: Serialize + DeserializeOwned + Default>(file_text: Option<&str>, sets: &[String]) -> Result<T> {
    let mut overrides = match file_text {
        Some(t) => parse_lines(t)?,
        None => Vec::new(),
    };
    if let Some(seed) = env_seed()? {
        overrides.push(("seed".into(), seed.to_string()));
    }
    for s in sets {
        overrides.push(parse_override(s)?);
    }
    apply(&T::default(), &overrides)
}

/// SHA-256 of the canonical JSON form, hex encoded.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let json = serde_json::to_vec(cfg).map_err(|e| FcotError::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// Renders a config back to `key = value` lines.
pub fn to_lines<T: Serialize>(cfg: &T) -> Result<String> {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            // externally tagged enum variants stay inline
            Value::Object(m) if m.len() == 1 && m.keys().all(|k| k.starts_with(|c: char| c.is_ascii_uppercase())) => {
                out.push_str(&format!("{prefix} = {v}\n"))
            }
            Value::Object(m) => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            Value::String(s) => out.push_str(&format!("{prefix} = {s}\n")),
            Value::Null => out.push_str(&format!("{prefix} = none\n")),
            other => out.push_str(&format!("{prefix} = {other}\n")),
        }
    }
    let v = serde_json::to_value(cfg).map_err(|e| FcotError::Config(e.to_string()))?;
    let mut out = String::new();
    walk("", &v, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::SynthSpec;
    use crate::tracker::{OnlineReg, TrackerConfig};

    #[test]
    fn dotted_keys_and_types() {
        let text = "# tracker\nrmg.lambda_reg = 0.3\ncls.update_interval = 7 # inline\nonline_reg = Trad\nbackbone.reg_head_seed = 5\nrmg.eta = 1\n\n";
        let cfg: TrackerConfig = apply(&TrackerConfig::default(), &parse_lines(text).unwrap()).unwrap();
        assert_eq!(cfg.rmg.lambda_reg, 0.3);
        assert_eq!(cfg.cls.update_interval, 7);
        assert_eq!(cfg.online_reg, OnlineReg::Trad);
        assert_eq!(cfg.backbone.reg_head_seed, Some(5));
        assert_eq!(cfg.rmg.eta, 1.0);
        let back: TrackerConfig = apply(&cfg, &[("backbone.reg_head_seed".into(), "none".into())]).unwrap();
        assert_eq!(back.backbone.reg_head_seed, None);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let d = TrackerConfig::default();
        assert!(apply(&d, &[("rmg.nope".into(), "1".into())]).is_err());
        assert!(apply(&d, &[("rmg.lambda_reg.x".into(), "1".into())]).is_err());
        assert!(apply(&d, &[("cls.update_interval".into(), "abc".into())]).is_err());
        assert!(parse_lines("just a line").is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn round_trip_through_lines() {
        let mut cfg = TrackerConfig::default();
        cfg.rmg.lambda_reg = 0.25;
        cfg.online_reg = OnlineReg::Off;
        cfg.rmg.generator = crate::rmg::GeneratorMap::Seeded(4);
        let text = to_lines(&cfg).unwrap();
        let back: TrackerConfig = apply(&TrackerConfig::default(), &parse_lines(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let spec = SynthSpec { noise_sigma: 0.0, ..Default::default() };
        let back: SynthSpec = apply(&SynthSpec::default(), &parse_lines(&to_lines(&spec).unwrap()).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrackerConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.cls.alpha = 0.4;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }
}
