//! Run configuration files (TOML) with command-line overrides.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::simulation::McConfig;

/// Applies `key.path=value` overrides to a parsed TOML table. Values are read
/// as TOML literals, falling back to plain strings.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.as_str(), "override must look like key=value"))?;
        let key = key.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::config(key, "empty key segment"));
        }
        let mut node = &mut *table;
        for part in &parts[..parts.len() - 1] {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

/// Parses configuration text, applies overrides, and checks every invariant.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<McConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config("<file>", e.message()))?;
    apply_overrides(&mut table, overrides)?;
    let merged = toml::to_string(&table).map_err(|e| Error::config("<overrides>", e.to_string()))?;
    let de = toml::Deserializer::parse(&merged).map_err(|e| Error::config("<file>", e.message()))?;
    let config: McConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().message())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<McConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = parse_config(&text, overrides)?;
    // Relative population paths are taken from the config's directory.
    if let (Some(p), Some(dir)) = (config.population.path.as_mut(), path.parent()) {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
    Ok(config)
}

/// Canonical text of a resolved configuration.
pub fn canonical_toml(config: &McConfig) -> String {
    toml::to_string(config).expect("configuration serializes")
}

/// Hex SHA-256 of the canonical configuration text.
pub fn config_hash(config: &McConfig) -> String {
    let digest = Sha256::digest(canonical_toml(config).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a configuration value of any deserializable type, used for the
/// sub-tables that `estimate` shares with `simulate`.
pub fn section<T: for<'de> Deserialize<'de> + Default>(table: &toml::Table, key: &str) -> Result<T> {
    match table.get(key) {
        None => Ok(T::default()),
        Some(v) => {
            let text = toml::to_string(&toml::Table::from_iter([("v".to_string(), v.clone())]))
                .map_err(|e| Error::config(key, e.to_string()))?;
            #[derive(Deserialize)]
            struct Wrap<T> {
                v: T,
            }
            let de = toml::Deserializer::parse(&text).map_err(|e| Error::config(key, e.message()))?;
            serde_path_to_error::deserialize::<_, Wrap<T>>(de)
                .map(|w| w.v)
                .map_err(|e| Error::config(format!("{key}{}", e.path().to_string().trim_start_matches('v')), e.into_inner().message()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::PopulationKind;

    const MINIMAL: &str = "master_seed = 5\nn = 15\nr = 2\n\n[population]\nkind = \"I\"\n";

    #[test]
    fn minimal_config() {
        let c = parse_config(MINIMAL, &[]).unwrap();
        assert_eq!((c.n, c.r, c.master_seed), (15, 2, 5));
        assert_eq!(c.population.kind, PopulationKind::TableThreeI);
        assert!(c.bootstrap.is_none());
    }

    #[test]
    fn overrides_apply() {
        let c = parse_config(
            MINIMAL,
            &["n=10".into(), "r = 300".into(), "bootstrap.B=20".into(), "population.kind=II".into()],
        )
        .unwrap();
        assert_eq!((c.n, c.r), (10, 300));
        assert_eq!(c.bootstrap.unwrap().b, 20);
        assert_eq!(c.population.kind, PopulationKind::TableThreeII);
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse_config(MINIMAL, &["population.bogus=1".into()]).unwrap_err();
        assert!(matches!(&e, Error::Config { path, message } if path == "population.bogus" && message.contains("bogus")), "{e}");
        let e = parse_config(MINIMAL, &["bootstrap.B=0".into()]).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "bootstrap.B"), "{e}");
        let e = parse_config(MINIMAL, &["fit.tau_cap=\"x\"".into()]).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "fit.tau_cap"), "{e}");
        let e = parse_config(MINIMAL, &["r=0".into()]).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "r"), "{e}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = parse_config(MINIMAL, &[]).unwrap();
        let b = parse_config(MINIMAL, &[]).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = parse_config(MINIMAL, &["r=3".into()]).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
        let again = parse_config(&canonical_toml(&a), &[]).unwrap();
        assert_eq!(again, a);
    }
}
