//! `key = value` config files. Keys use the long flag names; explicit
//! command-line flags always win.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        ConfigFile::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<ConfigFile> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                anyhow::bail!("config line {} is not `key = value`: {raw:?}", lineno + 1);
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    /// Fills an unset option from the config file, parsing to the
    /// target type.
    pub fn fill<T: std::str::FromStr>(&self, slot: &mut Option<T>, key: &str) -> anyhow::Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if slot.is_none() {
            if let Some(raw) = self.values.get(key) {
                match raw.parse() {
                    Ok(v) => *slot = Some(v),
                    Err(e) => anyhow::bail!("config key {key} = {raw:?}: {e}"),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_fills() {
        let cfg = ConfigFile::parse("# comment\nseed = 9\nlr = 0.001\n").unwrap();
        let mut seed: Option<u64> = None;
        let mut lr: Option<f64> = Some(0.5); // explicit flag wins
        cfg.fill(&mut seed, "seed").unwrap();
        cfg.fill(&mut lr, "lr").unwrap();
        assert_eq!(seed, Some(9));
        assert_eq!(lr, Some(0.5));
    }

    #[test]
    fn rejects_bad_lines_and_values() {
        assert!(ConfigFile::parse("just-a-word\n").is_err());
        let cfg = ConfigFile::parse("seed = abc\n").unwrap();
        let mut seed: Option<u64> = None;
        assert!(cfg.fill(&mut seed, "seed").is_err());
    }
}
