//! `key = value` settings files for the `augment` subcommand.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the long
//! flag names without the leading dashes (`rs-min`, `workers`, ...).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use shadowsmith::Error;

pub const KEYS: &[&str] = &[
    "method",
    "rs-min",
    "rs-max",
    "ra-min",
    "ra-max",
    "prob",
    "copies",
    "seed",
    "workers",
    "backgrounds",
    "include-originals",
    "max-retries",
];

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl Settings {
    pub fn parse(text: &str, base: &Path) -> Result<Self, Error> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("settings line {}: expected key = value", n + 1))
            })?;
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("settings line {}: unknown key '{key}'", n + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("settings line {}: duplicate key '{key}'", n + 1)));
            }
        }
        Ok(Self {
            values,
            base: base.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Error> {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("settings key '{key}': cannot parse '{v}'")))
            })
            .transpose()
    }

    /// Boolean keys accept true/false, yes/no and 1/0.
    pub fn flag(&self, key: &str) -> Result<Option<bool>, Error> {
        self.values
            .get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!("settings key '{key}': expected a boolean, got '{v}'"))),
            })
            .transpose()
    }

    /// Paths are taken relative to the settings file.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|v| self.base.join(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let s = Settings::parse("# demo\nmethod = re\nrs_min=0.1\n\nworkers = 4\n", Path::new("/cfg")).unwrap();
        assert_eq!(s.get::<String>("method").unwrap().as_deref(), Some("re"));
        assert_eq!(s.get::<f64>("rs-min").unwrap(), Some(0.1));
        assert_eq!(s.get::<usize>("workers").unwrap(), Some(4));
        assert_eq!(s.get::<u64>("seed").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Settings::parse("colour = red", Path::new(".")).unwrap_err().is_config());
        assert!(Settings::parse("method re", Path::new(".")).unwrap_err().is_config());
        assert!(Settings::parse("seed = 1\nseed = 2", Path::new(".")).unwrap_err().is_config());
        let s = Settings::parse("copies = many", Path::new(".")).unwrap();
        assert!(s.get::<u32>("copies").unwrap_err().is_config());
    }

    #[test]
    fn paths_are_relative_to_the_file() {
        let s = Settings::parse("backgrounds = bg", Path::new("/data/run")).unwrap();
        assert_eq!(s.path("backgrounds"), Some(PathBuf::from("/data/run/bg")));
        assert_eq!(s.flag("include-originals").unwrap(), None);
    }
}
