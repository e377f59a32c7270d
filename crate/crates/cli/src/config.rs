//! Flat key=value run configuration. Every knob has a built-in default,
//! a config file can override it, and a command-line flag overrides both.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use aunets_core::detectors::TrainConfig;

/// Keys a config file may set. Anything else is rejected so typos fail
/// loudly instead of silently keeping a default.
pub const KNOWN_KEYS: [&str; 16] = [
    "lr0",
    "decay_epochs",
    "max_epochs",
    "beta1",
    "beta2",
    "epsilon",
    "weight_decay",
    "plateau_epochs",
    "improvement",
    "batch_size",
    "seed",
    "fusion",
    "median_window",
    "profile",
    "view_stride",
    "balance_factor",
];

/// A usage-level problem: bad flags, bad config, bad argument values.
/// Rendered with the offending detail; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines; blank lines and `#` comments are
    /// skipped. Unknown keys and malformed lines are usage errors.
    pub fn parse(text: &str) -> Result<RunConfig, UsageError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return usage(format!(
                    "config line {}: expected key=value, got {:?}",
                    lineno + 1,
                    line
                ));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return usage(format!("config line {}: unknown key {:?}", lineno + 1, key));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(RunConfig { entries })
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig, UsageError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config {}: {}", p.display(), e)))?;
                RunConfig::parse(&text)
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Flag value if given, else the config value, else the default.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, UsageError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| UsageError(format!("config key {}: bad value {:?} ({})", key, raw, e))),
        }
    }

    /// The training recipe with any overridden fields applied on top of
    /// the supplied defaults.
    pub fn train_config(
        &self,
        defaults: TrainConfig,
        seed_flag: Option<u64>,
    ) -> Result<TrainConfig, UsageError> {
        let mut c = defaults;
        c.lr0 = self.resolve(None, "lr0", c.lr0)?;
        c.decay_epochs = self.resolve(None, "decay_epochs", c.decay_epochs)?;
        c.max_epochs = self.resolve(None, "max_epochs", c.max_epochs)?;
        c.beta1 = self.resolve(None, "beta1", c.beta1)?;
        c.beta2 = self.resolve(None, "beta2", c.beta2)?;
        c.epsilon = self.resolve(None, "epsilon", c.epsilon)?;
        c.weight_decay = self.resolve(None, "weight_decay", c.weight_decay)?;
        c.plateau_epochs = self.resolve(None, "plateau_epochs", c.plateau_epochs)?;
        c.improvement = self.resolve(None, "improvement", c.improvement)?;
        c.batch_size = self.resolve(None, "batch_size", c.batch_size)?;
        c.seed = self.resolve(seed_flag, "seed", c.seed)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_spacing() {
        let cfg = RunConfig::parse("# recipe\n\n lr0 = 0.002 \nmax_epochs=5\n").unwrap();
        assert_eq!(cfg.get("lr0"), Some("0.002"));
        assert_eq!(cfg.get("max_epochs"), Some("5"));
        assert_eq!(cfg.get("seed"), None);
    }

    #[test]
    fn unknown_key_and_bad_line_are_usage_errors() {
        let e = RunConfig::parse("lr=1\n").unwrap_err();
        assert!(e.0.contains("unknown key"), "{}", e.0);
        let e = RunConfig::parse("just words\n").unwrap_err();
        assert!(e.0.contains("key=value"), "{}", e.0);
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let cfg = RunConfig::parse("seed = 9\n").unwrap();
        assert_eq!(cfg.resolve(Some(4u64), "seed", 1).unwrap(), 4);
        assert_eq!(cfg.resolve(None, "seed", 1u64).unwrap(), 9);
        assert_eq!(cfg.resolve(None, "batch_size", 16usize).unwrap(), 16);
    }

    #[test]
    fn train_config_merges_over_defaults() {
        let cfg = RunConfig::parse("lr0 = 0.002\nplateau_epochs = 5\n").unwrap();
        let t = cfg.train_config(TrainConfig::default(), Some(3)).unwrap();
        assert_eq!(t.lr0, 0.002);
        assert_eq!(t.plateau_epochs, 5);
        assert_eq!(t.seed, 3);
        assert_eq!(t.beta1, TrainConfig::default().beta1);
        let bad = RunConfig::parse("lr0 = fast\n").unwrap();
        assert!(bad.train_config(TrainConfig::default(), None).is_err());
    }
}
