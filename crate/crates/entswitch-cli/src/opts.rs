//! Flag and config-file handling. Flags are `--key value` pairs; a flat
//! `key=value` config file supplies defaults; precedence is flags over
//! file over built-in defaults. `ENTSWITCH_SEED` seeds runs that give no
//! explicit seed.

use std::collections::HashMap;

use crate::CliError;

pub struct Opts {
    flags: HashMap<String, String>,
    file: HashMap<String, String>,
}

impl Opts {
    pub fn parse(args: &[String]) -> Result<Opts, CliError> {
        let mut flags = HashMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(key) = arg.strip_prefix("--") else {
                return Err(CliError::Usage(format!("unexpected argument `{arg}`")));
            };
            let Some(value) = args.get(i + 1) else {
                return Err(CliError::Usage(format!("flag --{key} needs a value")));
            };
            flags.insert(key.to_string(), value.clone());
            i += 2;
        }
        let mut file = HashMap::new();
        if let Some(path) = flags.get("config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("config {path}: {e}")))?;
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(CliError::Usage(format!(
                        "config line is not key=value: `{line}`"
                    )));
                };
                file.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Opts { flags, file })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.flags
            .get(key)
            .or_else(|| self.file.get(key))
            .map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("flag --{key}: cannot parse `{v}`"))),
        }
    }

    pub fn u32_or(&self, key: &str, default: u32) -> Result<u32, CliError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn require_u32(&self, key: &str) -> Result<u32, CliError> {
        self.parsed(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{key}")))
    }

    pub fn string_or(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    /// Seed precedence: --seed flag, config file, ENTSWITCH_SEED, fixed
    /// default.
    pub fn seed(&self) -> Result<u64, CliError> {
        if let Some(v) = self.parsed::<u64>("seed")? {
            return Ok(v);
        }
        if let Ok(env) = std::env::var("ENTSWITCH_SEED") {
            return env
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("ENTSWITCH_SEED: cannot parse `{env}`")));
        }
        Ok(0x5eed)
    }
}
