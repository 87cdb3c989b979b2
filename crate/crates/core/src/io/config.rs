//! Application configuration: flat `key = value` lines, `#` starts a comment line.
//!
//! ```text
//! checkpoint = models/toy.lbx
//! labels = models/toy.labels   # optional when the checkpoint embeds labels
//! bind = 127.0.0.1
//! port = 5000
//! temp_root = /tmp/lensbox
//! session_ttl_secs = 3600
//! ```
//!
//! Relative paths resolve against the directory containing the config file.

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const DEFAULT_BIND: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 5000;
pub const DEFAULT_SESSION_TTL_SECS: u64 = 3600;
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 8 * 1024 * 1024;

const KNOWN_KEYS: [&str; 6] = ["checkpoint", "labels", "bind", "port", "temp_root", "session_ttl_secs"];

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub checkpoint: PathBuf,
    pub labels: Option<PathBuf>,
    pub bind: IpAddr,
    pub port: u16,
    pub temp_root: PathBuf,
    pub session_ttl_secs: u64,
    /// Upload size cap; not settable from the file.
    pub max_upload_bytes: usize,
}

impl AppConfig {
    /// Defaults for everything except the checkpoint path.
    pub fn with_checkpoint(checkpoint: impl Into<PathBuf>) -> Self {
        AppConfig {
            checkpoint: checkpoint.into(),
            labels: None,
            bind: DEFAULT_BIND.parse().expect("valid default address"),
            port: DEFAULT_PORT,
            temp_root: std::env::temp_dir().join("lensbox"),
            session_ttl_secs: DEFAULT_SESSION_TTL_SECS,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
        }
    }

    /// Parses config text; unknown keys are returned as warnings.
    pub fn parse(text: &str, base_dir: &Path) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut checkpoint = None;
        let mut labels = None;
        let mut bind = None;
        let mut port = None;
        let mut temp_root = None;
        let mut ttl = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let resolve = |v: &str| base_dir.join(v);
            match key {
                "checkpoint" => checkpoint = Some(resolve(value)),
                "labels" => labels = Some(resolve(value)),
                "temp_root" => temp_root = Some(resolve(value)),
                "bind" => {
                    bind = Some(value.parse::<IpAddr>().map_err(|_| {
                        Error::Validation(format!("bind: {value:?} is not an IP address"))
                    })?)
                }
                "port" => {
                    let p: u64 = value
                        .parse()
                        .map_err(|_| Error::Validation(format!("port: {value:?} is not an integer")))?;
                    if !(1..=65535).contains(&p) {
                        return Err(Error::Validation(format!("port {p} out of range [1, 65535]")));
                    }
                    port = Some(p as u16);
                }
                "session_ttl_secs" => {
                    ttl = Some(value.parse::<u64>().map_err(|_| {
                        Error::Validation(format!("session_ttl_secs: {value:?} is not a non-negative integer"))
                    })?)
                }
                other => {
                    let msg = format!(
                        "line {}: unknown key \"{other}\" ignored (known: {})",
                        lineno + 1,
                        KNOWN_KEYS.join(", ")
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }

        let checkpoint =
            checkpoint.ok_or_else(|| Error::Config("missing required key \"checkpoint\"".into()))?;
        let mut config = AppConfig::with_checkpoint(checkpoint);
        config.labels = labels;
        if let Some(b) = bind {
            config.bind = b;
        }
        if let Some(p) = port {
            config.port = p;
        }
        if let Some(t) = temp_root {
            config.temp_root = t;
        }
        if let Some(t) = ttl {
            config.session_ttl_secs = t;
        }
        Ok((config, warnings))
    }

    /// Checks that the referenced files exist.
    pub fn check_paths(&self) -> Result<()> {
        if !self.checkpoint.is_file() {
            return Err(Error::Config(format!(
                "checkpoint {} does not exist",
                self.checkpoint.display()
            )));
        }
        if let Some(l) = &self.labels {
            if !l.is_file() {
                return Err(Error::Config(format!("labels file {} does not exist", l.display())));
            }
        }
        if self.port == 0 {
            return Err(Error::Validation("port 0 out of range [1, 65535]".into()));
        }
        Ok(())
    }

    pub fn socket_addr(&self) -> std::net::SocketAddr {
        (self.bind, self.port).into()
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<AppConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    AppConfig::parse(&text, base).map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(AppConfig, Vec<String>)> {
        AppConfig::parse(text, Path::new("/etc/lensbox"))
    }

    #[test]
    fn only_checkpoint_uses_defaults() {
        let (c, warnings) = parse("checkpoint = toy.lbx\n").unwrap();
        assert_eq!(c.socket_addr().to_string(), "127.0.0.1:5000");
        assert_eq!(c.checkpoint, Path::new("/etc/lensbox/toy.lbx"));
        assert_eq!(c.session_ttl_secs, 3600);
        assert!(warnings.is_empty());
    }

    #[test]
    fn port_out_of_range() {
        let err = parse("checkpoint = a\nport = 70000\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(parse("checkpoint = a\nport = 0\n").is_err());
    }

    #[test]
    fn missing_checkpoint_named() {
        let err = parse("port = 8080\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("checkpoint"), "{err}");
    }

    #[test]
    fn unknown_key_is_warning() {
        let (c, warnings) = parse("# comment\n\ncheckpoint=/abs/m.lbx\ncolour = blue\nport=8081").unwrap();
        assert_eq!(c.checkpoint, Path::new("/abs/m.lbx"));
        assert_eq!(c.port, 8081);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("colour"));
    }

    #[test]
    fn malformed_line() {
        assert!(parse("checkpoint\n").is_err());
    }

    #[test]
    fn load_from_file_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.conf");
        std::fs::write(&path, "checkpoint = m.lbx\ntemp_root = tmp\nsession_ttl_secs = 5\nbind = 0.0.0.0\n").unwrap();
        let c = load_config(&path).unwrap();
        assert_eq!(c.checkpoint, dir.path().join("m.lbx"));
        assert_eq!(c.temp_root, dir.path().join("tmp"));
        assert_eq!(c.session_ttl_secs, 5);
        assert_eq!(c.bind.to_string(), "0.0.0.0");
        assert!(c.check_paths().is_err());
    }
}
