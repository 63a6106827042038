//! Service configuration: a TOML file overridden by environment variables.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kilnwatch_core::compliance::KilnAnchor;
use serde::Deserialize;

pub const ENV_LISTEN: &str = "KILNWATCH_LISTEN";
pub const ENV_WORKSPACE: &str = "KILNWATCH_WORKSPACE";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_workspace")]
    pub workspace: PathBuf,
    /// Snapshot after this many logged actions.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default)]
    pub anchor: KilnAnchor,
    #[serde(default)]
    pub tiles: Option<TileConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileConfig {
    /// URL template with `{z}`, `{x}` and `{y}` placeholders.
    pub upstream: String,
    /// Defaults to `tiles/` inside the workspace.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().unwrap()
}

fn default_workspace() -> PathBuf {
    PathBuf::from("workspace")
}

fn default_snapshot_every() -> u64 {
    100
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: default_listen(),
            workspace: default_workspace(),
            snapshot_every: default_snapshot_every(),
            anchor: KilnAnchor::default(),
            tiles: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        if cfg.snapshot_every == 0 {
            anyhow::bail!("snapshot_every must be at least 1");
        }
        if let Some(t) = &cfg.tiles {
            for ph in ["{z}", "{x}", "{y}"] {
                if !t.upstream.contains(ph) {
                    anyhow::bail!("tile upstream {:?} lacks {ph}", t.upstream);
                }
            }
        }
        Ok(cfg)
    }

    /// Reads `path` if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Config::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = get(ENV_LISTEN) {
            self.listen = v.parse().with_context(|| format!("{ENV_LISTEN}={v:?} is not a socket address"))?;
        }
        if let Some(v) = get(ENV_WORKSPACE) {
            self.workspace = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn tile_cache_dir(&self) -> Option<PathBuf> {
        let t = self.tiles.as_ref()?;
        Some(t.cache_dir.clone().unwrap_or_else(|| self.workspace.join("tiles")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_file() {
        let mut cfg = Config::parse(
            r#"
listen = "0.0.0.0:9000"
workspace = "/data/ws"
anchor = "edge"

[tiles]
upstream = "https://tiles.example/{z}/{x}/{y}.png"
"#,
        )
        .unwrap();
        assert_eq!(cfg.anchor, KilnAnchor::Edge);
        cfg.apply_env(|k| (k == ENV_LISTEN).then(|| "127.0.0.1:1234".to_string())).unwrap();
        assert_eq!(cfg.listen.port(), 1234);
        assert_eq!(cfg.workspace, PathBuf::from("/data/ws"));
        assert_eq!(cfg.tile_cache_dir().unwrap(), PathBuf::from("/data/ws/tiles"));
    }

    #[test]
    fn rejects_template_without_placeholders() {
        assert!(Config::parse("[tiles]\nupstream = \"https://x/{z}/{x}.png\"\n").is_err());
        assert!(Config::parse("bogus = 1\n").is_err());
        assert!(Config::parse("snapshot_every = 0\n").is_err());
    }
}
