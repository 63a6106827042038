//! Basemap tile proxy with an on-disk cache.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use kilnwatch_core::geo::MAX_ZOOM;

#[derive(Debug, thiserror::Error)]
pub enum TileError {
    #[error("invalid tile address: {0}")]
    BadAddress(String),
    #[error("upstream: {0}")]
    Upstream(String),
    #[error("tile cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileAddr {
    pub z: u8,
    pub x: u32,
    pub y: u32,
}

impl TileAddr {
    /// `y` may carry an image extension (`123.png`), which is ignored.
    pub fn parse(z: &str, x: &str, y: &str) -> Result<Self, TileError> {
        let y = y.split_once('.').map_or(y, |(n, _)| n);
        let bad = || TileError::BadAddress(format!("{z}/{x}/{y}"));
        let z: u8 = z.parse().map_err(|_| bad())?;
        let x: u32 = x.parse().map_err(|_| bad())?;
        let y: u32 = y.parse().map_err(|_| bad())?;
        if z > MAX_ZOOM || u64::from(x) >= 1u64 << z || u64::from(y) >= 1u64 << z {
            return Err(bad());
        }
        Ok(TileAddr { z, x, y })
    }
}

pub struct Tile {
    pub bytes: Vec<u8>,
    pub content_type: &'static str,
    pub cached: bool,
}

pub fn sniff_content_type(b: &[u8]) -> &'static str {
    if b.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if b.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if b.len() >= 12 && &b[..4] == b"RIFF" && &b[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

pub struct TileProxy {
    client: reqwest::Client,
    upstream: String,
    cache_dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl TileProxy {
    pub fn new(upstream: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        TileProxy {
            client: reqwest::Client::builder()
                .user_agent(concat!("kilnwatch/", env!("CARGO_PKG_VERSION")))
                .timeout(std::time::Duration::from_secs(30))
                .build()
                .expect("http client builds"),
            upstream: upstream.into(),
            cache_dir: cache_dir.into(),
            tmp_counter: AtomicU64::new(0),
        }
    }

    pub fn url(&self, t: TileAddr) -> String {
        self.upstream
            .replace("{z}", &t.z.to_string())
            .replace("{x}", &t.x.to_string())
            .replace("{y}", &t.y.to_string())
    }

    fn path(&self, t: TileAddr) -> PathBuf {
        self.cache_dir.join(t.z.to_string()).join(t.x.to_string()).join(t.y.to_string())
    }

    pub async fn get(&self, t: TileAddr) -> Result<Tile, TileError> {
        let path = self.path(t);
        match tokio::fs::read(&path).await {
            Ok(bytes) => {
                return Ok(Tile {
                    content_type: sniff_content_type(&bytes),
                    bytes,
                    cached: true,
                })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        let resp = self
            .client
            .get(self.url(t))
            .send()
            .await
            .map_err(|e| TileError::Upstream(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(TileError::Upstream(format!("status {}", resp.status())));
        }
        let bytes = resp.bytes().await.map_err(|e| TileError::Upstream(e.to_string()))?.to_vec();
        let dir = path.parent().expect("tile path has a parent");
        tokio::fs::create_dir_all(dir).await?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{}.{}.{n}.tmp", t.y, std::process::id()));
        tokio::fs::write(&tmp, &bytes).await?;
        tokio::fs::rename(&tmp, &path).await?;
        Ok(Tile {
            content_type: sniff_content_type(&bytes),
            bytes,
            cached: false,
        })
    }
}
