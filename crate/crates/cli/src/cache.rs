//! On-disk flow cache keyed by a content hash of the frame pair and solver settings.
//!
//! Fresh and cached fields are both rounded to `f32`, so a run produces the
//! same numbers whether or not the cache was warm.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use elrcn_core::error::{Error, Result};
use elrcn_core::flow::{estimate_flow, FlowField, TvL1Config};
use elrcn_core::frame::Grayscale;
use sha2::{Digest, Sha256};

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

pub struct FlowCache {
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl FlowCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FlowCache {
            dir: dir.into(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn key(prev: &Grayscale, next: &Grayscale, cfg: &TvL1Config) -> String {
        let mut h = Sha256::new();
        for f in [prev, next] {
            h.update((f.width() as u64).to_le_bytes());
            h.update((f.height() as u64).to_le_bytes());
            for v in f.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.update(serde_json::to_vec(cfg).expect("flow config serializes"));
        hex::encode(h.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.flo2"))
    }

    pub fn flow(&self, prev: &Grayscale, next: &Grayscale, cfg: &TvL1Config) -> Result<FlowField> {
        let key = Self::key(prev, next, cfg);
        let path = self.path_for(&key);
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(field) = FlowField::from_flo2_bytes(&bytes) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(field);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let field = estimate_flow(prev, next, cfg)?.quantized();
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        // write-then-rename so concurrent readers never see a partial file
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("tmp{}_{n}", std::process::id()));
        fs::write(&tmp, field.to_flo2_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(field)
    }
}
