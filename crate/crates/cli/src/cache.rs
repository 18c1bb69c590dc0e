//! Optional on-disk cache of exact oracle results, enabled by
//! `ALIASED_AC_CACHE=<dir>`.

use std::fs;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const CACHE_ENV: &str = "ALIASED_AC_CACHE";

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn key_of(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Returns the cached value for `parts` or computes and stores it. Cache
/// read and write failures fall back to computing.
pub fn cached<V, E, F>(parts: &[&str], compute: F) -> Result<V, E>
where
    V: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<V, E>,
{
    let Some(dir) = cache_dir() else { return compute() };
    let path = dir.join(format!("{}.json", key_of(parts)));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(v) = serde_json::from_str(&text) {
            return Ok(v);
        }
    }
    let v = compute()?;
    if fs::create_dir_all(&dir).is_ok() {
        if let Ok(text) = serde_json::to_string(&v) {
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            if fs::write(&tmp, text).is_ok() {
                let _ = fs::rename(&tmp, &path);
            }
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_stable_and_unambiguous() {
        assert_eq!(key_of(&["a", "b"]), key_of(&["a", "b"]));
        assert_ne!(key_of(&["ab", ""]), key_of(&["a", "b"]));
    }
}
