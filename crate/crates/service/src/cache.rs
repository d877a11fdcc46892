use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use biasspace_core::pipeline::{prepare_embeddings, EmbeddingInfo, EmbeddingSource};
use biasspace_core::{EmbeddingFormat, EmbeddingSet, Error, Result};

pub struct Loaded {
    pub set: EmbeddingSet,
    pub info: EmbeddingInfo,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Key {
    path: PathBuf,
    format: EmbeddingFormat,
    normalize: bool,
}

struct Entry {
    stamp: (u64, Option<SystemTime>),
    used: u64,
    value: Arc<Loaded>,
}

/// Loaded embedding sets keyed by source, invalidated when the file's size or
/// modification time changes. Holds at most `capacity` sets, evicting the
/// least recently used.
pub struct EmbeddingCache {
    capacity: usize,
    inner: Mutex<(u64, HashMap<Key, Entry>)>,
}

impl EmbeddingCache {
    pub fn new(capacity: usize) -> Self {
        EmbeddingCache {
            capacity: capacity.max(1),
            inner: Mutex::new((0, HashMap::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, source: &EmbeddingSource) -> Result<Arc<Loaded>> {
        let meta = std::fs::metadata(&source.path).map_err(|e| Error::io(&source.path, e))?;
        let stamp = (meta.len(), meta.modified().ok());
        let key = Key {
            path: source.path.clone(),
            format: source.format,
            normalize: source.normalize,
        };
        {
            let mut guard = self.inner.lock().expect("cache lock");
            let (clock, map) = &mut *guard;
            *clock += 1;
            if let Some(entry) = map.get_mut(&key) {
                if entry.stamp == stamp {
                    entry.used = *clock;
                    return Ok(entry.value.clone());
                }
            }
        }

        // Load without holding the lock; concurrent loads of one file may
        // both read it, and the later insert wins.
        let (set, info) = prepare_embeddings(source)?;
        let value = Arc::new(Loaded { set, info });
        let mut guard = self.inner.lock().expect("cache lock");
        let (clock, map) = &mut *guard;
        *clock += 1;
        map.remove(&key);
        while map.len() >= self.capacity {
            let oldest = map.iter().min_by_key(|(_, e)| e.used).map(|(k, _)| k.clone());
            match oldest {
                Some(k) => map.remove(&k),
                None => break,
            };
        }
        map.insert(
            key,
            Entry {
                stamp,
                used: *clock,
                value: value.clone(),
            },
        );
        Ok(value)
    }
}
