use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

/// First 16 bytes of the SHA-256 of `bytes`, as hex.
pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..16])
}

/// Insert-only map safe under concurrent readers and writers. Entries are
/// keyed by content, so a racing second insert stores an equal value.
pub struct ContentStore<V> {
    map: RwLock<HashMap<String, Arc<V>>>,
}

impl<V> Default for ContentStore<V> {
    fn default() -> Self {
        Self {
            map: RwLock::new(HashMap::new()),
        }
    }
}

impl<V> ContentStore<V> {
    pub fn get(&self, key: &str) -> Option<Arc<V>> {
        self.map.read().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    pub fn insert(&self, key: String, value: V) {
        self.map.write().unwrap_or_else(|e| e.into_inner()).entry(key).or_insert_with(|| Arc::new(value));
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
