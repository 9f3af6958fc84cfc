//! In-memory engine. Named instances live in a process-wide registry so
//! replicas opened with the same `mem://name` URI share one database.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use super::{Engine, StoreError};

#[derive(Default)]
pub struct MemEngine {
    map: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl MemEngine {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Engine for MemEngine {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.map.lock().unwrap().get(key).cloned())
    }

    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError> {
        self.map.lock().unwrap().insert(key.to_string(), value.to_vec());
        Ok(())
    }

    fn insert_if_absent(&self, key: &str, value: &[u8]) -> Result<bool, StoreError> {
        let mut map = self.map.lock().unwrap();
        if map.contains_key(key) {
            return Ok(false);
        }
        map.insert(key.to_string(), value.to_vec());
        Ok(true)
    }

    fn scan_prefix(&self, prefix: &str) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let map = self.map.lock().unwrap();
        Ok(map
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect())
    }
}

static REGISTRY: OnceLock<Mutex<HashMap<String, Arc<MemEngine>>>> = OnceLock::new();

/// Engine for `mem://name`. The empty name yields a fresh private engine.
pub fn shared(name: &str) -> Arc<MemEngine> {
    if name.is_empty() {
        return Arc::new(MemEngine::new());
    }
    let registry = REGISTRY.get_or_init(|| Mutex::new(HashMap::new()));
    registry
        .lock()
        .unwrap()
        .entry(name.to_string())
        .or_insert_with(|| Arc::new(MemEngine::new()))
        .clone()
}
