use std::collections::HashMap;
use std::sync::{Arc, RwLock};

/// Backbone outputs keyed by (backbone digest, image id). Reads are
/// concurrent; inserts take the write lock.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<(String, String), Arc<Vec<f64>>>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, backbone_digest: &str, image_id: &str) -> Option<Arc<Vec<f64>>> {
        let map = self.entries.read().unwrap_or_else(|p| p.into_inner());
        map.get(&(backbone_digest.to_string(), image_id.to_string())).cloned()
    }

    pub fn insert(&self, backbone_digest: &str, image_id: &str, embedding: Vec<f64>) -> Arc<Vec<f64>> {
        let mut map = self.entries.write().unwrap_or_else(|p| p.into_inner());
        map.entry((backbone_digest.to_string(), image_id.to_string()))
            .or_insert_with(|| Arc::new(embedding))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
