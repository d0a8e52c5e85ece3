//! Simulated approximate cache: exact nearest-neighbor lookup over stored
//! prompt embeddings, and the similarity-to-K mapping that decides how many
//! denoising steps a prompt can safely skip.

use serde::{Deserialize, Serialize};

use crate::domain::KLevel;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    id: u64,
    embedding: Vec<f64>,
    last_used: u64,
}

/// Bounded embedding store with LRU eviction.
#[derive(Debug, Clone)]
pub struct CacheStore {
    entries: Vec<Entry>,
    capacity: usize,
    clock: u64,
    next_id: u64,
}

impl CacheStore {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "cache capacity must be positive");
        Self {
            entries: Vec::new(),
            capacity,
            clock: 0,
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    /// Highest cosine similarity over all entries and the entry holding it.
    /// Exact scan; ties go to the earlier-stored slot.
    pub fn nearest(&self, embedding: &[f64]) -> Option<(f64, u64)> {
        let mut best: Option<(f64, u64)> = None;
        for e in &self.entries {
            let sim = dot(&e.embedding, embedding);
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, e.id));
            }
        }
        best.map(|(s, id)| (s.clamp(-1.0, 1.0), id))
    }

    /// Marks an entry as recently used.
    pub fn touch(&mut self, id: u64) {
        self.clock += 1;
        if let Some(e) = self.entries.iter_mut().find(|e| e.id == id) {
            e.last_used = self.clock;
        }
    }

    /// Stores `embedding`, evicting the least recently used entry when full.
    pub fn insert(&mut self, embedding: Vec<f64>) -> u64 {
        self.clock += 1;
        let id = self.next_id;
        self.next_id += 1;
        self.entries.push(Entry {
            id,
            embedding,
            last_used: self.clock,
        });
        if self.entries.len() > self.capacity {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(i, _)| i)
                .expect("non-empty");
            self.entries.swap_remove(victim);
        }
        id
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ── Similarity bands ────────────────────────────────────────────────────────

/// Prompts whose nearest-cache similarity is at least `min_similarity` may
/// skip `k` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub min_similarity: f64,
    pub k: KLevel,
}

/// Ordered similarity thresholds. Below the first threshold, and on a cache
/// miss, prompts run the full (K=0) diffusion process.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBands {
    bands: Vec<Band>,
}

impl Default for SimilarityBands {
    fn default() -> Self {
        let table = [(0.65, 5), (0.72, 10), (0.79, 15), (0.86, 20), (0.93, 25)];
        Self {
            bands: table
                .iter()
                .map(|&(s, k)| Band {
                    min_similarity: s,
                    k: KLevel(k),
                })
                .collect(),
        }
    }
}

impl SimilarityBands {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        for w in bands.windows(2) {
            if w[1].min_similarity <= w[0].min_similarity {
                return Err(Error::InvalidGrid("band thresholds must be strictly increasing".into()));
            }
            if w[1].k < w[0].k {
                return Err(Error::InvalidGrid("band K must be non-decreasing in similarity".into()));
            }
        }
        if bands.iter().any(|b| !b.min_similarity.is_finite()) {
            return Err(Error::InvalidGrid("band thresholds must be finite".into()));
        }
        Ok(Self { bands })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }
}

/// Maps a nearest-neighbor similarity (or a miss) to the prompt's optimal K.
pub fn select_optimal_k(similarity: Option<f64>, bands: &SimilarityBands) -> KLevel {
    let Some(sim) = similarity else {
        return KLevel::VANILLA;
    };
    bands
        .bands
        .iter()
        .rev()
        .find(|b| sim >= b.min_similarity)
        .map_or(KLevel::VANILLA, |b| b.k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::normalize;

    fn unit(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn empty_store_has_no_neighbor() {
        assert!(CacheStore::new(4).nearest(&unit(4, 0)).is_none());
    }

    #[test]
    fn inserted_vector_is_its_own_nearest() {
        let mut c = CacheStore::new(4);
        let v = normalize(vec![0.3, -0.2, 0.9, 0.1]);
        let id = c.insert(v.clone());
        let (sim, hit) = c.nearest(&v).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
        assert_eq!(hit, id);
    }

    #[test]
    fn diagonal_query_is_equidistant() {
        let mut c = CacheStore::new(4);
        c.insert(unit(16, 0));
        c.insert(unit(16, 1));
        let mut q = unit(16, 0);
        q[1] = 1.0;
        let (sim, _) = c.nearest(&normalize(q)).unwrap();
        assert!((sim - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn lru_evicts_oldest_insert() {
        let mut c = CacheStore::new(2);
        let a = c.insert(unit(3, 0));
        let b = c.insert(unit(3, 1));
        let cc = c.insert(unit(3, 2));
        assert!(!c.contains(a));
        assert!(c.contains(b) && c.contains(cc));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn touch_protects_from_eviction() {
        let mut c = CacheStore::new(2);
        let a = c.insert(unit(3, 0));
        let b = c.insert(unit(3, 1));
        c.touch(a);
        c.insert(unit(3, 2));
        assert!(c.contains(a));
        assert!(!c.contains(b));
    }

    #[test]
    fn default_band_lookup() {
        let b = SimilarityBands::default();
        assert_eq!(select_optimal_k(Some(0.95), &b), KLevel(25));
        assert_eq!(select_optimal_k(Some(0.93), &b), KLevel(25));
        assert_eq!(select_optimal_k(Some(0.80), &b), KLevel(15));
        assert_eq!(select_optimal_k(Some(0.65), &b), KLevel(5));
        assert_eq!(select_optimal_k(Some(0.30), &b), KLevel(0));
        assert_eq!(select_optimal_k(None, &b), KLevel(0));
    }

    #[test]
    fn bands_must_be_ordered() {
        let bad = vec![
            Band {
                min_similarity: 0.9,
                k: KLevel(10),
            },
            Band {
                min_similarity: 0.8,
                k: KLevel(20),
            },
        ];
        assert!(SimilarityBands::new(bad).is_err());
        let bad_k = vec![
            Band {
                min_similarity: 0.8,
                k: KLevel(20),
            },
            Band {
                min_similarity: 0.9,
                k: KLevel(10),
            },
        ];
        assert!(SimilarityBands::new(bad_k).is_err());
    }
}
