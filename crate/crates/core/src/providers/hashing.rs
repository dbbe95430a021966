use super::{EmbeddingProvider, EmbeddingVector, ProviderError};

pub const HASHING_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Offline embedder: character 3-grams of the lowercased, whitespace-collapsed
/// text (padded with one space on each side) are hashed into a fixed number
/// of buckets and the count vector is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: HASHING_DIM }
    }
}

impl HashingEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bucket index of every 3-gram, in text order.
    pub fn buckets(&self, text: &str) -> Vec<usize> {
        let norm = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
        let chars: Vec<char> = format!(" {norm} ").chars().collect();
        chars
            .windows(3)
            .map(|w| {
                let gram: String = w.iter().collect();
                (fnv1a(gram.as_bytes()) % self.dim as u64) as usize
            })
            .collect()
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0; self.dim];
        for b in self.buckets(text) {
            v[b] += 1.0;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        EmbeddingVector { values: v }
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("texts must be non-empty".into()));
        }
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}
