use super::{EmbeddingError, EmbeddingProvider};
use crate::oracle::stable_hash;

/// Offline embedder: signed feature hashing of character n-grams into `d`
/// buckets, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dim: usize,
    ngram: usize,
}

impl HashingProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "embedding dimension must be at least 2");
        Self { dim, ngram: 3 }
    }

    pub fn with_ngram(mut self, n: usize) -> Self {
        assert!(n >= 1);
        self.ngram = n;
        self
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f64; self.dim];
        let lowered = text.to_lowercase();
        for word in lowered.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            if padded.len() < self.ngram {
                self.add(&mut v, &padded.iter().collect::<String>());
                continue;
            }
            for gram in padded.windows(self.ngram) {
                self.add(&mut v, &gram.iter().collect::<String>());
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // empty text: a fixed unit vector keeps every row embeddable
            let mut e = vec![0.0f32; self.dim];
            e[0] = 1.0;
            return e;
        }
        v.iter().map(|x| (x / norm) as f32).collect()
    }

    fn add(&self, v: &mut [f64], gram: &str) {
        let h = stable_hash(&[gram.as_bytes()]);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }
}

impl EmbeddingProvider for HashingProvider {
    fn id(&self) -> String {
        format!("hashing-{}gram-d{}", self.ngram, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}
