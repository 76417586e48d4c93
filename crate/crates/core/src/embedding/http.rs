use serde_json::json;

use super::{EmbeddingError, EmbeddingProvider};
use crate::oracle::Transport;

/// Embeddings from a JSON endpoint speaking the common
/// `{"model", "input": [...]}` to `{"data": [{"embedding": [...]}]}` shape.
pub struct HttpEmbeddingProvider {
    transport: Box<dyn Transport>,
    path: String,
    model: String,
    dim: usize,
}

impl HttpEmbeddingProvider {
    pub fn new(transport: Box<dyn Transport>, model: impl Into<String>, dim: usize) -> Self {
        Self {
            transport,
            path: "/v1/embeddings".into(),
            model: model.into(),
            dim,
        }
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.path = path.into();
        self
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> String {
        format!("http-{}-d{}", self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let body = json!({"model": self.model, "input": texts});
        let response = self
            .transport
            .post(&self.path, &body)
            .map_err(|e| EmbeddingError::Provider(e.to_string()))?;
        let data = response["data"]
            .as_array()
            .ok_or_else(|| EmbeddingError::Provider("response has no `data` array".into()))?;
        data.iter()
            .map(|item| {
                item["embedding"]
                    .as_array()
                    .ok_or_else(|| EmbeddingError::Provider("item has no `embedding`".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .map(|x| x as f32)
                            .ok_or_else(|| EmbeddingError::Provider("non-numeric component".into()))
                    })
                    .collect()
            })
            .collect()
    }
}
