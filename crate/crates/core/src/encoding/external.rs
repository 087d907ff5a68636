use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Embedding, EncodeError, Encoder};
use crate::http::JsonClient;

#[derive(Serialize)]
struct EncodeRequest<'a> {
    texts: &'a [String],
    image_refs: &'a [Option<String>],
}

#[derive(Deserialize)]
struct EncodeResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct Meta {
    dim: usize,
}

/// Client for a remote multimodal encoder.
///
/// `GET {base}/meta` declares the dimension; `POST {base}/encode` with
/// `{"texts","image_refs"}` returns `{"vectors"}`. Returned vectors are normalized locally.
#[derive(Debug, Clone)]
pub struct ExternalEncoder {
    base: String,
    dim: usize,
    client: JsonClient,
}

impl ExternalEncoder {
    pub fn connect(
        base: &str,
        timeout: Duration,
        max_retries: u32,
        credential_env: Option<&str>,
    ) -> Result<Self, EncodeError> {
        let client = JsonClient::new(timeout, max_retries).with_credential_env(credential_env);
        let base = base.trim_end_matches('/').to_string();
        let meta: Meta = client
            .get(&format!("{base}/meta"))
            .map_err(|e| EncodeError::EncoderUnavailable(e.to_string()))?;
        if meta.dim == 0 {
            return Err(EncodeError::InvalidVector(
                "encoder declares dimension 0".into(),
            ));
        }
        Ok(Self {
            base,
            dim: meta.dim,
            client,
        })
    }
}

impl Encoder for ExternalEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(
        &self,
        texts: &[String],
        image_refs: &[Option<String>],
    ) -> Result<Vec<Embedding>, EncodeError> {
        let resp: EncodeResponse = self
            .client
            .post(
                &format!("{}/encode", self.base),
                &EncodeRequest { texts, image_refs },
            )
            .map_err(|e| EncodeError::EncoderUnavailable(e.to_string()))?;
        if resp.vectors.len() != texts.len() {
            return Err(EncodeError::InvalidVector(format!(
                "expected {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EncodeError::DimensionMismatch {
                        left: self.dim,
                        right: v.len(),
                    });
                }
                Embedding::normalized(v)
            })
            .collect()
    }
}
