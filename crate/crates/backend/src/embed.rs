use std::path::PathBuf;

use futures::stream::{self, StreamExt};
use sig_core::embedding::{EmbeddingError, DEFAULT_DIM};
use sig_core::EmbeddingMatrix;

use crate::client::BackendClient;
use crate::orchestrator::{wait_for_backend, RetryPolicy};
use crate::BackendError;

/// Embeds `(image_id, path)` pairs through `POST /v1/embed`, keeping input
/// order. Every response must have the dimension of the first.
pub async fn embed_via_service(
    images: &[(String, PathBuf)],
    client: &BackendClient,
    concurrency: usize,
    health_retry: &RetryPolicy,
) -> Result<EmbeddingMatrix, BackendError> {
    if concurrency == 0 {
        return Err(BackendError::InvalidOptions(vec!["concurrency must be positive".into()]));
    }
    let service_model = wait_for_backend(client, health_retry).await?;
    let mut responses = stream::iter(images)
        .map(|(image_id, path)| async move {
            let bytes = tokio::fs::read(path).await.map_err(|source| BackendError::Io {
                path: path.clone(),
                source,
            })?;
            let resp = client.embed(&bytes).await?;
            Ok::<_, BackendError>((image_id, resp))
        })
        .buffered(concurrency);

    let mut matrix: Option<EmbeddingMatrix> = None;
    while let Some(item) = responses.next().await {
        let (image_id, resp) = item?;
        let m = matrix.get_or_insert_with(|| EmbeddingMatrix::new(resp.dim, resp.model_id.clone()));
        if resp.dim != m.dim() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: m.dim(),
                got: resp.dim,
                image_id: Some(image_id.clone()),
            }
            .into());
        }
        m.push(image_id.clone(), &resp.vector)?;
    }
    Ok(matrix.unwrap_or_else(|| EmbeddingMatrix::new(DEFAULT_DIM, service_model)))
}
