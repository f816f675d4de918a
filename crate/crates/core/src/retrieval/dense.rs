use super::RetrievalError;
use crate::providers::EmbeddingVector;

/// `dot(u, v) / (|u| |v|)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_sim(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if u.dim() != v.dim() {
        return Err(RetrievalError::DimensionMismatch(u.dim(), v.dim()));
    }
    let dot: f64 = u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
    let nu = u.values().iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.values().iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}
