use super::AnalysisError;

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::DimensionMismatch { a: a.len(), b: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na * nb).sqrt();
    if !(denom.is_finite() && denom > 0.0) {
        return Err(AnalysisError::ZeroVector);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// `(1 + cos) / 2`: orthogonal embeddings score 0.5, identical 1, antipodal 0.
pub fn similarity_score(a: &[f32], b: &[f32]) -> Result<f64, AnalysisError> {
    Ok((1.0 + cosine_similarity(a, b)?) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchor_values() {
        let e0 = [1.0f32, 0.0, 0.0];
        let e1 = [0.0f32, 1.0, 0.0];
        let neg = [-1.0f32, 0.0, 0.0];
        assert!((similarity_score(&e0, &e0).unwrap() - 1.0).abs() < 1e-12);
        assert!((similarity_score(&e0, &e1).unwrap() - 0.5).abs() < 1e-12);
        assert!(similarity_score(&e0, &neg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            similarity_score(&[1.0, 0.0], &[1.0]),
            Err(AnalysisError::DimensionMismatch { a: 2, b: 1 })
        ));
        assert!(matches!(similarity_score(&[0.0, 0.0], &[1.0, 0.0]), Err(AnalysisError::ZeroVector)));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f32..10.0, 8),
            b in proptest::collection::vec(-10.0f32..10.0, 8),
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let ab = similarity_score(&a, &b).unwrap();
            let ba = similarity_score(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((similarity_score(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
