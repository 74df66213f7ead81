//! Cosine-distance entropy and its group forms.
//!
//! "Entropy" here is a semantic dissimilarity, not Shannon entropy:
//! `en_cos(a, b) = 1 - cosine_similarity(a, b)`, ranging over `[0, 2]`.
//! Two group measures build on it:
//!
//! - [`internal_entropy`]: the maximum pairwise distance within a set —
//!   how diverse the set is.
//! - [`external_entropy`]: the distance from an item to its nearest set
//!   member — how novel the item is relative to the set.
//!
//! [`set_entropy`] ranks a candidate against a set of already-tried
//! methods. It is defined as the minimum distance over the tried set,
//! consistent with the "closest existing record" reading of external
//! entropy: a candidate is only as novel as its nearest tried neighbor.
//!
//! All comparisons against the admission threshold tau elsewhere in the
//! crate use `>=` with no epsilon slack; any slack belongs in tau itself.

use crate::embedding::{EmbedError, EmbeddingVector};

#[derive(Debug, thiserror::Error)]
pub enum EntropyError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("internal entropy requires at least two vectors, got {0}")]
    TooFewVectors(usize),
    #[error("external entropy against an empty set is undefined")]
    EmptySet,
}

impl From<EmbedError> for EntropyError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::DimMismatch { expected, actual } => {
                EntropyError::DimMismatch { expected, actual }
            }
            other => unreachable!("cosine similarity only fails on dim mismatch: {other}"),
        }
    }
}

/// Cosine-distance entropy between two vectors: `1 - cos(a, b)`, in `[0, 2]`.
///
/// Symmetric exactly; `en_cos(a, a)` is 0 within 1e-9.
pub fn en_cos(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EntropyError> {
    let sim = a.cosine_similarity(b)?;
    // Clamp fp spill so the [0, 2] contract holds even for exactly
    // identical or antipodal unit vectors.
    Ok((1.0 - sim).clamp(0.0, 2.0))
}

/// Internal group entropy: the maximum pairwise `en_cos` within `set`.
///
/// Monotone nondecreasing as the set grows. Requires at least two members.
pub fn internal_entropy(set: &[EmbeddingVector]) -> Result<f64, EntropyError> {
    if set.len() < 2 {
        return Err(EntropyError::TooFewVectors(set.len()));
    }
    let mut max = 0.0f64;
    for i in 0..set.len() {
        for j in (i + 1)..set.len() {
            let d = en_cos(&set[i], &set[j])?;
            if d > max {
                max = d;
            }
        }
    }
    Ok(max)
}

/// External entropy of `item` against `set`: `en_cos` to the nearest member.
///
/// Monotone nonincreasing as the set grows. Requires a nonempty set.
pub fn external_entropy(
    item: &EmbeddingVector,
    set: &[EmbeddingVector],
) -> Result<f64, EntropyError> {
    if set.is_empty() {
        return Err(EntropyError::EmptySet);
    }
    let mut min = f64::INFINITY;
    for member in set {
        let d = en_cos(item, member)?;
        if d < min {
            min = d;
        }
    }
    Ok(min)
}

/// Entropy of a candidate method relative to the set of tried methods:
/// the minimum `en_cos` over `tried`.
pub fn set_entropy(
    tried: &[EmbeddingVector],
    candidate: &EmbeddingVector,
) -> Result<f64, EntropyError> {
    external_entropy(candidate, tried)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn unit2(angle_deg: f64) -> EmbeddingVector {
        let rad = angle_deg.to_radians();
        EmbeddingVector::new(vec![rad.cos(), rad.sin()]).unwrap()
    }

    #[test]
    fn en_cos_identities() {
        let v = unit2(30.0);
        assert!(en_cos(&v, &v).unwrap().abs() <= 1e-9);
        assert!((en_cos(&unit2(0.0), &unit2(90.0)).unwrap() - 1.0).abs() <= 1e-9);
        assert!((en_cos(&unit2(0.0), &unit2(180.0)).unwrap() - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn en_cos_dim_mismatch() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            en_cos(&a, &b),
            Err(EntropyError::DimMismatch { .. })
        ));
    }

    #[test]
    fn internal_entropy_of_identical_pair_is_zero() {
        let v = unit2(45.0);
        let result = internal_entropy(&[v.clone(), v]).unwrap();
        assert!(result.abs() <= 1e-9);
    }

    #[test]
    fn internal_entropy_picks_the_antipodal_pair() {
        // Pairs: (0, 90) -> 1, (0, 180) -> 2, (90, 180) -> 1.
        let set = [unit2(0.0), unit2(90.0), unit2(180.0)];
        assert!((internal_entropy(&set).unwrap() - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn internal_entropy_requires_two() {
        assert!(matches!(
            internal_entropy(&[unit2(0.0)]),
            Err(EntropyError::TooFewVectors(1))
        ));
        assert!(matches!(
            internal_entropy(&[]),
            Err(EntropyError::TooFewVectors(0))
        ));
    }

    #[test]
    fn external_entropy_of_member_is_zero() {
        let set = [unit2(0.0), unit2(120.0)];
        assert!(external_entropy(&set[0], &set).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn external_entropy_takes_the_nearest_member() {
        // Distances from 90 deg: to 0 deg -> 1.0, to 180 deg -> 1.0; min is 1.0.
        let set = [unit2(0.0), unit2(180.0)];
        let result = external_entropy(&unit2(90.0), &set).unwrap();
        assert!((result - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn external_entropy_empty_set_is_an_error() {
        assert!(matches!(
            external_entropy(&unit2(0.0), &[]),
            Err(EntropyError::EmptySet)
        ));
    }

    #[test]
    fn set_entropy_examples() {
        let r = unit2(180.0);
        assert!(set_entropy(&[r.clone()], &r).unwrap().abs() <= 1e-9);
        assert!((set_entropy(&[unit2(0.0)], &unit2(180.0)).unwrap() - 2.0).abs() <= 1e-9);
        // min(en(0, 180), en(90, 180)) = min(2, 1) = 1.
        let tried = [unit2(0.0), unit2(90.0)];
        assert!((set_entropy(&tried, &unit2(180.0)).unwrap() - 1.0).abs() <= 1e-9);
    }

    fn arb_unit_vec(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
        proptest::collection::vec(-1.0f64..1.0, dim).prop_filter_map("nonzero", |raw| {
            EmbeddingVector::new(raw).ok()
        })
    }

    proptest! {
        #[test]
        fn en_cos_symmetric_and_in_range(a in arb_unit_vec(5), b in arb_unit_vec(5)) {
            let ab = en_cos(&a, &b).unwrap();
            let ba = en_cos(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=2.0).contains(&ab));
        }

        #[test]
        fn monotonicity_under_set_growth(
            set in proptest::collection::vec(arb_unit_vec(4), 2..8),
            extra in arb_unit_vec(4),
            item in arb_unit_vec(4),
        ) {
            let mut grown = set.clone();
            grown.push(extra);
            // Internal entropy never decreases when the set grows.
            prop_assert!(internal_entropy(&grown).unwrap() >= internal_entropy(&set).unwrap());
            // External entropy never increases when the set grows.
            prop_assert!(external_entropy(&item, &grown).unwrap() <= external_entropy(&item, &set).unwrap());
        }

        #[test]
        fn external_entropy_bounded_by_each_member(
            set in proptest::collection::vec(arb_unit_vec(4), 1..8),
            item in arb_unit_vec(4),
        ) {
            let ext = external_entropy(&item, &set).unwrap();
            for member in &set {
                prop_assert!(ext <= en_cos(&item, member).unwrap() + 1e-15);
            }
        }
    }
}
