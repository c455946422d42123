//! Cosine similarity between Wi-Fi fingerprints.
//!
//! The numerator only runs over MACs seen in both fingerprints, while each
//! norm runs over the fingerprint's full MAC set. Two fingerprints with the
//! same readings on their common APs therefore score below 1 as soon as either
//! side has an AP the other lacks. RSS enters as raw signed dBm.

use std::fmt;

use thiserror::Error;

use crate::model::Fingerprint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("fingerprint has no entries")]
    EmptyFingerprint,
    #[error("need at least 2 fingerprints, got {0}")]
    TooFewFingerprints(usize),
    #[error("similarity score {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Cosine similarity score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub const ZERO: SimilarityScore = SimilarityScore(0.0);
    pub const ONE: SimilarityScore = SimilarityScore(1.0);

    pub fn new(value: f64) -> Result<Self, SimilarityError> {
        if (0.0..=1.0).contains(&value) {
            Ok(SimilarityScore(value))
        } else {
            Err(SimilarityError::OutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for SimilarityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Sum of `r1 * r2` over the MACs present in both fingerprints.
pub fn common_dot(f1: &Fingerprint, f2: &Fingerprint) -> f64 {
    // Both maps are sorted by MAC; walk them together.
    let mut a = f1.iter().peekable();
    let mut b = f2.iter().peekable();
    let mut sum = 0.0;
    while let (Some(&(ma, ra)), Some(&(mb, rb))) = (a.peek(), b.peek()) {
        match ma.cmp(mb) {
            std::cmp::Ordering::Less => {
                a.next();
            }
            std::cmp::Ordering::Greater => {
                b.next();
            }
            std::cmp::Ordering::Equal => {
                sum += ra * rb;
                a.next();
                b.next();
            }
        }
    }
    sum
}

/// Sum of squared RSS over all of the fingerprint's MACs.
pub fn self_dot(f: &Fingerprint) -> f64 {
    f.iter().map(|(_, r)| r * r).sum()
}

pub fn cosine_similarity(f1: &Fingerprint, f2: &Fingerprint) -> Result<SimilarityScore, SimilarityError> {
    if f1.is_empty() || f2.is_empty() {
        return Err(SimilarityError::EmptyFingerprint);
    }
    Ok(score_from_parts(common_dot(f1, f2), self_dot(f1), self_dot(f2)))
}

/// `y / (sqrt(d1) * sqrt(d2))`, evaluated as `y / sqrt(d1 * d2)` so that
/// identical fingerprints land on exactly 1.0.
pub(crate) fn score_from_parts(y: f64, d1: f64, d2: f64) -> SimilarityScore {
    let denom = (d1 * d2).sqrt();
    if denom == 0.0 {
        return SimilarityScore::ZERO;
    }
    SimilarityScore((y / denom).clamp(0.0, 1.0))
}

/// Fingerprint with its self dot product cached, for repeated comparisons.
#[derive(Debug, Clone)]
pub struct NormedFingerprint<'a> {
    fingerprint: &'a Fingerprint,
    self_dot: f64,
}

impl<'a> NormedFingerprint<'a> {
    pub fn new(fingerprint: &'a Fingerprint) -> Self {
        NormedFingerprint {
            fingerprint,
            self_dot: self_dot(fingerprint),
        }
    }

    pub fn similarity(&self, other: &NormedFingerprint<'_>) -> SimilarityScore {
        score_from_parts(
            common_dot(self.fingerprint, other.fingerprint),
            self.self_dot,
            other.self_dot,
        )
    }
}

/// One score per unordered pair `(i, j)` with `i < j`, sorted by `(i, j)`.
pub fn pairwise_similarities(fps: &[Fingerprint]) -> Result<Vec<(usize, usize, SimilarityScore)>, SimilarityError> {
    if fps.len() < 2 {
        return Err(SimilarityError::TooFewFingerprints(fps.len()));
    }
    let normed: Vec<NormedFingerprint<'_>> = fps.iter().map(NormedFingerprint::new).collect();
    let mut out = Vec::with_capacity(fps.len() * (fps.len() - 1) / 2);
    for i in 0..normed.len() {
        for j in (i + 1)..normed.len() {
            out.push((i, j, normed[i].similarity(&normed[j])));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MacAddress, Rssi, ScanResult};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn mac(b: u8) -> MacAddress {
        MacAddress::from_octets([0x02, 0, 0, 0, 0, b])
    }

    fn fp(pairs: &[(u8, f64)]) -> Fingerprint {
        Fingerprint::from_means(pairs.iter().map(|&(m, r)| (mac(m), r))).unwrap()
    }

    const A: u8 = 1;
    const B: u8 = 2;
    const C: u8 = 3;

    #[test]
    fn common_dot_examples() {
        assert_eq!(
            common_dot(&fp(&[(A, -40.0), (B, -80.0)]), &fp(&[(A, -40.0), (C, -80.0)])),
            1600.0
        );
        assert_eq!(common_dot(&fp(&[(A, -50.0)]), &fp(&[(B, -50.0)])), 0.0);
        assert_eq!(
            common_dot(&fp(&[(A, -50.0), (B, -60.0)]), &fp(&[(A, -50.0), (B, -60.0)])),
            6100.0
        );
    }

    #[test]
    fn self_dot_examples() {
        assert_eq!(self_dot(&fp(&[(A, -40.0), (B, -80.0)])), 8000.0);
        assert_eq!(self_dot(&fp(&[(A, -1.0)])), 1.0);
        assert_eq!(self_dot(&fp(&[(A, -50.0), (B, -60.0)])), 6100.0);
    }

    #[test]
    fn cosine_examples() {
        let f = fp(&[(A, -50.0), (B, -60.0)]);
        assert_eq!(cosine_similarity(&f, &f).unwrap().value(), 1.0);
        let c = cosine_similarity(&fp(&[(A, -40.0), (B, -80.0)]), &fp(&[(A, -40.0), (C, -80.0)])).unwrap();
        assert_eq!(c.value(), 0.2);
        assert_eq!(
            cosine_similarity(&fp(&[(A, -50.0)]), &fp(&[(B, -50.0)]))
                .unwrap()
                .value(),
            0.0
        );
    }

    #[test]
    fn cosine_below_one_with_extra_mac() {
        let f1 = fp(&[(A, -50.0), (B, -60.0)]);
        let f2 = fp(&[(A, -50.0), (B, -60.0), (C, -90.0)]);
        assert!(cosine_similarity(&f1, &f2).unwrap().value() < 1.0);
    }

    #[test]
    fn pairwise_counts() {
        let fps: Vec<Fingerprint> = (0..41u8).map(|i| fp(&[(i, -50.0), (200, -60.0)])).collect();
        assert_eq!(pairwise_similarities(&fps).unwrap().len(), 820);
        assert_eq!(pairwise_similarities(&fps[..2]).unwrap().len(), 1);
        // C(5, 2) evaluated as 5! / (2! 3!) = 120 / 12
        assert_eq!(pairwise_similarities(&fps[..5]).unwrap().len(), 120 / (2 * 6));
        assert_eq!(
            pairwise_similarities(&fps[..1]),
            Err(SimilarityError::TooFewFingerprints(1))
        );
        let pairs = pairwise_similarities(&fps[..5]).unwrap();
        let idx: Vec<(usize, usize)> = pairs.iter().map(|&(i, j, _)| (i, j)).collect();
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(idx, sorted);
        assert!(idx.iter().all(|(i, j)| i < j));
    }

    #[test]
    fn works_on_single_scan_fingerprints() {
        let s = ScanResult::new(
            0,
            [(mac(A), Rssi::new(-40).unwrap()), (mac(B), Rssi::new(-80).unwrap())],
        );
        let f = Fingerprint::from_scan(&s).unwrap();
        assert_eq!(cosine_similarity(&f, &f).unwrap(), SimilarityScore::ONE);
    }

    /// Direct transcription of the score with hash maps and explicit loops.
    fn naive(f1: &[(u8, f64)], f2: &[(u8, f64)]) -> f64 {
        let m1: HashMap<u8, f64> = f1.iter().copied().collect();
        let m2: HashMap<u8, f64> = f2.iter().copied().collect();
        let mut y = 0.0;
        for (k, r1) in &m1 {
            if let Some(r2) = m2.get(k) {
                y += r1 * r2;
            }
        }
        let mut d1 = 0.0;
        for r in m1.values() {
            d1 += r * r;
        }
        let mut d2 = 0.0;
        for r in m2.values() {
            d2 += r * r;
        }
        y / (d1.sqrt() * d2.sqrt())
    }

    fn fp_strategy() -> impl Strategy<Value = Vec<(u8, f64)>> {
        prop::collection::btree_map(0u8..24, -100.0f64..-1.0, 1..16).prop_map(|m| m.into_iter().collect())
    }

    proptest! {
        #[test]
        fn symmetric_and_in_range(a in fp_strategy(), b in fp_strategy()) {
            let (fa, fb) = (fp(&a), fp(&b));
            let ab = cosine_similarity(&fa, &fb).unwrap().value();
            let ba = cosine_similarity(&fb, &fa).unwrap().value();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn matches_naive(a in fp_strategy(), b in fp_strategy()) {
            let got = cosine_similarity(&fp(&a), &fp(&b)).unwrap().value();
            prop_assert!((got - naive(&a, &b)).abs() <= 1e-12);
        }

        #[test]
        fn positive_scale_invariant(a in fp_strategy(), b in fp_strategy(), k in 0.01f64..100.0) {
            let scaled: Vec<(u8, f64)> = a.iter().map(|&(m, r)| (m, r * k)).collect();
            let base = cosine_similarity(&fp(&a), &fp(&b)).unwrap().value();
            let after = cosine_similarity(&fp(&scaled), &fp(&b)).unwrap().value();
            prop_assert!((base - after).abs() <= 1e-12);
        }

        #[test]
        fn identity_for_proportional_same_macs(a in fp_strategy(), k in 0.5f64..2.0) {
            let scaled: Vec<(u8, f64)> = a.iter().map(|&(m, r)| (m, r * k)).collect();
            let c = cosine_similarity(&fp(&a), &fp(&scaled)).unwrap().value();
            prop_assert!((c - 1.0).abs() <= 1e-12);
        }
    }
}
