use alloc::vec::Vec;

use crate::error::{invalid_arg, shape_err, Error, Result};

/// Scores at or above this are classified as class 1 (real).
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Fraction of `scores` whose thresholded class matches `labels`.
pub fn accuracy(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(shape_err!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(invalid_arg!("accuracy of an empty set"));
    }
    let correct = scores.iter().zip(labels).filter(|(s, l)| (**s >= DECISION_THRESHOLD) == **l).count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Accuracy on real (label 1) and generated (label 0) discriminator scores,
/// truncating the larger side to the smaller so the pool is balanced.
pub fn pooled_accuracy(real: &[f64], generated: &[f64]) -> Result<f64> {
    let k = real.len().min(generated.len());
    if k == 0 {
        return Err(invalid_arg!("pooled accuracy needs both classes"));
    }
    let correct = real[..k].iter().filter(|s| **s >= DECISION_THRESHOLD).count()
        + generated[..k].iter().filter(|s| **s < DECISION_THRESHOLD).count();
    Ok(correct as f64 / (2 * k) as f64)
}

/// `Pr(s⁺ > s⁻) + ½ Pr(s⁺ = s⁻)` by the rank-sum statistic with midranks.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(invalid_arg!("ROC-AUC needs both classes, got {} positive and {} negative", pos.len(), neg.len()));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(invalid_arg!("ROC-AUC of NaN scores"));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Percent of the unfiltered distance from chance removed by filtering;
/// perfect filtering gives `+100`.
pub fn gap_closure(acc_filtered: f64, acc_unfiltered: f64) -> Result<f64> {
    let base = (0.5 - acc_unfiltered).abs();
    if base < 1e-12 {
        return Err(Error::UndefinedBaseline);
    }
    Ok(100.0 * (base - (0.5 - acc_filtered).abs()) / base)
}

/// Positions of the `⌊p%·n⌋` smallest scores, ties broken by position,
/// returned in ascending score order.
pub fn filter_by_score(scores: &[f64], percentile: f64) -> Result<Vec<usize>> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(invalid_arg!("percentile {percentile} outside (0, 100]"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid_arg!("cannot filter on NaN scores"));
    }
    let keep = retained_count(scores.len(), percentile);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(keep);
    Ok(order)
}

/// `⌊p·n/100⌋`
pub fn retained_count(n: usize, percentile: f64) -> usize {
    libm::floor(percentile * n as f64 / 100.0 + 1e-9) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.5; 4], &[true, true, false, false]).unwrap(), 0.5);
        let a = accuracy(&[0.9, 0.2, 0.6], &[true, false, false]).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0.1], &[]).is_err());
    }

    #[test]
    fn pooled_accuracy_balances_classes() {
        assert_eq!(pooled_accuracy(&[0.9, 0.9, 0.1, 0.1], &[0.1]).unwrap(), 1.0);
        assert_eq!(pooled_accuracy(&[0.9, 0.1], &[0.9, 0.1]).unwrap(), 0.5);
        assert!(pooled_accuracy(&[], &[0.2]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3, 0.5, 0.5], &[0.5, 0.3, 0.5]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.8, 0.4], &[0.6, 0.3]).unwrap(), 0.75);
        assert!(roc_auc(&[], &[0.1]).is_err());
    }

    fn auc_by_pairs(pos: &[f64], neg: &[f64]) -> f64 {
        let mut s = 0.0;
        for p in pos {
            for n in neg {
                s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn gap_closure_examples() {
        assert!((gap_closure(0.5, 0.75).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(gap_closure(0.7, 0.7).unwrap(), 0.0);
        assert!((gap_closure(0.65, 0.8).unwrap() - 50.0).abs() < 1e-9);
        assert_eq!(gap_closure(0.6, 0.5), Err(Error::UndefinedBaseline));
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter_by_score(&[3.0, 1.0, 4.0, 2.0], 100.0).unwrap().len(), 4);
        assert_eq!(filter_by_score(&[3.0, 1.0, 4.0, 2.0], 50.0).unwrap(), vec![1, 3]);
        assert_eq!(filter_by_score(&[7.0; 6], 50.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(filter_by_score(&[1.0; 2000], 25.0).unwrap().len(), 500);
        assert!(filter_by_score(&[1.0], 0.0).is_err());
        assert!(filter_by_score(&[1.0], 101.0).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count_and_is_rank_invariant(
            pos in proptest::collection::vec(0u8..20, 1..12),
            neg in proptest::collection::vec(0u8..20, 1..12),
        ) {
            let p: Vec<f64> = pos.iter().map(|&v| v as f64).collect();
            let n: Vec<f64> = neg.iter().map(|&v| v as f64).collect();
            let auc = roc_auc(&p, &n).unwrap();
            prop_assert!((auc - auc_by_pairs(&p, &n)).abs() < 1e-12);
            let tp: Vec<f64> = p.iter().map(|v| libm::exp(0.3 * v) - 4.0).collect();
            let tn: Vec<f64> = n.iter().map(|v| libm::exp(0.3 * v) - 4.0).collect();
            prop_assert!((roc_auc(&tp, &tn).unwrap() - auc).abs() < 1e-12);
        }

        #[test]
        fn gap_closure_identities(a in 0.0f64..1.0) {
            prop_assume!((a - 0.5).abs() > 1e-6);
            prop_assert!((gap_closure(0.5, a).unwrap() - 100.0).abs() < 1e-9);
            prop_assert_eq!(gap_closure(a, a).unwrap(), 0.0);
        }

        #[test]
        fn filtering_is_idempotent(scores in proptest::collection::vec(0u8..10, 1..40), p in 1.0f64..100.0) {
            let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
            let kept = filter_by_score(&s, p).unwrap();
            prop_assert_eq!(kept.len(), retained_count(s.len(), p));
            let sub: Vec<f64> = kept.iter().map(|&i| s[i]).collect();
            let again = filter_by_score(&sub, 100.0).unwrap();
            prop_assert_eq!(again, (0..sub.len()).collect::<Vec<_>>());
            if let (Some(&worst), Some(best_dropped)) =
                (kept.last(), (0..s.len()).filter(|i| !kept.contains(i)).map(|i| s[i]).reduce(f64::min))
            {
                prop_assert!(s[worst] <= best_dropped);
            }
        }
    }
}
