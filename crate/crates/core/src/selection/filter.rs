use serde::{Deserialize, Serialize};

/// Result of splitting prompts by confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// Indices into the input, ascending.
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
    /// Mean of the lower and the upper cluster. Equal when nothing was cut.
    pub cluster_means: [f64; 2],
    /// Smallest kept score, when a split happened.
    pub threshold: Option<f64>,
}

/// Optimal two-cluster k-means threshold on the real line.
///
/// Scans every boundary between distinct sorted values and returns the lower
/// bound of the upper cluster for the split with the least within-cluster
/// sum of squares (the lowest such boundary on exact ties). `None` if fewer
/// than two distinct values exist.
pub fn two_means_threshold(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let p = sorted.len();
    if p < 2 || sorted[0] == sorted[p - 1] {
        return None;
    }
    // Centering keeps the prefix-sum form well conditioned.
    let center = sorted.iter().sum::<f64>() / p as f64;
    let mut sum = vec![0.0; p + 1];
    let mut sum_sq = vec![0.0; p + 1];
    for (i, v) in sorted.iter().enumerate() {
        let x = v - center;
        sum[i + 1] = sum[i] + x;
        sum_sq[i + 1] = sum_sq[i] + x * x;
    }
    let sse = |lo: usize, hi: usize| {
        let n = (hi - lo) as f64;
        let s = sum[hi] - sum[lo];
        (sum_sq[hi] - sum_sq[lo]) - s * s / n
    };

    let mut best: Option<(f64, usize)> = None;
    for split in 1..p {
        if sorted[split - 1] == sorted[split] {
            continue;
        }
        let cost = sse(0, split) + sse(split, p);
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, split));
        }
    }
    best.map(|(_, split)| sorted[split])
}

/// Drops the low-confidence cluster. With two or fewer prompts, or when all
/// scores coincide, every prompt is kept.
pub fn filter_prompts(confidences: &[f64]) -> FilterOutcome {
    let mean = |idx: &[usize]| idx.iter().map(|&i| confidences[i]).sum::<f64>() / idx.len() as f64;
    let all: Vec<usize> = (0..confidences.len()).collect();
    let threshold = if confidences.len() <= 2 {
        None
    } else {
        two_means_threshold(confidences)
    };
    match threshold {
        None => {
            let m = if all.is_empty() { 0.0 } else { mean(&all) };
            FilterOutcome {
                kept: all,
                discarded: Vec::new(),
                cluster_means: [m, m],
                threshold: None,
            }
        }
        Some(t) => {
            let (kept, discarded): (Vec<usize>, Vec<usize>) = all.into_iter().partition(|&i| confidences[i] >= t);
            FilterOutcome {
                cluster_means: [mean(&discarded), mean(&kept)],
                kept,
                discarded,
                threshold: Some(t),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separates_two_obvious_groups() {
        let out = filter_prompts(&[0.10, 0.12, 0.90, 0.95]);
        assert_eq!(out.kept, vec![2, 3]);
        assert_eq!(out.discarded, vec![0, 1]);
        assert!((out.cluster_means[0] - 0.11).abs() < 1e-12);
        assert!((out.cluster_means[1] - 0.925).abs() < 1e-12);
    }

    #[test]
    fn identical_scores_keep_everything() {
        let out = filter_prompts(&[0.5, 0.5, 0.5]);
        assert_eq!(out.kept, vec![0, 1, 2]);
        assert!(out.discarded.is_empty());
        assert_eq!(out.threshold, None);
    }

    #[test]
    fn tiny_inputs_keep_everything() {
        assert_eq!(filter_prompts(&[0.3]).kept, vec![0]);
        assert_eq!(filter_prompts(&[0.1, 0.9]).kept, vec![0, 1]);
    }

    #[test]
    fn duplicated_values_stay_together() {
        let out = filter_prompts(&[1.0, 1.0, 5.0, 5.0, 5.0]);
        assert_eq!(out.kept, vec![2, 3, 4]);
        let out = filter_prompts(&[1.0, 2.0, 2.0, 9.0]);
        assert_eq!(out.kept, vec![3]);
    }

    /// Every one of the 2^p - 2 bipartitions, scored directly.
    fn best_bipartition(values: &[f64]) -> Vec<usize> {
        let p = values.len();
        let sse = |members: &[f64]| {
            let m = members.iter().sum::<f64>() / members.len() as f64;
            members.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        };
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 1..(1u32 << p) - 1 {
            let (a, b): (Vec<usize>, Vec<usize>) = (0..p).partition(|&i| mask & (1 << i) != 0);
            let va: Vec<f64> = a.iter().map(|&i| values[i]).collect();
            let vb: Vec<f64> = b.iter().map(|&i| values[i]).collect();
            let cost = sse(&va) + sse(&vb);
            if cost < best.0 - 1e-12 {
                let upper = if va.iter().sum::<f64>() / va.len() as f64 > vb.iter().sum::<f64>() / vb.len() as f64 {
                    a
                } else {
                    b
                };
                best = (cost, upper);
            }
        }
        best.1
    }

    proptest! {
        #[test]
        fn contiguous_split_is_globally_optimal(values in proptest::collection::vec(0.0f64..100.0, 3..11)) {
            prop_assert_eq!(filter_prompts(&values).kept, best_bipartition(&values));
        }

        #[test]
        fn kept_and_discarded_do_not_interleave(values in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let out = filter_prompts(&values);
            prop_assert!(!out.kept.is_empty());
            prop_assert_eq!(out.kept.len() + out.discarded.len(), values.len());
            let min_kept = out.kept.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
            let max_disc = out.discarded.iter().map(|&i| values[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_kept > max_disc);
        }
    }
}
