//! Dynamic time warping over voiced pitch contours.
//!
//! Unvoiced frames are dropped before alignment; the local cost is the
//! absolute F0 difference and the allowed steps are insert, delete, and
//! diagonal. The reported distance is the optimal path's total cost divided
//! by its length in cells; among equal-cost paths the shortest is used, which
//! makes the normalization deterministic and symmetric.

use super::{AudioMetricError, PitchContour};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwOutcome {
    /// Total accumulated cost of the optimal path.
    pub cost: f64,
    /// Number of cells on that path (shortest among equal-cost paths).
    pub path_len: usize,
    /// cost / path_len.
    pub normalized: f64,
}

/// Align two raw value sequences. Errors when either side is empty.
pub fn dtw_alignment(a: &[f64], b: &[f64]) -> Result<DtwOutcome, AudioMetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(AudioMetricError::NoVoicedFrames);
    }
    let (m, n) = (a.len(), b.len());
    let idx = |i: usize, j: usize| i * n + j;
    let mut cost = vec![0.0f64; m * n];
    let mut plen = vec![0u32; m * n];

    for i in 0..m {
        for j in 0..n {
            let d = (a[i] - b[j]).abs();
            if i == 0 && j == 0 {
                cost[0] = d;
                plen[0] = 1;
                continue;
            }
            let mut best_c = f64::INFINITY;
            let mut best_l = u32::MAX;
            let mut consider = |c: f64, l: u32| {
                if c < best_c || (c == best_c && l < best_l) {
                    best_c = c;
                    best_l = l;
                }
            };
            if i > 0 {
                consider(cost[idx(i - 1, j)], plen[idx(i - 1, j)]);
            }
            if j > 0 {
                consider(cost[idx(i, j - 1)], plen[idx(i, j - 1)]);
            }
            if i > 0 && j > 0 {
                consider(cost[idx(i - 1, j - 1)], plen[idx(i - 1, j - 1)]);
            }
            cost[idx(i, j)] = best_c + d;
            plen[idx(i, j)] = best_l + 1;
        }
    }

    let total = cost[idx(m - 1, n - 1)];
    let path_len = plen[idx(m - 1, n - 1)] as usize;
    Ok(DtwOutcome {
        cost: total,
        path_len,
        normalized: total / path_len as f64,
    })
}

/// Normalized DTW distance between the voiced parts of two contours. Errors
/// when either contour has no voiced frames.
pub fn dtw_distance(a: &PitchContour, b: &PitchContour) -> Result<f64, AudioMetricError> {
    if (a.frame_hop_s - b.frame_hop_s).abs() > 1e-9 {
        log::warn!(
            "comparing contours with different hops ({} vs {} s)",
            a.frame_hop_s,
            b.frame_hop_s
        );
    }
    let va = a.voiced();
    let vb = b.voiced();
    Ok(dtw_alignment(&va, &vb)?.normalized)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contour(f0: &[f64]) -> PitchContour {
        PitchContour {
            f0_hz: f0.to_vec(),
            frame_hop_s: 0.01,
        }
    }

    /// Independent oracle: enumerate every monotone path, track (cost, len),
    /// and keep the lexicographic minimum.
    fn brute_force(a: &[f64], b: &[f64]) -> (f64, usize) {
        fn rec(
            a: &[f64],
            b: &[f64],
            i: usize,
            j: usize,
            cost: f64,
            len: usize,
            best: &mut (f64, usize),
        ) {
            let cost = cost + (a[i] - b[j]).abs();
            let len = len + 1;
            if i == a.len() - 1 && j == b.len() - 1 {
                if cost < best.0 || (cost == best.0 && len < best.1) {
                    *best = (cost, len);
                }
                return;
            }
            if i + 1 < a.len() {
                rec(a, b, i + 1, j, cost, len, best);
            }
            if j + 1 < b.len() {
                rec(a, b, i, j + 1, cost, len, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                rec(a, b, i + 1, j + 1, cost, len, best);
            }
        }
        let mut best = (f64::INFINITY, usize::MAX);
        rec(a, b, 0, 0, 0.0, 0, &mut best);
        best
    }

    #[test]
    fn single_frames_differ_by_their_gap() {
        let out = dtw_alignment(&[100.0], &[103.0]).unwrap();
        assert_eq!(out.cost, 3.0);
        assert_eq!(out.path_len, 1);
        assert_eq!(out.normalized, 3.0);
    }

    #[test]
    fn unvoiced_frames_are_dropped_before_alignment() {
        // [0, 1, 3] aligns as [1, 3]: total cost 1 over a 3-cell path.
        let d = dtw_distance(&contour(&[0.0, 1.0, 3.0]), &contour(&[1.0, 2.0, 3.0])).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-12, "distance was {d}");
    }

    #[test]
    fn self_distance_is_zero() {
        for seq in [vec![220.0], vec![1.0, 2.0, 2.0, 1.0], vec![5.0; 40]] {
            let out = dtw_alignment(&seq, &seq).unwrap();
            assert_eq!(out.cost, 0.0);
            assert_eq!(out.path_len, seq.len(), "diagonal is the shortest");
            assert_eq!(out.normalized, 0.0);
        }
    }

    #[test]
    fn all_unvoiced_is_an_error() {
        let silent = contour(&[0.0, 0.0]);
        let tone = contour(&[100.0]);
        assert!(matches!(
            dtw_distance(&silent, &tone),
            Err(AudioMetricError::NoVoicedFrames)
        ));
        assert!(matches!(
            dtw_alignment(&[], &[1.0]),
            Err(AudioMetricError::NoVoicedFrames)
        ));
    }

    #[test]
    fn dp_matches_brute_force_on_small_pairs() {
        // Exhaustive over lengths <= 3, values {0, 1, 2} used as voiced values.
        let values = [0.0, 1.0, 2.0];
        let mut seqs: Vec<Vec<f64>> = Vec::new();
        for len in 1..=3usize {
            let mut stack = vec![Vec::new()];
            for _ in 0..len {
                let mut next = Vec::new();
                for s in &stack {
                    for &v in &values {
                        let mut t = s.clone();
                        t.push(v);
                        next.push(t);
                    }
                }
                stack = next;
            }
            seqs.extend(stack);
        }
        for a in &seqs {
            for b in &seqs {
                let dp = dtw_alignment(a, b).unwrap();
                let (cost, len) = brute_force(a, b);
                assert!(
                    (dp.cost - cost).abs() < 1e-9 && dp.path_len == len,
                    "mismatch on {a:?} vs {b:?}: dp ({}, {}), oracle ({cost}, {len})",
                    dp.cost,
                    dp.path_len
                );
            }
        }
    }

    #[test]
    fn distance_is_symmetric() {
        let a = [1.0, 4.0, 2.0, 2.0, 5.0];
        let b = [1.0, 2.0, 5.0];
        let ab = dtw_alignment(&a, &b).unwrap();
        let ba = dtw_alignment(&b, &a).unwrap();
        assert_eq!(ab.cost, ba.cost);
        assert_eq!(ab.path_len, ba.path_len);
        assert_eq!(ab.normalized, ba.normalized);
    }
}
