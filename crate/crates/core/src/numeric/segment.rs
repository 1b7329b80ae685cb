//! Segment-wise reductions used to normalize attention over incoming edges.

use super::tensor::Scalar;

/// Softmax of each column of a row-major `[len × heads]` block, taken
/// independently within every segment of rows.
///
/// Rows sharing a segment id are normalized together. Max subtraction keeps
/// the exponentials bounded.
pub fn segment_softmax_into<T: Scalar>(
    logits: &[T],
    heads: usize,
    segment_of: &[usize],
    num_segments: usize,
    out: &mut [T],
) {
    debug_assert_eq!(logits.len(), segment_of.len() * heads);
    let mut max = vec![T::neg_infinity(); num_segments * heads];
    for (e, &s) in segment_of.iter().enumerate() {
        for k in 0..heads {
            let m = &mut max[s * heads + k];
            *m = m.max(logits[e * heads + k]);
        }
    }
    let mut sum = vec![T::zero(); num_segments * heads];
    for (e, &s) in segment_of.iter().enumerate() {
        for k in 0..heads {
            let v = (logits[e * heads + k] - max[s * heads + k]).exp();
            out[e * heads + k] = v;
            sum[s * heads + k] = sum[s * heads + k] + v;
        }
    }
    for (e, &s) in segment_of.iter().enumerate() {
        for k in 0..heads {
            out[e * heads + k] = out[e * heads + k] / sum[s * heads + k];
        }
    }
}

/// Single-head segment softmax over a logit vector.
///
/// Segments that own no entries produce nothing; a segment id larger than any
/// present is fine.
pub fn segment_softmax(logits: &[f64], segment_of: &[usize]) -> Vec<f64> {
    assert_eq!(logits.len(), segment_of.len(), "one segment id per logit");
    let num_segments = segment_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![0.0; logits.len()];
    segment_softmax_into(logits, 1, segment_of, num_segments, &mut out);
    out
}
