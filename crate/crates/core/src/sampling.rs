//! Frame selection: divide a video of L frames into T equal-duration
//! segments and pick one frame per segment.
//!
//! Segment `s` covers `[floor(s*L/T), floor((s+1)*L/T))`. Training draws
//! uniformly inside each segment; evaluation takes each segment's center,
//! `floor((2s+1)*L/(2T))`. Degenerate segments (L < T) collapse to their
//! clamped start so short videos still yield T indices, repeating frames as
//! needed.

use rand::Rng;

use crate::rng;

/// Center-of-segment indices for one evaluation clip.
pub fn eval_center(l: usize, t: usize) -> Vec<usize> {
    clip_indices(l, t, 1, 0)
}

/// One training sample: uniform within each segment, in segment order.
pub fn train_random(l: usize, t: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(l >= 1 && t >= 1, "need at least one frame and one segment");
    (0..t)
        .map(|s| {
            let lo = s * l / t;
            let hi = (s + 1) * l / t;
            if lo < hi {
                lo + rng::below(rng, hi - lo)
            } else {
                lo.min(l - 1)
            }
        })
        .collect()
}

/// Indices for clip `k` of `clips`: segment centers slide from early to late
/// positions as k grows, `floor((s*(K+1) + (k+1)) * L / (T*(K+1)))`. With
/// K=1 this is exactly [`eval_center`], and when L == T every clip
/// degenerates to the same full pass over the video.
pub fn clip_indices(l: usize, t: usize, clips: usize, k: usize) -> Vec<usize> {
    assert!(l >= 1 && t >= 1, "need at least one frame and one segment");
    assert!(k < clips, "clip index {k} out of {clips}");
    let spread = clips + 1;
    (0..t).map(|s| ((s * spread + k + 1) * l / (t * spread)).min(l - 1)).collect()
}

/// All `clips` index sets for one video.
pub fn multi_clip(l: usize, t: usize, clips: usize) -> Vec<Vec<usize>> {
    (0..clips).map(|k| clip_indices(l, t, clips, k)).collect()
}
