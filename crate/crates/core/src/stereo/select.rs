//! Keyframe and neighbor-view selection.

use crate::error::{ensure, Result};
use crate::ingest::PanoramaFrame;

/// Sharpness at quantile `q` of the frame set (lower nearest rank).
pub fn sharpness_quantile(frames: &[PanoramaFrame], q: f64) -> f64 {
    let mut s: Vec<f64> = frames.iter().map(|f| f.sharpness).collect();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return 0.0;
    }
    let k = (q.clamp(0.0, 1.0) * (s.len() - 1) as f64).floor() as usize;
    s[k]
}

/// Greedy keyframe scan in capture order: a frame is accepted when its
/// sharpness reaches the `min_sharpness_quantile` of the set and its center
/// lies at least `min_baseline` meters from every accepted center.
/// Returns indices into `frames`, in capture order.
pub fn select_keyframes(
    frames: &[PanoramaFrame],
    min_baseline: f64,
    min_sharpness_quantile: f64,
) -> Result<Vec<usize>> {
    ensure!(
        min_baseline >= 0.0 && (0.0..=1.0).contains(&min_sharpness_quantile),
        "keyframe selection needs min_baseline >= 0 and a quantile in [0, 1]"
    );
    let threshold = sharpness_quantile(frames, min_sharpness_quantile);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by_key(|&i| frames[i].timestamp_index);
    let mut accepted: Vec<usize> = Vec::new();
    for i in order {
        let f = &frames[i];
        if f.sharpness < threshold {
            continue;
        }
        let c = f.pose.translation;
        if accepted
            .iter()
            .all(|&a| (frames[a].pose.translation - c).norm() >= min_baseline)
        {
            accepted.push(i);
        }
    }
    ensure!(
        !accepted.is_empty(),
        "no keyframes selected from {} frame(s); supply posed frames or lower the sharpness quantile",
        frames.len()
    );
    Ok(accepted)
}

/// Preference for a baseline `b` given the band `[lo, hi]`: 1 inside,
/// falling off linearly below and hyperbolically above.
pub fn baseline_preference(b: f64, lo: f64, hi: f64) -> f64 {
    if b < lo {
        b / lo
    } else if b > hi {
        hi / b
    } else {
        1.0
    }
}

/// Score of candidate view `cand` for reference `reference`.
pub fn view_score(reference: &PanoramaFrame, cand: &PanoramaFrame, d_min: f64, d_max: f64) -> f64 {
    let d_mid = (d_min * d_max).sqrt();
    let b = (cand.pose.translation - reference.pose.translation).norm();
    let angle = reference.pose.forward().angle(&cand.pose.forward());
    baseline_preference(b, 0.05 * d_mid, 0.5 * d_mid) * (1.0 - 0.5 * angle / std::f64::consts::PI)
}

/// Up to `k` best-scoring neighbors of `frames[reference]` among
/// `candidates`, best first; ties keep candidate order. The reference and
/// views sharing its center are never returned.
pub fn select_views(
    frames: &[PanoramaFrame],
    reference: usize,
    candidates: &[usize],
    k: usize,
    d_min: f64,
    d_max: f64,
) -> Vec<usize> {
    let r = &frames[reference];
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .copied()
        .filter(|&c| c != reference && (frames[c].pose.translation - r.pose.translation).norm() > 1e-9)
        .map(|c| (view_score(r, &frames[c], d_min, d_max), c))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().take(k).map(|(_, c)| c).collect()
}
