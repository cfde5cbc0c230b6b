//! Brute-force reference for batch pruning.
//!
//! Everything here is recomputed from raw frame data with plain loops:
//! pairwise cell grouping, exhaustive per-cell scoring, a from-scratch
//! nearest-anchor search at every completion step and an explicit
//! per-position vote. Arithmetic is written in the same order as the
//! production path so results can be compared bit for bit.

use std::collections::BTreeMap;

use dgv_core::config::{AnchorConfig, PipelineConfig, SelectionRule};
use dgv_core::geometry::AnchorMode;
use dgv_core::voxelgrid::{FrameScaleMode, ResolutionPolicy};
use dgv_core::FrameObservation;

use crate::HarnessError;

pub const MAX_ORACLE_FRAMES: usize = 50;
pub const MAX_ORACLE_TOKENS: usize = 10_000;

struct Tok {
    frame: u64,
    index: usize,
    anchor: Option<[f64; 3]>,
    range: f64,
    norm: f64,
    cell: Option<(i64, i64, i64, u8, i32)>,
}

fn floor_count(rho: f64, n: usize) -> usize {
    let c = (rho * n as f64 - 1e-9).ceil();
    if c <= 0.0 {
        0
    } else {
        (c as usize).min(n)
    }
}

fn patch_side(w: usize, h: usize, tokens: usize) -> Option<usize> {
    let mut p = 1;
    while p <= w && p <= h {
        if w % p == 0 && h % p == 0 && (w / p) * (h / p) == tokens {
            return Some(p);
        }
        p += 1;
    }
    None
}

fn world(frame: &FrameObservation, u: usize, v: usize, anchor: &AnchorConfig) -> Option<[f64; 3]> {
    let w = frame.depth.width();
    let d = frame.depth.values()[v * w + u];
    if !(d.is_finite() && d > 0.0) {
        return None;
    }
    if let Some(m) = anchor.max_depth {
        if d > m {
            return None;
        }
    }
    let k = &frame.intrinsics;
    let ry = (v as f64 - k.cy) / k.fy;
    let rx = (u as f64 - k.cx) / k.fx;
    let cam = [d * rx, d * ry, d];
    let r = &frame.pose.rotation;
    let t = &frame.pose.translation;
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = r[(i, 0)] * cam[0] + r[(i, 1)] * cam[1] + r[(i, 2)] * cam[2] + t[i];
    }
    Some(out)
}

fn frame_tokens(frame: &FrameObservation, cfg: &PipelineConfig) -> Result<Vec<Tok>, HarnessError> {
    let (w, h) = (frame.depth.width(), frame.depth.height());
    let n = frame.features.rows();
    let p = patch_side(w, h, n)
        .ok_or_else(|| HarnessError::InvalidPath(format!("frame {} has no square patch layout", frame.frame_id)))?;
    let cols = w / p;
    let t = &frame.pose.translation;

    let mut out = Vec::with_capacity(n);
    for index in 0..n {
        let (x0, y0) = ((index % cols) * p, (index / cols) * p);
        let anchor = match cfg.anchor.mode {
            AnchorMode::Centroid => {
                let mut s = [0.0; 3];
                let mut count = 0usize;
                for v in y0..y0 + p {
                    for u in x0..x0 + p {
                        if let Some(q) = world(frame, u, v, &cfg.anchor) {
                            s[0] += q[0];
                            s[1] += q[1];
                            s[2] += q[2];
                            count += 1;
                        }
                    }
                }
                if count == 0 {
                    None
                } else {
                    let c = count as f64;
                    Some([s[0] / c, s[1] / c, s[2] / c])
                }
            }
            AnchorMode::CenterPixel => world(frame, x0 + p / 2, y0 + p / 2, &cfg.anchor),
        };
        let range = match anchor {
            Some(a) => {
                let (dx, dy, dz) = (a[0] - t[0], a[1] - t[1], a[2] - t[2]);
                (dx * dx + dy * dy + dz * dz).sqrt()
            }
            None => 0.0,
        };
        let mut sq = 0.0;
        for &v in frame.features.row(index) {
            sq += f64::from(v) * f64::from(v);
        }
        out.push(Tok {
            frame: frame.frame_id,
            index,
            anchor,
            range,
            norm: sq.sqrt(),
            cell: None,
        });
    }

    // Cell assignment needs the frame's median anchored range.
    let mut ranges: Vec<f64> = out.iter().filter(|t| t.anchor.is_some()).map(|t| t.range).collect();
    let mut median = 0.0;
    if !ranges.is_empty() {
        // insertion sort
        for i in 1..ranges.len() {
            let mut j = i;
            while j > 0 && ranges[j - 1] > ranges[j] {
                ranges.swap(j - 1, j);
                j -= 1;
            }
        }
        let m = ranges.len();
        median = if m % 2 == 1 {
            ranges[m / 2]
        } else {
            (ranges[m / 2 - 1] + ranges[m / 2]) / 2.0
        };
    }
    let v: &ResolutionPolicy = &cfg.voxel;
    let exp = match v.frame_scale {
        FrameScaleMode::Off => 0,
        FrameScaleMode::MedianDepth if median.is_finite() && median > 0.0 => {
            let e = (median / v.reference_depth).log2().round() as i32;
            e.clamp(-8, 8)
        }
        FrameScaleMode::MedianDepth => 0,
    };
    for t in &mut out {
        if let Some(a) = t.anchor {
            let band: u8 = if t.range < v.band_edges[0] {
                0
            } else if t.range < v.band_edges[1] {
                1
            } else {
                2
            };
            let size = v.base_size * 2f64.powi(exp) * v.band_scales[band as usize];
            t.cell = Some((
                (a[0] / size).floor() as i64,
                (a[1] / size).floor() as i64,
                (a[2] / size).floor() as i64,
                band,
                exp,
            ));
        }
    }
    Ok(out)
}

/// True when `a` should be preferred over `b` at equal score.
fn tie_prefers(a: &Tok, b: &Tok) -> bool {
    a.frame > b.frame || (a.frame == b.frame && a.index < b.index)
}

fn priority(members: &[&Tok], wr: f64, wp: f64) -> Vec<f64> {
    let mut f_lo = u64::MAX;
    let mut f_hi = 0;
    let mut r_lo = f64::INFINITY;
    let mut r_hi = f64::NEG_INFINITY;
    for t in members {
        f_lo = f_lo.min(t.frame);
        f_hi = f_hi.max(t.frame);
        if t.range < r_lo {
            r_lo = t.range;
        }
        if t.range > r_hi {
            r_hi = t.range;
        }
    }
    members
        .iter()
        .map(|t| {
            let rec = if f_hi > f_lo {
                (t.frame - f_lo) as f64 / (f_hi - f_lo) as f64
            } else {
                1.0
            };
            let prox = if r_hi > r_lo {
                1.0 - (t.range - r_lo) / (r_hi - r_lo)
            } else {
                1.0
            };
            wr * rec + wp * prox
        })
        .collect()
}

fn pick_top(members: &[&Tok], scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; members.len()];
    let mut picks = Vec::new();
    for _ in 0..k.min(members.len()) {
        let mut best: Option<usize> = None;
        for i in 0..members.len() {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if scores[i] > scores[b] => Some(i),
                Some(b) if scores[i] == scores[b] && tie_prefers(members[i], members[b]) => Some(i),
                keep => keep,
            };
        }
        if let Some(b) = best {
            taken[b] = true;
            picks.push(b);
        }
    }
    picks
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn nearest_kept(toks: &[Tok], bits: &[bool], i: usize) -> Option<f64> {
    let a = toks[i].anchor?;
    let mut best: Option<f64> = None;
    for (j, t) in toks.iter().enumerate() {
        if bits[j] {
            if let Some(b) = t.anchor {
                let d = dist(&a, &b);
                best = Some(match best {
                    Some(x) if x <= d => x,
                    _ => d,
                });
            }
        }
    }
    best
}

fn complete_frame(toks: &[Tok], bits: &mut [bool], rho: f64, cfg: &PipelineConfig, window: (u64, u64)) {
    let target = floor_count(rho, toks.len());
    let w = &cfg.completion.weights;
    let mut max_norm = 0.0;
    let mut r_lo = f64::INFINITY;
    let mut r_hi = f64::NEG_INFINITY;
    for t in toks {
        if t.norm > max_norm {
            max_norm = t.norm;
        }
        if t.anchor.is_some() {
            r_lo = r_lo.min(t.range);
            r_hi = r_hi.max(t.range);
        }
    }
    while bits.iter().filter(|b| **b).count() < target {
        let any_kept = toks.iter().zip(bits.iter()).any(|(t, &b)| b && t.anchor.is_some());
        let nearest: Vec<Option<f64>> = (0..toks.len())
            .map(|i| if bits[i] { None } else { nearest_kept(toks, bits, i) })
            .collect();
        let mut max_spread = 0.0;
        for d in nearest.iter().flatten() {
            if *d > max_spread {
                max_spread = *d;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in toks.iter().enumerate() {
            if bits[i] {
                continue;
            }
            let fm = if max_norm > 0.0 { t.norm / max_norm } else { 1.0 };
            let (ri, sd) = if t.anchor.is_some() {
                let ri = if r_hi > r_lo {
                    1.0 - (t.range - r_lo) / (r_hi - r_lo)
                } else {
                    1.0
                };
                let sd = if !any_kept {
                    1.0
                } else if max_spread > 0.0 {
                    nearest[i].unwrap_or(f64::INFINITY) / max_spread
                } else {
                    1.0
                };
                (ri, sd)
            } else {
                (0.0, 0.0)
            };
            let tr = if window.1 > window.0 {
                (t.frame - window.0) as f64 / (window.1 - window.0) as f64
            } else {
                1.0
            };
            let s = w.feature * fm + w.range * ri + w.spread * sd + w.recency * tr;
            if best.is_none() || s > best.map_or(f64::NEG_INFINITY, |b| b.1) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, _)) => bits[i] = true,
            None => break,
        }
    }
}

/// Reference masks for a batch of frames, keyed by frame id.
///
/// Returns [`HarnessError::ScaleExceeded`] above 50 frames or 10⁴ tokens.
pub fn oracle_prune(
    frames: &[FrameObservation],
    cfg: &PipelineConfig,
) -> Result<BTreeMap<u64, Vec<bool>>, HarnessError> {
    let token_total: usize = frames.iter().map(|f| f.features.rows()).sum();
    if frames.len() > MAX_ORACLE_FRAMES || token_total > MAX_ORACLE_TOKENS {
        return Err(HarnessError::ScaleExceeded {
            frames: frames.len(),
            tokens: token_total,
        });
    }
    if frames.is_empty() {
        return Ok(BTreeMap::new());
    }

    let per_frame: Vec<Vec<Tok>> = frames
        .iter()
        .map(|f| frame_tokens(f, cfg))
        .collect::<Result<_, _>>()?;

    // Flat list of anchored tokens as (frame slot, token index).
    let mut all: Vec<(usize, usize)> = Vec::new();
    for (fi, toks) in per_frame.iter().enumerate() {
        for (ti, t) in toks.iter().enumerate() {
            if t.cell.is_some() {
                all.push((fi, ti));
            }
        }
    }
    // Pairwise grouping: every token points at the first token sharing its cell.
    let cell_of = |k: usize| per_frame[all[k].0][all[k].1].cell;
    let mut leader = vec![0usize; all.len()];
    for i in 0..all.len() {
        leader[i] = i;
        for j in 0..i {
            if cell_of(j) == cell_of(i) {
                leader[i] = j;
                break;
            }
        }
    }

    let mut bits: Vec<Vec<bool>> = per_frame
        .iter()
        .map(|toks| toks.iter().map(|t| t.anchor.is_none()).collect())
        .collect();
    let pinned = bits.clone();

    for l in 0..all.len() {
        if leader[l] != l {
            continue;
        }
        let members_at: Vec<usize> = (0..all.len()).filter(|&i| leader[i] == l).collect();
        let members: Vec<&Tok> = members_at.iter().map(|&i| &per_frame[all[i].0][all[i].1]).collect();
        let chosen: Vec<usize> = match cfg.selection {
            SelectionRule::Latest => {
                let newest = members.iter().map(|t| t.frame).max().unwrap_or(0);
                (0..members.len()).filter(|&i| members[i].frame == newest).collect()
            }
            SelectionRule::Priority { w_recency, w_proximity } => {
                pick_top(&members, &priority(&members, w_recency, w_proximity), 1)
            }
            SelectionRule::MultiToken { k } => pick_top(&members, &priority(&members, 0.5, 0.5), k),
        };
        for c in chosen {
            let (fi, ti) = all[members_at[c]];
            bits[fi][ti] = true;
        }
    }

    let rho = cfg.completion.rho;
    let window = (frames[0].frame_id, frames[frames.len() - 1].frame_id);
    if rho > 0.0 {
        for (fi, toks) in per_frame.iter().enumerate() {
            complete_frame(toks, &mut bits[fi], rho, cfg, window);
        }
    }

    // Majority vote at every (frame, index) position.
    let half = cfg.smoothing.window / 2;
    let mut smoothed: Vec<Vec<bool>> = Vec::with_capacity(bits.len());
    for t in 0..bits.len() {
        let n = bits[t].len();
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(bits.len() - 1);
        let mut row = vec![false; n];
        for i in 0..n {
            let mut ones = 0;
            let mut total = 0;
            for s in lo..=hi {
                let b = if s < t { smoothed[s][i] } else { bits[s][i] };
                total += 1;
                if b {
                    ones += 1;
                }
            }
            row[i] = if 2 * ones > total {
                true
            } else if 2 * ones < total {
                false
            } else {
                bits[t][i]
            };
            if pinned[t][i] && bits[t][i] {
                row[i] = true;
            }
        }
        let floor = floor_count(rho, n);
        for i in 0..n {
            if row.iter().filter(|b| **b).count() >= floor {
                break;
            }
            if bits[t][i] && !row[i] {
                row[i] = true;
            }
        }
        smoothed.push(row);
    }

    Ok(frames.iter().map(|f| f.frame_id).zip(smoothed).collect())
}
