//! Occupancy-aware token pruning.
//!
//! Tokens from all frames are grouped by voxel cell and each cell keeps its
//! representatives under a [`SelectionRule`]. Frames that fall below the keep
//! ratio are topped up greedily by an importance score, and the resulting
//! masks are smoothed by a temporal majority vote.
//!
//! Ties are always broken toward the higher frame id, then the lower token
//! index.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::{keep_floor, CompletionWeights, PipelineConfig, SelectionRule};
use crate::error::{Error, Result};
use crate::frame::FrameObservation;
use crate::tokens::{tokenize_frame, TokenRecord};
use crate::voxelgrid::{TokenKey, VoxelGrid};

/// Per-frame keep flags. `pinned` bits (anchorless tokens) are never cleared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    pub frame_id: u64,
    pub bits: Vec<bool>,
    pub pinned: Vec<bool>,
}

impl PruneMask {
    pub fn new(frame_id: u64, bits: Vec<bool>) -> Self {
        let pinned = vec![false; bits.len()];
        Self {
            frame_id,
            bits,
            pinned,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            1.0
        } else {
            self.kept() as f64 / self.bits.len() as f64
        }
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Frame tokens keyed by frame id; each vector is indexed by token index.
pub type FrameTokens = BTreeMap<u64, Vec<TokenRecord>>;

fn by_recency(a: &TokenRecord, b: &TokenRecord) -> Ordering {
    b.frame_id
        .cmp(&a.frame_id)
        .then(a.token_index.cmp(&b.token_index))
}

/// Min-max normalized `w_recency·recency + w_proximity·proximity` for every
/// token of a cell. A degenerate spread contributes a full unit.
pub fn priority_scores(cell: &[&TokenRecord], w_recency: f64, w_proximity: f64) -> Vec<f64> {
    let Some(first) = cell.first() else {
        return Vec::new();
    };
    let (mut f_lo, mut f_hi) = (first.frame_id, first.frame_id);
    let (mut r_lo, mut r_hi) = (first.range, first.range);
    for t in cell {
        f_lo = f_lo.min(t.frame_id);
        f_hi = f_hi.max(t.frame_id);
        r_lo = r_lo.min(t.range);
        r_hi = r_hi.max(t.range);
    }
    cell.iter()
        .map(|t| {
            let recency = if f_hi > f_lo {
                (t.frame_id - f_lo) as f64 / (f_hi - f_lo) as f64
            } else {
                1.0
            };
            let proximity = if r_hi > r_lo {
                1.0 - (t.range - r_lo) / (r_hi - r_lo)
            } else {
                1.0
            };
            w_recency * recency + w_proximity * proximity
        })
        .collect()
}

fn top_by_priority(cell: &[&TokenRecord], w_recency: f64, w_proximity: f64, k: usize) -> Vec<TokenKey> {
    let scores = priority_scores(cell, w_recency, w_proximity);
    let mut order: Vec<usize> = (0..cell.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| by_recency(cell[a], cell[b]))
    });
    order.truncate(k);
    order.sort_unstable();
    order.into_iter().map(|i| cell[i].key()).collect()
}

/// Chooses a cell's representatives. The result keeps the cell's order.
pub fn select(cell: &[&TokenRecord], rule: &SelectionRule) -> Result<Vec<TokenKey>> {
    if cell.is_empty() {
        return Err(Error::EmptyCell);
    }
    Ok(match *rule {
        SelectionRule::Latest => {
            let newest = cell.iter().map(|t| t.frame_id).max().unwrap_or_default();
            cell.iter()
                .filter(|t| t.frame_id == newest)
                .map(|t| t.key())
                .collect()
        }
        SelectionRule::Priority {
            w_recency,
            w_proximity,
        } => top_by_priority(cell, w_recency, w_proximity, 1),
        SelectionRule::MultiToken { k } => {
            let SelectionRule::Priority {
                w_recency,
                w_proximity,
            } = SelectionRule::DEFAULT_PRIORITY
            else {
                unreachable!()
            };
            top_by_priority(cell, w_recency, w_proximity, k)
        }
    })
}

fn lookup<'a>(frames: &'a FrameTokens, key: &TokenKey) -> Result<&'a TokenRecord> {
    frames
        .get(&key.frame_id)
        .and_then(|tokens| tokens.get(key.token_index as usize))
        .ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "grid references unknown token {}:{}",
                key.frame_id, key.token_index
            ))
        })
}

/// Initial masks: a bit is set iff its token represents its cell or has no
/// anchor.
pub fn apply_selection(
    grid: &VoxelGrid,
    frames: &FrameTokens,
    rule: &SelectionRule,
) -> Result<BTreeMap<u64, PruneMask>> {
    let mut masks: BTreeMap<u64, PruneMask> = frames
        .iter()
        .map(|(&id, tokens)| {
            let pinned: Vec<bool> = tokens.iter().map(|t| !t.is_anchored()).collect();
            let mask = PruneMask {
                frame_id: id,
                bits: pinned.clone(),
                pinned,
            };
            (id, mask)
        })
        .collect();
    let mut cell = Vec::new();
    for (_, keys) in grid.cells() {
        cell.clear();
        for key in keys {
            cell.push(lookup(frames, key)?);
        }
        for key in select(&cell, rule)? {
            if let Some(mask) = masks.get_mut(&key.frame_id) {
                mask.bits[key.token_index as usize] = true;
            }
        }
    }
    Ok(masks)
}

/// Frame-level normalizers for the importance score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceContext {
    pub frame_window: (u64, u64),
    pub range_window: (f64, f64),
    pub max_norm: f64,
    /// Largest distance from a discarded token to its nearest kept anchor.
    pub max_spread: f64,
}

impl ImportanceContext {
    /// Range and norm windows over a frame's tokens; `max_spread` starts at zero.
    pub fn for_frame(tokens: &[TokenRecord], frame_window: (u64, u64)) -> Self {
        let max_norm = tokens
            .iter()
            .map(TokenRecord::feature_norm)
            .fold(0.0, f64::max);
        let mut ranges = tokens.iter().filter(|t| t.is_anchored()).map(|t| t.range);
        let range_window = match ranges.next() {
            Some(first) => ranges.fold((first, first), |(lo, hi), r| (lo.min(r), hi.max(r))),
            None => (0.0, 0.0),
        };
        Self {
            frame_window,
            range_window,
            max_norm,
            max_spread: 0.0,
        }
    }
}

fn distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Score from a token's distance to the nearest kept anchor (`None` when
/// nothing with an anchor is kept yet).
fn score_with_spread(
    token: &TokenRecord,
    nearest_kept: Option<f64>,
    ctx: &ImportanceContext,
    w: &CompletionWeights,
) -> f64 {
    let fm = if ctx.max_norm > 0.0 {
        token.feature_norm() / ctx.max_norm
    } else {
        1.0
    };
    let (r_lo, r_hi) = ctx.range_window;
    let (ri, sd) = if token.is_anchored() {
        let ri = if r_hi > r_lo {
            1.0 - (token.range - r_lo) / (r_hi - r_lo)
        } else {
            1.0
        };
        let sd = match nearest_kept {
            None => 1.0,
            Some(d) if ctx.max_spread > 0.0 => d / ctx.max_spread,
            Some(_) => 1.0,
        };
        (ri, sd)
    } else {
        (0.0, 0.0)
    };
    let (f_lo, f_hi) = ctx.frame_window;
    let tr = if f_hi > f_lo {
        (token.frame_id.saturating_sub(f_lo)) as f64 / (f_hi - f_lo) as f64
    } else {
        1.0
    };
    w.feature * fm + w.range * ri + w.spread * sd + w.recency * tr
}

/// Weighted sum of feature magnitude, nearness, spread from the kept set and
/// recency, each normalized to `[0, 1]`.
pub fn importance(
    token: &TokenRecord,
    kept_anchors: &[Vector3<f64>],
    ctx: &ImportanceContext,
    w: &CompletionWeights,
) -> f64 {
    let nearest = token.anchor.as_ref().and_then(|a| {
        kept_anchors
            .iter()
            .map(|k| distance(a, k))
            .reduce(f64::min)
    });
    score_with_spread(token, nearest, ctx, w)
}

/// Adds the highest-importance discarded tokens until at least
/// `ceil(rho · L)` are kept. The spread term is recomputed after every
/// addition. Set bits are never cleared.
pub fn complete(
    mask: &PruneMask,
    frame_tokens: &[TokenRecord],
    rho: f64,
    w: &CompletionWeights,
    frame_window: (u64, u64),
) -> Result<PruneMask> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::BadRatio(rho));
    }
    if mask.len() != frame_tokens.len() {
        return Err(Error::LengthMismatch {
            frame_id: mask.frame_id,
            expected: frame_tokens.len(),
            found: mask.len(),
        });
    }
    let target = keep_floor(rho, frame_tokens.len());
    let mut out = mask.clone();
    let mut kept = out.kept();
    if kept >= target {
        return Ok(out);
    }

    let mut ctx = ImportanceContext::for_frame(frame_tokens, frame_window);
    let kept_anchors: Vec<Vector3<f64>> = frame_tokens
        .iter()
        .zip(&out.bits)
        .filter_map(|(t, &b)| if b { t.anchor } else { None })
        .collect();
    let mut any_kept_anchor = !kept_anchors.is_empty();
    let mut nearest: Vec<f64> = frame_tokens
        .iter()
        .map(|t| match &t.anchor {
            Some(a) => kept_anchors
                .iter()
                .map(|k| distance(a, k))
                .fold(f64::INFINITY, f64::min),
            None => f64::INFINITY,
        })
        .collect();

    while kept < target {
        ctx.max_spread = if any_kept_anchor {
            frame_tokens
                .iter()
                .zip(&out.bits)
                .filter(|(t, &b)| !b && t.is_anchored())
                .map(|(t, _)| nearest[t.token_index as usize])
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, token) in frame_tokens.iter().enumerate() {
            if out.bits[i] {
                continue;
            }
            let spread = any_kept_anchor.then_some(nearest[i]);
            let s = score_with_spread(token, spread, &ctx, w);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let Some((pick, _)) = best else { break };
        out.bits[pick] = true;
        kept += 1;
        if let Some(a) = frame_tokens[pick].anchor {
            any_kept_anchor = true;
            for (i, t) in frame_tokens.iter().enumerate() {
                if let Some(b) = &t.anchor {
                    nearest[i] = nearest[i].min(distance(b, &a));
                }
            }
        }
    }
    Ok(out)
}

/// Temporal majority vote with truncated edges; ties keep the center bit.
pub fn smooth(masks: &[PruneMask], window: usize) -> Result<Vec<PruneMask>> {
    smooth_with_floors(masks, window, None)
}

/// Majority vote over `window` frames centered on each frame.
///
/// Frames before the center contribute their already-smoothed bits, the
/// center and later frames their input bits. Pinned bits are never cleared.
/// When `floors` is given, a frame whose vote would leave fewer than
/// `floors[t]` bits set gets its cleared bits restored in ascending token
/// order until the floor holds.
pub fn smooth_with_floors(
    masks: &[PruneMask],
    window: usize,
    floors: Option<&[usize]>,
) -> Result<Vec<PruneMask>> {
    let Some(first) = masks.first() else {
        return Ok(Vec::new());
    };
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "smoothing window {window} must be odd"
        )));
    }
    let n = first.len();
    for m in masks {
        if m.len() != n || m.pinned.len() != n {
            return Err(Error::LengthMismatch {
                frame_id: m.frame_id,
                expected: n,
                found: m.len(),
            });
        }
    }
    let half = window / 2;
    let mut out: Vec<PruneMask> = Vec::with_capacity(masks.len());
    for t in 0..masks.len() {
        let before = t.saturating_sub(half)..t;
        let after = t..masks.len().min(t + half + 1);
        let total = before.len() + after.len();
        let center = &masks[t];
        let mut bits = Vec::with_capacity(n);
        for i in 0..n {
            let ones = out[before.clone()].iter().filter(|m| m.bits[i]).count()
                + masks[after.clone()].iter().filter(|m| m.bits[i]).count();
            let vote = match (2 * ones).cmp(&total) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => center.bits[i],
            };
            bits.push(vote || (center.pinned[i] && center.bits[i]));
        }
        if let Some(floor) = floors.and_then(|f| f.get(t)).copied() {
            let mut kept = bits.iter().filter(|b| **b).count();
            for i in 0..n {
                if kept >= floor {
                    break;
                }
                if center.bits[i] && !bits[i] {
                    bits[i] = true;
                    kept += 1;
                }
            }
        }
        out.push(PruneMask {
            frame_id: center.frame_id,
            bits,
            pinned: center.pinned.clone(),
        });
    }
    Ok(out)
}

/// Total number of bit changes between consecutive masks, over all indices.
pub fn flip_count(masks: &[PruneMask]) -> usize {
    masks
        .windows(2)
        .map(|w| {
            w[0].bits
                .iter()
                .zip(&w[1].bits)
                .filter(|(a, b)| a != b)
                .count()
        })
        .sum()
}

/// Every stage of one batch pruning run.
#[derive(Debug, Clone, Default)]
pub struct PruneOutcome {
    pub tokens: FrameTokens,
    pub grid: VoxelGrid,
    pub selected: BTreeMap<u64, PruneMask>,
    pub completed: BTreeMap<u64, PruneMask>,
    pub masks: BTreeMap<u64, PruneMask>,
}

impl PruneOutcome {
    /// Tokens whose final bit is set, ordered by frame then token index.
    pub fn preserved_tokens(&self) -> Vec<&TokenRecord> {
        self.masks
            .iter()
            .flat_map(|(id, mask)| {
                self.tokens[id]
                    .iter()
                    .zip(&mask.bits)
                    .filter(|(_, &b)| b)
                    .map(|(t, _)| t)
            })
            .collect()
    }
}

/// Checks that frame ids strictly increase.
pub fn check_time_order(frames: &[FrameObservation]) -> Result<()> {
    for w in frames.windows(2) {
        if w[1].frame_id <= w[0].frame_id {
            return Err(Error::NonMonotonicFrame {
                last: w[0].frame_id,
                found: w[1].frame_id,
            });
        }
    }
    Ok(())
}

/// Anchor, quantize, group, select, complete and smooth a batch of
/// historical frames.
pub fn prune_pipeline(frames: &[FrameObservation], cfg: &PipelineConfig) -> Result<PruneOutcome> {
    cfg.validate()?;
    check_time_order(frames)?;
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Ok(PruneOutcome::default());
    };
    let frame_window = (first.frame_id, last.frame_id);

    let mut tokens = FrameTokens::new();
    for frame in frames {
        tokens.insert(frame.frame_id, tokenize_frame(frame, &cfg.voxel, &cfg.anchor)?);
    }
    let grid = VoxelGrid::group(
        tokens
            .values()
            .flatten()
            .filter_map(|t| t.voxel.map(|v| (v, t.key()))),
    );
    let selected = apply_selection(&grid, &tokens, &cfg.selection)?;

    let rho = cfg.completion.rho;
    let mut completed = BTreeMap::new();
    for (id, mask) in &selected {
        let mask = if rho > 0.0 {
            complete(mask, &tokens[id], rho, &cfg.completion.weights, frame_window)?
        } else {
            mask.clone()
        };
        completed.insert(*id, mask);
    }

    let ordered: Vec<PruneMask> = completed.values().cloned().collect();
    let floors: Vec<usize> = ordered.iter().map(|m| keep_floor(rho, m.len())).collect();
    let smoothed = smooth_with_floors(&ordered, cfg.smoothing.window, Some(&floors))?;
    let masks = smoothed.into_iter().map(|m| (m.frame_id, m)).collect();

    Ok(PruneOutcome {
        tokens,
        grid,
        selected,
        completed,
        masks,
    })
}
