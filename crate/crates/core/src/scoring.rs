//! Scoring primitives with exact FLOP accounting.
//!
//! Counting convention: a d-dimensional inner product costs `2d`, a max over
//! `m` candidates costs `m - 1`, a convex fusion costs 3. Accumulation is
//! always in f64 with a fixed order, so identical inputs give bit-identical
//! scores.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingMatrix, PooledVector};

pub const FUSE_FLOPS: u64 = 3;

#[inline]
pub fn dot_flops(dim: usize) -> u64 {
    2 * dim as u64
}

/// Cost of MaxSim between `nq` query rows and `np` page rows.
#[inline]
pub fn maxsim_flops(nq: usize, np: usize, dim: usize) -> u64 {
    nq as u64 * np as u64 * dot_flops(dim) + nq as u64 * (np as u64 - 1)
}

/// Per-phase FLOP counters for one query evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub stage1_vs: u64,
    pub stage1_refine: u64,
    pub stage2_filtered: u64,
    pub stage2_refine: u64,
    /// Exhaustive baselines and efficiency variants.
    pub variant: u64,
}

impl FlopsLedger {
    pub fn total(&self) -> u64 {
        self.stage1_vs + self.stage1_refine + self.stage2_filtered + self.stage2_refine + self.variant
    }

    pub fn merge(&mut self, other: &FlopsLedger) {
        self.stage1_vs += other.stage1_vs;
        self.stage1_refine += other.stage1_refine;
        self.stage2_filtered += other.stage2_filtered;
        self.stage2_refine += other.stage2_refine;
        self.variant += other.variant;
    }
}

/// An item with its score. Ranking order is score descending, then item
/// ascending (document index, then page or group index).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored<T> {
    pub item: T,
    pub score: f64,
}

impl<T: Ord> Scored<T> {
    pub fn new(item: T, score: f64) -> Self {
        Self { item, score }
    }

    #[inline]
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.item.cmp(&other.item))
    }
}

/// Inner product accumulated in f64 over eight fixed lanes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += f64::from(x[l]) * f64::from(y[l]);
        }
    }
    let mut tail = 0f64;
    for (x, y) in ta.iter().zip(tb) {
        tail += f64::from(*x) * f64::from(*y);
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}

pub fn dot_score(q: &PooledVector, p: &PooledVector, flops: &mut u64) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            found: p.dim(),
        });
    }
    *flops += dot_flops(q.dim());
    Ok(dot(q.data(), p.data()))
}

#[inline]
fn row_max(q_row: &[f32], p: &EmbeddingMatrix) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for p_row in p.iter_rows() {
        let s = dot(q_row, p_row);
        if s > best {
            best = s;
        }
    }
    best
}

fn check_pair(q: &EmbeddingMatrix, p: &EmbeddingMatrix) -> Result<()> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            found: p.dim(),
        });
    }
    Ok(())
}

/// Sum over query rows of the best inner product against any page row.
pub fn maxsim_score(q: &EmbeddingMatrix, p: &EmbeddingMatrix, flops: &mut u64) -> Result<f64> {
    check_pair(q, p)?;
    *flops += maxsim_flops(q.rows(), p.rows(), q.dim());
    Ok(q.iter_rows().map(|r| row_max(r, p)).fold(0.0, |acc, m| acc + m))
}

/// MaxSim restricted to the query rows whose mask entry is true.
pub fn masked_maxsim_score(
    q: &EmbeddingMatrix,
    mask: &[bool],
    p: &EmbeddingMatrix,
    flops: &mut u64,
) -> Result<f64> {
    check_pair(q, p)?;
    if mask.len() != q.rows() {
        return Err(Error::DimensionMismatch {
            expected: q.rows(),
            found: mask.len(),
        });
    }
    let kept = mask.iter().filter(|&&b| b).count();
    if kept == 0 {
        return Err(Error::DegenerateMask);
    }
    *flops += maxsim_flops(kept, p.rows(), q.dim());
    Ok(q
        .iter_rows()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(r, _)| row_max(r, p))
        .fold(0.0, |acc, m| acc + m))
}

pub fn check_weight(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("fusion weight {w} outside [0,1]")))
    }
}

/// `w * a + (1 - w) * b`.
pub fn fuse(a: f64, b: f64, w: f64) -> Result<f64> {
    check_weight(w)?;
    Ok(fuse_unchecked(a, b, w))
}

#[inline]
pub(crate) fn fuse_unchecked(a: f64, b: f64, w: f64) -> f64 {
    w * a + (1.0 - w) * b
}

/// `ceil(fraction * n)` clamped to `[1, n]`, robust to the rounding of
/// products like `0.1 * 30`.
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let raw = (fraction * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

pub fn check_fraction(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("fraction {p} outside (0,1]")))
    }
}

fn select_sorted<T: Ord + Clone>(items: &[Scored<T>], count: usize) -> Vec<Scored<T>> {
    let mut v = items.to_vec();
    if count < v.len() {
        v.select_nth_unstable_by(count, Scored::rank_cmp);
        v.truncate(count);
    }
    v.sort_unstable_by(Scored::rank_cmp);
    v
}

/// The `ceil(p * n)` best items, best first.
pub fn top_fraction<T: Ord + Clone>(items: &[Scored<T>], p: f64) -> Result<Vec<Scored<T>>> {
    check_fraction(p)?;
    if items.is_empty() {
        return Err(Error::Empty("top_fraction over no items"));
    }
    Ok(select_sorted(items, ceil_fraction(p, items.len())))
}

/// The `min(k, n)` best items, best first.
pub fn top_k<T: Ord + Clone>(items: &[Scored<T>], k: usize) -> Result<Vec<Scored<T>>> {
    if k < 1 {
        return Err(Error::InvalidParameter("top-k needs k >= 1".into()));
    }
    if items.is_empty() {
        return Err(Error::Empty("top_k over no items"));
    }
    Ok(select_sorted(items, k))
}

/// Full ranking of all items, best first.
pub fn rank_all<T: Ord + Clone>(items: &[Scored<T>]) -> Vec<Scored<T>> {
    select_sorted(items, items.len())
}
