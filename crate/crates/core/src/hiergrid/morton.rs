//! Morton (Z-order) keys built by bit-interleaving per-axis child indices.
//!
//! Bit `b` of axis `a` lands on key bit `dims * b + a`, so x is the least
//! significant axis. For planar runs `dims == 2` and z carries no bits.
//! A path through the hierarchy is encoded level by level, the level-0
//! digit being the most significant; with power-of-two splits this is the
//! same as interleaving the per-axis integer coordinates at the path's depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AXIS_NAMES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MortonKey(pub u64);

/// Bits needed to hold indices `0..n`.
pub fn bits_for(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        32 - (n - 1).leading_zeros()
    }
}

pub fn interleave(coords: [u64; 3], dims: usize) -> u64 {
    debug_assert!((1..=3).contains(&dims));
    let bits = 64 / dims as u32;
    let mut key = 0u64;
    for b in 0..bits {
        for (a, c) in coords.iter().enumerate().take(dims) {
            key |= ((c >> b) & 1) << (dims as u32 * b + a as u32);
        }
    }
    key
}

pub fn deinterleave(key: u64, dims: usize) -> [u64; 3] {
    debug_assert!((1..=3).contains(&dims));
    let bits = 64 / dims as u32;
    let mut out = [0u64; 3];
    for b in 0..bits {
        for (a, c) in out.iter_mut().enumerate().take(dims) {
            *c |= ((key >> (dims as u32 * b + a as u32)) & 1) << b;
        }
    }
    out
}

fn digit_width(radix: [u32; 3], dims: usize) -> u32 {
    radix[..dims]
        .iter()
        .map(|&n| bits_for(n))
        .max()
        .unwrap_or(0)
}

fn check_index(level: usize, idx: [u32; 3], radix: [u32; 3], dims: usize) -> Result<()> {
    for a in 0..3 {
        let bound = if a < dims { radix[a] } else { 1 };
        if idx[a] >= bound.max(1) {
            return Err(Error::MortonRange {
                level,
                axis: AXIS_NAMES[a],
                index: idx[a],
                bound: bound.max(1),
            });
        }
    }
    Ok(())
}

/// Per-level interleaved digits of a path; comparing these lexicographically
/// orders grids of any depth along the curve, parents before their children.
pub fn path_digits(path: &[[u32; 3]], radix: &[[u32; 3]], dims: usize) -> Result<Vec<u64>> {
    if radix.len() < path.len() {
        return Err(Error::Shape(format!(
            "path of depth {} but only {} radix levels",
            path.len(),
            radix.len()
        )));
    }
    path.iter()
        .zip(radix)
        .enumerate()
        .map(|(level, (idx, r))| {
            check_index(level, *idx, *r, dims)?;
            Ok(interleave(
                [idx[0] as u64, idx[1] as u64, idx[2] as u64],
                dims,
            ))
        })
        .collect()
}

/// Encodes a child-index path. `radix[l]` holds the split factors at level `l`.
pub fn encode(path: &[[u32; 3]], radix: &[[u32; 3]], dims: usize) -> Result<MortonKey> {
    let digits = path_digits(path, radix, dims)?;
    let total: u32 = radix[..path.len()]
        .iter()
        .map(|r| dims as u32 * digit_width(*r, dims))
        .sum();
    if total > 64 {
        return Err(Error::MortonOverflow(total));
    }
    let mut key = 0u64;
    for (d, r) in digits.iter().zip(radix) {
        let w = dims as u32 * digit_width(*r, dims);
        key = if w == 0 { key } else { (key << w) | d };
    }
    Ok(MortonKey(key))
}

/// Inverse of [`encode`] for a path of depth `radix.len()`.
pub fn decode(key: MortonKey, radix: &[[u32; 3]], dims: usize) -> Result<Vec<[u32; 3]>> {
    let widths: Vec<u32> = radix
        .iter()
        .map(|r| dims as u32 * digit_width(*r, dims))
        .collect();
    let total: u32 = widths.iter().sum();
    if total > 64 {
        return Err(Error::MortonOverflow(total));
    }
    if total < 64 && key.0 >> total != 0 {
        return Err(Error::Parse(format!(
            "key {} has bits above {total}",
            key.0
        )));
    }
    let mut path = vec![[0u32; 3]; radix.len()];
    let mut rest = key.0;
    for level in (0..radix.len()).rev() {
        let w = widths[level];
        let digit = if w == 0 {
            0
        } else {
            rest & (u64::MAX >> (64 - w))
        };
        rest = if w == 64 { 0 } else { rest >> w };
        let c = deinterleave(digit, dims);
        let idx = [c[0] as u32, c[1] as u32, c[2] as u32];
        check_index(level, idx, radix[level], dims)?;
        path[level] = idx;
    }
    Ok(path)
}

/// Convenience for the common case of the same split factors on every level.
pub fn encode_uniform(path: &[[u32; 3]], split: [u32; 3], dims: usize) -> Result<MortonKey> {
    encode(path, &vec![split; path.len()], dims)
}
