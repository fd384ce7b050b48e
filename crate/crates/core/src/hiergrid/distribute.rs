use std::collections::BTreeMap;

use super::{Forest, GridId};

/// Splits a sequence of loads into `workers` contiguous chunks.
///
/// Each chunk takes items until it reaches `ceil(remaining / workers_left)`;
/// the last chunk takes whatever is left. Zero total load falls back to
/// counting items.
pub fn greedy_partition(loads: &[u64], workers: usize) -> Vec<usize> {
    let workers = workers.max(1);
    let total: u64 = loads.iter().sum();
    let unit;
    let loads = if total == 0 {
        unit = vec![1u64; loads.len()];
        &unit[..]
    } else {
        loads
    };
    let mut remaining: u64 = loads.iter().sum();
    let mut out = vec![0usize; loads.len()];
    let mut rank = 0usize;
    let mut acc = 0u64;
    let mut target = remaining.div_ceil(workers as u64);
    for (slot, &load) in out.iter_mut().zip(loads) {
        *slot = rank;
        acc += load;
        if acc >= target && rank + 1 < workers {
            rank += 1;
            remaining -= acc;
            acc = 0;
            target = remaining.div_ceil((workers - rank) as u64);
        }
    }
    out
}

/// Orders grids along the Morton curve and assigns contiguous runs to ranks,
/// balancing active cell counts.
pub fn distribute(forest: &Forest, ids: &[GridId], workers: usize) -> BTreeMap<GridId, usize> {
    let mut keyed: Vec<(Vec<u64>, GridId)> = ids
        .iter()
        .filter_map(|&id| forest.sfc_digits(id).ok().map(|k| (k, id)))
        .collect();
    keyed.sort();
    let loads: Vec<u64> = keyed
        .iter()
        .map(|(_, id)| {
            let g = &forest.grids()[id.0 as usize];
            if g.active {
                g.interior_cell_count() as u64
            } else {
                0
            }
        })
        .collect();
    let ranks = greedy_partition(&loads, workers);
    keyed.into_iter().map(|(_, id)| id).zip(ranks).collect()
}
