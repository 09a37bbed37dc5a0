use rand::seq::SliceRandom;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Largest-remainder rounding of `total * fractions`. Ties go to the lower index.
fn apportion(total: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    let mut rems = [(0.0f64, 0usize); 4];
    for j in 0..4 {
        let t = total as f64 * fractions[j];
        counts[j] = t.floor() as usize;
        rems[j] = (t - t.floor(), j);
    }
    let mut left = total - counts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(r, j) in &rems {
        if left == 0 {
            break;
        }
        if fractions[j] > 0.0 && r > 0.0 {
            counts[j] += 1;
            left -= 1;
        }
    }
    // Only reachable through float noise in the fractions.
    if left > 0 {
        let j = (0..4).max_by(|&a, &b| fractions[a].total_cmp(&fractions[b])).unwrap();
        counts[j] += left;
    }
    counts
}

/// Per-class split counts: every cell is the floor or ceiling of its target
/// and the per-split totals match the apportioned totals.
fn allocate(class_sizes: &[usize], fractions: &[f64; 4]) -> Vec<[usize; 4]> {
    let total: usize = class_sizes.iter().sum();
    let column_targets = apportion(total, fractions);
    let mut cells: Vec<[usize; 4]> = Vec::with_capacity(class_sizes.len());
    let mut frac: Vec<[f64; 4]> = Vec::with_capacity(class_sizes.len());
    let mut supply: Vec<usize> = Vec::with_capacity(class_sizes.len());
    for &n_c in class_sizes {
        let mut row = [0usize; 4];
        let mut fr = [0.0f64; 4];
        for j in 0..4 {
            let t = n_c as f64 * fractions[j];
            row[j] = t.floor() as usize;
            fr[j] = t - t.floor();
        }
        supply.push(n_c - row.iter().sum::<usize>());
        cells.push(row);
        frac.push(fr);
    }
    let mut demand = [0usize; 4];
    for j in 0..4 {
        let floor_sum: usize = cells.iter().map(|r| r[j]).sum();
        demand[j] = column_targets[j].saturating_sub(floor_sum);
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| demand[b].cmp(&demand[a]).then(a.cmp(&b)));
    for j in order {
        if fractions[j] <= 0.0 {
            continue;
        }
        for _ in 0..demand[j] {
            let pick = (0..class_sizes.len())
                .filter(|&c| supply[c] > 0 && frac[c][j] > 0.0)
                .max_by(|&a, &b| {
                    supply[a]
                        .cmp(&supply[b])
                        .then(frac[a][j].total_cmp(&frac[b][j]))
                        .then(b.cmp(&a))
                });
            let Some(c) = pick else { break };
            cells[c][j] += 1;
            supply[c] -= 1;
            frac[c][j] = 0.0;
        }
    }
    // Leftover supply (greedy could not match every remainder): hand it to
    // the split with the largest remainder for that class.
    for c in 0..class_sizes.len() {
        while supply[c] > 0 {
            let j = (0..4)
                .filter(|&j| fractions[j] > 0.0)
                .max_by(|&a, &b| frac[c][a].total_cmp(&frac[c][b]).then(b.cmp(&a)))
                .expect("at least one positive fraction");
            cells[c][j] += 1;
            supply[c] -= 1;
            frac[c][j] = 0.0;
        }
    }
    cells
}

/// Assign train/valid/calib/test tags to labeled items, stratified by
/// class. Unlabeled items are left untagged.
pub fn stratified_split(dataset: Dataset, fractions: [f64; 4], seed: u64) -> Result<Dataset> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config(format!("split fractions must be nonnegative: {fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
    }
    let active = fractions.iter().filter(|f| **f > 0.0).count();
    let k = dataset.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in dataset.labeled_indices() {
        by_class[dataset.label(i).expect("labeled")].push(i);
    }
    let too_small: Vec<usize> = (0..k).filter(|&c| by_class[c].len() < active).collect();
    if !too_small.is_empty() {
        return Err(Error::SplitTooSmall(too_small));
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let counts = allocate(&sizes, &fractions);
    let mut rng = seed::rng(seed, Stream::Split);
    let mut tags = vec![None; dataset.len()];
    for (members, row) in by_class.iter_mut().zip(&counts) {
        members.shuffle(&mut rng);
        let mut it = members.iter();
        for (split, &count) in Split::ALL.iter().zip(row) {
            for &i in it.by_ref().take(count) {
                tags[i] = Some(*split);
            }
        }
    }
    dataset.with_splits(tags)
}
