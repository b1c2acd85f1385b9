use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;

use super::{Label, Labeled, Manifest, SliceRecord};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Unit that must stay on one side of every split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    #[default]
    Patient,
    Slice,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Grouping::Patient => "patient",
            Grouping::Slice => "slice",
        })
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patient" => Ok(Grouping::Patient),
            "slice" => Ok(Grouping::Slice),
            other => Err(Error::Config(format!(
                "unknown grouping `{other}` (patient|slice)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    /// Test slices per class.
    pub test_per_class: usize,
    /// Slices per class drawn for each epoch; `None` takes the largest
    /// balanced count the training pool allows.
    pub train_per_class: Option<usize>,
    /// Share of the post-test pool held out for validation.
    pub validation_fraction: f64,
    pub grouping: Grouping,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_per_class: 45,
            train_per_class: None,
            validation_fraction: 0.2,
            grouping: Grouping::Patient,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub test: Vec<SliceRecord>,
    /// Pool the per-epoch balanced subsets are drawn from.
    pub train: Vec<SliceRecord>,
    pub validation: Vec<SliceRecord>,
    /// Resolved per-class count for balanced sampling.
    pub train_per_class: usize,
}

struct Group {
    members: Vec<usize>,
    label: Label,
}

fn groups(manifest: &Manifest, grouping: Grouping) -> Result<Vec<Group>> {
    match grouping {
        Grouping::Slice => Ok(manifest
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| Group {
                members: vec![i],
                label: r.label,
            })
            .collect()),
        Grouping::Patient => {
            let mut order: Vec<Group> = Vec::new();
            let mut by_id: HashMap<&str, usize> = HashMap::new();
            for (i, r) in manifest.records.iter().enumerate() {
                let g = *by_id.entry(&r.patient_id).or_insert_with(|| {
                    order.push(Group {
                        members: Vec::new(),
                        label: r.label,
                    });
                    order.len() - 1
                });
                if order[g].label != r.label {
                    return Err(Error::Split(format!(
                        "patient {} has slices of both classes; use grouping=slice",
                        r.patient_id
                    )));
                }
                order[g].members.push(i);
            }
            Ok(order)
        }
    }
}

/// Choose groups (earliest in `sizes` order first) whose sizes sum to exactly
/// `target`. On failure returns the closest reachable total.
fn exact_subset(sizes: &[usize], target: usize) -> std::result::Result<Vec<usize>, usize> {
    let total: usize = sizes.iter().sum();
    if target > total {
        return Err(total);
    }
    // reach[i][s]: sum s is reachable using groups i.. only
    let n = sizes.len();
    let mut reach = vec![vec![false; total + 1]; n + 1];
    reach[n][0] = true;
    for i in (0..n).rev() {
        for s in 0..=total {
            reach[i][s] = reach[i + 1][s] || (s >= sizes[i] && reach[i + 1][s - sizes[i]]);
        }
    }
    if !reach[0][target] {
        let nearest = (0..=total)
            .filter(|&s| reach[0][s])
            .min_by_key(|&s| (s.abs_diff(target), s))
            .unwrap_or(0);
        return Err(nearest);
    }
    let mut picked = Vec::new();
    let mut s = target;
    for i in 0..n {
        if s >= sizes[i] && reach[i + 1][s - sizes[i]] {
            picked.push(i);
            s -= sizes[i];
        }
    }
    debug_assert_eq!(s, 0);
    Ok(picked)
}

/// Hold out `test_per_class` slices per class, then carve the validation
/// set out of what remains. Deterministic given `spec.seed`.
pub fn split_dataset(manifest: &Manifest, spec: &SplitSpec) -> Result<Split> {
    if !(0.0..1.0).contains(&spec.validation_fraction) {
        return Err(Error::Config(format!(
            "validation_fraction {} outside [0, 1)",
            spec.validation_fraction
        )));
    }
    let all = groups(manifest, spec.grouping)?;
    let mut test_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut train_idx = Vec::new();
    let mut train_counts = [0usize; 2];
    for label in Label::ALL {
        let mut class: Vec<&Group> = all.iter().filter(|g| g.label == label).collect();
        let available: usize = class.iter().map(|g| g.members.len()).sum();
        if spec.test_per_class > available {
            return Err(Error::Split(format!(
                "requested {} test slices of class {label}, only {available} available",
                spec.test_per_class
            )));
        }
        let mut rng = stream(spec.seed, Stream::Split, &[label.index() as u64]);
        class.shuffle(&mut rng);
        let sizes: Vec<usize> = class.iter().map(|g| g.members.len()).collect();
        let picked = exact_subset(&sizes, spec.test_per_class).map_err(|nearest| {
            Error::Split(format!(
                "cannot take exactly {} test slices of class {label} with {} grouping; nearest feasible count is {nearest}",
                spec.test_per_class, spec.grouping
            ))
        })?;
        let mut in_test = vec![false; class.len()];
        for &i in &picked {
            in_test[i] = true;
            test_idx.extend_from_slice(&class[i].members);
        }
        let rest: Vec<&Group> = class
            .iter()
            .zip(&in_test)
            .filter(|(_, &t)| !t)
            .map(|(g, _)| *g)
            .collect();
        let n_val = (spec.validation_fraction * rest.len() as f64).round() as usize;
        for (i, g) in rest.iter().enumerate() {
            if i < n_val {
                val_idx.extend_from_slice(&g.members);
            } else {
                train_counts[label.index()] += g.members.len();
                train_idx.extend_from_slice(&g.members);
            }
        }
    }
    let max_balanced = train_counts[0].min(train_counts[1]);
    let train_per_class = match spec.train_per_class {
        Some(n) if n > max_balanced => {
            return Err(Error::Split(format!(
                "requested {n} training slices per class per epoch, training pool holds {} nondeleted and {} codeleted",
                train_counts[0], train_counts[1]
            )))
        }
        Some(n) => n,
        None => max_balanced,
    };
    if train_per_class == 0 {
        return Err(Error::Split(
            "training pool is empty for at least one class".into(),
        ));
    }
    let collect = |mut idx: Vec<usize>| -> Vec<SliceRecord> {
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| manifest.records[i].clone())
            .collect()
    };
    Ok(Split {
        test: collect(test_idx),
        train: collect(train_idx),
        validation: collect(val_idx),
        train_per_class,
    })
}

/// Draw exactly `per_class` items of each class without replacement. The
/// draw depends only on `(master_seed, epoch)`.
pub fn balanced_sample<T: Labeled + Clone>(
    pool: &[T],
    per_class: usize,
    epoch: usize,
    master_seed: u64,
) -> Result<Vec<T>> {
    let mut rng = stream(master_seed, Stream::Balanced, &[epoch as u64]);
    let mut out = Vec::with_capacity(2 * per_class);
    for label in Label::ALL {
        let members: Vec<&T> = pool.iter().filter(|t| t.label() == label).collect();
        if members.len() < per_class {
            return Err(Error::Split(format!(
                "balanced sampling needs {per_class} items of class {label}, pool has {}",
                members.len()
            )));
        }
        let mut chosen = index::sample(&mut rng, members.len(), per_class).into_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| members[i].clone()));
    }
    Ok(out)
}
