use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, ScenarioSpec};
use crate::error::{Error, Result};

/// Partitions record indices into `k` folds, balancing every class.
///
/// Within a class the records are shuffled under `seed` and dealt round
/// robin; the starting fold rotates between classes so that fold sizes also
/// stay within one of each other. Each fold's indices are sorted.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::config("k-fold needs k >= 1"));
    }
    if let Some(r) = ds.records.iter().find(|r| r.label.is_none()) {
        return Err(Error::data(format!("sample `{}` is unlabeled; cannot stratify", r.sample_id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for label in ds.labels() {
        let mut idx: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.records[i].label.as_deref() == Some(label.as_str()))
            .collect();
        if idx.len() < k {
            return Err(Error::data(format!(
                "class `{label}` has {} samples, fewer than k = {k}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Known-class train/test data plus the withheld (unknown) classes.
#[derive(Clone, Debug)]
pub struct ScenarioSplit {
    pub train_known: Dataset,
    pub test_known: Dataset,
    pub withheld: Dataset,
}

/// Removes withheld classes entirely, then holds out fold `test_fold` of a
/// stratified `folds`-fold split of the known classes. With `folds == 1`
/// every known sample is used for training.
pub fn scenario_split(ds: &Dataset, spec: &ScenarioSpec, folds: usize, test_fold: usize, seed: u64) -> Result<ScenarioSplit> {
    let present = ds.labels();
    for c in &spec.classes {
        if !present.contains(&c.name) {
            return Err(Error::config(format!("scenario class `{}` is not present in the data", c.name)));
        }
    }
    if test_fold >= folds.max(1) {
        return Err(Error::config(format!("test fold {test_fold} out of range for {folds} folds")));
    }
    let unknown = spec.unknown_names();
    let known = spec.known_names();
    let withheld = ds.filter(|r| r.label.as_ref().is_some_and(|l| unknown.contains(l)));
    let known_ds = ds.filter(|r| r.label.as_ref().is_some_and(|l| known.contains(l)));

    let (train_known, test_known) = if folds <= 1 {
        (known_ds.clone(), known_ds.filter(|_| false))
    } else {
        let parts = stratified_kfold(&known_ds, folds, seed)?;
        let test: std::collections::HashSet<usize> = parts[test_fold].iter().copied().collect();
        let mut i = 0;
        let train = known_ds.filter(|_| {
            i += 1;
            !test.contains(&(i - 1))
        });
        let mut j = 0;
        let held = known_ds.filter(|_| {
            j += 1;
            test.contains(&(j - 1))
        });
        (train, held)
    };
    Ok(ScenarioSplit {
        train_known,
        test_known,
        withheld,
    })
}
