use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{accuracy, load_domains, no_hook, train_all};
use crate::data::LabeledSet;
use crate::error::{Error, Result};

pub const DEFAULT_HOLDOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    /// Mean held-out source accuracy over the config's seeds.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub chosen: f64,
    pub table: Vec<LambdaScore>,
}

/// Highest score wins; ties go to the smaller lambda.
pub fn select_lambda(table: &[LambdaScore]) -> Result<f64> {
    table
        .iter()
        .copied()
        .reduce(|best, c| {
            if c.score > best.score || (c.score == best.score && c.lambda < best.lambda) {
                c
            } else {
                best
            }
        })
        .map(|b| b.lambda)
        .ok_or_else(|| Error::Config("lambda grid is empty".into()))
}

/// Shuffles the source set with `seed` and keeps the last `fraction` of it
/// for validation.
pub fn split_source(set: &LabeledSet, fraction: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((set.len() as f64 * fraction).round() as usize).clamp(1, set.len().saturating_sub(1));
    if held == 0 || held >= set.len() {
        return Err(Error::Data(format!("source set of {} is too small to split", set.len())));
    }
    let (train, val) = idx.split_at(set.len() - held);
    Ok((set.subset(train)?, set.subset(val)?))
}

/// Trains one run per candidate on a source training split (plus the
/// unlabeled target set) and scores it by accuracy on the held-out source
/// split.
pub fn grid_search_lambda(cfg: &ExperimentConfig, candidates: &[f64], holdout: f64) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let (source, target) = load_domains(cfg)?;
    let (train, val) = split_source(&source, holdout, cfg.seeds[0])?;
    let mut table = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let mut c = cfg.clone();
        c.lambda = lambda;
        c.check()?;
        let runs = train_all(&c, &train, &target, &no_hook)?;
        let mut total = 0.0;
        for r in &runs {
            total += accuracy(&r.model, &val, true)?;
        }
        table.push(LambdaScore {
            lambda,
            score: total / runs.len() as f64,
        });
    }
    Ok(GridResult {
        chosen: select_lambda(&table)?,
        table,
    })
}
