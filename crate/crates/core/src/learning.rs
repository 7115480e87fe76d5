//! Maximum-likelihood fitting of the grammar: empirical branch
//! distributions and contrastive-divergence updates of the energy weights.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::term_sums;
use crate::error::{Error, Result};
use crate::grammar::{ConfigEntry, GrammarSpec, ParseGraph, SizeName, Weights};
use crate::mcmc::{ChainConfig, LocationChain};

/// Relation priors are clamped into `[RHO_MIN, 1 − RHO_MIN]`.
pub const RHO_MIN: f64 = 1e-4;

/// Empirical branch distributions of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchProbs {
    /// `(object count, probability)`, ascending by count.
    pub configs: Vec<(usize, f64)>,
    pub labels: BTreeMap<usize, f64>,
    pub sizes: BTreeMap<SizeName, f64>,
    /// Indexed by relation type.
    pub relation_priors: Vec<f64>,
}

pub fn fit_branch_probs(dataset: &[ParseGraph], relation_types: usize) -> Result<BranchProbs> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("empty dataset"));
    }
    let mut configs: BTreeMap<usize, usize> = BTreeMap::new();
    let mut labels: BTreeMap<usize, usize> = BTreeMap::new();
    let mut sizes: BTreeMap<SizeName, usize> = BTreeMap::new();
    let mut rel_counts = vec![0usize; relation_types];
    let mut pairs = 0usize;
    let mut objects = 0usize;

    for g in dataset {
        *configs.entry(g.configuration).or_default() += 1;
        for o in &g.objects {
            *labels.entry(o.label).or_default() += 1;
            *sizes.entry(o.size).or_default() += 1;
        }
        objects += g.objects.len();
        let n = g.objects.len();
        pairs += n * n.saturating_sub(1);
        for r in &g.relations {
            let slot = rel_counts
                .get_mut(r.kind)
                .ok_or(Error::UnknownRelationType {
                    index: r.kind,
                    count: relation_types,
                })?;
            *slot += 1;
        }
    }

    let normalize = |count: usize, total: usize| count as f64 / total as f64;
    Ok(BranchProbs {
        configs: configs
            .into_iter()
            .map(|(n, c)| (n, normalize(c, dataset.len())))
            .collect(),
        labels: labels
            .into_iter()
            .map(|(l, c)| (l, normalize(c, objects)))
            .collect(),
        sizes: sizes
            .into_iter()
            .map(|(s, c)| (s, normalize(c, objects)))
            .collect(),
        relation_priors: rel_counts
            .into_iter()
            .map(|c| {
                let rho = if pairs == 0 {
                    0.0
                } else {
                    c as f64 / pairs as f64
                };
                rho.clamp(RHO_MIN, 1.0 - RHO_MIN)
            })
            .collect(),
    })
}

impl BranchProbs {
    /// Writes these distributions into `spec`. Catalog labels and sizes the
    /// data never used get probability zero.
    pub fn apply_to(&self, spec: &mut GrammarSpec) -> Result<()> {
        if self.relation_priors.len() != spec.relations.len() {
            return Err(Error::InvalidArgument(format!(
                "fitted {} relation priors for a grammar with {} relation types",
                self.relation_priors.len(),
                spec.relations.len()
            )));
        }
        if let Some(l) = self.labels.keys().find(|&&l| l >= spec.catalog.len()) {
            return Err(Error::UnknownSymbol(format!("label {l}")));
        }
        if let Some(s) = self.sizes.keys().find(|&&s| spec.size(s).is_none()) {
            return Err(Error::UnknownSymbol(format!("size {s:?}")));
        }
        spec.configs = self
            .configs
            .iter()
            .map(|&(objects, prob)| ConfigEntry { objects, prob })
            .collect();
        for entry in &mut spec.catalog {
            entry.prob = self.labels.get(&entry.label).copied().unwrap_or(0.0);
        }
        for entry in &mut spec.sizes {
            entry.prob = self.sizes.get(&entry.name).copied().unwrap_or(0.0);
        }
        for (ty, &rho) in spec.relations.iter_mut().zip(&self.relation_priors) {
            ty.prior = rho;
        }
        Ok(())
    }
}

/// Mean `[relation, camera, height]` term sums over a set of graphs.
pub fn mean_terms(graphs: &[ParseGraph], spec: &GrammarSpec) -> Result<[f64; 3]> {
    if graphs.is_empty() {
        return Err(Error::EmptyInput("no graphs to average"));
    }
    let mut acc = [0.0; 3];
    for g in graphs {
        let s = term_sums(g, spec)?;
        acc[0] += s.relation;
        acc[1] += s.camera;
        acc[2] += s.height;
    }
    let n = graphs.len() as f64;
    Ok(acc.map(|v| v / n))
}

/// Projected update `λ_u ← max(0, λ_u + α (⟨E_u⟩_model − ⟨E_u⟩_data))`.
pub fn cd_update(
    weights: Weights,
    data_means: [f64; 3],
    model_means: [f64; 3],
    alpha: f64,
) -> Weights {
    let w = weights.as_array();
    Weights::from_array(std::array::from_fn(|u| {
        (w[u] + alpha * (model_means[u] - data_means[u])).max(0.0)
    }))
}

pub fn cd_step(
    weights: Weights,
    data_batch: &[ParseGraph],
    model_samples: &[ParseGraph],
    spec: &GrammarSpec,
    alpha: f64,
) -> Result<Weights> {
    let data = mean_terms(data_batch, spec)?;
    let model = mean_terms(model_samples, spec)?;
    Ok(cd_update(weights, data, model, alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Negative-phase chains per iteration; also the data batch size.
    pub sample_count: usize,
    pub chain_steps_per_iter: usize,
    /// Keep one negative chain per data scene alive across iterations
    /// instead of restarting from the data batch. Either way a negative
    /// shares its objects and relations with the data scene it is compared
    /// against, so only the layout is contrasted.
    pub persistent: bool,
    /// Average the weights over this trailing fraction of iterations
    /// (0 returns the last iterate).
    pub tail_average: f64,
    pub seed: u64,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 500,
            sample_count: 64,
            chain_steps_per_iter: 50,
            persistent: true,
            tail_average: 0.0,
            seed: 0,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if self.sample_count == 0 || self.chain_steps_per_iter == 0 {
            return Err(Error::InvalidArgument(
                "sample count and chain steps per iteration must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tail_average) {
            return Err(Error::InvalidArgument(
                "tail_average must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Weights after this iteration's update.
    pub weights: Weights,
    pub data_means: [f64; 3],
    pub model_means: [f64; 3],
    /// `model_means − data_means`.
    pub gradient: [f64; 3],
}

pub type TrainTrace = Vec<TrainRecord>;

/// Contrastive-divergence training of the energy weights, starting from
/// `spec.weights`. Each iteration draws a data batch uniformly with
/// replacement, advances the negative chains under the current weights,
/// and applies [`cd_update`].
pub fn train_weights(
    dataset: &[ParseGraph],
    spec: &GrammarSpec,
    cfg: &CdConfig,
    chain: &ChainConfig,
) -> Result<(Weights, TrainTrace)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("empty dataset"));
    }
    cfg.validate()?;
    chain.validate()?;
    let mut weights = spec.weights;
    let mut trace = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok((weights, trace));
    }

    let data_terms: Vec<[f64; 3]> = dataset
        .iter()
        .map(|g| term_sums(g, spec).map(|s| [s.relation, s.camera, s.height]))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step_cfg = ChainConfig {
        steps: cfg.chain_steps_per_iter,
        burn_in: 0,
        ..chain.clone()
    };
    let mut states: Vec<ParseGraph> = if cfg.persistent {
        dataset.to_vec()
    } else {
        Vec::new()
    };

    let tail_start = cfg.iterations - ((cfg.iterations as f64 * cfg.tail_average).round() as usize);
    let mut tail_sum = [0.0; 3];
    let mut tail_len = 0usize;

    for iteration in 0..cfg.iterations {
        let batch: Vec<usize> = (0..cfg.sample_count)
            .map(|_| rng.random_range(0..dataset.len()))
            .collect();
        let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.random()).collect();

        let current = weights;
        let advance = |g: ParseGraph, seed: u64| -> Result<ParseGraph> {
            let mut mh = LocationChain::with_weights(spec, g, current, seed)?;
            mh.run(&step_cfg);
            Ok(mh.into_graph())
        };
        let negatives: Vec<ParseGraph> = if cfg.persistent {
            // A scene drawn twice in one batch advances its chain once.
            let mut unique = batch.clone();
            unique.sort_unstable();
            unique.dedup();
            let advanced: Vec<ParseGraph> = unique
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| advance(states[i].clone(), seed))
                .collect::<Result<_>>()?;
            for (&i, g) in unique.iter().zip(advanced) {
                states[i] = g;
            }
            batch.iter().map(|&i| states[i].clone()).collect()
        } else {
            batch
                .par_iter()
                .zip(seeds)
                .map(|(&i, seed)| advance(dataset[i].clone(), seed))
                .collect::<Result<_>>()?
        };

        let mut data_means = [0.0; 3];
        for &i in &batch {
            for u in 0..3 {
                data_means[u] += data_terms[i][u];
            }
        }
        data_means = data_means.map(|v| v / batch.len() as f64);
        let model_means = mean_terms(&negatives, spec)?;

        weights = cd_update(weights, data_means, model_means, cfg.learning_rate);
        if iteration >= tail_start {
            for (acc, w) in tail_sum.iter_mut().zip(weights.as_array()) {
                *acc += w;
            }
            tail_len += 1;
        }
        trace.push(TrainRecord {
            iteration,
            weights,
            data_means,
            model_means,
            gradient: std::array::from_fn(|u| model_means[u] - data_means[u]),
        });
    }

    if tail_len > 0 && cfg.tail_average > 0.0 {
        weights = Weights::from_array(tail_sum.map(|v| v / tail_len as f64));
    }
    Ok((weights, trace))
}

/// Writes the trace as CSV with one row per iteration.
pub fn write_train_trace_csv(path: impl AsRef<Path>, trace: &[TrainRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "lambda_d",
        "lambda_c",
        "lambda_h",
        "data_relation",
        "data_camera",
        "data_height",
        "model_relation",
        "model_camera",
        "model_height",
    ])?;
    for r in trace {
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.weights.as_array().iter().map(|v| v.to_string()));
        row.extend(r.data_means.iter().map(|v| v.to_string()));
        row.extend(r.model_means.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
