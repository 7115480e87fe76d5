//! Relation inference given attributed objects.
//!
//! With locations fixed, the posterior over relation sets factorizes over
//! (ordered pair, type) edges: each edge is included independently with
//! log-odds `ln(ρ / (1 − ρ)) − λ_d · E_d(e)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{relation_energy, relation_energy_literal};
use crate::error::{Error, Result};
use crate::grammar::{GrammarSpec, ObjectInstance, Relation};

/// Temperatures at or below this end a Gibbs run with a zero-temperature
/// (argmax) sweep.
pub const FREEZE_TEMPERATURE: f64 = 0.05;

/// Every candidate edge with its posterior log-odds, in canonical order.
pub fn candidate_edges(
    objects: &[ObjectInstance],
    spec: &GrammarSpec,
) -> Result<Vec<(Relation, f64)>> {
    let energy = if spec.options.paper_literal_sign {
        relation_energy_literal
    } else {
        relation_energy
    };
    let mut out = Vec::with_capacity(spec.relations.len() * objects.len() * objects.len());
    for (kind, ty) in spec.relations.iter().enumerate() {
        let prior_logit = (ty.prior / (1.0 - ty.prior)).ln();
        for subject in 0..objects.len() {
            for object in 0..objects.len() {
                if subject == object {
                    continue;
                }
                let rel = Relation::new(kind, subject, object);
                let e = energy(&rel, objects, &spec.relations)?;
                out.push((rel, prior_logit - spec.weights.relation * e));
            }
        }
    }
    out.sort_by_key(|e| e.0);
    Ok(out)
}

/// Exact MAP relation set: an edge is included iff its log-odds is
/// strictly positive.
pub fn infer_relations_map(
    objects: &[ObjectInstance],
    spec: &GrammarSpec,
) -> Result<Vec<Relation>> {
    if objects.is_empty() {
        return Err(Error::InvalidArgument(
            "relation inference needs at least one object".into(),
        ));
    }
    Ok(candidate_edges(objects, spec)?
        .into_iter()
        .filter(|(_, lo)| *lo > 0.0)
        .map(|(r, _)| r)
        .collect())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gibbs sampler over edge-inclusion indicators.
pub struct RelationGibbs {
    edges: Vec<(Relation, f64)>,
    state: Vec<bool>,
}

impl RelationGibbs {
    pub fn new<R: Rng + ?Sized>(
        objects: &[ObjectInstance],
        spec: &GrammarSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let edges = candidate_edges(objects, spec)?;
        let state = edges.iter().map(|_| rng.random::<bool>()).collect();
        Ok(Self { edges, state })
    }

    /// Resamples every indicator from its conditional at `temperature`.
    /// A temperature of zero or less takes the conditional argmax, with
    /// ties excluded.
    pub fn sweep<R: Rng + ?Sized>(&mut self, temperature: f64, rng: &mut R) {
        for ((_, lo), on) in self.edges.iter().zip(self.state.iter_mut()) {
            *on = if temperature <= 0.0 {
                *lo > 0.0
            } else {
                rng.random::<f64>() < sigmoid(lo / temperature)
            };
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (Relation, bool)> + '_ {
        self.edges
            .iter()
            .zip(&self.state)
            .map(|((r, _), &on)| (*r, on))
    }

    pub fn relations(&self) -> Vec<Relation> {
        self.edges().filter(|(_, on)| *on).map(|(r, _)| r).collect()
    }
}

/// Geometric cooling from 1 to 0.01 over `sweeps` sweeps.
pub fn default_schedule(sweeps: usize) -> Vec<f64> {
    let n = sweeps.max(1);
    if n == 1 {
        return vec![0.01];
    }
    let ratio = 0.01f64.powf(1.0 / (n - 1) as f64);
    (0..n).map(|k| ratio.powi(k as i32)).collect()
}

/// Annealed Gibbs search for the MAP relation set. Sweep `k` runs at
/// `schedule[k · len / sweeps]`; if the last temperature is at most
/// [`FREEZE_TEMPERATURE`] a final argmax sweep freezes the state.
pub fn infer_relations_gibbs(
    objects: &[ObjectInstance],
    spec: &GrammarSpec,
    sweeps: usize,
    schedule: &[f64],
    seed: u64,
) -> Result<Vec<Relation>> {
    if sweeps == 0 {
        return Err(Error::InvalidArgument(
            "gibbs needs at least one sweep".into(),
        ));
    }
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty temperature schedule".into()));
    }
    if objects.is_empty() {
        return Err(Error::InvalidArgument(
            "relation inference needs at least one object".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gibbs = RelationGibbs::new(objects, spec, &mut rng)?;
    let mut last = schedule[0];
    for k in 0..sweeps {
        last = schedule[k * schedule.len() / sweeps];
        gibbs.sweep(last, &mut rng);
    }
    if last <= FREEZE_TEMPERATURE {
        gibbs.sweep(0.0, &mut rng);
    }
    Ok(gibbs.relations())
}
