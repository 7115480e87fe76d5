use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy;
use crate::error::{Error, Result};
use crate::grammar::{ensure_valid, GrammarSpec, ParseGraph, Weights};

/// Full recomputation interval for drift checks on the tracked energy.
pub const RESYNC_INTERVAL: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Total MH steps, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    pub sigma_xy: f64,
    pub sigma_z: f64,
    /// Degrees.
    pub sigma_theta: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            burn_in: 1000,
            sigma_xy: 0.3,
            sigma_z: 0.1,
            sigma_theta: 10.0,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn with_steps(mut self, steps: usize, burn_in: usize) -> Self {
        self.steps = steps;
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("sigma_xy", self.sigma_xy),
            ("sigma_z", self.sigma_z),
            ("sigma_theta", self.sigma_theta),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidChain(format!(
                    "{name} = {s} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// What happened at one MH step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub object: usize,
    pub energy_before: f64,
    pub energy_proposed: f64,
    pub accepted: bool,
    /// Tracked total energy after the step.
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChainSummary {
    pub acceptance_rate: f64,
    /// Largest gap seen between the incrementally tracked energy and a full
    /// recomputation.
    pub max_drift: f64,
}

/// Single-site Metropolis–Hastings over object locations and rotations.
///
/// Ground-plane moves reflect at the histogram bounds, which bound the
/// model's support. An object that starts outside the bounds (e.g. placed
/// by an edit) moves freely on that axis until it re-enters.
pub struct LocationChain<'a> {
    spec: &'a GrammarSpec,
    weights: Weights,
    graph: ParseGraph,
    incidence: Vec<Vec<usize>>,
    energy: f64,
    rng: ChaCha8Rng,
    steps_done: usize,
    max_drift: f64,
}

impl<'a> LocationChain<'a> {
    pub fn new(spec: &'a GrammarSpec, graph: ParseGraph, seed: u64) -> Result<Self> {
        Self::with_weights(spec, graph, spec.weights, seed)
    }

    pub fn with_weights(
        spec: &'a GrammarSpec,
        graph: ParseGraph,
        weights: Weights,
        seed: u64,
    ) -> Result<Self> {
        ensure_valid(spec, &graph)?;
        let incidence = graph.incidence();
        let mut chain = Self {
            spec,
            weights,
            graph,
            incidence,
            energy: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps_done: 0,
            max_drift: 0.0,
        };
        chain.energy = chain.full_energy();
        Ok(chain)
    }

    fn full_energy(&self) -> f64 {
        let sums =
            energy::term_sums(&self.graph, self.spec).expect("graph validated at construction");
        let w = &self.weights;
        w.relation * sums.relation
            + w.camera * sums.camera
            + w.height * sums.height
            + self.spec.options.overlap_weight * sums.overlap
    }

    pub fn graph(&self) -> &ParseGraph {
        &self.graph
    }

    pub fn into_graph(self) -> ParseGraph {
        self.graph
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    pub fn set_weights(&mut self, weights: Weights) {
        self.weights = weights;
        self.energy = self.full_energy();
    }

    /// Recomputes the energy from scratch and returns the drift it corrected.
    pub fn resync(&mut self) -> f64 {
        let full = self.full_energy();
        let drift = (full - self.energy).abs();
        self.max_drift = self.max_drift.max(drift);
        self.energy = full;
        drift
    }

    /// One proposal at `temperature`; accepted with probability
    /// `min(1, exp((E_old − E_new) / T))`.
    pub fn step(&mut self, cfg: &ChainConfig, temperature: f64) -> StepRecord {
        let step = self.steps_done;
        self.steps_done += 1;
        let energy_before = self.energy;

        let n = self.graph.objects.len();
        if n == 0 {
            return StepRecord {
                step,
                object: 0,
                energy_before,
                energy_proposed: energy_before,
                accepted: false,
                energy: energy_before,
            };
        }

        let i = self.rng.random_range(0..n);
        let (_, before) = self.local(i);
        let saved = self.graph.objects[i].clone();

        let gauss = |rng: &mut ChaCha8Rng, sigma: f64| {
            if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            }
        };
        let bounds = self.spec.histogram.bounds;
        let dx = gauss(&mut self.rng, cfg.sigma_xy);
        let dy = gauss(&mut self.rng, cfg.sigma_xy);
        let dz = gauss(&mut self.rng, cfg.sigma_z);
        let dtheta = gauss(&mut self.rng, cfg.sigma_theta);
        {
            let o = &mut self.graph.objects[i];
            o.location.x = propose_axis(o.location.x, dx, bounds.x_min, bounds.x_max);
            o.location.y = propose_axis(o.location.y, dy, bounds.y_min, bounds.y_max);
            o.location.z += dz;
            o.rotation = wrap_degrees(o.rotation + dtheta);
        }
        let (_, after) = self.local(i);
        let delta = after - before;
        let energy_proposed = energy_before + delta;

        let accepted = delta <= 0.0 || {
            let u: f64 = self.rng.random();
            temperature > 0.0 && u < (-delta / temperature).exp()
        };
        if accepted {
            self.energy = energy_proposed;
        } else {
            self.graph.objects[i] = saved;
        }

        if self.steps_done.is_multiple_of(RESYNC_INTERVAL) {
            self.resync();
        }

        StepRecord {
            step,
            object: i,
            energy_before,
            energy_proposed,
            accepted,
            energy: self.energy,
        }
    }

    fn local(&self, i: usize) -> (energy::TermSums, f64) {
        energy::local_sums(
            self.spec,
            &self.weights,
            &self.graph.objects,
            &self.graph.relations,
            &self.incidence[i],
            i,
        )
    }

    /// Runs `cfg.steps` steps at temperature 1, calling `observe` after each.
    pub fn run_observed(
        &mut self,
        cfg: &ChainConfig,
        mut observe: impl FnMut(&StepRecord, &ParseGraph),
    ) -> ChainSummary {
        let mut accepted = 0usize;
        let mut counted = 0usize;
        for s in 0..cfg.steps {
            let rec = self.step(cfg, 1.0);
            if s >= cfg.burn_in {
                counted += 1;
                accepted += rec.accepted as usize;
            }
            observe(&rec, &self.graph);
        }
        if cfg.steps > 0 {
            self.resync();
        }
        ChainSummary {
            acceptance_rate: if counted == 0 {
                0.0
            } else {
                accepted as f64 / counted as f64
            },
            max_drift: self.max_drift,
        }
    }

    pub fn run(&mut self, cfg: &ChainConfig) -> ChainSummary {
        self.run_observed(cfg, |_, _| {})
    }

    /// `steps` proposals with the temperature decaying geometrically from
    /// `t_start` to `t_end`.
    pub fn anneal(&mut self, cfg: &ChainConfig, steps: usize, t_start: f64, t_end: f64) {
        if steps == 0 {
            return;
        }
        let ratio = if steps > 1 {
            (t_end / t_start).powf(1.0 / (steps - 1) as f64)
        } else {
            1.0
        };
        let mut t = t_start;
        for _ in 0..steps {
            self.step(cfg, t);
            t *= ratio;
        }
        self.resync();
    }
}

fn propose_axis(current: f64, delta: f64, lo: f64, hi: f64) -> f64 {
    if current >= lo && current <= hi {
        reflect(current + delta, lo, hi)
    } else {
        current + delta
    }
}

/// Folds `v` back into `[lo, hi]` by mirror reflection at the walls.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if v >= lo && v <= hi {
        return v;
    }
    let span = hi - lo;
    let t = (v - lo).rem_euclid(2.0 * span);
    let folded = if t > span { 2.0 * span - t } else { t };
    (lo + folded).clamp(lo, hi)
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_degrees(theta: f64) -> f64 {
    let r = theta.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Runs the location chain on `g` and returns the final state together with
/// the post-burn-in acceptance rate. Relations and attributes are untouched.
pub fn sample_locations_mh(
    g: &ParseGraph,
    spec: &GrammarSpec,
    cfg: &ChainConfig,
) -> Result<(ParseGraph, f64)> {
    cfg.validate()?;
    let mut chain = LocationChain::new(spec, g.clone(), cfg.seed)?;
    let summary = chain.run(cfg);
    Ok((chain.into_graph(), summary.acceptance_rate))
}

/// Like [`sample_locations_mh`] but also returns every step record.
pub fn sample_locations_traced(
    g: &ParseGraph,
    spec: &GrammarSpec,
    cfg: &ChainConfig,
) -> Result<(ParseGraph, ChainSummary, Vec<StepRecord>)> {
    cfg.validate()?;
    let mut chain = LocationChain::new(spec, g.clone(), cfg.seed)?;
    let mut trace = Vec::with_capacity(cfg.steps);
    let summary = chain.run_observed(cfg, |rec, _| trace.push(*rec));
    Ok((chain.into_graph(), summary, trace))
}

/// Writes `step,energy,accepted` rows.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[StepRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "energy", "accepted"])?;
    for rec in trace {
        w.write_record([
            rec.step.to_string(),
            rec.energy.to_string(),
            (rec.accepted as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Settings for conditional re-layout with relations and attributes held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    pub chain: ChainConfig,
    /// Cooling steps run after the chain.
    pub anneal_steps: usize,
    pub final_temperature: f64,
    /// Zero-temperature steps after cooling, with proposal widths scaled by
    /// `polish_scale`. Only non-increasing moves are accepted.
    pub polish_steps: usize,
    pub polish_scale: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            anneal_steps: 4000,
            final_temperature: 0.01,
            polish_steps: 4000,
            polish_scale: 0.1,
        }
    }
}

/// Draws a fresh layout for `g`'s objects under the energy while keeping
/// labels, sizes and the relation set fixed: locations restart from the
/// location prior, the chain equilibrates, cools, and finishes with a short
/// greedy refinement.
pub fn resample_layout(
    g: &ParseGraph,
    spec: &GrammarSpec,
    cfg: &ResampleConfig,
    seed: u64,
) -> Result<ParseGraph> {
    cfg.chain.validate()?;
    if !(cfg.final_temperature > 0.0 && cfg.final_temperature <= 1.0) {
        return Err(Error::InvalidChain(format!(
            "final temperature {} not in (0, 1]",
            cfg.final_temperature
        )));
    }
    if !(cfg.polish_scale > 0.0 && cfg.polish_scale.is_finite()) {
        return Err(Error::InvalidChain(format!(
            "polish scale {} must be positive",
            cfg.polish_scale
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fresh = g.clone();
    for o in &mut fresh.objects {
        scatter(o, spec, &mut rng);
    }
    let mut chain = LocationChain::new(spec, fresh, rng.random())?;
    chain.run(&cfg.chain);
    chain.anneal(&cfg.chain, cfg.anneal_steps, 1.0, cfg.final_temperature);
    let fine = ChainConfig {
        sigma_xy: cfg.chain.sigma_xy * cfg.polish_scale,
        sigma_z: cfg.chain.sigma_z * cfg.polish_scale,
        sigma_theta: cfg.chain.sigma_theta * cfg.polish_scale,
        ..cfg.chain.clone()
    };
    for _ in 0..cfg.polish_steps {
        chain.step(&fine, 0.0);
    }
    chain.resync();
    Ok(chain.into_graph())
}

/// Places an object at a location-prior draw, resting on the ground, with a
/// uniform rotation.
pub(crate) fn scatter<R: Rng + ?Sized>(
    o: &mut crate::grammar::ObjectInstance,
    spec: &GrammarSpec,
    rng: &mut R,
) {
    let (x, y) = spec.histogram.sample_location(rng);
    o.location = nalgebra::Vector3::new(x, y, o.half_extent);
    o.rotation = wrap_degrees(rng.random::<f64>() * 360.0);
}
