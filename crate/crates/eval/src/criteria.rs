//! One runner per acceptance criterion. Each returns an [`Outcome`] carrying
//! the measurement, the threshold and the wall time.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use saog_core::dataset::{
    decode_parse_graph_compact, encode_parse_graph_compact, geometric_relations, synth_dataset,
};
use saog_core::energy::{
    camera_energy, fit_location_histogram, height_energy, relation_energy, term_sums, total_energy,
    LocationHistogram,
};
use saog_core::grammar::{
    sample_parse_graph, sample_structure, GrammarSpec, ObjectInstance, ParseGraph, Relation,
    RelationName, RelationType, SizeName, Weights,
};
use saog_core::learning::{fit_branch_probs, mean_terms, train_weights, CdConfig};
use saog_core::mcmc::{
    default_schedule, infer_relations_gibbs, infer_relations_map, resample_layout,
    sample_locations_traced, ChainConfig, LocationChain, ResampleConfig,
};
use saog_core::projection::{label_embedding, rasterize_instance_map, rotation_bin, CHANNELS};

use crate::golden::{fixture_scenes, golden_digests, map_digest};
use crate::report::{Outcome, Status};

fn timed(
    id: &'static str,
    budget_s: u64,
    f: impl FnOnce() -> Result<(bool, String), String>,
) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_s);
    match result {
        Ok((ok, detail)) => Outcome::measured(id, ok, detail, elapsed, budget),
        Err(e) => Outcome::measured(id, false, format!("error: {e}"), elapsed, budget),
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn small(label: usize, x: f64, y: f64, z: f64) -> ObjectInstance {
    ObjectInstance {
        label,
        size: SizeName::Small,
        half_extent: 0.35,
        location: nalgebra::Vector3::new(x, y, z),
        rotation: 0.0,
    }
}

/// Exact hinge, height and histogram examples.
pub fn energy_suite() -> Outcome {
    timed("energy-suite", 1, || {
        let types = vec![RelationType {
            name: RelationName::Right,
            direction: nalgebra::Vector3::x(),
            prior: 0.25,
        }];
        let pair = |dx: f64, dy: f64| vec![small(0, dx, dy, 0.35), small(1, 0.0, 0.0, 0.35)];
        let rel = Relation::new(0, 0, 1);
        let e = |dx, dy| relation_energy(&rel, &pair(dx, dy), &types).map_err(err);

        let uniform = LocationHistogram::uniform((-3.0, 3.0, -3.0, 3.0), 32, 1e-6).map_err(err)?;
        let point = fit_location_histogram(&[(0.1, 0.1)], (0.0, 1.0, 0.0, 1.0), 4, 0.0, 1e-6)
            .map_err(err)?;
        let point_bin = point.bin_of(0.1, 0.1).unwrap_or(usize::MAX);

        let spec = GrammarSpec::clevr_default();
        let g = ParseGraph::new(
            vec![
                small(0, 1.0, 0.0, 0.6),
                small(5, -1.0, 0.5, 0.2),
                small(9, 0.0, 9.0, 0.35),
            ],
            vec![Relation::new(0, 0, 1), Relation::new(1, 1, 2)],
        );
        let base = total_energy(&g, &spec).map_err(err)?;
        let mut doubled = spec.clone();
        doubled.weights = Weights::from_array(spec.weights.as_array().map(|w| 2.0 * w));
        let twice = total_energy(&g, &doubled).map_err(err)?;
        let mut zero = spec.clone();
        zero.weights = Weights::zero();

        let checks = [
            ("hinge satisfied", e(2.0, 0.0)? == 0.0),
            ("hinge violated", e(-1.5, 0.0)? == 1.5),
            ("hinge orthogonal", e(0.0, 3.0)? == 0.0),
            (
                "height resting",
                height_energy(&small(0, 0.0, 0.0, 0.35)) == 0.0,
            ),
            (
                "height floating",
                (height_energy(&small(0, 0.0, 0.0, 0.85)) - 0.5).abs() < 1e-12,
            ),
            (
                "height sunk",
                (height_energy(&small(0, 0.0, 0.0, 0.05)) - 0.3).abs() < 1e-12,
            ),
            (
                "uniform ln 1024",
                (camera_energy(&small(0, 0.4, -1.2, 0.35), &uniform) - 1024f64.ln()).abs() < 1e-9,
            ),
            (
                "outside floor",
                (camera_energy(&small(0, 9.0, 0.0, 0.35), &uniform) - 13.815510557964274).abs()
                    < 1e-12,
            ),
            (
                "zero weights",
                total_energy(&g, &zero).map_err(err)?.total == 0.0,
            ),
            (
                "linear in weights",
                twice.terms() == base.terms() && (twice.total - 2.0 * base.total).abs() < 1e-12,
            ),
            (
                "point mass",
                (point.masses[point_bin] - (1.0 - 15.0 * 1e-6)).abs() < 1e-12
                    && point
                        .masses
                        .iter()
                        .enumerate()
                        .all(|(i, &m)| i == point_bin || m == 1e-6),
            ),
        ];
        let failed: Vec<_> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        Ok((
            failed.is_empty(),
            if failed.is_empty() {
                format!("{}/{} exact checks", checks.len(), checks.len())
            } else {
                format!("failed: {}", failed.join(", "))
            },
        ))
    })
}

/// Exhaustive MAP over every subset of candidate edges, enumerated in Gray
/// code order so each step flips one edge.
pub fn brute_force_map(
    objects: &[ObjectInstance],
    spec: &GrammarSpec,
) -> saog_core::Result<Vec<Relation>> {
    let mut cands = Vec::new();
    for kind in 0..spec.relations.len() {
        for s in 0..objects.len() {
            for o in 0..objects.len() {
                if s != o {
                    cands.push(Relation::new(kind, s, o));
                }
            }
        }
    }
    assert!(cands.len() < 32, "too many candidate edges to enumerate");
    // Score change from adding edge k: its inclusion term replaces its
    // exclusion term.
    let mut gain = Vec::with_capacity(cands.len());
    for r in &cands {
        let rho = spec.relations[r.kind].prior;
        let e = relation_energy(r, objects, &spec.relations)?;
        gain.push((rho.ln() - spec.weights.relation * e) - (1.0 - rho).ln());
    }
    let (mut mask, mut score) = (0u32, 0.0f64);
    let (mut best_mask, mut best_score) = (0u32, 0.0f64);
    for step in 1u64..(1u64 << cands.len()) {
        let bit = step.trailing_zeros();
        mask ^= 1 << bit;
        if mask & (1 << bit) != 0 {
            score += gain[bit as usize];
        } else {
            score -= gain[bit as usize];
        }
        if score > best_score {
            best_score = score;
            best_mask = mask;
        }
    }
    let mut out: Vec<Relation> = cands
        .iter()
        .enumerate()
        .filter(|(k, _)| best_mask & (1 << k) != 0)
        .map(|(_, r)| *r)
        .collect();
    out.sort();
    Ok(out)
}

fn map_spec() -> GrammarSpec {
    let mut spec = GrammarSpec::clevr_default();
    for r in &mut spec.relations {
        r.prior = 0.7;
    }
    spec.weights.relation = 2.0;
    spec
}

fn random_layout(n: usize, rng: &mut ChaCha8Rng) -> Vec<ObjectInstance> {
    (0..n)
        .map(|i| {
            small(
                i,
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                0.35,
            )
        })
        .collect()
}

/// Exact MAP and annealed Gibbs against exhaustive enumeration.
pub fn map_oracle() -> Outcome {
    timed("map-oracle", 30, || {
        let spec = map_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(2718);
        let scenes: Vec<_> = (0..200)
            .map(|k| random_layout(2 + k % 3, &mut rng))
            .collect();
        let results: Vec<(bool, bool)> = scenes
            .par_iter()
            .enumerate()
            .map(|(k, objects)| {
                let truth = brute_force_map(objects, &spec)?;
                let exact = infer_relations_map(objects, &spec)?;
                let gibbs =
                    infer_relations_gibbs(objects, &spec, 60, &default_schedule(60), k as u64)?;
                Ok((exact == truth, gibbs == truth))
            })
            .collect::<saog_core::Result<_>>()
            .map_err(err)?;
        let exact = results.iter().filter(|r| r.0).count();
        let gibbs = results.iter().filter(|r| r.1).count();
        let ok = exact == 200 && gibbs as f64 >= 0.99 * 200.0;
        Ok((
            ok,
            format!("exact {exact}/200 (need 200), gibbs {gibbs}/200 (need >= 198)"),
        ))
    })
}

/// Laplace moment of a height-only chain, and the MH acceptance rule.
pub fn sampler() -> Outcome {
    timed("sampler", 60, || {
        let mut spec = GrammarSpec::clevr_default();
        spec.weights = Weights::new(0.0, 0.0, 1.0);
        let g = ParseGraph::new(vec![small(0, 0.0, 0.0, 0.35)], vec![]);
        let cfg = ChainConfig {
            steps: 205_000,
            burn_in: 5_000,
            sigma_z: 1.0,
            seed: 31,
            ..ChainConfig::default()
        };
        let mut chain = LocationChain::new(&spec, g, cfg.seed).map_err(err)?;
        let (mut sum, mut count, mut step) = (0.0, 0usize, 0usize);
        chain.run_observed(&cfg, |_, g| {
            if step >= cfg.burn_in {
                sum += (g.objects[0].location.z - g.objects[0].half_extent).abs();
                count += 1;
            }
            step += 1;
        });
        let mean = sum / count as f64;
        let moment_ok = (mean - 1.0).abs() <= 0.05;

        let full = GrammarSpec::clevr_default();
        let start = sample_parse_graph(&full, &ChainConfig::default().with_steps(100, 0), 4)
            .map_err(err)?;
        let trace_cfg = ChainConfig {
            seed: 12,
            ..ChainConfig::default().with_steps(50_000, 0)
        };
        let (_, _, trace) = sample_locations_traced(&start, &full, &trace_cfg).map_err(err)?;
        let downhill: Vec<_> = trace
            .iter()
            .filter(|r| r.energy_proposed <= r.energy_before)
            .collect();
        let rejected = downhill.iter().filter(|r| !r.accepted).count();
        Ok((
            moment_ok && rejected == 0 && !downhill.is_empty(),
            format!(
                "mean |h| = {mean:.4} over {count} samples (need 1 ± 0.05); {} downhill proposals, {rejected} rejected",
                downhill.len()
            ),
        ))
    })
}

/// Weights the synthetic data is generated from.
pub const LAMBDA_STAR: [f64; 3] = [1.0, 0.5, 2.0];

/// Residual CD gradient at the learned weights.
pub fn cd_fixed_point() -> Outcome {
    timed("cd-fixed-point", 600, || {
        let mut spec = GrammarSpec::clevr_default();
        spec.weights = Weights::from_array(LAMBDA_STAR);
        let long = ChainConfig::default().with_steps(20_000, 10_000);
        let data = synth_dataset(&spec, 2_000, &long, 1).map_err(err)?.graphs;

        let mut init = spec.clone();
        init.weights = Weights::new(0.5, 1.0, 1.0);
        let cd = CdConfig {
            learning_rate: 0.01,
            iterations: 400,
            sample_count: 128,
            chain_steps_per_iter: 200,
            persistent: true,
            tail_average: 0.5,
            seed: 5,
        };
        let (learned, _) =
            train_weights(&data, &init, &cd, &ChainConfig::default()).map_err(err)?;

        let mut fitted = spec.clone();
        fitted.weights = learned;
        let model: Vec<ParseGraph> = (0..2_000u64)
            .into_par_iter()
            .map(|s| sample_parse_graph(&fitted, &long, 1_000_000 + s))
            .collect::<saog_core::Result<_>>()
            .map_err(err)?;
        let dm = mean_terms(&data, &spec).map_err(err)?;
        let mm = mean_terms(&model, &spec).map_err(err)?;
        let rel: Vec<f64> = (0..3)
            .map(|u| (mm[u] - dm[u]).abs() / dm[u].abs())
            .collect();
        let ok = rel.iter().all(|&r| r < 0.1);
        let w = learned.as_array();
        Ok((
            ok,
            format!(
                "|grad|/data mean = d {:.3}, c {:.3}, h {:.3} (need < 0.1); learned λ = ({:.3}, {:.3}, {:.3})",
                rel[0], rel[1], rel[2], w[0], w[1], w[2]
            ),
        ))
    })
}

/// A scene with a reference layout and every relation that layout satisfies
/// pinned, as in CLEVR annotations.
pub fn pinned_scene(spec: &GrammarSpec, seed: u64) -> ParseGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = sample_structure(spec, &mut rng);
    let rels = geometric_relations(&g.objects, spec);
    ParseGraph::new(g.objects, rels)
}

/// Layouts resampled with relations and attributes held fixed.
pub fn conditional_generation() -> Outcome {
    timed("conditional-generation", 120, || {
        let mut spec = GrammarSpec::clevr_default();
        spec.weights.relation = 2.0;
        let cfg = ResampleConfig::default();
        let results: Vec<(bool, usize)> = (0..100u64)
            .into_par_iter()
            .map(|k| {
                let g = pinned_scene(&spec, 40_000 + k);
                let out = resample_layout(&g, &spec, &cfg, k)?;
                let sums = term_sums(&out, &spec)?;
                Ok((
                    sums.relation == 0.0 && out.relations == g.relations,
                    g.relations.len(),
                ))
            })
            .collect::<saog_core::Result<_>>()
            .map_err(err)?;
        let ok = results.iter().filter(|r| r.0).count();
        let pinned: usize = results.iter().map(|r| r.1).sum();
        Ok((
            ok >= 95,
            format!("{ok}/100 runs with every pinned relation satisfied (need >= 95; λ_d = 2, {pinned} pinned relations)"),
        ))
    })
}

/// Channel layout, embeddings, rotation bins and golden digests.
pub fn instance_map() -> Outcome {
    timed("instance-map", 10, || {
        let spec = GrammarSpec::clevr_default();
        let mut problems = Vec::new();
        if CHANNELS != 9 {
            problems.push(format!("{CHANNELS} channels"));
        }
        let mut embs: Vec<[u64; 3]> = (0..48)
            .map(|l| label_embedding(l).map(|e| e.map(f64::to_bits)))
            .collect::<saog_core::Result<_>>()
            .map_err(err)?;
        embs.sort();
        embs.dedup();
        if embs.len() != 48 {
            problems.push(format!("{} distinct embeddings", embs.len()));
        }
        for k in 0..6 {
            let lo = 15.0 * k as f64;
            if rotation_bin(lo) != k
                || rotation_bin(lo + 14.999) != k
                || rotation_bin(lo + 90.0) != k
            {
                problems.push(format!("rotation bin {k}"));
            }
        }
        let golden = golden_digests();
        let fixtures = fixture_scenes();
        let mut matched = 0;
        for (name, g) in &fixtures {
            let map = rasterize_instance_map(g, &spec).map_err(err)?;
            if (map.width, map.height, map.channels()) != (480, 320, 9) {
                problems.push(format!("{name}: wrong shape"));
            }
            match golden.get(name) {
                Some(d) if *d == map_digest(g, &spec).map_err(err)? => matched += 1,
                Some(_) => problems.push(format!("{name}: digest mismatch")),
                None => problems.push(format!("{name}: no golden")),
            }
        }
        let detail = format!(
            "9 channels, 48 distinct embeddings, 6 rotation bins, {matched}/{} golden maps byte-identical at 480x320",
            fixtures.len()
        );
        Ok((
            problems.is_empty() && fixtures.len() == 5,
            if problems.is_empty() {
                detail
            } else {
                problems.join("; ")
            },
        ))
    })
}

fn random_graph(rng: &mut ChaCha8Rng) -> ParseGraph {
    let n = rng.random_range(0..=10);
    let objects: Vec<ObjectInstance> = (0..n)
        .map(|_| {
            let large = rng.random::<bool>();
            let h = if large { 0.7 } else { 0.35 };
            ObjectInstance {
                label: rng.random_range(0..48),
                size: if large {
                    SizeName::Large
                } else {
                    SizeName::Small
                },
                half_extent: h,
                location: nalgebra::Vector3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    h + rng.random_range(-0.2..0.2),
                ),
                rotation: rng.random_range(0.0..360.0),
            }
        })
        .collect();
    let mut rels = Vec::new();
    for k in 0..2 {
        for s in 0..n {
            for t in 0..n {
                if s != t && rng.random::<f64>() < 0.5 {
                    rels.push(Relation::new(k, s, t));
                }
            }
        }
    }
    ParseGraph::new(objects, rels)
}

/// Storage rounding applied by the codec: f32 locations, 0.01° rotations.
fn quantize(g: &ParseGraph) -> ParseGraph {
    let mut q = g.clone();
    for o in &mut q.objects {
        o.location = o.location.map(|c| c as f32 as f64);
        o.rotation = ((o.rotation * 100.0).round() as i64).rem_euclid(36000) as f64 / 100.0;
    }
    q
}

/// Size bound on CLEVR-scale scenes and codec round trips.
pub fn compression() -> Outcome {
    timed("compression", 5, || {
        let spec = GrammarSpec::clevr_default();
        let mut worst = 0;
        for n in 0..=10usize {
            let objects = (0..n)
                .map(|i| small(i, i as f64 * 0.5, 0.0, 0.35))
                .collect();
            let mut rels = Vec::new();
            for k in 0..2 {
                for s in 0..n {
                    for t in 0..n {
                        if s != t {
                            rels.push(Relation::new(k, s, t));
                        }
                    }
                }
            }
            let bytes = encode_parse_graph_compact(&ParseGraph::new(objects, rels)).map_err(err)?;
            worst = worst.max(bytes.len());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut identical = 0;
        let mut largest = 0;
        for _ in 0..1_000 {
            let g = random_graph(&mut rng);
            let bytes = encode_parse_graph_compact(&g).map_err(err)?;
            largest = largest.max(bytes.len());
            let back = decode_parse_graph_compact(&bytes, &spec).map_err(err)?;
            let exact = back == quantize(&g)
                && bytes.len() == 7 + 16 * g.objects.len() + 3 * g.relations.len()
                && encode_parse_graph_compact(&back).map_err(err)? == bytes;
            identical += exact as usize;
        }
        Ok((
            worst <= 1024 && largest <= 1024 && identical == 1_000,
            format!("largest CLEVR-scale scene {worst} bytes (need <= 1024); {identical}/1000 round trips identical"),
        ))
    })
}

fn skewed_spec() -> GrammarSpec {
    let mut spec = GrammarSpec::clevr_default();
    let n = spec.configs.len();
    let total: f64 = (1..=n).map(|k| k as f64).sum();
    for (k, c) in spec.configs.iter_mut().enumerate() {
        c.prob = (k + 1) as f64 / total;
    }
    let m = spec.catalog.len();
    let total: f64 = (0..m).map(|k| 1.0 + (k % 4) as f64).sum();
    for (k, c) in spec.catalog.iter_mut().enumerate() {
        c.prob = (1.0 + (k % 4) as f64) / total;
    }
    spec.sizes[0].prob = 0.3;
    spec.sizes[1].prob = 0.7;
    spec
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Empirical branch distributions recover the generating ones.
pub fn branch_mle() -> Outcome {
    timed("branch-mle", 30, || {
        let spec = skewed_spec();
        spec.validate().map_err(err)?;
        let ds = synth_dataset(&spec, 5_000, &ChainConfig::default().with_steps(200, 0), 8)
            .map_err(err)?;
        let fit = fit_branch_probs(&ds.graphs, spec.relations.len()).map_err(err)?;
        let cfg_truth: Vec<f64> = spec.configs.iter().map(|c| c.prob).collect();
        let cfg_fit: Vec<f64> = spec
            .configs
            .iter()
            .map(|c| {
                fit.configs
                    .iter()
                    .find(|e| e.0 == c.objects)
                    .map_or(0.0, |e| e.1)
            })
            .collect();
        let lab_truth: Vec<f64> = spec.catalog.iter().map(|c| c.prob).collect();
        let lab_fit: Vec<f64> = spec
            .catalog
            .iter()
            .map(|c| fit.labels.get(&c.label).copied().unwrap_or(0.0))
            .collect();
        let size_truth: Vec<f64> = spec.sizes.iter().map(|s| s.prob).collect();
        let size_fit: Vec<f64> = spec
            .sizes
            .iter()
            .map(|s| fit.sizes.get(&s.name).copied().unwrap_or(0.0))
            .collect();
        let d = [
            tv(&cfg_truth, &cfg_fit),
            tv(&lab_truth, &lab_fit),
            tv(&size_truth, &size_fit),
        ];
        Ok((
            d.iter().all(|&v| v < 0.03),
            format!(
                "TV configs {:.4}, labels {:.4}, sizes {:.4} (need < 0.03)",
                d[0], d[1], d[2]
            ),
        ))
    })
}

/// Listed so the report covers every criterion; image synthesis is out of
/// scope and nothing is measured.
pub fn image_quality() -> Outcome {
    Outcome {
        id: "image-quality",
        status: Status::NotClaimed,
        detail:
            "comparisons against neural image generators are not reproducible here; no claim made"
                .into(),
        elapsed: Duration::ZERO,
        budget: Duration::ZERO,
    }
}
