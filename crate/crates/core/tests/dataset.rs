mod common;

use common::{obj, tv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saog_core::dataset::{
    clevr_directions, decode_parse_graph_compact, encode_parse_graph_compact, export_clevr_scenes,
    ingest_clevr_scenes, ingest_clevr_str, synth_dataset, DEFAULT_RELATION_FILTER,
};
use saog_core::energy::total_energy;
use saog_core::grammar::{
    validate, GrammarSpec, ObjectInstance, ParseGraph, Relation, RelationName, SizeName,
};
use saog_core::learning::fit_branch_probs;
use saog_core::mcmc::ChainConfig;
use saog_core::Error;

const FIXTURE: &str = include_str!("fixtures/clevr_small.json");

fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/clevr_small.json")
}

#[test]
fn ingest_preserves_counts_and_attributes() {
    let spec = GrammarSpec::clevr_default();
    let ds = ingest_clevr_scenes(fixture_path(), &spec, &DEFAULT_RELATION_FILTER).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.graphs[0].configuration, 2);
    assert_eq!(ds.graphs[1].configuration, 3);
    assert_eq!(ds.graphs[1].objects.len(), 3);
    assert_eq!(ds.images[0].as_deref(), Some("CLEVR_val_000000.png"));

    let cyl = &ds.graphs[0].objects[1];
    let label = &spec.catalog[cyl.label];
    assert_eq!(
        serde_json::to_string(&(label.shape, label.color, label.material)).unwrap(),
        r#"["cylinder","cyan","metal"]"#
    );
    assert_eq!(cyl.size, SizeName::Large);
    assert_eq!(cyl.half_extent, 0.7);
    assert_eq!(cyl.rotation, 10.0);
    for g in &ds.graphs {
        assert!(validate(&spec, g).is_empty());
    }
}

#[test]
fn clevr_convention_resolved_by_geometry() {
    // Object 1 lies to the right of and in front of object 0, and CLEVR lists
    // it under relationships[name][0]; the ingested relation must therefore
    // have object 1 as subject and carry zero energy.
    let spec = GrammarSpec::clevr_default();
    let ds = ingest_clevr_str(FIXTURE, &spec, &DEFAULT_RELATION_FILTER).unwrap();
    let right = spec.relation_index(RelationName::Right).unwrap();
    let front = spec.relation_index(RelationName::Front).unwrap();
    let mut expected = vec![Relation::new(right, 1, 0), Relation::new(front, 1, 0)];
    expected.sort();
    assert_eq!(ds.graphs[0].relations, expected);
    for g in &ds.graphs {
        assert_eq!(total_energy(g, &spec).unwrap().sum_relation, 0.0);
    }
    // Reversing the roles would violate both directions.
    let flipped: Vec<_> = expected
        .iter()
        .map(|r| Relation::new(r.kind, r.object, r.subject))
        .collect();
    let g = ParseGraph::new(ds.graphs[0].objects.clone(), flipped);
    assert!(total_energy(&g, &spec).unwrap().sum_relation > 0.0);
}

#[test]
fn filter_drops_other_relation_types() {
    let spec = GrammarSpec::clevr_default();
    let ds = ingest_clevr_str(FIXTURE, &spec, &DEFAULT_RELATION_FILTER).unwrap();
    // behind/left lists are present in the file but must not appear.
    assert_eq!(ds.graphs[0].relations.len(), 2);
    let only_right = ingest_clevr_str(FIXTURE, &spec, &[RelationName::Right]).unwrap();
    assert!(only_right
        .graphs
        .iter()
        .flat_map(|g| &g.relations)
        .all(|r| r.kind == spec.relation_index(RelationName::Right).unwrap()));
    assert!(matches!(
        ingest_clevr_str(FIXTURE, &spec, &[RelationName::Behind]),
        Err(Error::UnknownSymbol(_))
    ));
}

#[test]
fn unknown_label_names_scene() {
    let spec = GrammarSpec::clevr_default();
    let text = FIXTURE.replace("\"purple\"", "\"magenta\"");
    match ingest_clevr_str(&text, &spec, &DEFAULT_RELATION_FILTER) {
        Err(Error::UnknownLabel {
            scene,
            field,
            value,
        }) => {
            assert_eq!((scene, field, value.as_str()), (1, "color", "magenta"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_file_reports_byte_offset() {
    let spec = GrammarSpec::clevr_default();
    let cut = FIXTURE.find("\"objects\"").unwrap();
    let text = format!("{}@{}", &FIXTURE[..cut], &FIXTURE[cut..]);
    match ingest_clevr_str(&text, &spec, &DEFAULT_RELATION_FILTER) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, cut),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn convention_violations_abort() {
    let spec = GrammarSpec::clevr_default();
    let text = FIXTURE.replace("\"right\": [[1], []]", "\"right\": [[], [0]]");
    assert!(matches!(
        ingest_clevr_str(&text, &spec, &DEFAULT_RELATION_FILTER),
        Err(Error::Convention { violations: 1, .. })
    ));
}

#[test]
fn directions_read_from_scenes() {
    let dirs = clevr_directions(FIXTURE).unwrap();
    let right = dirs[&RelationName::Right];
    assert!((right.x - 0.6563112735748291).abs() < 1e-6 && right.z == 0.0);
    assert!((right.norm() - 1.0).abs() < 1e-12);
    assert!(dirs.contains_key(&RelationName::Front));
}

#[test]
fn export_then_ingest_is_identity() {
    let spec = GrammarSpec::clevr_default();
    let ds = ingest_clevr_str(FIXTURE, &spec, &DEFAULT_RELATION_FILTER).unwrap();
    let text = export_clevr_scenes(&ds, &spec).unwrap();
    let back = ingest_clevr_str(&text, &spec, &DEFAULT_RELATION_FILTER).unwrap();
    assert_eq!(back.graphs, ds.graphs);
    assert_eq!(back.images, ds.images);

    let synth = synth_dataset(&spec, 20, &ChainConfig::default().with_steps(400, 0), 3).unwrap();
    // Synthetic relations are drawn from the prior and may contradict the
    // geometry, so keep only the satisfied ones for the CLEVR layout.
    let mut consistent = synth.clone();
    for g in &mut consistent.graphs {
        let objects = g.objects.clone();
        g.relations.retain(|r| {
            saog_core::energy::relation_energy(r, &objects, &spec.relations).unwrap() == 0.0
        });
    }
    let text = export_clevr_scenes(&consistent, &spec).unwrap();
    let back = ingest_clevr_str(&text, &spec, &DEFAULT_RELATION_FILTER).unwrap();
    assert_eq!(back.graphs, consistent.graphs);
}

#[test]
fn synth_is_deterministic_and_valid() {
    let spec = GrammarSpec::clevr_default();
    let chain = ChainConfig::default().with_steps(300, 0);
    let a = synth_dataset(&spec, 100, &chain, 9).unwrap();
    let b = synth_dataset(&spec, 100, &chain, 9).unwrap();
    assert_eq!(a.len(), 100);
    assert_eq!(
        serde_json::to_vec(&a).unwrap(),
        serde_json::to_vec(&b).unwrap()
    );
    assert!(a.graphs.iter().all(|g| validate(&spec, g).is_empty()));
}

#[test]
fn branch_mle_recovers_generating_distribution() {
    let spec = GrammarSpec::clevr_default();
    let ds = synth_dataset(&spec, 5_000, &ChainConfig::default().with_steps(0, 0), 21).unwrap();
    let fit = fit_branch_probs(&ds.graphs, spec.relations.len()).unwrap();
    let truth: Vec<f64> = spec.configs.iter().map(|c| c.prob).collect();
    let got: Vec<f64> = spec
        .configs
        .iter()
        .map(|c| {
            fit.configs
                .iter()
                .find(|e| e.0 == c.objects)
                .map_or(0.0, |e| e.1)
        })
        .collect();
    assert!(tv(&truth, &got) < 0.03, "{}", tv(&truth, &got));
}

fn random_graph(rng: &mut ChaCha8Rng) -> ParseGraph {
    let n = rng.random_range(0..=10);
    let objects: Vec<ObjectInstance> = (0..n)
        .map(|_| {
            let mut o = obj(
                rng.random_range(0..48),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(0.0..1.5),
                rng.random_range(0.0..360.0),
            );
            if rng.random::<bool>() {
                o.size = SizeName::Large;
                o.half_extent = 0.7;
            }
            o
        })
        .collect();
    let mut rels = Vec::new();
    for k in 0..2 {
        for s in 0..n {
            for t in 0..n {
                if s != t && rng.random::<f64>() < 0.3 {
                    rels.push(Relation::new(k, s, t));
                }
            }
        }
    }
    ParseGraph::new(objects, rels)
}

#[test]
fn codec_sizes() {
    let spec = GrammarSpec::clevr_default();
    assert_eq!(
        encode_parse_graph_compact(&ParseGraph::empty())
            .unwrap()
            .len(),
        7
    );
    let objects: Vec<_> = (0..10).map(|i| obj(i, i as f64, 0.0, 0.5, 0.0)).collect();
    let mut all = Vec::new();
    for k in 0..2 {
        for s in 0..10 {
            for t in 0..10 {
                if s != t {
                    all.push(Relation::new(k, s, t));
                }
            }
        }
    }
    let forty = ParseGraph::new(objects.clone(), all[..40].to_vec());
    assert_eq!(encode_parse_graph_compact(&forty).unwrap().len(), 287);
    let full = ParseGraph::new(objects, all);
    let bytes = encode_parse_graph_compact(&full).unwrap();
    assert_eq!(bytes.len(), 707);
    assert_eq!(decode_parse_graph_compact(&bytes, &spec).unwrap(), full);
}

#[test]
fn codec_round_trips_random_graphs() {
    let spec = GrammarSpec::clevr_default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let g = random_graph(&mut rng);
        let bytes = encode_parse_graph_compact(&g).unwrap();
        assert_eq!(
            bytes.len(),
            7 + 16 * g.objects.len() + 3 * g.relations.len()
        );
        assert!(bytes.len() <= 1024);
        let back = decode_parse_graph_compact(&bytes, &spec).unwrap();
        assert_eq!(back.configuration, g.configuration);
        assert_eq!(back.relations, g.relations);
        for (a, b) in back.objects.iter().zip(&g.objects) {
            assert_eq!(
                (a.label, a.size, a.half_extent),
                (b.label, b.size, b.half_extent)
            );
            for k in 0..3 {
                assert_eq!(a.location[k], b.location[k] as f32 as f64);
            }
            let d = (a.rotation - b.rotation).rem_euclid(360.0);
            assert!(d.min(360.0 - d) <= 0.005 + 1e-9);
        }
        // Quantized graphs are fixed points.
        assert_eq!(encode_parse_graph_compact(&back).unwrap(), bytes);
    }
}

#[test]
fn codec_rejects_corruption() {
    let spec = GrammarSpec::clevr_default();
    let g = ParseGraph::new(
        vec![obj(1, 0.0, 0.0, 0.35, 0.0), obj(2, 1.0, 0.0, 0.35, 0.0)],
        vec![Relation::new(0, 0, 1)],
    );
    let bytes = encode_parse_graph_compact(&g).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_parse_graph_compact(&bad, &spec),
        Err(Error::Format { offset: 0, .. })
    ));
    match decode_parse_graph_compact(&bytes[..7 + 16 + 5], &spec) {
        Err(Error::Format { offset, message }) => {
            assert_eq!(offset, 28);
            assert!(message.contains("expected 42 bytes"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}
