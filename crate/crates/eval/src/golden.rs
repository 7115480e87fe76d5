//! Instance-map golden fixtures. Maps are large (480×320×9 floats), so the
//! checked-in goldens are SHA-256 digests of the `SIMAP1` bytes.

use std::collections::BTreeMap;

use saog_core::grammar::{GrammarSpec, ParseGraph};
use saog_core::projection::rasterize_instance_map;
use serde::Deserialize;
use sha2::{Digest, Sha256};

const SCENES: &str = include_str!("../fixtures/instance_map_scenes.json");
const GOLDEN: &str = include_str!("../fixtures/instance_map_golden.txt");

/// Path of the digest file, for regeneration.
pub const GOLDEN_PATH: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/fixtures/instance_map_golden.txt"
);

#[derive(Deserialize)]
struct Fixture {
    name: String,
    graph: ParseGraph,
}

pub fn fixture_scenes() -> Vec<(String, ParseGraph)> {
    let fixtures: Vec<Fixture> =
        serde_json::from_str(SCENES).expect("embedded fixture scenes parse");
    fixtures.into_iter().map(|f| (f.name, f.graph)).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn map_digest(g: &ParseGraph, spec: &GrammarSpec) -> saog_core::Result<String> {
    Ok(sha256_hex(
        &rasterize_instance_map(g, spec)?.to_simap_bytes(),
    ))
}

/// Checked-in digests by fixture name.
pub fn golden_digests() -> BTreeMap<String, String> {
    GOLDEN
        .lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            Some((parts.next()?.to_string(), parts.next()?.to_string()))
        })
        .map(|(digest, name)| (name, digest))
        .collect()
}

/// Digest file contents for the current renderer (`<sha256>  <name>` lines).
pub fn render_golden(spec: &GrammarSpec) -> saog_core::Result<String> {
    let mut out = String::new();
    for (name, g) in fixture_scenes() {
        out.push_str(&format!("{}  {name}\n", map_digest(&g, spec)?));
    }
    Ok(out)
}
