//! CLEVR `scenes.json` ingestion and export.
//!
//! CLEVR lists `j` under `relationships[name][i]` when object `j` lies in
//! direction `name` of object `i`. That becomes the relation
//! `(name, subject = j, object = i)`, which has zero hinge energy exactly
//! when `n_name · (r_j − r_i) ≥ 0`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::de::value::{Error as ValueError, StrDeserializer};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::SceneDataset;
use crate::energy::relation_energy;
use crate::error::{Error, Result};
use crate::grammar::{GrammarSpec, ObjectInstance, ParseGraph, Relation, RelationName};

/// Ingestion aborts when more than this fraction of imported relations
/// contradict their direction vectors.
pub const MAX_CONVENTION_VIOLATIONS: f64 = 0.01;

pub const DEFAULT_RELATION_FILTER: [RelationName; 2] = [RelationName::Front, RelationName::Right];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClevrFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<serde_json::Value>,
    pub scenes: Vec<ClevrScene>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClevrScene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_filename: Option<String>,
    pub objects: Vec<ClevrObject>,
    #[serde(default)]
    pub relationships: BTreeMap<String, Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<BTreeMap<String, [f64; 3]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClevrObject {
    pub shape: String,
    pub color: String,
    pub material: String,
    pub size: String,
    #[serde(rename = "3d_coords")]
    pub coords: [f64; 3],
    pub rotation: f64,
}

fn parse_name<T: DeserializeOwned>(s: &str) -> Option<T> {
    T::deserialize(StrDeserializer::<ValueError>::new(s)).ok()
}

fn name_of<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("enum names serialize as strings"),
    }
}

/// Byte offset of a serde_json error's line/column position in `text`.
fn byte_offset(text: &str, err: &serde_json::Error) -> usize {
    let line = err.line().max(1);
    let before: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (before + err.column().saturating_sub(1)).min(text.len())
}

pub fn parse_clevr_file(text: &str) -> Result<ClevrFile> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: byte_offset(text, &e),
        message: e.to_string(),
    })
}

fn convert_scene(
    index: usize,
    scene: &ClevrScene,
    spec: &GrammarSpec,
    filter: &[(RelationName, usize)],
) -> Result<ParseGraph> {
    let mut objects = Vec::with_capacity(scene.objects.len());
    for o in &scene.objects {
        let unknown = |field: &'static str, value: &str| Error::UnknownLabel {
            scene: index,
            field,
            value: value.to_string(),
        };
        let shape = parse_name(&o.shape).ok_or_else(|| unknown("shape", &o.shape))?;
        let color = parse_name(&o.color).ok_or_else(|| unknown("color", &o.color))?;
        let material = parse_name(&o.material).ok_or_else(|| unknown("material", &o.material))?;
        let size_name = parse_name(&o.size).ok_or_else(|| unknown("size", &o.size))?;
        let label = spec
            .find_label(shape, color, material)
            .ok_or_else(|| unknown("label", &format!("{} {} {}", o.color, o.material, o.shape)))?;
        let size = spec
            .size(size_name)
            .ok_or_else(|| unknown("size", &o.size))?;
        objects.push(ObjectInstance {
            label,
            size: size.name,
            half_extent: size.half_extent,
            location: Vector3::from(o.coords),
            rotation: crate::mcmc::wrap_degrees(o.rotation),
        });
    }

    let n = objects.len();
    let mut relations = Vec::new();
    for &(name, kind) in filter {
        let Some(lists) = scene.relationships.get(name.as_str()) else {
            continue;
        };
        for (object, subjects) in lists.iter().enumerate() {
            for &subject in subjects {
                if object >= n || subject >= n || subject == object {
                    return Err(Error::Parse {
                        offset: 0,
                        message: format!(
                            "scene {index}: relationship '{name}' links {subject} -> {object} with {n} objects"
                        ),
                    });
                }
                relations.push(Relation::new(kind, subject, object));
            }
        }
    }
    Ok(ParseGraph::new(objects, relations))
}

/// Builds parse graphs from CLEVR scene annotations, keeping only the
/// relation types in `filter` (each must exist in `spec`).
pub fn ingest_clevr_str(
    text: &str,
    spec: &GrammarSpec,
    filter: &[RelationName],
) -> Result<SceneDataset> {
    let file = parse_clevr_file(text)?;
    let filter: Vec<(RelationName, usize)> = filter
        .iter()
        .map(|&name| {
            spec.relation_index(name)
                .map(|k| (name, k))
                .ok_or_else(|| Error::UnknownSymbol(format!("relation '{name}' not in grammar")))
        })
        .collect::<Result<_>>()?;

    let mut graphs = Vec::with_capacity(file.scenes.len());
    let mut images = Vec::with_capacity(file.scenes.len());
    let (mut checked, mut violations) = (0usize, 0usize);
    for (i, scene) in file.scenes.iter().enumerate() {
        let g = convert_scene(i, scene, spec, &filter)?;
        for r in &g.relations {
            checked += 1;
            if relation_energy(r, &g.objects, &spec.relations)? > 0.0 {
                violations += 1;
            }
        }
        graphs.push(g);
        images.push(scene.image_filename.clone());
    }
    if checked > 0 && violations as f64 > MAX_CONVENTION_VIOLATIONS * checked as f64 {
        return Err(Error::Convention {
            violations,
            checked,
        });
    }

    Ok(SceneDataset {
        source: "clevr".into(),
        camera: spec.camera.clone(),
        graphs,
        images,
    })
}

pub fn ingest_clevr_scenes(
    path: impl AsRef<Path>,
    spec: &GrammarSpec,
    filter: &[RelationName],
) -> Result<SceneDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ds = ingest_clevr_str(&text, spec, filter)?;
    ds.source = format!("clevr:{}", path.display());
    Ok(ds)
}

/// Ground-plane relation directions recorded in the first scene that
/// carries a `directions` block.
pub fn clevr_directions(text: &str) -> Result<BTreeMap<RelationName, Vector3<f64>>> {
    let file = parse_clevr_file(text)?;
    let mut out = BTreeMap::new();
    if let Some(dirs) = file.scenes.iter().find_map(|s| s.directions.as_ref()) {
        for (name, v) in dirs {
            if let Some(rel) = parse_name::<RelationName>(name) {
                let flat = Vector3::new(v[0], v[1], 0.0);
                if flat.norm() > 0.0 {
                    out.insert(rel, flat.normalize());
                }
            }
        }
    }
    Ok(out)
}

/// Overwrites the grammar's relation directions with `dirs` where present.
pub fn apply_directions(spec: &mut GrammarSpec, dirs: &BTreeMap<RelationName, Vector3<f64>>) {
    for ty in &mut spec.relations {
        if let Some(d) = dirs.get(&ty.name) {
            ty.direction = *d;
        }
    }
}

/// Writes a dataset back out in the CLEVR scene layout.
pub fn export_clevr_scenes(ds: &SceneDataset, spec: &GrammarSpec) -> Result<String> {
    let mut scenes = Vec::with_capacity(ds.graphs.len());
    for (i, g) in ds.graphs.iter().enumerate() {
        let mut objects = Vec::with_capacity(g.objects.len());
        for o in &g.objects {
            let label = spec
                .label(o.label)
                .ok_or_else(|| Error::UnknownSymbol(format!("label {}", o.label)))?;
            objects.push(ClevrObject {
                shape: name_of(&label.shape),
                color: name_of(&label.color),
                material: name_of(&label.material),
                size: name_of(&o.size),
                coords: [o.location.x, o.location.y, o.location.z],
                rotation: o.rotation,
            });
        }
        let mut relationships = BTreeMap::new();
        for (kind, ty) in spec.relations.iter().enumerate() {
            let mut lists = vec![Vec::new(); g.objects.len()];
            for r in g.relations.iter().filter(|r| r.kind == kind) {
                lists[r.object].push(r.subject);
            }
            relationships.insert(ty.name.as_str().to_string(), lists);
        }
        let directions = spec
            .relations
            .iter()
            .map(|ty| {
                (
                    ty.name.as_str().to_string(),
                    [ty.direction.x, ty.direction.y, ty.direction.z],
                )
            })
            .collect();
        scenes.push(ClevrScene {
            image_index: Some(i),
            image_filename: ds.images.get(i).cloned().flatten(),
            objects,
            relationships,
            directions: Some(directions),
        });
    }
    Ok(serde_json::to_string_pretty(&ClevrFile {
        info: None,
        scenes,
    })?)
}
