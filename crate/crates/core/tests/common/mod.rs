#![allow(dead_code)]

use nalgebra::Vector3;
use saog_core::grammar::{GrammarSpec, ObjectInstance, SizeName};

pub fn obj(label: usize, x: f64, y: f64, z: f64, rotation: f64) -> ObjectInstance {
    ObjectInstance {
        label,
        size: SizeName::Small,
        half_extent: 0.35,
        location: Vector3::new(x, y, z),
        rotation,
    }
}

pub fn large(label: usize, x: f64, y: f64, rotation: f64) -> ObjectInstance {
    ObjectInstance {
        label,
        size: SizeName::Large,
        half_extent: 0.7,
        location: Vector3::new(x, y, 0.7),
        rotation,
    }
}

/// Total-variation distance between two discrete distributions given as
/// aligned probability vectors.
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Default spec with the given configuration distribution.
pub fn with_configs(configs: &[(usize, f64)]) -> GrammarSpec {
    let mut spec = GrammarSpec::clevr_default();
    spec.configs = configs
        .iter()
        .map(|&(objects, prob)| saog_core::grammar::ConfigEntry { objects, prob })
        .collect();
    spec
}
