//! `SPG1` compact parse-graph codec.
//!
//! ```text
//! magic "SPG1"            4 bytes
//! object count            u8
//! relation count          u16 LE
//! per object (16 bytes):  label u8, size u8, x/y/z f32 LE, rotation u16 LE centidegrees
//! per relation (3 bytes): type u8, subject u8, object u8
//! ```

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::grammar::{GrammarSpec, ObjectInstance, ParseGraph, Relation, SizeName};

pub const MAGIC: &[u8; 4] = b"SPG1";
pub const HEADER_LEN: usize = 7;
pub const OBJECT_LEN: usize = 16;
pub const RELATION_LEN: usize = 3;

pub fn encoded_len(objects: usize, relations: usize) -> usize {
    HEADER_LEN + OBJECT_LEN * objects + RELATION_LEN * relations
}

fn narrow_u8(what: &'static str, v: usize) -> Result<u8> {
    u8::try_from(v).map_err(|_| Error::Overflow {
        what,
        count: v,
        limit: u8::MAX as usize,
    })
}

/// Encodes `g`. Locations are stored as `f32` and rotations are rounded to
/// 0.01°.
pub fn encode_parse_graph_compact(g: &ParseGraph) -> Result<Vec<u8>> {
    let n = narrow_u8("object", g.objects.len())?;
    let m = u16::try_from(g.relations.len()).map_err(|_| Error::Overflow {
        what: "relation",
        count: g.relations.len(),
        limit: u16::MAX as usize,
    })?;

    let mut out = Vec::with_capacity(encoded_len(g.objects.len(), g.relations.len()));
    out.extend_from_slice(MAGIC);
    out.push(n);
    out.extend_from_slice(&m.to_le_bytes());
    for o in &g.objects {
        out.push(narrow_u8("label", o.label)?);
        out.push(o.size.code());
        for c in o.location.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        let centi = ((o.rotation * 100.0).round() as i64).rem_euclid(36000) as u16;
        out.extend_from_slice(&centi.to_le_bytes());
    }
    for r in &g.relations {
        out.push(narrow_u8("relation type", r.kind)?);
        out.push(narrow_u8("relation subject", r.subject)?);
        out.push(narrow_u8("relation object", r.object)?);
    }
    Ok(out)
}

/// Decodes an `SPG1` buffer. Half extents come from `spec`'s size table.
pub fn decode_parse_graph_compact(bytes: &[u8], spec: &GrammarSpec) -> Result<ParseGraph> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected SPG1".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "truncated header: expected {HEADER_LEN} bytes, got {}",
                bytes.len()
            ),
        });
    }
    let n = bytes[4] as usize;
    let m = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
    let expected = encoded_len(n, m);
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "truncated payload: expected {expected} bytes, got {}",
                bytes.len()
            ),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            offset: expected,
            message: format!(
                "{} trailing bytes after {expected}-byte payload",
                bytes.len() - expected
            ),
        });
    }

    let f32_at = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
    let mut objects = Vec::with_capacity(n);
    for i in 0..n {
        let at = HEADER_LEN + i * OBJECT_LEN;
        let size = SizeName::from_code(bytes[at + 1])
            .and_then(|s| spec.size(s))
            .ok_or_else(|| Error::Format {
                offset: at + 1,
                message: format!("size code {} not in grammar", bytes[at + 1]),
            })?;
        let centi = u16::from_le_bytes([bytes[at + 14], bytes[at + 15]]);
        objects.push(ObjectInstance {
            label: bytes[at] as usize,
            size: size.name,
            half_extent: size.half_extent,
            location: Vector3::new(f32_at(at + 2), f32_at(at + 6), f32_at(at + 10)),
            rotation: centi as f64 / 100.0,
        });
    }
    let base = HEADER_LEN + n * OBJECT_LEN;
    let relations = (0..m)
        .map(|k| {
            let at = base + k * RELATION_LEN;
            Relation::new(
                bytes[at] as usize,
                bytes[at + 1] as usize,
                bytes[at + 2] as usize,
            )
        })
        .collect();
    Ok(ParseGraph {
        configuration: n,
        objects,
        relations,
    })
}
