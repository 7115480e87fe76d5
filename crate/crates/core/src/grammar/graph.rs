use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::spec::{GrammarSpec, SizeName};
use crate::error::{Error, Result};

/// An attributed terminal node: label, size, center location and yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub label: usize,
    pub size: SizeName,
    pub half_extent: f64,
    /// Center of the object in world units, z up.
    pub location: Vector3<f64>,
    /// Rotation about the vertical axis, degrees in `[0, 360)`.
    pub rotation: f64,
}

impl ObjectInstance {
    /// Height of the object's bottom face above the ground plane.
    pub fn bottom_height(&self) -> f64 {
        self.location.z - self.half_extent
    }
}

/// Directed relation `subject <type> object`, e.g. "subject is right of object".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    #[serde(rename = "type")]
    pub kind: usize,
    pub subject: usize,
    pub object: usize,
}

impl Relation {
    pub fn new(kind: usize, subject: usize, object: usize) -> Self {
        Self {
            kind,
            subject,
            object,
        }
    }

    pub fn involves(&self, index: usize) -> bool {
        self.subject == index || self.object == index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseGraph {
    /// Chosen scene configuration, i.e. the object count.
    pub configuration: usize,
    pub objects: Vec<ObjectInstance>,
    pub relations: Vec<Relation>,
}

impl ParseGraph {
    pub fn empty() -> Self {
        Self {
            configuration: 0,
            objects: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn new(objects: Vec<ObjectInstance>, mut relations: Vec<Relation>) -> Self {
        relations.sort_unstable();
        relations.dedup();
        Self {
            configuration: objects.len(),
            objects,
            relations,
        }
    }

    /// Sorts and deduplicates the relation list.
    pub fn canonicalize(&mut self) {
        self.relations.sort_unstable();
        self.relations.dedup();
    }

    /// Relations grouped by the objects they touch.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.objects.len()];
        for (k, r) in self.relations.iter().enumerate() {
            if let Some(list) = out.get_mut(r.subject) {
                list.push(k);
            }
            if r.object != r.subject {
                if let Some(list) = out.get_mut(r.object) {
                    list.push(k);
                }
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum DiagnosticTarget {
    Graph,
    Object(usize),
    Relation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    CountMismatch,
    UnknownLabel,
    UnknownSize,
    HalfExtentMismatch,
    RotationRange,
    NonFinite,
    UnknownRelationType,
    IndexOutOfRange,
    SelfRelation,
    DuplicateRelation,
    ViolatedRelation,
    HeightOutlier,
    CameraOutlier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub target: DiagnosticTarget,
    pub code: DiagnosticCode,
    pub message: String,
}

impl Diagnostic {
    pub fn new(target: DiagnosticTarget, code: DiagnosticCode, message: impl Into<String>) -> Self {
        Self {
            target,
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.target {
            DiagnosticTarget::Graph => write!(f, "graph: {}", self.message),
            DiagnosticTarget::Object(i) => write!(f, "object {i}: {}", self.message),
            DiagnosticTarget::Relation(k) => write!(f, "relation {k}: {}", self.message),
        }
    }
}

/// Checks structural invariants of `g` and resolves its symbols against `spec`.
/// Returns one diagnostic per violation; an empty list means the graph is valid.
pub fn validate(spec: &GrammarSpec, g: &ParseGraph) -> Vec<Diagnostic> {
    use DiagnosticCode as C;
    use DiagnosticTarget as T;

    let mut out = Vec::new();
    if g.configuration != g.objects.len() {
        out.push(Diagnostic::new(
            T::Graph,
            C::CountMismatch,
            format!(
                "configuration says {} objects but graph has {}",
                g.configuration,
                g.objects.len()
            ),
        ));
    }

    for (i, o) in g.objects.iter().enumerate() {
        if spec.label(o.label).is_none() {
            out.push(Diagnostic::new(
                T::Object(i),
                C::UnknownLabel,
                format!(
                    "unknown label {} (catalog has {})",
                    o.label,
                    spec.catalog.len()
                ),
            ));
        }
        match spec.size(o.size) {
            None => out.push(Diagnostic::new(
                T::Object(i),
                C::UnknownSize,
                format!("size {:?} not in grammar", o.size),
            )),
            Some(s) if (s.half_extent - o.half_extent).abs() > 1e-9 => out.push(Diagnostic::new(
                T::Object(i),
                C::HalfExtentMismatch,
                format!(
                    "half extent {} does not match size {:?} ({})",
                    o.half_extent, o.size, s.half_extent
                ),
            )),
            Some(_) => {}
        }
        if !(o.rotation >= 0.0 && o.rotation < 360.0) {
            out.push(Diagnostic::new(
                T::Object(i),
                C::RotationRange,
                format!("rotation {} outside [0, 360)", o.rotation),
            ));
        }
        if !o.location.iter().all(|v| v.is_finite()) {
            out.push(Diagnostic::new(
                T::Object(i),
                C::NonFinite,
                "location is not finite",
            ));
        }
    }

    let n = g.objects.len();
    let mut seen = HashSet::new();
    for (k, r) in g.relations.iter().enumerate() {
        if r.kind >= spec.relations.len() {
            out.push(Diagnostic::new(
                T::Relation(k),
                C::UnknownRelationType,
                format!("relation type {} not in grammar", r.kind),
            ));
        }
        if r.subject >= n || r.object >= n {
            out.push(Diagnostic::new(
                T::Relation(k),
                C::IndexOutOfRange,
                format!(
                    "references ({}, {}) but graph has {n} objects",
                    r.subject, r.object
                ),
            ));
        }
        if r.subject == r.object {
            out.push(Diagnostic::new(
                T::Relation(k),
                C::SelfRelation,
                format!("subject and object are both {}", r.subject),
            ));
        }
        if !seen.insert(*r) {
            out.push(Diagnostic::new(
                T::Relation(k),
                C::DuplicateRelation,
                "duplicate (type, subject, object)",
            ));
        }
    }
    out
}

/// Errors with the full diagnostic list if `g` fails [`validate`].
pub fn ensure_valid(spec: &GrammarSpec, g: &ParseGraph) -> Result<()> {
    let diags = validate(spec, g);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidGraph(diags))
    }
}
