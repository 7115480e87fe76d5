//! Editing sessions: a parse graph, its edit history and a revision tag.

use nalgebra::Vector3;
use saog_core::energy::{energy_diagnostics, total_energy, EnergyBreakdown};
use saog_core::grammar::{
    validate, Diagnostic, GrammarSpec, ObjectInstance, ParseGraph, Relation, SizeName,
};
use saog_core::mcmc::{resample_layout, wrap_degrees, ResampleConfig};
use saog_core::projection::BBox2D;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EditError {
    #[error("object index {index} out of range (scene has {count} objects)")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("cannot add object: scene already has {count} objects and the grammar allows at most {limit}")]
    TooManyObjects { count: usize, limit: usize },

    #[error("unknown size {0:?}")]
    UnknownSize(SizeName),

    #[error("edit would leave an invalid graph: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),

    #[error("nothing to undo")]
    NothingToUndo,

    #[error(transparent)]
    Core(#[from] saog_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditOp {
    Move {
        index: usize,
        delta: [f64; 3],
    },
    /// Degrees.
    Rotate {
        index: usize,
        delta: f64,
    },
    Retype {
        index: usize,
        label: usize,
    },
    /// Keeps the bottom face at the same height.
    Resize {
        index: usize,
        size: SizeName,
    },
    Add {
        object: ObjectInstance,
    },
    Remove {
        index: usize,
    },
    SetRelation {
        relation: Relation,
        present: bool,
    },
}

/// Everything that can change a session's graph, as recorded in its history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionOp {
    Edit(EditOp),
    Resample {
        seed: u64,
        /// Replaces the relation weight for this re-layout only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relation_weight: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditOutcome {
    pub graph: ParseGraph,
    pub energy: EnergyBreakdown,
    pub diagnostics: Vec<Diagnostic>,
}

fn check_index(g: &ParseGraph, index: usize) -> Result<(), EditError> {
    if index < g.objects.len() {
        Ok(())
    } else {
        Err(EditError::IndexOutOfRange {
            index,
            count: g.objects.len(),
        })
    }
}

/// Applies `op` to a copy of `g`. The result is validated before it is
/// returned.
pub fn apply_op(g: &ParseGraph, op: &EditOp, spec: &GrammarSpec) -> Result<ParseGraph, EditError> {
    let mut out = g.clone();
    match op {
        EditOp::Move { index, delta } => {
            check_index(g, *index)?;
            out.objects[*index].location += Vector3::from(*delta);
        }
        EditOp::Rotate { index, delta } => {
            check_index(g, *index)?;
            let o = &mut out.objects[*index];
            o.rotation = wrap_degrees(o.rotation + delta);
        }
        EditOp::Retype { index, label } => {
            check_index(g, *index)?;
            out.objects[*index].label = *label;
        }
        EditOp::Resize { index, size } => {
            check_index(g, *index)?;
            let entry = spec.size(*size).ok_or(EditError::UnknownSize(*size))?;
            let o = &mut out.objects[*index];
            o.location.z += entry.half_extent - o.half_extent;
            o.size = entry.name;
            o.half_extent = entry.half_extent;
        }
        EditOp::Add { object } => {
            let limit = spec.max_objects();
            if g.objects.len() >= limit {
                return Err(EditError::TooManyObjects {
                    count: g.objects.len(),
                    limit,
                });
            }
            out.objects.push(object.clone());
        }
        EditOp::Remove { index } => {
            check_index(g, *index)?;
            out.objects.remove(*index);
            out.relations.retain(|r| !r.involves(*index));
            for r in &mut out.relations {
                if r.subject > *index {
                    r.subject -= 1;
                }
                if r.object > *index {
                    r.object -= 1;
                }
            }
        }
        EditOp::SetRelation { relation, present } => {
            out.relations.retain(|r| r != relation);
            if *present {
                out.relations.push(*relation);
            }
        }
    }
    out.configuration = out.objects.len();
    out.canonicalize();
    let diags = validate(spec, &out);
    if !diags.is_empty() {
        return Err(EditError::Invalid(diags));
    }
    Ok(out)
}

/// Equal up to round-off in coordinates and rotation.
fn nearly_equal(a: &ParseGraph, b: &ParseGraph) -> bool {
    const TOL: f64 = 1e-9;
    a.configuration == b.configuration
        && a.relations == b.relations
        && a.objects.len() == b.objects.len()
        && a.objects.iter().zip(&b.objects).all(|(p, q)| {
            p.label == q.label
                && p.size == q.size
                && p.half_extent == q.half_extent
                && (p.location - q.location).amax() <= TOL
                && (p.rotation - q.rotation).abs() <= TOL
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub op: SessionOp,
    /// Graph before `op`.
    pub before: ParseGraph,
}

/// A graph under edit. Every committed operation is kept with the graph it
/// replaced, so replaying the history from `initial` reproduces `graph`.
#[derive(Debug, Clone)]
pub struct SceneSession {
    pub id: String,
    pub initial: ParseGraph,
    pub graph: ParseGraph,
    pub history: Vec<HistoryEntry>,
    /// Bumped on every change.
    pub revision: u64,
}

impl SceneSession {
    pub fn new(
        id: impl Into<String>,
        graph: ParseGraph,
        spec: &GrammarSpec,
    ) -> Result<Self, EditError> {
        let diags = validate(spec, &graph);
        if !diags.is_empty() {
            return Err(EditError::Invalid(diags));
        }
        Ok(Self {
            id: id.into(),
            initial: graph.clone(),
            graph,
            history: Vec::new(),
            revision: 0,
        })
    }

    fn commit(&mut self, op: SessionOp, next: ParseGraph) {
        let before = std::mem::replace(&mut self.graph, next);
        self.history.push(HistoryEntry { op, before });
        self.revision += 1;
    }

    /// Applies an edit. An edit that takes the graph back to where it was
    /// before the previous operation (a move by −Δ after a move by Δ, a
    /// remove after an add) restores that graph exactly instead of carrying
    /// the round-off.
    pub fn apply_edit(&mut self, op: EditOp, spec: &GrammarSpec) -> Result<EditOutcome, EditError> {
        let mut next = apply_op(&self.graph, &op, spec)?;
        if let Some(last) = self.history.last() {
            if nearly_equal(&next, &last.before) {
                next = last.before.clone();
            }
        }
        self.commit(SessionOp::Edit(op), next);
        self.outcome(spec)
    }

    pub fn resample(
        &mut self,
        seed: u64,
        relation_weight: Option<f64>,
        cfg: &ResampleConfig,
        spec: &GrammarSpec,
    ) -> Result<EditOutcome, EditError> {
        let next = resample_with(&self.graph, seed, relation_weight, cfg, spec)?;
        self.commit(
            SessionOp::Resample {
                seed,
                relation_weight,
            },
            next,
        );
        self.outcome(spec)
    }

    /// Drops the last operation and restores the graph it replaced.
    pub fn undo(&mut self, spec: &GrammarSpec) -> Result<EditOutcome, EditError> {
        let entry = self.history.pop().ok_or(EditError::NothingToUndo)?;
        self.graph = entry.before;
        self.revision += 1;
        self.outcome(spec)
    }

    pub fn outcome(&self, spec: &GrammarSpec) -> Result<EditOutcome, EditError> {
        Ok(EditOutcome {
            graph: self.graph.clone(),
            energy: total_energy(&self.graph, spec)?,
            diagnostics: energy_diagnostics(&self.graph, spec)?,
        })
    }

    /// Rebuilds a session from `initial` by replaying `ops`.
    pub fn replay(
        id: impl Into<String>,
        initial: ParseGraph,
        ops: &[SessionOp],
        cfg: &ResampleConfig,
        spec: &GrammarSpec,
    ) -> Result<Self, EditError> {
        let mut s = Self::new(id, initial, spec)?;
        for op in ops {
            match op {
                SessionOp::Edit(e) => {
                    s.apply_edit(e.clone(), spec)?;
                }
                SessionOp::Resample {
                    seed,
                    relation_weight,
                } => {
                    s.resample(*seed, *relation_weight, cfg, spec)?;
                }
            }
        }
        Ok(s)
    }

    /// Screen boxes in object order; `None` for objects behind the camera.
    pub fn boxes(&self, spec: &GrammarSpec) -> Vec<Option<BBox2D>> {
        self.graph
            .objects
            .iter()
            .map(|o| spec.camera.project_object_bbox(o).ok())
            .collect()
    }
}

fn resample_with(
    g: &ParseGraph,
    seed: u64,
    relation_weight: Option<f64>,
    cfg: &ResampleConfig,
    spec: &GrammarSpec,
) -> Result<ParseGraph, EditError> {
    match relation_weight {
        Some(w) => {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(saog_core::Error::InvalidArgument(format!(
                    "relation weight {w} must be non-negative"
                ))
                .into());
            }
            let mut spec = spec.clone();
            spec.weights.relation = w;
            Ok(resample_layout(g, &spec, cfg, seed)?)
        }
        None => Ok(resample_layout(g, spec, cfg, seed)?),
    }
}
