//! The scene grammar and its parse graphs.
//!
//! The scene or-node picks a configuration (object count); the
//! configuration and-node expands into that many object or-nodes, each of
//! which picks an instance label and a size. Relations between objects are
//! scored by the energy model.

mod graph;
mod sample;
mod spec;

pub use graph::{
    ensure_valid, validate, Diagnostic, DiagnosticCode, DiagnosticTarget, ObjectInstance,
    ParseGraph, Relation,
};
pub use sample::{sample_parse_graph, sample_structure};
pub use spec::{
    Color, ConfigEntry, EnergyOptions, GrammarSpec, Material, ObjectLabel, RelationName,
    RelationType, Shape, SizeEntry, SizeName, Weights,
};

use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, EnergyBreakdown};
use crate::error::{Error, Result};

/// Unnormalized parse-graph log-probability: branch choices plus energy.
/// The partition function is never computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProb {
    pub branch_logp: f64,
    pub energy: EnergyBreakdown,
}

impl LogProb {
    /// `branch_logp − E(g)`, i.e. `ln P(g) + ln Z`.
    pub fn unnormalized(&self) -> f64 {
        self.branch_logp - self.energy.total
    }
}

pub fn log_prob_unnormalized(spec: &GrammarSpec, g: &ParseGraph) -> Result<LogProb> {
    let config = spec.config_prob(g.configuration).ok_or_else(|| {
        Error::UnknownSymbol(format!("configuration with {} objects", g.configuration))
    })?;
    let mut branch_logp = config.ln();
    for (i, o) in g.objects.iter().enumerate() {
        let label = spec
            .label(o.label)
            .ok_or_else(|| Error::UnknownSymbol(format!("label {} on object {i}", o.label)))?;
        let size = spec
            .size(o.size)
            .ok_or_else(|| Error::UnknownSymbol(format!("size {:?} on object {i}", o.size)))?;
        branch_logp += label.prob.ln() + size.prob.ln();
    }
    let energy = total_energy(g, spec)?;
    Ok(LogProb {
        branch_logp,
        energy,
    })
}
