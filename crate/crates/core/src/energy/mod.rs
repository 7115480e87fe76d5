//! Energy terms of the layout model.
//!
//! `E(g) = λ_d Σ_e E_d(e) + λ_c Σ_o E_c(o) + λ_h Σ_o E_h(o)`, plus an
//! optional pairwise overlap hinge that is off unless its weight is set.

mod histogram;

pub use histogram::{Bounds, LocationHistogram};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{
    Diagnostic, DiagnosticCode, DiagnosticTarget, GrammarSpec, ObjectInstance, ParseGraph,
    Relation, RelationType, Weights,
};

/// See [`LocationHistogram::fit`].
pub fn fit_location_histogram(
    locations: &[(f64, f64)],
    bounds: impl Into<Bounds>,
    bins: usize,
    sigma: f64,
    floor: f64,
) -> Result<LocationHistogram> {
    LocationHistogram::fit(locations, bounds, bins, sigma, floor)
}

/// Per-term sums and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub sum_relation: f64,
    pub sum_camera: f64,
    pub sum_height: f64,
    #[serde(default)]
    pub sum_overlap: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn from_sums(sums: TermSums, weights: &Weights, overlap_weight: f64) -> Self {
        let total = weights.relation * sums.relation
            + weights.camera * sums.camera
            + weights.height * sums.height
            + overlap_weight * sums.overlap;
        Self {
            sum_relation: sums.relation,
            sum_camera: sums.camera,
            sum_height: sums.height,
            sum_overlap: sums.overlap,
            total,
        }
    }

    /// The learnable term sums in `[relation, camera, height]` order.
    pub fn terms(&self) -> [f64; 3] {
        [self.sum_relation, self.sum_camera, self.sum_height]
    }
}

/// Unweighted term sums.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermSums {
    pub relation: f64,
    pub camera: f64,
    pub height: f64,
    pub overlap: f64,
}

impl std::ops::Add for TermSums {
    type Output = TermSums;

    fn add(self, o: TermSums) -> TermSums {
        TermSums {
            relation: self.relation + o.relation,
            camera: self.camera + o.camera,
            height: self.height + o.height,
            overlap: self.overlap + o.overlap,
        }
    }
}

impl std::ops::Sub for TermSums {
    type Output = TermSums;

    fn sub(self, o: TermSums) -> TermSums {
        TermSums {
            relation: self.relation - o.relation,
            camera: self.camera - o.camera,
            height: self.height - o.height,
            overlap: self.overlap - o.overlap,
        }
    }
}

fn relation_hinge(
    rel: &Relation,
    objects: &[ObjectInstance],
    types: &[RelationType],
    literal_sign: bool,
) -> Result<f64> {
    let ty = types.get(rel.kind).ok_or(Error::UnknownRelationType {
        index: rel.kind,
        count: types.len(),
    })?;
    let (Some(a), Some(b)) = (objects.get(rel.subject), objects.get(rel.object)) else {
        return Err(Error::InvalidArgument(format!(
            "relation ({}, {}) references a missing object",
            rel.subject, rel.object
        )));
    };
    let along = ty.direction.dot(&(a.location - b.location));
    Ok(if literal_sign {
        along.max(0.0)
    } else {
        (-along).max(0.0)
    })
}

/// Hinge on violation: `max(-n_e · (r_subject - r_object), 0)`.
/// Zero exactly when the subject lies on the `n_e` side of the object.
pub fn relation_energy(
    rel: &Relation,
    objects: &[ObjectInstance],
    types: &[RelationType],
) -> Result<f64> {
    relation_hinge(rel, objects, types, false)
}

/// The hinge with the sign as literally printed, `max(n_e · r_e, 0)`.
/// Kept for comparison runs only.
pub fn relation_energy_literal(
    rel: &Relation,
    objects: &[ObjectInstance],
    types: &[RelationType],
) -> Result<f64> {
    relation_hinge(rel, objects, types, true)
}

/// `-ln P̃(o, c)` of the bin containing the object's ground position.
pub fn camera_energy(o: &ObjectInstance, hist: &LocationHistogram) -> f64 {
    -hist.mass_at(o.location.x, o.location.y).ln()
}

/// Distance of the object's bottom face from the ground plane.
pub fn height_energy(o: &ObjectInstance) -> f64 {
    o.bottom_height().abs()
}

/// Interpenetration of the bounding spheres of two objects.
pub fn overlap_energy(a: &ObjectInstance, b: &ObjectInstance) -> f64 {
    (a.half_extent + b.half_extent - (a.location - b.location).norm()).max(0.0)
}

pub fn term_sums(g: &ParseGraph, spec: &GrammarSpec) -> Result<TermSums> {
    let literal = spec.options.paper_literal_sign;
    let mut sums = TermSums::default();
    for rel in &g.relations {
        sums.relation += relation_hinge(rel, &g.objects, &spec.relations, literal)?;
    }
    for o in &g.objects {
        sums.camera += camera_energy(o, &spec.histogram);
        sums.height += height_energy(o);
    }
    if spec.options.overlap_weight > 0.0 {
        for (i, a) in g.objects.iter().enumerate() {
            for b in &g.objects[i + 1..] {
                sums.overlap += overlap_energy(a, b);
            }
        }
    }
    Ok(sums)
}

pub fn total_energy(g: &ParseGraph, spec: &GrammarSpec) -> Result<EnergyBreakdown> {
    Ok(EnergyBreakdown::from_sums(
        term_sums(g, spec)?,
        &spec.weights,
        spec.options.overlap_weight,
    ))
}

/// The terms that change when a single object moves: its own camera and
/// height terms, the relations touching it, and its overlap pairs.
pub(crate) fn local_sums(
    spec: &GrammarSpec,
    weights: &Weights,
    objects: &[ObjectInstance],
    relations: &[Relation],
    incident: &[usize],
    index: usize,
) -> (TermSums, f64) {
    let literal = spec.options.paper_literal_sign;
    let o = &objects[index];
    let mut sums = TermSums {
        camera: camera_energy(o, &spec.histogram),
        height: height_energy(o),
        ..TermSums::default()
    };
    for &k in incident {
        // Indices were checked when the chain was set up.
        sums.relation +=
            relation_hinge(&relations[k], objects, &spec.relations, literal).unwrap_or(0.0);
    }
    let overlap_weight = spec.options.overlap_weight;
    if overlap_weight > 0.0 {
        for (j, other) in objects.iter().enumerate() {
            if j != index {
                sums.overlap += overlap_energy(o, other);
            }
        }
    }
    let weighted = weights.relation * sums.relation
        + weights.camera * sums.camera
        + weights.height * sums.height
        + overlap_weight * sums.overlap;
    (sums, weighted)
}

/// Height terms above this are reported as outliers.
pub const HEIGHT_OUTLIER: f64 = 0.05;

/// Soft problems with a valid graph: violated relations, objects that float
/// or sink, and objects outside the support of the location histogram.
pub fn energy_diagnostics(g: &ParseGraph, spec: &GrammarSpec) -> Result<Vec<Diagnostic>> {
    let literal = spec.options.paper_literal_sign;
    let mut out = Vec::new();
    for (k, rel) in g.relations.iter().enumerate() {
        let e = relation_hinge(rel, &g.objects, &spec.relations, literal)?;
        if e > 0.0 {
            out.push(Diagnostic::new(
                DiagnosticTarget::Relation(k),
                DiagnosticCode::ViolatedRelation,
                format!("{} of {} violated by {e:.4}", rel.subject, rel.object),
            ));
        }
    }
    for (i, o) in g.objects.iter().enumerate() {
        let h = height_energy(o);
        if h > HEIGHT_OUTLIER {
            out.push(Diagnostic::new(
                DiagnosticTarget::Object(i),
                DiagnosticCode::HeightOutlier,
                format!("bottom is {:.4} from the ground", o.bottom_height()),
            ));
        }
        let (x, y) = (o.location.x, o.location.y);
        if spec.histogram.mass_at(x, y) <= spec.histogram.floor {
            out.push(Diagnostic::new(
                DiagnosticTarget::Object(i),
                DiagnosticCode::CameraOutlier,
                format!("location ({x:.3}, {y:.3}) has no support in the location histogram"),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::grammar::{RelationName, SizeName};

    fn at(x: f64, y: f64, z: f64, half_extent: f64) -> ObjectInstance {
        ObjectInstance {
            label: 0,
            size: SizeName::Small,
            half_extent,
            location: Vector3::new(x, y, z),
            rotation: 0.0,
        }
    }

    fn right() -> Vec<RelationType> {
        vec![RelationType {
            name: RelationName::Right,
            direction: Vector3::new(1.0, 0.0, 0.0),
            prior: 0.5,
        }]
    }

    #[test]
    fn hinge_inactive_when_satisfied() {
        let objs = [at(2.0, 0.0, 0.0, 0.5), at(0.0, 0.0, 0.0, 0.5)];
        let e = relation_energy(&Relation::new(0, 0, 1), &objs, &right()).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn hinge_active_on_violation() {
        let objs = [at(-1.5, 0.0, 0.0, 0.5), at(0.0, 0.0, 0.0, 0.5)];
        let e = relation_energy(&Relation::new(0, 0, 1), &objs, &right()).unwrap();
        assert_eq!(e, 1.5);
        let literal = relation_energy_literal(&Relation::new(0, 0, 1), &objs, &right()).unwrap();
        assert_eq!(literal, 0.0);
    }

    #[test]
    fn hinge_zero_on_orthogonal_offset() {
        let objs = [at(0.0, 3.0, 0.0, 0.5), at(0.0, 0.0, 0.0, 0.5)];
        let e = relation_energy(&Relation::new(0, 0, 1), &objs, &right()).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn bad_relation_type_is_an_error() {
        let objs = [at(0.0, 0.0, 0.0, 0.5), at(1.0, 0.0, 0.0, 0.5)];
        let err = relation_energy(&Relation::new(3, 0, 1), &objs, &right()).unwrap_err();
        assert!(matches!(
            err,
            Error::UnknownRelationType { index: 3, count: 1 }
        ));
    }

    #[test]
    fn height_cases() {
        assert_eq!(height_energy(&at(0.0, 0.0, 0.7, 0.7)), 0.0);
        assert!((height_energy(&at(0.0, 0.0, 0.7 + 0.5, 0.7)) - 0.5).abs() < 1e-15);
        assert!((height_energy(&at(0.0, 0.0, 0.7 - 0.3, 0.7)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn camera_energy_uniform_and_outside() {
        let h = LocationHistogram::uniform((-3.0, 3.0, -3.0, 3.0), 32, 1e-6).unwrap();
        let inside = camera_energy(&at(0.3, -1.2, 0.35, 0.35), &h);
        assert!((inside - 1024f64.ln()).abs() < 1e-9);
        let outside = camera_energy(&at(10.0, 0.0, 0.35, 0.35), &h);
        assert!((outside - 13.815510557964274).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_give_zero_total() {
        let mut spec = GrammarSpec::clevr_default();
        spec.weights = Weights::zero();
        let g = ParseGraph::new(
            vec![at(-1.0, 0.0, 3.0, 0.35), at(1.0, 2.0, 0.35, 0.35)],
            vec![Relation::new(0, 0, 1), Relation::new(1, 1, 0)],
        );
        assert_eq!(total_energy(&g, &spec).unwrap().total, 0.0);
    }

    #[test]
    fn empty_relation_set_has_zero_relation_sum() {
        let spec = GrammarSpec::clevr_default();
        let g = ParseGraph::new(vec![at(-1.0, 0.0, 3.0, 0.35)], vec![]);
        assert_eq!(total_energy(&g, &spec).unwrap().sum_relation, 0.0);
    }

    #[test]
    fn overlap_term_only_when_enabled() {
        let mut spec = GrammarSpec::clevr_default();
        let g = ParseGraph::new(
            vec![at(0.0, 0.0, 0.35, 0.35), at(0.2, 0.0, 0.35, 0.35)],
            vec![],
        );
        let off = total_energy(&g, &spec).unwrap();
        assert_eq!(off.sum_overlap, 0.0);
        spec.options.overlap_weight = 2.0;
        let on = total_energy(&g, &spec).unwrap();
        assert!((on.sum_overlap - 0.5).abs() < 1e-12);
        assert!((on.total - off.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_flag_soft_problems() {
        let spec = GrammarSpec::clevr_default();
        let n = spec.relations[1].direction;
        let mut g = ParseGraph::new(
            vec![at(-n.x, -n.y, 0.35, 0.35), at(n.x, n.y, 0.35, 0.35)],
            vec![Relation::new(1, 0, 1)],
        );
        let d = energy_diagnostics(&g, &spec).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, DiagnosticCode::ViolatedRelation);
        assert_eq!(d[0].target, DiagnosticTarget::Relation(0));

        g.relations.clear();
        g.objects[0].location.z = 0.5;
        g.objects[1].location.x = 1e6;
        let codes: Vec<_> = energy_diagnostics(&g, &spec)
            .unwrap()
            .into_iter()
            .map(|d| (d.target, d.code))
            .collect();
        assert_eq!(
            codes,
            [
                (DiagnosticTarget::Object(0), DiagnosticCode::HeightOutlier),
                (DiagnosticTarget::Object(1), DiagnosticCode::CameraOutlier),
            ]
        );
    }
}
