use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::energy::LocationHistogram;
use crate::error::{Error, Result};
use crate::projection::CameraModel;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    Sphere,
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Gray,
    Red,
    Blue,
    Green,
    Brown,
    Purple,
    Cyan,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Rubber,
    Metal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeName {
    Small,
    Large,
}

/// Spatial relation vocabulary. The default grammar uses only `front` and
/// `right`; `behind` and `left` exist so ingestion filters can name them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationName {
    Front,
    Right,
    Behind,
    Left,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Cube, Shape::Sphere, Shape::Cylinder];
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Gray,
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Brown,
        Color::Purple,
        Color::Cyan,
        Color::Yellow,
    ];
}

impl Material {
    pub const ALL: [Material; 2] = [Material::Rubber, Material::Metal];
}

impl SizeName {
    pub const ALL: [SizeName; 2] = [SizeName::Small, SizeName::Large];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<SizeName> {
        Self::ALL.get(code as usize).copied()
    }
}

impl RelationName {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationName::Front => "front",
            RelationName::Right => "right",
            RelationName::Behind => "behind",
            RelationName::Left => "left",
        }
    }
}

impl fmt::Display for RelationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RelationName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" => Ok(RelationName::Front),
            "right" => Ok(RelationName::Right),
            "behind" => Ok(RelationName::Behind),
            "left" => Ok(RelationName::Left),
            other => Err(Error::UnknownSymbol(format!("relation '{other}'"))),
        }
    }
}

/// One child of the scene or-node: a configuration with a fixed object count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub objects: usize,
    pub prob: f64,
}

/// One terminal instance the object or-node can choose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub label: usize,
    pub shape: Shape,
    pub color: Color,
    pub material: Material,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeEntry {
    pub name: SizeName,
    pub half_extent: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationType {
    pub name: RelationName,
    /// Unit ground-plane direction `n_e` in the world frame.
    pub direction: Vector3<f64>,
    /// Probability that an ordered object pair carries this relation.
    pub prior: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub relation: f64,
    pub camera: f64,
    pub height: f64,
}

impl Weights {
    pub fn new(relation: f64, camera: f64, height: f64) -> Self {
        Self {
            relation,
            camera,
            height,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.relation, self.camera, self.height]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Switches for energy terms outside the three-term model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyOptions {
    /// Weight of the pairwise overlap hinge. Zero disables it.
    pub overlap_weight: f64,
    /// Evaluate the relation hinge as `max(n·r, 0)` instead of penalizing violation.
    pub paper_literal_sign: bool,
}

/// The scene grammar: configuration, instance and size distributions,
/// relation vocabulary, energy weights, camera and location prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub configs: Vec<ConfigEntry>,
    pub catalog: Vec<ObjectLabel>,
    pub sizes: Vec<SizeEntry>,
    pub relations: Vec<RelationType>,
    pub weights: Weights,
    pub camera: CameraModel,
    pub histogram: LocationHistogram,
    #[serde(default)]
    pub options: EnergyOptions,
}

impl GrammarSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));

        if self.configs.is_empty() {
            return bad("no configurations".into());
        }
        if self.catalog.is_empty() {
            return bad("empty catalog".into());
        }
        if self.sizes.is_empty() {
            return bad("no sizes".into());
        }
        check_distribution("configs", self.configs.iter().map(|c| c.prob))?;
        check_distribution("catalog", self.catalog.iter().map(|c| c.prob))?;
        check_distribution("sizes", self.sizes.iter().map(|s| s.prob))?;

        for c in &self.configs {
            if c.objects == 0 {
                return bad("configuration with zero objects".into());
            }
        }
        let mut counts: Vec<usize> = self.configs.iter().map(|c| c.objects).collect();
        counts.sort_unstable();
        if counts.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate configuration object count".into());
        }

        for (i, entry) in self.catalog.iter().enumerate() {
            if entry.label != i {
                return bad(format!(
                    "catalog labels must be distinct and contiguous from 0; entry {i} has label {}",
                    entry.label
                ));
            }
        }

        let mut names: Vec<SizeName> = Vec::new();
        for s in &self.sizes {
            if !(s.half_extent > 0.0 && s.half_extent.is_finite()) {
                return bad(format!("size {:?} has non-positive half extent", s.name));
            }
            if names.contains(&s.name) {
                return bad(format!("duplicate size {:?}", s.name));
            }
            names.push(s.name);
        }

        for r in &self.relations {
            if !(r.prior > 0.0 && r.prior < 1.0) {
                return bad(format!(
                    "relation {} prior {} not in (0, 1)",
                    r.name, r.prior
                ));
            }
            if (r.direction.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("relation {} direction is not unit length", r.name));
            }
            if r.direction.z != 0.0 {
                return bad(format!(
                    "relation {} direction has a vertical component",
                    r.name
                ));
            }
        }

        let w = &self.weights;
        for (name, v) in [
            ("relation", w.relation),
            ("camera", w.camera),
            ("height", w.height),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!(
                    "weight {name} = {v} must be finite and nonnegative"
                ));
            }
        }
        if !(self.options.overlap_weight >= 0.0 && self.options.overlap_weight.is_finite()) {
            return bad("overlap weight must be finite and nonnegative".into());
        }

        self.camera.validate()?;
        self.histogram.validate()?;
        Ok(())
    }

    pub fn max_objects(&self) -> usize {
        self.configs.iter().map(|c| c.objects).max().unwrap_or(0)
    }

    pub fn config_prob(&self, objects: usize) -> Option<f64> {
        self.configs
            .iter()
            .find(|c| c.objects == objects)
            .map(|c| c.prob)
    }

    pub fn label(&self, label: usize) -> Option<&ObjectLabel> {
        self.catalog.get(label)
    }

    pub fn find_label(&self, shape: Shape, color: Color, material: Material) -> Option<usize> {
        self.catalog
            .iter()
            .find(|l| l.shape == shape && l.color == color && l.material == material)
            .map(|l| l.label)
    }

    pub fn size(&self, name: SizeName) -> Option<&SizeEntry> {
        self.sizes.iter().find(|s| s.name == name)
    }

    pub fn relation_index(&self, name: RelationName) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GrammarSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// A CLEVR-shaped grammar: 3 to 10 objects, the 48 shape × color ×
    /// material labels, two sizes, and `front`/`right` relations whose
    /// directions follow the default camera.
    ///
    /// The camera pose and location prior are configuration values, not
    /// measured dataset calibration.
    pub fn clevr_default() -> Self {
        let configs = (3..=10)
            .map(|n| ConfigEntry {
                objects: n,
                prob: 1.0 / 8.0,
            })
            .collect();

        let mut catalog = Vec::with_capacity(48);
        for shape in Shape::ALL {
            for color in Color::ALL {
                for material in Material::ALL {
                    catalog.push(ObjectLabel {
                        label: catalog.len(),
                        shape,
                        color,
                        material,
                        prob: 1.0 / 48.0,
                    });
                }
            }
        }

        let sizes = vec![
            SizeEntry {
                name: SizeName::Small,
                half_extent: 0.35,
                prob: 0.5,
            },
            SizeEntry {
                name: SizeName::Large,
                half_extent: 0.7,
                prob: 0.5,
            },
        ];

        let camera = CameraModel::clevr_default();
        let (front, right) = camera.ground_directions();
        let relations = vec![
            RelationType {
                name: RelationName::Front,
                direction: front,
                prior: 0.25,
            },
            RelationType {
                name: RelationName::Right,
                direction: right,
                prior: 0.25,
            },
        ];

        let histogram =
            LocationHistogram::from_density((-4.0, 4.0, -4.0, 4.0), 32, 1.0, 1e-6, |x, y| {
                (-(x * x + y * y) / (2.0 * 2.5 * 2.5)).exp()
            })
            .expect("default histogram parameters are valid");

        GrammarSpec {
            configs,
            catalog,
            sizes,
            relations,
            weights: Weights::new(1.0, 0.5, 2.0),
            camera,
            histogram,
            options: EnergyOptions::default(),
        }
    }
}

fn check_distribution(name: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidSpec(format!(
                "{name} probability {p} not in [0, 1]"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidSpec(format!(
            "{name} probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}
