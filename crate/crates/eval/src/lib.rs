//! Acceptance criteria for the scene grammar, runnable from tests and from
//! the `saog eval` command without network access.

pub mod criteria;
pub mod golden;
mod report;

pub use report::{Outcome, Report, Status};

/// Criterion ids in report order.
pub const CRITERIA: [&str; 9] = [
    "energy-suite",
    "map-oracle",
    "sampler",
    "cd-fixed-point",
    "conditional-generation",
    "instance-map",
    "compression",
    "branch-mle",
    "image-quality",
];

/// Runs one criterion by id.
pub fn run(id: &str) -> Option<Outcome> {
    use criteria::*;
    Some(match id {
        "energy-suite" => energy_suite(),
        "map-oracle" => map_oracle(),
        "sampler" => sampler(),
        "cd-fixed-point" => cd_fixed_point(),
        "conditional-generation" => conditional_generation(),
        "instance-map" => instance_map(),
        "compression" => compression(),
        "branch-mle" => branch_mle(),
        "image-quality" => image_quality(),
        _ => return None,
    })
}

/// Runs the selected criteria (all when `only` is empty), calling `each`
/// as every outcome arrives.
pub fn run_selected(only: &[String], mut each: impl FnMut(&Outcome)) -> Result<Report, String> {
    let ids: Vec<&str> = if only.is_empty() {
        CRITERIA.to_vec()
    } else {
        only.iter().map(String::as_str).collect()
    };
    let mut report = Report::default();
    for id in ids {
        let outcome = run(id).ok_or_else(|| format!("unknown criterion '{id}'"))?;
        each(&outcome);
        report.outcomes.push(outcome);
    }
    Ok(report)
}
