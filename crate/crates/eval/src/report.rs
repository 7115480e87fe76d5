use std::fmt;
use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// Listed for completeness; nothing in this crate claims it.
    NotClaimed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub id: &'static str,
    pub status: Status,
    /// Human-readable measurement and threshold.
    pub detail: String,
    #[serde(serialize_with = "secs")]
    pub elapsed: Duration,
    #[serde(serialize_with = "secs")]
    pub budget: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl Outcome {
    /// Passes only if the measurement passed and the run fit its time budget.
    pub fn measured(
        id: &'static str,
        ok: bool,
        detail: String,
        elapsed: Duration,
        budget: Duration,
    ) -> Self {
        let in_time = elapsed <= budget;
        let detail = if ok && !in_time {
            format!("{detail}; over time budget")
        } else {
            detail
        };
        Self {
            id,
            status: if ok && in_time {
                Status::Pass
            } else {
                Status::Fail
            },
            detail,
            elapsed,
            budget,
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotClaimed => "N/A ",
        };
        write!(
            f,
            "{tag} {:<24} {} [{:.2}s / {:.0}s]",
            self.id,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs_f64()
        )
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub outcomes: Vec<Outcome>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(Outcome::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            writeln!(f, "{o}")?;
        }
        let failed = self.outcomes.iter().filter(|o| !o.passed()).count();
        write!(f, "{} criteria, {failed} failed", self.outcomes.len())
    }
}
