//! Building a record's conditioning input from command-level settings.

use serde::{Deserialize, Serialize};

use crate::dataset::Record;
use crate::encoders::{ConditionKind, ConditionSet};
use crate::error::{Error, Result};
use crate::selection::{environment_aware_select, fragment_budget, random_select};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    #[serde(rename = "env")]
    EnvironmentAware,
    Random,
}

impl std::str::FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "env" | "environment-aware" => Ok(SelectionMethod::EnvironmentAware),
            "random" => Ok(SelectionMethod::Random),
            other => Err(Error::Configuration(format!(
                "unknown selection method {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionMethod::EnvironmentAware => "env",
            SelectionMethod::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub kind: ConditionKind,
    pub method: SelectionMethod,
    /// Share of map cells exposed as fragments.
    pub percent: f64,
    pub k: usize,
    pub n_subareas: usize,
}

impl ConditionSpec {
    pub fn fragments(method: SelectionMethod, percent: f64) -> Self {
        Self {
            kind: ConditionKind::Fragments,
            method,
            percent,
            k: 4,
            n_subareas: 16,
        }
    }

    pub fn tx() -> Self {
        Self {
            kind: ConditionKind::TxLocations,
            ..Self::fragments(SelectionMethod::EnvironmentAware, 10.0)
        }
    }

    /// Fragments per map under this budget.
    pub fn budget(&self, grid_n: usize) -> Result<usize> {
        fragment_budget(self.percent, grid_n, self.k)
    }

    pub fn validate(&self, grid_n: usize, capacity: usize) -> Result<()> {
        if self.kind == ConditionKind::Fragments {
            let m = self.budget(grid_n)?;
            if m > capacity {
                return Err(Error::Configuration(format!(
                    "{}% needs {m} fragments but the encoder accepts {capacity}",
                    self.percent
                )));
            }
            if self.method == SelectionMethod::EnvironmentAware && m > self.n_subareas {
                return Err(Error::Configuration(format!(
                    "{m} fragments exceed {} subareas",
                    self.n_subareas
                )));
            }
        }
        Ok(())
    }

    /// The condition for `record`; `seed` only affects random selection.
    pub fn build(&self, record: &Record, seed: u64) -> Result<ConditionSet> {
        match self.kind {
            ConditionKind::TxLocations => {
                Ok(ConditionSet::TxLocations(record.scenario.tx_list.clone()))
            }
            ConditionKind::Fragments => {
                let m = self.budget(record.map.grid_n)?;
                let frags = match self.method {
                    SelectionMethod::EnvironmentAware => environment_aware_select(
                        &record.scenario,
                        &record.map,
                        self.n_subareas,
                        m,
                        self.k,
                    )?,
                    SelectionMethod::Random => random_select(&record.map, m, self.k, seed)?,
                };
                Ok(ConditionSet::Fragments(frags))
            }
        }
    }
}
