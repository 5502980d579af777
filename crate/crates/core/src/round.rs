//! Labelled/unlabelled partition carried from one selection round to the next.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::sampler::QuerySet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u32,
    pub labelled_ids: BTreeSet<String>,
    pub unlabelled_ids: BTreeSet<String>,
    pub budget: usize,
    #[serde(default)]
    pub config: EngineConfig,
}

impl RoundState {
    pub fn new(
        labelled: impl IntoIterator<Item = String>,
        unlabelled: impl IntoIterator<Item = String>,
        budget: usize,
        config: EngineConfig,
    ) -> Result<Self> {
        let state = RoundState {
            round: 0,
            labelled_ids: labelled.into_iter().collect(),
            unlabelled_ids: unlabelled.into_iter().collect(),
            budget,
            config,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("budget must be positive"));
        }
        if let Some(id) = self.labelled_ids.intersection(&self.unlabelled_ids).next() {
            return Err(Error::invalid(format!(
                "image `{id}` is both labelled and unlabelled"
            )));
        }
        self.config.validate()
    }

    pub fn total(&self) -> usize {
        self.labelled_ids.len() + self.unlabelled_ids.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: RoundState = serde_json::from_str(&text)?;
        state.validate()?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Moves the queried images into the labelled set and opens the next round.
pub fn advance_round(state: &RoundState, queries: &QuerySet) -> Result<RoundState> {
    advance_with_ids(state, &queries.ids)
}

pub fn advance_with_ids(state: &RoundState, ids: &[String]) -> Result<RoundState> {
    if ids.len() > state.budget {
        return Err(Error::invalid(format!(
            "{} queries exceed the budget of {}",
            ids.len(),
            state.budget
        )));
    }
    let mut next = state.clone();
    for id in ids {
        if state.labelled_ids.contains(id) {
            return Err(Error::AlreadyLabelled(id.clone()));
        }
        if !next.unlabelled_ids.remove(id) {
            // either unknown or queried twice
            return Err(if state.unlabelled_ids.contains(id) {
                Error::invalid(format!("image `{id}` queried twice"))
            } else {
                Error::UnknownId(id.clone())
            });
        }
        next.labelled_ids.insert(id.clone());
    }
    next.round += 1;
    Ok(next)
}
