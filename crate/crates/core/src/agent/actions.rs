use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variables::{apply_change, ControlKind, ControlSetting, Direction, Profile};

/// One change to at most one control variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Action {
    Noop,
    Step { variable: String, direction: Direction },
    Toggle { variable: String },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Noop => write!(f, "no-op"),
            Action::Step {
                variable,
                direction: Direction::Increase,
            } => write!(f, "{variable} +step"),
            Action::Step {
                variable,
                direction: Direction::Decrease,
            } => write!(f, "{variable} -step"),
            Action::Step { variable, .. } => write!(f, "{variable} (unchanged)"),
            Action::Toggle { variable } => write!(f, "{variable} toggle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    actions: Vec<Action>,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Action> {
        self.actions.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }

    /// Settings for the next run after taking action `index` from `setting`.
    pub fn apply(&self, profile: &Profile, setting: &ControlSetting, index: usize) -> Result<ControlSetting> {
        let action = self.get(index).ok_or_else(|| {
            Error::Invariant(format!("action index {index} out of range {}", self.len()))
        })?;
        let (name, direction) = match action {
            Action::Noop => return Ok(setting.clone()),
            Action::Step {
                variable,
                direction,
            } => (variable, *direction),
            Action::Toggle { variable } => (variable, Direction::Increase),
        };
        let spec = profile
            .control(name)
            .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
        apply_change(setting, spec, direction)
    }
}

/// No-op first, then each control in profile order: stepped variables give
/// decrease and increase, binary variables give one toggle.
pub fn enumerate_actions(profile: &Profile) -> ActionSpace {
    let mut actions = vec![Action::Noop];
    for c in &profile.controls {
        match c.kind {
            ControlKind::SteppedNumeric => {
                for direction in [Direction::Decrease, Direction::Increase] {
                    actions.push(Action::Step {
                        variable: c.name.clone(),
                        direction,
                    });
                }
            }
            ControlKind::Binary => actions.push(Action::Toggle {
                variable: c.name.clone(),
            }),
        }
    }
    ActionSpace { actions }
}
