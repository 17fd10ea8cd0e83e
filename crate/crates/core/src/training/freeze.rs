use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{remove_top_layers, ModelGraph};

/// Fine-tuning regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Train every layer.
    Full,
    /// Freeze layers below the split.
    FtTop,
    /// Freeze layers above the split, except fc8.
    FtBottom,
    /// Drop layers above the split, attach a fresh fc8, train the rest.
    FtKeep,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::FtTop => "ft-top",
            Strategy::FtBottom => "ft-bottom",
            Strategy::FtKeep => "ft-keep",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Strategy::Full, Strategy::FtTop, Strategy::FtBottom, Strategy::FtKeep]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}` (full, ft-top, ft-bottom, ft-keep)")))
    }
}

fn is_fc8(layer: &str) -> bool {
    layer == "fc8" || layer.ends_with("/fc8")
}

/// Train/freeze flag per layer. Layers without parameters carry a flag too,
/// but it has no effect.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezePlan {
    trained: BTreeMap<String, bool>,
    /// Set for `ft-keep`: layers above this one are removed.
    pub removal: Option<String>,
}

impl FreezePlan {
    pub fn train_all(model: &ModelGraph) -> Self {
        FreezePlan {
            trained: model.layers().iter().map(|l| (l.name.clone(), true)).collect(),
            removal: None,
        }
    }

    /// Every listed layer trained.
    pub fn from_layers<S: AsRef<str>>(names: &[S]) -> Self {
        FreezePlan {
            trained: names.iter().map(|n| (n.as_ref().to_string(), true)).collect(),
            removal: None,
        }
    }

    /// Layer names may carry a `branch/` prefix; any `fc8` is always trained.
    pub fn is_trained(&self, layer: &str) -> bool {
        is_fc8(layer) || self.trained.get(layer).copied().unwrap_or(false)
    }

    /// Whether the parameter `key` (`layer.weight` / `layer.bias`) is updated.
    pub fn trains_param(&self, key: &str) -> bool {
        self.is_trained(key.split('.').next().unwrap_or(key))
    }

    pub fn freeze(&mut self, layer: &str) -> Result<()> {
        if is_fc8(layer) {
            return Err(Error::Config("fc8 is always trained".into()));
        }
        match self.trained.get_mut(layer) {
            Some(f) => {
                *f = false;
                Ok(())
            }
            None => Err(Error::Config(format!("unknown layer `{layer}`"))),
        }
    }

    /// Freezes every layer except those with the given names (and fc8).
    pub fn freeze_all_but(&mut self, keep: &[&str]) {
        for (name, flag) in self.trained.iter_mut() {
            *flag = is_fc8(name) || keep.contains(&name.as_str());
        }
    }

    pub fn trained_layers(&self) -> Vec<&str> {
        self.trained
            .keys()
            .filter(|k| self.is_trained(k))
            .map(String::as_str)
            .collect()
    }

    pub fn frozen_layers(&self) -> Vec<&str> {
        self.trained
            .keys()
            .filter(|k| !self.is_trained(k))
            .map(String::as_str)
            .collect()
    }
}

/// Flags for `strategy` with `split` as the boundary layer. For `ft-keep`
/// the plan refers to the model after [`apply_strategy`] trims it.
pub fn build_freeze_plan(strategy: Strategy, model: &ModelGraph, split: &str) -> Result<FreezePlan> {
    let idx = model.layer_index(split)?;
    let mut plan = FreezePlan::train_all(model);
    for (i, layer) in model.layers().iter().enumerate() {
        let train = match strategy {
            Strategy::Full | Strategy::FtKeep => true,
            Strategy::FtTop => i >= idx,
            Strategy::FtBottom => i <= idx,
        };
        plan.trained.insert(layer.name.clone(), train);
    }
    if strategy == Strategy::FtKeep {
        plan.removal = Some(split.to_string());
    }
    Ok(plan)
}

/// Builds the plan and, for `ft-keep`, the trimmed model it applies to.
pub fn apply_strategy(
    strategy: Strategy,
    model: &ModelGraph,
    split: &str,
    categories: usize,
) -> Result<(ModelGraph, FreezePlan)> {
    let plan = build_freeze_plan(strategy, model, split)?;
    if strategy == Strategy::FtKeep {
        let trimmed = remove_top_layers(model, split, categories)?;
        let mut p = FreezePlan::train_all(&trimmed);
        p.removal = plan.removal;
        return Ok((trimmed, p));
    }
    Ok((model.clone(), plan))
}
