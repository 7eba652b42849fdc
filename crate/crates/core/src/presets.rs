//! Bundled ring-road scenarios.

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};

const PRESETS: &[(&str, &str)] = &[
    ("uncontrolled", include_str!("../presets/uncontrolled.cfg")),
    ("clf_profile1", include_str!("../presets/clf_profile1.cfg")),
    ("cbf", include_str!("../presets/cbf.cfg")),
    ("clf_cbf_profile1", include_str!("../presets/clf_cbf_profile1.cfg")),
    ("clf_profile2", include_str!("../presets/clf_profile2.cfg")),
    ("cbf_profile2", include_str!("../presets/cbf_profile2.cfg")),
    ("clf_cbf_profile2", include_str!("../presets/clf_cbf_profile2.cfg")),
];

const ALIASES: &[(&str, &str)] = &[("circular_clf_cbf", "clf_cbf_profile1")];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// Raw config text of a bundled preset.
pub fn preset_text(name: &str) -> Result<&'static str> {
    let name = ALIASES
        .iter()
        .find(|(alias, _)| *alias == name)
        .map_or(name, |(_, target)| target);
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    ScenarioConfig::parse(preset_text(name)?, &format!("preset:{name}"))
}
