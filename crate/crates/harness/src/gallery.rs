//! Bundled scenarios. Everything except `fig2_parking` is a reconstructed
//! layout, not measured data.

use crate::scenario::ScenarioFile;

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".json")))),*]
    };
}

pub const GALLERY: &[(&str, &str)] = bundled!(
    "fig2_parking",
    "valet_parking",
    "pull_over",
    "hailing",
    "case_a_pedestrian",
    "case_b_vehicle",
    "case_c_two_vehicles",
    "case_d_two_pedestrians",
    "case_e_curved_boundary",
);

/// The scaling cases, in the order of the timing table.
pub const SCALING_CASES: &[&str] = &[
    "case_a_pedestrian",
    "case_b_vehicle",
    "case_c_two_vehicles",
    "case_d_two_pedestrians",
    "case_e_curved_boundary",
];

pub fn gallery() -> Vec<(&'static str, ScenarioFile)> {
    GALLERY
        .iter()
        .map(|(name, text)| (*name, ScenarioFile::from_json(text).expect("bundled scenarios parse")))
        .collect()
}

pub fn bundled(name: &str) -> Option<ScenarioFile> {
    GALLERY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioFile::from_json(text).expect("bundled scenarios parse"))
}
