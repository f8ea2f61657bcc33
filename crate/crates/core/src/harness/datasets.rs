//! Recipes for the public benchmark datasets.
//!
//! The files are not bundled. Each recipe pins the exact header of the
//! public CSV (compared case-insensitively, in any order) and fails loudly
//! on drift.

use std::collections::BTreeMap;
use std::path::Path;

use super::{HarnessError, Result};
use crate::data::{load_csv, read_header, Dataset, Encoding, IngestRecipe};

pub const BUILTIN_DATASETS: [&str; 6] = ["autompg", "forestfires", "ozone", "boston", "swedish-insurance", "dielectric"];

const MONTHS: [&str; 12] = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];
const DAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];

/// A loaded benchmark dataset.
#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub name: String,
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// The expected CSV header for a builtin dataset.
pub fn expected_columns(name: &str) -> Result<&'static [&'static str]> {
    Ok(match name {
        "autompg" => &[
            "mpg",
            "cylinders",
            "displacement",
            "horsepower",
            "weight",
            "acceleration",
            "model_year",
            "origin",
            "car_name",
        ],
        "forestfires" => &[
            "X", "Y", "month", "day", "FFMC", "DMC", "DC", "ISI", "temp", "RH", "wind", "rain", "area",
        ],
        "ozone" => &[
            "V1", "V2", "V3", "V4", "V5", "V6", "V7", "V8", "V9", "V10", "V11", "V12", "V13",
        ],
        "boston" => &[
            "crim", "zn", "indus", "chas", "nox", "rm", "age", "dis", "rad", "tax", "ptratio", "b", "lstat", "medv",
        ],
        "swedish-insurance" => &["Kilometres", "Zone", "Bonus", "Make", "Insured", "Claims", "Payment"],
        "dielectric" => &["time", "temperature", "strength"],
        other => return Err(HarnessError::UnknownDataset(other.to_string())),
    })
}

/// The ingestion recipe for a builtin dataset, using canonical column names.
pub fn builtin_recipe(name: &str) -> Result<IngestRecipe> {
    let mut r = match name {
        "autompg" => IngestRecipe {
            drop_columns: vec!["car_name".into()],
            missing_markers: vec!["?".into()],
            ..IngestRecipe::target("mpg")
        },
        "forestfires" => {
            let mut r = IngestRecipe::target("area");
            let code = |levels: &[&str]| Encoding::IntegerCode {
                levels: Some(levels.iter().map(|s| s.to_string()).collect()),
            };
            r.categorical_columns.insert("month".into(), code(&MONTHS));
            r.categorical_columns.insert("day".into(), code(&DAYS));
            r
        }
        // V4 is the daily maximum one-hour-average ozone reading
        "ozone" => IngestRecipe {
            missing_markers: vec!["NA".into(), String::new()],
            ..IngestRecipe::target("V4")
        },
        "boston" => IngestRecipe::target("medv"),
        "swedish-insurance" => {
            let mut r = IngestRecipe::target("Payment");
            r.categorical_columns.insert("Zone".into(), Encoding::OneHot);
            r.categorical_columns.insert("Make".into(), Encoding::OneHot);
            r
        }
        "dielectric" => IngestRecipe::target("strength"),
        other => return Err(HarnessError::UnknownDataset(other.to_string())),
    };
    r.missing_markers.sort();
    Ok(r)
}

/// Maps canonical names onto the file's actual header, or reports the
/// columns that differ.
fn match_header(name: &str, header: &[String]) -> Result<BTreeMap<String, String>> {
    let expected = expected_columns(name)?;
    let lower = |s: &str| s.to_ascii_lowercase();
    let missing: Vec<String> = expected
        .iter()
        .filter(|e| !header.iter().any(|h| lower(h) == lower(e)))
        .map(|e| e.to_string())
        .collect();
    let unexpected: Vec<String> = header
        .iter()
        .filter(|h| !expected.iter().any(|e| lower(h) == lower(e)))
        .cloned()
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() || header.len() != expected.len() {
        return Err(HarnessError::HeaderMismatch {
            dataset: name.to_string(),
            missing,
            unexpected,
        });
    }
    Ok(expected
        .iter()
        .map(|e| {
            let actual = header.iter().find(|h| lower(h) == lower(e)).expect("matched above");
            (e.to_string(), actual.clone())
        })
        .collect())
}

fn rename(recipe: IngestRecipe, names: &BTreeMap<String, String>) -> IngestRecipe {
    let n = |c: &String| names.get(c).cloned().unwrap_or_else(|| c.clone());
    IngestRecipe {
        target_column: n(&recipe.target_column),
        drop_columns: recipe.drop_columns.iter().map(n).collect(),
        missing_markers: recipe.missing_markers,
        categorical_columns: recipe
            .categorical_columns
            .into_iter()
            .map(|(c, e)| (n(&c), e))
            .collect(),
    }
}

/// Loads `path` with the named recipe after checking its header.
pub fn load_builtin_dataset(name: &str, path: impl AsRef<Path>) -> Result<NamedDataset> {
    let recipe = builtin_recipe(name)?;
    let header = read_header(path.as_ref())?;
    let names = match_header(name, &header)?;
    let ingested = load_csv(path, &rename(recipe, &names))?;
    Ok(NamedDataset {
        name: name.to_string(),
        dataset: ingested.dataset,
        dropped_rows: ingested.dropped_rows,
    })
}
