//! Schema JSON and cohort CSV ingestion.
//!
//! Cohort files are UTF-8 CSV with a header row. A `patient_id` column is
//! required; each schema feature maps to a column of the same name
//! (categorical cells hold text labels, continuous cells decimals, missing
//! values are empty cells). Optional `time` (nonnegative decimal, weeks) and
//! `event` (0/1) columns carry survival outcomes. Unknown columns are ignored.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    Cohort, Feature, FeatureKind, FeatureSchema, RawCohort, RawRecord, RawValue, SurvivalOutcome,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    features: Vec<SchemaFeature>,
    #[serde(default)]
    always_observed: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum SchemaFeature {
    Categorical { name: String, labels: Vec<String> },
    Continuous { name: String, bin_count: usize },
}

/// Load a feature schema from its JSON declaration.
pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path)?;
    let file: SchemaFile = serde_json::from_str(&text)?;
    schema_from_file(file)
}

fn schema_from_file(file: SchemaFile) -> Result<FeatureSchema> {
    let features: Vec<Feature> = file
        .features
        .into_iter()
        .map(|f| match f {
            SchemaFeature::Categorical { name, labels } => Feature {
                name,
                kind: FeatureKind::Categorical { labels },
            },
            SchemaFeature::Continuous { name, bin_count } => Feature {
                name,
                kind: FeatureKind::Continuous { bin_count },
            },
        })
        .collect();
    let mut always = BTreeSet::new();
    for name in &file.always_observed {
        let idx = features
            .iter()
            .position(|f| &f.name == name)
            .ok_or_else(|| {
                Error::Schema(format!("always_observed names unknown feature `{name}`"))
            })?;
        always.insert(idx);
    }
    FeatureSchema::new(features, always)
}

/// Write a schema back out as JSON (used by the cohort simulator).
pub fn save_schema(schema: &FeatureSchema, path: &Path) -> Result<()> {
    let file = SchemaFile {
        features: schema
            .features()
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Categorical { labels } => SchemaFeature::Categorical {
                    name: f.name.clone(),
                    labels: labels.clone(),
                },
                FeatureKind::Continuous { bin_count } => SchemaFeature::Continuous {
                    name: f.name.clone(),
                    bin_count: *bin_count,
                },
            })
            .collect(),
        always_observed: schema
            .always_observed()
            .iter()
            .map(|&i| schema.feature(i).name.clone())
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Load a raw cohort (continuous features still in their own units).
/// Every invariant violation is reported with the offending line number.
pub fn load_cohort(path: &Path, schema: &FeatureSchema) -> Result<RawCohort> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    let col_of = |name: &str| headers.iter().position(|h| h == name);

    let id_col = col_of("patient_id")
        .ok_or_else(|| Error::Schema("cohort CSV is missing the `patient_id` column".into()))?;
    let time_col = col_of("time");
    let event_col = col_of("event");
    if time_col.is_some() != event_col.is_some() {
        return Err(Error::Schema(
            "`time` and `event` columns must be present together or not at all".into(),
        ));
    }

    let mut feature_cols = Vec::with_capacity(schema.feature_count());
    for f in schema.features() {
        let col = col_of(&f.name).ok_or_else(|| {
            Error::Schema(format!("cohort CSV is missing feature column `{}`", f.name))
        })?;
        feature_cols.push(col);
    }

    // Category label -> state index, per categorical feature.
    let label_maps: Vec<Option<HashMap<&str, usize>>> = schema
        .features()
        .iter()
        .map(|f| match &f.kind {
            FeatureKind::Categorical { labels } => Some(
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.as_str(), i))
                    .collect(),
            ),
            FeatureKind::Continuous { .. } => None,
        })
        .collect();

    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();

    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let row_err = |message: String| Error::CsvRow { row: line, message };

        let get = |col: usize| -> Result<&str> {
            row.get(col)
                .ok_or_else(|| row_err(format!("short row: no column {col}")))
        };

        let patient_id = get(id_col)?.to_string();
        if patient_id.is_empty() {
            return Err(row_err("empty patient_id".into()));
        }
        if !seen_ids.insert(patient_id.clone()) {
            return Err(row_err(format!("duplicate patient_id `{patient_id}`")));
        }

        let mut values = Vec::with_capacity(schema.feature_count());
        for (i, &col) in feature_cols.iter().enumerate() {
            let cell = get(col)?;
            let feature = schema.feature(i);
            if cell.is_empty() {
                if schema.is_always_observed(i) {
                    return Err(row_err(format!(
                        "feature `{}` is always-observed but the cell is empty",
                        feature.name
                    )));
                }
                values.push(None);
                continue;
            }
            let value = match &label_maps[i] {
                Some(map) => {
                    let state = map.get(cell).ok_or_else(|| {
                        row_err(format!(
                            "unknown category label `{cell}` for feature `{}`",
                            feature.name
                        ))
                    })?;
                    RawValue::Category(*state)
                }
                None => {
                    let v: f64 = cell.parse().map_err(|_| {
                        row_err(format!(
                            "cannot parse `{cell}` as a number for feature `{}`",
                            feature.name
                        ))
                    })?;
                    if !v.is_finite() {
                        return Err(row_err(format!(
                            "non-finite value for feature `{}`",
                            feature.name
                        )));
                    }
                    RawValue::Numeric(v)
                }
            };
            values.push(Some(value));
        }
        records.push(RawRecord { patient_id, values });

        if let (Some(tc), Some(ec)) = (time_col, event_col) {
            let time: f64 = get(tc)?.parse().map_err(|_| {
                row_err(format!("cannot parse time `{}`", row.get(tc).unwrap_or("")))
            })?;
            let event = match get(ec)? {
                "0" => false,
                "1" => true,
                other => return Err(row_err(format!("event must be 0 or 1, got `{other}`"))),
            };
            let outcome = SurvivalOutcome::new(time, event).map_err(|e| row_err(e.to_string()))?;
            outcomes.push(outcome);
        }
    }

    Ok(RawCohort {
        schema: schema.clone(),
        records,
        outcomes: time_col.is_some().then_some(outcomes),
    })
}

/// Write a discretized cohort as CSV. Continuous states are written as their
/// representative values so a reload discretizes back to the same states.
pub fn write_cohort_csv(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(cohort.schema.features().iter().map(|f| f.name.clone()));
    let with_outcomes = cohort.outcomes.is_some();
    if with_outcomes {
        header.push("time".into());
        header.push("event".into());
    }
    writer.write_record(&header)?;

    for (idx, rec) in cohort.records.iter().enumerate() {
        let mut row = vec![rec.patient_id.clone()];
        for (i, state) in rec.states.iter().enumerate() {
            let cell = match state {
                None => String::new(),
                Some(s) => match &cohort.schema.feature(i).kind {
                    FeatureKind::Categorical { labels } => labels[*s].clone(),
                    FeatureKind::Continuous { .. } => {
                        format!("{}", cohort.representative(i, *s).unwrap())
                    }
                },
            };
            row.push(cell);
        }
        if let Some(outcomes) = &cohort.outcomes {
            row.push(format!("{}", outcomes[idx].time));
            row.push(if outcomes[idx].event { "1" } else { "0" }.into());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Convenience: load, fit binning on the whole file, and discretize.
/// Pipelines that split train/test must instead fit binning on the training
/// rows only.
pub fn load_and_discretize(path: &Path, schema: &FeatureSchema) -> Result<Cohort> {
    let raw = load_cohort(path, schema)?;
    let binning = super::fit_binning_for_cohort(&raw)?;
    Cohort::from_raw(&raw, binning)
}
