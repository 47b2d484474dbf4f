use super::lmm::{fit_lmm, predict_ranef_lmm, LmmFit};
use super::mlpmm::{fit_mlpmm, predict_ranef_mlpmm, MlpmmFit};
use super::optim::OptimConfig;
use super::{observations, MixedModelError, RanefFlag, SubjectData};
use crate::data::{ItemMap, LongitudinalDataset, SubjectId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fitted model for one modelling unit (an item for the LMM approach, a
/// process otherwise). Single-item processes always use the LMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessFit {
    Lmm(LmmFit),
    Mlpmm(MlpmmFit),
}

impl ProcessFit {
    pub fn converged(&self) -> bool {
        match self {
            ProcessFit::Lmm(f) => f.converged,
            ProcessFit::Mlpmm(f) => f.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFit {
    /// Item name (per-item models) or process name.
    pub name: String,
    pub items: Vec<String>,
    pub fit: ProcessFit,
}

/// All step-1 fits of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModels {
    /// One univariate LMM per item rather than one model per process.
    pub per_item: bool,
    pub units: Vec<UnitFit>,
}

impl MixedModels {
    pub fn n_nonconverged(&self) -> usize {
        self.units.iter().filter(|u| !u.fit.converged()).count()
    }
}

/// Fits every modelling unit of `data`. Units are fitted in parallel and
/// returned in item-map order.
pub fn fit_mixed_models(
    data: &LongitudinalDataset,
    item_map: &ItemMap,
    per_item: bool,
    config: &OptimConfig,
) -> Result<MixedModels, MixedModelError> {
    let units: Vec<(String, Vec<String>)> = if per_item {
        item_map.items().iter().map(|i| (i.clone(), vec![i.clone()])).collect()
    } else {
        item_map
            .processes()
            .iter()
            .map(|p| (p.name.clone(), p.items.iter().map(|&q| item_map.items()[q].clone()).collect()))
            .collect()
    };
    let fits: Vec<Result<UnitFit, MixedModelError>> = units
        .into_par_iter()
        .map(|(name, items)| {
            let cols = item_columns(data, &items)?;
            let obs = observations(data, &cols);
            let fit = if items.len() == 1 {
                ProcessFit::Lmm(fit_lmm(&items[0], &obs, config)?)
            } else {
                ProcessFit::Mlpmm(fit_mlpmm(&items, &obs, config)?)
            };
            Ok(UnitFit { name, items, fit })
        })
        .collect();
    Ok(MixedModels {
        per_item,
        units: fits.into_iter().collect::<Result<_, _>>()?,
    })
}

fn item_columns(data: &LongitudinalDataset, items: &[String]) -> Result<Vec<usize>, MixedModelError> {
    items
        .iter()
        .map(|name| {
            data.items()
                .iter()
                .position(|i| i == name)
                .ok_or_else(|| MixedModelError::MissingFit(format!("item `{name}` absent from data")))
        })
        .collect()
}

/// Which predicted random effects enter the survival model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RanefVariant {
    /// Intercept and slope of one LMM per item.
    Lmm,
    /// Shared intercept and slope of each process.
    MlpmmU,
    /// Shared effects plus the item-specific intercepts.
    MlpmmUb,
}

/// Predicted random effects, one row per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RanefSummary {
    pub variant: RanefVariant,
    pub subjects: Vec<SubjectId>,
    pub columns: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    /// Prediction flag per subject and modelling unit.
    pub flags: Vec<Vec<RanefFlag>>,
}

impl RanefSummary {
    pub fn n_rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }
}

/// Predicts the random effects of every subject of `data` under `models`.
///
/// Column order: for `Lmm`, `{item}_b0, {item}_b1` per item; for the MLPMM
/// variants, `{process}_u0, {process}_u1` per process, followed for `MlpmmUb`
/// by `{item}_b` for each item of every multi-item process.
pub fn build_ranef_summary(
    models: &MixedModels,
    item_map: &ItemMap,
    data: &LongitudinalDataset,
    variant: RanefVariant,
) -> Result<RanefSummary, MixedModelError> {
    let per_item = variant == RanefVariant::Lmm;
    if per_item != models.per_item {
        return Err(MixedModelError::Shape(format!(
            "variant {variant:?} is inconsistent with {} fits",
            if models.per_item { "per-item" } else { "per-process" }
        )));
    }
    let expected: Vec<(String, Vec<String>)> = if per_item {
        item_map.items().iter().map(|i| (i.clone(), vec![i.clone()])).collect()
    } else {
        item_map
            .processes()
            .iter()
            .map(|p| (p.name.clone(), p.items.iter().map(|&q| item_map.items()[q].clone()).collect()))
            .collect()
    };
    let mut units = Vec::with_capacity(expected.len());
    for (name, items) in &expected {
        let unit = models
            .units
            .iter()
            .find(|u| &u.name == name)
            .ok_or_else(|| MixedModelError::MissingFit(name.clone()))?;
        if &unit.items != items {
            return Err(MixedModelError::Shape(format!("fit `{name}` covers different items")));
        }
        match (&unit.fit, items.len()) {
            (ProcessFit::Lmm(_), 1) | (ProcessFit::Mlpmm(_), 2..) => {}
            _ => return Err(MixedModelError::Shape(format!("fit `{name}` has the wrong model type"))),
        }
        units.push(unit);
    }

    let (suffix0, suffix1) = if per_item { ("b0", "b1") } else { ("u0", "u1") };
    let mut columns: Vec<String> = units
        .iter()
        .flat_map(|u| [format!("{}_{suffix0}", u.name), format!("{}_{suffix1}", u.name)])
        .collect();
    if variant == RanefVariant::MlpmmUb {
        for u in units.iter().filter(|u| u.items.len() > 1) {
            columns.extend(u.items.iter().map(|i| format!("{i}_b")));
        }
    }

    let n = data.n_subjects();
    let mut shared = vec![Vec::with_capacity(columns.len()); n];
    let mut specific = vec![Vec::new(); n];
    let mut flags = vec![Vec::with_capacity(units.len()); n];
    for unit in &units {
        let cols = item_columns(data, &unit.items)?;
        let obs: Vec<SubjectData> = observations(data, &cols);
        for (i, subject) in obs.iter().enumerate() {
            let pred = match &unit.fit {
                ProcessFit::Lmm(f) => predict_ranef_lmm(f, subject)?,
                ProcessFit::Mlpmm(f) => predict_ranef_mlpmm(f, subject)?,
            };
            shared[i].extend_from_slice(&pred.values[..2]);
            if variant == RanefVariant::MlpmmUb {
                specific[i].extend_from_slice(&pred.values[2..]);
            }
            flags[i].push(pred.flag);
        }
    }
    let matrix = shared
        .into_iter()
        .zip(specific)
        .map(|(mut row, b)| {
            row.extend(b);
            row
        })
        .collect();
    Ok(RanefSummary {
        variant,
        subjects: data.subjects().to_vec(),
        columns,
        matrix,
        flags,
    })
}
