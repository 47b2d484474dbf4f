//! Containers for longitudinal measurements, survival outcomes and the
//! item → latent-process map, plus CSV ingestion and export.
//!
//! All three inputs are plain CSV files with a header row. Missing
//! measurements are written as an empty cell or the literal `NA`.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error at row {row}, column `{column}`: cannot read `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("alignment error: {0}")]
    Alignment(String),
}

/// Opaque per-subject identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectId(String);

impl SubjectId {
    pub fn new(id: impl Into<String>) -> Result<Self, DataError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(DataError::Schema("subject id must be non-empty".into()));
        }
        Ok(SubjectId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A latent process and the indices (into [`ItemMap::items`]) of the items measuring it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Process {
    pub name: String,
    pub items: Vec<usize>,
}

/// Maps every measured item onto the latent process it reconstructs.
///
/// Item order is the order of the map file; processes are ordered by first
/// appearance. Every downstream column ordering derives from these two orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMap {
    items: Vec<String>,
    item_process: Vec<usize>,
    processes: Vec<Process>,
}

impl ItemMap {
    pub fn from_pairs<I, S, T>(pairs: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut items = Vec::new();
        let mut item_process = Vec::new();
        let mut processes: Vec<Process> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut process_index: HashMap<String, usize> = HashMap::new();
        for (item, process) in pairs {
            let (item, process) = (item.into(), process.into());
            if item.trim().is_empty() || process.trim().is_empty() {
                return Err(DataError::Schema("item map entries must be non-empty".into()));
            }
            if item == "subject" || item == "age" {
                return Err(DataError::Schema(format!("item name `{item}` is reserved")));
            }
            if !seen.insert(item.clone()) {
                return Err(DataError::Schema(format!("item `{item}` mapped twice")));
            }
            let idx = *process_index.entry(process.clone()).or_insert_with(|| {
                processes.push(Process {
                    name: process.clone(),
                    items: Vec::new(),
                });
                processes.len() - 1
            });
            processes[idx].items.push(items.len());
            item_process.push(idx);
            items.push(item);
        }
        if items.is_empty() {
            return Err(DataError::Schema("item map is empty".into()));
        }
        Ok(ItemMap {
            items,
            item_process,
            processes,
        })
    }

    /// One process per item, named after the item.
    pub fn identity<S: AsRef<str>>(items: &[S]) -> Result<Self, DataError> {
        Self::from_pairs(items.iter().map(|s| (s.as_ref().to_string(), s.as_ref().to_string())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let mut reader = open_csv(path.as_ref())?;
        let headers = reader.headers()?.clone();
        let item_col = column_index(&headers, "item")?;
        let process_col = column_index(&headers, "process")?;
        let mut pairs = Vec::new();
        for record in reader.records() {
            let record = record?;
            pairs.push((
                record.get(item_col).unwrap_or("").trim().to_string(),
                record.get(process_col).unwrap_or("").trim().to_string(),
            ));
        }
        Self::from_pairs(pairs)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut w = create_csv(path.as_ref())?;
        w.write_record(["item", "process"])?;
        for (item, &p) in self.items.iter().zip(&self.item_process) {
            w.write_record([item.as_str(), self.processes[p].name.as_str()])?;
        }
        w.flush().map_err(|e| io_err(path.as_ref(), e))?;
        Ok(())
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn processes(&self) -> &[Process] {
        &self.processes
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Number of distinct latent processes `p`.
    pub fn n_processes(&self) -> usize {
        self.processes.len()
    }

    pub fn process_of(&self, item: usize) -> usize {
        self.item_process[item]
    }

    pub fn item_index(&self, name: &str) -> Option<usize> {
        self.items.iter().position(|i| i == name)
    }
}

/// Borrowed view of one subject's visits.
#[derive(Debug, Clone, Copy)]
pub struct SubjectVisits<'a> {
    pub ages: &'a [f64],
    /// Row-major `ages.len() × n_items`.
    pub values: &'a [Option<f64>],
    pub n_items: usize,
}

impl<'a> SubjectVisits<'a> {
    pub fn n_visits(&self) -> usize {
        self.ages.len()
    }

    pub fn value(&self, visit: usize, item: usize) -> Option<f64> {
        self.values[visit * self.n_items + item]
    }

    /// Non-missing `(age, value)` pairs of one item.
    pub fn series(&self, item: usize) -> impl Iterator<Item = (f64, f64)> + 'a {
        let n_items = self.n_items;
        let values = self.values;
        self.ages
            .iter()
            .enumerate()
            .filter_map(move |(j, &a)| values[j * n_items + item].map(|y| (a, y)))
    }
}

/// One input row before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalRow {
    pub subject: SubjectId,
    pub age: f64,
    /// One entry per item of the item map, in item-map order.
    pub values: Vec<Option<f64>>,
}

/// Long-format repeated measurements, grouped by subject and sorted by age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    items: Vec<String>,
    subjects: Vec<SubjectId>,
    offsets: Vec<usize>,
    ages: Vec<f64>,
    values: Vec<Option<f64>>,
}

impl LongitudinalDataset {
    pub fn from_rows(mut rows: Vec<LongitudinalRow>, item_map: &ItemMap) -> Result<Self, DataError> {
        let n_items = item_map.n_items();
        for (r, row) in rows.iter().enumerate() {
            if row.values.len() != n_items {
                return Err(DataError::Schema(format!(
                    "row {} has {} values, expected {n_items}",
                    r + 1,
                    row.values.len()
                )));
            }
            if !row.age.is_finite() {
                return Err(DataError::Domain(format!("row {}: age must be finite", r + 1)));
            }
            if row.values.iter().all(Option::is_none) {
                return Err(DataError::Schema(format!(
                    "row {} (subject {}) has no non-missing value",
                    r + 1,
                    row.subject
                )));
            }
            if let Some(bad) = row.values.iter().flatten().find(|v| !v.is_finite()) {
                return Err(DataError::Domain(format!("row {}: non-finite value {bad}", r + 1)));
            }
        }
        rows.sort_by(|a, b| a.subject.cmp(&b.subject).then(a.age.total_cmp(&b.age)));

        let mut subjects = Vec::new();
        let mut offsets = vec![0];
        let mut ages = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * n_items);
        for row in rows {
            if subjects.last() != Some(&row.subject) {
                if !subjects.is_empty() {
                    offsets.push(ages.len());
                }
                subjects.push(row.subject);
            }
            ages.push(row.age);
            values.extend(row.values);
        }
        offsets.push(ages.len());
        if subjects.is_empty() {
            return Err(DataError::Schema("longitudinal dataset has no rows".into()));
        }
        Ok(LongitudinalDataset {
            items: item_map.items().to_vec(),
            subjects,
            offsets,
            ages,
            values,
        })
    }

    /// Reads a CSV with columns `subject`, `age` and one column per item.
    pub fn load(path: impl AsRef<Path>, item_map: &ItemMap) -> Result<Self, DataError> {
        let path = path.as_ref();
        let mut reader = open_csv(path)?;
        let headers = reader.headers()?.clone();
        let subject_col = column_index(&headers, "subject")?;
        let age_col = column_index(&headers, "age")?;
        let mut item_cols = vec![None; item_map.n_items()];
        for (c, name) in headers.iter().enumerate() {
            if c == subject_col || c == age_col {
                continue;
            }
            match item_map.item_index(name.trim()) {
                Some(q) if item_cols[q].is_none() => item_cols[q] = Some(c),
                Some(_) => return Err(DataError::Schema(format!("duplicate item column `{name}`"))),
                None => {
                    return Err(DataError::Schema(format!(
                        "item column `{name}` is not in the item map"
                    )))
                }
            }
        }
        if let Some(q) = item_cols.iter().position(Option::is_none) {
            return Err(DataError::Schema(format!(
                "item `{}` from the item map has no column",
                item_map.items()[q]
            )));
        }
        let item_cols: Vec<usize> = item_cols.into_iter().flatten().collect();

        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let row = r + 1;
            let subject = SubjectId::new(record.get(subject_col).unwrap_or("").trim())
                .map_err(|_| DataError::Schema(format!("row {row}: empty subject id")))?;
            let age = parse_f64(record.get(age_col).unwrap_or(""), row, "age")?;
            let mut values = Vec::with_capacity(item_cols.len());
            for (q, &c) in item_cols.iter().enumerate() {
                values.push(parse_optional(record.get(c).unwrap_or(""), row, &item_map.items()[q])?);
            }
            rows.push(LongitudinalRow { subject, age, values });
        }
        Self::from_rows(rows, item_map)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut w = create_csv(path.as_ref())?;
        let mut header = vec!["subject".to_string(), "age".to_string()];
        header.extend(self.items.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_subjects() {
            let v = self.visits(i);
            for j in 0..v.n_visits() {
                let mut rec = vec![self.subjects[i].to_string(), v.ages[j].to_string()];
                rec.extend((0..self.items.len()).map(|q| match v.value(j, q) {
                    Some(y) => y.to_string(),
                    None => "NA".to_string(),
                }));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| io_err(path.as_ref(), e))?;
        Ok(())
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_rows(&self) -> usize {
        self.ages.len()
    }

    /// Subject ids in sorted order.
    pub fn subjects(&self) -> &[SubjectId] {
        &self.subjects
    }

    /// Visit counts `m_i`.
    pub fn visit_counts(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn visits(&self, subject: usize) -> SubjectVisits<'_> {
        let (lo, hi) = (self.offsets[subject], self.offsets[subject + 1]);
        SubjectVisits {
            ages: &self.ages[lo..hi],
            values: &self.values[lo * self.items.len()..hi * self.items.len()],
            n_items: self.items.len(),
        }
    }

    pub fn subject_index(&self, id: &SubjectId) -> Option<usize> {
        self.subjects.binary_search(id).ok()
    }

    /// Adds the given subjects with zero visits where not already present.
    pub fn with_subjects<I: IntoIterator<Item = SubjectId>>(self, ids: I) -> Self {
        let extra: BTreeSet<SubjectId> =
            ids.into_iter().filter(|id| self.subject_index(id).is_none()).collect();
        if extra.is_empty() {
            return self;
        }
        let mut all: Vec<(SubjectId, usize, usize)> = self
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), self.offsets[i], self.offsets[i + 1]))
            .chain(extra.into_iter().map(|s| (s, 0, 0)))
            .collect();
        all.sort_by(|a, b| a.0.cmp(&b.0));
        let q = self.items.len();
        let mut subjects = Vec::with_capacity(all.len());
        let mut offsets = vec![0];
        let mut ages = Vec::with_capacity(self.ages.len());
        let mut values = Vec::with_capacity(self.values.len());
        for (id, lo, hi) in all {
            subjects.push(id);
            ages.extend_from_slice(&self.ages[lo..hi]);
            values.extend_from_slice(&self.values[lo * q..hi * q]);
            offsets.push(ages.len());
        }
        LongitudinalDataset {
            items: self.items,
            subjects,
            offsets,
            ages,
            values,
        }
    }

    /// Rows of one subject as owned [`LongitudinalRow`]s.
    pub fn rows_of(&self, subject: usize) -> Vec<LongitudinalRow> {
        let v = self.visits(subject);
        (0..v.n_visits())
            .map(|j| LongitudinalRow {
                subject: self.subjects[subject].clone(),
                age: v.ages[j],
                values: v.values[j * v.n_items..(j + 1) * v.n_items].to_vec(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub subject: SubjectId,
    /// Age at the baseline visit, in years.
    pub baseline_age: f64,
    /// Follow-up time from baseline, in years.
    pub time: f64,
    /// `true` when the event was observed at `time`.
    pub status: bool,
}

/// One row per subject, sorted by subject id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
}

impl SurvivalDataset {
    pub fn from_records(mut records: Vec<SurvivalRecord>) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::Schema("survival dataset has no rows".into()));
        }
        for r in &records {
            if !(r.time > 0.0) || !r.time.is_finite() {
                return Err(DataError::Domain(format!(
                    "subject {}: time must be positive and finite, got {}",
                    r.subject, r.time
                )));
            }
            if !r.baseline_age.is_finite() {
                return Err(DataError::Domain(format!(
                    "subject {}: baseline age must be finite",
                    r.subject
                )));
            }
        }
        records.sort_by(|a, b| a.subject.cmp(&b.subject));
        if let Some(w) = records.windows(2).find(|w| w[0].subject == w[1].subject) {
            return Err(DataError::Schema(format!("duplicate subject {}", w[0].subject)));
        }
        Ok(SurvivalDataset { records })
    }

    /// Reads a CSV with columns `subject`, `baseline_age`, `time`, `status`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let mut reader = open_csv(path.as_ref())?;
        let headers = reader.headers()?.clone();
        let cols = [
            column_index(&headers, "subject")?,
            column_index(&headers, "baseline_age")?,
            column_index(&headers, "time")?,
            column_index(&headers, "status")?,
        ];
        let mut records = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let row = r + 1;
            let subject = SubjectId::new(record.get(cols[0]).unwrap_or("").trim())
                .map_err(|_| DataError::Schema(format!("row {row}: empty subject id")))?;
            let baseline_age = parse_f64(record.get(cols[1]).unwrap_or(""), row, "baseline_age")?;
            let time = parse_f64(record.get(cols[2]).unwrap_or(""), row, "time")?;
            let status = match record.get(cols[3]).unwrap_or("").trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(DataError::Domain(format!(
                        "row {row}: status must be 0 or 1, got `{other}`"
                    )))
                }
            };
            records.push(SurvivalRecord {
                subject,
                baseline_age,
                time,
                status,
            });
        }
        Self::from_records(records)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut w = create_csv(path.as_ref())?;
        w.write_record(["subject", "baseline_age", "time", "status"])?;
        for r in &self.records {
            w.write_record([
                r.subject.to_string(),
                r.baseline_age.to_string(),
                r.time.to_string(),
                (r.status as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| io_err(path.as_ref(), e))?;
        Ok(())
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.status).count()
    }

    pub fn n_censored(&self) -> usize {
        self.len() - self.n_events()
    }

    pub fn outcome(&self) -> SurvivalOutcome {
        SurvivalOutcome {
            time: self.records.iter().map(|r| r.time).collect(),
            event: self.records.iter().map(|r| r.status).collect(),
        }
    }

    pub fn summary(&self) -> SurvivalSummary {
        SurvivalSummary {
            n: self.len(),
            events: self.n_events(),
            censored: self.n_censored(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalSummary {
    pub n: usize,
    pub events: usize,
    pub censored: usize,
}

/// Follow-up times and event indicators, aligned with some row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time: Vec<f64>,
    pub event: Vec<bool>,
}

impl SurvivalOutcome {
    pub fn new(time: Vec<f64>, event: Vec<bool>) -> Self {
        assert_eq!(time.len(), event.len(), "time and event lengths differ");
        SurvivalOutcome { time, event }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    pub fn subset(&self, idx: &[usize]) -> SurvivalOutcome {
        SurvivalOutcome {
            time: idx.iter().map(|&i| self.time[i]).collect(),
            event: idx.iter().map(|&i| self.event[i]).collect(),
        }
    }
}

/// Longitudinal and survival data joined on subject id.
///
/// Subject `i` of the longitudinal table is record `i` of the survival table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub longitudinal: LongitudinalDataset,
    pub survival: SurvivalDataset,
    pub item_map: ItemMap,
}

impl Study {
    pub fn align(
        longitudinal: LongitudinalDataset,
        survival: SurvivalDataset,
        item_map: ItemMap,
    ) -> Result<Self, DataError> {
        if longitudinal.items() != item_map.items() {
            return Err(DataError::Schema(
                "longitudinal items do not follow the item map".into(),
            ));
        }
        let l: BTreeSet<&SubjectId> = longitudinal.subjects().iter().collect();
        let s: BTreeSet<&SubjectId> = survival.records().iter().map(|r| &r.subject).collect();
        if l != s {
            let only_l: Vec<String> = l.difference(&s).map(|x| x.to_string()).collect();
            let only_s: Vec<String> = s.difference(&l).map(|x| x.to_string()).collect();
            return Err(DataError::Alignment(format!(
                "subject sets differ; only longitudinal: [{}]; only survival: [{}]",
                only_l.join(", "),
                only_s.join(", ")
            )));
        }
        let mut late = Vec::new();
        for (i, rec) in survival.records().iter().enumerate() {
            let limit = rec.baseline_age + rec.time;
            if longitudinal.visits(i).ages.iter().any(|&a| a > limit) {
                late.push(rec.subject.to_string());
            }
        }
        if !late.is_empty() {
            return Err(DataError::Alignment(format!(
                "measurements dated after event/censoring time for subjects [{}]",
                late.join(", ")
            )));
        }
        Ok(Study {
            longitudinal,
            survival,
            item_map,
        })
    }

    pub fn load(
        longitudinal: impl AsRef<Path>,
        survival: impl AsRef<Path>,
        item_map: impl AsRef<Path>,
    ) -> Result<Self, DataError> {
        let map = ItemMap::load(item_map)?;
        let longit = LongitudinalDataset::load(longitudinal, &map)?;
        let surv = SurvivalDataset::load(survival)?;
        Self::align(longit, surv, map)
    }

    pub fn n_subjects(&self) -> usize {
        self.survival.len()
    }

    /// Builds the dataset made of the given subjects (repeats allowed).
    ///
    /// Every occurrence keeps the subject's full block of visits; the k-th
    /// repeat of subject `s` is renamed `s#k` so repeats are distinct clusters.
    pub fn resample(&self, draws: &[usize]) -> Study {
        let mut occurrences: BTreeMap<usize, usize> = BTreeMap::new();
        let mut rows = Vec::new();
        let mut records = Vec::with_capacity(draws.len());
        for &i in draws {
            let k = occurrences.entry(i).or_insert(0);
            *k += 1;
            let id = SubjectId(format!("{}#{}", self.survival.records[i].subject, k));
            for mut row in self.longitudinal.rows_of(i) {
                row.subject = id.clone();
                rows.push(row);
            }
            let mut rec = self.survival.records[i].clone();
            rec.subject = id;
            records.push(rec);
        }
        let ids: Vec<SubjectId> = records.iter().map(|r: &SurvivalRecord| r.subject.clone()).collect();
        let longitudinal = if rows.is_empty() {
            LongitudinalDataset {
                items: self.item_map.items().to_vec(),
                subjects: Vec::new(),
                offsets: vec![0],
                ages: Vec::new(),
                values: Vec::new(),
            }
        } else {
            LongitudinalDataset::from_rows(rows, &self.item_map)
                .expect("resampled rows come from a validated dataset")
        }
        .with_subjects(ids);
        let survival =
            SurvivalDataset::from_records(records).expect("resampled records are valid");
        Study {
            longitudinal,
            survival,
            item_map: self.item_map.clone(),
        }
    }

    /// True when baseline ages differ between subjects.
    pub fn baseline_age_varies(&self) -> bool {
        let recs = self.survival.records();
        recs.iter().any(|r| r.baseline_age != recs[0].baseline_age)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn create_csv(path: &Path) -> Result<csv::Writer<std::fs::File>, DataError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::Schema(format!("missing column `{name}`")))
}

fn parse_f64(cell: &str, row: usize, column: &str) -> Result<f64, DataError> {
    let cell = cell.trim();
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::Parse {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        })
}

fn parse_optional(cell: &str, row: usize, column: &str) -> Result<Option<f64>, DataError> {
    let trimmed = cell.trim();
    if trimmed.is_empty() || trimmed == "NA" {
        return Ok(None);
    }
    parse_f64(trimmed, row, column).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        path
    }

    fn two_items() -> ItemMap {
        ItemMap::from_pairs([("ab_A", "P1"), ("ab_B", "P1")]).unwrap()
    }

    #[test]
    fn loads_single_subject_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            &dir,
            "l.csv",
            "subject,age,ab_A,ab_B\ns1,7.5,1.0,NA\ns1,6.0,0.5,0.25\ns1,8.0,,2\n",
        );
        let d = LongitudinalDataset::load(&p, &two_items()).unwrap();
        assert_eq!(d.n_subjects(), 1);
        assert_eq!(d.visit_counts(), vec![3]);
        let v = d.visits(0);
        assert_eq!(v.ages, &[6.0, 7.5, 8.0]);
        assert_eq!(v.value(1, 1), None);
        assert_eq!(v.value(2, 0), None);
        assert_eq!(v.value(2, 1), Some(2.0));
    }

    #[test]
    fn unknown_item_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "l.csv", "subject,age,ab_A,ab_B,ab_X\ns1,1,1,1,1\n");
        let err = LongitudinalDataset::load(&p, &two_items()).unwrap_err();
        assert!(matches!(err, DataError::Schema(ref m) if m.contains("ab_X")), "{err}");
    }

    #[test]
    fn malformed_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "l.csv", "subject,age,ab_A,ab_B\ns1,1,1,1\ns1,2,oops,1\n");
        match LongitudinalDataset::load(&p, &two_items()).unwrap_err() {
            DataError::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "ab_A");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn all_missing_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "l.csv", "subject,age,ab_A,ab_B\ns1,1,NA,\n");
        assert!(matches!(
            LongitudinalDataset::load(&p, &two_items()),
            Err(DataError::Schema(_))
        ));
    }

    #[test]
    fn survival_rows_validated() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write_file(&dir, "s.csv", "subject,baseline_age,time,status\ns1,6.2,3.5,1\n");
        let s = SurvivalDataset::load(&ok).unwrap();
        assert_eq!(s.records()[0].time, 3.5);
        assert!(s.records()[0].status);

        let zero = write_file(&dir, "z.csv", "subject,baseline_age,time,status\ns1,6.2,0,1\n");
        assert!(matches!(SurvivalDataset::load(&zero), Err(DataError::Domain(_))));
        let bad_status =
            write_file(&dir, "b.csv", "subject,baseline_age,time,status\ns1,6.2,1,2\n");
        assert!(matches!(SurvivalDataset::load(&bad_status), Err(DataError::Domain(_))));
        let dup = write_file(
            &dir,
            "d.csv",
            "subject,baseline_age,time,status\ns1,6.2,1,1\ns1,6.2,2,0\n",
        );
        assert!(matches!(SurvivalDataset::load(&dup), Err(DataError::Schema(_))));
    }

    #[test]
    fn survival_summary_counts() {
        let records = (0..93)
            .map(|i| SurvivalRecord {
                subject: SubjectId::new(format!("p{i:03}")).unwrap(),
                baseline_age: 6.0 + i as f64 * 0.01,
                time: 1.0 + i as f64 * 0.1,
                status: i < 55,
            })
            .collect();
        let s = SurvivalDataset::from_records(records).unwrap();
        assert_eq!(
            s.summary(),
            SurvivalSummary {
                n: 93,
                events: 55,
                censored: 38
            }
        );
    }

    fn small_study_parts() -> (LongitudinalDataset, SurvivalDataset, ItemMap) {
        let map = two_items();
        let sid = |s: &str| SubjectId::new(s).unwrap();
        let rows = vec![
            LongitudinalRow { subject: sid("a"), age: 5.0, values: vec![Some(1.0), Some(2.0)] },
            LongitudinalRow { subject: sid("a"), age: 6.0, values: vec![Some(1.5), None] },
            LongitudinalRow { subject: sid("b"), age: 7.0, values: vec![None, Some(0.0)] },
        ];
        let longit = LongitudinalDataset::from_rows(rows, &map).unwrap();
        let surv = SurvivalDataset::from_records(vec![
            SurvivalRecord { subject: sid("a"), baseline_age: 5.0, time: 2.0, status: true },
            SurvivalRecord { subject: sid("b"), baseline_age: 7.0, time: 1.0, status: false },
        ])
        .unwrap();
        (longit, surv, map)
    }

    #[test]
    fn align_accepts_matching_sets() {
        let (l, s, m) = small_study_parts();
        let study = Study::align(l, s, m).unwrap();
        assert_eq!(study.n_subjects(), 2);
    }

    #[test]
    fn align_rejects_subject_only_in_survival() {
        let (l, s, m) = small_study_parts();
        let mut recs = s.records().to_vec();
        recs.push(SurvivalRecord {
            subject: SubjectId::new("c").unwrap(),
            baseline_age: 1.0,
            time: 1.0,
            status: false,
        });
        let s = SurvivalDataset::from_records(recs).unwrap();
        match Study::align(l, s, m).unwrap_err() {
            DataError::Alignment(msg) => assert!(msg.contains('c')),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn align_rejects_measurement_after_event() {
        let (l, s, m) = small_study_parts();
        let mut rows = l.rows_of(0);
        rows.extend(l.rows_of(1));
        // subject a: baseline 5.0, event at 2.0 years -> last admissible age 7.0
        rows.push(LongitudinalRow {
            subject: SubjectId::new("a").unwrap(),
            age: 7.25,
            values: vec![Some(0.0), None],
        });
        let l = LongitudinalDataset::from_rows(rows, &m).unwrap();
        assert!(matches!(Study::align(l, s, m), Err(DataError::Alignment(_))));
    }

    #[test]
    fn resample_replicates_whole_clusters() {
        let (l, s, m) = small_study_parts();
        let study = Study::align(l, s, m).unwrap();
        let b = study.resample(&[0, 0, 1]);
        assert_eq!(b.n_subjects(), 3);
        assert_eq!(b.longitudinal.n_rows(), 2 + 2 + 1);
        let ids: Vec<&str> = b.survival.records().iter().map(|r| r.subject.as_str()).collect();
        assert_eq!(ids, vec!["a#1", "a#2", "b#1"]);
    }

    #[test]
    fn mark_md_shaped_item_map() {
        // 37 single-item proteins, 52 with two, 18 with three, 10 with four, 1 with five.
        let mut pairs = Vec::new();
        let mut protein = 0;
        for (count, r) in [(37, 1), (52, 2), (18, 3), (10, 4), (1, 5)] {
            for _ in 0..count {
                for q in 0..r {
                    pairs.push((format!("ab_{protein}_{q}"), format!("prot_{protein}")));
                }
                protein += 1;
            }
        }
        let map = ItemMap::from_pairs(pairs).unwrap();
        assert_eq!(map.n_processes(), 118);
        assert_eq!(map.processes().iter().map(|p| p.items.len()).sum::<usize>(), 240);
        assert_eq!(map.n_items(), 240);
    }
}
