//! Longitudinal data model and its CSV schema.
//!
//! A dataset holds, per subject: treatment assignments at time steps
//! `1..=p`, optional covariates, and `q` outcome items at each later time
//! step `p+1..=m`. The CSV layout is one row per subject with columns
//! `subject_id`, `t1..t<p>`, `x_<name>`, and `y<i>_<item>`; item names must
//! repeat identically (and in the same order) at every outcome time point.
//! Unrecognized columns and non-contiguous time indices are rejected.
//!
//! Missing cells (empty or `NA`/`NaN`) trigger complete-case filtering: the
//! whole subject row is dropped and counted in the ingestion report.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Minimum subject count accepted at ingestion.
pub const MIN_SUBJECTS: usize = 20;

/// Sign convention of outcome items in a source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Higher item values mean improvement; stored as-is.
    Improvement,
    /// Higher item values mean severity; items are negated at ingestion.
    RawSeverity,
}

impl std::str::FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "improvement" => Ok(Orientation::Improvement),
            "raw-severity" | "severity" => Ok(Orientation::RawSeverity),
            other => Err(Error::InvalidConfig(format!(
                "unknown orientation `{other}` (expected `improvement` or `raw-severity`)"
            ))),
        }
    }
}

/// Counts reported by CSV ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IngestionReport {
    pub rows_read: usize,
    pub rows_dropped_incomplete: usize,
}

/// Subjects x (treatments, covariates, per-time-point outcome items).
///
/// Outcome items are always stored in improvement orientation.
#[derive(Debug, Clone)]
pub struct LongitudinalDataset {
    subject_ids: Vec<String>,
    treatments: Array2<f64>,
    covariates: Array2<f64>,
    covariate_names: Vec<String>,
    outcomes: Vec<Array2<f64>>,
    item_names: Vec<String>,
}

impl LongitudinalDataset {
    /// Builds a dataset from parts, validating the structural invariants.
    pub fn new(
        subject_ids: Vec<String>,
        treatments: Array2<f64>,
        covariate_names: Vec<String>,
        covariates: Array2<f64>,
        item_names: Vec<String>,
        outcomes: Vec<Array2<f64>>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        if n < MIN_SUBJECTS {
            return Err(Error::InvalidDataset(format!(
                "need at least {MIN_SUBJECTS} complete subjects, got {n}"
            )));
        }
        let p = treatments.ncols();
        if p < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 treatment time steps, got {p}"
            )));
        }
        if outcomes.is_empty() {
            return Err(Error::InvalidDataset(
                "need at least one outcome time point after the treatment of interest".into(),
            ));
        }
        if treatments.nrows() != n || covariates.nrows() != n {
            return Err(Error::InvalidDataset(
                "row-count mismatch between subject ids, treatments, and covariates".into(),
            ));
        }
        if covariates.ncols() != covariate_names.len() {
            return Err(Error::InvalidDataset(
                "covariate name count does not match covariate columns".into(),
            ));
        }
        let q = item_names.len();
        if q == 0 {
            return Err(Error::InvalidDataset("no outcome items".into()));
        }
        for (b, y) in outcomes.iter().enumerate() {
            if y.nrows() != n || y.ncols() != q {
                return Err(Error::InvalidDataset(format!(
                    "outcome block for time point {} has shape {}x{}, expected {}x{}",
                    p + 1 + b,
                    y.nrows(),
                    y.ncols(),
                    n,
                    q
                )));
            }
        }
        let all_finite = treatments.iter().all(|v| v.is_finite())
            && covariates.iter().all(|v| v.is_finite())
            && outcomes.iter().all(|y| y.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::InvalidDataset("non-finite value in dataset".into()));
        }
        Ok(Self {
            subject_ids,
            treatments,
            covariates,
            covariate_names,
            outcomes,
            item_names,
        })
    }

    pub fn n(&self) -> usize {
        self.subject_ids.len()
    }

    /// Index of the treatment of interest (the last treatment time step).
    pub fn p(&self) -> usize {
        self.treatments.ncols()
    }

    /// Last time point; outcomes exist for `p+1..=m`.
    pub fn m(&self) -> usize {
        self.p() + self.outcomes.len()
    }

    pub fn q(&self) -> usize {
        self.item_names.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Treatment column for 1-based time step `j <= p`.
    pub fn treatment(&self, j: usize) -> ArrayView1<'_, f64> {
        assert!(j >= 1 && j <= self.p(), "treatment index out of range");
        self.treatments.column(j - 1)
    }

    /// The treatment of interest, `T_p`.
    pub fn current_treatment(&self) -> ArrayView1<'_, f64> {
        self.treatments.column(self.p() - 1)
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    /// Outcome items at 1-based time point `i` (`p < i <= m`).
    pub fn outcome(&self, i: usize) -> ArrayView2<'_, f64> {
        assert!(i > self.p() && i <= self.m(), "time point out of range");
        self.outcomes[i - self.p() - 1].view()
    }

    /// Time points carrying outcomes, in order.
    pub fn outcome_time_points(&self) -> impl Iterator<Item = usize> {
        (self.p() + 1)..=self.m()
    }

    /// Row subset (e.g. a fold or bootstrap draw); indices may repeat.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let take = |m: &Array2<f64>| {
            let mut out = Array2::zeros((rows.len(), m.ncols()));
            for (dst, &src) in rows.iter().enumerate() {
                out.row_mut(dst).assign(&m.row(src));
            }
            out
        };
        Self {
            subject_ids: rows.iter().map(|&r| self.subject_ids[r].clone()).collect(),
            treatments: take(&self.treatments),
            covariates: take(&self.covariates),
            covariate_names: self.covariate_names.clone(),
            outcomes: self.outcomes.iter().map(take).collect(),
            item_names: self.item_names.clone(),
        }
    }

    /// Dataset with outcome item columns permuted by `perm` (new item `j`
    /// is old item `perm[j]`).
    pub fn permute_items(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.q());
        let permute = |m: &Array2<f64>| {
            let mut out = Array2::zeros(m.raw_dim());
            for (dst, &src) in perm.iter().enumerate() {
                out.column_mut(dst).assign(&m.column(src));
            }
            out
        };
        Self {
            subject_ids: self.subject_ids.clone(),
            treatments: self.treatments.clone(),
            covariates: self.covariates.clone(),
            covariate_names: self.covariate_names.clone(),
            outcomes: self.outcomes.iter().map(permute).collect(),
            item_names: perm.iter().map(|&s| self.item_names[s].clone()).collect(),
        }
    }

    pub fn read_csv_path(path: &Path, orientation: Orientation) -> Result<(Self, IngestionReport)> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, orientation)
    }

    pub fn read_csv<R: Read>(reader: R, orientation: Orientation) -> Result<(Self, IngestionReport)> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::MalformedCsv(e.to_string()))?
            .clone();
        let layout = HeaderLayout::parse(headers.iter())?;

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut ids: Vec<String> = Vec::new();
        let mut read = 0usize;
        let mut dropped = 0usize;
        for record in rdr.records() {
            let record = record.map_err(|e| Error::MalformedCsv(e.to_string()))?;
            if record.len() != headers.len() {
                return Err(Error::MalformedCsv(format!(
                    "row {} has {} fields, header has {}",
                    read + 1,
                    record.len(),
                    headers.len()
                )));
            }
            read += 1;
            let mut vals = vec![0.0f64; headers.len()];
            let mut id = String::new();
            let mut missing = false;
            for (c, field) in record.iter().enumerate() {
                if c == layout.subject_col {
                    id = field.to_string();
                    continue;
                }
                let trimmed = field.trim();
                if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("na") {
                    missing = true;
                    continue;
                }
                match trimmed.parse::<f64>() {
                    Ok(v) if v.is_finite() => vals[c] = v,
                    Ok(_) => missing = true, // parsed NaN/inf counts as missing
                    Err(_) => {
                        return Err(Error::MalformedCsv(format!(
                            "row {read}, column `{}`: cannot parse `{trimmed}` as a number",
                            &headers[c]
                        )))
                    }
                }
            }
            if missing {
                dropped += 1;
                continue;
            }
            ids.push(id);
            rows.push(vals);
        }

        let n = rows.len();
        if n < MIN_SUBJECTS {
            return Err(Error::InvalidDataset(format!(
                "need at least {MIN_SUBJECTS} complete subjects, got {n} ({dropped} dropped as incomplete)"
            )));
        }
        let p = layout.p;
        let q = layout.item_names.len();
        let mut treatments = Array2::zeros((n, p));
        let mut covariates = Array2::zeros((n, layout.covariate_names.len()));
        let mut outcomes: Vec<Array2<f64>> =
            (0..layout.n_time_points).map(|_| Array2::zeros((n, q))).collect();
        let sign = match orientation {
            Orientation::Improvement => 1.0,
            Orientation::RawSeverity => -1.0,
        };
        for (r, vals) in rows.iter().enumerate() {
            for (c, role) in layout.roles.iter().enumerate() {
                match *role {
                    Role::SubjectId => {}
                    Role::Treatment(j) => treatments[(r, j)] = vals[c],
                    Role::Covariate(j) => covariates[(r, j)] = vals[c],
                    Role::Outcome { block, item } => outcomes[block][(r, item)] = sign * vals[c],
                }
            }
        }
        let ds = Self::new(
            ids,
            treatments,
            layout.covariate_names,
            covariates,
            layout.item_names,
            outcomes,
        )?;
        Ok((
            ds,
            IngestionReport {
                rows_read: read,
                rows_dropped_incomplete: dropped,
            },
        ))
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    /// Writes the canonical column order: `subject_id`, `t1..t<p>`, `x_*`,
    /// `y<i>_<item>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = vec!["subject_id".into()];
        for j in 1..=self.p() {
            header.push(format!("t{j}"));
        }
        for name in &self.covariate_names {
            header.push(format!("x_{name}"));
        }
        for i in self.outcome_time_points() {
            for item in &self.item_names {
                header.push(format!("y{i}_{item}"));
            }
        }
        wtr.write_record(&header)
            .map_err(|e| Error::MalformedCsv(e.to_string()))?;
        for r in 0..self.n() {
            let mut rec: Vec<String> = vec![self.subject_ids[r].clone()];
            for j in 0..self.p() {
                rec.push(self.treatments[(r, j)].to_string());
            }
            for j in 0..self.covariate_names.len() {
                rec.push(self.covariates[(r, j)].to_string());
            }
            for y in &self.outcomes {
                for c in 0..self.q() {
                    rec.push(y[(r, c)].to_string());
                }
            }
            wtr.write_record(&rec)
                .map_err(|e| Error::MalformedCsv(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Role {
    SubjectId,
    Treatment(usize),
    Covariate(usize),
    Outcome { block: usize, item: usize },
}

struct HeaderLayout {
    roles: Vec<Role>,
    subject_col: usize,
    p: usize,
    n_time_points: usize,
    covariate_names: Vec<String>,
    item_names: Vec<String>,
}

impl HeaderLayout {
    fn parse<'a>(headers: impl Iterator<Item = &'a str>) -> Result<Self> {
        enum Raw {
            Subject,
            Treatment(usize),
            Covariate(String),
            Outcome { time: usize, item: String },
        }
        let mut raw: Vec<Raw> = Vec::new();
        for h in headers {
            if h == "subject_id" {
                raw.push(Raw::Subject);
            } else if let Some(idx) = h.strip_prefix('t').and_then(|s| s.parse::<usize>().ok()) {
                raw.push(Raw::Treatment(idx));
            } else if let Some(name) = h.strip_prefix("x_") {
                raw.push(Raw::Covariate(name.to_string()));
            } else if let Some(rest) = h.strip_prefix('y') {
                let (digits, item) = match rest.split_once('_') {
                    Some(pair) => pair,
                    None => return Err(Error::UnrecognizedColumn(h.to_string())),
                };
                match digits.parse::<usize>() {
                    Ok(time) if !item.is_empty() => raw.push(Raw::Outcome {
                        time,
                        item: item.to_string(),
                    }),
                    _ => return Err(Error::UnrecognizedColumn(h.to_string())),
                }
            } else {
                return Err(Error::UnrecognizedColumn(h.to_string()));
            }
        }

        let subject_cols = raw.iter().filter(|r| matches!(r, Raw::Subject)).count();
        if subject_cols != 1 {
            return Err(Error::InvalidDataset(format!(
                "expected exactly one subject_id column, found {subject_cols}"
            )));
        }

        let mut t_indices: Vec<usize> = raw
            .iter()
            .filter_map(|r| match r {
                Raw::Treatment(j) => Some(*j),
                _ => None,
            })
            .collect();
        t_indices.sort_unstable();
        if t_indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDataset("duplicate treatment column".into()));
        }
        let p = t_indices.len();
        if p < 2 || t_indices.first() != Some(&1) || t_indices.last() != Some(&p) {
            return Err(Error::InvalidDataset(format!(
                "treatment columns must be t1..t<p> with p >= 2, found {t_indices:?}"
            )));
        }

        let mut times: Vec<usize> = raw
            .iter()
            .filter_map(|r| match r {
                Raw::Outcome { time, .. } => Some(*time),
                _ => None,
            })
            .collect();
        times.sort_unstable();
        times.dedup();
        if times.is_empty() {
            return Err(Error::InvalidDataset("no outcome columns".into()));
        }
        let expected: Vec<usize> = (p + 1..=p + times.len()).collect();
        if times != expected {
            return Err(Error::InvalidDataset(format!(
                "outcome time indices must be contiguous {:?}, found {times:?}",
                expected
            )));
        }
        let n_time_points = times.len();

        // Item sequence per time point, in header order; all must match.
        let mut per_time: Vec<Vec<String>> = vec![Vec::new(); n_time_points];
        for r in &raw {
            if let Raw::Outcome { time, item } = r {
                per_time[time - p - 1].push(item.clone());
            }
        }
        let item_names = per_time[0].clone();
        for (b, seq) in per_time.iter().enumerate() {
            if *seq != item_names {
                return Err(Error::InvalidDataset(format!(
                    "item names at time point {} differ from time point {}",
                    p + 1 + b,
                    p + 1
                )));
            }
        }
        if item_names.is_empty() {
            return Err(Error::InvalidDataset("no outcome items".into()));
        }

        let covariate_names: Vec<String> = raw
            .iter()
            .filter_map(|r| match r {
                Raw::Covariate(name) => Some(name.clone()),
                _ => None,
            })
            .collect();
        {
            let mut sorted = covariate_names.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidDataset("duplicate covariate column".into()));
            }
        }

        let mut roles = Vec::with_capacity(raw.len());
        let mut subject_col = 0;
        let mut cov_seen = 0usize;
        let mut item_cursor: Vec<usize> = vec![0; n_time_points];
        for (c, r) in raw.iter().enumerate() {
            match r {
                Raw::Subject => {
                    subject_col = c;
                    roles.push(Role::SubjectId);
                }
                Raw::Treatment(j) => roles.push(Role::Treatment(j - 1)),
                Raw::Covariate(_) => {
                    roles.push(Role::Covariate(cov_seen));
                    cov_seen += 1;
                }
                Raw::Outcome { time, .. } => {
                    let block = time - p - 1;
                    roles.push(Role::Outcome {
                        block,
                        item: item_cursor[block],
                    });
                    item_cursor[block] += 1;
                }
            }
        }

        Ok(Self {
            roles,
            subject_col,
            p,
            n_time_points,
            covariate_names,
            item_names,
        })
    }
}
