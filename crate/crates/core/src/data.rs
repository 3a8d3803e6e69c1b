//! Longitudinal trial data: subjects, visit schedules, pattern indicators,
//! CSV ingestion and export.
//!
//! Outcomes are stored as `Option<f64>`; an absent value is the only encoding
//! of missingness. The observation indicator `R_k` is therefore derived, never
//! stored. The pattern indicator `A_k` (1 = Pattern A, "adherent or could be
//! adherent") is filled in by [`derive_indicators`].

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{PmmError, Result};

/// Post-baseline visit labels `t_1..t_K` in analysis order. The baseline
/// `t_0` is carried by the covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitSchedule {
    labels: Vec<String>,
}

impl VisitSchedule {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(PmmError::Schema("at least one post-baseline visit is required".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(PmmError::Schema(format!("visit label '{l}' is repeated")));
            }
        }
        Ok(Self { labels })
    }

    /// Schedule with visits labelled `1..=k`.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|v| v.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// One randomized participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    id: String,
    arm: usize,
    covariates: Vec<f64>,
    outcomes: Vec<Option<f64>>,
    adherence: Option<Vec<Option<bool>>>,
    pattern: Option<Vec<bool>>,
}

impl Subject {
    pub fn new(id: impl Into<String>, arm: usize, covariates: Vec<f64>, outcomes: Vec<Option<f64>>) -> Self {
        Self { id: id.into(), arm, covariates, outcomes, adherence: None, pattern: None }
    }

    /// Attach a raw per-visit adherence record (missing cells allowed).
    pub fn with_adherence(mut self, adherence: Vec<Option<bool>>) -> Self {
        self.adherence = Some(adherence);
        self
    }

    /// Attach already-derived pattern indicators.
    pub fn with_pattern(mut self, pattern: Vec<bool>) -> Self {
        self.pattern = Some(pattern);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn arm(&self) -> usize {
        self.arm
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn outcomes(&self) -> &[Option<f64>] {
        &self.outcomes
    }

    pub fn outcome(&self, k: usize) -> Option<f64> {
        self.outcomes[k]
    }

    /// `R_k`.
    pub fn observed(&self, k: usize) -> bool {
        self.outcomes[k].is_some()
    }

    pub fn visits(&self) -> usize {
        self.outcomes.len()
    }

    /// Bit `k` set when visit `k` is observed.
    pub fn observed_mask(&self) -> u64 {
        self.outcomes.iter().enumerate().filter(|(_, y)| y.is_some()).fold(0u64, |m, (k, _)| m | (1 << k))
    }

    pub fn any_observed(&self) -> bool {
        self.outcomes.iter().any(Option::is_some)
    }

    pub fn adherence(&self) -> Option<&[Option<bool>]> {
        self.adherence.as_deref()
    }

    pub fn pattern(&self) -> Option<&[bool]> {
        self.pattern.as_deref()
    }

    /// `A_k`. Panics if indicators have not been derived; estimators check
    /// [`LongitudinalDataset::has_indicators`] up front.
    pub fn pattern_a(&self, k: usize) -> bool {
        self.pattern.as_ref().expect("pattern indicators not derived")[k]
    }

    /// `A_K` at the final visit.
    pub fn pattern_a_final(&self) -> bool {
        self.pattern_a(self.outcomes.len() - 1)
    }

    pub fn observed_final(&self) -> bool {
        self.outcomes[self.outcomes.len() - 1].is_some()
    }

    /// Whether `R` is of the form 1..1 0..0.
    pub fn is_monotone(&self) -> bool {
        let mut seen_missing = false;
        for y in &self.outcomes {
            match (y.is_some(), seen_missing) {
                (true, true) => return false,
                (false, _) => seen_missing = true,
                _ => {}
            }
        }
        true
    }

    pub(crate) fn with_outcomes(&self, outcomes: Vec<Option<f64>>) -> Self {
        Self { outcomes, ..self.clone() }
    }
}

/// An immutable, validated collection of subjects. Arm 0 is the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    schedule: VisitSchedule,
    arm_labels: Vec<String>,
    covariate_names: Vec<String>,
    baseline_outcome: Option<usize>,
    subjects: Vec<Subject>,
}

impl LongitudinalDataset {
    /// `baseline_outcome` names the covariate index holding `Y_0`, if any.
    /// Without it the outcome is treated as change from baseline.
    pub fn new(
        schedule: VisitSchedule,
        arm_labels: Vec<String>,
        covariate_names: Vec<String>,
        baseline_outcome: Option<usize>,
        subjects: Vec<Subject>,
    ) -> Result<Self> {
        let k = schedule.len();
        let m = covariate_names.len();
        if arm_labels.is_empty() {
            return Err(PmmError::Schema("at least one arm is required".into()));
        }
        if let Some(b) = baseline_outcome {
            if b >= m {
                return Err(PmmError::Schema(format!("baseline outcome index {b} out of range for {m} covariates")));
            }
        }
        let mut counts = vec![0usize; arm_labels.len()];
        let mut ids = std::collections::HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(PmmError::Schema(format!("subject '{}' appears twice", s.id)));
            }
            if s.arm >= arm_labels.len() {
                return Err(PmmError::Schema(format!(
                    "subject '{}' has arm index {} but only {} arms exist",
                    s.id,
                    s.arm,
                    arm_labels.len()
                )));
            }
            counts[s.arm] += 1;
            if s.outcomes.len() != k {
                return Err(PmmError::Schema(format!(
                    "subject '{}' has {} outcomes, schedule has {k}",
                    s.id,
                    s.outcomes.len()
                )));
            }
            if s.covariates.len() != m {
                return Err(PmmError::Schema(format!(
                    "subject '{}' has {} covariates, expected {m}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if s.covariates.iter().any(|x| !x.is_finite()) || s.outcomes.iter().flatten().any(|y| !y.is_finite()) {
                return Err(PmmError::Schema(format!("subject '{}' has a non-finite value", s.id)));
            }
            if let Some(a) = &s.adherence {
                if a.len() != k {
                    return Err(PmmError::Schema(format!("subject '{}' adherence record has wrong length", s.id)));
                }
            }
            if let Some(a) = &s.pattern {
                if a.len() != k {
                    return Err(PmmError::Schema(format!("subject '{}' pattern record has wrong length", s.id)));
                }
            }
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(PmmError::Schema(format!("arm '{}' has no subjects", arm_labels[i])));
        }
        Ok(Self { schedule, arm_labels, covariate_names, baseline_outcome, subjects })
    }

    pub fn schedule(&self) -> &VisitSchedule {
        &self.schedule
    }

    pub fn visits(&self) -> usize {
        self.schedule.len()
    }

    pub fn arm_labels(&self) -> &[String] {
        &self.arm_labels
    }

    pub fn arm_count(&self) -> usize {
        self.arm_labels.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn baseline_outcome(&self) -> Option<usize> {
        self.baseline_outcome
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn arm_subjects(&self, arm: usize) -> Vec<&Subject> {
        self.subjects.iter().filter(|s| s.arm == arm).collect()
    }

    pub fn arm_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.arm_count()];
        for s in &self.subjects {
            n[s.arm] += 1;
        }
        n
    }

    pub fn has_indicators(&self) -> bool {
        self.subjects.iter().all(|s| s.pattern.is_some())
    }

    /// Same metadata, different subjects (bootstrap resamples, imputations).
    pub fn with_subjects(&self, subjects: Vec<Subject>) -> Result<Self> {
        Self::new(
            self.schedule.clone(),
            self.arm_labels.clone(),
            self.covariate_names.clone(),
            self.baseline_outcome,
            subjects,
        )
    }
}

/// How `A` is obtained from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PatternRule {
    /// Every missing outcome is Pattern B: `A_k := R_k`.
    A3Collapse,
    /// Use the adherence column verbatim as `A`.
    ExplicitColumn {
        enforce_monotone: bool,
        /// Reject retrieved dropouts (`A_k = 0` with `R_k = 1`).
        require_a3: bool,
    },
    /// Once non-adherent, always non-adherent. Missing adherence cells carry
    /// the previous status forward.
    AdherenceDerived {
        /// Additionally place every missing outcome in Pattern B.
        missing_is_pattern_b: bool,
    },
}

/// Fill in `A` for every subject according to `rule`.
pub fn derive_indicators(ds: &LongitudinalDataset, rule: PatternRule) -> Result<LongitudinalDataset> {
    let k = ds.visits();
    let mut subjects = Vec::with_capacity(ds.len());
    for s in &ds.subjects {
        let a: Vec<bool> = match rule {
            PatternRule::A3Collapse => (0..k).map(|v| s.observed(v)).collect(),
            PatternRule::ExplicitColumn { enforce_monotone, require_a3 } => {
                let adh = s.adherence.as_ref().ok_or_else(|| PmmError::PatternViolation {
                    subject: s.id.clone(),
                    reason: "no adherence values supplied".into(),
                })?;
                let mut a = Vec::with_capacity(k);
                for (v, cell) in adh.iter().enumerate() {
                    a.push(cell.ok_or_else(|| PmmError::PatternViolation {
                        subject: s.id.clone(),
                        reason: format!("adherence missing at visit '{}'", ds.schedule.labels[v]),
                    })?);
                }
                if enforce_monotone && a.windows(2).any(|w| !w[0] && w[1]) {
                    return Err(PmmError::PatternViolation {
                        subject: s.id.clone(),
                        reason: "adherence is not monotone non-increasing".into(),
                    });
                }
                if require_a3 {
                    if let Some(v) = (0..k).find(|&v| !a[v] && s.observed(v)) {
                        return Err(PmmError::PatternViolation {
                            subject: s.id.clone(),
                            reason: format!(
                                "retrieved dropout at visit '{}' is impossible when missingness follows Pattern B",
                                ds.schedule.labels[v]
                            ),
                        });
                    }
                }
                a
            }
            PatternRule::AdherenceDerived { missing_is_pattern_b } => {
                let mut a = Vec::with_capacity(k);
                let mut current = true;
                for v in 0..k {
                    if let Some(Some(false)) = s.adherence.as_ref().map(|x| x[v]) {
                        current = false;
                    }
                    a.push(current);
                }
                if missing_is_pattern_b {
                    for (v, av) in a.iter_mut().enumerate() {
                        *av = *av && s.observed(v);
                    }
                }
                a
            }
        };
        let mut t = s.clone();
        t.pattern = Some(a);
        subjects.push(t);
    }
    ds.with_subjects(subjects)
}

/// Counts of the four `A x R` cells for one arm at one visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCounts {
    pub adherent_observed: usize,
    pub adherent_missing: usize,
    pub retrieved: usize,
    pub nonadherent_missing: usize,
}

impl CellCounts {
    pub fn total(&self) -> usize {
        self.adherent_observed + self.adherent_missing + self.retrieved + self.nonadherent_missing
    }

    /// `pi`: Pattern B and missing.
    pub fn pi(&self) -> f64 {
        self.nonadherent_missing as f64 / self.total() as f64
    }

    /// `tau`: Pattern A and missing.
    pub fn tau(&self) -> f64 {
        self.adherent_missing as f64 / self.total() as f64
    }

    /// `phi`: Pattern A.
    pub fn phi(&self) -> f64 {
        (self.adherent_observed + self.adherent_missing) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub arm_labels: Vec<String>,
    pub visit_labels: Vec<String>,
    /// `counts[arm][visit]`.
    pub counts: Vec<Vec<CellCounts>>,
}

pub fn summarize_patterns(ds: &LongitudinalDataset) -> Result<PatternSummary> {
    if !ds.has_indicators() {
        return Err(PmmError::IndicatorsMissing);
    }
    let k = ds.visits();
    let mut counts = vec![vec![CellCounts::default(); k]; ds.arm_count()];
    for s in &ds.subjects {
        for (v, c) in counts[s.arm].iter_mut().enumerate() {
            match (s.pattern_a(v), s.observed(v)) {
                (true, true) => c.adherent_observed += 1,
                (true, false) => c.adherent_missing += 1,
                (false, true) => c.retrieved += 1,
                (false, false) => c.nonadherent_missing += 1,
            }
        }
    }
    Ok(PatternSummary { arm_labels: ds.arm_labels.clone(), visit_labels: ds.schedule.labels.clone(), counts })
}

/// Column mapping and study metadata for a long-format CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default = "default_subject")]
    pub subject: String,
    #[serde(default = "default_arm")]
    pub arm: String,
    #[serde(default = "default_visit")]
    pub visit: String,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    /// Adherence column; ignored if absent from the file.
    #[serde(default = "default_adherent")]
    pub adherent: Option<String>,
    /// Covariate columns. Empty means every column not mapped above.
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Covariate holding the baseline value of the outcome.
    #[serde(default)]
    pub baseline_outcome: Option<String>,
    #[serde(default)]
    pub reference_arm: Option<String>,
    /// Allowed arm labels; unknown labels are rejected.
    #[serde(default)]
    pub arms: Option<Vec<String>>,
    /// Visit order; inferred when absent.
    #[serde(default)]
    pub visits: Option<Vec<String>>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Rule for deriving `A`, applied by callers after loading.
    #[serde(default)]
    pub pattern_rule: Option<PatternRule>,
}

fn default_subject() -> String {
    "subject".into()
}
fn default_arm() -> String {
    "arm".into()
}
fn default_visit() -> String {
    "visit".into()
}
fn default_outcome() -> String {
    "y".into()
}
fn default_adherent() -> Option<String> {
    Some("adherent".into())
}
fn default_delimiter() -> char {
    ','
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            subject: default_subject(),
            arm: default_arm(),
            visit: default_visit(),
            outcome: default_outcome(),
            adherent: default_adherent(),
            covariates: Vec::new(),
            baseline_outcome: None,
            reference_arm: None,
            arms: None,
            visits: None,
            delimiter: default_delimiter(),
            pattern_rule: None,
        }
    }
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na")
}

fn parse_bool(cell: &str) -> Option<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "t" => Some(true),
        "0" | "false" | "no" | "n" | "f" => Some(false),
        _ => None,
    }
}

struct Pending {
    id: String,
    arm_label: String,
    outcomes: HashMap<String, Option<f64>>,
    adherence: HashMap<String, Option<bool>>,
    covariates: Vec<Option<f64>>,
}

/// Read a long-format CSV file.
pub fn load_dataset(path: &Path, manifest: &DatasetManifest) -> Result<LongitudinalDataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, manifest)
}

/// [`load_dataset`] over any reader.
pub fn read_dataset<R: std::io::Read>(reader: R, manifest: &DatasetManifest) -> Result<LongitudinalDataset> {
    if !manifest.delimiter.is_ascii() {
        return Err(PmmError::Schema("delimiter must be ASCII".into()));
    }
    let mut rdr =
        csv::ReaderBuilder::new().delimiter(manifest.delimiter as u8).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| PmmError::Schema(format!("column '{name}' not found")))
    };
    let c_subject = col(&manifest.subject)?;
    let c_arm = col(&manifest.arm)?;
    let c_visit = col(&manifest.visit)?;
    let c_y = col(&manifest.outcome)?;
    let c_adh = manifest.adherent.as_deref().and_then(|a| headers.iter().position(|h| h == a));
    let covariate_names: Vec<String> = if manifest.covariates.is_empty() {
        let mapped = [Some(c_subject), Some(c_arm), Some(c_visit), Some(c_y), c_adh];
        headers.iter().enumerate().filter(|(i, _)| !mapped.contains(&Some(*i))).map(|(_, h)| h.to_string()).collect()
    } else {
        manifest.covariates.clone()
    };
    let c_cov: Vec<usize> = covariate_names.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let baseline_outcome = match &manifest.baseline_outcome {
        None => None,
        Some(b) => Some(
            covariate_names
                .iter()
                .position(|c| c == b)
                .ok_or_else(|| PmmError::Schema(format!("baseline outcome '{b}' is not among the covariates")))?,
        ),
    };

    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut visit_seen: Vec<String> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let id = rec.get(c_subject).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(PmmError::Schema(format!("row {row}: empty subject id")));
        }
        let arm_label = rec.get(c_arm).unwrap_or("").to_string();
        if let Some(arms) = &manifest.arms {
            if !arms.contains(&arm_label) {
                return Err(PmmError::Schema(format!("row {row}: unknown arm label '{arm_label}'")));
            }
        }
        let visit = rec.get(c_visit).unwrap_or("").to_string();
        if let Some(vs) = &manifest.visits {
            if !vs.contains(&visit) {
                return Err(PmmError::Schema(format!("row {row}: unknown visit label '{visit}'")));
            }
        }
        if !visit_seen.contains(&visit) {
            visit_seen.push(visit.clone());
        }
        let y_cell = rec.get(c_y).unwrap_or("");
        let y = if is_missing(y_cell) {
            None
        } else {
            Some(
                y_cell
                    .parse::<f64>()
                    .map_err(|_| PmmError::Schema(format!("row {row}: outcome '{y_cell}' is not a number")))?,
            )
        };
        let adh = match c_adh.and_then(|c| rec.get(c)) {
            None => None,
            Some(cell) if is_missing(cell) => None,
            Some(cell) => Some(
                parse_bool(cell)
                    .ok_or_else(|| PmmError::Schema(format!("row {row}: adherence '{cell}' is not a 0/1 flag")))?,
            ),
        };

        let slot = match index.get(&id) {
            Some(&i) => i,
            None => {
                index.insert(id.clone(), order.len());
                order.push(Pending {
                    id: id.clone(),
                    arm_label: arm_label.clone(),
                    outcomes: HashMap::new(),
                    adherence: HashMap::new(),
                    covariates: vec![None; c_cov.len()],
                });
                order.len() - 1
            }
        };
        let p = &mut order[slot];
        if p.arm_label != arm_label {
            return Err(PmmError::Schema(format!(
                "subject '{id}' appears in arms '{}' and '{arm_label}'",
                p.arm_label
            )));
        }
        if p.outcomes.contains_key(&visit) {
            return Err(PmmError::DuplicateRow { subject: id, visit });
        }
        p.outcomes.insert(visit.clone(), y);
        p.adherence.insert(visit, adh);
        for (j, &c) in c_cov.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            if is_missing(cell) {
                continue;
            }
            let x: f64 = cell.parse().map_err(|_| {
                PmmError::Schema(format!(
                    "row {row}: covariate '{}' value '{cell}' is not a number",
                    covariate_names[j]
                ))
            })?;
            match p.covariates[j] {
                Some(prev) if prev != x => {
                    return Err(PmmError::Schema(format!(
                        "subject '{id}' has conflicting values for covariate '{}'",
                        covariate_names[j]
                    )))
                }
                _ => p.covariates[j] = Some(x),
            }
        }
    }

    let visit_labels = match &manifest.visits {
        Some(v) => v.clone(),
        None => {
            let numeric: Option<Vec<f64>> = visit_seen.iter().map(|v| v.parse::<f64>().ok()).collect();
            let mut v = visit_seen.clone();
            if let Some(nums) = numeric {
                let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(v).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                v = pairs.into_iter().map(|p| p.1).collect();
            }
            v
        }
    };
    let schedule = VisitSchedule::new(visit_labels)?;

    let mut arm_labels: Vec<String> = match &manifest.arms {
        Some(a) => a.clone(),
        None => {
            let mut seen: Vec<String> = Vec::new();
            for p in &order {
                if !seen.contains(&p.arm_label) {
                    seen.push(p.arm_label.clone());
                }
            }
            seen
        }
    };
    let reference =
        manifest.reference_arm.as_ref().ok_or_else(|| PmmError::Schema("a reference arm must be designated".into()))?;
    let r = arm_labels
        .iter()
        .position(|a| a == reference)
        .ok_or_else(|| PmmError::Schema(format!("reference arm '{reference}' not found")))?;
    let refl = arm_labels.remove(r);
    arm_labels.insert(0, refl);

    let has_adh = c_adh.is_some();
    let mut subjects = Vec::with_capacity(order.len());
    for p in order {
        let arm = arm_labels.iter().position(|a| *a == p.arm_label).expect("arm indexed");
        let mut covariates = Vec::with_capacity(c_cov.len());
        for (j, x) in p.covariates.iter().enumerate() {
            covariates.push(x.ok_or_else(|| PmmError::IncompleteBaseline {
                subject: p.id.clone(),
                covariate: covariate_names[j].clone(),
            })?);
        }
        let outcomes = schedule.labels().iter().map(|v| p.outcomes.get(v).copied().flatten()).collect();
        let mut s = Subject::new(p.id, arm, covariates, outcomes);
        if has_adh {
            let adh: Vec<Option<bool>> =
                schedule.labels().iter().map(|v| p.adherence.get(v).copied().flatten()).collect();
            if adh.iter().any(Option::is_some) {
                s = s.with_adherence(adh);
            }
        }
        subjects.push(s);
    }
    LongitudinalDataset::new(schedule, arm_labels, covariate_names, baseline_outcome, subjects)
}

/// Write the dataset in the long format read by [`load_dataset`] with the
/// default column names. Numbers use the shortest representation that
/// parses back to the same `f64`.
pub fn write_dataset(ds: &LongitudinalDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset_to(ds, file)
}

pub fn write_dataset_to<W: std::io::Write>(ds: &LongitudinalDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject".to_string(), "arm".into(), "visit".into(), "y".into(), "adherent".into()];
    header.extend(ds.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for s in &ds.subjects {
        for (v, label) in ds.schedule.labels().iter().enumerate() {
            let mut row = vec![
                s.id.clone(),
                ds.arm_labels[s.arm].clone(),
                label.clone(),
                s.outcomes[v].map(|y| y.to_string()).unwrap_or_default(),
                match s.adherence.as_ref().and_then(|a| a[v]) {
                    Some(true) => "1".into(),
                    Some(false) => "0".into(),
                    None => String::new(),
                },
            ];
            row.extend(s.covariates.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Manifest matching the output of [`write_dataset`] for this dataset.
pub fn manifest_for(ds: &LongitudinalDataset) -> DatasetManifest {
    DatasetManifest {
        covariates: ds.covariate_names.clone(),
        baseline_outcome: ds.baseline_outcome.map(|b| ds.covariate_names[b].clone()),
        reference_arm: Some(ds.arm_labels[0].clone()),
        arms: Some(ds.arm_labels.clone()),
        visits: Some(ds.schedule.labels().to_vec()),
        ..DatasetManifest::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            covariates: vec!["y0".into()],
            baseline_outcome: Some("y0".into()),
            reference_arm: Some("P".into()),
            ..DatasetManifest::default()
        }
    }

    fn read(text: &str) -> Result<LongitudinalDataset> {
        read_dataset(text.as_bytes(), &manifest())
    }

    #[test]
    fn complete_file_has_all_observed() {
        let ds = read("subject,arm,visit,y,y0\na,P,1,1.0,0\na,P,2,2.0,0\nb,E,1,1.5,1\nb,E,2,2.5,1\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.subjects().iter().all(|s| (0..2).all(|k| s.observed(k))));
        assert_eq!(ds.arm_labels(), ["P", "E"]);
    }

    #[test]
    fn empty_cell_is_missing() {
        let ds = read("subject,arm,visit,y,y0\na,P,1,1.0,0\na,P,2,,0\nb,E,1,NA,1\nb,E,2,2.5,1\n").unwrap();
        assert!(!ds.subjects()[0].observed(1));
        assert!(!ds.subjects()[1].observed(0));
    }

    #[test]
    fn missing_covariate_is_rejected() {
        let err = read("subject,arm,visit,y,y0\na,P,1,1.0,\na,P,2,2.0,\nb,E,1,1,1\n").unwrap_err();
        assert!(matches!(err, PmmError::IncompleteBaseline { .. }));
    }

    #[test]
    fn duplicate_rows_are_rejected() {
        let err = read("subject,arm,visit,y,y0\na,P,1,1.0,0\na,P,1,2.0,0\nb,E,1,1,1\n").unwrap_err();
        assert!(matches!(err, PmmError::DuplicateRow { .. }));
    }

    #[test]
    fn unknown_arm_is_rejected() {
        let mut m = manifest();
        m.arms = Some(vec!["P".into(), "E".into()]);
        let err = read_dataset("subject,arm,visit,y,y0\na,X,1,1.0,0\n".as_bytes(), &m).unwrap_err();
        assert!(matches!(err, PmmError::Schema(_)));
    }

    #[test]
    fn numeric_visits_are_sorted() {
        let ds = read("subject,arm,visit,y,y0\na,P,26,2,0\na,P,13,1,0\nb,E,13,1,1\nb,E,26,2,1\n").unwrap();
        assert_eq!(ds.schedule().labels(), ["13", "26"]);
        assert_eq!(ds.subjects()[0].outcome(0), Some(1.0));
    }

    fn subject(r: &[bool], adh: &[Option<bool>]) -> LongitudinalDataset {
        let outcomes = r.iter().map(|&o| o.then_some(1.0)).collect();
        let s = Subject::new("s", 0, vec![0.0], outcomes).with_adherence(adh.to_vec());
        LongitudinalDataset::new(
            VisitSchedule::numbered(r.len()).unwrap(),
            vec!["P".into()],
            vec!["y0".into()],
            Some(0),
            vec![s],
        )
        .unwrap()
    }

    #[test]
    fn a3_collapse_copies_r() {
        let ds = subject(&[true, true, false, false], &[None; 4]);
        let d = derive_indicators(&ds, PatternRule::A3Collapse).unwrap();
        assert_eq!(d.subjects()[0].pattern().unwrap(), [true, true, false, false]);
    }

    #[test]
    fn explicit_non_monotone_is_rejected() {
        let ds = subject(&[true; 4], &[Some(true), Some(false), Some(true), Some(false)]);
        let rule = PatternRule::ExplicitColumn { enforce_monotone: true, require_a3: false };
        assert!(matches!(derive_indicators(&ds, rule), Err(PmmError::PatternViolation { .. })));
    }

    #[test]
    fn explicit_retrieved_dropout_is_valid() {
        let ds = subject(&[true, true, true, false], &[Some(true), Some(true), Some(false), Some(false)]);
        let rule = PatternRule::ExplicitColumn { enforce_monotone: true, require_a3: false };
        let d = derive_indicators(&ds, rule).unwrap();
        let s = &d.subjects()[0];
        assert!(!s.pattern_a(2) && s.observed(2));
        let strict = PatternRule::ExplicitColumn { enforce_monotone: true, require_a3: true };
        assert!(derive_indicators(&ds, strict).is_err());
    }

    #[test]
    fn adherence_derived_is_monotone() {
        let ds = subject(&[true, true, true, false], &[Some(true), Some(false), None, Some(true)]);
        let d = derive_indicators(&ds, PatternRule::AdherenceDerived { missing_is_pattern_b: false }).unwrap();
        assert_eq!(d.subjects()[0].pattern().unwrap(), [true, false, false, false]);
        let ds = subject(&[true, true, true, false], &[Some(true); 4]);
        let d = derive_indicators(&ds, PatternRule::AdherenceDerived { missing_is_pattern_b: true }).unwrap();
        assert_eq!(d.subjects()[0].pattern().unwrap(), [true, true, true, false]);
    }

    #[test]
    fn summary_counts_and_proportions() {
        // 7 A1R1, 1 A1R0, 2 A0R0 at the single visit.
        let mut subjects = Vec::new();
        for i in 0..10 {
            let (y, a) = match i {
                0..=6 => (Some(1.0), true),
                7 => (None, true),
                _ => (None, false),
            };
            subjects.push(Subject::new(format!("s{i}"), 0, vec![], vec![y]).with_pattern(vec![a]));
        }
        let ds =
            LongitudinalDataset::new(VisitSchedule::numbered(1).unwrap(), vec!["P".into()], vec![], None, subjects)
                .unwrap();
        let s = summarize_patterns(&ds).unwrap();
        let c = s.counts[0][0];
        assert_eq!(c.total(), 10);
        assert!((c.pi() - 0.2).abs() < 1e-15);
        assert!((c.tau() - 0.1).abs() < 1e-15);
        assert!((c.phi() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn summary_requires_indicators() {
        let ds = subject(&[true], &[None]);
        assert!(matches!(summarize_patterns(&ds), Err(PmmError::IndicatorsMissing)));
    }
}
