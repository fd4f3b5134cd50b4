use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmap::{histogram, Histogram};
use crate::scaling::median;
use crate::volume::PropertyMap;

pub const REPORT_HEADER: &str = "label,channel,median_fit,median_ref,abs_diff";

/// Editable default reference medians (white and grey matter, seconds).
pub const DEFAULT_REFERENCE_JSON: &str = include_str!("../../assets/reference_medians.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub label: String,
    pub median_t1: f64,
    pub median_t2: f64,
}

impl ReferenceEntry {
    pub fn new(label: &str, median_t1: f64, median_t2: f64) -> Self {
        Self { label: label.into(), median_t1, median_t2 }
    }

    /// Parses either a bare list of entries or `{"entries": [...]}`.
    pub fn parse_list(text: &str) -> Result<Vec<ReferenceEntry>> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            List(Vec<ReferenceEntry>),
            Wrapped { entries: Vec<ReferenceEntry> },
        }
        let entries = match serde_json::from_str(text)? {
            Doc::List(e) | Doc::Wrapped { entries: e } => e,
        };
        if let Some(e) = entries.iter().find(|e| !(e.median_t1 > 0.0 && e.median_t2 > 0.0)) {
            return Err(Error::InvalidArgument(format!("reference '{}' needs positive medians", e.label)));
        }
        Ok(entries)
    }

    pub fn defaults() -> Vec<ReferenceEntry> {
        Self::parse_list(DEFAULT_REFERENCE_JSON).expect("bundled reference is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateConfig {
    /// Voxels with `PD > pd_threshold` enter the report. Fitted background
    /// keeps a tiny positive PD, so the default sits well above zero.
    pub pd_threshold: f64,
    pub bins: usize,
    pub clip_percentile: f64,
    /// A voxel belongs to its nearest reference entry in `(ln T1, ln T2)`
    /// when that Euclidean distance is at most this value.
    pub assign_radius: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { pd_threshold: 0.05, bins: 64, clip_percentile: 0.95, assign_radius: std::f64::consts::LN_2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub label: String,
    pub channel: String,
    /// `None` when no voxel was assigned to the entry.
    pub median_fit: Option<f64>,
    pub median_ref: f64,
    pub abs_diff: Option<f64>,
    pub voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// One row per (entry, channel), then the two overall rows.
    pub rows: Vec<ValidationRow>,
    pub histogram_t1: Histogram,
    pub histogram_t2: Histogram,
    pub masked_voxels: usize,
}

impl ValidationReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.label,
                r.channel,
                opt(r.median_fit),
                r.median_ref,
                opt(r.abs_diff)
            ));
        }
        s
    }

    pub fn row(&self, label: &str, channel: &str) -> Option<&ValidationRow> {
        self.rows.iter().find(|r| r.label == label && r.channel == channel)
    }
}

fn row(label: &str, channel: &str, values: &[f64], reference: f64) -> ValidationRow {
    let fit = median(values);
    ValidationRow {
        label: label.into(),
        channel: channel.into(),
        median_fit: fit,
        median_ref: reference,
        abs_diff: fit.map(|m| (m - reference).abs()),
        voxels: values.len(),
    }
}

/// Compares fitted T1/T2 against reference tissue medians.
///
/// Each masked voxel is assigned to the nearest reference entry in log space
/// (within `assign_radius`); entry rows report the median of their voxels.
/// The closing `all` rows report the overall masked medians against the
/// median of the reference values.
pub fn validate_properties(
    props: &PropertyMap,
    reference: &[ReferenceEntry],
    config: &ValidateConfig,
) -> Result<ValidationReport> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty reference list".into()));
    }
    let mut t1_all = Vec::new();
    let mut t2_all = Vec::new();
    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); reference.len()];
    for ((&pd, &t1), &t2) in props.pd().iter().zip(props.t1()).zip(props.t2()) {
        if !(pd > config.pd_threshold) {
            continue;
        }
        t1_all.push(t1);
        t2_all.push(t2);
        let (best, dist) = reference
            .iter()
            .map(|e| (t1 / e.median_t1).ln().hypot((t2 / e.median_t2).ln()))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        if dist <= config.assign_radius {
            groups[best].0.push(t1);
            groups[best].1.push(t2);
        }
    }
    if t1_all.is_empty() {
        return Err(Error::InvalidArgument(format!("no voxel has PD > {}", config.pd_threshold)));
    }
    let mut rows = Vec::with_capacity(2 * reference.len() + 2);
    for (e, (t1, t2)) in reference.iter().zip(&groups) {
        rows.push(row(&e.label, "T1", t1, e.median_t1));
        rows.push(row(&e.label, "T2", t2, e.median_t2));
    }
    let ref_t1: Vec<f64> = reference.iter().map(|e| e.median_t1).collect();
    let ref_t2: Vec<f64> = reference.iter().map(|e| e.median_t2).collect();
    rows.push(row("all", "T1", &t1_all, median(&ref_t1).expect("non-empty")));
    rows.push(row("all", "T2", &t2_all, median(&ref_t2).expect("non-empty")));
    let clip = Some(config.clip_percentile);
    Ok(ValidationReport {
        rows,
        histogram_t1: histogram(&t1_all, config.bins, clip)?,
        histogram_t2: histogram(&t2_all, config.bins, clip)?,
        masked_voxels: t1_all.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmap::{make_phantom, PhantomSpec, Shape, Tissue};

    fn two_region(a: &ReferenceEntry, b: &ReferenceEntry) -> PropertyMap {
        let spec = PhantomSpec::new(
            [20, 10, 1],
            vec![
                Shape::rectangle([-0.5, 0.0], [0.5, 1.0], Tissue::new(0.7, a.median_t1, a.median_t2)),
                Shape::rectangle([0.5, 0.0], [0.5, 1.0], Tissue::new(0.8, b.median_t1, b.median_t2)),
            ],
        );
        make_phantom(&spec).unwrap()
    }

    #[test]
    fn exact_regions_have_zero_distance() {
        let refs = ReferenceEntry::defaults();
        let p = two_region(&refs[0], &refs[1]);
        let report = validate_properties(&p, &refs, &ValidateConfig::default()).unwrap();
        for e in &refs {
            for ch in ["T1", "T2"] {
                let r = report.row(&e.label, ch).unwrap();
                assert_eq!(r.abs_diff, Some(0.0));
                assert_eq!(r.voxels, 100);
            }
        }
        assert_eq!(report.masked_voxels, 200);
    }

    #[test]
    fn csv_shape() {
        let refs = ReferenceEntry::defaults();
        let p = two_region(&refs[0], &refs[1]);
        let report = validate_properties(&p, &refs, &ValidateConfig::default()).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines.len() - 1, 2 * refs.len() + 2);
        assert!(lines.last().unwrap().starts_with("all,T2,"));
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn unassigned_entry_has_blank_fit() {
        let refs = vec![ReferenceEntry::new("WM", 0.8, 0.08), ReferenceEntry::new("X", 40.0, 9.0)];
        let p = PropertyMap::uniform([4, 4, 1], 1.0, 0.8, 0.08).unwrap();
        let report = validate_properties(&p, &refs, &ValidateConfig::default()).unwrap();
        assert_eq!(report.row("X", "T1").unwrap().median_fit, None);
        assert!(report.to_csv().contains("X,T1,,40,\n"));
    }

    #[test]
    fn errors() {
        let p = PropertyMap::uniform([2, 2, 1], 0.0, 1.0, 0.1).unwrap();
        assert!(validate_properties(&p, &[], &ValidateConfig::default()).is_err());
        assert!(validate_properties(&p, &ReferenceEntry::defaults(), &ValidateConfig::default()).is_err());
        assert!(ReferenceEntry::parse_list(r#"[{"label":"a","median_t1":0,"median_t2":1}]"#).is_err());
        assert_eq!(ReferenceEntry::parse_list(r#"[{"label":"a","median_t1":1,"median_t2":1}]"#).unwrap().len(), 1);
    }
}
