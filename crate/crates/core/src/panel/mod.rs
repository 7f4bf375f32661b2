//! Panel data model: rectangular n×T panels of outcomes, binary treatments,
//! baseline covariates, time-varying effect modifiers and prognostic
//! factors, plus an observation mask for the outcome.
//!
//! Datasets are immutable after construction and safe to share across
//! threads. Indices are 0-based in the API; user-facing output (reports,
//! error messages) uses the 1-based time labels produced on ingestion.

mod io;

pub use io::{load_panel_csv, write_panel_csv};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Column mapping for long-format panel CSV files (one row per
/// subject-time).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub subject: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
    /// Baseline (time-invariant) covariate columns, `Z`.
    #[serde(default)]
    pub baseline: Vec<String>,
    /// Time-varying effect-modifier columns, `X`.
    #[serde(default)]
    pub modifiers: Vec<String>,
    /// Time-varying prognostic columns, `U`; must not overlap `modifiers`.
    #[serde(default)]
    pub prognostic: Vec<String>,
    /// Sentinel marking a missing outcome cell.
    #[serde(default = "default_sentinel")]
    pub missing_sentinel: String,
}

fn default_sentinel() -> String {
    "NA".to_string()
}

impl ColumnSchema {
    /// All column names in file order: id, time, outcome, treatment, Z, X, U.
    pub fn all_columns(&self) -> Vec<&str> {
        let mut cols = vec![
            self.subject.as_str(),
            self.time.as_str(),
            self.outcome.as_str(),
            self.treatment.as_str(),
        ];
        cols.extend(self.baseline.iter().map(String::as_str));
        cols.extend(self.modifiers.iter().map(String::as_str));
        cols.extend(self.prognostic.iter().map(String::as_str));
        cols
    }

    /// Column-name lists must be pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let cols = self.all_columns();
        for (i, a) in cols.iter().enumerate() {
            for b in cols.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::schema(format!("duplicate column name `{a}` in schema")));
                }
            }
        }
        Ok(())
    }
}

/// Design vector `(1, Z_i, X_it)` used by the effect model.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVector<F: Scalar>(pub DVector<F>);

impl<F: Scalar> DesignVector<F> {
    pub fn values(&self) -> &DVector<F> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Immutable rectangular panel.
///
/// Storage is subject-major: index `(i, t)` lives at `i * n_times + t`.
/// The mask applies to the outcome only; treatments and covariates are
/// always present (callers must impute upstream — missing covariate cells
/// are rejected at ingestion).
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset<F: Scalar = f64> {
    n: usize,
    n_times: usize,
    d_z: usize,
    d_x: usize,
    d_u: usize,
    y: Vec<F>,
    a: Vec<u8>,
    m: Vec<u8>,
    z: Vec<F>,
    x: Vec<F>,
    u: Vec<F>,
    subject_ids: Vec<String>,
    /// Original time values, retained as metadata; times are re-indexed to
    /// consecutive integers on ingestion.
    time_labels: Vec<String>,
    baseline_names: Vec<String>,
    modifier_names: Vec<String>,
    prognostic_names: Vec<String>,
}

/// Owned columns handed to [`PanelDataset::from_parts`].
pub struct PanelParts<F: Scalar> {
    pub n: usize,
    pub n_times: usize,
    pub d_z: usize,
    pub d_x: usize,
    pub d_u: usize,
    /// n×T, subject-major.
    pub y: Vec<F>,
    pub a: Vec<u8>,
    pub m: Vec<u8>,
    /// n×d_z.
    pub z: Vec<F>,
    /// n×T×d_x, subject-major then time.
    pub x: Vec<F>,
    pub u: Vec<F>,
    pub subject_ids: Vec<String>,
    pub time_labels: Vec<String>,
    pub baseline_names: Vec<String>,
    pub modifier_names: Vec<String>,
    pub prognostic_names: Vec<String>,
}

impl<F: Scalar> PanelDataset<F> {
    /// Build a dataset from raw columns, checking the structural invariants:
    /// binary treatment and mask, finite outcome wherever observed, finite
    /// and complete covariates.
    pub fn from_parts(parts: PanelParts<F>) -> Result<Self> {
        let PanelParts {
            n,
            n_times,
            d_z,
            d_x,
            d_u,
            y,
            a,
            m,
            z,
            x,
            u,
            subject_ids,
            time_labels,
            baseline_names,
            modifier_names,
            prognostic_names,
        } = parts;

        let nt = n * n_times;
        if y.len() != nt || a.len() != nt || m.len() != nt {
            return Err(Error::data("outcome/treatment/mask length must be n*T"));
        }
        if z.len() != n * d_z || x.len() != nt * d_x || u.len() != nt * d_u {
            return Err(Error::data("covariate storage does not match declared dimensions"));
        }
        if subject_ids.len() != n || time_labels.len() != n_times {
            return Err(Error::data("id/label lengths do not match n and T"));
        }
        if baseline_names.len() != d_z || modifier_names.len() != d_x || prognostic_names.len() != d_u {
            return Err(Error::data("column-name lengths do not match covariate dimensions"));
        }
        for (idx, &ai) in a.iter().enumerate() {
            if ai > 1 {
                return Err(Error::data(format!("non-binary treatment at flat index {idx}")));
            }
        }
        for &mi in &m {
            if mi > 1 {
                return Err(Error::data("mask entries must be 0 or 1"));
            }
        }
        for (idx, (&yi, &mi)) in y.iter().zip(&m).enumerate() {
            if mi == 1 && !yi.is_finite() {
                return Err(Error::data(format!("non-finite observed outcome at flat index {idx}")));
            }
        }
        for v in z.iter().chain(&x).chain(&u) {
            if !v.is_finite() {
                return Err(Error::data("non-finite covariate value"));
            }
        }

        Ok(Self {
            n,
            n_times,
            d_z,
            d_x,
            d_u,
            y,
            a,
            m,
            z,
            x,
            u,
            subject_ids,
            time_labels,
            baseline_names,
            modifier_names,
            prognostic_names,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_u(&self) -> usize {
        self.d_u
    }

    /// Effect-vector dimension `d = 1 + d_z + d_x`.
    pub fn effect_dim(&self) -> usize {
        1 + self.d_z + self.d_x
    }

    #[inline]
    fn flat(&self, i: usize, t: usize) -> usize {
        debug_assert!(i < self.n && t < self.n_times);
        i * self.n_times + t
    }

    #[inline]
    pub fn outcome(&self, i: usize, t: usize) -> F {
        self.y[self.flat(i, t)]
    }

    #[inline]
    pub fn treated(&self, i: usize, t: usize) -> bool {
        self.a[self.flat(i, t)] == 1
    }

    #[inline]
    pub fn observed(&self, i: usize, t: usize) -> bool {
        self.m[self.flat(i, t)] == 1
    }

    pub fn baseline(&self, i: usize) -> &[F] {
        &self.z[i * self.d_z..(i + 1) * self.d_z]
    }

    pub fn modifiers(&self, i: usize, t: usize) -> &[F] {
        let f = self.flat(i, t);
        &self.x[f * self.d_x..(f + 1) * self.d_x]
    }

    pub fn prognostic(&self, i: usize, t: usize) -> &[F] {
        let f = self.flat(i, t);
        &self.u[f * self.d_u..(f + 1) * self.d_u]
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn baseline_names(&self) -> &[String] {
        &self.baseline_names
    }

    pub fn modifier_names(&self) -> &[String] {
        &self.modifier_names
    }

    pub fn prognostic_names(&self) -> &[String] {
        &self.prognostic_names
    }

    /// Effect coefficient names: intercept, then Z names, then X names.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.effect_dim());
        names.push("intercept".to_string());
        names.extend(self.baseline_names.iter().cloned());
        names.extend(self.modifier_names.iter().cloned());
        names
    }

    /// Write the design vector `(1, Z_i, X_it)` into `buf`.
    pub(crate) fn design_into(&self, i: usize, t: usize, buf: &mut [F]) {
        debug_assert_eq!(buf.len(), self.effect_dim());
        buf[0] = F::one();
        buf[1..1 + self.d_z].copy_from_slice(self.baseline(i));
        buf[1 + self.d_z..].copy_from_slice(self.modifiers(i, t));
    }

    /// The design vector `(1, Z_i, X_it)`; errors if either index is out of
    /// range.
    pub fn tilde_x(&self, i: usize, t: usize) -> Result<DesignVector<F>> {
        if i >= self.n || t >= self.n_times {
            return Err(Error::data(format!(
                "index out of range: subject {i} of {}, time {t} of {}",
                self.n, self.n_times
            )));
        }
        let mut buf = vec![F::zero(); self.effect_dim()];
        self.design_into(i, t, &mut buf);
        Ok(DesignVector(DVector::from_vec(buf)))
    }

    /// Subjects with an observed outcome at `t`, in subject order.
    pub fn observed_at(&self, t: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.observed(i, t)).collect()
    }

    /// Return a copy with the mask replaced (used by missingness injection).
    pub(crate) fn with_mask(&self, m: Vec<u8>) -> Result<Self> {
        if m.len() != self.n * self.n_times {
            return Err(Error::data("replacement mask has wrong length"));
        }
        let mut out = self.clone();
        out.m = m;
        Ok(out)
    }

    pub(crate) fn mask(&self) -> &[u8] {
        &self.m
    }

    /// Reorder subjects; used by invariance tests.
    pub fn permute_subjects(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::data("permutation length must equal n"));
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || seen[p] {
                return Err(Error::data("invalid subject permutation"));
            }
            seen[p] = true;
        }
        let t = self.n_times;
        let mut out = self.clone();
        for (new_i, &old_i) in perm.iter().enumerate() {
            out.subject_ids[new_i] = self.subject_ids[old_i].clone();
            out.z[new_i * self.d_z..(new_i + 1) * self.d_z]
                .copy_from_slice(self.baseline(old_i));
            for tt in 0..t {
                let nf = new_i * t + tt;
                let of = old_i * t + tt;
                out.y[nf] = self.y[of];
                out.a[nf] = self.a[of];
                out.m[nf] = self.m[of];
                out.x[nf * self.d_x..(nf + 1) * self.d_x]
                    .copy_from_slice(self.modifiers(old_i, tt));
                out.u[nf * self.d_u..(nf + 1) * self.d_u]
                    .copy_from_slice(self.prognostic(old_i, tt));
            }
        }
        Ok(out)
    }

    /// Per-time positivity screening: counts of observed treated and
    /// untreated subjects, flagging any cell below `threshold`. Report-only;
    /// the dataset is not modified.
    pub fn validate(&self, threshold: usize) -> ValidationReport {
        let mut per_time = Vec::with_capacity(self.n_times);
        for t in 0..self.n_times {
            let mut n_treated = 0usize;
            let mut n_untreated = 0usize;
            for i in 0..self.n {
                if self.observed(i, t) {
                    if self.treated(i, t) {
                        n_treated += 1;
                    } else {
                        n_untreated += 1;
                    }
                }
            }
            let label = t + 1;
            let mut flags = Vec::new();
            if n_treated == 0 {
                flags.push(format!("no treated at t={label}"));
            } else if n_treated < threshold {
                flags.push(format!("treated count {n_treated} < {threshold} at t={label}"));
            }
            if n_untreated == 0 {
                flags.push(format!("no untreated at t={label}"));
            } else if n_untreated < threshold {
                flags.push(format!("untreated count {n_untreated} < {threshold} at t={label}"));
            }
            per_time.push(TimeCellReport { time: label, n_treated, n_untreated, flags });
        }
        ValidationReport { threshold, per_time }
    }
}

/// Per-time observed treated/untreated tabulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeCellReport {
    /// 1-based time index.
    pub time: usize,
    pub n_treated: usize,
    pub n_untreated: usize,
    pub flags: Vec<String>,
}

/// Output of [`PanelDataset::validate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub threshold: usize,
    pub per_time: Vec<TimeCellReport>,
}

impl ValidationReport {
    pub fn flags(&self) -> impl Iterator<Item = &str> {
        self.per_time.iter().flat_map(|c| c.flags.iter().map(String::as_str))
    }

    pub fn has_flags(&self) -> bool {
        self.per_time.iter().any(|c| !c.flags.is_empty())
    }

    /// Cells that are empty on one side (no treated or no untreated).
    pub fn degenerate_times(&self) -> Vec<usize> {
        self.per_time
            .iter()
            .filter(|c| c.n_treated == 0 || c.n_untreated == 0)
            .map(|c| c.time)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_dataset() -> PanelDataset<f64> {
        // 2 subjects, 3 times, d_z=1, d_x=2, d_u=1.
        PanelDataset::from_parts(PanelParts {
            n: 2,
            n_times: 3,
            d_z: 1,
            d_x: 2,
            d_u: 1,
            y: vec![0.1, 0.2, 0.3, 1.1, 1.2, 1.3],
            a: vec![0, 1, 0, 1, 0, 1],
            m: vec![1, 1, 1, 1, 0, 1],
            z: vec![2.0, -1.0],
            x: vec![3.0, 4.0, 3.1, 4.1, 3.2, 4.2, 5.0, 6.0, 5.1, 6.1, 5.2, 6.2],
            u: vec![7.0, 7.1, 7.2, 8.0, 8.1, 8.2],
            subject_ids: vec!["s1".into(), "s2".into()],
            time_labels: vec!["1".into(), "2".into(), "3".into()],
            baseline_names: vec!["z1".into()],
            modifier_names: vec!["x1".into(), "x2".into()],
            prognostic_names: vec!["u1".into()],
        })
        .unwrap()
    }

    #[test]
    fn tilde_x_concatenates_intercept_baseline_modifiers() {
        let data = toy_dataset();
        let v = data.tilde_x(0, 0).unwrap();
        assert_eq!(v.values().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn tilde_x_intercept_only_when_no_covariates() {
        let data = PanelDataset::<f64>::from_parts(PanelParts {
            n: 1,
            n_times: 1,
            d_z: 0,
            d_x: 0,
            d_u: 0,
            y: vec![0.0],
            a: vec![0],
            m: vec![1],
            z: vec![],
            x: vec![],
            u: vec![],
            subject_ids: vec!["s1".into()],
            time_labels: vec!["1".into()],
            baseline_names: vec![],
            modifier_names: vec![],
            prognostic_names: vec![],
        })
        .unwrap();
        assert_eq!(data.tilde_x(0, 0).unwrap().values().as_slice(), &[1.0]);
    }

    #[test]
    fn tilde_x_zero_covariates_keep_intercept() {
        let mut parts = PanelParts {
            n: 1,
            n_times: 1,
            d_z: 2,
            d_x: 1,
            d_u: 0,
            y: vec![0.0],
            a: vec![0],
            m: vec![1],
            z: vec![0.0, 0.0],
            x: vec![0.0],
            u: vec![],
            subject_ids: vec!["s1".into()],
            time_labels: vec!["1".into()],
            baseline_names: vec!["z1".into(), "z2".into()],
            modifier_names: vec!["x1".into()],
            prognostic_names: vec![],
        };
        parts.z = vec![0.0, 0.0];
        let data = PanelDataset::<f64>::from_parts(parts).unwrap();
        assert_eq!(data.tilde_x(0, 0).unwrap().values().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tilde_x_is_pure() {
        let data = toy_dataset();
        let a = data.tilde_x(1, 2).unwrap();
        let b = data.tilde_x(1, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tilde_x_rejects_out_of_range() {
        let data = toy_dataset();
        assert!(data.tilde_x(2, 0).is_err());
        assert!(data.tilde_x(0, 3).is_err());
    }

    #[test]
    fn validate_flags_degenerate_and_thin_cells() {
        let data = toy_dataset();
        // t=1 (0-based 1): subject 0 treated+observed, subject 1 masked.
        let report = data.validate(10);
        assert_eq!(report.per_time.len(), 3);
        let t2 = &report.per_time[1];
        assert_eq!(t2.n_treated, 1);
        assert_eq!(t2.n_untreated, 0);
        assert!(t2.flags.iter().any(|f| f == "no untreated at t=2"));
        assert!(t2.flags.iter().any(|f| f.starts_with("treated count 1 < 10")));
    }

    #[test]
    fn validate_threshold_edge_message() {
        // 9 treated, 12 untreated at the only time point, threshold 10.
        let n = 21;
        let data = PanelDataset::<f64>::from_parts(PanelParts {
            n,
            n_times: 1,
            d_z: 0,
            d_x: 0,
            d_u: 0,
            y: vec![0.0; n],
            a: (0..n).map(|i| u8::from(i < 9)).collect(),
            m: vec![1; n],
            z: vec![],
            x: vec![],
            u: vec![],
            subject_ids: (0..n).map(|i| format!("s{i}")).collect(),
            time_labels: vec!["5".into()],
            baseline_names: vec![],
            modifier_names: vec![],
            prognostic_names: vec![],
        })
        .unwrap();
        let report = data.validate(10);
        assert_eq!(report.per_time[0].flags, vec!["treated count 9 < 10 at t=1".to_string()]);
    }

    #[test]
    fn from_parts_rejects_non_binary_treatment() {
        let mut parts_a = vec![0u8; 6];
        parts_a[3] = 2;
        let err = PanelDataset::<f64>::from_parts(PanelParts {
            n: 2,
            n_times: 3,
            d_z: 0,
            d_x: 0,
            d_u: 0,
            y: vec![0.0; 6],
            a: parts_a,
            m: vec![1; 6],
            z: vec![],
            x: vec![],
            u: vec![],
            subject_ids: vec!["a".into(), "b".into()],
            time_labels: vec!["1".into(), "2".into(), "3".into()],
            baseline_names: vec![],
            modifier_names: vec![],
            prognostic_names: vec![],
        })
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
