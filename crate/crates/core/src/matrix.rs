//! Dense, named feature matrix shared by preprocessing, training and evaluation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Which block of the assembled layout a column belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupTag {
    OneHot(String),
    Numeric,
    Geolocation,
    Embedding,
}

impl GroupTag {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "numeric" => Some(GroupTag::Numeric),
            "geolocation" => Some(GroupTag::Geolocation),
            "embedding" => Some(GroupTag::Embedding),
            _ => s
                .strip_prefix("onehot:")
                .map(|c| GroupTag::OneHot(c.to_string())),
        }
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupTag::OneHot(c) => write!(f, "onehot:{c}"),
            GroupTag::Numeric => f.write_str("numeric"),
            GroupTag::Geolocation => f.write_str("geolocation"),
            GroupTag::Embedding => f.write_str("embedding"),
        }
    }
}

/// Row-major `n × d` matrix with a target vector and one group tag per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    column_names: Vec<String>,
    groups: Vec<GroupTag>,
    values: Vec<f64>,
    target: Vec<f64>,
}

impl FeatureMatrix {
    /// Panics if the shapes disagree.
    pub fn new(
        column_names: Vec<String>,
        groups: Vec<GroupTag>,
        values: Vec<f64>,
        target: Vec<f64>,
    ) -> Self {
        assert_eq!(column_names.len(), groups.len());
        assert_eq!(values.len(), column_names.len() * target.len());
        Self {
            column_names,
            groups,
            values,
            target,
        }
    }

    /// Builds an all-numeric matrix from rows, tagging every column `numeric`.
    pub fn from_rows(rows: &[Vec<f64>], target: Vec<f64>) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let names = (0..d).map(|j| format!("x{j}")).collect();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(names, vec![GroupTag::Numeric; d], values, target)
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn groups(&self) -> &[GroupTag] {
        &self.groups
    }

    pub fn group_tags(&self) -> BTreeMap<&str, &GroupTag> {
        self.column_names
            .iter()
            .map(String::as_str)
            .zip(self.groups.iter())
            .collect()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    /// Columns as contiguous vectors (column-major copy).
    pub fn columns(&self) -> Vec<Vec<f64>> {
        let (n, d) = (self.n_rows(), self.n_cols());
        let mut cols = vec![Vec::with_capacity(n); d];
        for i in 0..n {
            for (j, col) in cols.iter_mut().enumerate() {
                col.push(self.values[i * d + j]);
            }
        }
        cols
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = rows
            .iter()
            .flat_map(|&i| self.row(i).iter().copied())
            .collect();
        let target = rows.iter().map(|&i| self.target[i]).collect();
        Self::new(self.column_names.clone(), self.groups.clone(), values, target)
    }

    /// Keeps columns whose group is not in `tags`; remaining values are copied unchanged.
    pub fn without_groups(&self, tags: &[GroupTag]) -> Self {
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&j| !tags.contains(&self.groups[j]))
            .collect();
        let values = (0..self.n_rows())
            .flat_map(|i| keep.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self::new(
            keep.iter().map(|&j| self.column_names[j].clone()).collect(),
            keep.iter().map(|&j| self.groups[j].clone()).collect(),
            values,
            self.target.clone(),
        )
    }

    /// Number of columns carrying any of `tags`.
    pub fn group_width(&self, tags: &[GroupTag]) -> usize {
        self.groups.iter().filter(|g| tags.contains(g)).count()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.target).all(|v| v.is_finite())
    }
}
