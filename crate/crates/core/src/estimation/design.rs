use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Regressor matrix with named columns and a cluster label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    data: DMatrix<f64>,
    /// Dense cluster index per row, `0..n_clusters`.
    clusters: Vec<usize>,
    n_clusters: usize,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, data: DMatrix<f64>, clusters: Vec<usize>) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::invalid(format!(
                "{} column names for {} columns",
                names.len(),
                data.ncols()
            )));
        }
        if clusters.len() != data.nrows() {
            return Err(Error::invalid("one cluster index per row required"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::invalid(format!("duplicate column name {dup}")));
        }
        for (j, name) in names.iter().enumerate() {
            if let Some(i) = data.column(j).iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite value in column {name}, row {i}")));
            }
        }
        let n_clusters = clusters.iter().max().map_or(0, |&m| m + 1);
        Ok(DesignMatrix {
            names,
            data,
            clusters,
            n_clusters,
        })
    }

    /// Dense cluster indices from arbitrary labels, in order of first appearance.
    pub fn cluster_index<S: AsRef<str>>(labels: &[S]) -> Vec<usize> {
        let mut map: HashMap<&str, usize> = HashMap::new();
        labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l.as_ref()).or_insert(next)
            })
            .collect()
    }

    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, clusters: Vec<usize>) -> Result<Self> {
        let n = clusters.len();
        if let Some((name, _)) = columns.iter().find(|(_, c)| c.len() != n) {
            return Err(Error::invalid(format!("column {name} has the wrong length")));
        }
        let p = columns.len();
        let mut data = DMatrix::zeros(n, p);
        for (j, (_, col)) in columns.iter().enumerate() {
            data.column_mut(j).copy_from_slice(col);
        }
        DesignMatrix::new(columns.into_iter().map(|c| c.0).collect(), data, clusters)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn clusters(&self) -> &[usize] {
        &self.clusters
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.position(name).map(|j| self.data.column(j).iter().copied().collect())
    }

    pub fn with_column(&self, name: &str, values: &[f64]) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::invalid(format!("column {name} has the wrong length")));
        }
        let p = self.n_cols();
        let data = self.data.clone().insert_column(p, 0.0);
        let mut out = DesignMatrix {
            names: self.names.clone(),
            data,
            clusters: self.clusters.clone(),
            n_clusters: self.n_clusters,
        };
        out.names.push(name.to_string());
        out.data.column_mut(p).copy_from_slice(values);
        DesignMatrix::new(out.names, out.data, out.clusters)
    }

    pub fn without_column(&self, name: &str) -> Result<Self> {
        let j = self
            .position(name)
            .ok_or_else(|| Error::invalid(format!("no column named {name}")))?;
        let mut names = self.names.clone();
        names.remove(j);
        Ok(DesignMatrix {
            names,
            data: self.data.clone().remove_column(j),
            clusters: self.clusters.clone(),
            n_clusters: self.n_clusters,
        })
    }

    /// Header row plus one line per observation, with the cluster index first.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["cluster".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.clusters[i].to_string()];
            rec.extend(self.data.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
