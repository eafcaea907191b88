//! CSV input and output.
//!
//! Curves are stored in long format, one row per sampled value:
//! `curve_id,component,t,value` with 1-based components. Covariate files start
//! with `curve_id`; when the next two columns are `component,t` the file holds
//! functional covariates sampled on the response grid, otherwise one row per
//! curve of scalar covariates.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use mfband::data::{ComponentGrid, CovariateLayout, Covariates, Grid, MFCurve};

use crate::error::{CliError, Result};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::schema(format!("{}: {e}", path.display()))
}

fn headers(path: &Path, rdr: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn parse_real(path: &Path, line: u64, column: &str, field: &str) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::schema(format!(
            "{}:{line}: column '{column}' needs a finite number, got '{field}'",
            path.display()
        ))),
    }
}

fn parse_component(path: &Path, line: u64, field: &str) -> Result<usize> {
    match field.parse::<usize>() {
        Ok(c) if c >= 1 => Ok(c),
        _ => Err(CliError::schema(format!(
            "{}:{line}: component must be a positive integer, got '{field}'",
            path.display()
        ))),
    }
}

/// Sampled `(t, value, line)` triples per 1-based component.
type Samples = Vec<Vec<(f64, f64, u64)>>;

fn push_sample(samples: &mut Samples, component: usize, entry: (f64, f64, u64)) {
    if samples.len() < component {
        samples.resize(component, Vec::new());
    }
    samples[component - 1].push(entry);
}

/// Sorted sample points and values of one component, rejecting duplicate `t`.
fn sorted_component(path: &Path, id: &str, j: usize, mut s: Vec<(f64, f64, u64)>) -> Result<(Vec<f64>, Vec<f64>)> {
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = s.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::schema(format!(
            "{}:{}: curve '{id}' component {} repeats t = {}",
            path.display(),
            w[1].2,
            j + 1,
            w[1].0
        )));
    }
    Ok(s.into_iter().map(|(t, v, _)| (t, v)).unzip())
}

/// Response curves read from a long-format CSV.
#[derive(Debug, Clone)]
pub struct CurveTable {
    pub ids: Vec<String>,
    pub grid: Grid,
    pub curves: Vec<MFCurve>,
}

pub fn read_curves(path: &Path) -> Result<CurveTable> {
    let mut rdr = reader(path)?;
    let h = headers(path, &mut rdr)?;
    if h != ["curve_id", "component", "t", "value"] {
        return Err(CliError::schema(format!(
            "{}: header must be curve_id,component,t,value, got {}",
            path.display(),
            h.join(",")
        )));
    }
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut samples: Vec<Samples> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        let component = parse_component(path, line, &rec[1])?;
        let t = parse_real(path, line, "t", &rec[2])?;
        let value = parse_real(path, line, "value", &rec[3])?;
        let k = *index.entry(id.clone()).or_insert_with(|| {
            ids.push(id.clone());
            samples.push(Vec::new());
            ids.len() - 1
        });
        push_sample(&mut samples[k], component, (t, value, line));
    }
    if ids.is_empty() {
        return Err(CliError::schema(format!("{}: no curves", path.display())));
    }
    let p = samples.iter().map(Vec::len).max().unwrap_or(0);
    let mut grid_points: Vec<Vec<f64>> = Vec::new();
    let mut curves = Vec::with_capacity(ids.len());
    for (id, s) in ids.iter().zip(samples) {
        if s.len() != p || s.iter().any(Vec::is_empty) {
            return Err(CliError::schema(format!(
                "{}: curve '{id}' does not have all {p} components",
                path.display()
            )));
        }
        let mut values = Vec::with_capacity(p);
        for (j, comp) in s.into_iter().enumerate() {
            let (t, v) = sorted_component(path, id, j, comp)?;
            match grid_points.get(j) {
                None => grid_points.push(t),
                Some(g) if *g == t => {}
                Some(_) => {
                    return Err(CliError::schema(format!(
                        "{}: curve '{id}' component {} is sampled on a different grid than curve '{}'",
                        path.display(),
                        j + 1,
                        ids[0]
                    )))
                }
            }
            values.push(v);
        }
        curves.push(MFCurve::new(values)?);
    }
    let grid = Grid::new(
        grid_points
            .into_iter()
            .map(ComponentGrid::new)
            .collect::<mfband::Result<_>>()?,
    )?;
    Ok(CurveTable { ids, grid, curves })
}

#[derive(Debug, Clone)]
enum Block {
    Scalar(HashMap<String, Vec<f64>>),
    Functional(HashMap<String, Vec<MFCurve>>),
}

#[derive(Debug, Clone)]
struct CovariateFile {
    path: PathBuf,
    ids: Vec<String>,
    block: Block,
}

/// Scalar and functional covariates gathered from one or more CSV files.
#[derive(Debug, Clone)]
pub struct CovariateTable {
    layout: CovariateLayout,
    files: Vec<CovariateFile>,
}

impl CovariateTable {
    pub fn empty() -> Self {
        Self {
            layout: CovariateLayout::default(),
            files: Vec::new(),
        }
    }

    pub fn read(paths: &[PathBuf], grid: &Grid) -> Result<Self> {
        let mut table = Self::empty();
        for path in paths {
            table.add_file(path, grid)?;
        }
        Ok(table)
    }

    pub fn layout(&self) -> &CovariateLayout {
        &self.layout
    }

    /// Curve ids of the first file in order of appearance.
    pub fn ids(&self) -> Option<&[String]> {
        self.files.first().map(|f| f.ids.as_slice())
    }

    pub fn get(&self, id: &str) -> Result<Covariates> {
        let mut x = Covariates::none();
        for f in &self.files {
            let missing = || CliError::schema(format!("{}: no row for curve '{id}'", f.path.display()));
            match &f.block {
                Block::Scalar(rows) => x.scalar.extend(rows.get(id).ok_or_else(missing)?),
                Block::Functional(rows) => x.functional.extend(rows.get(id).ok_or_else(missing)?.iter().cloned()),
            }
        }
        Ok(x)
    }

    fn check_new_names(&self, path: &Path, names: &[String]) -> Result<()> {
        for name in names {
            let taken = self.layout.scalar_index(name).is_some() || self.layout.functional_index(name).is_some();
            if taken || names.iter().filter(|n| *n == name).count() > 1 {
                return Err(CliError::schema(format!(
                    "{}: covariate '{name}' is defined more than once",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    fn add_file(&mut self, path: &Path, grid: &Grid) -> Result<()> {
        let mut rdr = reader(path)?;
        let h = headers(path, &mut rdr)?;
        if h.first().map(String::as_str) != Some("curve_id") || h.len() < 2 {
            return Err(CliError::schema(format!(
                "{}: header must start with curve_id and name at least one covariate",
                path.display()
            )));
        }
        let functional = h.len() >= 3 && h[1] == "component" && h[2] == "t";
        let names: Vec<String> = h[if functional { 3 } else { 1 }..].to_vec();
        if names.is_empty() {
            return Err(CliError::schema(format!("{}: no covariate columns", path.display())));
        }
        self.check_new_names(path, &names)?;
        let mut ids: Vec<String> = Vec::new();
        let block = if functional {
            let mut raw: HashMap<String, Vec<Samples>> = HashMap::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| csv_error(path, e))?;
                let line = rec.position().map_or(0, |p| p.line());
                let id = rec[0].to_string();
                let component = parse_component(path, line, &rec[1])?;
                let t = parse_real(path, line, "t", &rec[2])?;
                let entry = raw.entry(id.clone()).or_insert_with(|| {
                    ids.push(id.clone());
                    vec![Vec::new(); names.len()]
                });
                for (k, name) in names.iter().enumerate() {
                    let v = parse_real(path, line, name, &rec[3 + k])?;
                    push_sample(&mut entry[k], component, (t, v, line));
                }
            }
            let mut rows = HashMap::new();
            for id in &ids {
                let id = id.clone();
                let per_name = raw.remove(&id).unwrap_or_default();
                let mut curves = Vec::with_capacity(names.len());
                for samples in per_name {
                    if samples.len() != grid.p() {
                        return Err(CliError::schema(format!(
                            "{}: curve '{id}' has {} components, the response has {}",
                            path.display(),
                            samples.len(),
                            grid.p()
                        )));
                    }
                    let mut values = Vec::with_capacity(grid.p());
                    for (j, s) in samples.into_iter().enumerate() {
                        let (t, v) = sorted_component(path, &id, j, s)?;
                        if t != grid.component(j).points() {
                            return Err(CliError::schema(format!(
                                "{}: curve '{id}' component {} is not sampled on the response grid",
                                path.display(),
                                j + 1
                            )));
                        }
                        values.push(v);
                    }
                    curves.push(MFCurve::new(values)?);
                }
                rows.insert(id, curves);
            }
            self.layout.functional_names.extend(names);
            Block::Functional(rows)
        } else {
            let mut rows = HashMap::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| csv_error(path, e))?;
                let line = rec.position().map_or(0, |p| p.line());
                let id = rec[0].to_string();
                let values = names
                    .iter()
                    .enumerate()
                    .map(|(k, name)| parse_real(path, line, name, &rec[1 + k]))
                    .collect::<Result<Vec<_>>>()?;
                if rows.insert(id.clone(), values).is_some() {
                    return Err(CliError::schema(format!(
                        "{}:{line}: curve '{id}' appears twice",
                        path.display()
                    )));
                }
                ids.push(id);
            }
            self.layout.scalar_names.extend(names);
            Block::Scalar(rows)
        };
        self.files.push(CovariateFile {
            path: path.to_path_buf(),
            ids,
            block,
        });
        Ok(())
    }
}

pub fn write_curves(path: &Path, grid: &Grid, ids: &[String], curves: &[MFCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["curve_id", "component", "t", "value"])
        .map_err(|e| csv_error(path, e))?;
    for (id, y) in ids.iter().zip(curves) {
        for (j, c) in grid.components().iter().enumerate() {
            for (t, v) in c.points().iter().zip(y.component(j)) {
                w.write_record([id.clone(), (j + 1).to_string(), fmt_real(*t), fmt_real(*v)])
                    .map_err(|e| csv_error(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_scalar_covariates(path: &Path, names: &[String], ids: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["curve_id".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| fmt_real(*v)));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
