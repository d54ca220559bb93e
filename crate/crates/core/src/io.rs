//! CSV readers and writers for curves, replicated curves and scalar columns.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fda::{Domain, FunctionalSample};
use crate::mecorrect::ReplicatedSurrogate;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => parse_err(path, format!("{other:?}")),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn parse_number(path: &Path, field: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, format!("row {row}, column '{col}': '{field}' is not a number")))?;
    if v.is_nan() {
        return Err(parse_err(path, format!("row {row}, column '{col}': NaN is not allowed")));
    }
    Ok(v)
}

/// Grid values from headers `t_<v>`.
fn grid_from_header(path: &Path, names: &[String]) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|h| {
            h.strip_prefix("t_")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, format!("column '{h}' is not of the form t_<value>")))
        })
        .collect()
}

fn grid_domain(path: &Path, t: &[f64], domain: Option<Domain>) -> Result<Domain> {
    match domain {
        Some(d) => Ok(d),
        None if t.len() >= 2 => Domain::new(t[0], t[t.len() - 1] - t[0]).map_err(|e| parse_err(path, e.to_string())),
        None => Err(parse_err(path, "cannot infer a domain from fewer than two grid points")),
    }
}

/// Subject ids with the rows of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Reads `id,<name>,...` with numeric value columns.
pub fn read_columns(path: impl AsRef<Path>) -> Result<Columns> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(parse_err(path, "expected an id column followed by value columns"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        ids.push(rec[0].to_string());
        for (c, name) in names.iter().enumerate() {
            data.push(parse_number(path, &rec[c + 1], r + 2, name)?);
        }
    }
    if ids.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    Ok(Columns {
        values: DMatrix::from_row_slice(ids.len(), names.len(), &data),
        ids,
        names,
    })
}

pub fn write_columns(path: impl AsRef<Path>, ids: &[String], names: &[String], values: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != values.nrows() || names.len() != values.ncols() {
        return Err(Error::Shape("ids/names do not match the table".into()));
    }
    let mut w = writer(path)?;
    let mut head = vec!["id".to_string()];
    head.extend(names.iter().cloned());
    w.write_record(&head).map_err(|e| csv_err(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a wide curve file `id,t_<v1>,...,t_<vm>`. Without `domain` the
/// domain is the span of the grid.
pub fn read_wide(path: impl AsRef<Path>, domain: Option<Domain>) -> Result<(Vec<String>, FunctionalSample)> {
    let path = path.as_ref();
    let cols = read_columns(path)?;
    let t = grid_from_header(path, &cols.names)?;
    let d = grid_domain(path, &t, domain)?;
    let sample = FunctionalSample::new(cols.values, d, t).map_err(|e| parse_err(path, e.to_string()))?;
    Ok((cols.ids, sample))
}

fn grid_names(t: &[f64]) -> Vec<String> {
    t.iter().map(|v| format!("t_{v}")).collect()
}

pub fn write_wide(path: impl AsRef<Path>, ids: &[String], sample: &FunctionalSample) -> Result<()> {
    write_columns(path, ids, &grid_names(sample.t_points()), sample.x())
}

/// Reads a long replicate file `id,rep,t_<v1>,...`, one row per subject and
/// replicate. Subjects keep their order of first appearance and every
/// subject must carry the same replicate labels.
pub fn read_long(path: impl AsRef<Path>, domain: Option<Domain>) -> Result<(Vec<String>, ReplicatedSurrogate)> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 || &header[1] != "rep" {
        return Err(parse_err(path, "expected header id,rep,t_<v1>,..."));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let t = grid_from_header(path, &names)?;
    let d = grid_domain(path, &t, domain)?;
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut reps: Vec<String> = Vec::new();
    let mut cells: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec[0].to_string();
        let i = *index.entry(id.clone()).or_insert_with(|| {
            ids.push(id);
            ids.len() - 1
        });
        let rep = rec[1].to_string();
        let j = match reps.iter().position(|x| *x == rep) {
            Some(j) => j,
            None => {
                reps.push(rep);
                reps.len() - 1
            }
        };
        let row = names
            .iter()
            .enumerate()
            .map(|(c, name)| parse_number(path, &rec[c + 2], r + 2, name))
            .collect::<Result<Vec<f64>>>()?;
        if cells.insert((i, j), row).is_some() {
            return Err(parse_err(path, format!("duplicate row for id '{}' rep '{}'", &rec[0], &rec[1])));
        }
    }
    if ids.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    let (n, m) = (ids.len(), t.len());
    let mut samples = Vec::with_capacity(reps.len());
    for (j, rep) in reps.iter().enumerate() {
        let mut x = DMatrix::zeros(n, m);
        for (i, id) in ids.iter().enumerate() {
            let row = cells
                .get(&(i, j))
                .ok_or_else(|| parse_err(path, format!("id '{id}' lacks replicate '{rep}'")))?;
            x.row_mut(i).copy_from_slice(row);
        }
        samples.push(FunctionalSample::new(x, d, t.clone()).map_err(|e| parse_err(path, e.to_string()))?);
    }
    Ok((ids, ReplicatedSurrogate::new(samples)?))
}

pub fn write_long(path: impl AsRef<Path>, ids: &[String], w: &ReplicatedSurrogate) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != w.n() {
        return Err(Error::Shape("ids do not match the replicates".into()));
    }
    let mut wr = writer(path)?;
    let mut head = vec!["id".to_string(), "rep".to_string()];
    head.extend(grid_names(w.t_points()));
    wr.write_record(&head).map_err(|e| csv_err(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        for (j, r) in w.replicates().iter().enumerate() {
            let mut row = vec![id.clone(), (j + 1).to_string()];
            row.extend(r.x().row(i).iter().map(|v| v.to_string()));
            wr.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    wr.flush().map_err(|e| io_err(path, e))
}

/// Reads surrogate curves in either layout: a long file (second column
/// `rep`) gives all replicates, a wide file a single replicate.
pub fn read_surrogate(path: impl AsRef<Path>, domain: Option<Domain>) -> Result<(Vec<String>, ReplicatedSurrogate)> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let long = rdr.headers().map_err(|e| csv_err(path, e))?.get(1) == Some("rep");
    drop(rdr);
    if long {
        read_long(path, domain)
    } else {
        let (ids, s) = read_wide(path, domain)?;
        Ok((ids, ReplicatedSurrogate::new(vec![s])?))
    }
}

/// Positions in `src` of each entry of `ids`; `path` names the file `src`
/// came from.
pub fn row_order(src: &[String], ids: &[String], path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let pos: HashMap<&str, usize> = src.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if pos.len() != src.len() {
        return Err(parse_err(path, "duplicate ids"));
    }
    ids.iter()
        .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| parse_err(path, format!("missing id '{id}'"))))
        .collect()
}

/// Rows of `cols` reordered to follow `ids`.
pub fn align(cols: &Columns, ids: &[String], path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let rows = row_order(&cols.ids, ids, path)?;
    Ok(cols.values.select_rows(rows.iter()))
}

/// Writes equally long columns under the given headers.
pub fn write_table(path: impl AsRef<Path>, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    let path = path.as_ref();
    if headers.len() != columns.len() || columns.iter().any(|c| c.len() != columns[0].len()) {
        return Err(Error::Shape("table columns do not line up".into()));
    }
    let mut w = writer(path)?;
    w.write_record(headers).map_err(|e| csv_err(path, e))?;
    for r in 0..columns.first().map_or(0, |c| c.len()) {
        w.write_record(columns.iter().map(|c| c[r].to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `t,beta_hat[,lo,hi]`.
pub fn write_beta_table(path: impl AsRef<Path>, t: &[f64], beta: &[f64], band: Option<(&[f64], &[f64])>) -> Result<()> {
    match band {
        Some((lo, hi)) => write_table(path, &["t", "beta_hat", "lo", "hi"], &[t, beta, lo, hi]),
        None => write_table(path, &["t", "beta_hat"], &[t, beta]),
    }
}

/// Default subject ids `1..=n`.
pub fn default_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}
