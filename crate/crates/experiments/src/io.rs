//! Plain-text dataset format.
//!
//! * edges: one undirected edge per line, `u v`, 0-indexed; blank lines and lines
//!   starting with `#` are skipped
//! * features: CSV without header, one row of reals per node
//! * labels: one integer class per line, or `node class` pairs
//! * splits: one of `train`, `val`, `test` per line

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use graph_unlearn::{Dataset, DenseMatrix, GraphCsr, Split};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl DatasetFiles {
    /// Conventional file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            edges: dir.join("edges.txt"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.txt"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide every row by the largest row norm when it exceeds 1.
    #[default]
    Global,
    /// Scale each row with norm above 1 to unit norm.
    PerRow,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_labels(text: &str, path: &Path) -> Result<Vec<usize>> {
    let rows: Vec<(usize, Vec<&str>)> = content_lines(text)
        .map(|(no, l)| (no, l.split_whitespace().collect()))
        .collect();
    let parse = |no: usize, s: &str| -> Result<usize> {
        s.parse()
            .with_context(|| format!("{}:{no}: '{s}' is not a non-negative integer", path.display()))
    };
    if rows.iter().all(|(_, f)| f.len() == 1) {
        return rows.iter().map(|(no, f)| parse(*no, f[0])).collect();
    }
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (no, f) in &rows {
        if f.len() != 2 {
            bail!("{}:{no}: expected 'class' or 'node class'", path.display());
        }
        let (node, class) = (parse(*no, f[0])?, parse(*no, f[1])?);
        if node >= labels.len() {
            labels.resize(node + 1, None);
        }
        match labels[node] {
            Some(prev) if prev != class => {
                bail!("{}:{no}: node {node} labelled both {prev} and {class}", path.display())
            }
            _ => labels[node] = Some(class),
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.with_context(|| format!("{}: node {i} has no label", path.display())))
        .collect()
}

fn parse_edges(text: &str, n: usize, path: &Path) -> Result<Vec<(usize, usize)>> {
    content_lines(text)
        .map(|(no, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 2 {
                bail!("{}:{no}: expected 'u v'", path.display());
            }
            let mut ends = [0usize; 2];
            for (slot, s) in ends.iter_mut().zip(&f) {
                *slot = s
                    .parse()
                    .with_context(|| format!("{}:{no}: '{s}' is not a node index", path.display()))?;
                if *slot >= n {
                    bail!("{}:{no}: node {} out of range for {n} nodes", path.display(), *slot);
                }
            }
            Ok((ends[0], ends[1]))
        })
        .collect()
}

fn parse_features(text: &str, path: &Path) -> Result<DenseMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let row = rec
            .iter()
            .map(|s| {
                let v: f64 = s
                    .parse()
                    .with_context(|| format!("{}: row {}: '{s}' is not a number", path.display(), i + 1))?;
                if !v.is_finite() {
                    bail!("{}: row {}: non-finite value", path.display(), i + 1);
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no feature rows", path.display());
    }
    DenseMatrix::from_rows(&rows).with_context(|| format!("{}: ragged feature rows", path.display()))
}

fn parse_splits(text: &str, path: &Path) -> Result<Vec<Split>> {
    content_lines(text)
        .map(|(no, l)| {
            l.parse::<Split>()
                .with_context(|| format!("{}:{no}: expected train, val or test", path.display()))
        })
        .collect()
}

/// Reads the four files, adds self-loops and applies the feature norm cap.
pub fn load_dataset(files: &DatasetFiles, normalization: Normalization) -> Result<Dataset<f64>> {
    let labels = parse_labels(&read(&files.labels)?, &files.labels)?;
    let n = labels.len();
    if n == 0 {
        bail!("{}: no labels", files.labels.display());
    }
    let edges = parse_edges(&read(&files.edges)?, n, &files.edges)?;
    let mut features = parse_features(&read(&files.features)?, &files.features)?;
    let split = parse_splits(&read(&files.splits)?, &files.splits)?;
    if features.rows() != n || split.len() != n {
        bail!(
            "{n} labels but {} feature rows and {} split entries",
            features.rows(),
            split.len()
        );
    }
    match normalization {
        Normalization::Global => Dataset::cap_feature_norms(&mut features),
        Normalization::PerRow => Dataset::cap_each_row(&mut features),
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let graph = GraphCsr::from_edges(n, edges)?;
    Ok(Dataset::new(graph, features, labels, classes, split)?)
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

/// Writes the dataset in the format read by [`load_dataset`].
pub fn save_dataset(ds: &Dataset<f64>, files: &DatasetFiles) -> Result<()> {
    let mut edges = String::new();
    for (u, v) in ds.graph().edges() {
        edges.push_str(&format!("{u} {v}\n"));
    }
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..ds.node_count() {
        wtr.write_record(ds.features().row(i).iter().map(|v| v.to_string()))?;
    }
    let features = wtr.into_inner().context("flushing features")?;
    let labels: String = ds.labels().iter().map(|l| format!("{l}\n")).collect();
    let splits: String = ds.split().iter().map(|s| format!("{}\n", s.as_str())).collect();
    write_atomic(&files.edges, edges.as_bytes())?;
    write_atomic(&files.features, &features)?;
    write_atomic(&files.labels, labels.as_bytes())?;
    write_atomic(&files.splits, splits.as_bytes())
}
