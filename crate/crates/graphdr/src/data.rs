//! Citation-dataset ingestion, splits, and adjacency normalization.
//!
//! Input is the public text layout: a `*.content` file with one line per paper
//! (id, binary word flags, class string) and a `*.cites` file with one
//! citation per line (cited, citing). Ingestion symmetrizes and deduplicates
//! the edge set, drops self-citations, skips citations that reference unknown
//! ids (counting them in a warning tally), and fixes label indices by sorting
//! class names lexicographically. Node order is content-file order, so the
//! container is bit-identical across runs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;
use crate::sparse::SparseAdjacency;

/// Sparse binary n x d feature matrix (one-hot word indicators).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    n: usize,
    d: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SparseFeatures {
    pub fn from_rows(d: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for row in rows {
            for &c in row {
                if c >= d {
                    return Err(GraphDrError::InvalidArgument {
                        context: "SparseFeatures",
                        message: format!("column {c} out of range for d={d}"),
                    });
                }
            }
            let mut sorted = row.clone();
            sorted.sort_unstable();
            sorted.dedup();
            col_indices.extend_from_slice(&sorted);
            row_offsets.push(col_indices.len());
        }
        Ok(SparseFeatures {
            n: rows.len(),
            d,
            row_offsets,
            col_indices,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.d);
        for i in 0..self.n {
            for &j in self.row(i) {
                m.set(i, j, 1.0);
            }
        }
        m
    }
}

/// Canonical dataset container: nodes with sparse one-hot features, an
/// undirected citation graph, per-node class labels, and the class roster.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetContainer {
    pub name: String,
    pub features: SparseFeatures,
    pub labels: Vec<usize>,
    pub edges: SparseAdjacency,
    pub class_names: Vec<String>,
    pub node_ids: Vec<String>,
    /// Citations skipped because they referenced an id absent from the
    /// content file.
    pub dangling_skipped: usize,
}

impl DatasetContainer {
    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features_dense(&self) -> DenseMatrix {
        self.features.to_dense()
    }
}

/// Disjoint boolean train/val/test masks over the node set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMask {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMask {
    pub fn n(&self) -> usize {
        self.train.len()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |v: &[bool]| v.iter().filter(|&&b| b).count();
        (c(&self.train), c(&self.val), c(&self.test))
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Adjacency with self-loops and symmetric sqrt-degree normalization:
/// entry (i,j) holds 1/sqrt((deg_i+1)(deg_j+1)).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(SparseAdjacency);

impl NormalizedAdjacency {
    pub fn adj(&self) -> &SparseAdjacency {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }
}

/// Parse the content/cites pair into a canonical container.
pub fn ingest_citation_files(content_path: &Path, cites_path: &Path) -> Result<DatasetContainer> {
    let content = fs::read_to_string(content_path)?;
    let path_str = content_path.display().to_string();

    let mut node_ids: Vec<String> = Vec::new();
    let mut id_index: HashMap<String, usize> = HashMap::new();
    let mut feature_rows: Vec<Vec<usize>> = Vec::new();
    let mut class_per_node: Vec<String> = Vec::new();
    let mut d: Option<usize> = None;

    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(GraphDrError::DatasetParse {
                path: path_str.clone(),
                line: lineno + 1,
                message: format!("expected id, word flags, class; got {} fields", fields.len()),
            });
        }
        let id = fields[0].to_string();
        let class = fields[fields.len() - 1].to_string();
        let flags = &fields[1..fields.len() - 1];
        match d {
            None => d = Some(flags.len()),
            Some(expect) if expect != flags.len() => {
                return Err(GraphDrError::DatasetParse {
                    path: path_str.clone(),
                    line: lineno + 1,
                    message: format!("{} word flags, expected {}", flags.len(), expect),
                });
            }
            _ => {}
        }
        let mut active = Vec::new();
        for (col, &flag) in flags.iter().enumerate() {
            match flag {
                "0" => {}
                "1" => active.push(col),
                other => {
                    return Err(GraphDrError::DatasetParse {
                        path: path_str.clone(),
                        line: lineno + 1,
                        message: format!("word flag must be 0 or 1, got {other:?}"),
                    });
                }
            }
        }
        if id_index.insert(id.clone(), node_ids.len()).is_some() {
            return Err(GraphDrError::DuplicateNodeId { id });
        }
        node_ids.push(id);
        feature_rows.push(active);
        class_per_node.push(class);
    }

    let d = d.ok_or_else(|| GraphDrError::DatasetParse {
        path: path_str.clone(),
        line: 0,
        message: "content file is empty".into(),
    })?;

    let mut class_names: Vec<String> = class_per_node.clone();
    class_names.sort();
    class_names.dedup();
    let class_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels: Vec<usize> = class_per_node
        .iter()
        .map(|c| class_index[c.as_str()])
        .collect();

    let cites = fs::read_to_string(cites_path)?;
    let cites_str = cites_path.display().to_string();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut dangling = 0usize;
    for (lineno, line) in cites.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(GraphDrError::DatasetParse {
                path: cites_str.clone(),
                line: lineno + 1,
                message: format!("expected cited and citing id, got {} fields", fields.len()),
            });
        }
        match (id_index.get(fields[0]), id_index.get(fields[1])) {
            (Some(&a), Some(&b)) => {
                if a != b {
                    edges.push((a, b));
                }
            }
            _ => dangling += 1,
        }
    }

    let n = node_ids.len();
    let edges = SparseAdjacency::from_undirected_edges(n, &edges)?;
    let features = SparseFeatures::from_rows(d, &feature_rows)?;
    let name = content_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());

    Ok(DatasetContainer {
        name,
        features,
        labels,
        edges,
        class_names,
        node_ids,
        dangling_skipped: dangling,
    })
}

/// Deterministic split rule: train takes the first `per_class` nodes of each
/// class in node order, val the next `n_val` remaining nodes in node order,
/// test the last `n_test` nodes in node order. Overlap is rejected.
pub fn make_split(
    ds: &DatasetContainer,
    per_class: usize,
    n_val: usize,
    n_test: usize,
) -> Result<SplitMask> {
    let n = ds.n();
    let needed = per_class * ds.num_classes() + n_val + n_test;
    if needed > n {
        return Err(GraphDrError::InvalidArgument {
            context: "make_split",
            message: format!("split needs {needed} nodes, dataset has {n}"),
        });
    }

    let mut train = vec![false; n];
    let mut taken = vec![0usize; ds.num_classes()];
    for (i, &label) in ds.labels.iter().enumerate() {
        if taken[label] < per_class {
            train[i] = true;
            taken[label] += 1;
        }
    }
    for (class, &count) in taken.iter().enumerate() {
        if count < per_class {
            return Err(GraphDrError::InsufficientClassNodes {
                class: ds.class_names[class].clone(),
                available: count,
                requested: per_class,
            });
        }
    }

    let mut val = vec![false; n];
    let mut assigned = 0;
    for i in 0..n {
        if assigned == n_val {
            break;
        }
        if !train[i] {
            val[i] = true;
            assigned += 1;
        }
    }
    if assigned < n_val {
        return Err(GraphDrError::InvalidArgument {
            context: "make_split",
            message: format!("only {assigned} validation-eligible nodes, {n_val} requested"),
        });
    }

    let mut test = vec![false; n];
    for i in n - n_test..n {
        if train[i] || val[i] {
            return Err(GraphDrError::InvalidArgument {
                context: "make_split",
                message: format!("node {i} would be in test and another split"),
            });
        }
        test[i] = true;
    }

    Ok(SplitMask { train, val, test })
}

/// Add self-loops and apply symmetric sqrt-degree normalization.
pub fn normalize_adjacency(edges: &SparseAdjacency) -> Result<NormalizedAdjacency> {
    let n = edges.n();
    let deg: Vec<usize> = (0..n).map(|i| edges.degree(i)).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.nnz() + n);
    for i in 0..n {
        entries.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        for (j, _) in edges.row(i) {
            entries.push((i, j, inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    Ok(NormalizedAdjacency(SparseAdjacency::from_entries(
        n, entries,
    )?))
}

/// Serialize the container (plus a split) as three TSV files: nodes.tsv,
/// edges.tsv, splits.tsv. Column order is documented in the README.
pub fn save_canonical_tsv(ds: &DatasetContainer, split: &SplitMask, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut nodes = String::new();
    writeln!(
        nodes,
        "#graphdr-nodes\td={}\tclasses={}",
        ds.d(),
        ds.class_names.join(",")
    )
    .expect("string write");
    for i in 0..ds.n() {
        let active: Vec<String> = ds.features.row(i).iter().map(|c| c.to_string()).collect();
        writeln!(
            nodes,
            "{}\t{}\t{}",
            ds.node_ids[i],
            ds.class_names[ds.labels[i]],
            active.join(" ")
        )
        .expect("string write");
    }
    fs::write(dir.join("nodes.tsv"), nodes)?;

    let mut edges = String::new();
    for i in 0..ds.n() {
        for (j, _) in ds.edges.row(i) {
            if i < j {
                writeln!(edges, "{}\t{}", ds.node_ids[i], ds.node_ids[j]).expect("string write");
            }
        }
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut splits = String::new();
    for i in 0..ds.n() {
        let role = if split.train[i] {
            "train"
        } else if split.val[i] {
            "val"
        } else if split.test[i] {
            "test"
        } else {
            "none"
        };
        writeln!(splits, "{}\t{}", ds.node_ids[i], role).expect("string write");
    }
    fs::write(dir.join("splits.tsv"), splits)?;
    Ok(())
}

/// Load a container + split saved by [`save_canonical_tsv`].
pub fn load_canonical_tsv(dir: &Path, name: &str) -> Result<(DatasetContainer, SplitMask)> {
    let nodes_path = dir.join("nodes.tsv");
    let text = fs::read_to_string(&nodes_path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| GraphDrError::DatasetParse {
        path: nodes_path.display().to_string(),
        line: 0,
        message: "missing header".into(),
    })?;
    let mut d = None;
    let mut class_names: Vec<String> = Vec::new();
    for field in header.split('\t') {
        if let Some(v) = field.strip_prefix("d=") {
            d = v.parse::<usize>().ok();
        } else if let Some(v) = field.strip_prefix("classes=") {
            class_names = v.split(',').map(|s| s.to_string()).collect();
        }
    }
    let d = d.ok_or_else(|| GraphDrError::DatasetParse {
        path: nodes_path.display().to_string(),
        line: 1,
        message: "header lacks d=".into(),
    })?;
    let class_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut node_ids = Vec::new();
    let mut id_index = HashMap::new();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (id, class, feats) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            (Some(a), Some(b), None) => (a, b, ""),
            _ => {
                return Err(GraphDrError::DatasetParse {
                    path: nodes_path.display().to_string(),
                    line: lineno + 1,
                    message: "expected id, class, features".into(),
                })
            }
        };
        let label = *class_index
            .get(class)
            .ok_or_else(|| GraphDrError::UnknownClass {
                class: class.to_string(),
            })?;
        let mut active = Vec::new();
        for tok in feats.split_whitespace() {
            let col: usize = tok.parse().map_err(|_| GraphDrError::DatasetParse {
                path: nodes_path.display().to_string(),
                line: lineno + 1,
                message: format!("bad feature index {tok:?}"),
            })?;
            active.push(col);
        }
        if id_index.insert(id.to_string(), node_ids.len()).is_some() {
            return Err(GraphDrError::DuplicateNodeId { id: id.to_string() });
        }
        node_ids.push(id.to_string());
        labels.push(label);
        rows.push(active);
    }

    let edges_path = dir.join("edges.tsv");
    let text = fs::read_to_string(&edges_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (a, b) = match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(GraphDrError::DatasetParse {
                    path: edges_path.display().to_string(),
                    line: lineno + 1,
                    message: "expected two node ids".into(),
                })
            }
        };
        match (id_index.get(a), id_index.get(b)) {
            (Some(&ia), Some(&ib)) => edges.push((ia, ib)),
            _ => {
                return Err(GraphDrError::DatasetParse {
                    path: edges_path.display().to_string(),
                    line: lineno + 1,
                    message: format!("edge references unknown id {a:?} or {b:?}"),
                })
            }
        }
    }

    let splits_path = dir.join("splits.tsv");
    let text = fs::read_to_string(&splits_path)?;
    let n = node_ids.len();
    let mut split = SplitMask {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (id, role) = match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(GraphDrError::DatasetParse {
                    path: splits_path.display().to_string(),
                    line: lineno + 1,
                    message: "expected id and role".into(),
                })
            }
        };
        let idx = *id_index.get(id).ok_or_else(|| GraphDrError::DatasetParse {
            path: splits_path.display().to_string(),
            line: lineno + 1,
            message: format!("unknown node id {id:?}"),
        })?;
        match role {
            "train" => split.train[idx] = true,
            "val" => split.val[idx] = true,
            "test" => split.test[idx] = true,
            "none" => {}
            other => {
                return Err(GraphDrError::DatasetParse {
                    path: splits_path.display().to_string(),
                    line: lineno + 1,
                    message: format!("unknown role {other:?}"),
                })
            }
        }
    }

    let container = DatasetContainer {
        name: name.to_string(),
        features: SparseFeatures::from_rows(d, &rows)?,
        labels,
        edges: SparseAdjacency::from_undirected_edges(n, &edges)?,
        class_names,
        node_ids,
        dangling_skipped: 0,
    };
    Ok((container, split))
}
