//! On-disk dataset format.
//!
//! A dataset is a directory holding five UTF-8, LF-terminated text files:
//!
//! | file           | line format                          |
//! |----------------|--------------------------------------|
//! | `manifest.txt` | `key=value`                          |
//! | `graph.tsv`    | `src<TAB>dst<TAB>weight`             |
//! | `features.tsv` | `node<TAB>feature_index<TAB>value`   |
//! | `labels.tsv`   | `node<TAB>class_index`               |
//! | `split.tsv`    | `node<TAB>{train,val,test,unlabeled}` |
//!
//! Ids are 0-based and lines starting with `#` are comments. Undirected graphs
//! list both orientations of every edge. Floats are written with 17
//! significant digits so that values survive a round trip exactly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{GdrError, Result};
use crate::graph::SparseGraph;
use crate::sparse::CsrMatrix;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const GRAPH_FILE: &str = "graph.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.tsv";

/// Environment variable naming the directory that relative dataset paths are
/// resolved against.
pub const DATA_ROOT_ENV: &str = "GDR_DATA_ROOT";

const DATA_FILES: [&str; 4] = [GRAPH_FILE, FEATURES_FILE, LABELS_FILE, SPLIT_FILE];

/// Format like C's `%.17g`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..17).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (16 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unlabeled,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            "unlabeled" => Ok(SplitTag::Unlabeled),
            other => Err(format!("unknown split tag '{other}'")),
        }
    }
}

/// One tag per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    tags: Vec<SplitTag>,
}

impl Split {
    pub fn new(tags: Vec<SplitTag>) -> Result<Self> {
        if !tags.contains(&SplitTag::Train) {
            return Err(GdrError::Validation("split has no training nodes".into()));
        }
        Ok(Split { tags })
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn mask(&self, tag: SplitTag) -> Vec<bool> {
        self.tags.iter().map(|&t| t == tag).collect()
    }

    pub fn nodes(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.tags.len()).filter(|&i| self.tags[i] == tag).collect()
    }

    /// Every node that is not in the training set.
    pub fn non_training(&self) -> Vec<usize> {
        (0..self.tags.len())
            .filter(|&i| self.tags[i] != SplitTag::Train)
            .collect()
    }
}

/// Counts and content digests describing a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_classes: usize,
    pub n_features: usize,
    pub directed: bool,
    /// SHA-256 (hex) of each data file, keyed by file name.
    pub digests: BTreeMap<String, String>,
}

impl DatasetManifest {
    /// One digest over all data files, used to tell datasets apart in reports.
    pub fn combined_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in &self.digests {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(&hasher.finalize()[..8])
    }

    fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name={}\n", self.name));
        out.push_str(&format!("n_nodes={}\n", self.n_nodes));
        out.push_str(&format!("n_edges={}\n", self.n_edges));
        out.push_str(&format!("n_classes={}\n", self.n_classes));
        out.push_str(&format!("n_features={}\n", self.n_features));
        out.push_str(&format!("directed={}\n", self.directed));
        for (file, digest) in &self.digests {
            out.push_str(&format!("digest.{file}={digest}\n"));
        }
        out
    }
}

/// A loaded dataset. All fields are consistent with the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: SparseGraph,
    /// `N × F` sparse feature matrix.
    pub features: CsrMatrix,
    /// Ground-truth class per node, if known.
    pub labels: Vec<Option<usize>>,
    pub split: Split,
    pub n_classes: usize,
}

impl Dataset {
    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    /// Labels of `nodes`, failing if any is unknown.
    pub fn labels_of(&self, nodes: &[usize]) -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|&i| self.labels[i].ok_or_else(|| GdrError::Validation(format!("node {i} has no label"))))
            .collect()
    }

    /// Rows `nodes` of the feature matrix.
    pub fn feature_rows(&self, nodes: &[usize]) -> CsrMatrix {
        let mut triplets = Vec::new();
        for (r, &i) in nodes.iter().enumerate() {
            let (cols, vals) = self.features.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| (r, j, v)));
        }
        CsrMatrix::from_triplets(nodes.len(), self.features.ncols(), &triplets)
    }
}

/// Resolve a dataset path: relative paths are taken against `$GDR_DATA_ROOT`
/// when it is set.
pub fn resolve_dataset_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            return PathBuf::from(root).join(path);
        }
    }
    path.to_path_buf()
}

/// Hex SHA-256 digest, as recorded in the manifest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GdrError::io(path, e))
}

/// Non-comment lines with their 1-based line numbers, split on tabs.
fn records<'a>(text: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.split('\n').enumerate().filter_map(|(i, line)| {
        if line.is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split('\t').collect()))
        }
    })
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, raw: &str, what: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| GdrError::data(path, line, format!("invalid {what} '{raw}'")))
}

fn expect_fields(path: &Path, line: usize, fields: &[&str], n: usize) -> Result<()> {
    if fields.len() == n {
        Ok(())
    } else {
        Err(GdrError::data(
            path,
            line,
            format!("expected {n} tab-separated fields, found {}", fields.len()),
        ))
    }
}

fn node_id(path: &Path, line: usize, raw: &str, n_nodes: usize) -> Result<usize> {
    let id: usize = field(path, line, raw, "node id")?;
    if id >= n_nodes {
        return Err(GdrError::data(
            path,
            line,
            format!("node id {id} out of range [0, {n_nodes})"),
        ));
    }
    Ok(id)
}

struct ParsedManifest {
    manifest: DatasetManifest,
    lines: BTreeMap<String, usize>,
}

fn parse_manifest(path: &Path) -> Result<ParsedManifest> {
    let text = read(path)?;
    let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, line) in text.split('\n').enumerate() {
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| GdrError::data(path, lineno, "expected key=value"))?;
        if values
            .insert(key.to_string(), (lineno, value.to_string()))
            .is_some()
        {
            return Err(GdrError::data(path, lineno, format!("duplicate key '{key}'")));
        }
    }
    let mut lines = BTreeMap::new();
    let mut take = |key: &str| -> Result<(usize, String)> {
        let entry = values
            .remove(key)
            .ok_or_else(|| GdrError::data(path, 0, format!("missing key '{key}'")))?;
        lines.insert(key.to_string(), entry.0);
        Ok(entry)
    };
    let name = take("name")?.1;
    let mut count = |key: &str| -> Result<usize> {
        let (line, v) = take(key)?;
        field(path, line, &v, key)
    };
    let n_nodes = count("n_nodes")?;
    let n_edges = count("n_edges")?;
    let n_classes = count("n_classes")?;
    let n_features = count("n_features")?;
    let (dline, directed) = take("directed")?;
    let directed: bool = field(path, dline, &directed, "directed flag")?;
    let mut digests = BTreeMap::new();
    for file in DATA_FILES {
        let (_, digest) = take(&format!("digest.{file}"))?;
        digests.insert(file.to_string(), digest);
    }
    if let Some((key, (line, _))) = values.into_iter().next() {
        return Err(GdrError::data(path, line, format!("unknown key '{key}'")));
    }
    Ok(ParsedManifest {
        manifest: DatasetManifest {
            name,
            n_nodes,
            n_edges,
            n_classes,
            n_features,
            directed,
            digests,
        },
        lines,
    })
}

/// Load and cross-check a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let ParsedManifest { manifest, lines } = parse_manifest(&manifest_path)?;
    let line_of = |key: &str| lines.get(key).copied().unwrap_or(0);
    let n = manifest.n_nodes;

    let mut texts = BTreeMap::new();
    for file in DATA_FILES {
        let path = dir.join(file);
        let text = read(&path)?;
        let digest = sha256_hex(text.as_bytes());
        if manifest.digests[file] != digest {
            return Err(GdrError::data(
                &manifest_path,
                line_of(&format!("digest.{file}")),
                format!("digest mismatch for {file}"),
            ));
        }
        texts.insert(file, text);
    }

    // graph
    let path = dir.join(GRAPH_FILE);
    let mut edges = Vec::new();
    let mut seen = HashMap::new();
    for (line, f) in records(&texts[GRAPH_FILE]) {
        expect_fields(&path, line, &f, 3)?;
        let src = node_id(&path, line, f[0], n)?;
        let dst = node_id(&path, line, f[1], n)?;
        let w: f64 = field(&path, line, f[2], "weight")?;
        if !w.is_finite() || w < 0.0 {
            return Err(GdrError::data(&path, line, format!("invalid weight {w}")));
        }
        if seen.insert((src, dst), (w, line)).is_some() {
            return Err(GdrError::data(
                &path,
                line,
                format!("duplicate edge {src} -> {dst}"),
            ));
        }
        edges.push((src, dst, w));
    }
    if !manifest.directed {
        for &(src, dst, w) in &edges {
            if seen.get(&(dst, src)).is_none_or(|&(back, _)| back != w) {
                return Err(GdrError::data(
                    &path,
                    seen[&(src, dst)].1,
                    format!("undirected edge {src} -> {dst} lacks a reverse line with equal weight"),
                ));
            }
        }
    }
    let graph =
        SparseGraph::new(n, edges, manifest.directed).map_err(|e| GdrError::data(&path, 0, e.to_string()))?;
    if graph.n_edges() != manifest.n_edges {
        return Err(GdrError::data(
            &manifest_path,
            line_of("n_edges"),
            format!(
                "manifest declares {} edges, {GRAPH_FILE} has {}",
                manifest.n_edges,
                graph.n_edges()
            ),
        ));
    }

    // features
    let path = dir.join(FEATURES_FILE);
    let mut triplets = Vec::new();
    let mut seen = HashSet::new();
    for (line, f) in records(&texts[FEATURES_FILE]) {
        expect_fields(&path, line, &f, 3)?;
        let node = node_id(&path, line, f[0], n)?;
        let feat: usize = field(&path, line, f[1], "feature index")?;
        if feat >= manifest.n_features {
            return Err(GdrError::data(
                &path,
                line,
                format!("feature index {feat} out of range [0, {})", manifest.n_features),
            ));
        }
        let v: f64 = field(&path, line, f[2], "feature value")?;
        if !v.is_finite() {
            return Err(GdrError::data(&path, line, "non-finite feature value"));
        }
        if !seen.insert((node, feat)) {
            return Err(GdrError::data(
                &path,
                line,
                format!("duplicate entry ({node}, {feat})"),
            ));
        }
        triplets.push((node, feat, v));
    }
    let features = CsrMatrix::from_triplets(n, manifest.n_features, &triplets);

    // labels
    let path = dir.join(LABELS_FILE);
    let mut labels = vec![None; n];
    for (line, f) in records(&texts[LABELS_FILE]) {
        expect_fields(&path, line, &f, 2)?;
        let node = node_id(&path, line, f[0], n)?;
        let class: usize = field(&path, line, f[1], "class index")?;
        if class >= manifest.n_classes {
            return Err(GdrError::data(
                &path,
                line,
                format!("class {class} out of range [0, {})", manifest.n_classes),
            ));
        }
        if labels[node].replace(class).is_some() {
            return Err(GdrError::data(
                &path,
                line,
                format!("duplicate label for node {node}"),
            ));
        }
    }

    // split
    let path = dir.join(SPLIT_FILE);
    let mut tags: Vec<Option<SplitTag>> = vec![None; n];
    let mut last_line = 0;
    for (line, f) in records(&texts[SPLIT_FILE]) {
        last_line = line;
        expect_fields(&path, line, &f, 2)?;
        let node = node_id(&path, line, f[0], n)?;
        let tag: SplitTag = f[1].parse().map_err(|e: String| GdrError::data(&path, line, e))?;
        if tag == SplitTag::Train && labels[node].is_none() {
            return Err(GdrError::data(
                &path,
                line,
                format!("training node {node} has no label"),
            ));
        }
        if tags[node].replace(tag).is_some() {
            return Err(GdrError::data(
                &path,
                line,
                format!("duplicate split tag for node {node}"),
            ));
        }
    }
    if let Some(missing) = tags.iter().position(Option::is_none) {
        return Err(GdrError::data(
            &path,
            last_line,
            format!("node {missing} has no split tag"),
        ));
    }
    let split = Split::new(tags.into_iter().map(Option::unwrap).collect())
        .map_err(|e| GdrError::data(&path, last_line, e.to_string()))?;

    let dataset = Dataset {
        name: manifest.name.clone(),
        graph,
        features,
        labels,
        split,
        n_classes: manifest.n_classes,
    };
    Ok((dataset, manifest))
}

/// Canonical file contents for a dataset, keyed by file name.
fn render_files(d: &Dataset) -> Vec<(&'static str, String)> {
    let mut graph = String::from("# src\tdst\tweight\n");
    for e in d.graph.edges() {
        graph.push_str(&format!("{}\t{}\t{}\n", e.src, e.dst, format_float(e.weight)));
    }
    let mut features = String::from("# node\tfeature_index\tvalue\n");
    for (i, j, v) in d.features.triplets() {
        if v != 0.0 {
            features.push_str(&format!("{i}\t{j}\t{}\n", format_float(v)));
        }
    }
    let mut labels = String::from("# node\tclass_index\n");
    for (i, l) in d.labels.iter().enumerate() {
        if let Some(l) = l {
            labels.push_str(&format!("{i}\t{l}\n"));
        }
    }
    let mut split = String::from("# node\ttag\n");
    for (i, t) in d.split.tags().iter().enumerate() {
        split.push_str(&format!("{i}\t{t}\n"));
    }
    vec![
        (GRAPH_FILE, graph),
        (FEATURES_FILE, features),
        (LABELS_FILE, labels),
        (SPLIT_FILE, split),
    ]
}

/// Write `d` in canonical form (sorted records, `%.17g` floats) and return the
/// manifest with freshly computed digests.
pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<DatasetManifest> {
    if d.labels.len() != d.n_nodes() || d.split.len() != d.n_nodes() || d.features.nrows() != d.n_nodes() {
        return Err(GdrError::Validation(
            "labels, split and features must have one entry per node".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| GdrError::io(dir, e))?;
    let mut digests = BTreeMap::new();
    for (file, text) in render_files(d) {
        let path = dir.join(file);
        fs::write(&path, text.as_bytes()).map_err(|e| GdrError::io(&path, e))?;
        digests.insert(file.to_string(), sha256_hex(text.as_bytes()));
    }
    let manifest = DatasetManifest {
        name: d.name.clone(),
        n_nodes: d.n_nodes(),
        n_edges: d.graph.n_edges(),
        n_classes: d.n_classes,
        n_features: d.features.ncols(),
        directed: d.graph.is_directed(),
        digests,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.render()).map_err(|e| GdrError::io(&path, e))?;
    Ok(manifest)
}
