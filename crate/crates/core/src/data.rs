//! LIBSVM text datasets and node partitions.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("feature index {index} exceeds the dimension override {dim}")]
    DimensionOverride { index: usize, dim: usize },
    #[error("cannot split {rows} rows across {nodes} nodes")]
    TooManyNodes { rows: usize, nodes: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One sparse sample with strictly increasing 0-based indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&k, v)| v * x[k as usize])
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseDataset {
    pub dim: usize,
    pub rows: Vec<SparseRow>,
    /// `±1` per row.
    pub labels: Vec<f64>,
}

impl SparseDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn parse_label(tok: &str) -> Option<f64> {
    let v: f64 = tok.parse().ok()?;
    if v == 1.0 {
        Some(1.0)
    } else if v == -1.0 || v == 0.0 {
        Some(-1.0)
    } else {
        None
    }
}

/// Parses LIBSVM text. File indices are 1-based; the result is 0-based.
///
/// The dimension is `1 + max index` unless `dim_override` is given, in which
/// case every index must fit inside it.
pub fn parse_libsvm<R: BufRead>(
    reader: R,
    dim_override: Option<usize>,
) -> Result<SparseDataset, DataError> {
    let mut ds = SparseDataset::default();
    let mut max_dim = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Parse { line: line_no, msg };
        let mut toks = body.split_whitespace();
        let label_tok = toks.next().unwrap_or_default();
        let label =
            parse_label(label_tok).ok_or_else(|| err(format!("unparsable label {label_tok:?}")))?;
        let mut row = SparseRow::default();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed token {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("malformed index in {tok:?}")))?;
            if idx == 0 {
                return Err(err(format!("index 0 in {tok:?}; indices are 1-based")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("malformed value in {tok:?}")))?;
            let k = idx - 1;
            if let Some(&last) = row.indices.last() {
                if k as u32 <= last {
                    return Err(err(format!("non-increasing index {idx}")));
                }
            }
            if k > u32::MAX as usize {
                return Err(err(format!("index {idx} too large")));
            }
            if let Some(d) = dim_override {
                if k >= d {
                    return Err(DataError::DimensionOverride { index: idx, dim: d });
                }
            }
            max_dim = max_dim.max(k + 1);
            row.indices.push(k as u32);
            row.values.push(val);
        }
        ds.rows.push(row);
        ds.labels.push(label);
    }
    ds.dim = dim_override.unwrap_or(max_dim);
    Ok(ds)
}

/// Reads a LIBSVM file; names ending in `.gz` are decompressed.
pub fn read_libsvm(path: &Path, dim_override: Option<usize>) -> Result<SparseDataset, DataError> {
    let io = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_libsvm(BufReader::new(reader), dim_override)
}

/// Serializes with 1-based indices and round-trip-exact values.
pub fn write_libsvm(ds: &SparseDataset) -> String {
    let mut out = String::new();
    for (row, label) in ds.rows.iter().zip(&ds.labels) {
        out.push_str(if *label > 0.0 { "+1" } else { "-1" });
        for (k, v) in row.indices.iter().zip(&row.values) {
            let _ = write!(out, " {}:{}", k + 1, v);
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    UniformShuffle,
    LabelSorted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub assignment: Vec<Vec<usize>>,
}

/// Splits the rows into `nodes` near-equal contiguous chunks of a seeded
/// shuffle or of a label-sorted order.
pub fn partition(
    ds: &SparseDataset,
    nodes: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<PartitionPlan, DataError> {
    let n = ds.len();
    if nodes == 0 || nodes > n {
        return Err(DataError::TooManyNodes { rows: n, nodes });
    }
    let mut order: Vec<usize> = (0..n).collect();
    match scheme {
        PartitionScheme::UniformShuffle => {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        PartitionScheme::LabelSorted => {
            // positives first; stable, so ties keep file order
            order.sort_by(|&a, &b| ds.labels[b].total_cmp(&ds.labels[a]));
        }
    }
    let (base, extra) = (n / nodes, n % nodes);
    let mut assignment = Vec::with_capacity(nodes);
    let mut start = 0;
    for i in 0..nodes {
        let len = base + usize::from(i < extra);
        assignment.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(PartitionPlan { scheme, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SparseDataset, DataError> {
        parse_libsvm(s.as_bytes(), None)
    }

    #[test]
    fn parses_basic_example() {
        let ds = parse("+1 1:0.5 3:2\n-1 2:1\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim, 3);
        assert_eq!(ds.rows[0].indices, vec![0, 2]);
        assert_eq!(ds.rows[0].values, vec![0.5, 2.0]);
        assert_eq!(ds.labels, vec![1.0, -1.0]);
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let ds = parse("").unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.dim, 0);
    }

    #[test]
    fn labels_and_comments() {
        let ds = parse("1 1:1 # trailing\n0 2:1\n\n# only comment\n-1\n").unwrap();
        assert_eq!(ds.labels, vec![1.0, -1.0, -1.0]);
        assert_eq!(ds.rows[2].nnz(), 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("+1 1:1\n+1 3:1 2:1\n", 2),
            ("+1 1:1\n+2 1:1\n", 2),
            ("+1 1-1\n", 1),
            ("+1 1:x\n", 1),
            ("+1 0:1\n", 1),
            ("+1 1:1 1:2\n", 1),
        ] {
            match parse(text) {
                Err(DataError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn dimension_override() {
        let ds = parse_libsvm("+1 2:1\n".as_bytes(), Some(10)).unwrap();
        assert_eq!(ds.dim, 10);
        assert!(parse_libsvm("+1 12:1\n".as_bytes(), Some(10)).is_err());
    }

    #[test]
    fn round_trip() {
        let ds = parse("+1 1:0.1 7:-3.25e-7\n-1 2:1e300\n+1\n").unwrap();
        let back = parse_libsvm(write_libsvm(&ds).as_bytes(), Some(ds.dim)).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn gzip_files_are_read() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt.gz");
        let mut enc = flate2::write::GzEncoder::new(
            File::create(&path).unwrap(),
            flate2::Compression::fast(),
        );
        enc.write_all(b"+1 1:0.5 3:2\n-1 2:1\n").unwrap();
        enc.finish().unwrap();
        let ds = read_libsvm(&path, None).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn partitions() {
        let ds = parse("+1 1:1\n+1 1:1\n-1 1:1\n-1 1:1\n").unwrap();
        let p = partition(&ds, 2, PartitionScheme::UniformShuffle, 4).unwrap();
        assert_eq!(
            p.assignment.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![2, 2]
        );
        assert_eq!(
            p,
            partition(&ds, 2, PartitionScheme::UniformShuffle, 4).unwrap()
        );
        let p = partition(&ds, 2, PartitionScheme::LabelSorted, 0).unwrap();
        assert!(p.assignment[0].iter().all(|&r| ds.labels[r] > 0.0));
        assert!(p.assignment[1].iter().all(|&r| ds.labels[r] < 0.0));
        assert!(partition(&ds, 5, PartitionScheme::LabelSorted, 0).is_err());
    }

    #[test]
    fn partition_covers_exhaustively() {
        for n in 1..=12 {
            let text: String = (0..n)
                .map(|k| if k % 3 == 0 { "+1\n" } else { "-1\n" })
                .collect();
            let ds = parse(&text).unwrap();
            for m in 1..=4.min(n) {
                for scheme in [
                    PartitionScheme::UniformShuffle,
                    PartitionScheme::LabelSorted,
                ] {
                    let p = partition(&ds, m, scheme, n as u64).unwrap();
                    let mut all: Vec<usize> = p.assignment.iter().flatten().copied().collect();
                    assert!(p.assignment.iter().all(|a| !a.is_empty()));
                    all.sort_unstable();
                    assert_eq!(all, (0..n).collect::<Vec<_>>());
                }
            }
        }
    }
}
