//! Labeled datasets: CSV and IDX parsing, seeded splits, synthetic generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{BilevelError, Result};
use crate::rng::{stream, StreamId};

/// Binary-labeled rows stored row-major; labels are ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n_features: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, n_features: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(BilevelError::InvalidArgument(
                "dataset needs at least one feature".into(),
            ));
        }
        if features.len() != labels.len() * n_features {
            return Err(BilevelError::DimensionMismatch {
                context: "dataset features",
                expected: labels.len() * n_features,
                actual: features.len(),
            });
        }
        if labels.iter().any(|&u| u != 1.0 && u != -1.0) {
            return Err(BilevelError::InvalidArgument("labels must be ±1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(BilevelError::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            n_features,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

fn parse_label(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| BilevelError::Parse {
        line,
        message: format!("label {field:?} is not a number"),
    })?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(BilevelError::Parse {
            line,
            message: format!("label {v} not in {{-1, +1}} or {{0, 1}}"),
        })
    }
}

/// Parses `label,feature,...` rows. A first line whose label field is not
/// numeric is treated as a header. Blank lines are skipped.
pub fn parse_csv_dataset(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| BilevelError::Parse {
            line: e.position().map_or(idx + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let first = record.get(0).unwrap_or("");
        if idx == 0 && first.parse::<f64>().is_err() {
            continue;
        }
        if record.len() < 2 {
            return Err(BilevelError::Parse {
                line,
                message: "expected a label and at least one feature".into(),
            });
        }
        let row_width = record.len() - 1;
        match width {
            None => width = Some(row_width),
            Some(w) if w != row_width => {
                return Err(BilevelError::Parse {
                    line,
                    message: format!("expected {w} features, found {row_width}"),
                })
            }
            _ => {}
        }
        labels.push(parse_label(first, line)?);
        for field in record.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| BilevelError::Parse {
                line,
                message: format!("feature {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(BilevelError::Parse {
                    line,
                    message: "non-finite feature".into(),
                });
            }
            features.push(v);
        }
    }
    let Some(width) = width else {
        return Err(BilevelError::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    };
    Dataset::new(features, labels, width)
}

pub fn load_csv_dataset(path: &std::path::Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv_dataset(&text)
}

/// Row indices of the UL superset and the LL subset; the subset is the
/// first `n_t2` entries of the superset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub superset: Vec<usize>,
    pub subset: Vec<usize>,
}

pub fn split_superset_subset(n_rows: usize, n_t1: usize, n_t2: usize, seed: u64) -> Result<Split> {
    if n_t2 == 0 || n_t2 > n_t1 || n_t1 > n_rows {
        return Err(BilevelError::InvalidArgument(format!(
            "need 0 < N_T2 ≤ N_T1 ≤ rows, got N_T2={n_t2}, N_T1={n_t1}, rows={n_rows}"
        )));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut stream(seed, StreamId::Shuffle));
    order.truncate(n_t1);
    Ok(Split {
        subset: order[..n_t2].to_vec(),
        superset: order,
    })
}

/// Two Gaussian clouds (identity covariance) centered at `±separation/2`
/// along a random unit direction; labels follow the cloud.
pub fn synth_logreg(n_features: usize, n_rows: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_rows < 2 || n_features == 0 {
        return Err(BilevelError::InvalidArgument(
            "need n_rows ≥ 2 and n_features ≥ 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    dir.iter_mut().for_each(|v| *v /= norm);
    let mut features = Vec::with_capacity(n_rows * n_features);
    let mut labels = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        // alternate labels so both classes are always present
        let u = if i % 2 == 0 { 1.0 } else { -1.0 };
        for d in &dir {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(u * 0.5 * separation * d + noise);
        }
        labels.push(u);
    }
    Dataset::new(features, labels, n_features)
}

/// A decoded IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Number of items along the first axis.
    pub fn items(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Elements per item.
    pub fn item_len(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

const IDX_U8: u8 = 0x08;

/// Decodes the IDX format: two zero bytes, type code (only `0x08`,
/// unsigned byte, is accepted), dimension count, big-endian `u32`
/// dimensions, then the data.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let bad = |message: String| BilevelError::Parse { line: 0, message };
    if bytes.len() < 4 {
        return Err(bad("IDX header truncated".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("IDX magic must start with two zero bytes".into()));
    }
    if bytes[2] != IDX_U8 {
        return Err(bad(format!("unsupported IDX type code {:#04x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(bad("IDX array has no dimensions".into()));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(bad("IDX dimensions truncated".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("IDX dimensions overflow".into()))?;
    let payload = &bytes[header..];
    if payload.len() != total {
        return Err(bad(format!(
            "IDX payload has {} bytes, header says {total}",
            payload.len()
        )));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

/// Multi-class rows with integer labels, row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRows {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub n_features: usize,
}

impl LabeledRows {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// Pairs an IDX image array with an IDX label array; pixels are scaled to `[0, 1]`.
pub fn idx_labeled_rows(images: &[u8], labels: &[u8]) -> Result<LabeledRows> {
    let images = parse_idx(images)?;
    let labels = parse_idx(labels)?;
    if labels.dims.len() != 1 {
        return Err(BilevelError::InvalidArgument(
            "IDX labels must be one-dimensional".into(),
        ));
    }
    if images.items() != labels.items() {
        return Err(BilevelError::DimensionMismatch {
            context: "IDX images vs labels",
            expected: labels.items(),
            actual: images.items(),
        });
    }
    let n_features = images.item_len();
    if n_features == 0 {
        return Err(BilevelError::InvalidArgument("IDX images have zero size".into()));
    }
    Ok(LabeledRows {
        features: images.data.iter().map(|&b| b as f64 / 255.0).collect(),
        labels: labels.data.iter().map(|&b| b as usize).collect(),
        n_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_and_without_header() {
        let a = parse_csv_dataset("label,f1,f2\n1,0.5,2\n0,1.5,-1\n").unwrap();
        let b = parse_csv_dataset("1,0.5,2\n-1,1.5,-1\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a.row(1), &[1.5, -1.0]);
        assert_eq!(a.labels(), &[1.0, -1.0]);
    }

    #[test]
    fn csv_label_two_is_parse_error_with_line() {
        let err = parse_csv_dataset("1,0.5\n-1,0.2\n2,0.1\n").unwrap_err();
        assert!(matches!(err, BilevelError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn csv_ragged_and_garbage_rows() {
        assert!(matches!(
            parse_csv_dataset("1,0.5,1\n1,0.5\n"),
            Err(BilevelError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_csv_dataset("1,0.5\n1,abc\n"),
            Err(BilevelError::Parse { line: 2, .. })
        ));
        assert!(parse_csv_dataset("").is_err());
        assert!(parse_csv_dataset("label,a\n").is_err());
    }

    #[test]
    fn split_contract() {
        let s = split_superset_subset(4, 4, 2, 7).unwrap();
        assert_eq!(s.superset.len(), 4);
        assert_eq!(s.subset.len(), 2);
        assert!(s.subset.iter().all(|i| s.superset.contains(i)));
        assert_eq!(s, split_superset_subset(4, 4, 2, 7).unwrap());

        let big = split_superset_subset(37_500, 30_000, 7_500, 1).unwrap();
        assert_eq!((big.superset.len(), big.subset.len()), (30_000, 7_500));

        assert!(split_superset_subset(4, 5, 2, 0).is_err());
        assert!(split_superset_subset(4, 2, 3, 0).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_logreg(3, 50, 2.0, 11).unwrap();
        let b = synth_logreg(3, 50, 2.0, 11).unwrap();
        let bytes = |d: &Dataset| d.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&synth_logreg(3, 50, 2.0, 12).unwrap()));
    }

    #[test]
    fn idx_round_trip() {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend_from_slice(&[0, 255, 51, 102]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 7];
        let rows = idx_labeled_rows(&img, &lab).unwrap();
        assert_eq!(rows.n_features, 2);
        assert_eq!(rows.row(0), &[0.0, 1.0]);
        assert_eq!(rows.row(1), &[0.2, 0.4]);
        assert_eq!(rows.labels, vec![3, 7]);
    }

    #[test]
    fn idx_rejects_bad_headers() {
        assert!(parse_idx(&[0, 0, 8]).is_err());
        assert!(parse_idx(&[1, 0, 8, 1, 0, 0, 0, 0]).is_err());
        assert!(parse_idx(&[0, 0, 9, 1, 0, 0, 0, 0]).is_err());
        assert!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2]).is_err());
        assert!(parse_idx(&[0, 0, 8, 2, 255, 255, 255, 255, 255, 255, 255, 255]).is_err());
        assert_eq!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 0]).unwrap().items(), 0);
    }
}
