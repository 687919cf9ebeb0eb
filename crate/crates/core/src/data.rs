//! Training data: inputs, optional labels and the side information that
//! accompanies them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairTag {
    Similar,
    Dissimilar,
}

/// A pair of sample indices with a similarity tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIndex {
    pub i: usize,
    pub j: usize,
    pub tag: PairTag,
}

impl PairIndex {
    pub fn new(i: usize, j: usize, tag: PairTag) -> Result<Self> {
        if i == j {
            return Err(Error::InvalidInput(format!("pair ({i}, {j}) repeats an index")));
        }
        Ok(Self { i, j, tag })
    }
}

/// Side information attached to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum SideInfo {
    None,
    /// One vector per sample, aligned with `x`.
    PerSample(Vec<Vec<f64>>),
    /// One vector per transition `t -> t + 1`; length `x.len() - 1`.
    /// Encodes the forward change.
    Relative(Vec<Vec<f64>>),
    Pairwise(Vec<PairIndex>),
}

impl SideInfo {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SideInfo::None => "none",
            SideInfo::PerSample(_) => "per-sample",
            SideInfo::Relative(_) => "relative",
            SideInfo::Pairwise(_) => "pairwise",
        }
    }

    /// Dimension of the side vectors (0 for pairwise / none).
    pub fn dim(&self) -> usize {
        match self {
            SideInfo::PerSample(z) | SideInfo::Relative(z) => z.first().map_or(0, Vec::len),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    /// Binary labels encoded as 0.0 / 1.0.
    pub y: Option<Vec<f64>>,
    pub side: SideInfo,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Option<Vec<f64>>, side: SideInfo) -> Result<Self> {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged input rows".into()));
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "Dataset labels",
                    expected: n,
                    actual: y.len(),
                });
            }
            if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::InvalidInput("labels must be 0 or 1".into()));
            }
        }
        match &side {
            SideInfo::PerSample(z) if z.len() != n => {
                return Err(Error::DimensionMismatch {
                    context: "per-sample side information",
                    expected: n,
                    actual: z.len(),
                })
            }
            SideInfo::Relative(z) if z.len() + 1 != n => {
                return Err(Error::DimensionMismatch {
                    context: "relative side information (n - 1 transitions)",
                    expected: n.saturating_sub(1),
                    actual: z.len(),
                })
            }
            SideInfo::Pairwise(p) => {
                if let Some(bad) = p.iter().find(|p| p.i >= n || p.j >= n || p.i == p.j) {
                    return Err(Error::InvalidInput(format!(
                        "pair ({}, {}) out of range for {n} samples",
                        bad.i, bad.j
                    )));
                }
            }
            _ => {}
        }
        if let SideInfo::PerSample(z) | SideInfo::Relative(z) = &side {
            let k = z.first().map_or(0, Vec::len);
            if z.iter().any(|r| r.len() != k) {
                return Err(Error::InvalidInput("ragged side-information rows".into()));
            }
        }
        Ok(Self { x, y, side })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn labels(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("dataset has no labels".into()))
    }

    /// Number of side-information units (samples, transitions or pairs).
    pub fn side_units(&self) -> usize {
        match &self.side {
            SideInfo::None => 0,
            SideInfo::PerSample(z) | SideInfo::Relative(z) => z.len(),
            SideInfo::Pairwise(p) => p.len(),
        }
    }
}

/// A minibatch for a side objective, borrowing rows from a [`Dataset`].
#[derive(Debug, Clone)]
pub enum SideBatch<'a> {
    Samples {
        x: Vec<&'a [f64]>,
        z: Vec<&'a [f64]>,
        y: Option<Vec<f64>>,
    },
    Transitions {
        from: Vec<&'a [f64]>,
        to: Vec<&'a [f64]>,
        z: Vec<&'a [f64]>,
    },
    /// `pairs` index into `x`.
    Pairs { x: Vec<&'a [f64]>, pairs: Vec<PairIndex> },
}

impl<'a> SideBatch<'a> {
    /// Gather side units `units` (sample, transition or pair indices).
    pub fn gather(data: &'a Dataset, units: &[usize]) -> Result<Self> {
        match &data.side {
            SideInfo::None => Err(Error::InvalidInput("dataset has no side information".into())),
            SideInfo::PerSample(z) => Ok(SideBatch::Samples {
                x: units.iter().map(|&i| data.x[i].as_slice()).collect(),
                z: units.iter().map(|&i| z[i].as_slice()).collect(),
                y: data.y.as_ref().map(|y| units.iter().map(|&i| y[i]).collect()),
            }),
            SideInfo::Relative(z) => Ok(SideBatch::Transitions {
                from: units.iter().map(|&t| data.x[t].as_slice()).collect(),
                to: units.iter().map(|&t| data.x[t + 1].as_slice()).collect(),
                z: units.iter().map(|&t| z[t].as_slice()).collect(),
            }),
            SideInfo::Pairwise(all) => {
                // remap sample indices into a compact local batch
                let mut local: Vec<usize> = Vec::new();
                let slot = |i: usize, local: &mut Vec<usize>| match local.iter().position(|&k| k == i) {
                    Some(p) => p,
                    None => {
                        local.push(i);
                        local.len() - 1
                    }
                };
                let mut pairs = Vec::with_capacity(units.len());
                for &u in units {
                    let p = all[u];
                    let i = slot(p.i, &mut local);
                    let j = slot(p.j, &mut local);
                    pairs.push(PairIndex { i, j, tag: p.tag });
                }
                Ok(SideBatch::Pairs {
                    x: local.iter().map(|&i| data.x[i].as_slice()).collect(),
                    pairs,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SideBatch::Samples { x, .. } => x.len(),
            SideBatch::Transitions { from, .. } => from.len(),
            SideBatch::Pairs { pairs, .. } => pairs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Similar pairs between temporal neighbours and dissimilar pairs between
/// samples with different labels, the latter drawn from neighbours within
/// `window` steps.
pub fn pairs_from_sequence(y: &[f64], window: usize) -> Vec<PairIndex> {
    let mut pairs = Vec::new();
    for i in 0..y.len() {
        if i + 1 < y.len() {
            pairs.push(PairIndex {
                i,
                j: i + 1,
                tag: PairTag::Similar,
            });
        }
        for j in i + 1..(i + 1 + window).min(y.len()) {
            if y[i] != y[j] {
                pairs.push(PairIndex {
                    i,
                    j,
                    tag: PairTag::Dissimilar,
                });
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_misaligned_side_information() {
        let x = vec![vec![0.0]; 4];
        assert!(Dataset::new(x.clone(), None, SideInfo::PerSample(vec![vec![0.0]; 3])).is_err());
        assert!(Dataset::new(x.clone(), None, SideInfo::Relative(vec![vec![0.0]; 4])).is_err());
        assert!(Dataset::new(x.clone(), None, SideInfo::Relative(vec![vec![0.0]; 3])).is_ok());
        let bad = PairIndex {
            i: 0,
            j: 9,
            tag: PairTag::Similar,
        };
        assert!(Dataset::new(x.clone(), None, SideInfo::Pairwise(vec![bad])).is_err());
        assert!(Dataset::new(x, Some(vec![0.0, 1.0, 2.0, 0.0]), SideInfo::None).is_err());
        assert!(PairIndex::new(2, 2, PairTag::Similar).is_err());
    }

    #[test]
    fn gather_remaps_pairs() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let pairs = vec![
            PairIndex::new(4, 1, PairTag::Similar).unwrap(),
            PairIndex::new(1, 3, PairTag::Dissimilar).unwrap(),
        ];
        let data = Dataset::new(x, None, SideInfo::Pairwise(pairs)).unwrap();
        match SideBatch::gather(&data, &[0, 1]).unwrap() {
            SideBatch::Pairs { x, pairs } => {
                assert_eq!(x.len(), 3);
                for p in pairs {
                    assert_ne!(x[p.i], x[p.j]);
                }
                assert_eq!(x[0], &[4.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sequence_pairs() {
        let pairs = pairs_from_sequence(&[0.0, 0.0, 1.0], 2);
        let dis: Vec<_> = pairs.iter().filter(|p| p.tag == PairTag::Dissimilar).collect();
        assert_eq!(pairs.len(), 4);
        assert_eq!(dis.len(), 2);
    }
}
