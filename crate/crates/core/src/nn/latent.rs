//! Style codes and the operations on them.

use std::collections::BTreeSet;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Input of the generator: one style per image (`[n, d_w]`) or one per
/// synthesis layer (`[n, n_styles, d_w]`).
#[derive(Debug, Clone)]
pub enum Style {
    W(Tensor),
    WPlus(Tensor),
}

impl Style {
    pub fn batch(&self) -> usize {
        match self {
            Style::W(t) | Style::WPlus(t) => t.dim(0),
        }
    }

    pub fn d_w(&self) -> usize {
        match self {
            Style::W(t) => t.dim(1),
            Style::WPlus(t) => t.dim(2),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        match self {
            Style::W(t) | Style::WPlus(t) => t,
        }
    }

    /// Number of per-layer rows, `None` for a shared W code.
    pub fn n_styles(&self) -> Option<usize> {
        match self {
            Style::W(_) => None,
            Style::WPlus(t) => Some(t.dim(1)),
        }
    }

    /// Style row consumed by synthesis layer `j`, shaped `[n, d_w]`.
    pub fn layer(&self, j: usize) -> Tensor {
        match self {
            Style::W(t) => t.clone(),
            Style::WPlus(t) => t.narrow(1, j, 1).reshape(&[t.dim(0), t.dim(2)]),
        }
    }

    pub fn into_wplus(self, n_styles: usize) -> Result<Tensor> {
        match self {
            Style::W(t) => broadcast_w(&t, n_styles),
            Style::WPlus(t) => Ok(t),
        }
    }
}

/// Tiles `w: [n, d]` into `[n, n_styles, d]`.
pub fn broadcast_w(w: &Tensor, n_styles: usize) -> Result<Tensor> {
    if w.shape().len() != 2 {
        return Err(Error::Argument(format!("broadcast_w expects [n, d], got {:?}", w.shape())));
    }
    if n_styles == 0 {
        return Err(Error::Argument("n_styles must be >= 1".into()));
    }
    let (n, d) = (w.dim(0), w.dim(1));
    Ok(w.reshape(&[n, 1, d]).expand(&[n, n_styles, d]))
}

/// Row `j` of the result is `b[:, j]` when `j` is in `copy_indices`, else `a[:, j]`.
pub fn style_mix(a: &Tensor, b: &Tensor, copy_indices: &[usize]) -> Result<Tensor> {
    if a.shape() != b.shape() || a.shape().len() != 3 {
        return Err(Error::Argument(format!(
            "style_mix needs two [n, n_styles, d] codes of equal shape, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n_styles = a.dim(1);
    let copy: BTreeSet<usize> = copy_indices.iter().copied().collect();
    if let Some(&bad) = copy.iter().find(|&&j| j >= n_styles) {
        return Err(Error::Argument(format!("style index {bad} out of range 0..{n_styles}")));
    }
    let rows: Vec<Tensor> = (0..n_styles)
        .map(|j| if copy.contains(&j) { b.narrow(1, j, 1) } else { a.narrow(1, j, 1) })
        .collect();
    Ok(Tensor::cat(&rows, 1))
}

/// Parses `"7-11"`, `"3"`, `"1,4-5"` or `""` into sorted style indices.
pub fn parse_index_range(spec: &str) -> Result<Vec<usize>> {
    let mut out = BTreeSet::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Argument(format!("bad style range {part:?}"));
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().map_err(|_| bad())?;
                let hi: usize = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                out.extend(lo..=hi);
            }
            None => {
                out.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    Ok(out.into_iter().collect())
}
