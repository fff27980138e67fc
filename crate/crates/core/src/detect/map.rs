//! Exhaustive maximum-likelihood detection.

use crate::channels::{ChannelModel, ReceivedSignal, SymbolVector};
use crate::error::{Error, Result};

use super::{check_len, Detector};

/// Largest hypothesis count `|𝒮|^K` searched.
pub const MAP_SEARCH_LIMIT: u128 = 1 << 20;

fn search_size(model: &ChannelModel) -> Result<usize> {
    let size = (model.constellation().len() as u128)
        .checked_pow(model.users() as u32)
        .unwrap_or(u128::MAX);
    if size > MAP_SEARCH_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: MAP_SEARCH_LIMIT,
        });
    }
    Ok(size as usize)
}

/// Visits every symbol vector in lexicographic index order (user 0 is the
/// most significant digit) and calls `f` with its log-likelihood.
pub(crate) fn for_each_hypothesis(
    model: &ChannelModel,
    y: &ReceivedSignal,
    mut f: impl FnMut(&[usize], f64),
) -> Result<()> {
    let size = search_size(model)?;
    let m = model.constellation().len();
    let k = model.users();
    let mut idx = vec![0usize; k];
    for _ in 0..size {
        let s = model.constellation().vector_from_indices(&idx);
        f(&idx, model.log_likelihood(y, &s)?);
        for d in (0..k).rev() {
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(())
}

/// `argmax_S log P(y | S)`, taking the lexicographically first maximizer.
pub fn map_detect(y: &ReceivedSignal, model: &ChannelModel) -> Result<SymbolVector> {
    check_len(y, model.antennas())?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_hypothesis(model, y, |idx, ll| {
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((idx.to_vec(), ll));
        }
    })?;
    let (idx, _) = best.expect("search space is nonempty");
    Ok(model.constellation().vector_from_indices(&idx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapDetector {
    model: ChannelModel,
}

impl MapDetector {
    pub fn new(model: &ChannelModel) -> Result<Self> {
        search_size(model)?;
        Ok(Self { model: model.clone() })
    }
}

impl Detector for MapDetector {
    fn detect(&self, y: &ReceivedSignal) -> Result<SymbolVector> {
        map_detect(y, &self.model)
    }
}
