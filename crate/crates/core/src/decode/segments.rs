use crate::error::{Error, Result};

/// Strictly increasing frame indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexList(Vec<usize>);

impl IndexList {
    pub fn new(mut idx: Vec<usize>) -> Self {
        idx.sort_unstable();
        idx.dedup();
        Self(idx)
    }

    /// Wraps indices that are already strictly increasing.
    pub fn from_sorted(idx: Vec<usize>) -> Result<Self> {
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("index list must be strictly increasing".into()));
        }
        Ok(Self(idx))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.0.binary_search(&t).is_ok()
    }

    pub fn union(&self, other: &IndexList) -> IndexList {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        IndexList::new(v)
    }

    /// Elements of `self` not in `other`.
    pub fn difference(&self, other: &IndexList) -> IndexList {
        IndexList(self.0.iter().copied().filter(|&t| !other.contains(t)).collect())
    }
}

/// Maximal runs of consecutive indices, in order.
pub type SegmentList = Vec<Vec<usize>>;

pub fn continuous_segments(idx: &IndexList) -> SegmentList {
    let mut out: SegmentList = Vec::new();
    for &t in idx.as_slice() {
        match out.last_mut() {
            Some(run) if *run.last().expect("non-empty run") + 1 == t => run.push(t),
            _ => out.push(vec![t]),
        }
    }
    out
}

/// Runs of length at least `min_len`.
pub fn filter_segs(segs: &SegmentList, min_len: usize) -> SegmentList {
    segs.iter().filter(|r| r.len() >= min_len).cloned().collect()
}

/// Longest run; the earliest wins ties. Empty when there are no runs.
pub fn longest_seg(segs: &SegmentList) -> Vec<usize> {
    let mut best: Option<&Vec<usize>> = None;
    for r in segs {
        if best.is_none_or(|b| r.len() > b.len()) {
            best = Some(r);
        }
    }
    best.cloned().unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn runs_by_definition() {
        let segs = continuous_segments(&IndexList::new(vec![1, 2, 3, 7, 8]));
        assert_eq!(segs, vec![vec![1, 2, 3], vec![7, 8]]);
        assert!(continuous_segments(&IndexList::default()).is_empty());
        assert_eq!(continuous_segments(&IndexList::new(vec![4])), vec![vec![4]]);
    }

    #[test]
    fn filtering() {
        let segs = vec![vec![1, 2], vec![5, 6, 7]];
        assert_eq!(filter_segs(&segs, 1), segs);
        assert_eq!(filter_segs(&segs, 3), vec![vec![5, 6, 7]]);
        assert!(filter_segs(&segs, 4).is_empty());
        assert_eq!(longest_seg(&segs), vec![5, 6, 7]);
        assert!(longest_seg(&vec![]).is_empty());
    }

    #[test]
    fn set_ops() {
        let a = IndexList::new(vec![5, 1, 3, 3]);
        assert_eq!(a.as_slice(), &[1, 3, 5]);
        let b = IndexList::new(vec![3, 4]);
        assert_eq!(a.difference(&b).as_slice(), &[1, 5]);
        assert_eq!(a.union(&b).as_slice(), &[1, 3, 4, 5]);
        assert!(IndexList::from_sorted(vec![1, 1]).is_err());
    }

    proptest! {
        #[test]
        fn runs_partition_the_indices(v in proptest::collection::vec(0usize..200, 0..80)) {
            let idx = IndexList::new(v);
            let segs = continuous_segments(&idx);
            let flat: Vec<usize> = segs.iter().flatten().copied().collect();
            prop_assert_eq!(&flat[..], idx.as_slice());
            for w in segs.windows(2) {
                prop_assert!(w[0].last().unwrap() + 1 < w[1][0]);
            }
            for r in &segs {
                prop_assert!(r.windows(2).all(|p| p[1] == p[0] + 1));
            }
        }
    }
}
