//! Growable bitset over dense message indices.
//!
//! Trailing zero words are always trimmed so equal sets hash equally no
//! matter how large the store was when they were built.

#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitSet {
    words: Vec<u64>,
}

impl std::fmt::Debug for BitSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl BitSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(i: usize) -> Self {
        let mut s = Self::new();
        s.insert(i);
        s
    }

    pub fn full(n: usize) -> Self {
        let mut words = vec![u64::MAX; n / 64];
        if !n.is_multiple_of(64) {
            words.push((1u64 << (n % 64)) - 1);
        }
        let mut s = Self { words };
        s.trim();
        s
    }

    fn trim(&mut self) {
        while self.words.last() == Some(&0) {
            self.words.pop();
        }
    }

    pub fn insert(&mut self, i: usize) {
        let w = i / 64;
        if w >= self.words.len() {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        let w = i / 64;
        if w < self.words.len() {
            self.words[w] &= !(1 << (i % 64));
            self.trim();
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words
            .get(i / 64)
            .is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    pub fn union_with(&mut self, other: &BitSet) {
        if other.words.len() > self.words.len() {
            self.words.resize(other.words.len(), 0);
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersect_with(&mut self, other: &BitSet) {
        self.words.truncate(other.words.len());
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
        self.trim();
    }

    pub fn difference_with(&mut self, other: &BitSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
        self.trim();
    }

    pub fn is_subset(&self, other: &BitSet) -> bool {
        self.words
            .iter()
            .enumerate()
            .all(|(i, w)| w & !other.words.get(i).copied().unwrap_or(0) == 0)
    }

    pub fn is_disjoint(&self, other: &BitSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

impl FromIterator<usize> for BitSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let mut s = BitSet::new();
        for i in iter {
            s.insert(i);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    proptest! {
        #[test]
        fn matches_btreeset(a in proptest::collection::vec(0usize..300, 0..40),
                            b in proptest::collection::vec(0usize..300, 0..40)) {
            let (sa, sb): (BTreeSet<_>, BTreeSet<_>) = (a.iter().copied().collect(), b.iter().copied().collect());
            let (ba, bb): (BitSet, BitSet) = (a.iter().copied().collect(), b.iter().copied().collect());
            let mut u = ba.clone(); u.union_with(&bb);
            prop_assert_eq!(u.iter().collect::<Vec<_>>(), sa.union(&sb).copied().collect::<Vec<_>>());
            let mut i = ba.clone(); i.intersect_with(&bb);
            prop_assert_eq!(i.iter().collect::<Vec<_>>(), sa.intersection(&sb).copied().collect::<Vec<_>>());
            let mut d = ba.clone(); d.difference_with(&bb);
            prop_assert_eq!(d.iter().collect::<Vec<_>>(), sa.difference(&sb).copied().collect::<Vec<_>>());
            prop_assert_eq!(ba.is_subset(&bb), sa.is_subset(&sb));
            prop_assert_eq!(ba.len(), sa.len());
            // canonical form: equal sets compare equal regardless of history
            let rebuilt: BitSet = d.iter().collect();
            prop_assert_eq!(rebuilt, d);
        }
    }

    #[test]
    fn full_has_exact_size() {
        assert_eq!(BitSet::full(0).len(), 0);
        assert_eq!(BitSet::full(64).len(), 64);
        assert_eq!(BitSet::full(70).iter().last(), Some(69));
    }
}
