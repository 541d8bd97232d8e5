//! Reduced words in the free group F_d and indexed balls of the Cayley graph.
//!
//! Generators are numbered `1..=2d`, with `i + d` the inverse of `i`. A word
//! stores its letters leftmost first, so `[i_m, ..., i_1]` is the product
//! `g_{i_m} ... g_{i_1}` and `i_1` is the first generator applied.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of elements a [`Ball`] may hold.
pub const DEFAULT_BALL_CAPACITY: usize = 30_000_000;

const NONE: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FreeGroupError {
    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),
    #[error("letter {letter} out of range for rank {d}")]
    InvalidLetter { letter: usize, d: usize },
    #[error("word is not reduced at position {0}")]
    NotReduced(usize),
    #[error("rank must be between 1 and 127, got {0}")]
    InvalidRank(usize),
    #[error("ball of rank {d} and radius {radius} has {size} elements, over the cap of {cap}")]
    Capacity { d: usize, radius: usize, size: u128, cap: usize },
}

/// Inverse generator index: `i <-> i + d`.
#[inline]
pub fn star(d: usize, i: usize) -> usize {
    debug_assert!(i >= 1 && i <= 2 * d);
    if i <= d {
        i + d
    } else {
        i - d
    }
}

/// Number of reduced words of length exactly `m`.
pub fn sphere_size(d: usize, m: usize) -> u128 {
    if m == 0 {
        1
    } else {
        let q = (2 * d - 1) as u128;
        (2 * d) as u128 * q.pow(m as u32 - 1)
    }
}

/// Number of reduced words of length at most `radius`.
pub fn ball_size(d: usize, radius: usize) -> u128 {
    (0..=radius).map(|m| sphere_size(d, m)).sum()
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReducedWord {
    d: usize,
    letters: Vec<u8>,
}

impl ReducedWord {
    pub fn unit(d: usize) -> Self {
        ReducedWord { d, letters: Vec::new() }
    }

    /// Builds a word from letters that must already be reduced.
    pub fn new(d: usize, letters: &[usize]) -> Result<Self, FreeGroupError> {
        check_rank(d)?;
        for (t, &l) in letters.iter().enumerate() {
            if l == 0 || l > 2 * d {
                return Err(FreeGroupError::InvalidLetter { letter: l, d });
            }
            if t > 0 && letters[t - 1] == star(d, l) {
                return Err(FreeGroupError::NotReduced(t));
            }
        }
        Ok(ReducedWord { d, letters: letters.iter().map(|&l| l as u8).collect() })
    }

    /// Reduces an arbitrary letter sequence.
    pub fn reduce(d: usize, letters: &[usize]) -> Result<Self, FreeGroupError> {
        check_rank(d)?;
        let mut out: Vec<u8> = Vec::with_capacity(letters.len());
        for &l in letters {
            if l == 0 || l > 2 * d {
                return Err(FreeGroupError::InvalidLetter { letter: l, d });
            }
            match out.last() {
                Some(&p) if p as usize == star(d, l) => {
                    out.pop();
                }
                _ => out.push(l as u8),
            }
        }
        Ok(ReducedWord { d, letters: out })
    }

    pub fn generator(d: usize, i: usize) -> Result<Self, FreeGroupError> {
        Self::new(d, &[i])
    }

    pub fn rank(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_unit(&self) -> bool {
        self.letters.is_empty()
    }

    /// Letters, leftmost first.
    pub fn letters(&self) -> Vec<usize> {
        self.letters.iter().map(|&l| l as usize).collect()
    }

    pub fn letter(&self, t: usize) -> usize {
        self.letters[t] as usize
    }

    /// The generator applied first (rightmost letter), if any.
    pub fn first_applied(&self) -> Option<usize> {
        self.letters.last().map(|&l| l as usize)
    }

    /// The generator applied last (leftmost letter), if any.
    pub fn last_applied(&self) -> Option<usize> {
        self.letters.first().map(|&l| l as usize)
    }

    pub fn inverse(&self) -> Self {
        let letters = self.letters.iter().rev().map(|&l| star(self.d, l as usize) as u8).collect();
        ReducedWord { d: self.d, letters }
    }

    /// Reduced form of `self * other`.
    pub fn concat_reduce(&self, other: &ReducedWord) -> Result<Self, FreeGroupError> {
        if self.d != other.d {
            return Err(FreeGroupError::RankMismatch(self.d, other.d));
        }
        let mut k = 0;
        let (a, b) = (&self.letters, &other.letters);
        while k < a.len() && k < b.len() && a[a.len() - 1 - k] as usize == star(self.d, b[k] as usize) {
            k += 1;
        }
        let mut letters = a[..a.len() - k].to_vec();
        letters.extend_from_slice(&b[k..]);
        Ok(ReducedWord { d: self.d, letters })
    }

    /// Left multiplication by a generator.
    pub fn left_mul(&self, i: usize) -> Self {
        let mut letters = Vec::with_capacity(self.letters.len() + 1);
        if self.letters.first().map(|&l| l as usize) == Some(star(self.d, i)) {
            letters.extend_from_slice(&self.letters[1..]);
        } else {
            letters.push(i as u8);
            letters.extend_from_slice(&self.letters);
        }
        ReducedWord { d: self.d, letters }
    }

    /// Splits the word at `pos` letters from the right: returns `(left, right)`
    /// with `self = left * right` and `right.len() == pos`.
    pub fn split_right(&self, pos: usize) -> (ReducedWord, ReducedWord) {
        let cut = self.letters.len() - pos;
        (
            ReducedWord { d: self.d, letters: self.letters[..cut].to_vec() },
            ReducedWord { d: self.d, letters: self.letters[cut..].to_vec() },
        )
    }
}

impl fmt::Debug for ReducedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for ReducedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "e");
        }
        let parts: Vec<String> = self.letters.iter().map(|l| l.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

fn check_rank(d: usize) -> Result<(), FreeGroupError> {
    if d == 0 || d > 127 {
        Err(FreeGroupError::InvalidRank(d))
    } else {
        Ok(())
    }
}

/// All reduced words of length `m` in length-then-lexicographic order.
pub fn sphere(d: usize, m: usize) -> Result<Vec<ReducedWord>, FreeGroupError> {
    sphere_capped(d, m, DEFAULT_BALL_CAPACITY)
}

pub fn sphere_capped(d: usize, m: usize, cap: usize) -> Result<Vec<ReducedWord>, FreeGroupError> {
    check_rank(d)?;
    let size = sphere_size(d, m);
    if size > cap as u128 {
        return Err(FreeGroupError::Capacity { d, radius: m, size, cap });
    }
    let mut words = vec![ReducedWord::unit(d)];
    for _ in 0..m {
        let mut next = Vec::with_capacity(words.len() * (2 * d));
        for i in 1..=2 * d {
            for w in &words {
                if w.last_applied() != Some(star(d, i)) {
                    let mut letters = Vec::with_capacity(w.len() + 1);
                    letters.push(i as u8);
                    letters.extend_from_slice(&w.letters);
                    next.push(ReducedWord { d, letters });
                }
            }
        }
        words = next;
    }
    Ok(words)
}

/// The ball `B_L` with a prefix-stable index and left-multiplication tables.
///
/// Index 0 is the unit; elements are ordered by length, then
/// lexicographically on their letters (leftmost first).
#[derive(Clone, Debug)]
pub struct Ball {
    d: usize,
    radius: usize,
    /// leftmost letter (0 for the unit)
    lead: Vec<u8>,
    /// rightmost letter (0 for the unit)
    root: Vec<u8>,
    /// index of the word with its leftmost letter removed
    tail: Vec<u32>,
    /// `left[idx * 2d + i - 1]`: index of `g_i * w`, or NONE outside the ball
    left: Vec<u32>,
    offsets: Vec<usize>,
}

impl Ball {
    pub fn new(d: usize, radius: usize) -> Result<Self, FreeGroupError> {
        Self::with_capacity(d, radius, DEFAULT_BALL_CAPACITY)
    }

    pub fn with_capacity(d: usize, radius: usize, cap: usize) -> Result<Self, FreeGroupError> {
        check_rank(d)?;
        let size = ball_size(d, radius);
        if size > cap as u128 || size >= NONE as u128 {
            return Err(FreeGroupError::Capacity { d, radius, size, cap });
        }
        let size = size as usize;
        let two_d = 2 * d;
        let mut lead = Vec::with_capacity(size);
        let mut root = Vec::with_capacity(size);
        let mut tail = Vec::with_capacity(size);
        let mut left = vec![NONE; size * two_d];
        let mut offsets = vec![0usize, 1];
        lead.push(0u8);
        root.push(0u8);
        tail.push(NONE);
        let mut prev = 0..1usize;
        for _m in 1..=radius {
            let start = lead.len();
            for i in 1..=two_d {
                let si = star(d, i) as u8;
                for w in prev.clone() {
                    if lead[w] == si {
                        continue;
                    }
                    let idx = lead.len();
                    lead.push(i as u8);
                    root.push(if w == 0 { i as u8 } else { root[w] });
                    tail.push(w as u32);
                    left[w * two_d + i - 1] = idx as u32;
                    left[idx * two_d + si as usize - 1] = w as u32;
                }
            }
            offsets.push(lead.len());
            prev = start..lead.len();
        }
        Ok(Ball { d, radius, lead, root, tail, left, offsets })
    }

    pub fn rank(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn size(&self) -> usize {
        self.lead.len()
    }

    /// Index range of the sphere of radius `m` (empty when `m > radius`).
    pub fn sphere_range(&self, m: usize) -> std::ops::Range<usize> {
        if m > self.radius {
            return self.size()..self.size();
        }
        self.offsets[m]..self.offsets[m + 1]
    }

    /// Word length of the element at `idx`.
    pub fn length(&self, idx: usize) -> usize {
        match self.offsets.binary_search(&idx) {
            Ok(m) => m,
            Err(m) => m - 1,
        }
    }

    /// Index of `g_i * w`, if it lies in the ball.
    #[inline]
    pub fn left_mul(&self, i: usize, idx: usize) -> Option<usize> {
        let v = self.left[idx * 2 * self.d + i - 1];
        if v == NONE {
            None
        } else {
            Some(v as usize)
        }
    }

    /// Leftmost letter of the element (0 for the unit).
    #[inline]
    pub fn lead(&self, idx: usize) -> usize {
        self.lead[idx] as usize
    }

    /// Rightmost letter, i.e. the generator applied first (0 for the unit).
    #[inline]
    pub fn root(&self, idx: usize) -> usize {
        self.root[idx] as usize
    }

    /// Index of the word with its leftmost letter removed.
    #[inline]
    pub fn tail(&self, idx: usize) -> Option<usize> {
        let t = self.tail[idx];
        if t == NONE {
            None
        } else {
            Some(t as usize)
        }
    }

    /// Index of `w`, in O(|w|); `None` when `|w|` exceeds the radius.
    pub fn index_of(&self, w: &ReducedWord) -> Option<usize> {
        if w.d != self.d || w.len() > self.radius {
            return None;
        }
        let mut idx = 0usize;
        for &l in w.letters.iter().rev() {
            idx = self.left_mul(l as usize, idx)?;
        }
        Some(idx)
    }

    pub fn word(&self, mut idx: usize) -> ReducedWord {
        let mut letters = Vec::new();
        while idx != 0 {
            letters.push(self.lead[idx]);
            idx = self.tail[idx] as usize;
        }
        ReducedWord { d: self.d, letters }
    }

    pub fn words(&self) -> impl Iterator<Item = ReducedWord> + '_ {
        (0..self.size()).map(move |i| self.word(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_reduce(d: usize, seq: &[usize]) -> Vec<usize> {
        let mut v = seq.to_vec();
        loop {
            let pos = (1..v.len()).find(|&t| v[t] == star(d, v[t - 1]));
            match pos {
                Some(t) => {
                    v.remove(t);
                    v.remove(t - 1);
                }
                None => return v,
            }
        }
    }

    #[test]
    fn concat_examples() {
        let a = ReducedWord::new(2, &[1, 3]);
        assert_eq!(a, Err(FreeGroupError::NotReduced(1)));
        let a = ReducedWord::new(2, &[1, 2]).unwrap();
        let b = ReducedWord::new(2, &[2]).unwrap();
        assert_eq!(a.concat_reduce(&b).unwrap().letters(), vec![1, 2, 2]);
        let g1 = ReducedWord::generator(2, 1).unwrap();
        let g3 = ReducedWord::generator(2, 3).unwrap();
        assert!(g1.concat_reduce(&g3).unwrap().is_unit());
        let x = ReducedWord::new(2, &[2, 1]).unwrap();
        let y = ReducedWord::new(2, &[3, 4]).unwrap();
        let expect = naive_reduce(2, &[2, 1, 3, 4]);
        assert_eq!(x.concat_reduce(&y).unwrap().letters(), expect);
        assert!(expect.is_empty());
        assert!(matches!(g1.concat_reduce(&ReducedWord::unit(3)), Err(FreeGroupError::RankMismatch(2, 3))));
    }

    #[test]
    fn sphere_and_ball_sizes() {
        assert_eq!(sphere(2, 0).unwrap().len(), 1);
        assert_eq!(sphere(2, 1).unwrap().len(), 4);
        assert_eq!(sphere(2, 2).unwrap().len(), 12);
        assert_eq!(sphere(3, 3).unwrap().len(), 150);
        assert_eq!(Ball::new(2, 2).unwrap().size(), 17);
        assert_eq!(Ball::new(2, 0).unwrap().size(), 1);
        let summed: usize = (0..=5).map(|m| sphere(2, m).unwrap().len()).sum();
        assert_eq!(summed, 485);
        assert_eq!(Ball::new(2, 5).unwrap().size(), 485);
    }

    #[test]
    fn ball_matches_spheres_and_lookup() {
        for d in 1..=3 {
            let ball = Ball::new(d, 4).unwrap();
            let mut idx = 0;
            for m in 0..=4 {
                let sph = sphere(d, m).unwrap();
                assert_eq!(ball.sphere_range(m).len(), sph.len());
                for w in sph {
                    assert_eq!(ball.word(idx), w);
                    assert_eq!(ball.index_of(&w), Some(idx));
                    assert_eq!(ball.length(idx), m);
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn sphere_is_sorted_and_distinct() {
        let s = sphere(2, 4).unwrap();
        for pair in s.windows(2) {
            assert!(pair[0].letters() < pair[1].letters());
        }
        for w in &s {
            assert_eq!(ReducedWord::reduce(2, &w.letters()).unwrap(), *w);
        }
    }

    #[test]
    fn prefix_stable() {
        let small = Ball::new(2, 3).unwrap();
        let big = Ball::new(2, 5).unwrap();
        for i in 0..small.size() {
            assert_eq!(small.word(i), big.word(i));
        }
    }

    #[test]
    fn left_mul_table() {
        let ball = Ball::new(3, 3).unwrap();
        for idx in 0..ball.size() {
            let w = ball.word(idx);
            for i in 1..=6 {
                let v = w.left_mul(i);
                assert_eq!(ball.left_mul(i, idx), ball.index_of(&v));
            }
            if idx > 0 {
                assert_eq!(ball.root(idx), w.first_applied().unwrap());
            }
        }
    }

    #[test]
    fn capacity_error() {
        assert!(matches!(Ball::with_capacity(3, 10, 1000), Err(FreeGroupError::Capacity { .. })));
    }

    fn word_strategy() -> impl Strategy<Value = (usize, Vec<usize>)> {
        (1usize..=3).prop_flat_map(|d| (Just(d), prop::collection::vec(1..=2 * d, 0..12)))
    }

    proptest! {
        #[test]
        fn reduce_matches_naive((d, seq) in word_strategy()) {
            let w = ReducedWord::reduce(d, &seq).unwrap();
            prop_assert_eq!(w.letters(), naive_reduce(d, &seq));
        }

        #[test]
        fn group_axioms((d, a) in word_strategy(), b in prop::collection::vec(1usize..=2, 0..8), c in prop::collection::vec(1usize..=2, 0..8)) {
            let x = ReducedWord::reduce(d, &a).unwrap();
            let y = ReducedWord::reduce(d, &b).unwrap();
            let z = ReducedWord::reduce(d, &c).unwrap();
            let e = ReducedWord::unit(d);
            prop_assert_eq!(x.concat_reduce(&e).unwrap(), x.clone());
            prop_assert!(x.inverse().concat_reduce(&x).unwrap().is_unit());
            prop_assert!(x.concat_reduce(&x.inverse()).unwrap().is_unit());
            let l = x.concat_reduce(&y).unwrap().concat_reduce(&z).unwrap();
            let r = x.concat_reduce(&y.concat_reduce(&z).unwrap()).unwrap();
            prop_assert_eq!(l, r);
        }
    }
}
