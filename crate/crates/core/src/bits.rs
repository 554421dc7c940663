//! Fixed-length bitsets over the points of a dataset.
//!
//! Every proposition and every (partial) formula is evaluated to one mask
//! over the training points, so agreement with the target is a handful of
//! word-wide Boolean operations followed by a popcount.

use std::fmt;

const WORD: usize = u64::BITS as usize;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bits {
    len: usize,
    words: Vec<u64>,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Bits {
            len,
            words: vec![0; len.div_ceil(WORD)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Bits {
            len,
            words: vec![!0; len.div_ceil(WORD)],
        };
        b.trim();
        b
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut b = Bits::zeros(len);
        for i in 0..len {
            if f(i) {
                b.set(i);
            }
        }
        b
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / WORD] |= 1 << (i % WORD);
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn fill(&mut self, value: bool) {
        let w = if value { !0 } else { 0 };
        self.words.iter_mut().for_each(|x| *x = w);
        self.trim();
    }

    pub fn copy_from(&mut self, other: &Bits) {
        debug_assert_eq!(self.len, other.len);
        self.words.copy_from_slice(&other.words);
    }

    pub fn not_assign(&mut self) {
        self.words.iter_mut().for_each(|w| *w = !*w);
        self.trim();
    }

    pub fn and_assign(&mut self, other: &Bits) {
        zip_assign(&mut self.words, &other.words, |a, b| a & b);
    }

    pub fn or_assign(&mut self, other: &Bits) {
        zip_assign(&mut self.words, &other.words, |a, b| a | b);
    }

    pub fn is_subset(&self, other: &Bits) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    /// Number of positions where `self` and `other` agree.
    pub fn count_agree(&self, other: &Bits) -> u64 {
        let full = self.len as u64;
        full - self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a ^ b).count_ones()))
            .sum::<u64>()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    fn trim(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

#[inline]
fn zip_assign(dst: &mut [u64], src: &[u64], f: impl Fn(u64, u64) -> u64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d = f(*d, *s);
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        write!(f, "Bits({s})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_are_trimmed_to_length() {
        let b = Bits::ones(70);
        assert_eq!(b.count_ones(), 70);
        let mut n = b.clone();
        n.not_assign();
        assert_eq!(n.count_ones(), 0);
    }

    #[test]
    fn agreement_and_subset() {
        let a = Bits::from_fn(5, |i| i < 2);
        let b = Bits::from_fn(5, |i| i < 3);
        assert!(a.is_subset(&b));
        assert!(!b.is_subset(&a));
        assert_eq!(a.count_agree(&b), 4);
        assert_eq!(a.iter_ones().collect::<Vec<_>>(), vec![0, 1]);
    }
}
