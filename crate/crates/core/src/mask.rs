use serde::{Deserialize, Serialize};

/// Binary selection over source positions; `true` marks an extracted word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<u8>", into = "Vec<u8>")]
pub struct SummaryMask(Vec<bool>);

impl From<Vec<bool>> for SummaryMask {
    fn from(bits: Vec<bool>) -> Self {
        Self(bits)
    }
}

impl From<Vec<u8>> for SummaryMask {
    fn from(bits: Vec<u8>) -> Self {
        Self(bits.into_iter().map(|b| b != 0).collect())
    }
}

impl From<SummaryMask> for Vec<u8> {
    fn from(m: SummaryMask) -> Self {
        m.to_u8()
    }
}

impl SummaryMask {
    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    /// Mask whose bit `t` is bit `t` of `code` (position 0 = least significant).
    pub fn from_code(code: u64, len: usize) -> Self {
        Self((0..len).map(|t| (code >> t) & 1 == 1).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    /// Fraction of positions selected.
    pub fn ratio(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.0.len() as f64
        }
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// Maximal runs of selected positions as `[start, end)`.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (t, &b) in self.0.iter().enumerate() {
            match (b, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    out.push((s, t));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.0.len()));
        }
        out
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }

    /// Selected items of `items`, in order.
    pub fn apply<'a, T>(&'a self, items: &'a [T]) -> impl Iterator<Item = &'a T> + 'a {
        self.selected().map(move |i| &items[i])
    }
}
