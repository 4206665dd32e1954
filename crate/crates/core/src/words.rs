//! Symbols `(Q, j)`, finite words and their integer planar geometry.
//!
//! A word is stored most-significant letter first. Its planar square at level
//! `n` is given by integer coordinates at scale `Lⁿ`, so gluing decisions never
//! depend on floating point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CarpetError, Result};
use crate::pattern::{PilingPattern, SquareIsometry};

/// A letter `(Q, j)`: a non-vanishing grid cell and a sheet index on it.
///
/// Ordering is lexicographic in `(column, row, sheet)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Symbol {
    pub cell: (usize, usize),
    pub sheet: u32,
}

impl Symbol {
    pub fn new(c: usize, r: usize, sheet: u32) -> Self {
        Self { cell: (c, r), sheet }
    }

    pub fn is_valid_for(&self, p: &PilingPattern) -> bool {
        let (c, r) = self.cell;
        c < p.side() && r < p.side() && self.sheet < p.get(c, r)
    }
}

/// A finite word `w₁w₂…wₙ`; the empty word addresses the whole carpet.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Word {
    pub letters: Vec<Symbol>,
}

impl Word {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(letters: Vec<Symbol>) -> Self {
        Self { letters }
    }

    /// The word `letter^n`.
    pub fn repeat(letter: Symbol, n: usize) -> Self {
        Self { letters: vec![letter; n] }
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    /// The length-`(n-1)` prefix `w⁻`.
    pub fn parent(&self) -> Option<Word> {
        if self.letters.is_empty() {
            None
        } else {
            Some(Word::new(self.letters[..self.letters.len() - 1].to_vec()))
        }
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = self.letters.clone();
        letters.extend_from_slice(&other.letters);
        Word { letters }
    }

    pub fn validate(&self, p: &PilingPattern) -> Result<()> {
        match self.letters.iter().find(|s| !s.is_valid_for(p)) {
            None => Ok(()),
            Some(s) => Err(CarpetError::Domain(format!(
                "symbol ({},{},{}) is not a letter of the pattern",
                s.cell.0, s.cell.1, s.sheet
            ))),
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.letters.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{},{},{}", s.cell.0, s.cell.1, s.sheet)?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = CarpetError;

    /// Parses the export form `"c,r,j|c,r,j|..."`; the empty string is the empty word.
    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(Word::empty());
        }
        let mut letters = Vec::new();
        for (k, part) in s.split('|').enumerate() {
            let nums: std::result::Result<Vec<u64>, _> = part.split(',').map(str::parse).collect();
            match nums.as_deref() {
                Ok([c, r, j]) => letters.push(Symbol::new(*c as usize, *r as usize, *j as u32)),
                _ => {
                    return Err(CarpetError::Parse {
                        line: 1,
                        column: k + 1,
                        msg: format!("bad letter `{part}`, expected c,r,j"),
                    })
                }
            }
        }
        Ok(Word { letters })
    }
}

/// The planar square `Q_ŵ` of a level-`n` word, scaled by `Lⁿ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellRect {
    pub level: usize,
    /// Lower-left corner, integer coordinates at scale `Lⁿ`.
    pub a: u64,
    pub b: u64,
}

impl CellRect {
    pub fn corner(&self, i: usize) -> (u64, u64) {
        let (a, b) = (self.a, self.b);
        match i {
            0 => (a, b),
            1 => (a + 1, b),
            2 => (a + 1, b + 1),
            _ => (a, b + 1),
        }
    }
}

/// `Lⁿ`, failing on overflow.
pub fn scale(side: usize, n: usize) -> Result<u64> {
    (side as u64)
        .checked_pow(n as u32)
        .ok_or_else(|| CarpetError::Domain(format!("scale {side}^{n} overflows")))
}

/// Positional formula `a = Σ cᵢ L^{n−i}`, `b = Σ rᵢ L^{n−i}`; sheets are ignored.
pub fn planar_square(w: &Word, side: usize) -> CellRect {
    let l = side as u64;
    let (mut a, mut b) = (0u64, 0u64);
    for s in &w.letters {
        a = a * l + s.cell.0 as u64;
        b = b * l + s.cell.1 as u64;
    }
    CellRect { level: w.len(), a, b }
}

/// Lattice coordinates of corner `p_i` of the cell of `w`, at scale `Lⁿ`.
pub fn corner_coord(w: &Word, i: usize, side: usize) -> Result<(u64, u64)> {
    if i > 3 {
        return Err(CarpetError::Domain(format!("corner index {i} not in 0..=3")));
    }
    Ok(planar_square(w, side).corner(i))
}

/// The word `τₙ(w)`: each letter's cell mapped by `g`, sheets kept.
pub fn apply_isometry_word(g: &SquareIsometry, w: &Word, p: &PilingPattern) -> Result<Word> {
    let l = p.side() as u64;
    let letters = w
        .letters
        .iter()
        .map(|s| {
            let (c, r) = g.apply_cell_unchecked((s.cell.0 as u64, s.cell.1 as u64), l);
            let image = Symbol::new(c as usize, r as usize, s.sheet);
            if image.is_valid_for(p) {
                Ok(image)
            } else {
                Err(CarpetError::Symmetry(format!(
                    "{g} maps ({},{},{}) to ({c},{r},{}), which is not a letter",
                    s.cell.0, s.cell.1, s.sheet, s.sheet
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Word { letters })
}

/// The sorted alphabet `S` of a pattern, with word <-> integer encoding.
///
/// Word ids are base-`#S` numbers with the first letter most significant, so
/// numeric order on ids of equal length is lexicographic order on words.
#[derive(Clone, Debug)]
pub struct Alphabet {
    symbols: Vec<Symbol>,
    side: usize,
    /// `index[(c * L + r)]` = index of `(c, r, 0)`; sheets are consecutive.
    first_index: Vec<Option<usize>>,
}

impl Alphabet {
    pub fn new(p: &PilingPattern) -> Self {
        let side = p.side();
        let mut symbols = Vec::new();
        let mut first_index = vec![None; side * side];
        for (c, r) in p.nonvanish() {
            first_index[c * side + r] = Some(symbols.len());
            for j in 0..p.get(c, r) {
                symbols.push(Symbol::new(c, r, j));
            }
        }
        Self { symbols, side, first_index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> Symbol {
        self.symbols[index]
    }

    pub fn index_of(&self, s: &Symbol) -> Option<usize> {
        let (c, r) = s.cell;
        if c >= self.side || r >= self.side {
            return None;
        }
        let first = self.first_index[c * self.side + r]?;
        let idx = first + s.sheet as usize;
        (idx < self.symbols.len() && self.symbols[idx] == *s).then_some(idx)
    }

    pub fn encode(&self, w: &Word) -> Result<u64> {
        let base = self.symbols.len() as u64;
        w.letters.iter().try_fold(0u64, |acc, s| {
            let idx = self.index_of(s).ok_or_else(|| {
                CarpetError::Lookup(format!(
                    "symbol ({},{},{}) not in alphabet",
                    s.cell.0, s.cell.1, s.sheet
                ))
            })?;
            Ok(acc * base + idx as u64)
        })
    }

    pub fn decode(&self, mut id: u64, len: usize) -> Word {
        let base = self.symbols.len() as u64;
        let mut letters = vec![self.symbols[0]; len];
        for slot in letters.iter_mut().rev() {
            *slot = self.symbols[(id % base) as usize];
            id /= base;
        }
        Word { letters }
    }
}
