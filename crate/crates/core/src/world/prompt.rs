//! Clause-based prompts over a fixed vocabulary.
//!
//! A prompt is a normalized list of `key=value` clauses. The canonical
//! string form round-trips: parsing it yields the same clause list, and
//! clause order is always normalized (sorted, exact duplicates dropped).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColorName {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

impl ColorName {
    pub const ALL: [ColorName; 6] = [
        ColorName::Red,
        ColorName::Green,
        ColorName::Blue,
        ColorName::Yellow,
        ColorName::Magenta,
        ColorName::Cyan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
            ColorName::Magenta => "magenta",
            ColorName::Cyan => "cyan",
        }
    }

    /// Channel values in the signed [−1, 1] raster convention.
    pub fn rgb_signed(self) -> [f32; 3] {
        match self {
            ColorName::Red => [1.0, -1.0, -1.0],
            ColorName::Green => [-1.0, 1.0, -1.0],
            ColorName::Blue => [-1.0, -1.0, 1.0],
            ColorName::Yellow => [1.0, 1.0, -1.0],
            ColorName::Magenta => [1.0, -1.0, 1.0],
            ColorName::Cyan => [-1.0, 1.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Circle,
    Square,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 2] = [ShapeKind::Circle, ShapeKind::Square];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
        }
    }

    pub fn index(self) -> usize {
        match self {
            ShapeKind::Circle => 0,
            ShapeKind::Square => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeKind {
    Small,
    Large,
}

impl SizeKind {
    pub const ALL: [SizeKind; 2] = [SizeKind::Small, SizeKind::Large];

    pub fn name(self) -> &'static str {
        match self {
            SizeKind::Small => "small",
            SizeKind::Large => "large",
        }
    }

    pub fn index(self) -> usize {
        match self {
            SizeKind::Small => 0,
            SizeKind::Large => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Toy analogue of the quality/complexity axis: a textured shape carries a
/// fixed high-frequency pattern, a plain one is flat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetailKind {
    Plain,
    Textured,
}

impl DetailKind {
    pub const ALL: [DetailKind; 2] = [DetailKind::Plain, DetailKind::Textured];

    pub fn name(self) -> &'static str {
        match self {
            DetailKind::Plain => "plain",
            DetailKind::Textured => "textured",
        }
    }

    pub fn index(self) -> usize {
        match self {
            DetailKind::Plain => 0,
            DetailKind::Textured => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Semantically empty words used to pad prompts out; they describe nothing
/// about the scene and exist to vary prompt length.
pub const FILLER_WORDS: [&str; 8] = [
    "ambient", "backdrop", "framed", "moody", "muted", "scenic", "staged", "toned",
];

/// One `key=value` clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Clause {
    Count(u8),
    Color(ColorName),
    Shape(ShapeKind),
    Size(SizeKind),
    Detail(DetailKind),
    Filler(u8),
}

/// Clause families, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttrKind {
    Count,
    Color,
    Shape,
    Size,
    Detail,
    Filler,
}

impl AttrKind {
    pub const ALL: [AttrKind; 6] = [
        AttrKind::Count,
        AttrKind::Color,
        AttrKind::Shape,
        AttrKind::Size,
        AttrKind::Detail,
        AttrKind::Filler,
    ];

    /// Number of distinct values the kind can take.
    pub fn cardinality(self) -> usize {
        match self {
            AttrKind::Count => 5,
            AttrKind::Color => 6,
            AttrKind::Shape => 2,
            AttrKind::Size => 2,
            AttrKind::Detail => 2,
            AttrKind::Filler => FILLER_WORDS.len(),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            AttrKind::Count => "count",
            AttrKind::Color => "color",
            AttrKind::Shape => "shape",
            AttrKind::Size => "size",
            AttrKind::Detail => "detail",
            AttrKind::Filler => "filler",
        }
    }
}

impl Clause {
    pub fn kind(self) -> AttrKind {
        match self {
            Clause::Count(_) => AttrKind::Count,
            Clause::Color(_) => AttrKind::Color,
            Clause::Shape(_) => AttrKind::Shape,
            Clause::Size(_) => AttrKind::Size,
            Clause::Detail(_) => AttrKind::Detail,
            Clause::Filler(_) => AttrKind::Filler,
        }
    }

    /// Index of the value within its kind, for one-hot encodings.
    pub fn value_index(self) -> usize {
        match self {
            Clause::Count(n) => (n - 1) as usize,
            Clause::Color(c) => c.index(),
            Clause::Shape(s) => s.index(),
            Clause::Size(s) => s.index(),
            Clause::Detail(d) => d.index(),
            Clause::Filler(i) => i as usize,
        }
    }

    /// Dense id over the whole vocabulary, used by the token table.
    pub fn vocab_id(self) -> usize {
        let mut base = 0;
        for kind in AttrKind::ALL {
            if kind == self.kind() {
                return base + self.value_index();
            }
            base += kind.cardinality();
        }
        unreachable!()
    }

    pub fn vocab_size() -> usize {
        AttrKind::ALL.iter().map(|k| k.cardinality()).sum()
    }

    fn parse(part: &str) -> Result<Clause> {
        let bad = || Error::Vocabulary(part.trim().to_string());
        let (key, value) = part.trim().split_once('=').ok_or_else(bad)?;
        match key.trim() {
            "count" => {
                let n: u8 = value.trim().parse().map_err(|_| bad())?;
                if !(1..=5).contains(&n) {
                    return Err(bad());
                }
                Ok(Clause::Count(n))
            }
            "color" => ColorName::parse(value.trim()).map(Clause::Color).ok_or_else(bad),
            "shape" => match value.trim() {
                "circle" => Ok(Clause::Shape(ShapeKind::Circle)),
                "square" => Ok(Clause::Shape(ShapeKind::Square)),
                _ => Err(bad()),
            },
            "size" => match value.trim() {
                "small" => Ok(Clause::Size(SizeKind::Small)),
                "large" => Ok(Clause::Size(SizeKind::Large)),
                _ => Err(bad()),
            },
            "detail" => match value.trim() {
                "plain" => Ok(Clause::Detail(DetailKind::Plain)),
                "textured" => Ok(Clause::Detail(DetailKind::Textured)),
                _ => Err(bad()),
            },
            "filler" => {
                let i = FILLER_WORDS
                    .iter()
                    .position(|w| *w == value.trim())
                    .ok_or_else(bad)?;
                Ok(Clause::Filler(i as u8))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Count(n) => write!(f, "count={n}"),
            Clause::Color(c) => write!(f, "color={}", c.name()),
            Clause::Shape(s) => write!(f, "shape={}", s.name()),
            Clause::Size(s) => write!(f, "size={}", s.name()),
            Clause::Detail(d) => write!(f, "detail={}", d.name()),
            Clause::Filler(i) => write!(f, "filler={}", FILLER_WORDS[*i as usize]),
        }
    }
}

/// A normalized clause list. The empty prompt is the unconditional prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ToyPrompt {
    clauses: Vec<Clause>,
}

impl ToyPrompt {
    /// Normalizes: sorts into canonical order and drops exact duplicates.
    pub fn new(mut clauses: Vec<Clause>) -> Self {
        clauses.sort();
        clauses.dedup();
        ToyPrompt { clauses }
    }

    /// The unconditional prompt: zero clauses.
    pub fn unconditional() -> Self {
        ToyPrompt { clauses: Vec::new() }
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// First clause of the given kind, if present.
    pub fn get(&self, kind: AttrKind) -> Option<Clause> {
        self.clauses.iter().copied().find(|c| c.kind() == kind)
    }

    pub fn with(&self, clause: Clause) -> Self {
        let mut c = self.clauses.clone();
        c.push(clause);
        ToyPrompt::new(c)
    }

    pub fn without(&self, kind: AttrKind) -> Self {
        ToyPrompt {
            clauses: self
                .clauses
                .iter()
                .copied()
                .filter(|c| c.kind() != kind)
                .collect(),
        }
    }

    /// Canonical comma-separated form; empty string for unconditional.
    pub fn canonical(&self) -> String {
        self.clauses
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Parses a canonical (or any clause-list) string. Whitespace around
    /// separators is ignored; unknown keys or values are vocabulary errors.
    pub fn parse(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Ok(Self::unconditional());
        }
        let mut clauses = Vec::new();
        for part in trimmed.split(',') {
            if part.trim().is_empty() {
                return Err(Error::Vocabulary(part.to_string()));
            }
            clauses.push(Clause::parse(part)?);
        }
        Ok(Self::new(clauses))
    }
}

impl fmt::Display for ToyPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trips() {
        let p = ToyPrompt::parse("detail=textured, count=3, color=red").unwrap();
        let s = p.canonical();
        assert_eq!(s, "count=3, color=red, detail=textured");
        assert_eq!(ToyPrompt::parse(&s).unwrap(), p);
    }

    #[test]
    fn order_is_normalized_and_duplicates_drop() {
        let a = ToyPrompt::parse("color=red, count=2").unwrap();
        let b = ToyPrompt::parse("count=2, color=red, count=2").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_clause_is_vocabulary_error() {
        let err = ToyPrompt::parse("flavor=sweet").unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)), "{err}");
        assert!(ToyPrompt::parse("count=9").is_err());
        assert!(ToyPrompt::parse("color=maroon").is_err());
    }

    #[test]
    fn empty_prompt_is_unconditional() {
        let p = ToyPrompt::parse("").unwrap();
        assert!(p.is_empty());
        assert_eq!(p.canonical(), "");
    }

    #[test]
    fn vocab_ids_are_dense_and_unique() {
        let mut seen = std::collections::HashSet::new();
        let mut all = Vec::new();
        for n in 1..=5 {
            all.push(Clause::Count(n));
        }
        for c in ColorName::ALL {
            all.push(Clause::Color(c));
        }
        for s in ShapeKind::ALL {
            all.push(Clause::Shape(s));
        }
        for s in SizeKind::ALL {
            all.push(Clause::Size(s));
        }
        for d in DetailKind::ALL {
            all.push(Clause::Detail(d));
        }
        for i in 0..FILLER_WORDS.len() {
            all.push(Clause::Filler(i as u8));
        }
        assert_eq!(all.len(), Clause::vocab_size());
        for c in all {
            assert!(c.vocab_id() < Clause::vocab_size());
            assert!(seen.insert(c.vocab_id()));
        }
    }
}
