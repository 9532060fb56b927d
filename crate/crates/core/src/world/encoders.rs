//! Deterministic synthetic text encoders.
//!
//! `pooled_encode` stands in for a pooled (CLIP-style) embedding:
//! each clause kind owns a fixed block of the vector, and a clause maps to
//! a column of a seed-fixed orthogonal matrix inside that block. Clause
//! contributions are summed, so the pooled difference of two prompts is
//! nonzero only in the blocks where they differ — the direction arithmetic
//! guidance relies on.
//!
//! `sequence_encode` stands in for a per-token (T5-style) embedding: one
//! token per clause from a seed-derived table, padded to a fixed length
//! with null positions. The null embedding itself is a model parameter,
//! so the encoder only marks which positions are null.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::world::prompt::{AttrKind, Clause, ToyPrompt};

pub const DEFAULT_D_POOL: usize = 32;
pub const DEFAULT_D_TOKEN: usize = 64;
/// Fixed text-sequence length; shorter prompts are padded with null tokens.
pub const N_TEXT: usize = 8;

/// Token matrix plus the mask of null (padding / unconditional) positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    /// `[N_TEXT × d_token]`, row-major; null rows are zero.
    pub data: Vec<f32>,
    pub d_token: usize,
    pub null_mask: [bool; N_TEXT],
}

impl TokenEmbeddings {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d_token..(i + 1) * self.d_token]
    }
}

/// Seed-fixed encoder pair.
pub struct Encoders {
    pub seed: u64,
    pub d_pool: usize,
    pub d_token: usize,
    /// Per-kind (block offset, orthogonal matrix columns).
    blocks: Vec<(usize, Vec<Vec<f32>>)>,
    /// Per-vocab-id token embedding.
    table: Vec<Vec<f32>>,
}

/// Orthonormalize the columns of a random n×n Gaussian matrix.
fn random_orthogonal(rng: &mut StreamRng, n: usize) -> Vec<Vec<f32>> {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.normal()).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            for k in 0..n {
                cols[i][k] -= dot * cols[j][k];
            }
        }
        let norm: f64 = cols[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in cols[i].iter_mut() {
            *v /= norm;
        }
    }
    cols.into_iter()
        .map(|c| c.into_iter().map(|v| v as f32).collect())
        .collect()
}

impl Encoders {
    pub fn new(seed: u64, d_pool: usize, d_token: usize) -> Result<Self> {
        let needed: usize = AttrKind::ALL.iter().map(|k| k.cardinality()).sum();
        if d_pool < needed {
            return Err(Error::Config(format!(
                "d_pool {d_pool} too small for the {needed}-dim block layout"
            )));
        }
        let mut rng = StreamRng::new(seed, crate::rng::StreamKind::Encoder);
        let mut blocks = Vec::new();
        let mut offset = 0;
        for kind in AttrKind::ALL {
            let n = kind.cardinality();
            blocks.push((offset, random_orthogonal(&mut rng, n)));
            offset += n;
        }
        let mut table = Vec::with_capacity(Clause::vocab_size());
        for _ in 0..Clause::vocab_size() {
            let tok: Vec<f32> = (0..d_token).map(|_| rng.normal() as f32).collect();
            table.push(tok);
        }
        let enc = Encoders {
            seed,
            d_pool,
            d_token,
            blocks,
            table,
        };
        enc.check_token_separation()?;
        Ok(enc)
    }

    /// Build-time sanity check: distinct vocabulary tokens must stay well
    /// separated (pairwise |cosine| < 0.5).
    fn check_token_separation(&self) -> Result<()> {
        for i in 0..self.table.len() {
            for j in (i + 1)..self.table.len() {
                let a = &self.table[i];
                let b = &self.table[j];
                let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
                let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
                let cos = dot / (na * nb);
                if cos.abs() >= 0.5 {
                    return Err(Error::Numeric(format!(
                        "token table degenerate: cos({i},{j}) = {cos}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Block layout: (offset, width) for each clause kind.
    pub fn block_of(&self, kind: AttrKind) -> (usize, usize) {
        let idx = AttrKind::ALL.iter().position(|&k| k == kind).unwrap();
        (self.blocks[idx].0, kind.cardinality())
    }

    /// Pooled embedding: sum of per-clause block columns. The zero vector is
    /// reserved for "no pooled conditioning" and is exactly what the empty
    /// prompt maps to.
    pub fn pooled_encode(&self, prompt: &ToyPrompt) -> Vec<f32> {
        let mut out = vec![0.0f32; self.d_pool];
        for clause in prompt.clauses() {
            let idx = AttrKind::ALL
                .iter()
                .position(|&k| k == clause.kind())
                .unwrap();
            let (offset, cols) = &self.blocks[idx];
            let col = &cols[clause.value_index()];
            for (o, &v) in out[*offset..*offset + col.len()].iter_mut().zip(col) {
                *o += v;
            }
        }
        out
    }

    /// Per-clause token sequence padded with null positions; the
    /// unconditional (empty) prompt is all null.
    pub fn sequence_encode(&self, prompt: &ToyPrompt) -> Result<TokenEmbeddings> {
        if prompt.len() > N_TEXT {
            return Err(Error::PromptLength {
                got: prompt.len(),
                limit: N_TEXT,
            });
        }
        let mut data = vec![0.0f32; N_TEXT * self.d_token];
        let mut null_mask = [true; N_TEXT];
        for (i, clause) in prompt.clauses().iter().enumerate() {
            data[i * self.d_token..(i + 1) * self.d_token]
                .copy_from_slice(&self.table[clause.vocab_id()]);
            null_mask[i] = false;
        }
        Ok(TokenEmbeddings {
            data,
            d_token: self.d_token,
            null_mask,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::prompt::ColorName;

    fn enc() -> Encoders {
        Encoders::new(7, DEFAULT_D_POOL, DEFAULT_D_TOKEN).unwrap()
    }

    #[test]
    fn empty_prompt_is_zero_vector() {
        let e = enc();
        assert_eq!(e.pooled_encode(&ToyPrompt::unconditional()), vec![0.0; 32]);
    }

    #[test]
    fn pooled_difference_touches_only_the_count_block() {
        let e = enc();
        let a = ToyPrompt::parse("count=3, color=red").unwrap();
        let b = ToyPrompt::parse("count=1, color=red").unwrap();
        let (pa, pb) = (e.pooled_encode(&a), e.pooled_encode(&b));
        let (off, width) = e.block_of(AttrKind::Count);
        let mut nonzero_in_block = false;
        for i in 0..e.d_pool {
            let d = pa[i] - pb[i];
            if (off..off + width).contains(&i) {
                nonzero_in_block |= d != 0.0;
            } else {
                assert_eq!(d, 0.0, "leak outside the count block at {i}");
            }
        }
        assert!(nonzero_in_block);
    }

    #[test]
    fn pooled_is_permutation_invariant() {
        let e = enc();
        let a = ToyPrompt::parse("count=2, color=blue, detail=textured").unwrap();
        let b = ToyPrompt::parse("detail=textured, count=2, color=blue").unwrap();
        let (pa, pb) = (e.pooled_encode(&a), e.pooled_encode(&b));
        assert_eq!(
            pa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            pb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pooled_block_columns_are_orthonormal() {
        let e = enc();
        for color in [ColorName::Red, ColorName::Green] {
            let p = ToyPrompt::new(vec![Clause::Color(color)]).clauses()[0];
            let v = e.pooled_encode(&ToyPrompt::new(vec![p]));
            let norm: f32 = v.iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-5, "norm {norm}");
        }
    }

    #[test]
    fn unconditional_sequence_is_all_null() {
        let e = enc();
        let t = e.sequence_encode(&ToyPrompt::unconditional()).unwrap();
        assert!(t.null_mask.iter().all(|&m| m));
        assert!(t.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sequence_encode_is_pure() {
        let e = enc();
        let p = ToyPrompt::parse("count=4, color=cyan, shape=circle").unwrap();
        assert_eq!(e.sequence_encode(&p).unwrap(), e.sequence_encode(&p).unwrap());
    }

    #[test]
    fn too_many_clauses_is_a_length_error() {
        let e = enc();
        let p = ToyPrompt::parse(
            "count=1, color=red, shape=circle, size=small, detail=plain, \
             filler=ambient, filler=backdrop, filler=framed, filler=moody",
        )
        .unwrap();
        assert_eq!(p.len(), 9);
        assert!(matches!(
            e.sequence_encode(&p),
            Err(crate::error::Error::PromptLength { got: 9, limit: 8 })
        ));
    }

    #[test]
    fn encoders_are_seed_reproducible() {
        let a = Encoders::new(7, 32, 64).unwrap();
        let b = Encoders::new(7, 32, 64).unwrap();
        let p = ToyPrompt::parse("count=5, color=magenta").unwrap();
        assert_eq!(a.pooled_encode(&p), b.pooled_encode(&p));
        assert_eq!(a.sequence_encode(&p).unwrap(), b.sequence_encode(&p).unwrap());
    }
}
