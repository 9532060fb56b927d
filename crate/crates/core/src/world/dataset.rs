//! Procedural dataset sampling and the binary split format.
//!
//! A split file is a header record followed by fixed-size records: the
//! scene fields as little-endian u32 integers and the image as raw
//! little-endian f32. Prompts are not stored; the filler clauses attached
//! to each item are re-derived from the header seed, so a loaded split is
//! identical to the freshly sampled one.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{StreamKind, StreamRng};
use crate::world::prompt::{Clause, ColorName, DetailKind, ShapeKind, SizeKind, ToyPrompt};
use crate::world::scene::{render_scene, Image, ToyScene, CELLS_PER_SIDE, IMG_LEN, MAX_COUNT};

const MAGIC: &[u8; 4] = b"MLT0";
const VERSION: u32 = 1;
const NO_CELL: u32 = u32::MAX;
/// Hard cap on the declared item count while parsing untrusted files.
const MAX_ITEMS: u64 = 10_000_000;

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub scene: ToyScene,
    pub prompt: ToyPrompt,
    pub image: Image,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub seed: u64,
    pub encoder_seed: u64,
    pub resolution: u32,
    pub items: Vec<DatasetItem>,
}

fn random_scene(rng: &mut StreamRng) -> ToyScene {
    let count = 1 + rng.below_usize(MAX_COUNT) as u8;
    let cells = rng.distinct(CELLS_PER_SIDE * CELLS_PER_SIDE, count as usize);
    ToyScene {
        kind: ShapeKind::ALL[rng.below_usize(2)],
        count,
        color: ColorName::ALL[rng.below_usize(6)],
        positions: cells
            .iter()
            .map(|&i| ((i / CELLS_PER_SIDE) as u8, (i % CELLS_PER_SIDE) as u8))
            .collect(),
        size: SizeKind::ALL[rng.below_usize(2)],
        detail: DetailKind::ALL[rng.below_usize(2)],
    }
}

/// Filler clauses for item `index`, derived from the dataset seed alone so
/// prompts survive a save/load round trip. Half of all prompts get one to
/// three redundant filler clauses; that spread of prompt lengths is what
/// the pooled-ablation study varies over.
fn filler_for_item(seed: u64, index: u64) -> Vec<Clause> {
    let mut rng = StreamRng::from_seed(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    if !rng.coin(0.5) {
        return Vec::new();
    }
    let k = 1 + rng.below_usize(3);
    rng.distinct(crate::world::prompt::FILLER_WORDS.len(), k)
        .into_iter()
        .map(|i| Clause::Filler(i as u8))
        .collect()
}

fn prompt_for(scene: &ToyScene, seed: u64, index: u64) -> ToyPrompt {
    let mut clauses = scene.describe().clauses().to_vec();
    clauses.extend(filler_for_item(seed, index));
    ToyPrompt::new(clauses)
}

/// Uniform sample over the scene space; every prompt faithfully describes
/// its scene, plus derived filler.
pub fn sample_dataset(seed: u64, size: usize, encoder_seed: u64) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let mut rng = StreamRng::new(seed, StreamKind::Data);
    let mut items = Vec::with_capacity(size);
    for i in 0..size {
        let scene = random_scene(&mut rng);
        let image = render_scene(&scene)?;
        let prompt = prompt_for(&scene, seed, i as u64);
        items.push(DatasetItem {
            scene,
            prompt,
            image,
        });
    }
    Ok(Dataset {
        seed,
        encoder_seed,
        resolution: crate::world::scene::RESOLUTION as u32,
        items,
    })
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.items.len() * (40 + IMG_LEN * 4));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.encoder_seed.to_le_bytes());
        out.extend_from_slice(&(self.items.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.resolution.to_le_bytes());
        for item in &self.items {
            let s = &item.scene;
            for v in [
                s.kind.index() as u32,
                s.count as u32,
                s.color.index() as u32,
                s.size.index() as u32,
                s.detail.index() as u32,
            ] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for slot in 0..MAX_COUNT {
                let v = s
                    .positions
                    .get(slot)
                    .map(|&(r, c)| (r as u32) * CELLS_PER_SIDE as u32 + c as u32)
                    .unwrap_or(NO_CELL);
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &px in &item.image.data {
                out.extend_from_slice(&px.to_le_bytes());
            }
        }
        out
    }

    /// Strict parser for the split format; every field is validated so
    /// corrupt or hostile input fails cleanly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Dataset("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Dataset(format!("unsupported version {version}")));
        }
        let seed = r.u64()?;
        let encoder_seed = r.u64()?;
        let count = r.u64()?;
        let resolution = r.u32()?;
        if resolution as usize != crate::world::scene::RESOLUTION {
            return Err(Error::Dataset(format!("unsupported resolution {resolution}")));
        }
        if count == 0 || count > MAX_ITEMS {
            return Err(Error::Dataset(format!("implausible item count {count}")));
        }
        let record = 40 + IMG_LEN * 4;
        let remaining = bytes.len() - r.pos;
        if remaining != count as usize * record {
            return Err(Error::Dataset(format!(
                "payload is {remaining} bytes, expected {} for {count} records",
                count as usize * record
            )));
        }
        let mut items = Vec::with_capacity(count as usize);
        for index in 0..count {
            let kind = ShapeKind::from_index(r.u32()? as usize)
                .ok_or_else(|| Error::Dataset("bad shape kind".into()))?;
            let n = r.u32()?;
            if !(1..=MAX_COUNT as u32).contains(&n) {
                return Err(Error::Dataset(format!("bad count {n}")));
            }
            let color = ColorName::from_index(r.u32()? as usize)
                .ok_or_else(|| Error::Dataset("bad color".into()))?;
            let size = SizeKind::from_index(r.u32()? as usize)
                .ok_or_else(|| Error::Dataset("bad size".into()))?;
            let detail = DetailKind::from_index(r.u32()? as usize)
                .ok_or_else(|| Error::Dataset("bad detail".into()))?;
            let mut positions = Vec::new();
            for slot in 0..MAX_COUNT {
                let v = r.u32()?;
                if (slot as u32) < n {
                    if v >= (CELLS_PER_SIDE * CELLS_PER_SIDE) as u32 {
                        return Err(Error::Dataset(format!("bad cell {v}")));
                    }
                    positions.push((
                        (v / CELLS_PER_SIDE as u32) as u8,
                        (v % CELLS_PER_SIDE as u32) as u8,
                    ));
                } else if v != NO_CELL {
                    return Err(Error::Dataset("unused position slot not empty".into()));
                }
            }
            let mut data = Vec::with_capacity(IMG_LEN);
            for _ in 0..IMG_LEN {
                let v = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::Dataset("non-finite pixel".into()));
                }
                data.push(v);
            }
            let scene = ToyScene {
                kind,
                count: n as u8,
                color,
                positions,
                size,
                detail,
            };
            scene
                .validate()
                .map_err(|e| Error::Dataset(format!("record {index}: {e}")))?;
            let prompt = prompt_for(&scene, seed, index);
            items.push(DatasetItem {
                scene,
                prompt,
                image: Image { data },
            });
        }
        Ok(Dataset {
            seed,
            encoder_seed,
            resolution,
            items,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Dataset> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Dataset("truncated file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
