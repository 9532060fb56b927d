//! Scenes, the raster renderer, and the oracle detector.
//!
//! The detector is the acceptance oracle for everything downstream: a
//! generated image is graded by connected components over a color-distance
//! threshold, dominant-color voting against the palette, centroid cell
//! assignment, and high-frequency energy for the detail flag. Rendering
//! then detecting any valid scene recovers its count, color, and occupied
//! cells exactly; anything malformed yields a `Reject` verdict, which
//! downstream metrics count as failure.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::world::prompt::{Clause, ColorName, DetailKind, ShapeKind, SizeKind, ToyPrompt};

pub const RESOLUTION: usize = 16;
pub const CHANNELS: usize = 3;
pub const IMG_LEN: usize = CHANNELS * RESOLUTION * RESOLUTION;
pub const CELLS_PER_SIDE: usize = 4;
pub const CELL: usize = RESOLUTION / CELLS_PER_SIDE;
pub const MAX_COUNT: usize = 5;

/// Scale applied to the dark squares of the texture checkerboard.
const TEXTURE_SCALE: f32 = 0.55;
/// Squared color distance from background above which a pixel is "shape".
const MASK_THRESHOLD_SQ: f32 = 1.0;
/// Components smaller than this are treated as stray noise and ignored.
const MIN_COMPONENT_PX: usize = 3;
/// Components larger than this, or with a bounding box wider than
/// `MAX_COMPONENT_SIDE`, cannot come from a single rendered shape.
const MAX_COMPONENT_PX: usize = 24;
const MAX_COMPONENT_SIDE: usize = 6;
/// High-frequency energy above this marks a component as textured.
const DETAIL_ENERGY_THRESHOLD: f32 = 0.2;

/// A planar image in the signed convention: 3×16×16, values in [−1, 1],
/// channel-major row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub data: Vec<f32>,
}

impl Image {
    pub fn black() -> Self {
        Image {
            data: vec![-1.0; IMG_LEN],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != IMG_LEN {
            return Err(Error::Config(format!(
                "image must have {IMG_LEN} values, got {}",
                data.len()
            )));
        }
        Ok(Image { data })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * RESOLUTION + y) * RESOLUTION + x]
    }

    #[inline]
    fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * RESOLUTION + y) * RESOLUTION + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::constant(&[CHANNELS, RESOLUTION, RESOLUTION], self.data.clone())
            .expect("image tensor")
    }

    /// Binary PPM (P6) bytes; the dependency-free, bit-exact image format.
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{RESOLUTION} {RESOLUTION}\n255\n").into_bytes();
        for y in 0..RESOLUTION {
            for x in 0..RESOLUTION {
                for c in 0..CHANNELS {
                    let v = (self.get(c, y, x) + 1.0) * 0.5;
                    out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }

    /// Mean absolute difference between horizontally/vertically adjacent
    /// pixels; the quality proxy used by the sweep command.
    pub fn high_frequency_energy(&self) -> f32 {
        let mut acc = 0.0f32;
        let mut n = 0usize;
        for c in 0..CHANNELS {
            for y in 0..RESOLUTION {
                for x in 0..RESOLUTION {
                    if x + 1 < RESOLUTION {
                        acc += (self.get(c, y, x) - self.get(c, y, x + 1)).abs();
                        n += 1;
                    }
                    if y + 1 < RESOLUTION {
                        acc += (self.get(c, y, x) - self.get(c, y + 1, x)).abs();
                        n += 1;
                    }
                }
            }
        }
        acc / n as f32
    }
}

/// Ground-truth attribute record behind each training image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyScene {
    pub kind: ShapeKind,
    pub count: u8,
    pub color: ColorName,
    /// Distinct cells on the 4×4 grid, as (row, col).
    pub positions: Vec<(u8, u8)>,
    pub size: SizeKind,
    pub detail: DetailKind,
}

impl ToyScene {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_COUNT as u8).contains(&self.count) {
            return Err(Error::Config(format!("scene count {} not in 1..=5", self.count)));
        }
        if self.positions.len() != self.count as usize {
            return Err(Error::Config(format!(
                "scene has {} positions for count {}",
                self.positions.len(),
                self.count
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &(r, c) in &self.positions {
            if r as usize >= CELLS_PER_SIDE || c as usize >= CELLS_PER_SIDE {
                return Err(Error::Config(format!("cell ({r}, {c}) off the grid")));
            }
            if !seen.insert((r, c)) {
                return Err(Error::Config(format!("cell ({r}, {c}) used twice")));
            }
        }
        Ok(())
    }

    /// Canonical scene used by exhaustive closure tests: large, plain,
    /// shapes in the first `count` cells row-major.
    pub fn canonical(kind: ShapeKind, count: u8, color: ColorName) -> Self {
        let positions = (0..count)
            .map(|i| ((i / CELLS_PER_SIDE as u8), (i % CELLS_PER_SIDE as u8)))
            .collect();
        ToyScene {
            kind,
            count,
            color,
            positions,
            size: SizeKind::Large,
            detail: DetailKind::Plain,
        }
    }

    /// The prompt that faithfully describes this scene (no filler).
    pub fn describe(&self) -> ToyPrompt {
        ToyPrompt::new(vec![
            Clause::Count(self.count),
            Clause::Color(self.color),
            Clause::Shape(self.kind),
            Clause::Size(self.size),
            Clause::Detail(self.detail),
        ])
    }

    pub fn occupied_cells(&self) -> Vec<(u8, u8)> {
        let mut cells = self.positions.clone();
        cells.sort_unstable();
        cells
    }
}

/// Pixel offsets of each shape within its 4×4 cell. Every mask stays inside
/// rows/cols 0..3 so shapes in adjacent cells never touch.
fn shape_offsets(kind: ShapeKind, size: SizeKind) -> &'static [(usize, usize)] {
    match (kind, size) {
        (ShapeKind::Square, SizeKind::Large) => &[
            (0, 0),
            (0, 1),
            (0, 2),
            (1, 0),
            (1, 1),
            (1, 2),
            (2, 0),
            (2, 1),
            (2, 2),
        ],
        (ShapeKind::Square, SizeKind::Small) => &[(0, 0), (0, 1), (1, 0), (1, 1)],
        (ShapeKind::Circle, SizeKind::Large) => &[(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)],
        (ShapeKind::Circle, SizeKind::Small) => &[(0, 1), (1, 0), (1, 1)],
    }
}

/// Deterministic raster of a scene: black background, one shape per cell,
/// textured shapes carry a fixed global-parity checkerboard.
pub fn render_scene(scene: &ToyScene) -> Result<Image> {
    scene.validate()?;
    let mut img = Image::black();
    let rgb = scene.color.rgb_signed();
    for &(cr, cc) in &scene.positions {
        for &(dy, dx) in shape_offsets(scene.kind, scene.size) {
            let y = cr as usize * CELL + dy;
            let x = cc as usize * CELL + dx;
            let scale = match scene.detail {
                DetailKind::Plain => 1.0,
                DetailKind::Textured => {
                    if (y + x) % 2 == 0 {
                        1.0
                    } else {
                        TEXTURE_SCALE
                    }
                }
            };
            for c in 0..CHANNELS {
                img.set(c, y, x, rgb[c] * scale);
            }
        }
    }
    Ok(img)
}

/// What the detector recovered from an image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedScene {
    pub count: u8,
    pub color: ColorName,
    pub cells: Vec<(u8, u8)>,
    pub textured: bool,
}

/// Detector verdict. `Reject` is always a failure for metrics; it is never
/// silently treated as a match.
#[derive(Debug, Clone, PartialEq)]
pub enum Detection {
    Scene(DetectedScene),
    Reject { reason: String },
}

impl Detection {
    pub fn reject(reason: impl Into<String>) -> Self {
        Detection::Reject {
            reason: reason.into(),
        }
    }

    pub fn scene(&self) -> Option<&DetectedScene> {
        match self {
            Detection::Scene(s) => Some(s),
            Detection::Reject { .. } => None,
        }
    }

    /// True when count, color, and occupied cells all match `truth`.
    pub fn matches(&self, truth: &ToyScene) -> bool {
        match self {
            Detection::Scene(d) => {
                d.count == truth.count
                    && d.color == truth.color
                    && d.cells == truth.occupied_cells()
            }
            Detection::Reject { .. } => false,
        }
    }
}

struct Component {
    pixels: Vec<(usize, usize)>,
    min_y: usize,
    max_y: usize,
    min_x: usize,
    max_x: usize,
}

/// Recovers (count, dominant color, occupied cells, detail flag) from an
/// image, or rejects it as unclassifiable.
pub fn detect_scene(img: &Image) -> Result<Detection> {
    if img.data.len() != IMG_LEN {
        return Err(Error::Config(format!(
            "detector expects a {CHANNELS}×{RESOLUTION}×{RESOLUTION} image"
        )));
    }
    for &v in &img.data {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::Range(format!("pixel value {v} outside [-1, 1]")));
        }
    }

    // Shape mask: squared distance from the black background.
    let mut mask = [false; RESOLUTION * RESOLUTION];
    for y in 0..RESOLUTION {
        for x in 0..RESOLUTION {
            let p = img.pixel(y, x);
            let d2: f32 = p.iter().map(|v| (v + 1.0) * (v + 1.0)).sum();
            mask[y * RESOLUTION + x] = d2 > MASK_THRESHOLD_SQ;
        }
    }

    // 4-connected components, scanline order for determinism.
    let mut visited = [false; RESOLUTION * RESOLUTION];
    let mut components: Vec<Component> = Vec::new();
    for start in 0..RESOLUTION * RESOLUTION {
        if !mask[start] || visited[start] {
            continue;
        }
        let mut comp = Component {
            pixels: Vec::new(),
            min_y: usize::MAX,
            max_y: 0,
            min_x: usize::MAX,
            max_x: 0,
        };
        let mut stack = vec![start];
        visited[start] = true;
        while let Some(p) = stack.pop() {
            let (y, x) = (p / RESOLUTION, p % RESOLUTION);
            comp.pixels.push((y, x));
            comp.min_y = comp.min_y.min(y);
            comp.max_y = comp.max_y.max(y);
            comp.min_x = comp.min_x.min(x);
            comp.max_x = comp.max_x.max(x);
            let mut push = |ny: usize, nx: usize| {
                let q = ny * RESOLUTION + nx;
                if mask[q] && !visited[q] {
                    visited[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                push(y - 1, x);
            }
            if y + 1 < RESOLUTION {
                push(y + 1, x);
            }
            if x > 0 {
                push(y, x - 1);
            }
            if x + 1 < RESOLUTION {
                push(y, x + 1);
            }
        }
        if comp.pixels.len() >= MIN_COMPONENT_PX {
            components.push(comp);
        }
    }

    if components.is_empty() {
        return Ok(Detection::reject("no components above threshold"));
    }
    if components.len() > MAX_COUNT {
        return Ok(Detection::reject(format!(
            "{} components exceeds the maximum count",
            components.len()
        )));
    }

    let mut cells = Vec::new();
    let mut textured_votes = 0usize;
    let mut color_sum = [0.0f32; 3];
    let mut color_px = 0usize;
    for comp in &components {
        if comp.pixels.len() > MAX_COMPONENT_PX {
            return Ok(Detection::reject("component too large for a single shape"));
        }
        if comp.max_y - comp.min_y + 1 > MAX_COMPONENT_SIDE
            || comp.max_x - comp.min_x + 1 > MAX_COMPONENT_SIDE
        {
            return Ok(Detection::reject("component spans too many cells"));
        }
        // Centroid cell assignment.
        let (mut sy, mut sx) = (0usize, 0usize);
        for &(y, x) in &comp.pixels {
            sy += y;
            sx += x;
        }
        let cy = sy as f32 / comp.pixels.len() as f32;
        let cx = sx as f32 / comp.pixels.len() as f32;
        let cell = (
            (cy / CELL as f32).floor() as u8,
            (cx / CELL as f32).floor() as u8,
        );
        if cells.contains(&cell) {
            return Ok(Detection::reject("two components share a cell"));
        }
        cells.push(cell);

        for &(y, x) in &comp.pixels {
            let p = img.pixel(y, x);
            for c in 0..3 {
                color_sum[c] += p[c];
            }
            color_px += 1;
        }

        // High-frequency energy over in-component neighbors only, so shape
        // edges against the background do not count as texture.
        let in_comp = |y: i32, x: i32| -> bool {
            y >= 0
                && x >= 0
                && (y as usize) < RESOLUTION
                && (x as usize) < RESOLUTION
                && comp.pixels.contains(&(y as usize, x as usize))
        };
        let mut energy = 0.0f32;
        let mut counted = 0usize;
        for &(y, x) in &comp.pixels {
            let mut nsum = [0.0f32; 3];
            let mut nn = 0usize;
            for (dy, dx) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
                let (ny, nx) = (y as i32 + dy, x as i32 + dx);
                if in_comp(ny, nx) {
                    let q = img.pixel(ny as usize, nx as usize);
                    for c in 0..3 {
                        nsum[c] += q[c];
                    }
                    nn += 1;
                }
            }
            if nn > 0 {
                let p = img.pixel(y, x);
                let mut diff = 0.0f32;
                for c in 0..3 {
                    diff = diff.max((p[c] - nsum[c] / nn as f32).abs());
                }
                energy += diff;
                counted += 1;
            }
        }
        if counted > 0 && energy / counted as f32 > DETAIL_ENERGY_THRESHOLD {
            textured_votes += 1;
        }
    }

    let mean = [
        color_sum[0] / color_px as f32,
        color_sum[1] / color_px as f32,
        color_sum[2] / color_px as f32,
    ];
    let mut best = ColorName::Red;
    let mut best_d = f32::INFINITY;
    for cand in ColorName::ALL {
        let rgb = cand.rgb_signed();
        let d: f32 = (0..3).map(|c| (mean[c] - rgb[c]) * (mean[c] - rgb[c])).sum();
        if d < best_d {
            best_d = d;
            best = cand;
        }
    }

    cells.sort_unstable();
    Ok(Detection::Scene(DetectedScene {
        count: components.len() as u8,
        color: best,
        cells,
        textured: textured_votes * 2 >= components.len(),
    }))
}
