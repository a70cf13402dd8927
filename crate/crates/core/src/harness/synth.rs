//! Synthetic referring-segmentation scenes: a few colored shapes on a dark
//! background and one templated expression that picks out exactly one of
//! them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::vocab::Vocab;
use crate::error::{Error, Result};

pub const MAX_ATTEMPTS: usize = 100;
pub const BACKGROUND: [u8; 3] = [20, 20, 20];
pub const COLORS: [(&str, [u8; 3]); 6] = [
    ("red", [220, 40, 40]),
    ("green", [40, 200, 60]),
    ("blue", [50, 80, 230]),
    ("yellow", [230, 210, 40]),
    ("magenta", [210, 50, 210]),
    ("cyan", [40, 200, 210]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Circle,
    Square,
    Triangle,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Circle, Kind::Square, Kind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Kind::Circle => "circle",
            Kind::Square => "square",
            Kind::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
    Top,
    Bottom,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Top, Direction::Bottom];

    pub fn phrase(self) -> &'static str {
        match self {
            Direction::Left => "on the left",
            Direction::Right => "on the right",
            Direction::Top => "at the top",
            Direction::Bottom => "at the bottom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: Kind,
    pub color: usize,
    pub large: bool,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Shape {
    /// Whether the pixel with center `(px, py)` lies inside the shape.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        match self.kind {
            Kind::Circle => dx * dx + dy * dy <= self.r * self.r,
            Kind::Square => dx.abs() <= 0.85 * self.r && dy.abs() <= 0.85 * self.r,
            Kind::Triangle => {
                let a = (self.cx, self.cy - self.r);
                let b = (self.cx + self.r, self.cy + 0.8 * self.r);
                let c = (self.cx - self.r, self.cy + 0.8 * self.r);
                let side = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (py - p.1) - (q.1 - p.1) * (px - p.0);
                let (s1, s2, s3) = (side(a, b), side(b, c), side(c, a));
                (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
            }
        }
    }

    /// Radius of a circle enclosing the shape.
    fn extent(&self) -> f64 {
        1.25 * self.r
    }

    fn position(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Left => -self.cx,
            Direction::Right => self.cx,
            Direction::Top => -self.cy,
            Direction::Bottom => self.cy,
        }
    }
}

/// Attributes an expression may mention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Description {
    pub size: bool,
    pub color: bool,
    pub kind: bool,
    pub direction: Option<Direction>,
}

/// Minimum lead in pixels for a position word to count as unambiguous.
const POSITION_MARGIN: f64 = 6.0;

impl Description {
    pub fn expression(&self, target: &Shape) -> String {
        let mut words = vec!["the"];
        if self.size {
            words.push(if target.large { "large" } else { "small" });
        }
        if self.color {
            words.push(COLORS[target.color].0);
        }
        words.push(if self.kind { target.kind.word() } else { "shape" });
        if let Some(d) = self.direction {
            words.push(d.phrase());
        }
        words.join(" ")
    }

    fn matches(&self, s: &Shape, target: &Shape) -> bool {
        (!self.size || s.large == target.large)
            && (!self.color || s.color == target.color)
            && (!self.kind || s.kind == target.kind)
    }

    /// True when the description singles out `shapes[target]`.
    pub fn is_unique(&self, shapes: &[Shape], target: usize) -> bool {
        let t = &shapes[target];
        let others: Vec<&Shape> =
            shapes.iter().enumerate().filter(|&(i, s)| i != target && self.matches(s, t)).map(|(_, s)| s).collect();
        match self.direction {
            None => others.is_empty(),
            Some(d) => others.iter().all(|s| t.position(d) >= s.position(d) + POSITION_MARGIN),
        }
    }

    fn all() -> Vec<Description> {
        let mut out = Vec::new();
        for bits in 0..8u8 {
            for dir in std::iter::once(None).chain(Direction::ALL.map(Some)) {
                out.push(Description { size: bits & 1 != 0, color: bits & 2 != 0, kind: bits & 4 != 0, direction: dir });
            }
        }
        out
    }
}

/// One generated sample before serialization.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// Row-major `H×W×3`.
    pub image: Vec<u8>,
    /// Row-major `H×W`, values in `{0, 1}`.
    pub mask: Vec<u8>,
    pub tokens: Vec<usize>,
    pub expression: String,
    pub shapes: Vec<Shape>,
    pub target: usize,
}

pub fn rasterize(shape: &Shape, size: usize) -> Vec<bool> {
    let mut m = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            m[y * size + x] = shape.contains(x as f64 + 0.5, y as f64 + 0.5);
        }
    }
    m
}

fn sample_scene<R: Rng>(rng: &mut R, size: usize) -> Option<Vec<Shape>> {
    let scale = size as f64 / 64.0;
    let count = rng.gen_range(2..=4);
    let mut shapes: Vec<Shape> = Vec::with_capacity(count);
    for _ in 0..count {
        let large = rng.gen_bool(0.5);
        let r = scale * if large { rng.gen_range(11.0..14.0) } else { rng.gen_range(6.0..8.5) };
        let kind = *Kind::ALL.choose(rng).unwrap();
        let color = rng.gen_range(0..COLORS.len());
        let mut placed = None;
        for _ in 0..50 {
            let lo = 1.25 * r + 1.0;
            let hi = size as f64 - lo;
            if hi <= lo {
                return None;
            }
            let cand = Shape { kind, color, large, cx: rng.gen_range(lo..hi), cy: rng.gen_range(lo..hi), r };
            let clear = shapes.iter().all(|s| {
                let d = ((s.cx - cand.cx).powi(2) + (s.cy - cand.cy).powi(2)).sqrt();
                d > s.extent() + cand.extent() + 2.0
            });
            if clear {
                placed = Some(cand);
                break;
            }
        }
        shapes.push(placed?);
    }
    Some(shapes)
}

/// Generates sample `index` of the stream defined by `seed`.
pub fn generate_one(seed: u64, index: u64, size: usize, vocab: &Vocab, max_len: usize) -> Result<SampleRecord> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::config(format!("image size {size} is not divisible by 16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let all = Description::all();
    for _ in 0..MAX_ATTEMPTS {
        let Some(shapes) = sample_scene(&mut rng, size) else { continue };
        let target = rng.gen_range(0..shapes.len());
        let valid: Vec<&Description> = all.iter().filter(|d| d.is_unique(&shapes, target)).collect();
        let Some(desc) = valid.choose(&mut rng) else { continue };
        let expression = desc.expression(&shapes[target]);
        let tokens = vocab.tokenize(&expression, max_len)?;
        let mut image = Vec::with_capacity(size * size * 3);
        let mut mask = vec![0u8; size * size];
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let hit = shapes.iter().position(|s| s.contains(px, py));
                image.extend_from_slice(&hit.map_or(BACKGROUND, |i| COLORS[shapes[i].color].1));
                mask[y * size + x] = (hit == Some(target)) as u8;
            }
        }
        if mask.iter().all(|&m| m == 0) {
            continue;
        }
        return Ok(SampleRecord { image, mask, tokens, expression, shapes, target });
    }
    Err(Error::input(format!("sample {index}: no unambiguous scene after {MAX_ATTEMPTS} attempts")))
}

/// Canonical text of the grammar; its hash goes into the manifest.
pub fn grammar_text() -> String {
    let colors: Vec<String> = COLORS.iter().map(|(n, c)| format!("{n}={c:?}")).collect();
    let kinds: Vec<&str> = Kind::ALL.iter().map(|k| k.word()).collect();
    let dirs: Vec<&str> = Direction::ALL.iter().map(|d| d.phrase()).collect();
    format!(
        "template: the [small|large] [color] (kind|shape) [position]\ncolors: {}\nkinds: {}\npositions: {}\nmargin: {POSITION_MARGIN}\n",
        colors.join(","),
        kinds.join(","),
        dirs.join(",")
    )
}

pub fn grammar_sha256() -> String {
    let digest = Sha256::digest(grammar_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Every expression the grammar can produce.
pub fn all_expressions() -> Vec<String> {
    let mut out = Vec::new();
    for d in Description::all() {
        for large in [false, true] {
            for color in 0..COLORS.len() {
                for kind in Kind::ALL {
                    let s = Shape { kind, color, large, cx: 0.0, cy: 0.0, r: 1.0 };
                    out.push(d.expression(&s));
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}
