//! Deterministic procedural stand-in for a text-to-image service.
//!
//! Each label has its own texture family (colour palette plus structure), so
//! the built-in histogram classifier can separate them. A configurable share
//! of requests renders an off-label motif instead, which is what the triage
//! loop is there to catch.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_png, BackendError, BackendKind, GenerationRequest, ImageBackend};
use crate::record::{MANUAL_HEIGHT, MANUAL_WIDTH};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Motif {
    Brick,
    Stucco,
    Rustication,
    Metal,
    Siding,
    Wood,
    Null,
    Other,
    Stone,
    CurtainWall,
    ConcretePanels,
}

const URC_FAMILY: [Motif; 8] = [
    Motif::Brick,
    Motif::Stucco,
    Motif::Rustication,
    Motif::Metal,
    Motif::Siding,
    Motif::Wood,
    Motif::Null,
    Motif::Other,
];

const HRP_FAMILY: [Motif; 4] = [Motif::Stone, Motif::CurtainWall, Motif::ConcretePanels, Motif::Null];

impl Motif {
    /// Unknown labels fall back to the mixed `Other` motif.
    pub fn for_label(label: &str) -> Motif {
        match label {
            "brick" => Motif::Brick,
            "stucco" => Motif::Stucco,
            "rustication" => Motif::Rustication,
            "metal" => Motif::Metal,
            "siding" => Motif::Siding,
            "wood" => Motif::Wood,
            "null" => Motif::Null,
            "stone" => Motif::Stone,
            "curtain_wall" => Motif::CurtainWall,
            "concrete_panels" => Motif::ConcretePanels,
            _ => Motif::Other,
        }
    }

    fn off_label_choices(self) -> Vec<Motif> {
        let family: &[Motif] = if HRP_FAMILY[..3].contains(&self) {
            &HRP_FAMILY
        } else {
            &URC_FAMILY
        };
        family.iter().copied().filter(|m| *m != self).collect()
    }
}

/// Share of requests that render an off-label motif.
///
/// Labels without an override get the rate that makes the average over a
/// balanced run across `labels` equal `overall`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrrelevanceRates {
    pub overall: f64,
    #[serde(default)]
    pub per_label: BTreeMap<String, f64>,
}

impl Default for IrrelevanceRates {
    fn default() -> Self {
        IrrelevanceRates {
            overall: 0.24,
            per_label: BTreeMap::from([("stucco".to_string(), 0.45)]),
        }
    }
}

impl IrrelevanceRates {
    pub fn none() -> Self {
        IrrelevanceRates {
            overall: 0.0,
            per_label: BTreeMap::new(),
        }
    }

    /// Per-label rates for the given generation label set.
    pub fn resolve(&self, labels: &[String]) -> BTreeMap<String, f64> {
        let overridden: Vec<&String> = labels
            .iter()
            .filter(|l| self.per_label.contains_key(*l))
            .collect();
        let free = labels.len() - overridden.len();
        let fill = if free == 0 {
            self.overall
        } else {
            let fixed: f64 = overridden.iter().map(|l| self.per_label[*l]).sum();
            ((self.overall * labels.len() as f64 - fixed) / free as f64).clamp(0.0, 1.0)
        };
        labels
            .iter()
            .map(|l| (l.clone(), self.per_label.get(l).copied().unwrap_or(fill)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct StubBackend {
    rates: BTreeMap<String, f64>,
    default_rate: f64,
    size: u32,
}

impl StubBackend {
    pub fn new(rates: &IrrelevanceRates, labels: &[String]) -> Self {
        StubBackend {
            rates: rates.resolve(labels),
            default_rate: rates.overall,
            size: super::IMAGE_SIZE,
        }
    }

    /// A stub that always renders the requested label.
    pub fn faithful() -> Self {
        StubBackend {
            rates: BTreeMap::new(),
            default_rate: 0.0,
            size: super::IMAGE_SIZE,
        }
    }

    pub fn rate_for(&self, label: &str) -> f64 {
        self.rates.get(label).copied().unwrap_or(self.default_rate)
    }

    /// The motif this backend draws for `req`; differs from the target label
    /// exactly when the request falls into the irrelevant share.
    pub fn rendered_motif(&self, req: &GenerationRequest) -> Motif {
        let target = Motif::for_label(&req.target_label);
        if weyl_unit(req.seed) >= self.rate_for(&req.target_label) {
            return target;
        }
        let choices = target.off_label_choices();
        let pick = seed::derive(req.seed, &req.prompt_text) as usize % choices.len();
        choices[pick]
    }

    pub fn is_relevant(&self, req: &GenerationRequest) -> bool {
        self.rendered_motif(req) == Motif::for_label(&req.target_label)
    }

    pub fn render(&self, req: &GenerationRequest) -> RgbImage {
        let mut rng = texture_rng(&req.prompt_text, req.seed);
        render_motif(self.rendered_motif(req), self.size, self.size, &mut rng)
    }
}

impl ImageBackend for StubBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::LocalStub
    }

    fn render_png(&self, req: &GenerationRequest) -> Result<Vec<u8>, BackendError> {
        encode_png(&self.render(req)).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

/// Fractional part of `seed * golden ratio`: consecutive seeds give a
/// low-discrepancy sequence, so configured rates are met closely on small runs.
fn weyl_unit(seed: u64) -> f64 {
    (seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64 / (1u64 << 53) as f64
}

fn texture_rng(prompt_text: &str, seed: u64) -> ChaCha8Rng {
    let digest = seed::digest_hex([prompt_text.as_bytes(), &seed.to_le_bytes()]);
    let mut bytes = [0u8; 32];
    for (i, b) in bytes.iter_mut().enumerate() {
        *b = u8::from_str_radix(&digest[2 * i..2 * i + 2], 16).unwrap_or(0);
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Renders a 400x600 street-level "manual" photo: sky band, facade, pavement.
pub fn render_manual(label: &str, index: u64, seed: u64) -> RgbImage {
    let mut rng = texture_rng(&format!("manual:{label}"), seed::derive(seed, &index.to_string()));
    let (w, h) = (MANUAL_WIDTH, MANUAL_HEIGHT);
    let motif = Motif::for_label(label);
    if motif == Motif::Null {
        let mut img = render_motif(Motif::Null, w, h, &mut rng);
        paint_pavement(&mut img, h * 88 / 100, &mut rng);
        add_grain(&mut img, 6, &mut rng);
        return img;
    }
    let mut img = RgbImage::new(w, h);
    let sky_end = h * rng.random_range(10..18) / 100;
    let facade_end = h * rng.random_range(84..90) / 100;
    sky(&mut img, 0, sky_end, &mut rng);
    let facade = render_motif(motif, w, facade_end - sky_end, &mut rng);
    for (x, y, p) in facade.enumerate_pixels() {
        img.put_pixel(x, y + sky_end, *p);
    }
    paint_pavement(&mut img, facade_end, &mut rng);
    let gain = rng.random_range(0.94..1.04);
    for p in img.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = (*c as f64 * gain).clamp(0.0, 255.0) as u8;
        }
    }
    add_grain(&mut img, 8, &mut rng);
    img
}

pub fn render_motif(motif: Motif, w: u32, h: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let mut img = RgbImage::new(w, h);
    match motif {
        Motif::Brick => brick(&mut img, rng),
        Motif::Stucco => stucco(&mut img, rng),
        Motif::Rustication => rustication(&mut img, rng),
        Motif::Metal => metal(&mut img, rng),
        Motif::Siding => siding(&mut img, rng),
        Motif::Wood => wood(&mut img, rng),
        Motif::Null => null_scene(&mut img, rng),
        Motif::Other => tiles(&mut img, rng),
        Motif::Stone => stone(&mut img, rng),
        Motif::CurtainWall => curtain_wall(&mut img, rng),
        Motif::ConcretePanels => concrete_panels(&mut img, rng),
    }
    img
}

fn jitter(rng: &mut ChaCha8Rng, base: [i32; 3], spread: i32) -> [i32; 3] {
    let d = rng.random_range(-spread..=spread);
    [base[0] + d, base[1] + d, base[2] + d]
}

fn px(c: [i32; 3]) -> Rgb<u8> {
    Rgb([
        c[0].clamp(0, 255) as u8,
        c[1].clamp(0, 255) as u8,
        c[2].clamp(0, 255) as u8,
    ])
}

fn shade(c: [i32; 3], d: i32) -> [i32; 3] {
    [c[0] + d, c[1] + d, c[2] + d]
}

fn add_grain(img: &mut RgbImage, amp: i32, rng: &mut ChaCha8Rng) {
    for p in img.pixels_mut() {
        let d = rng.random_range(-amp..=amp);
        for c in p.0.iter_mut() {
            *c = (*c as i32 + d).clamp(0, 255) as u8;
        }
    }
}

/// Bilinear value noise in [-1, 1] on a `cells` x `cells` lattice.
struct ValueNoise {
    cells: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = cells + 1;
        ValueNoise {
            cells,
            grid: (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let n = self.cells + 1;
        let x = (u * self.cells as f64).clamp(0.0, self.cells as f64 - 1e-9);
        let y = (v * self.cells as f64).clamp(0.0, self.cells as f64 - 1e-9);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let g = |i: usize, j: usize| self.grid[j * n + i];
        let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
        let bottom = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn brick(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let scale = img.width() as f64 / 512.0;
    let bh = (rng.random_range(18.0..24.0) * scale).max(6.0) as u32;
    let bw = (bh as f64 * rng.random_range(2.3..2.8)) as u32;
    let mortar = (3.0 * scale).max(2.0) as u32;
    let base = [rng.random_range(150..180), rng.random_range(58..78), rng.random_range(42..58)];
    let mortar_c = [rng.random_range(190..210), 192, 182];
    let rows = img.height() / bh + 1;
    let cols = img.width() / bw + 2;
    let colors: Vec<[i32; 3]> = (0..rows * cols).map(|_| jitter(rng, base, 16)).collect();
    for (x, y, p) in img.enumerate_pixels_mut() {
        let row = y / bh;
        let offset = if row % 2 == 1 { bw / 2 } else { 0 };
        let xs = x + offset;
        let col = xs / bw;
        let c = if y % bh < mortar || xs % bw < mortar {
            mortar_c
        } else {
            colors[(row * cols + col) as usize]
        };
        *p = px(c);
    }
    add_grain(img, 5, rng);
}

fn stucco(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let palettes = [[218, 170, 100], [224, 150, 124], [206, 184, 128]];
    let pick = palettes[rng.random_range(0..palettes.len())];
    let base = jitter(rng, pick, 8);
    let noise = ValueNoise::new(rng.random_range(4..7), rng);
    let (w, h) = (img.width() as f64, img.height() as f64);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let d = (noise.at(x as f64 / w, y as f64 / h) * 12.0) as i32;
        *p = px(shade(base, d));
    }
    add_grain(img, 3, rng);
}

fn rustication(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let scale = img.width() as f64 / 512.0;
    let bh = (rng.random_range(56.0..72.0) * scale).max(12.0) as u32;
    let bw = (rng.random_range(120.0..180.0) * scale).max(24.0) as u32;
    let joint = (7.0 * scale).max(3.0) as u32;
    let base = [rng.random_range(172..188), rng.random_range(164..176), rng.random_range(146..158)];
    let joint_c = [72, 68, 64];
    for (x, y, p) in img.enumerate_pixels_mut() {
        let row = y / bh;
        let offset = if row % 2 == 1 { bw / 3 } else { 0 };
        let xs = x + offset;
        let (ly, lx) = (y % bh, xs % bw);
        let c = if ly < joint || lx < joint / 2 {
            joint_c
        } else {
            // bevel: darker towards the top of each block
            let t = ((ly - joint) as f64 / (bh - joint) as f64).min(1.0);
            shade(base, (-30.0 * (1.0 - t).powi(3)) as i32)
        };
        *p = px(c);
    }
    add_grain(img, 4, rng);
}

fn metal(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let scale = img.width() as f64 / 512.0;
    let period = rng.random_range(10.0..14.0) * scale;
    let base = [rng.random_range(148..166), rng.random_range(158..172), rng.random_range(174..190)];
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for (x, _y, p) in img.enumerate_pixels_mut() {
        let s = (x as f64 / period * std::f64::consts::TAU + phase).sin();
        *p = px(shade(base, (s * 42.0) as i32));
    }
    add_grain(img, 4, rng);
}

fn siding(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let scale = img.width() as f64 / 512.0;
    let board = (rng.random_range(22.0..30.0) * scale).max(6.0) as u32;
    let palettes = [[238, 238, 232], [200, 216, 238], [196, 214, 198]];
    let base = palettes[rng.random_range(0..palettes.len())];
    let shadow = (2.0 * scale).max(1.0) as u32;
    for (_x, y, p) in img.enumerate_pixels_mut() {
        let ly = y % board;
        let c = if ly >= board - shadow {
            [112, 112, 120]
        } else {
            shade(base, -((ly as f64 / board as f64) * 26.0) as i32)
        };
        *p = px(c);
    }
    add_grain(img, 3, rng);
}

fn wood(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let scale = img.width() as f64 / 512.0;
    let plank = (rng.random_range(36.0..48.0) * scale).max(8.0) as u32;
    let gap = (2.0 * scale).max(1.0) as u32;
    let base = [rng.random_range(178..196), rng.random_range(112..128), rng.random_range(70..86)];
    let planks = img.width() / plank + 1;
    let tints: Vec<i32> = (0..planks).map(|_| rng.random_range(-14..=14)).collect();
    let freq = rng.random_range(0.08..0.14) / scale;
    let noise = ValueNoise::new(8, rng);
    let (w, h) = (img.width() as f64, img.height() as f64);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let c = if x % plank < gap {
            [60, 38, 22]
        } else {
            let warp = noise.at(x as f64 / w, y as f64 / h) * 6.0;
            let grain = ((x as f64 * freq + warp).sin() * 14.0) as i32;
            shade(base, tints[(x / plank) as usize] + grain)
        };
        *p = px(c);
    }
    add_grain(img, 3, rng);
}

fn sky(img: &mut RgbImage, from: u32, to: u32, rng: &mut ChaCha8Rng) {
    let top = [rng.random_range(110..140), rng.random_range(155..180), rng.random_range(210..235)];
    let bottom = [196, 212, 236];
    let span = (to - from).max(1) as f64;
    for y in from..to {
        let t = (y - from) as f64 / span;
        let c = [
            (top[0] as f64 * (1.0 - t) + bottom[0] as f64 * t) as i32,
            (top[1] as f64 * (1.0 - t) + bottom[1] as f64 * t) as i32,
            (top[2] as f64 * (1.0 - t) + bottom[2] as f64 * t) as i32,
        ];
        for x in 0..img.width() {
            img.put_pixel(x, y, px(c));
        }
    }
}

fn paint_pavement(img: &mut RgbImage, from: u32, rng: &mut ChaCha8Rng) {
    let base = rng.random_range(96..120);
    for y in from..img.height() {
        for x in 0..img.width() {
            img.put_pixel(x, y, px([base, base, base + 4]));
        }
    }
}

fn null_scene(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let (w, h) = (img.width(), img.height());
    let horizon = h * rng.random_range(40..55) / 100;
    sky(img, 0, horizon, rng);
    let grass = [rng.random_range(66..90), rng.random_range(118..142), rng.random_range(52..70)];
    let noise = ValueNoise::new(10, rng);
    for y in horizon..h {
        for x in 0..w {
            let d = (noise.at(x as f64 / w as f64, y as f64 / h as f64) * 18.0) as i32;
            img.put_pixel(x, y, px(shade(grass, d)));
        }
    }
    // a few tree crowns straddling the horizon
    let trees = rng.random_range(2..6);
    for _ in 0..trees {
        let cx = rng.random_range(0..w) as i64;
        let cy = horizon as i64 - rng.random_range(0..(h / 10).max(1)) as i64;
        let r = rng.random_range(w / 14..w / 7).max(2) as i64;
        let c = [rng.random_range(30..50), rng.random_range(80..100), rng.random_range(34..48)];
        for y in (cy - r).max(0)..(cy + r).min(h as i64) {
            for x in (cx - r).max(0)..(cx + r).min(w as i64) {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    img.put_pixel(x as u32, y as u32, px(c));
                }
            }
        }
    }
    add_grain(img, 4, rng);
}

fn tiles(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let scale = img.width() as f64 / 512.0;
    let tile = (rng.random_range(28.0..36.0) * scale).max(6.0) as u32;
    let grout = (2.0 * scale).max(1.0) as u32;
    let palette = [[40, 150, 150], [220, 120, 40], [120, 60, 150], [200, 60, 80], [60, 110, 200]];
    let cols = img.width() / tile + 1;
    let rows = img.height() / tile + 1;
    let colors: Vec<[i32; 3]> = (0..rows * cols)
        .map(|_| {
            let base = palette[rng.random_range(0..palette.len())];
            jitter(rng, base, 12)
        })
        .collect();
    for (x, y, p) in img.enumerate_pixels_mut() {
        let c = if x % tile < grout || y % tile < grout {
            [150, 150, 146]
        } else {
            colors[((y / tile) * cols + x / tile) as usize]
        };
        *p = px(c);
    }
    add_grain(img, 3, rng);
}

fn stone(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let (w, h) = (img.width(), img.height());
    // one jittered seed per lattice cell; nearest seeds lie in the 3x3 neighbourhood
    let g = rng.random_range(6..8) as i64;
    let (cw, ch) = (w as f64 / g as f64, h as f64 / g as f64);
    let seeds: Vec<(f64, f64, [i32; 3])> = (0..g * g)
        .map(|i| {
            let c = [rng.random_range(128..180), rng.random_range(118..168), rng.random_range(100..148)];
            let (gx, gy) = ((i % g) as f64, (i / g) as f64);
            ((gx + rng.random_range(0.0..1.0)) * cw, (gy + rng.random_range(0.0..1.0)) * ch, c)
        })
        .collect();
    let edge = 3.0 * w as f64 / 512.0;
    for (x, y, p) in img.enumerate_pixels_mut() {
        let (xf, yf) = (x as f64, y as f64);
        let (cx, cy) = ((xf / cw) as i64, (yf / ch) as i64);
        let (mut d1, mut d2, mut best) = (f64::MAX, f64::MAX, 0);
        for j in (cy - 1).max(0)..=(cy + 1).min(g - 1) {
            for i in (cx - 1).max(0)..=(cx + 1).min(g - 1) {
                let k = (j * g + i) as usize;
                let (sx, sy, _) = seeds[k];
                let d = (xf - sx).powi(2) + (yf - sy).powi(2);
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                    best = k;
                } else if d < d2 {
                    d2 = d;
                }
            }
        }
        *p = if d2.sqrt() - d1.sqrt() < edge { px([70, 64, 58]) } else { px(seeds[best].2) };
    }
    add_grain(img, 6, rng);
}

fn curtain_wall(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let scale = img.width() as f64 / 512.0;
    let pw = (rng.random_range(56.0..72.0) * scale).max(10.0) as u32;
    let ph = (rng.random_range(84.0..104.0) * scale).max(14.0) as u32;
    let mullion = (6.0 * scale).max(2.0) as u32;
    let base = [rng.random_range(28..48), rng.random_range(58..80), rng.random_range(98..130)];
    let cols = img.width() / pw + 1;
    let rows = img.height() / ph + 1;
    let reflect: Vec<i32> = (0..rows * cols).map(|_| rng.random_range(0..40)).collect();
    for (x, y, p) in img.enumerate_pixels_mut() {
        let c = if x % pw < mullion || y % ph < mullion {
            [212, 216, 222]
        } else {
            let r = reflect[((y / ph) * cols + x / pw) as usize];
            let t = ((x % pw) as f64 / pw as f64 * 20.0) as i32;
            shade(base, r + t)
        };
        *p = px(c);
    }
    add_grain(img, 3, rng);
}

fn concrete_panels(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let scale = img.width() as f64 / 512.0;
    let pw = (rng.random_range(150.0..180.0) * scale).max(20.0) as u32;
    let ph = (rng.random_range(118.0..140.0) * scale).max(16.0) as u32;
    let seam = (3.0 * scale).max(1.0) as u32;
    let g = rng.random_range(168..190);
    let cols = img.width() / pw + 1;
    let rows = img.height() / ph + 1;
    let tints: Vec<i32> = (0..rows * cols).map(|_| rng.random_range(-8..=8)).collect();
    for (x, y, p) in img.enumerate_pixels_mut() {
        let c = if x % pw < seam || y % ph < seam {
            [108, 108, 110]
        } else {
            shade([g, g, g - 4], tints[((y / ph) * cols + x / pw) as usize])
        };
        *p = px(c);
    }
    add_grain(img, 5, rng);
}
