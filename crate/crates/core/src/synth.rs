//! Procedural street scenes rendered under two illuminations.
//!
//! Domain A is a bright "sunny" rendering; domain B applies a fixed per-channel
//! affine darkening with a blue cast to the very same pixels, so every B image
//! has a known, pixel-aligned A counterpart and a class mask.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of semantic classes in a scene mask.
pub const NUM_CLASSES: usize = 4;

/// Mask class ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Class {
    Sky = 0,
    Road = 1,
    Building = 2,
    Vehicle = 3,
}

/// Per-channel `gain · x + offset`, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photometric {
    pub gain: [f32; 3],
    pub offset: [f32; 3],
}

impl Default for Photometric {
    fn default() -> Self {
        Self { gain: [0.35, 0.38, 0.45], offset: [0.02, 0.02, 0.08] }
    }
}

impl Photometric {
    pub fn apply(&self, rgb: [f32; 3]) -> [f32; 3] {
        core::array::from_fn(|c| (self.gain[c] * rgb[c] + self.offset[c]).clamp(0.0, 1.0))
    }

    /// Closed-form inverse, exact wherever `apply` did not clamp.
    pub fn invert(&self, rgb: [f32; 3]) -> [f32; 3] {
        core::array::from_fn(|c| (rgb[c] - self.offset[c]) / self.gain[c])
    }
}

/// One scene: both renderings (HWC, values in `[0, 1]`) and its class mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub height: usize,
    pub width: usize,
    pub image_a: Vec<f32>,
    pub image_b: Vec<f32>,
    pub mask: Vec<u8>,
    pub seed: u64,
}

impl SceneSample {
    pub fn pixel_a(&self, y: usize, x: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.image_a[i], self.image_a[i + 1], self.image_a[i + 2]]
    }

    pub fn pixel_b(&self, y: usize, x: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.image_b[i], self.image_b[i + 1], self.image_b[i + 2]]
    }
}

struct Rect {
    x0: f32,
    x1: f32,
    y0: f32,
    y1: f32,
    radius: f32,
    color: [f32; 3],
}

impl Rect {
    fn contains(&self, u: f32, v: f32) -> bool {
        if u < self.x0 || u >= self.x1 || v < self.y0 || v >= self.y1 {
            return false;
        }
        let r = self.radius;
        if r <= 0.0 {
            return true;
        }
        // distance to the nearest corner centre when inside a corner square
        let cx = u.clamp(self.x0 + r, self.x1 - r);
        let cy = v.clamp(self.y0 + r, self.y1 - r);
        let (dx, dy) = (u - cx, v - cy);
        dx * dx + dy * dy <= r * r
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], amount: f32) -> [f32; 3] {
    core::array::from_fn(|c| (base[c] + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    core::array::from_fn(|c| a[c] + (b[c] - a[c]) * t)
}

/// Renders the scene for `seed` at `height × width` with the default darkening.
pub fn synth_scene(seed: u64, height: usize, width: usize) -> SceneSample {
    synth_scene_with(seed, height, width, &Photometric::default())
}

/// Renders the scene for `seed`; domain B is `transform` applied to domain A.
pub fn synth_scene_with(seed: u64, height: usize, width: usize, transform: &Photometric) -> SceneSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon: f32 = rng.random_range(0.38..0.58);
    let sky_top = jitter(&mut rng, [0.30, 0.50, 0.85], 0.05);
    let sky_low = jitter(&mut rng, [0.62, 0.76, 0.93], 0.04);
    let grey: f32 = rng.random_range(0.36..0.50);
    let road_tint = jitter(&mut rng, [0.0, 0.0, 0.0], 0.02);

    let mut rects: Vec<(Class, Rect)> = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let w = rng.random_range(0.12..0.35);
        let x0 = rng.random_range(0.0..(1.0 - w));
        let top = rng.random_range(0.08..(horizon - 0.1));
        let bottom = horizon + rng.random_range(0.0..0.05);
        let color = [rng.random_range(0.55..0.80), rng.random_range(0.30..0.45), rng.random_range(0.18..0.30)];
        rects.push((Class::Building, Rect { x0, x1: x0 + w, y0: top, y1: bottom, radius: 0.0, color }));
    }
    for _ in 0..rng.random_range(0..=2) {
        let w: f32 = rng.random_range(0.15..0.28);
        let h: f32 = rng.random_range(0.08..0.14);
        let x0 = rng.random_range(0.02..(0.98 - w));
        let y0 = rng.random_range((horizon + 0.08)..(0.97 - h));
        let base = if rng.random_bool(0.5) { [0.92, 0.80, 0.15] } else { [0.20, 0.72, 0.30] };
        let color = jitter(&mut rng, base, 0.05);
        rects.push((Class::Vehicle, Rect { x0, x1: x0 + w, y0, y1: y0 + h, radius: 0.3 * w.min(h), color }));
    }

    let n = height * width;
    let mut image_a = vec![0.0f32; 3 * n];
    let mut image_b = vec![0.0f32; 3 * n];
    let mut mask = vec![0u8; n];
    for y in 0..height {
        let v = (y as f32 + 0.5) / height as f32;
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32;
            let (mut class, mut rgb) = if v < horizon {
                (Class::Sky, lerp3(sky_top, sky_low, v / horizon))
            } else {
                let shade = grey * (0.9 + 0.2 * (v - horizon) / (1.0 - horizon));
                (Class::Road, core::array::from_fn(|c| (shade + road_tint[c]).clamp(0.0, 1.0)))
            };
            for (cls, r) in &rects {
                if r.contains(u, v) {
                    class = *cls;
                    rgb = r.color;
                    if *cls == Class::Building {
                        // slight vertical shading
                        let t = (v - r.y0) / (r.y1 - r.y0);
                        rgb = core::array::from_fn(|c| (rgb[c] * (1.05 - 0.1 * t)).clamp(0.0, 1.0));
                    }
                }
            }
            let i = y * width + x;
            mask[i] = class as u8;
            let dark = transform.apply(rgb);
            image_a[3 * i..3 * i + 3].copy_from_slice(&rgb);
            image_b[3 * i..3 * i + 3].copy_from_slice(&dark);
        }
    }
    SceneSample { height, width, image_a, image_b, mask, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let a = synth_scene(42, 32, 32);
        let b = synth_scene(42, 32, 32);
        assert_eq!(a, b);
        assert_ne!(a, synth_scene(43, 32, 32));
    }

    #[test]
    fn domain_b_is_darker_in_red_and_green() {
        let t = Photometric::default();
        for seed in 0..50 {
            let s = synth_scene(seed, 32, 32);
            for (pa, pb) in s.image_a.chunks(3).zip(s.image_b.chunks(3)) {
                for c in 0..2 {
                    assert!(pb[c] <= pa[c] + t.offset[c] + 1e-6);
                }
            }
        }
    }

    #[test]
    fn sky_and_road_always_present() {
        for seed in 0..200 {
            let s = synth_scene(seed, 32, 32);
            assert!(s.mask.contains(&(Class::Sky as u8)), "seed {seed}");
            assert!(s.mask.contains(&(Class::Road as u8)), "seed {seed}");
            assert!(s.mask.iter().all(|&c| (c as usize) < NUM_CLASSES));
        }
    }

    #[test]
    fn all_classes_occur_across_seeds() {
        let mut seen = [false; NUM_CLASSES];
        for seed in 0..50 {
            for &c in &synth_scene(seed, 32, 32).mask {
                seen[c as usize] = true;
            }
        }
        assert_eq!(seen, [true; NUM_CLASSES]);
    }

    #[test]
    fn inverse_recovers_domain_a() {
        let t = Photometric::default();
        for seed in 0..20 {
            let s = synth_scene(seed, 32, 32);
            let mut close = 0;
            for y in 0..32 {
                for x in 0..32 {
                    let back = t.invert(s.pixel_b(y, x));
                    let a = s.pixel_a(y, x);
                    if (0..3).all(|c| (back[c] - a[c]).abs() <= 1.0 / 255.0) {
                        close += 1;
                    }
                }
            }
            assert!(close as f64 >= 0.95 * 1024.0);
        }
    }

    #[test]
    fn values_in_unit_range() {
        let s = synth_scene(7, 24, 40);
        assert_eq!(s.image_a.len(), 24 * 40 * 3);
        assert!(s.image_a.iter().chain(&s.image_b).all(|v| (0.0..=1.0).contains(v)));
    }
}
