//! Synthetic datasets for desk-scale experiments.
//!
//! All generators are balanced by construction (instance `i` belongs to class
//! `i mod classes`), so any prefix of a generated set stays balanced and can
//! serve as the small clean set of a model update.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Instance};
use crate::seed;
use crate::Label;

/// Group tag carried by the planted subgroup of [`token_groups`].
pub const COMEDY_TAG: &str = "genre:comedy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Two unit-variance Gaussians at ±(2, 2): nearly separable.
    BlobsBinary,
    /// Two unit-variance Gaussians at ±(0.5, 0.5): heavily overlapping.
    BlobsOverlap,
    /// Ten unit-variance Gaussians in 10 dimensions.
    BlobsMulti,
    /// Ten 12×12 single-channel glyph classes with jitter and pixel noise.
    GlyphGrid,
    /// Binary bag-of-tokens sentiment with a planted 20% comedy group.
    TokensGroup,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::BlobsBinary,
        SynthKind::BlobsOverlap,
        SynthKind::BlobsMulti,
        SynthKind::GlyphGrid,
        SynthKind::TokensGroup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::BlobsBinary => "blobs-binary",
            SynthKind::BlobsOverlap => "blobs-overlap",
            SynthKind::BlobsMulti => "blobs-multi",
            SynthKind::GlyphGrid => "glyph-grid",
            SynthKind::TokensGroup => "tokens-group",
        }
    }

    pub fn generate(self, size: usize, seed: u64) -> Dataset {
        let d = match self {
            SynthKind::BlobsBinary => gaussian_blobs_binary(size, 2.0, seed),
            SynthKind::BlobsOverlap => gaussian_blobs_binary(size, 0.5, seed),
            SynthKind::BlobsMulti => gaussian_blobs_multi(size, 10, seed),
            SynthKind::GlyphGrid => glyph_grid(size, seed),
            SynthKind::TokensGroup => token_groups(size, seed),
        };
        d.with_name(self.name())
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = SynthKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown dataset kind '{s}' (known: {})", known.join(", "))
            })
    }
}

fn id(i: usize) -> String {
    format!("{i:06}")
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Binary Gaussians with means `±(offset, offset)` and unit variance.
pub fn gaussian_blobs_binary(n: usize, offset: f64, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed);
    let instances = (0..n)
        .map(|i| {
            let label = (i % 2) as Label;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            let x = vec![
                sign * offset + normal(&mut rng),
                sign * offset + normal(&mut rng),
            ];
            Instance::new(id(i), x, label)
        })
        .collect();
    Dataset::new("blobs-binary", vec![0, 1], None, instances).expect("generated dataset is valid")
}

/// Separation between multi-class blob centres along each axis.
pub const MULTI_SEPARATION: f64 = 2.5;

/// `classes` unit-variance Gaussians centred at `MULTI_SEPARATION * e_k` in
/// `classes` dimensions.
pub fn gaussian_blobs_multi(n: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed);
    let instances = (0..n)
        .map(|i| {
            let k = i % classes;
            let x = (0..classes)
                .map(|j| normal(&mut rng) + if j == k { MULTI_SEPARATION } else { 0.0 })
                .collect();
            Instance::new(id(i), x, k as Label)
        })
        .collect();
    Dataset::new(
        "blobs-multi",
        (0..classes as Label).collect(),
        None,
        instances,
    )
    .expect("generated dataset is valid")
}

const GLYPH: usize = 12;

/// Fixed 12×12 stroke templates, one per digit-like class.
fn glyph_template(class: usize) -> Vec<f64> {
    let mut img = vec![0.0; GLYPH * GLYPH];
    let mut set = |r: usize, c: usize| img[r * GLYPH + c] = 1.0;
    let (top, bottom, left, right, mid) = (2, 9, 3, 8, 5);
    let hline =
        |set: &mut dyn FnMut(usize, usize), r: usize| (left..=right).for_each(|c| set(r, c));
    let vline = |set: &mut dyn FnMut(usize, usize), c: usize, r0: usize, r1: usize| {
        (r0..=r1).for_each(|r| set(r, c))
    };
    // seven-segment layout plus a diagonal for a few classes
    let segments: [&[u8]; 10] = [
        b"abcdef", b"bc", b"abged", b"abgcd", b"fgbc", b"afgcd", b"afgedc", b"abc", b"abcdefg",
        b"abcdfg",
    ];
    for &s in segments[class % 10] {
        match s {
            b'a' => hline(&mut set, top),
            b'd' => hline(&mut set, bottom),
            b'g' => hline(&mut set, mid),
            b'b' => vline(&mut set, right, top, mid),
            b'c' => vline(&mut set, right, mid, bottom),
            b'e' => vline(&mut set, left, mid, bottom),
            b'f' => vline(&mut set, left, top, mid),
            _ => {}
        }
    }
    if class % 10 == 7 {
        for k in 0..4 {
            set(mid + k, right - 1 - k);
        }
    }
    img
}

/// Ten glyph classes on a 12×12×1 grid, shifted by up to one pixel and
/// perturbed with Gaussian pixel noise (σ = 0.3), clipped to `[0, 1]`.
pub fn glyph_grid(n: usize, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed);
    let templates: Vec<Vec<f64>> = (0..10).map(glyph_template).collect();
    let instances = (0..n)
        .map(|i| {
            let k = i % 10;
            let dr = rng.random_range(-1i64..=1) as isize;
            let dc = rng.random_range(-1i64..=1) as isize;
            let mut x = vec![0.0; GLYPH * GLYPH];
            for r in 0..GLYPH {
                for c in 0..GLYPH {
                    let (sr, sc) = (r as isize - dr, c as isize - dc);
                    let base =
                        if (0..GLYPH as isize).contains(&sr) && (0..GLYPH as isize).contains(&sc) {
                            templates[k][sr as usize * GLYPH + sc as usize]
                        } else {
                            0.0
                        };
                    x[r * GLYPH + c] = (base + 0.3 * normal(&mut rng)).clamp(0.0, 1.0);
                }
            }
            Instance::new(id(i), x, k as Label)
        })
        .collect();
    Dataset::new(
        "glyph-grid",
        (0..10).collect(),
        Some([GLYPH, GLYPH, 1]),
        instances,
    )
    .expect("generated dataset is valid")
}

/// Vocabulary layout of [`token_groups`].
pub mod vocab {
    use std::ops::Range;
    pub const GENERIC_POS: Range<usize> = 0..10;
    pub const GENERIC_NEG: Range<usize> = 10..20;
    pub const FILLER: Range<usize> = 20..40;
    pub const COMEDY_MARKER: usize = 40;
    pub const COMEDY_POS: Range<usize> = 41..46;
    pub const COMEDY_NEG: Range<usize> = 46..51;
    pub const SIZE: usize = 51;
}

/// Binary sentiment over a 51-token vocabulary, counts as features.
///
/// Every fifth document is a comedy review: it carries the comedy marker token
/// and the `genre:comedy` tag, and expresses sentiment mostly through
/// comedy-specific tokens. Other reviews use the generic sentiment tokens.
pub fn token_groups(n: usize, seed: u64) -> Dataset {
    use vocab::*;
    let mut rng = seed::rng(seed);
    let instances = (0..n)
        .map(|i| {
            let label = ((i / 5) % 2) as Label;
            let comedy = i % 5 == 0;
            let mut x = vec![0.0; SIZE];
            let (own, other) = match (comedy, label) {
                (false, 1) => (GENERIC_POS, GENERIC_NEG),
                (false, _) => (GENERIC_NEG, GENERIC_POS),
                (true, 1) => (COMEDY_POS, COMEDY_NEG),
                (true, _) => (COMEDY_NEG, COMEDY_POS),
            };
            let generic_own = if label == 1 { GENERIC_POS } else { GENERIC_NEG };
            if comedy {
                x[COMEDY_MARKER] += 1.0;
            }
            for _ in 0..12 {
                let u: f64 = rng.random();
                let token = if u < 0.22 {
                    rng.random_range(own.clone())
                } else if u < 0.30 {
                    rng.random_range(other.clone())
                } else if comedy && u < 0.33 {
                    rng.random_range(generic_own.clone())
                } else {
                    rng.random_range(FILLER)
                };
                x[token] += 1.0;
            }
            let mut inst = Instance::new(id(i), x, label);
            if comedy {
                inst.groups = Some(vec![COMEDY_TAG.to_string()]);
            }
            inst
        })
        .collect();
    Dataset::new("tokens-group", vec![0, 1], None, instances).expect("generated dataset is valid")
}
