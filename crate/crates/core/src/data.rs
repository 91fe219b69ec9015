//! MNIST IDX parsing and noisy digit-pair generation.
//!
//! The classifier consumes *pairs* of MNIST digits: two 28x28 images are
//! placed side by side (left image first, then right) and uniform noise in
//! [0, 0.7) is added to every pixel independently, without clipping, so
//! inputs live in [0, 1.7). Training pairs are unconstrained draws; test
//! pairs always combine digits that differ in *both* parity (even/odd) and
//! magnitude (low = 0-4, high = 5-9), so that every goal picks out exactly
//! one side of the pair.

use std::fs::File;
use std::io::{Read as _, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use rand::Rng;

use crate::error::{Error, Result};

/// Number of pixels per digit image.
pub const IMAGE_PIXELS: usize = 784;
/// Number of input values per pair (left image then right image).
pub const PAIR_INPUT: usize = 2 * IMAGE_PIXELS;
/// Upper bound of the additive uniform noise.
pub const NOISE_MAX: f64 = 0.7;

/// One labeled MNIST digit, pixels normalized from raw bytes by /255.
#[derive(Debug, Clone)]
pub struct DigitImage {
    pub pixels: Vec<f32>,
    pub label: u8,
}

/// A noise-added side-by-side digit pair. `input` holds the left image's
/// 784 values followed by the right image's 784 values.
#[derive(Debug, Clone)]
pub struct NoisyPair {
    pub input: Vec<f64>,
    pub left_label: u8,
    pub right_label: u8,
}

impl NoisyPair {
    pub fn label(&self, side: Side) -> u8 {
        match side {
            Side::Left => self.left_label,
            Side::Right => self.right_label,
        }
    }
}

/// Which half of a pair a digit sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// The two goal classes; each owns two of the four goals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalClass {
    Parity,
    Magnitude,
}

/// One of the four attentional goals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GoalId {
    Even,
    Odd,
    Low,
    High,
}

impl GoalId {
    /// All goals, in the canonical order used for indexing (ACh vectors,
    /// CSV columns): even, odd, low, high.
    pub const ALL: [GoalId; 4] = [GoalId::Even, GoalId::Odd, GoalId::Low, GoalId::High];

    pub fn class(self) -> GoalClass {
        match self {
            GoalId::Even | GoalId::Odd => GoalClass::Parity,
            GoalId::Low | GoalId::High => GoalClass::Magnitude,
        }
    }

    /// The opposite goal within the same class (the contrast subgoal).
    pub fn contrast(self) -> GoalId {
        match self {
            GoalId::Even => GoalId::Odd,
            GoalId::Odd => GoalId::Even,
            GoalId::Low => GoalId::High,
            GoalId::High => GoalId::Low,
        }
    }

    /// Canonical index into 4-element goal arrays.
    pub fn index(self) -> usize {
        match self {
            GoalId::Even => 0,
            GoalId::Odd => 1,
            GoalId::Low => 2,
            GoalId::High => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<GoalId> {
        GoalId::ALL.get(i).copied()
    }

    /// Index within the goal's own class: even/low -> 0, odd/high -> 1.
    /// Matches the within-head output neuron layout.
    pub fn subgoal_index(self) -> usize {
        match self {
            GoalId::Even | GoalId::Low => 0,
            GoalId::Odd | GoalId::High => 1,
        }
    }

    /// Does `digit` carry this goal's attribute?
    pub fn matches(self, digit: u8) -> bool {
        match self {
            GoalId::Even => digit % 2 == 0,
            GoalId::Odd => digit % 2 == 1,
            GoalId::Low => digit <= 4,
            GoalId::High => digit >= 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GoalId::Even => "even",
            GoalId::Odd => "odd",
            GoalId::Low => "low",
            GoalId::High => "high",
        }
    }
}

impl std::fmt::Display for GoalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GoalId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(GoalId::Even),
            "odd" => Ok(GoalId::Odd),
            "low" => Ok(GoalId::Low),
            "high" => Ok(GoalId::High),
            other => Err(Error::Precondition(format!(
                "unknown goal {other:?} (expected even, odd, low or high)"
            ))),
        }
    }
}

/// Parity target index for a digit: even -> 0, odd -> 1.
pub fn parity_index(digit: u8) -> usize {
    (digit % 2) as usize
}

/// Magnitude target index for a digit: low (0-4) -> 0, high (5-9) -> 1.
pub fn magnitude_index(digit: u8) -> usize {
    usize::from(digit > 4)
}

/// Do two digits differ in both parity and magnitude class? This is the
/// validity predicate for test pairs.
pub fn digits_cross_classes(a: u8, b: u8) -> bool {
    parity_index(a) != parity_index(b) && magnitude_index(a) != magnitude_index(b)
}

/// A set of digit images with an index of the four (parity x magnitude)
/// cells, so complementary test digits can be drawn in O(1).
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<DigitImage>,
    // Cell layout: [even-low, even-high, odd-low, odd-high];
    // the complement of cell c (flip both attributes) is 3 - c.
    cells: [Vec<usize>; 4],
}

fn cell_of(digit: u8) -> usize {
    parity_index(digit) * 2 + magnitude_index(digit)
}

impl Dataset {
    pub fn new(images: Vec<DigitImage>) -> Self {
        let mut cells: [Vec<usize>; 4] = Default::default();
        for (i, img) in images.iter().enumerate() {
            cells[cell_of(img.label)].push(i);
        }
        Dataset { images, cells }
    }

    /// Load a dataset from an IDX image file and its matching label file.
    /// Either file may be gzip-compressed (detected by a `.gz` extension).
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let pixels = parse_idx_images(&read_maybe_gz(images_path)?)?;
        let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
        if pixels.len() != labels.len() {
            return Err(Error::Precondition(format!(
                "image count {} does not match label count {}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Dataset::new(
            pixels
                .into_iter()
                .zip(labels)
                .map(|(pixels, label)| DigitImage { pixels, label })
                .collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &DigitImage {
        &self.images[i]
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.images.is_empty() {
            Err(Error::Precondition("dataset is empty".into()))
        } else {
            Ok(())
        }
    }

    fn require_all_cells(&self) -> Result<()> {
        for (c, cell) in self.cells.iter().enumerate() {
            if cell.is_empty() {
                let names = ["even-low", "even-high", "odd-low", "odd-high"];
                return Err(Error::Precondition(format!(
                    "dataset has no {} digits, cannot build test pairs",
                    names[c]
                )));
            }
        }
        Ok(())
    }
}

/// Read a whole file, transparently gunzipping when the path ends in `.gz`.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        file.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    if bytes.len() < offset + 4 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("file truncated while reading {what}"),
        });
    }
    Ok(BigEndian::read_u32(&bytes[offset..offset + 4]))
}

/// Parse an IDX image file (magic 0x00000803) into per-image pixel vectors,
/// normalized to [0, 1] by dividing raw bytes by 255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    let magic = read_be_u32(bytes, 0, "image magic")?;
    if magic != 0x0000_0803 {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic 0x{magic:08x}, expected 0x00000803"),
        });
    }
    let count = read_be_u32(bytes, 4, "image count")? as usize;
    let rows = read_be_u32(bytes, 8, "row count")?;
    let cols = read_be_u32(bytes, 12, "column count")?;
    if rows != 28 {
        return Err(Error::Format {
            offset: 8,
            message: format!("expected 28 rows, got {rows}"),
        });
    }
    if cols != 28 {
        return Err(Error::Format {
            offset: 12,
            message: format!("expected 28 columns, got {cols}"),
        });
    }
    let expected = 16 + count * IMAGE_PIXELS;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "image payload truncated: need {expected} bytes for {count} images, have {}",
                bytes.len()
            ),
        });
    }
    Ok(bytes[16..expected]
        .chunks_exact(IMAGE_PIXELS)
        .map(|chunk| chunk.iter().map(|&b| f32::from(b) / 255.0).collect())
        .collect())
}

/// Parse an IDX label file (magic 0x00000801) into digit labels.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0, "label magic")?;
    if magic != 0x0000_0801 {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic 0x{magic:08x}, expected 0x00000801"),
        });
    }
    let count = read_be_u32(bytes, 4, "label count")? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "label payload truncated: need {expected} bytes for {count} labels, have {}",
                bytes.len()
            ),
        });
    }
    let labels = &bytes[8..expected];
    for (i, &label) in labels.iter().enumerate() {
        if label > 9 {
            return Err(Error::Format {
                offset: (8 + i) as u64,
                message: format!("label byte {label} is not a digit"),
            });
        }
    }
    Ok(labels.to_vec())
}

/// Add independent per-pixel uniform noise in [0, 0.7) to an image.
/// No clipping: outputs live in [0, 1.7).
pub fn add_noise<R: Rng>(image: &DigitImage, rng: &mut R) -> Vec<f64> {
    image
        .pixels
        .iter()
        .map(|&p| f64::from(p) + rng.gen_range(0.0..NOISE_MAX))
        .collect()
}

fn assemble_pair<R: Rng>(left: &DigitImage, right: &DigitImage, rng: &mut R) -> NoisyPair {
    let mut input = add_noise(left, rng);
    input.extend(add_noise(right, rng));
    NoisyPair {
        input,
        left_label: left.label,
        right_label: right.label,
    }
}

/// Draw an unconstrained training pair: two images uniformly (with
/// replacement) from the dataset, left drawn first, then per-pixel noise
/// (left image first).
pub fn make_training_pair<R: Rng>(dataset: &Dataset, rng: &mut R) -> Result<NoisyPair> {
    dataset.require_nonempty()?;
    let left = &dataset.images[rng.gen_range(0..dataset.len())];
    let right = &dataset.images[rng.gen_range(0..dataset.len())];
    Ok(assemble_pair(left, right, rng))
}

/// Draw a test pair whose two digits differ in both parity and magnitude.
///
/// One image is drawn uniformly from the whole dataset, its partner
/// uniformly from the complementary (parity x magnitude) cell, and the two
/// are assigned to left/right by a fair coin.
pub fn make_test_pair<R: Rng>(dataset: &Dataset, rng: &mut R) -> Result<NoisyPair> {
    dataset.require_all_cells()?;
    let first = rng.gen_range(0..dataset.len());
    let first_cell = cell_of(dataset.images[first].label);
    let partner_pool = &dataset.cells[3 - first_cell];
    let partner = partner_pool[rng.gen_range(0..partner_pool.len())];
    let (left, right) = if rng.gen::<bool>() {
        (first, partner)
    } else {
        (partner, first)
    };
    Ok(assemble_pair(
        &dataset.images[left],
        &dataset.images[right],
        rng,
    ))
}

/// The digit (and its side) that a goal singles out in a valid test pair.
/// Errors if zero or both sides match the goal, which signals the pair did
/// not satisfy the test-pair constraints.
pub fn goal_digit_of(pair: &NoisyPair, goal: GoalId) -> Result<(u8, Side)> {
    let left = goal.matches(pair.left_label);
    let right = goal.matches(pair.right_label);
    match (left, right) {
        (true, false) => Ok((pair.left_label, Side::Left)),
        (false, true) => Ok((pair.right_label, Side::Right)),
        _ => Err(Error::Precondition(format!(
            "goal {goal} is ambiguous for pair ({}, {})",
            pair.left_label, pair.right_label
        ))),
    }
}

/// Dump pairs in the debug interchange format: per pair, 1568 little-endian
/// f32 input values followed by the two label bytes.
pub fn dump_pairs<W: Write>(pairs: &[NoisyPair], out: &mut W) -> Result<()> {
    for pair in pairs {
        for &v in &pair.input {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
        out.write_all(&[pair.left_label, pair.right_label])?;
    }
    Ok(())
}
