//! Grayscale image and label ingestion.
//!
//! IDX files use big-endian integers: magic `0x00000803` followed by
//! `count, rows, cols` for images, or magic `0x00000801` followed by `count`
//! for labels, then one unsigned byte per pixel or label. PGM support covers
//! binary `P5` files with `maxval <= 255`.

use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, ParseError, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Largest payload (in bytes) an IDX or PGM header may announce.
const MAX_PAYLOAD: usize = 1 << 31;

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Tensor>,
    labels: Vec<Tensor>,
    class_count: usize,
}

impl Dataset {
    /// Checks that lists line up, images share one shape, and labels are one-hot.
    pub fn new(images: Vec<Tensor>, labels: Vec<Tensor>, class_count: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if first.rank() != 3 {
                return Err(Error::Shape(format!(
                    "images must be rank 3, got {:?}",
                    first.shape()
                )));
            }
            if let Some(bad) = images.iter().find(|t| t.shape() != first.shape()) {
                return Err(Error::Shape(format!(
                    "mixed image extents {:?} and {:?}",
                    first.shape(),
                    bad.shape()
                )));
            }
        }
        for (i, label) in labels.iter().enumerate() {
            let one_hot = label.shape() == [class_count]
                && label.data().iter().all(|&v| v == 0.0 || v == 1.0)
                && label.sum() == 1.0;
            if !one_hot {
                return Err(Error::Domain(format!(
                    "label {i} is not a one-hot vector over {class_count} classes"
                )));
            }
        }
        Ok(Self {
            images,
            labels,
            class_count,
        })
    }

    /// Normalizes raw images and one-hot encodes class indices.
    pub fn from_raw(images: &[RawImage], classes: &[u8], class_count: usize) -> Result<Self> {
        let labels = classes
            .iter()
            .map(|&c| one_hot(usize::from(c), class_count))
            .collect::<Result<Vec<_>>>()?;
        Self::new(images.iter().map(normalize).collect(), labels, class_count)
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[Tensor] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Shape shared by every image, if any.
    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(Tensor::shape)
    }

    /// The first `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
        }
    }

    /// Class index of each label.
    pub fn classes(&self) -> Vec<usize> {
        self.labels.iter().map(Tensor::argmax).collect()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &str) -> std::result::Result<&'a [u8], ParseError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ParseError::Truncated {
                section: section.to_string(),
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self, section: &str) -> std::result::Result<u32, ParseError> {
        let b = self.take(4, section)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(&self) -> std::result::Result<(), ParseError> {
        let extra = self.bytes.len() - self.pos;
        if extra > 0 {
            return Err(ParseError::Header(format!(
                "{extra} trailing bytes after payload"
            )));
        }
        Ok(())
    }
}

fn read_all(mut source: impl Read) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| ParseError::Io(e.to_string()))?;
    Ok(bytes)
}

fn check_magic(found: u32, expected: u32) -> std::result::Result<(), ParseError> {
    if found != expected {
        return Err(ParseError::BadMagic {
            expected: format!("{expected:#010x}"),
            found: format!("{found:#010x}"),
        });
    }
    Ok(())
}

fn checked_size(dims: &[usize]) -> std::result::Result<usize, ParseError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_PAYLOAD)
        .ok_or_else(|| {
            ParseError::Overflow(format!("dimensions {dims:?} exceed {MAX_PAYLOAD} bytes"))
        })
}

pub fn load_idx_images(source: impl Read) -> Result<Vec<RawImage>> {
    let bytes = read_all(source)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    check_magic(cur.u32_be("magic")?, IDX_IMAGES_MAGIC)?;
    let count = cur.u32_be("image count")? as usize;
    let height = cur.u32_be("row count")? as usize;
    let width = cur.u32_be("column count")? as usize;
    if height == 0 || width == 0 {
        return Err(ParseError::Header(format!("zero image extent {height}x{width}")).into());
    }
    let plane = height * width;
    let payload = cur.take(checked_size(&[count, height, width])?, "image payload")?;
    cur.finish()?;
    Ok(payload
        .chunks_exact(plane)
        .map(|p| RawImage {
            height,
            width,
            pixels: p.to_vec(),
        })
        .collect())
}

pub fn load_idx_labels(source: impl Read) -> Result<Vec<u8>> {
    let bytes = read_all(source)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    check_magic(cur.u32_be("magic")?, IDX_LABELS_MAGIC)?;
    let count = cur.u32_be("label count")? as usize;
    let payload = cur.take(checked_size(&[count])?, "label payload")?;
    cur.finish()?;
    Ok(payload.to_vec())
}

/// Encodes images as an IDX image file. All images must share one extent.
pub fn write_idx_images(images: &[RawImage]) -> Result<Vec<u8>> {
    let (h, w) = images.first().map_or((1, 1), |i| (i.height, i.width));
    if images
        .iter()
        .any(|i| i.height != h || i.width != w || i.pixels.len() != h * w)
    {
        return Err(Error::Shape("IDX images must share one extent".into()));
    }
    let mut out = Vec::with_capacity(16 + images.len() * h * w);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for image in images {
        out.extend_from_slice(&image.pixels);
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn pgm_token<'a>(cur: &mut Cursor<'a>) -> std::result::Result<&'a [u8], ParseError> {
    let bytes = cur.bytes;
    loop {
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            Some(b'#') => {
                while bytes
                    .get(cur.pos)
                    .is_some_and(|&b| b != b'\n' && b != b'\r')
                {
                    cur.pos += 1;
                }
            }
            Some(_) => break,
            None => {
                return Err(ParseError::Truncated {
                    section: "PGM header".into(),
                    needed: 1,
                    available: 0,
                })
            }
        }
    }
    let start = cur.pos;
    while bytes
        .get(cur.pos)
        .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
    {
        cur.pos += 1;
    }
    Ok(&bytes[start..cur.pos])
}

fn pgm_number(cur: &mut Cursor<'_>, what: &str) -> std::result::Result<usize, ParseError> {
    let tok = pgm_token(cur)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| {
            ParseError::Header(format!(
                "PGM {what} is not a number: {:?}",
                String::from_utf8_lossy(tok)
            ))
        })
}

pub fn load_pgm(source: impl Read) -> Result<RawImage> {
    let bytes = read_all(source)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let sig = cur.take(2, "PGM signature")?;
    if sig != b"P5" {
        return Err(ParseError::BadMagic {
            expected: "P5".into(),
            found: String::from_utf8_lossy(sig).into_owned(),
        }
        .into());
    }
    let width = pgm_number(&mut cur, "width")?;
    let height = pgm_number(&mut cur, "height")?;
    let maxval = pgm_number(&mut cur, "maxval")?;
    if width == 0 || height == 0 {
        return Err(ParseError::Header(format!("zero PGM extent {width}x{height}")).into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(ParseError::Header(format!("PGM maxval {maxval} outside 1..=255")).into());
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ParseError::Header("missing whitespace before PGM raster".into()).into()),
    }
    let pixels = cur
        .take(checked_size(&[height, width])?, "PGM raster")?
        .to_vec();
    Ok(RawImage {
        height,
        width,
        pixels,
    })
}

pub fn write_pgm(image: &RawImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

/// Scales pixels to `[0, 1]` and prepends a unit channel axis.
pub fn normalize(image: &RawImage) -> Tensor {
    let data = image.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Tensor::from_vec(&[1, image.height, image.width], data).expect("non-empty image")
}

pub fn one_hot(index: usize, class_count: usize) -> Result<Tensor> {
    if index >= class_count {
        return Err(Error::Domain(format!(
            "class index {index} out of range for {class_count} classes"
        )));
    }
    let mut v = vec![0.0; class_count];
    v[index] = 1.0;
    Tensor::from_vec(&[class_count], v)
}

/// Two-class toy data: even samples hold one horizontal bar (class 0), odd
/// samples one vertical bar (class 1), on uniform noise in `[0, 0.1)`.
pub fn synth_bars(n: usize, h: usize, w: usize, seed: u64) -> Result<Dataset> {
    if h < 4 || w < 4 {
        return Err(Error::Domain(format!(
            "bar images need at least 4x4, got {h}x{w}"
        )));
    }
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "sample count must be positive and even, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut pixels: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..0.1)).collect();
        let class = i % 2;
        if class == 0 {
            let row = rng.gen_range(0..h);
            pixels[row * w..(row + 1) * w].fill(1.0);
        } else {
            let col = rng.gen_range(0..w);
            for r in 0..h {
                pixels[r * w + col] = 1.0;
            }
        }
        images.push(Tensor::from_vec(&[1, h, w], pixels)?);
        labels.push(one_hot(class, 2)?);
    }
    Dataset::new(images, labels, 2)
}
