//! Binary model file.
//!
//! Little-endian throughout, no padding between sections:
//!
//! ```text
//! "CNNF"  u32 version (= 1)
//! u32 × 8 conv H, W, C, k_h, k_w, K_D, Z_S, Z_P
//! u32 × 2 pool k, Z_S
//! u32     dense layer count, then per layer: u32 n_in, u32 n_out, u8 activation tag
//! f64 …   conv kernels (filter-major), conv biases, then per dense layer W (row-major), b
//! ```

use std::io::{Read, Write};

use crate::activations::Activation;
use crate::error::{Error, ParseError, Result};
use crate::layers::{ConvGeometry, DenseLayer, KernelBank, PoolGeometry};
use crate::network::Network;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CNNF";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let g = net.conv().geometry();
    let pool = net.pool();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let header = [
        VERSION as usize,
        g.in_h,
        g.in_w,
        g.in_c,
        g.k_h,
        g.k_w,
        g.n_kernels,
        g.stride,
        g.pad,
        pool.window,
        pool.stride,
        net.dense().len(),
    ];
    for v in header {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for layer in net.dense() {
        out.extend_from_slice(&(layer.n_in() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.n_out() as u32).to_le_bytes());
        out.push(layer.activation().tag());
    }
    let mut put = |values: &[f64]| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    put(net.conv().kernels());
    put(net.conv().biases());
    for layer in net.dense() {
        put(layer.weights().data());
        put(layer.biases().data());
    }
    out
}

pub fn write_model(net: &Network, mut sink: impl Write) -> Result<()> {
    sink.write_all(&to_bytes(net))
        .map_err(|e| Error::from(ParseError::Io(e.to_string())))
}

pub fn read_model(mut source: impl Read) -> Result<Network> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| ParseError::Io(e.to_string()))?;
    from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
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

    fn u32(&mut self, section: &str) -> std::result::Result<usize, ParseError> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize, section: &str) -> std::result::Result<Vec<f64>, ParseError> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| ParseError::Overflow(format!("{section}: {n} values")))?;
        let b = self.take(len, section)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn extent(e: Error) -> Error {
    match e {
        Error::Parse(p) => Error::Parse(p),
        other => ParseError::Extent(other.to_string()).into(),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(ParseError::BadMagic {
            expected: "CNNF".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        }
        .into());
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(ParseError::Version(version as u32).into());
    }
    let mut conv = [0usize; 8];
    for v in &mut conv {
        *v = r.u32("conv geometry")?;
    }
    let [in_h, in_w, in_c, k_h, k_w, n_kernels, stride, pad] = conv;
    let geometry = ConvGeometry {
        in_c,
        in_h,
        in_w,
        k_h,
        k_w,
        n_kernels,
        stride,
        pad,
    };
    let pool = PoolGeometry {
        window: r.u32("pool geometry")?,
        stride: r.u32("pool geometry")?,
    };
    let count = r.u32("dense count")?;
    // every layer header takes 9 bytes, so a count beyond that is already truncated
    if count > bytes.len() / 9 {
        return Err(ParseError::Truncated {
            section: "dense headers".into(),
            needed: count.saturating_mul(9),
            available: bytes.len() - r.pos,
        }
        .into());
    }
    let mut shapes = Vec::with_capacity(count);
    for l in 0..count {
        let section = format!("dense {l} header");
        let n_in = r.u32(&section)?;
        let n_out = r.u32(&section)?;
        let tag = r.take(1, &section)?[0];
        let activation = Activation::from_tag(tag).ok_or_else(|| {
            ParseError::Header(format!("unknown activation tag {tag} in dense layer {l}"))
        })?;
        shapes.push((n_in, n_out, activation));
    }

    geometry.output_dims().map_err(extent)?;
    let kernels = r.f64s(geometry.kernel_len(), "conv kernels")?;
    let biases = r.f64s(n_kernels, "conv biases")?;
    let bank = KernelBank::new(geometry, kernels, biases).map_err(extent)?;
    let mut dense = Vec::with_capacity(count);
    for (l, &(n_in, n_out, activation)) in shapes.iter().enumerate() {
        let n = n_in
            .checked_mul(n_out)
            .ok_or_else(|| ParseError::Overflow(format!("dense {l}: {n_in}x{n_out}")))?;
        let w = r.f64s(n, &format!("dense {l} weights"))?;
        let b = r.f64s(n_out, &format!("dense {l} biases"))?;
        let weights = Tensor::from_vec(&[n_out, n_in], w).map_err(extent)?;
        let biases = Tensor::from_vec(&[n_out], b).map_err(extent)?;
        dense.push(DenseLayer::new(weights, biases, activation).map_err(extent)?);
    }
    if r.pos != bytes.len() {
        return Err(ParseError::Extent(format!(
            "{} trailing bytes after the last parameter array",
            bytes.len() - r.pos
        ))
        .into());
    }
    Network::new(bank, pool, dense).map_err(extent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    fn small() -> Network {
        let arch = Architecture {
            in_c: 1,
            in_h: 8,
            in_w: 8,
            conv_kernels: 2,
            conv_size: 3,
            conv_stride: 1,
            conv_pad: 0,
            pool_window: 2,
            pool_stride: 2,
            dense_widths: vec![8, 2],
        };
        Network::init(&arch, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let net = small();
        let bytes = to_bytes(&net);
        // header 4 + 12*4, two layer headers 2*9, then (18+2+144+8+16+2) f64
        assert_eq!(bytes.len(), 4 + 48 + 18 + 190 * 8);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back), bytes);
        assert_eq!(back, net);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = to_bytes(&small());
        bytes[0] = b'X';
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Parse(ParseError::BadMagic { .. }))
        ));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = to_bytes(&small());
        bytes[4] = 2;
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Parse(ParseError::Version(2)))
        ));
    }

    #[test]
    fn truncation_names_section() {
        let bytes = to_bytes(&small());
        let cut = &bytes[..bytes.len() - 20];
        match from_bytes(cut) {
            Err(Error::Parse(ParseError::Truncated { section, .. })) => {
                assert_eq!(section, "dense 1 weights")
            }
            other => panic!("{other:?}"),
        }
        match from_bytes(&bytes[..80]) {
            Err(Error::Parse(ParseError::Truncated { section, .. })) => {
                assert_eq!(section, "conv kernels")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_extents() {
        let mut bytes = to_bytes(&small());
        // first dense n_in lives right after the 4-byte magic and 12 u32 header words
        bytes[52] = 17;
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Parse(ParseError::Extent(_)) | Error::Parse(ParseError::Truncated { .. }))
        ));
        let mut bytes = to_bytes(&small());
        bytes.push(0);
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Parse(ParseError::Extent(_)))
        ));
        let mut bytes = to_bytes(&small());
        bytes[60] = 9; // activation tag of dense 0
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Parse(ParseError::Header(_)))
        ));
    }

    #[test]
    fn documented_example_loads() {
        let hex = "434e4e46010000000400000004000000010000000100000001000000010000000100000000000000\
                   020000000200000001000000040000000100000000000000000000f03f000000000000000000000000\
                   0000d03f000000000000d03f000000000000d03f000000000000d03f000000000000e0bf";
        let bytes: Vec<u8> = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap())
            .collect();
        assert_eq!(bytes.len(), 117);
        let net = from_bytes(&bytes).unwrap();
        assert_eq!(net.input_shape(), [1, 4, 4]);
        let y = net
            .predict(&Tensor::filled(&[1, 4, 4], 1.0).unwrap())
            .unwrap();
        assert!((y.data()[0] - crate::activations::sigmoid(0.5)).abs() < 1e-15);
        assert_eq!(to_bytes(&net), bytes);
    }
}
