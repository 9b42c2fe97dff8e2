//! A minimal weight container standing in for a model checkpoint.
//!
//! ```text
//! "TWC1" | tensor_count u32 | per tensor: dtype u8 (0 = f32, 1 = f16),
//!        element_count u64, little-endian payload
//! ```

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CompressionOutcome, ManifestEntry, StealthError};

const MAGIC: &[u8; 4] = b"TWC1";
/// Bytes of one tensor header.
pub const TENSOR_HEADER: u64 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn width(self) -> u64 {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }

    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor {
    pub dtype: DType,
    /// Raw little-endian payload, `dtype.width()` bytes per element.
    pub payload: Vec<u8>,
}

impl Tensor {
    pub fn from_f32(values: &[f32]) -> Self {
        Tensor {
            dtype: DType::F32,
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn len(&self) -> u64 {
        self.payload.len() as u64 / self.dtype.width()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    /// Element values widened to f32.
    pub fn values(&self) -> Vec<f32> {
        match self.dtype {
            DType::F32 => self
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F16 => self
                .payload
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyWeightFile {
    pub tensors: Vec<Tensor>,
}

impl ToyWeightFile {
    pub fn parse(data: &[u8]) -> Result<Self, StealthError> {
        let bad = |why: &str| StealthError::Malformed(why.to_string());
        if data.len() < 8 || &data[..4] != MAGIC {
            return Err(bad("missing TWC1 magic"));
        }
        let count = u32::from_le_bytes(data[4..8].try_into().unwrap());
        let mut pos = 8usize;
        let mut tensors = Vec::new();
        for i in 0..count {
            let header = data
                .get(pos..pos + TENSOR_HEADER as usize)
                .ok_or_else(|| bad(&format!("tensor {i} header truncated")))?;
            let dtype = match header[0] {
                0 => DType::F32,
                1 => DType::F16,
                t => return Err(bad(&format!("tensor {i} has unknown dtype {t}"))),
            };
            let elements = u64::from_le_bytes(header[1..9].try_into().unwrap());
            pos += TENSOR_HEADER as usize;
            let len = elements
                .checked_mul(dtype.width())
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| bad(&format!("tensor {i} is too large")))?;
            let payload = data
                .get(pos..pos.saturating_add(len))
                .ok_or_else(|| bad(&format!("tensor {i} payload truncated")))?;
            pos += len;
            tensors.push(Tensor {
                dtype,
                payload: payload.to_vec(),
            });
        }
        if pos != data.len() {
            return Err(bad(&format!("{} trailing bytes", data.len() - pos)));
        }
        Ok(ToyWeightFile { tensors })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len() as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.push(t.dtype.tag());
            out.extend_from_slice(&t.len().to_le_bytes());
            out.extend_from_slice(&t.payload);
        }
        out
    }

    pub fn byte_len(&self) -> u64 {
        8 + self
            .tensors
            .iter()
            .map(|t| TENSOR_HEADER + t.payload.len() as u64)
            .sum::<u64>()
    }

    /// A transformer-like stack: per layer a `width x width` matrix and a
    /// `width` bias, drawn like a fresh initialisation.
    pub fn synthetic(seed: u64, layers: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = move || {
            // Box-Muller; weights around 0.02, the usual init scale.
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            let v: f64 = rng.gen();
            (0.02 * (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()) as f32
        };
        let mut tensors = Vec::new();
        for _ in 0..layers {
            let w: Vec<f32> = (0..width * width).map(|_| normal()).collect();
            let b: Vec<f32> = (0..width).map(|_| normal() * 0.1).collect();
            tensors.push(Tensor::from_f32(&w));
            tensors.push(Tensor::from_f32(&b));
        }
        ToyWeightFile { tensors }
    }

    /// Round every f32 value to bfloat16 precision, keeping f32 storage. This
    /// is what a checkpoint trained in bf16 and saved in f32 looks like: the
    /// low two bytes of every value are zero.
    pub fn round_to_bf16(mut self) -> Self {
        for t in self.tensors.iter_mut().filter(|t| t.dtype == DType::F32) {
            for c in t.payload.chunks_exact_mut(4) {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                c.copy_from_slice(&half::bf16::from_f32(v).to_f32().to_le_bytes());
            }
        }
        self
    }

    /// Synthetic file of at most about `bytes` bytes, built from layers up to
    /// `width` wide. Below one full layer the width shrinks to fit.
    pub fn synthetic_of_size(seed: u64, bytes: u64, width: usize) -> Self {
        let per_layer = |w: usize| (w * w + w) as u64 * 4 + 2 * TENSOR_HEADER;
        let mut width = width.max(1);
        while width > 1 && per_layer(width) > bytes {
            width -= 1;
        }
        let layers = (bytes / per_layer(width)).max(1) as usize;
        Self::synthetic(seed, layers, width)
    }
}

/// Convert the fewest trailing f32 elements to f16 (round to nearest even)
/// that free at least `min_bytes_freed` bytes.
///
/// Whole trailing tensors are converted in place. When only part of a tensor
/// is needed, its tail becomes a new f16 tensor, and the extra header that
/// costs is paid for with more elements.
pub fn quantize_weights(file: &ToyWeightFile, min_bytes_freed: u64) -> Result<CompressionOutcome, StealthError> {
    let original = file.byte_len();
    let mut tensors = file.tensors.clone();
    let mut manifest = Vec::new();
    let mut freed = 0u64;
    let mut i = tensors.len();
    while freed < min_bytes_freed {
        if i == 0 {
            return Err(StealthError::InsufficientCapacity {
                wanted: min_bytes_freed,
                available: freed,
            });
        }
        i -= 1;
        if tensors[i].dtype != DType::F32 || tensors[i].is_empty() {
            continue;
        }
        let n = tensors[i].len();
        let need = min_bytes_freed - freed;
        let split = (need + TENSOR_HEADER).div_ceil(2);
        if 2 * n <= need || split >= n {
            tensors[i] = to_f16(&tensors[i]);
            freed += 2 * n;
            manifest.push(ManifestEntry::Quantized {
                tensor: i,
                elements: n,
                split: false,
            });
        } else {
            let keep = (n - split) as usize * 4;
            let tail = Tensor {
                dtype: DType::F32,
                payload: tensors[i].payload.split_off(keep),
            };
            tensors.insert(i + 1, to_f16(&tail));
            freed += 2 * split - TENSOR_HEADER;
            manifest.push(ManifestEntry::Quantized {
                tensor: i,
                elements: split,
                split: true,
            });
        }
    }
    let new_file = ToyWeightFile { tensors }.to_bytes();
    debug_assert_eq!(original - new_file.len() as u64, freed);
    manifest.reverse();
    Ok(CompressionOutcome {
        new_file,
        bytes_freed: freed,
        manifest,
    })
}

fn to_f16(t: &Tensor) -> Tensor {
    Tensor {
        dtype: DType::F16,
        payload: t
            .values()
            .iter()
            .flat_map(|&v| f16::from_f32(v).to_le_bytes())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sized_files_shrink_their_width() {
        let f = ToyWeightFile::synthetic_of_size(1, 1 << 20, 768);
        let len = f.byte_len();
        assert!(len <= 1 << 20 && len > (1 << 20) * 99 / 100, "{len}");
        assert_eq!(f.tensors[0].len(), 511 * 511);
        let big = ToyWeightFile::synthetic_of_size(1, 10 << 20, 768);
        assert_eq!(big.tensors.len(), 8);
    }

    #[test]
    fn parse_serialize_round_trip() {
        let f = ToyWeightFile::synthetic(1, 2, 8);
        let bytes = f.to_bytes();
        assert_eq!(bytes.len() as u64, f.byte_len());
        assert_eq!(ToyWeightFile::parse(&bytes).unwrap(), f);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let bytes = ToyWeightFile::synthetic(1, 1, 4).to_bytes();
        assert!(ToyWeightFile::parse(&bytes[..bytes.len() - 1]).is_err());
        assert!(ToyWeightFile::parse(b"TWC2\0\0\0\0").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ToyWeightFile::parse(&extra).is_err());
    }

    #[test]
    fn zero_request_is_identity() {
        let f = ToyWeightFile::synthetic(1, 1, 4);
        let out = quantize_weights(&f, 0).unwrap();
        assert_eq!(out.bytes_freed, 0);
        assert_eq!(out.new_file, f.to_bytes());
        assert!(out.manifest.is_empty());
    }

    #[test]
    fn whole_bias_tensor_frees_exactly_twice_its_length() {
        let f = ToyWeightFile::synthetic(2, 2, 768);
        let out = quantize_weights(&f, 1536).unwrap();
        assert_eq!(out.bytes_freed, 1536);
        assert_eq!(out.converted_elements(), 768);
    }

    #[test]
    fn partial_tensor_pays_for_its_header() {
        let f = ToyWeightFile::synthetic(2, 1, 100);
        let out = quantize_weights(&f, 40).unwrap();
        assert!(out.bytes_freed >= 40);
        assert_eq!(out.converted_elements(), 25);
        assert_eq!(out.manifest_delta(), out.bytes_freed);
        let parsed = ToyWeightFile::parse(&out.new_file).unwrap();
        assert_eq!(parsed.tensors.len(), 3);
    }

    #[test]
    fn bf16_rounding_clears_low_bytes() {
        let f = ToyWeightFile::synthetic(3, 1, 16).round_to_bf16();
        for c in f.tensors[0].payload.chunks_exact(4) {
            assert_eq!(&c[..2], &[0, 0]);
        }
    }

    #[test]
    fn one_is_exact_in_half_precision() {
        let f = ToyWeightFile {
            tensors: vec![Tensor::from_f32(&[1.0; 4])],
        };
        let out = quantize_weights(&f, 8).unwrap();
        let parsed = ToyWeightFile::parse(&out.new_file).unwrap();
        assert_eq!(parsed.tensors[0].values(), vec![1.0; 4]);
    }

    #[test]
    fn insufficient_capacity() {
        let f = ToyWeightFile {
            tensors: vec![Tensor::from_f32(&[1.0; 4])],
        };
        assert!(matches!(
            quantize_weights(&f, 9),
            Err(StealthError::InsufficientCapacity { .. })
        ));
    }
}
