//! Bit-exact model container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PFSM"
//! 4       1     format version
//! 5       1     depth d
//! 6       2     feature map: 4 x 3-bit canonical IDs, MSB first, 4 zero bits
//! 8       32    scaler: (min, max) as f32 LE for each of the 4 slots
//! 40      n     core blob: (2^d - 1) x (2-bit slot, 16-bit threshold), then
//!               2^d x 4-bit leaf mask, MSB first, zero-padded to a byte
//! 40+n    ...   optional phase model section ("PHSE")
//! ```

use super::{DecisionTree, FeatureMap, Model, Split, TreeError, MAX_DEPTH, NUM_SLOTS};
use crate::phase::{PhaseError, PhaseModel, Scaler};
use crate::trace::{PrefetcherConfig, NUM_FEATURES};

pub const MAGIC: &[u8; 4] = b"PFSM";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 8;
const SCALER_LEN: usize = NUM_SLOTS * 8;

const SLOT_BITS: usize = 2;
const THRESHOLD_BITS: usize = 16;
const MASK_BITS: usize = 4;
const FEATURE_ID_BITS: usize = 3;
const THRESHOLD_MAX: f64 = u16::MAX as f64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("bad magic: not a model file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u8),
    #[error("bad length: expected {expected} bytes, found {found}")]
    BadLength { expected: usize, found: usize },
    #[error("corrupt model: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

/// Bits in the core blob of a complete tree of depth `depth`.
pub const fn core_blob_bits(depth: u8) -> usize {
    let leaves = 1usize << depth;
    (leaves - 1) * (SLOT_BITS + THRESHOLD_BITS) + leaves * MASK_BITS
}

pub const fn core_blob_len(depth: u8) -> usize {
    core_blob_bits(depth).div_ceil(8)
}

/// 16-bit fixed point, round to nearest.
pub fn quantize(threshold: f64) -> u16 {
    (threshold.clamp(0.0, 1.0) * THRESHOLD_MAX).round() as u16
}

pub fn dequantize(q: u16) -> f64 {
    q as f64 / THRESHOLD_MAX
}

struct BitWriter {
    bytes: Vec<u8>,
    bits: usize,
}

impl BitWriter {
    fn with_capacity(bytes: usize) -> Self {
        BitWriter {
            bytes: Vec::with_capacity(bytes),
            bits: 0,
        }
    }

    fn push(&mut self, value: u32, width: usize) {
        for i in (0..width).rev() {
            if self.bits.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> i) & 1 == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn take(&mut self, width: usize) -> u32 {
        let mut v = 0;
        for _ in 0..width {
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        v
    }
}

fn encode_core(tree: &DecisionTree) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(core_blob_len(tree.depth));
    for s in tree.splits() {
        w.push(s.slot as u32, SLOT_BITS);
        w.push(quantize(s.threshold) as u32, THRESHOLD_BITS);
    }
    for leaf in tree.leaves() {
        w.push(leaf.mask() as u32, MASK_BITS);
    }
    debug_assert_eq!(w.bits, core_blob_bits(tree.depth));
    w.bytes
}

fn decode_core(
    blob: &[u8],
    depth: u8,
    feature_map: FeatureMap,
) -> Result<DecisionTree, CodecError> {
    let mut r = BitReader {
        bytes: blob,
        pos: 0,
    };
    let n_leaves = 1usize << depth;
    let splits = (0..n_leaves - 1)
        .map(|_| {
            let slot = r.take(SLOT_BITS) as u8;
            let threshold = dequantize(r.take(THRESHOLD_BITS) as u16);
            Split { slot, threshold }
        })
        .collect();
    let leaves = (0..n_leaves)
        .map(|i| {
            let m = r.take(MASK_BITS) as u8;
            PrefetcherConfig::new(m).map_err(|e| CodecError::Corrupt(format!("leaf {i}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pad = blob.len() * 8 - r.pos;
    if r.take(pad) != 0 {
        return Err(CodecError::Corrupt("non-zero padding bits".into()));
    }
    Ok(DecisionTree::from_parts(
        depth,
        feature_map,
        splits,
        leaves,
    )?)
}

/// Just the bit-packed tree: 42 bytes at depth 4.
pub fn encode_core_blob(tree: &DecisionTree) -> Vec<u8> {
    encode_core(tree)
}

/// Full container: header, scaler block for the mapped features and core blob.
pub fn encode(tree: &DecisionTree, scaler: &Scaler) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + SCALER_LEN + core_blob_len(tree.depth));
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(tree.depth);
    let mut fm = BitWriter::with_capacity(2);
    for &f in tree.feature_map() {
        fm.push(f as u32, FEATURE_ID_BITS);
    }
    fm.push(0, 16 - NUM_SLOTS * FEATURE_ID_BITS);
    out.extend_from_slice(&fm.bytes);
    for &f in tree.feature_map() {
        let (lo, hi) = scaler.bounds()[f as usize];
        out.extend_from_slice(&(lo as f32).to_le_bytes());
        out.extend_from_slice(&(hi as f32).to_le_bytes());
    }
    out.extend_from_slice(&encode_core(tree));
    out
}

fn container_len(bytes: &[u8]) -> Result<usize, CodecError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::BadLength {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(CodecError::BadVersion(bytes[4]));
    }
    let depth = bytes[5];
    if depth == 0 || depth > MAX_DEPTH {
        return Err(CodecError::Corrupt(format!("depth {depth}")));
    }
    Ok(HEADER_LEN + SCALER_LEN + core_blob_len(depth))
}

/// Inverse of [`encode`]. The input must be exactly one container.
pub fn decode(bytes: &[u8]) -> Result<(DecisionTree, Scaler), CodecError> {
    let len = container_len(bytes)?;
    if bytes.len() != len {
        return Err(CodecError::BadLength {
            expected: len,
            found: bytes.len(),
        });
    }
    let depth = bytes[5];

    let mut fm = BitReader {
        bytes: &bytes[6..8],
        pos: 0,
    };
    let feature_map: FeatureMap = std::array::from_fn(|_| fm.take(FEATURE_ID_BITS) as u8);
    if fm.take(16 - NUM_SLOTS * FEATURE_ID_BITS) != 0 {
        return Err(CodecError::Corrupt("non-zero feature map padding".into()));
    }
    super::check_feature_map(&feature_map)?;

    let mut bounds = [(0.0, 0.0); NUM_FEATURES];
    for (slot, chunk) in bytes[HEADER_LEN..HEADER_LEN + SCALER_LEN]
        .chunks_exact(8)
        .enumerate()
    {
        let lo = f32::from_le_bytes(chunk[..4].try_into().unwrap()) as f64;
        let hi = f32::from_le_bytes(chunk[4..].try_into().unwrap()) as f64;
        bounds[feature_map[slot] as usize] = (lo, hi);
    }
    let scaler = Scaler::from_bounds(bounds)?;
    let tree = decode_core(&bytes[HEADER_LEN + SCALER_LEN..], depth, feature_map)?;
    Ok((tree, scaler))
}

/// On-disk `.pfm` file: the model container, optionally followed by the phase
/// model used to label its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    pub phases: Option<PhaseModel>,
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = encode(&self.model.tree, &self.model.scaler);
        if let Some(p) = &self.phases {
            out.extend_from_slice(&p.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let len = container_len(bytes)?;
        if bytes.len() < len {
            return Err(CodecError::BadLength {
                expected: len,
                found: bytes.len(),
            });
        }
        let (tree, scaler) = decode(&bytes[..len])?;
        let phases = if bytes.len() > len {
            let (p, used) = PhaseModel::from_bytes(&bytes[len..])?;
            if len + used != bytes.len() {
                return Err(CodecError::BadLength {
                    expected: len + used,
                    found: bytes.len(),
                });
            }
            Some(p)
        } else {
            None
        };
        Ok(ModelFile {
            model: Model { tree, scaler },
            phases,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_tree(rng: &mut ChaCha8Rng, depth: u8) -> DecisionTree {
        let n = 1usize << depth;
        let mut ids: Vec<u8> = (0..7).collect();
        for i in 0..4 {
            let j = rng.random_range(i..7);
            ids.swap(i, j);
        }
        DecisionTree::from_parts(
            depth,
            [ids[0], ids[1], ids[2], ids[3]],
            (0..n - 1)
                .map(|_| Split {
                    slot: rng.random_range(0..4),
                    threshold: rng.random(),
                })
                .collect(),
            (0..n)
                .map(|_| PrefetcherConfig::from_index(rng.random_range(0..12)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn scaler() -> Scaler {
        Scaler::from_bounds(std::array::from_fn(|i| (i as f64 * 0.5, 10.0 + i as f64))).unwrap()
    }

    #[test]
    fn size_law() {
        assert_eq!(core_blob_bits(4), 334);
        assert_eq!(core_blob_len(4), 42);
        assert_eq!(core_blob_bits(1), 26);
        assert_eq!(core_blob_bits(2), 3 * 18 + 16);
        for d in 1..=MAX_DEPTH {
            assert_eq!(core_blob_bits(d), ((1 << d) - 1) * 18 + (1 << d) * 4);
        }
    }

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 65535);
        assert_eq!(quantize(0.5), 32768);
        assert_eq!(dequantize(65535), 1.0);
    }

    #[test]
    fn known_bit_layout() {
        let t = DecisionTree::from_parts(
            1,
            [5, 0, 6, 1],
            vec![Split {
                slot: 2,
                threshold: 1.0,
            }],
            vec![PrefetcherConfig::new(0b0101).unwrap(), PrefetcherConfig::ON],
        )
        .unwrap();
        // 10 1111111111111111 0101 1111 + 6 pad bits
        assert_eq!(
            encode_core_blob(&t),
            vec![0b1011_1111, 0b1111_1111, 0b1101_0111, 0b1100_0000]
        );
        let bytes = encode(&t, &scaler());
        assert_eq!(&bytes[..4], b"PFSM");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 1);
        // 101 000 110 001 0000
        assert_eq!(&bytes[6..8], &[0b1010_0011, 0b0001_0000]);
        assert_eq!(&bytes[8..12], &2.5f32.to_le_bytes());
    }

    #[test]
    fn roundtrip_preserves_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 1..=MAX_DEPTH {
            let t = random_tree(&mut rng, d);
            let bytes = encode(&t, &scaler());
            let (back, s) = decode(&bytes).unwrap();
            assert_eq!(back.feature_map(), t.feature_map());
            assert_eq!(back.leaves(), t.leaves());
            for (a, b) in back.splits().iter().zip(t.splits()) {
                assert_eq!(a.slot, b.slot);
                assert!((a.threshold - b.threshold).abs() <= 0.5 / 65535.0 + 1e-12);
            }
            for &f in t.feature_map() {
                let (lo, hi) = scaler().bounds()[f as usize];
                assert_eq!(
                    s.bounds()[f as usize],
                    ((lo as f32) as f64, (hi as f32) as f64)
                );
            }
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bytes = encode(&random_tree(&mut rng, 4), &scaler());
        assert_eq!(bytes.len(), 8 + 32 + 42);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad), Err(CodecError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(decode(&bad), Err(CodecError::BadVersion(2)));
        assert!(matches!(
            decode(&bytes[..60]),
            Err(CodecError::BadLength { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(CodecError::BadLength { .. })));
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() |= 1;
        assert!(matches!(decode(&bad), Err(CodecError::Corrupt(_))));
        let mut bad = bytes.clone();
        // last leaf nibble lives in the final byte's upper bits: force 1000
        let n = bad.len();
        bad[n - 2] = (bad[n - 2] & 0xFC) | 0b10;
        bad[n - 1] &= 0x3F;
        assert!(matches!(decode(&bad), Err(CodecError::Corrupt(_))));
        assert!(decode(b"PF").is_err());
    }

    #[test]
    fn model_file_with_phase_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tree = random_tree(&mut rng, 4);
        let (tree, scaler) = decode(&encode(&tree, &scaler())).unwrap();
        let phases = PhaseModel::new(
            Scaler::from_bounds([(0.0, 2.0); NUM_FEATURES]).unwrap(),
            vec![[0.1; 7], [0.9; 7]],
        )
        .unwrap();
        let file = ModelFile {
            model: Model { tree, scaler },
            phases: Some(phases),
        };
        let bytes = file.to_bytes();
        assert_eq!(ModelFile::from_bytes(&bytes).unwrap(), file);
        let bare = ModelFile {
            phases: None,
            ..file.clone()
        };
        assert_eq!(ModelFile::from_bytes(&bare.to_bytes()).unwrap(), bare);
        let mut junk = bare.to_bytes();
        junk.extend_from_slice(b"junk");
        assert!(ModelFile::from_bytes(&junk).is_err());
    }
}
