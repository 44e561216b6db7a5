//! Phase detection: min-max scaling of baseline features, k-means over the
//! scaled space, and nearest-center classification.

mod kmeans;
mod scaler;

use std::fmt;

pub use kmeans::{elbow_scan, kmeans_fit, KMeans, CONVERGENCE_TOLERANCE, MAX_ITERATIONS};
pub use scaler::{fit_scaler, Scaler};

use crate::trace::{FeatureVector, FEATURE_NAMES, NUM_FEATURES};

pub(crate) const DIM: usize = NUM_FEATURES;

/// A feature vector after scaling into `[0, 1]^7`.
pub type Point = [f64; DIM];

/// Cluster count used when none is given.
pub const DEFAULT_K: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhaseError {
    #[error("no samples to fit")]
    EmptyInput,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("only {distinct} distinct samples for k = {k}; lower k or collect more data")]
    TooFewPoints { distinct: usize, k: usize },
    #[error("invalid scaler bounds for feature {feature}: ({lo}, {hi})")]
    BadScaler { feature: usize, lo: f64, hi: f64 },
    #[error("phase section: {0}")]
    Format(String),
}

/// Scaler plus cluster centers in scaled feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    scaler: Scaler,
    centers: Vec<Point>,
}

impl PhaseModel {
    pub fn new(scaler: Scaler, centers: Vec<Point>) -> Result<Self, PhaseError> {
        if centers.is_empty() {
            return Err(PhaseError::ZeroK);
        }
        if let Some(c) = centers.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PhaseError::Format(format!(
                "center coordinate {c} outside [0, 1]"
            )));
        }
        Ok(PhaseModel { scaler, centers })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    /// Phase of a raw feature vector: the nearest center in scaled space,
    /// lowest index on ties.
    pub fn classify(&self, x: &FeatureVector) -> usize {
        self.classify_scaled(&self.scaler.apply(x))
    }

    pub fn classify_scaled(&self, p: &Point) -> usize {
        kmeans::nearest(&self.centers, p).0
    }
}

pub fn classify_phase(model: &PhaseModel, x: &FeatureVector) -> usize {
    model.classify(x)
}

/// Fits the scaler on `baseline` and clusters the scaled samples.
pub fn fit_phase_model(
    baseline: &[FeatureVector],
    k: usize,
    seed: u64,
) -> Result<(PhaseModel, KMeans), PhaseError> {
    let scaler = fit_scaler(baseline)?;
    let points: Vec<Point> = baseline.iter().map(|x| scaler.apply(x)).collect();
    let fit = kmeans_fit(&points, k, seed)?;
    let model = PhaseModel::new(scaler, fit.centers.clone())?;
    Ok((model, fit))
}

impl fmt::Display for PhaseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "k = {}", self.k())?;
        writeln!(f, "scaler:")?;
        for (name, (lo, hi)) in FEATURE_NAMES.iter().zip(self.scaler.bounds()) {
            writeln!(f, "  {name:<28} min={lo:<14.6} max={hi:.6}")?;
        }
        writeln!(f, "centers:")?;
        for (j, c) in self.centers.iter().enumerate() {
            let coords: Vec<String> = c.iter().map(|v| format!("{v:.4}")).collect();
            writeln!(f, "  {j:>3}: [{}]", coords.join(", "))?;
        }
        Ok(())
    }
}

const SECTION_MAGIC: &[u8; 4] = b"PHSE";
const SECTION_VERSION: u8 = 1;

impl PhaseModel {
    /// Serializes as a self-delimiting binary section: magic `PHSE`, version,
    /// `k` as u16, the seven scaler pairs and then `k × 7` center coordinates,
    /// all little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(SECTION_MAGIC);
        out.push(SECTION_VERSION);
        out.extend_from_slice(&(self.k() as u16).to_le_bytes());
        for (lo, hi) in self.scaler.bounds() {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
        }
        for v in self.centers.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        section_len(self.k())
    }

    /// Parses a section produced by [`PhaseModel::to_bytes`]. Returns the
    /// model and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), PhaseError> {
        let bad = |m: &str| PhaseError::Format(m.to_string());
        if bytes.len() < 7 || &bytes[..4] != SECTION_MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != SECTION_VERSION {
            return Err(PhaseError::Format(format!(
                "unsupported version {}",
                bytes[4]
            )));
        }
        let k = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        let len = section_len(k);
        if bytes.len() < len {
            return Err(bad("truncated"));
        }
        let mut floats = bytes[7..len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut bounds = [(0.0, 0.0); DIM];
        for b in bounds.iter_mut() {
            *b = (floats.next().unwrap(), floats.next().unwrap());
        }
        let centers = (0..k)
            .map(|_| std::array::from_fn(|_| floats.next().unwrap()))
            .collect();
        let model = PhaseModel::new(Scaler::from_bounds(bounds)?, centers)?;
        Ok((model, len))
    }
}

fn section_len(k: usize) -> usize {
    7 + 8 * (2 * DIM + k * DIM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_with_centers(centers: Vec<Point>) -> PhaseModel {
        PhaseModel::new(Scaler::from_bounds([(0.0, 1.0); DIM]).unwrap(), centers).unwrap()
    }

    #[test]
    fn point_on_a_center_maps_to_it() {
        let centers: Vec<Point> = (0..5).map(|i| [i as f64 / 4.0; DIM]).collect();
        let m = model_with_centers(centers.clone());
        assert_eq!(m.classify(&FeatureVector(centers[3])), 3);
    }

    #[test]
    fn equidistant_point_goes_to_lower_index() {
        let mut centers = vec![[0.9; DIM]; 5];
        centers[1] = [0.0; DIM];
        centers[1][0] = 0.25;
        centers[4] = [0.0; DIM];
        centers[4][0] = 0.75;
        let mut x = [0.0; DIM];
        x[0] = 0.5;
        let m = model_with_centers(centers);
        assert_eq!(m.classify(&FeatureVector(x)), 1);
    }

    #[test]
    fn classification_is_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centers: Vec<Point> = (0..7)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        let m = model_with_centers(centers);
        for _ in 0..500 {
            let x = FeatureVector(std::array::from_fn(|_| rng.random::<f64>() * 1e6 - 1e3));
            assert!(m.classify(&x) < m.k());
        }
    }

    #[test]
    fn binary_section_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bounds = std::array::from_fn(|i| (i as f64 * 0.1, 1.0 + rng.random::<f64>()));
        let centers: Vec<Point> = (0..16)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        let m = PhaseModel::new(Scaler::from_bounds(bounds).unwrap(), centers).unwrap();
        let mut bytes = m.to_bytes();
        assert_eq!(bytes.len(), m.encoded_len());
        bytes.extend_from_slice(b"trailing");
        let (back, used) = PhaseModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(used, m.encoded_len());
        assert!(PhaseModel::from_bytes(&bytes[..20]).is_err());
        assert!(PhaseModel::from_bytes(b"NOPE\x01\x00\x00").is_err());
    }

    #[test]
    fn dump_lists_every_center() {
        let m = model_with_centers(vec![[0.25; DIM], [0.75; DIM]]);
        let text = m.to_string();
        assert!(text.starts_with("k = 2"));
        assert!(text.contains("ipc"));
        assert!(text.contains("  1: [0.7500"));
    }
}
