use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of independently switchable prefetcher components.
pub const NUM_PREFETCHERS: usize = 4;

/// Masks the platform accepts. Component 3 can only be enabled together with
/// component 2, which rules out `1000`, `1001`, `1010` and `1011`.
pub const VALID_MASKS: [u8; 12] = [
    0b0000, 0b0001, 0b0010, 0b0011, 0b0100, 0b0101, 0b0110, 0b0111, 0b1100, 0b1101, 0b1110, 0b1111,
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("mask {0:#06b} is not a valid prefetcher configuration on this platform")]
    InvalidMask(u8),
    #[error("cannot parse prefetcher mask {0:?}: expected 4 binary digits such as 0101")]
    Syntax(String),
}

/// Enable vector over the prefetcher components. Bit `i` set means component
/// `i` is enabled. Always a member of [`VALID_MASKS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PrefetcherConfig(u8);

impl PrefetcherConfig {
    /// Every prefetcher disabled.
    pub const OFF: PrefetcherConfig = PrefetcherConfig(0b0000);
    /// Every prefetcher enabled.
    pub const ON: PrefetcherConfig = PrefetcherConfig(0b1111);
    /// Platform default: a single prefetcher enabled.
    pub const DEFAULT: PrefetcherConfig = PrefetcherConfig(0b0001);

    pub fn new(mask: u8) -> Result<Self, ConfigError> {
        if VALID_MASKS.contains(&mask) {
            Ok(PrefetcherConfig(mask))
        } else {
            Err(ConfigError::InvalidMask(mask))
        }
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn is_enabled(self, component: usize) -> bool {
        component < NUM_PREFETCHERS && self.0 & (1 << component) != 0
    }

    /// All valid configurations in ascending mask order.
    pub fn all() -> impl Iterator<Item = PrefetcherConfig> {
        VALID_MASKS.iter().map(|&m| PrefetcherConfig(m))
    }

    /// Position of this config inside [`VALID_MASKS`].
    pub fn index(self) -> usize {
        VALID_MASKS
            .iter()
            .position(|&m| m == self.0)
            .expect("PrefetcherConfig always holds a valid mask")
    }

    pub fn from_index(index: usize) -> Option<Self> {
        VALID_MASKS.get(index).map(|&m| PrefetcherConfig(m))
    }
}

impl Default for PrefetcherConfig {
    fn default() -> Self {
        PrefetcherConfig::DEFAULT
    }
}

impl fmt::Display for PrefetcherConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04b}", self.0)
    }
}

impl FromStr for PrefetcherConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() != NUM_PREFETCHERS || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(ConfigError::Syntax(s.to_string()));
        }
        let mask = u8::from_str_radix(s, 2).map_err(|_| ConfigError::Syntax(s.to_string()))?;
        PrefetcherConfig::new(mask)
    }
}

impl TryFrom<String> for PrefetcherConfig {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PrefetcherConfig> for String {
    fn from(c: PrefetcherConfig) -> String {
        c.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_set_has_twelve_masks_including_off_and_default() {
        assert_eq!(VALID_MASKS.len(), 12);
        assert!(PrefetcherConfig::new(0).is_ok());
        assert!(PrefetcherConfig::new(PrefetcherConfig::DEFAULT.mask()).is_ok());
        let mut sorted = VALID_MASKS;
        sorted.sort();
        sorted.windows(2).for_each(|w| assert!(w[0] < w[1]));
    }

    #[test]
    fn rejects_masks_outside_the_platform_table() {
        assert_eq!(
            PrefetcherConfig::new(0b1000),
            Err(ConfigError::InvalidMask(8))
        );
        assert!(PrefetcherConfig::new(16).is_err());
        assert!("1010".parse::<PrefetcherConfig>().is_err());
    }

    #[test]
    fn binary_string_roundtrip() {
        for c in PrefetcherConfig::all() {
            assert_eq!(c.to_string().parse::<PrefetcherConfig>().unwrap(), c);
            assert_eq!(PrefetcherConfig::from_index(c.index()), Some(c));
        }
        assert_eq!("0101".parse::<PrefetcherConfig>().unwrap().mask(), 5);
        assert!("101".parse::<PrefetcherConfig>().is_err());
        assert!("01x1".parse::<PrefetcherConfig>().is_err());
    }

    #[test]
    fn component_bits() {
        let c: PrefetcherConfig = "0101".parse().unwrap();
        assert!(c.is_enabled(0));
        assert!(!c.is_enabled(1));
        assert!(c.is_enabled(2));
        assert!(!c.is_enabled(4));
    }
}
