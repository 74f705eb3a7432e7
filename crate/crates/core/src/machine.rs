//! Memory hierarchy description and the tuning parameters derived from it.
//!
//! A [`MachineDescriptor`] lists set-associative cache levels from L1 outward.
//! Every blocking parameter used by the kernels comes out of
//! [`derive_blocking_plan`], so the kernels never hard-code cache sizes.
//!
//! Descriptors are stored as TOML:
//!
//! ```toml
//! element_bytes = 8
//! cores = 4
//!
//! [[levels]]          # L1
//! line_bytes = 64
//! associativity = 8
//! num_sets = 64
//! shared = false
//!
//! [[levels]]          # L2
//! line_bytes = 64
//! associativity = 8
//! num_sets = 1024
//! shared = false
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default register-block height.
pub const DEFAULT_MR: usize = 8;

/// Elements per vector step of the dot micro-kernel; `dot_block` is a multiple of this.
pub const DOT_LANES: usize = 8;

const DEFAULT_DESCRIPTOR: &str = include_str!("../machines/default.toml");

#[derive(Debug, Error)]
pub enum MachineError {
    #[error("failed to parse machine descriptor: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to read machine descriptor: {0}")]
    Io(#[from] std::io::Error),
    #[error("level {level}: {field} must be at least 1")]
    ZeroField { level: usize, field: &'static str },
    #[error("level {level}: line size {line_bytes} is not a power of two")]
    LineNotPowerOfTwo { level: usize, line_bytes: u64 },
    #[error("machine needs at least 2 cache levels, got {0}")]
    TooFewLevels(usize),
    #[error("level sizes must increase: level {level} holds {size} bytes, level {prev} holds {prev_size}")]
    SizesNotIncreasing {
        level: usize,
        size: u64,
        prev: usize,
        prev_size: u64,
    },
    #[error("line size differs across levels: level 0 has {first}, level {level} has {other}")]
    LineSizeMismatch { level: usize, first: u64, other: u64 },
    #[error("L1 must be private to a core")]
    SharedL1,
    #[error("cores must be at least 1")]
    NoCores,
    #[error("element_bytes must be at least 1")]
    ZeroElementBytes,
    #[error("element of {element_bytes} bytes does not fit a {line_bytes}-byte line")]
    ElementWiderThanLine { element_bytes: u64, line_bytes: u64 },
    #[error("cache too small for blocking: floor(sqrt(M_L2)) = {root} < m_r = {m_r}")]
    CacheTooSmall { root: u64, m_r: usize },
    #[error("m_r must be at least 1")]
    ZeroMr,
}

/// One set-associative cache level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheLevel {
    pub line_bytes: u64,
    pub associativity: u64,
    pub num_sets: u64,
    #[serde(default)]
    pub shared: bool,
}

impl CacheLevel {
    pub fn new(line_bytes: u64, associativity: u64, num_sets: u64, shared: bool) -> Self {
        CacheLevel {
            line_bytes,
            associativity,
            num_sets,
            shared,
        }
    }

    /// Capacity in bytes: line size times associativity times number of sets.
    pub fn size_bytes(&self) -> u64 {
        self.line_bytes * self.associativity * self.num_sets
    }

    pub fn num_lines(&self) -> u64 {
        self.associativity * self.num_sets
    }

    fn check(&self, level: usize) -> Result<(), MachineError> {
        for (field, v) in [
            ("line_bytes", self.line_bytes),
            ("associativity", self.associativity),
            ("num_sets", self.num_sets),
        ] {
            if v == 0 {
                return Err(MachineError::ZeroField { level, field });
            }
        }
        if !self.line_bytes.is_power_of_two() {
            return Err(MachineError::LineNotPowerOfTwo {
                level,
                line_bytes: self.line_bytes,
            });
        }
        Ok(())
    }
}

/// Number of elements of `element_bytes` width a level can hold.
pub fn cache_capacity_elements(level: &CacheLevel, element_bytes: u64) -> u64 {
    assert!(element_bytes >= 1, "element_bytes must be positive");
    level.size_bytes() / element_bytes
}

/// Validated cache hierarchy plus core count and element width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MachineDescriptor {
    element_bytes: u64,
    cores: usize,
    levels: Vec<CacheLevel>,
}

#[derive(Deserialize)]
struct RawDescriptor {
    element_bytes: u64,
    cores: usize,
    levels: Vec<CacheLevel>,
}

impl MachineDescriptor {
    pub fn new(
        levels: Vec<CacheLevel>,
        cores: usize,
        element_bytes: u64,
    ) -> Result<Self, MachineError> {
        if element_bytes == 0 {
            return Err(MachineError::ZeroElementBytes);
        }
        if cores == 0 {
            return Err(MachineError::NoCores);
        }
        for (i, l) in levels.iter().enumerate() {
            l.check(i)?;
        }
        if levels.len() < 2 {
            return Err(MachineError::TooFewLevels(levels.len()));
        }
        let first_line = levels[0].line_bytes;
        for (i, l) in levels.iter().enumerate().skip(1) {
            if l.line_bytes != first_line {
                return Err(MachineError::LineSizeMismatch {
                    level: i,
                    first: first_line,
                    other: l.line_bytes,
                });
            }
            let prev = &levels[i - 1];
            if l.size_bytes() <= prev.size_bytes() {
                return Err(MachineError::SizesNotIncreasing {
                    level: i,
                    size: l.size_bytes(),
                    prev: i - 1,
                    prev_size: prev.size_bytes(),
                });
            }
        }
        if levels[0].shared {
            return Err(MachineError::SharedL1);
        }
        if element_bytes > first_line {
            return Err(MachineError::ElementWiderThanLine {
                element_bytes,
                line_bytes: first_line,
            });
        }
        Ok(MachineDescriptor {
            levels,
            cores,
            element_bytes,
        })
    }

    /// The bundled 32 KiB L1 / 512 KiB L2 descriptor.
    pub fn default_machine() -> Self {
        load_descriptor(DEFAULT_DESCRIPTOR).expect("bundled descriptor is valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, MachineError> {
        load_descriptor(&fs::read_to_string(path)?)
    }

    pub fn levels(&self) -> &[CacheLevel] {
        &self.levels
    }

    pub fn level(&self, idx: usize) -> Option<&CacheLevel> {
        self.levels.get(idx)
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn element_bytes(&self) -> u64 {
        self.element_bytes
    }

    pub fn line_bytes(&self) -> u64 {
        self.levels[0].line_bytes
    }

    /// Capacity of level `idx` in elements.
    pub fn capacity_elements(&self, idx: usize) -> Option<u64> {
        self.levels
            .get(idx)
            .map(|l| cache_capacity_elements(l, self.element_bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor serializes")
    }
}

/// Parse and validate a TOML machine descriptor.
pub fn load_descriptor(text: &str) -> Result<MachineDescriptor, MachineError> {
    let raw: RawDescriptor = toml::from_str(text)?;
    MachineDescriptor::new(raw.levels, raw.cores, raw.element_bytes)
}

/// Blocking and dispatch parameters for the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockingPlan {
    /// Row block of A held in L2.
    pub m_c: usize,
    /// Column block of A held in L2.
    pub n_c: usize,
    /// Register block height of the GEMV micro-kernel.
    pub m_r: usize,
    /// Block length of the large dot product.
    pub dot_block: usize,
    /// Largest length handled by the single-threaded dot.
    pub dot_cutoff: usize,
    pub max_threads: usize,
}

/// Derive the blocking plan from the first two levels of `machine`.
///
/// `m_c = n_c` is the largest multiple of `m_r` not above `floor(sqrt(M_L2))`,
/// `dot_block = floor(M_L1 / 2)` rounded down to a multiple of [`DOT_LANES`]
/// (left as is when smaller than one step) and `dot_cutoff = 2 * M_L1`.
pub fn derive_blocking_plan(
    machine: &MachineDescriptor,
    m_r_hint: Option<usize>,
) -> Result<BlockingPlan, MachineError> {
    let m_r = m_r_hint.unwrap_or(DEFAULT_MR);
    if m_r == 0 {
        return Err(MachineError::ZeroMr);
    }
    let m_l1 = machine.capacity_elements(0).expect("validated");
    let m_l2 = machine.capacity_elements(1).expect("validated");
    let root = m_l2.isqrt();
    if root < m_r as u64 {
        return Err(MachineError::CacheTooSmall { root, m_r });
    }
    let block = (root as usize / m_r) * m_r;
    // M_L1 >= 1 because an element fits in a line.
    let half = (m_l1 / 2) as usize;
    let dot_block = if half >= DOT_LANES { half / DOT_LANES * DOT_LANES } else { half.max(1) };
    Ok(BlockingPlan {
        m_c: block,
        n_c: block,
        m_r,
        dot_block,
        dot_cutoff: 2 * m_l1 as usize,
        max_threads: machine.cores(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_level(l1_sets: u64, l2_sets: u64, elem: u64) -> MachineDescriptor {
        MachineDescriptor::new(
            vec![
                CacheLevel::new(64, 8, l1_sets, false),
                CacheLevel::new(64, 8, l2_sets, true),
            ],
            4,
            elem,
        )
        .unwrap()
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(cache_capacity_elements(&CacheLevel::new(64, 8, 64, false), 8), 4096);
        assert_eq!(cache_capacity_elements(&CacheLevel::new(1, 1, 1, false), 1), 1);
        assert_eq!(
            cache_capacity_elements(&CacheLevel::new(64, 8, 1024, false), 4),
            131072
        );
    }

    #[test]
    fn default_plan() {
        let m = MachineDescriptor::default_machine();
        assert_eq!(m.levels().len(), 2);
        assert_eq!(m.levels()[0].size_bytes(), 32 * 1024);
        assert_eq!(m.levels()[1].size_bytes(), 512 * 1024);
        let p = derive_blocking_plan(&m, Some(8)).unwrap();
        assert_eq!((p.m_c, p.n_c), (256, 256));
        assert_eq!(p.dot_block, 2048);
        assert_eq!(p.dot_cutoff, 8192);
        assert_eq!(p.max_threads, 4);
    }

    #[test]
    fn dot_block_rounding() {
        // M_L1 = 24: half is 12, rounded down to one 8-lane step
        let m = MachineDescriptor::new(
            vec![CacheLevel::new(64, 3, 1, false), CacheLevel::new(64, 8, 64, true)],
            1,
            8,
        )
        .unwrap();
        assert_eq!(derive_blocking_plan(&m, None).unwrap().dot_block, 8);
        // M_L1 = 4: below one step, kept at 2
        let m = MachineDescriptor::new(
            vec![CacheLevel::new(8, 4, 1, false), CacheLevel::new(8, 8, 32, true)],
            1,
            8,
        )
        .unwrap();
        assert_eq!(derive_blocking_plan(&m, Some(1)).unwrap().dot_block, 2);
    }

    #[test]
    fn tiny_l2() {
        // M_L2 = 64 elements
        let m = MachineDescriptor::new(
            vec![CacheLevel::new(8, 1, 4, false), CacheLevel::new(8, 2, 32, false)],
            1,
            8,
        )
        .unwrap();
        let p = derive_blocking_plan(&m, Some(8)).unwrap();
        assert_eq!((p.m_c, p.n_c), (8, 8));

        // M_L2 = 50 elements
        let m = MachineDescriptor::new(
            vec![CacheLevel::new(1, 1, 4, false), CacheLevel::new(1, 1, 50, false)],
            1,
            1,
        )
        .unwrap();
        assert!(matches!(
            derive_blocking_plan(&m, Some(8)),
            Err(MachineError::CacheTooSmall { root: 7, m_r: 8 })
        ));
    }

    #[test]
    fn load_round_trip() {
        let m = MachineDescriptor::default_machine();
        let again = load_descriptor(&m.to_toml()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn rejects_shrinking_levels() {
        let text = r#"
            element_bytes = 8
            cores = 2
            [[levels]]
            line_bytes = 64
            associativity = 8
            num_sets = 1024
            [[levels]]
            line_bytes = 64
            associativity = 8
            num_sets = 64
        "#;
        let err = load_descriptor(text).unwrap_err();
        assert!(matches!(err, MachineError::SizesNotIncreasing { .. }));
        assert!(err.to_string().contains("level sizes must increase"));
    }

    #[test]
    fn rejects_mixed_line_sizes() {
        let text = r#"
            element_bytes = 8
            cores = 2
            [[levels]]
            line_bytes = 64
            associativity = 8
            num_sets = 64
            [[levels]]
            line_bytes = 128
            associativity = 8
            num_sets = 1024
        "#;
        let err = load_descriptor(text).unwrap_err();
        assert!(matches!(err, MachineError::LineSizeMismatch { .. }));
        assert!(err.to_string().contains("line size differs across levels"));
    }

    #[test]
    fn rejects_other_violations() {
        let bad = |levels, cores, elem| MachineDescriptor::new(levels, cores, elem).unwrap_err();
        let l1 = CacheLevel::new(64, 8, 64, false);
        let l2 = CacheLevel::new(64, 8, 1024, false);
        assert!(matches!(bad(vec![l1], 1, 8), MachineError::TooFewLevels(1)));
        assert!(matches!(
            bad(vec![CacheLevel::new(48, 8, 64, false), l2], 1, 8),
            MachineError::LineNotPowerOfTwo { .. }
        ));
        assert!(matches!(
            bad(vec![CacheLevel::new(64, 0, 64, false), l2], 1, 8),
            MachineError::ZeroField { field: "associativity", .. }
        ));
        assert!(matches!(
            bad(vec![CacheLevel::new(64, 8, 64, true), l2], 1, 8),
            MachineError::SharedL1
        ));
        assert!(matches!(bad(vec![l1, l2], 0, 8), MachineError::NoCores));
        assert!(matches!(bad(vec![l1, l2], 1, 0), MachineError::ZeroElementBytes));
        assert!(matches!(
            bad(vec![l1, l2], 1, 128),
            MachineError::ElementWiderThanLine { .. }
        ));
        assert!(load_descriptor("element_bytes = ").is_err());
    }

    proptest! {
        #[test]
        fn size_is_product(line_pow in 0u32..10, assoc in 1u64..64, sets in 1u64..8192) {
            let l = CacheLevel::new(1 << line_pow, assoc, sets, false);
            prop_assert_eq!(l.size_bytes(), (1u64 << line_pow) * assoc * sets);
        }

        #[test]
        fn derived_plan_invariants(
            l1_sets in 1u64..256,
            grow in 2u64..64,
            elem_pow in 0u32..4,
            m_r in 1usize..17,
        ) {
            let elem = 1u64 << elem_pow;
            let m = two_level(l1_sets, l1_sets * grow, elem);
            let m_l1 = m.capacity_elements(0).unwrap();
            let m_l2 = m.capacity_elements(1).unwrap();
            match derive_blocking_plan(&m, Some(m_r)) {
                Ok(p) => {
                    prop_assert_eq!(p.m_c % p.m_r, 0);
                    prop_assert_eq!(p.m_c, p.n_c);
                    prop_assert!((p.m_c * p.n_c) as u64 * elem <= m.levels()[1].size_bytes());
                    prop_assert!((p.m_c + p.m_r) as u64 > m_l2.isqrt());
                    prop_assert!(p.dot_block as u64 <= (m_l1 / 2).max(1));
                    prop_assert!(p.dot_block >= 1);
                    if m_l1 / 2 >= DOT_LANES as u64 {
                        prop_assert_eq!(p.dot_block % DOT_LANES, 0);
                        prop_assert!(p.dot_block as u64 + DOT_LANES as u64 > m_l1 / 2);
                    }
                    prop_assert_eq!(p.dot_cutoff as u64, 2 * m_l1);
                    prop_assert!(p.dot_cutoff as u64 >= m_l1);
                    prop_assert_eq!(p.max_threads, m.cores());
                }
                Err(MachineError::CacheTooSmall { root, .. }) => {
                    prop_assert!(root < m_r as u64)
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
