use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// The replacement policies implemented by [`PolicyState`](super::PolicyState).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    Lru,
    Fifo,
    Clock,
    TwoQ,
    Clock2Q,
    S3Fifo1Bit,
    S3Fifo2Bit,
    Clock2QPlus,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Lru,
        PolicyKind::Fifo,
        PolicyKind::Clock,
        PolicyKind::TwoQ,
        PolicyKind::Clock2Q,
        PolicyKind::S3Fifo1Bit,
        PolicyKind::S3Fifo2Bit,
        PolicyKind::Clock2QPlus,
    ];

    /// Short name used on the command line and in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Lru => "lru",
            PolicyKind::Fifo => "fifo",
            PolicyKind::Clock => "clock",
            PolicyKind::TwoQ => "2q",
            PolicyKind::Clock2Q => "clock2q",
            PolicyKind::S3Fifo1Bit => "s3fifo1",
            PolicyKind::S3Fifo2Bit => "s3fifo2",
            PolicyKind::Clock2QPlus => "clock2q+",
        }
    }

    /// Whether the policy has a Small FIFO, a Ghost FIFO and a Main queue.
    pub fn is_three_queue(self) -> bool {
        !matches!(self, PolicyKind::Lru | PolicyKind::Fifo | PolicyKind::Clock)
    }

    pub fn main_discipline(self) -> MainDiscipline {
        match self {
            PolicyKind::Lru | PolicyKind::TwoQ => MainDiscipline::Lru,
            PolicyKind::Fifo => MainDiscipline::Fifo,
            _ => MainDiscipline::Clock,
        }
    }

    /// Whether a Small FIFO entry may ever be promoted to the Main queue on eviction.
    /// 2Q and Clock2Q only reach the Main queue through the ghost.
    pub fn promotes_from_small(self) -> bool {
        matches!(
            self,
            PolicyKind::S3Fifo1Bit | PolicyKind::S3Fifo2Bit | PolicyKind::Clock2QPlus
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let kind = match s.to_ascii_lowercase().as_str() {
            "lru" => PolicyKind::Lru,
            "fifo" => PolicyKind::Fifo,
            "clock" => PolicyKind::Clock,
            "2q" | "twoq" => PolicyKind::TwoQ,
            "clock2q" => PolicyKind::Clock2Q,
            "s3fifo1" | "s3fifo-1bit" => PolicyKind::S3Fifo1Bit,
            "s3fifo2" | "s3fifo-2bit" | "s3fifo" => PolicyKind::S3Fifo2Bit,
            "clock2q+" | "clock2qplus" | "clock2q-plus" => PolicyKind::Clock2QPlus,
            _ => {
                return Err(ConfigError::InvalidField {
                    field: "policy",
                    reason: format!("unknown policy `{s}`"),
                })
            }
        };
        Ok(kind)
    }
}

/// How the Main queue orders its entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MainDiscipline {
    /// Second-chance clock: hits set a ref bit, the hand clears it.
    Clock,
    /// Clock array whose hits never set the ref bit.
    Fifo,
    /// Recency list; hits move the entry to the head.
    Lru,
}

/// Tunables for one policy instance. Sizes are expressed as fractions and resolved by
/// [`PolicyConfig::sizes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub total_blocks: usize,
    /// Fraction of `total_blocks` given to the Small FIFO.
    pub small_frac: f64,
    /// Ghost FIFO capacity as a fraction of `total_blocks`.
    pub ghost_frac: f64,
    /// Correlation window as a fraction of the Small FIFO.
    pub window_frac: f64,
    /// Width of the Small FIFO reference counter (1 or 2).
    pub freq_bits: u8,
    /// Maximum ref-set entries the Main clock hand may skip per eviction. `None` is unbounded.
    pub reinsertion_limit: Option<u32>,
    /// Maximum dirty Small FIFO entries skipped before giving up. `None` means
    /// `min(small_size, 20)`.
    pub dirty_scan_cap: Option<usize>,
    /// Move dirty, ref-set Small FIFO entries to the Main queue instead of leaving them in place.
    pub dirty_promote: bool,
}

pub const DEFAULT_DIRTY_SCAN_CAP: usize = 20;

impl PolicyConfig {
    /// Default fractions for `kind`.
    pub fn for_kind(kind: PolicyKind, total_blocks: usize) -> Self {
        let (small_frac, ghost_frac, window_frac, freq_bits) = match kind {
            PolicyKind::Lru | PolicyKind::Fifo | PolicyKind::Clock => (0.0, 0.0, 0.0, 1),
            PolicyKind::TwoQ | PolicyKind::Clock2Q => (0.25, 0.5, 1.0, 1),
            PolicyKind::S3Fifo1Bit => (0.10, 1.0, 0.0, 1),
            PolicyKind::S3Fifo2Bit => (0.10, 1.0, 0.0, 2),
            PolicyKind::Clock2QPlus => (0.10, 0.5, 0.5, 1),
        };
        PolicyConfig {
            total_blocks,
            small_frac,
            ghost_frac,
            window_frac,
            freq_bits,
            reinsertion_limit: None,
            dirty_scan_cap: None,
            dirty_promote: false,
        }
    }

    pub fn with_window_frac(mut self, window_frac: f64) -> Self {
        self.window_frac = window_frac;
        self
    }

    pub fn with_ghost_frac(mut self, ghost_frac: f64) -> Self {
        self.ghost_frac = ghost_frac;
        self
    }

    pub fn with_small_frac(mut self, small_frac: f64) -> Self {
        self.small_frac = small_frac;
        self
    }

    pub fn with_reinsertion_limit(mut self, limit: Option<u32>) -> Self {
        self.reinsertion_limit = limit;
        self
    }

    pub fn with_dirty_scan_cap(mut self, cap: usize) -> Self {
        self.dirty_scan_cap = Some(cap);
        self
    }

    pub fn with_dirty_promote(mut self, dirty_promote: bool) -> Self {
        self.dirty_promote = dirty_promote;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check_frac(field: &'static str, v: f64, max: f64) -> Result<(), ConfigError> {
            if v.is_finite() && (0.0..=max).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::InvalidField {
                    field,
                    reason: format!("{v} is outside [0, {max}]"),
                })
            }
        }
        if self.total_blocks < 2 {
            return Err(ConfigError::InvalidField {
                field: "total_blocks",
                reason: format!("{} is below the minimum of 2", self.total_blocks),
            });
        }
        if self.total_blocks > u32::MAX as usize {
            return Err(ConfigError::InvalidField {
                field: "total_blocks",
                reason: "exceeds u32 slot indices".into(),
            });
        }
        check_frac("small_frac", self.small_frac, 1.0)?;
        check_frac("ghost_frac", self.ghost_frac, 2.0)?;
        check_frac("window_frac", self.window_frac, 1.0)?;
        if !matches!(self.freq_bits, 1 | 2) {
            return Err(ConfigError::InvalidField {
                field: "freq_bits",
                reason: format!("{} is not 1 or 2", self.freq_bits),
            });
        }
        if self.reinsertion_limit == Some(0) {
            return Err(ConfigError::InvalidField {
                field: "reinsertion_limit",
                reason: "must be positive".into(),
            });
        }
        if self.dirty_scan_cap == Some(0) {
            return Err(ConfigError::InvalidField {
                field: "dirty_scan_cap",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    /// Resolve the fractions into concrete queue sizes.
    pub fn sizes(&self) -> QueueSizes {
        let total = self.total_blocks;
        let mut small = if self.small_frac == 0.0 {
            0
        } else {
            round_half_up(self.small_frac * total as f64).max(1)
        };
        if small >= total {
            small = total.saturating_sub(1);
        }
        let main = total - small;
        let ghost = round_half_up(self.ghost_frac * total as f64);
        let window = round_half_up(self.window_frac * small as f64).min(small);
        let dirty_scan_cap = self
            .dirty_scan_cap
            .unwrap_or_else(|| small.min(DEFAULT_DIRTY_SCAN_CAP))
            .max(1);
        QueueSizes {
            total,
            small,
            main,
            ghost,
            window,
            dirty_scan_cap,
        }
    }
}

/// Concrete queue capacities derived from a [`PolicyConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSizes {
    pub total: usize,
    pub small: usize,
    pub main: usize,
    pub ghost: usize,
    pub window: usize,
    pub dirty_scan_cap: usize,
}

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}
