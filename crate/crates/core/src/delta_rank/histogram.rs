use serde::{Deserialize, Serialize};

/// Log-spaced histogram parameters over positive finite `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    pub bins: u32,
    pub min_r: f64,
    pub max_r: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            bins: 1 << 16,
            min_r: 1e-12,
            max_r: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub count: u64,
    pub sum_r: f64,
}

impl BinStat {
    #[inline]
    pub fn add(&mut self, r: f64) {
        self.count += 1;
        self.sum_r += r;
    }

    pub fn merge(&mut self, other: &BinStat) {
        self.count += other.count;
        self.sum_r += other.sum_r;
    }
}

/// Bin edges and the slot function.
///
/// Slots: 0 is underflow `(0, min_r)`, `1..=bins` are the log-spaced bins
/// `[edge[i], edge[i+1])`, `bins + 1` is overflow `[max_r, f64::MAX]`.
/// Membership is decided against the stored edges, so the slot of a value
/// is monotone in the value.
#[derive(Debug, Clone)]
pub struct BinLayout {
    config: BinConfig,
    edges: Vec<f64>,
    log_min: f64,
    scale: f64,
}

impl BinLayout {
    pub fn new(config: BinConfig) -> Result<Self, String> {
        if config.bins == 0 {
            return Err("bin count must be positive".into());
        }
        if !(config.min_r > 0.0 && config.max_r > config.min_r && config.max_r.is_finite()) {
            return Err(format!(
                "bin range must satisfy 0 < min_r < max_r < inf (got {} .. {})",
                config.min_r, config.max_r
            ));
        }
        let n = config.bins as usize;
        let log_min = config.min_r.log10();
        let log_max = config.max_r.log10();
        let step = (log_max - log_min) / n as f64;
        let mut edges: Vec<f64> = (0..=n).map(|i| 10f64.powf(log_min + step * i as f64)).collect();
        edges[0] = config.min_r;
        edges[n] = config.max_r;
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err("bins too narrow for f64 resolution".into());
        }
        Ok(Self {
            config,
            edges,
            log_min,
            scale: n as f64 / (log_max - log_min),
        })
    }

    pub fn config(&self) -> BinConfig {
        self.config
    }

    pub fn n_slots(&self) -> usize {
        self.config.bins as usize + 2
    }

    /// Slot of a positive finite value.
    #[inline]
    pub fn slot(&self, r: f64) -> usize {
        debug_assert!(r > 0.0 && r.is_finite());
        let n = self.config.bins as usize;
        if r < self.edges[0] {
            return 0;
        }
        if r >= self.edges[n] {
            return n + 1;
        }
        let guess = ((r.log10() - self.log_min) * self.scale) as isize;
        let mut i = guess.clamp(0, n as isize - 1) as usize;
        while i > 0 && r < self.edges[i] {
            i -= 1;
        }
        while r >= self.edges[i + 1] {
            i += 1;
        }
        i + 1
    }

    /// Inclusive range of f64 bit patterns covered by a slot.
    pub fn slot_bits(&self, slot: usize) -> (u64, u64) {
        let n = self.config.bins as usize;
        if slot == 0 {
            (1, self.edges[0].to_bits() - 1)
        } else if slot == n + 1 {
            (self.edges[n].to_bits(), f64::MAX.to_bits())
        } else {
            (
                self.edges[slot - 1].to_bits(),
                self.edges[slot].to_bits() - 1,
            )
        }
    }
}
