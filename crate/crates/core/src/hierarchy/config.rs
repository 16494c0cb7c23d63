use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L1dConfig {
    pub size_kib: u64,
    pub line_bytes: u64,
    pub assoc: u64,
    pub mshrs: u64,
    pub hit_cycles: f64,
}

impl Default for L1dConfig {
    fn default() -> Self {
        L1dConfig { size_kib: 24, line_bytes: 128, assoc: 6, mshrs: 256, hit_cycles: 28.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2Config {
    pub size_kib: u64,
    pub partitions: u64,
    pub partition_kib: u64,
    pub line_bytes: u64,
    pub assoc: u64,
    pub mshrs: u64,
    /// Zero-load round trip for an L2 hit, including both interconnect hops.
    pub hit_cycles: f64,
    /// Occupancy of a partition's tag/data pipeline per access.
    pub service_cycles: f64,
}

impl Default for L2Config {
    fn default() -> Self {
        L2Config {
            size_kib: 2048,
            partitions: 16,
            partition_kib: 128,
            line_bytes: 128,
            assoc: 16,
            mshrs: 256,
            hit_cycles: 190.0,
            service_cycles: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterconnectConfig {
    pub flit_bytes: u64,
    pub clock_ghz: f64,
    /// One-way zero-load hop latency in core cycles.
    pub hop_cycles: f64,
}

impl Default for InterconnectConfig {
    fn default() -> Self {
        InterconnectConfig { flit_bytes: 32, clock_ghz: 1.4, hop_cycles: 40.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub clock_ghz: f64,
    pub bandwidth_gbs: f64,
    pub channels: u64,
    pub nvm_read_ns: f64,
    pub nvm_write_ns: f64,
    pub dram_read_ns: f64,
    pub dram_write_ns: f64,
    /// Write-pending-queue depth per channel.
    pub wpq_capacity: usize,
    /// Concurrent NVM write operations per channel; a WPQ entry drains every
    /// `nvm_write_ns / nvm_write_parallelism`.
    pub nvm_write_parallelism: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            clock_ghz: 1.2,
            bandwidth_gbs: 307.0,
            channels: 8,
            nvm_read_ns: 160.0,
            nvm_write_ns: 480.0,
            dram_read_ns: 160.0,
            dram_write_ns: 160.0,
            wpq_capacity: 64,
            nvm_write_parallelism: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub sm_count: u32,
    pub core_clock_ghz: f64,
    /// Concurrently resident warps per SM that can overlap memory latency.
    pub warps_per_sm: u32,
    pub fence_cycles: f64,
    pub issue_cycles: f64,
    /// Demand-fetch granularity within a line.
    pub sector_bytes: u64,
    /// Whether a non-temporal store invalidates clean cached copies.
    pub nt_invalidate: bool,
    pub l1d: L1dConfig,
    pub l2: L2Config,
    pub interconnect: InterconnectConfig,
    pub memory: MemoryConfig,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            sm_count: 20,
            core_clock_ghz: 1.8,
            warps_per_sm: 64,
            fence_cycles: 20.0,
            issue_cycles: 1.0,
            sector_bytes: 32,
            nt_invalidate: false,
            l1d: L1dConfig::default(),
            l2: L2Config::default(),
            interconnect: InterconnectConfig::default(),
            memory: MemoryConfig::default(),
        }
    }
}

impl HierarchyConfig {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let cfg: HierarchyConfig = toml::from_str(s)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.l2.size_kib != self.l2.partitions * self.l2.partition_kib {
            return bad(format!(
                "l2.size_kib ({}) must equal l2.partitions ({}) x l2.partition_kib ({})",
                self.l2.size_kib, self.l2.partitions, self.l2.partition_kib
            ));
        }
        for (name, v) in [
            ("l1d.size_kib", self.l1d.size_kib * 1024 / self.l1d.assoc.max(1)),
            ("l1d.line_bytes", self.l1d.line_bytes),
            ("l2.partition_kib", self.l2.partition_kib),
            ("l2.line_bytes", self.l2.line_bytes),
            ("interconnect.flit_bytes", self.interconnect.flit_bytes),
            ("sector_bytes", self.sector_bytes),
        ] {
            if v == 0 || !v.is_power_of_two() {
                return bad(format!("{name} must be a power of two (way size for l1d)"));
            }
        }
        if self.l1d.line_bytes != 128 || self.l2.line_bytes != 128 {
            return bad("line size is fixed at 128 bytes".into());
        }
        if self.sector_bytes > 128 {
            return bad("sector_bytes must not exceed the line size".into());
        }
        if self.sm_count == 0 || self.l1d.assoc == 0 || self.l2.assoc == 0 || self.l2.partitions == 0 {
            return bad("counts must be positive".into());
        }
        if self.memory.channels == 0 || self.memory.wpq_capacity == 0 || self.memory.nvm_write_parallelism <= 0.0 {
            return bad("memory.channels, memory.wpq_capacity and memory.nvm_write_parallelism must be positive".into());
        }
        if self.l1d.hit_cycles >= self.l2.hit_cycles {
            return bad("l1d.hit_cycles must be below l2.hit_cycles".into());
        }
        Ok(())
    }

    pub fn ns_to_cycles(&self, ns: f64) -> f64 {
        ns * self.core_clock_ghz
    }

    /// Core cycles to serialize one flit on an SM's interconnect port.
    pub fn flit_cycles(&self) -> f64 {
        self.core_clock_ghz / self.interconnect.clock_ghz
    }

    /// Core cycles a memory channel is busy moving `bytes`.
    pub fn channel_cycles(&self, bytes: u64) -> f64 {
        let per_channel_gbs = self.memory.bandwidth_gbs / self.memory.channels as f64;
        bytes as f64 / per_channel_gbs * self.core_clock_ghz
    }

    pub fn wpq_drain_cycles(&self) -> f64 {
        self.ns_to_cycles(self.memory.nvm_write_ns) / self.memory.nvm_write_parallelism
    }

    pub fn l1d_sets(&self) -> u64 {
        self.l1d.size_kib * 1024 / (self.l1d.line_bytes * self.l1d.assoc)
    }

    pub fn l2_sets_per_partition(&self) -> u64 {
        self.l2.partition_kib * 1024 / (self.l2.line_bytes * self.l2.assoc)
    }
}
