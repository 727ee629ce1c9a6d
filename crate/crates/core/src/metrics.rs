//! Access counts, AMAT, NVM write traffic and model-vs-simulator errors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hitmodel::{DramHitModel, MemoryGeometry};
use crate::markov::{solve, Solution, SolveContext};
use crate::policies::{FaultDestination, HmaPolicy};
use crate::profiler::{write_ratio, SequenceProfile};
use crate::simulator::SimReport;

/// Writes to migrate one page into NVM.
pub const DEFAULT_PAGEFACTOR: u64 = 64;

/// Device latencies in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyConfig {
    pub dram_read_ns: f64,
    pub dram_write_ns: f64,
    pub nvm_read_ns: f64,
    pub nvm_write_ns: f64,
    pub disk_read_ns: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            dram_read_ns: 50.0,
            dram_write_ns: 50.0,
            nvm_read_ns: 100.0,
            nvm_write_ns: 350.0,
            disk_read_ns: 5_000_000.0,
        }
    }
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.dram_read_ns,
            self.dram_write_ns,
            self.nvm_read_ns,
            self.nvm_write_ns,
            self.disk_read_ns,
        ];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Argument(
                "latencies must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Expected requests served by each device, and misses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AccessCounts {
    pub r_dram: f64,
    pub w_dram: f64,
    pub r_nvm: f64,
    pub w_nvm: f64,
    pub miss: f64,
}

impl AccessCounts {
    pub fn total(&self) -> f64 {
        self.r_dram + self.w_dram + self.r_nvm + self.w_nvm + self.miss
    }

    pub fn from_sim(sim: &SimReport) -> Self {
        Self {
            r_dram: sim.r_dram as f64,
            w_dram: sim.w_dram as f64,
            r_nvm: sim.r_nvm as f64,
            w_nvm: sim.w_nvm as f64,
            miss: sim.miss as f64,
        }
    }
}

/// Splits `total` requests by hit ratio, DRAM share of hits and write ratio.
pub fn split_counts(
    h: f64,
    p_hitdram_given_hit: f64,
    write_ratio: f64,
    total: f64,
) -> AccessCounts {
    let dram = total * h * p_hitdram_given_hit;
    let nvm = total * h * (1.0 - p_hitdram_given_hit);
    AccessCounts {
        r_dram: dram * (1.0 - write_ratio),
        w_dram: dram * write_ratio,
        r_nvm: nvm * (1.0 - write_ratio),
        w_nvm: nvm * write_ratio,
        miss: total * (1.0 - h),
    }
}

/// Counts from the hit model's DRAM share of hits.
pub fn derive_counts(h: f64, model: &DramHitModel, profile: &SequenceProfile) -> AccessCounts {
    split_counts(
        h,
        model.p_hitdram_given_hit,
        write_ratio(profile),
        profile.total_requests() as f64,
    )
}

/// Average memory access time over `total` requests.
pub fn amat(c: &AccessCounts, lat: &LatencyConfig, total: f64) -> f64 {
    (lat.dram_read_ns * c.r_dram
        + lat.dram_write_ns * c.w_dram
        + lat.nvm_read_ns * c.r_nvm
        + lat.nvm_write_ns * c.w_nvm
        + lat.disk_read_ns * c.miss)
        / total
}

/// Device writes to NVM: direct writes plus a page's worth per demotion and
/// per page copied in from disk.
pub fn nvm_writes(w_nvm: f64, mig_to_nvm: f64, disk_to_nvm: f64, pagefactor: u64) -> f64 {
    w_nvm + (mig_to_nvm + disk_to_nvm) * pagefactor as f64
}

pub fn disk_to_nvm_copies(policy: &HmaPolicy, miss: f64, read_ratio: f64) -> f64 {
    match policy.fault_destination {
        FaultDestination::Dram => 0.0,
        FaultDestination::Nvm => miss,
        FaultDestination::ByType => miss * read_ratio,
    }
}

pub fn rel_error(estimated: f64, simulated: f64) -> Result<f64> {
    if simulated == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((estimated - simulated).abs() / simulated.abs())
}

pub fn abs_error(estimated: f64, simulated: f64) -> f64 {
    (estimated - simulated).abs()
}

/// Model output for one (profile, geometry, policy) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub policy: String,
    pub threshold: Option<u32>,
    pub p_mig: f64,
    /// `p_mig` was interpolated from the threshold table.
    pub p_mig_interpolated: bool,
    pub dram_pages: u64,
    pub nvm_pages: u64,
    pub total_requests: u64,
    pub hit_ratio: f64,
    /// DRAM share of hits used to split the counts.
    pub p_hitdram_given_hit: f64,
    /// DRAM share of hits from the stack-distance hit model alone.
    pub p_hitdram_given_hit_static: f64,
    pub r_dram: f64,
    pub w_dram: f64,
    pub r_nvm: f64,
    pub w_nvm: f64,
    pub miss: f64,
    pub mig_to_nvm: f64,
    pub disk_to_nvm: f64,
    pub amat_ns: f64,
    pub nvm_writes: f64,
    pub pagefactor: u64,
    pub fingerprint: String,
}

impl EstimateReport {
    pub const CSV_HEADER: &'static str = "policy,threshold,p_mig,dram_pages,nvm_pages,total_requests,hit_ratio,p_hitdram_given_hit,r_dram,w_dram,r_nvm,w_nvm,miss,mig_to_nvm,disk_to_nvm,amat_ns,nvm_writes,fingerprint";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.policy,
            self.threshold.map(|t| t.to_string()).unwrap_or_default(),
            self.p_mig,
            self.dram_pages,
            self.nvm_pages,
            self.total_requests,
            self.hit_ratio,
            self.p_hitdram_given_hit,
            self.r_dram,
            self.w_dram,
            self.r_nvm,
            self.w_nvm,
            self.miss,
            self.mig_to_nvm,
            self.disk_to_nvm,
            self.amat_ns,
            self.nvm_writes,
            self.fingerprint
        );
        s
    }

    pub fn counts(&self) -> AccessCounts {
        AccessCounts {
            r_dram: self.r_dram,
            w_dram: self.w_dram,
            r_nvm: self.r_nvm,
            w_nvm: self.w_nvm,
            miss: self.miss,
        }
    }
}

/// Turns a solved operating point into a report.
pub fn build_report(
    profile: &SequenceProfile,
    ctx: &SolveContext,
    sol: &Solution,
    lat: &LatencyConfig,
    pagefactor: u64,
) -> EstimateReport {
    let total = profile.total_requests() as f64;
    let wr = write_ratio(profile);
    let h = sol.hit_ratio;
    let policy = &ctx.policy;
    let (p_hd, p_hd_static, demotions) = if ctx.dram_unreachable {
        (0.0, 0.0, 0.0)
    } else {
        (
            sol.dram_share,
            ctx.hit_model.p_hitdram_given_hit,
            sol.demotions_per_request * total,
        )
    };
    let mut counts = split_counts(h, p_hd, wr, total);
    if policy.write_hits_promote {
        counts.w_dram += counts.w_nvm;
        counts.w_nvm = 0.0;
    }
    let disk_to_nvm = if ctx.geometry.nvm_pages == 0 {
        0.0
    } else {
        disk_to_nvm_copies(policy, counts.miss, 1.0 - wr)
    };
    EstimateReport {
        policy: policy.name.clone(),
        threshold: policy.threshold,
        p_mig: policy.p_mig,
        p_mig_interpolated: policy.interpolated,
        dram_pages: ctx.geometry.dram_pages,
        nvm_pages: ctx.geometry.nvm_pages,
        total_requests: profile.total_requests(),
        hit_ratio: h,
        p_hitdram_given_hit: p_hd,
        p_hitdram_given_hit_static: p_hd_static,
        r_dram: counts.r_dram,
        w_dram: counts.w_dram,
        r_nvm: counts.r_nvm,
        w_nvm: counts.w_nvm,
        miss: counts.miss,
        mig_to_nvm: demotions,
        disk_to_nvm,
        amat_ns: amat(&counts, lat, total),
        nvm_writes: nvm_writes(counts.w_nvm, demotions, disk_to_nvm, pagefactor),
        pagefactor,
        fingerprint: ctx.fingerprint().to_string(),
    }
}

/// Profile to report without any cache.
pub fn estimate(
    profile: &SequenceProfile,
    geom: MemoryGeometry,
    policy: &HmaPolicy,
    lat: &LatencyConfig,
    pagefactor: u64,
) -> Result<EstimateReport> {
    lat.validate()?;
    let ctx = SolveContext::new(profile, geom, policy)?;
    let sol = solve(profile, &ctx)?;
    Ok(build_report(profile, &ctx, &sol, lat, pagefactor))
}

/// Simulator figures in the report's terms.
pub fn sim_amat(sim: &SimReport, lat: &LatencyConfig) -> f64 {
    amat(&AccessCounts::from_sim(sim), lat, sim.total as f64)
}

pub fn sim_nvm_writes(sim: &SimReport, pagefactor: u64) -> f64 {
    nvm_writes(
        sim.w_nvm as f64,
        sim.mig_to_nvm as f64,
        sim.disk_to_nvm_copies as f64,
        pagefactor,
    )
}

/// One metric of a model-vs-simulator comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub estimated: f64,
    pub simulated: f64,
    /// `None` when the simulated value is zero.
    pub rel_error: Option<f64>,
    pub abs_error: f64,
}

impl ComparisonRow {
    pub const CSV_HEADER: &'static str = "metric,estimated,simulated,rel_error,abs_error";

    pub fn new(metric: &str, estimated: f64, simulated: f64) -> Self {
        Self {
            metric: metric.to_string(),
            estimated,
            simulated,
            rel_error: rel_error(estimated, simulated).ok(),
            abs_error: abs_error(estimated, simulated),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.metric,
            self.estimated,
            self.simulated,
            self.rel_error.map(|e| e.to_string()).unwrap_or_default(),
            self.abs_error
        )
    }
}

pub fn compare(est: &EstimateReport, sim: &SimReport, lat: &LatencyConfig) -> Vec<ComparisonRow> {
    let pf = est.pagefactor;
    vec![
        ComparisonRow::new("hit_ratio", est.hit_ratio, sim.hit_ratio),
        ComparisonRow::new("amat_ns", est.amat_ns, sim_amat(sim, lat)),
        ComparisonRow::new("nvm_writes", est.nvm_writes, sim_nvm_writes(sim, pf)),
        ComparisonRow::new(
            "p_hitdram_given_hit",
            est.p_hitdram_given_hit,
            sim.p_hitdram_given_hit_measured,
        ),
        ComparisonRow::new("r_dram", est.r_dram, sim.r_dram as f64),
        ComparisonRow::new("w_dram", est.w_dram, sim.w_dram as f64),
        ComparisonRow::new("r_nvm", est.r_nvm, sim.r_nvm as f64),
        ComparisonRow::new("w_nvm", est.w_nvm, sim.w_nvm as f64),
        ComparisonRow::new("miss", est.miss, sim.miss as f64),
        ComparisonRow::new("mig_to_nvm", est.mig_to_nvm, sim.mig_to_nvm as f64),
        ComparisonRow::new(
            "disk_to_nvm",
            est.disk_to_nvm,
            sim.disk_to_nvm_copies as f64,
        ),
    ]
}
