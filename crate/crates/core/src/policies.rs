//! Analytical descriptions of hybrid memory architectures, and a checker
//! that holds executable machines to the assumptions the model relies on.

use std::collections::{BTreeMap, HashSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hitmodel::Tier;
use crate::profiler::{write_ratio, SequenceProfile};
use crate::simulator::{MachineSpec, PolicyMachine};
use crate::trace::{PageAccess, PageId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvictionModel {
    LruDeterministic,
    ClockDeterministic,
    UniformRandom,
    /// Probability, indexed by position, that the target is the one evicted.
    Custom(Vec<f64>),
}

impl EvictionModel {
    /// Probability that a page at `position` of a full memory of `size`
    /// pages is the one evicted by the next insertion.
    pub fn probability(&self, position: u64, size: u64) -> f64 {
        if size == 0 || position >= size {
            return 0.0;
        }
        match self {
            EvictionModel::LruDeterministic | EvictionModel::ClockDeterministic => {
                (position + 1 == size) as u8 as f64
            }
            EvictionModel::UniformRandom => 1.0 / size as f64,
            EvictionModel::Custom(table) => table.get(position as usize).copied().unwrap_or(0.0),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            EvictionModel::LruDeterministic | EvictionModel::ClockDeterministic
        )
    }

    fn validate(&self) -> Result<()> {
        if let EvictionModel::Custom(t) = self {
            if t.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Argument(
                    "custom eviction probabilities must lie in [0,1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Where a page that misses is loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultDestination {
    Dram,
    Nvm,
    /// Writes to DRAM, reads to NVM.
    ByType,
}

impl FaultDestination {
    pub fn to_dram_probability(self, write_ratio: f64) -> f64 {
        match self {
            FaultDestination::Dram => 1.0,
            FaultDestination::Nvm => 0.0,
            FaultDestination::ByType => write_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmaPolicy {
    pub name: String,
    pub eviction_dram: EvictionModel,
    pub eviction_nvm: EvictionModel,
    pub p_mig: f64,
    pub fault_destination: FaultDestination,
    /// NVM write hits are served after promotion, so NVM sees no direct
    /// writes.
    #[serde(default)]
    pub write_hits_promote: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u32>,
    /// Set when `p_mig` came from interpolating the threshold table.
    #[serde(default)]
    pub interpolated: bool,
}

impl HmaPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_mig) {
            return Err(Error::Argument(format!(
                "migration probability must be in [0,1], got {}",
                self.p_mig
            )));
        }
        self.eviction_dram.validate()?;
        self.eviction_nvm.validate()
    }

    pub fn with_p_mig(&self, p_mig: f64) -> Self {
        Self {
            p_mig,
            threshold: None,
            interpolated: false,
            ..self.clone()
        }
    }

    /// The simulator machine matching this policy, if there is one.
    pub fn machine(&self) -> Option<MachineSpec> {
        match (self.name.as_str(), self.threshold) {
            ("two-lru", Some(t)) => Some(MachineSpec::TwoLru { threshold: t }),
            ("clock-dwf", _) => Some(MachineSpec::ClockDwf),
            _ => None,
        }
    }
}

/// Measured TwoLRU promotion probability per migration threshold.
pub const TWO_LRU_MIGRATION_TABLE: [(u32, f64); 4] = [(1, 0.16), (4, 0.13), (8, 0.08), (16, 0.05)];

/// Table lookup, log-linear in the threshold between rows and clamped
/// outside. Returns the probability and whether interpolation was needed.
pub fn two_lru_migration_probability(threshold: u32) -> Result<(f64, bool)> {
    if threshold == 0 {
        return Err(Error::Argument(
            "migration threshold must be positive".into(),
        ));
    }
    let table = &TWO_LRU_MIGRATION_TABLE;
    if let Some(&(_, p)) = table.iter().find(|(t, _)| *t == threshold) {
        return Ok((p, false));
    }
    let (first, last) = (table[0], table[table.len() - 1]);
    if threshold < first.0 {
        return Ok((first.1, true));
    }
    if threshold > last.0 {
        return Ok((last.1, true));
    }
    let hi = table
        .iter()
        .position(|(t, _)| *t > threshold)
        .expect("inside table");
    let (t0, p0) = table[hi - 1];
    let (t1, p1) = table[hi];
    let x = ((threshold as f64).ln() - (t0 as f64).ln()) / ((t1 as f64).ln() - (t0 as f64).ln());
    Ok((p0 + (p1 - p0) * x, true))
}

pub fn two_lru_policy(threshold: u32) -> Result<HmaPolicy> {
    let (p_mig, interpolated) = two_lru_migration_probability(threshold)?;
    if interpolated {
        log::info!("threshold {threshold} not tabulated; interpolated p_mig = {p_mig:.4}");
    }
    Ok(HmaPolicy {
        name: "two-lru".into(),
        eviction_dram: EvictionModel::LruDeterministic,
        eviction_nvm: EvictionModel::LruDeterministic,
        p_mig,
        fault_destination: FaultDestination::Dram,
        write_hits_promote: false,
        threshold: Some(threshold),
        interpolated,
    })
}

pub fn clock_dwf_policy(profile: &SequenceProfile) -> HmaPolicy {
    HmaPolicy {
        name: "clock-dwf".into(),
        eviction_dram: EvictionModel::ClockDeterministic,
        eviction_nvm: EvictionModel::ClockDeterministic,
        p_mig: write_ratio(profile),
        fault_destination: FaultDestination::ByType,
        write_hits_promote: true,
        threshold: None,
        interpolated: false,
    }
}

/// User-facing JSON policy block. Exactly one of `p_mig` and `threshold`
/// should be given; a threshold is looked up in the TwoLRU table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub name: String,
    pub dram_eviction: EvictionModel,
    pub nvm_eviction: EvictionModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_mig: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u32>,
    pub fault_destination: FaultDestination,
    #[serde(default)]
    pub write_hits_promote: bool,
}

impl TryFrom<PolicyConfig> for HmaPolicy {
    type Error = Error;

    fn try_from(c: PolicyConfig) -> Result<Self> {
        let (p_mig, interpolated) = match (c.p_mig, c.threshold) {
            (Some(p), None) => (p, false),
            (None, Some(t)) => two_lru_migration_probability(t)?,
            _ => {
                return Err(Error::Argument(
                    "policy config needs exactly one of p_mig and threshold".into(),
                ))
            }
        };
        let policy = HmaPolicy {
            name: c.name,
            eviction_dram: c.dram_eviction,
            eviction_nvm: c.nvm_eviction,
            p_mig,
            fault_destination: c.fault_destination,
            write_hits_promote: c.write_hits_promote,
            threshold: c.threshold,
            interpolated,
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl From<&HmaPolicy> for PolicyConfig {
    fn from(p: &HmaPolicy) -> Self {
        Self {
            name: p.name.clone(),
            dram_eviction: p.eviction_dram.clone(),
            nvm_eviction: p.eviction_nvm.clone(),
            p_mig: p.threshold.is_none().then_some(p.p_mig),
            threshold: p.threshold,
            fault_destination: p.fault_destination,
            write_hits_promote: p.write_hits_promote,
        }
    }
}

/// The assumptions a hybrid memory must satisfy for the model to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Assumption {
    /// Eviction depends only on the victim's own mapping entry.
    EvictionByOwnMapping,
    /// The accessed page is assigned the hit mapping.
    AccessGetsHitMapping,
    /// Each memory's pages are totally ordered for eviction.
    TotalOrder,
    /// Only the accessed page can be promoted.
    PromoteOnlyAccessed,
    /// Pages evicted from DRAM move to NVM at the hit mapping.
    DramEvictionsToNvm,
    /// Pages evicted from NVM leave memory.
    NvmEvictionsLeave,
    /// No mapping exceeds the hit mapping.
    HitMappingIsMaximal,
}

impl Assumption {
    pub const ALL: [Assumption; 7] = [
        Assumption::EvictionByOwnMapping,
        Assumption::AccessGetsHitMapping,
        Assumption::TotalOrder,
        Assumption::PromoteOnlyAccessed,
        Assumption::DramEvictionsToNvm,
        Assumption::NvmEvictionsLeave,
        Assumption::HitMappingIsMaximal,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub detail: String,
    /// Micro-trace reproducing the failure from an empty machine.
    pub witness: Vec<PageAccess>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub machine: String,
    pub trials: usize,
    pub results: BTreeMap<Assumption, Option<Violation>>,
}

impl ConformanceReport {
    pub fn passed(&self, a: Assumption) -> bool {
        matches!(self.results.get(&a), Some(None))
    }

    pub fn all_passed(&self) -> bool {
        Assumption::ALL.iter().all(|&a| self.passed(a))
    }
}

/// Snapshot of the machine state observable through the trait.
struct View {
    tier_of: BTreeMap<PageId, Tier>,
}

impl View {
    fn take(m: &dyn PolicyMachine) -> Self {
        let mut tier_of = BTreeMap::new();
        for tier in [Tier::Dram, Tier::Nvm] {
            for p in m.resident(tier) {
                tier_of.insert(p, tier);
            }
        }
        Self { tier_of }
    }
}

/// Runs randomized micro-traces from fresh machines built by `make` and
/// checks each assumption after every access.
pub fn check_policy_assumptions(
    make: &dyn Fn() -> Box<dyn PolicyMachine>,
    trials: usize,
    seed: u64,
) -> ConformanceReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut results: BTreeMap<Assumption, Option<Violation>> =
        Assumption::ALL.iter().map(|&a| (a, None)).collect();
    let name = make().name().to_string();

    for _ in 0..trials {
        let mut m = make();
        let g = m.geometry();
        let universe = (g.total_pages() + 1 + rng.random_range(0..=g.total_pages())).max(2);
        let len = rng.random_range(1..=4 * universe as usize);
        let write_bias: f64 = rng.random();
        let mut history = Vec::with_capacity(len);
        for _ in 0..len {
            let page = rng.random_range(0..universe);
            let a = if rng.random_bool(write_bias) {
                PageAccess::write(page)
            } else {
                PageAccess::read(page)
            };
            history.push(a);
            let before = View::take(m.as_ref());
            let victims = [Tier::Dram, Tier::Nvm].map(|t| relabel_consistent(m.as_ref(), t));
            let out = m.access(a);
            let after = View::take(m.as_ref());
            let mut fail = |which: Assumption, detail: String| {
                let slot = results.get_mut(&which).expect("all assumptions listed");
                if slot.is_none() {
                    *slot = Some(Violation {
                        detail,
                        witness: history.clone(),
                    });
                }
            };

            for (tier, ok) in [Tier::Dram, Tier::Nvm].into_iter().zip(victims) {
                if let Err(d) = ok {
                    fail(Assumption::EvictionByOwnMapping, format!("{tier:?}: {d}"));
                }
            }

            match m.residency(a.page) {
                Some(t) if m.mapping(a.page) == Some(m.hit_mapping(t)) => {}
                Some(t) => fail(
                    Assumption::AccessGetsHitMapping,
                    format!(
                        "page {} in {t:?} has mapping {:?}, hit mapping {}",
                        a.page,
                        m.mapping(a.page),
                        m.hit_mapping(t)
                    ),
                ),
                None => fail(
                    Assumption::AccessGetsHitMapping,
                    format!("accessed page {} is not resident", a.page),
                ),
            }

            for tier in [Tier::Dram, Tier::Nvm] {
                let resident: HashSet<PageId> = m.resident(tier).into_iter().collect();
                let order = m.eviction_order(tier);
                let distinct: HashSet<PageId> = order.iter().copied().collect();
                if order.len() != resident.len() || distinct != resident {
                    fail(
                        Assumption::TotalOrder,
                        format!("{tier:?} eviction order {order:?} does not cover {resident:?}"),
                    );
                }
                if resident.len() as u64 > g.size(tier) {
                    fail(
                        Assumption::TotalOrder,
                        format!(
                            "{tier:?} holds {} pages, capacity {}",
                            resident.len(),
                            g.size(tier)
                        ),
                    );
                }
                let hm = m.hit_mapping(tier);
                for &p in &resident {
                    if m.mapping(p).is_some_and(|v| v > hm) {
                        fail(
                            Assumption::HitMappingIsMaximal,
                            format!("page {p} in {tier:?} maps above {hm}"),
                        );
                    }
                }
            }

            for (&p, &was) in &before.tier_of {
                let now = after.tier_of.get(&p).copied();
                match (was, now) {
                    (Tier::Nvm, Some(Tier::Dram)) if p != a.page => fail(
                        Assumption::PromoteOnlyAccessed,
                        format!("page {p} promoted while accessing {}", a.page),
                    ),
                    (Tier::Dram, Some(Tier::Nvm)) => {
                        if m.mapping(p) != Some(m.hit_mapping(Tier::Nvm)) {
                            fail(
                                Assumption::DramEvictionsToNvm,
                                format!("demoted page {p} did not get the NVM hit mapping"),
                            );
                        }
                    }
                    (Tier::Dram, None) if g.nvm_pages > 0 => fail(
                        Assumption::DramEvictionsToNvm,
                        format!("page {p} left DRAM but is not in NVM"),
                    ),
                    (Tier::Nvm, Some(Tier::Nvm)) | (Tier::Dram, Some(Tier::Dram)) => {}
                    _ => {}
                }
            }
            if let Some(e) = out.evicted {
                if m.residency(e).is_some() {
                    fail(
                        Assumption::NvmEvictionsLeave,
                        format!("evicted page {e} is still resident"),
                    );
                }
            }
            let nvm_now: HashSet<PageId> = m.resident(Tier::Nvm).into_iter().collect();
            for (&p, &was) in &before.tier_of {
                if was == Tier::Nvm
                    && !nvm_now.contains(&p)
                    && m.residency(p).is_some()
                    && p != a.page
                {
                    fail(
                        Assumption::NvmEvictionsLeave,
                        format!("page {p} left NVM but stayed resident"),
                    );
                }
            }
        }
    }
    ConformanceReport {
        machine: name,
        trials,
        results,
    }
}

/// The victim must follow the page under any renaming of page ids: only the
/// replacement state, never the identity of other pages, may decide it.
fn relabel_consistent(m: &dyn PolicyMachine, tier: Tier) -> std::result::Result<(), String> {
    let mut plain = m.clone_box();
    let Some(v) = plain.victim(tier) else {
        return Ok(());
    };
    const SHIFT: PageId = 1 << 40;
    let mut renamed = m.clone_box();
    renamed.relabel(&|p| (p ^ 0x5555) + SHIFT);
    let w = renamed.victim(tier);
    if w == Some((v ^ 0x5555) + SHIFT) {
        Ok(())
    } else {
        Err(format!("victim {v} changed to {w:?} after renaming pages"))
    }
}
