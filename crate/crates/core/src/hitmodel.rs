//! Closed-form DRAM hit estimation for a hybrid memory.
//!
//! Starting from the stack-distance distribution, the model computes hit
//! probabilities for a single LRU queue spanning DRAM then NVM (free
//! migration), for a memory that never promotes NVM pages (no migration),
//! and mixes the two by the migration probability. The mixed region totals
//! are then imposed on the stack-distance distribution to get a
//! hit-conditioned position distribution, which drives the before/after
//! probabilities of the Markov model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiler::SequenceProfile;

/// Tolerance past which clamped probabilities are reported as drift.
const DRIFT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryGeometry {
    pub dram_pages: u64,
    pub nvm_pages: u64,
}

impl MemoryGeometry {
    pub fn new(dram_pages: u64, nvm_pages: u64) -> Result<Self> {
        if dram_pages == 0 {
            return Err(Error::Argument("DRAM must hold at least one page".into()));
        }
        Ok(Self {
            dram_pages,
            nvm_pages,
        })
    }

    pub fn total_pages(&self) -> u64 {
        self.dram_pages + self.nvm_pages
    }

    pub fn size(&self, tier: Tier) -> u64 {
        match tier {
            Tier::Dram => self.dram_pages,
            Tier::Nvm => self.nvm_pages,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Dram,
    Nvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicProbs {
    pub p_dbasic: f64,
    pub p_nbasic: f64,
    pub p_missbasic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoMigProbs {
    pub p_dnomig: f64,
    pub p_nnomig: f64,
    /// Share of NVM-head insertions coming from DRAM evictions.
    pub p_dram_eviction_source: f64,
    /// Share of NVM-head insertions coming from NVM hits.
    pub p_nvm_hit_source: f64,
    /// Set when there is neither NVM traffic nor a miss, so the mixing
    /// weights are undefined.
    pub degenerate: bool,
}

pub fn basic_probs(profile: &SequenceProfile, geom: &MemoryGeometry) -> BasicProbs {
    let dram = geom.dram_pages as usize;
    let total = geom.total_pages() as usize;
    let arr = profile.prob_arr();
    let p_dbasic: f64 = arr.iter().take(dram).sum();
    let p_nbasic: f64 = arr.iter().take(total).skip(dram).sum();
    BasicProbs {
        p_dbasic,
        p_nbasic,
        p_missbasic: (1.0 - p_dbasic - p_nbasic).max(0.0),
    }
}

pub fn nomig_probs(basic: &BasicProbs) -> NoMigProbs {
    let BasicProbs {
        p_dbasic,
        p_nbasic,
        p_missbasic,
    } = *basic;
    let denom = p_missbasic + p_nbasic;
    if denom <= 0.0 {
        return NoMigProbs {
            p_dnomig: p_dbasic,
            p_nnomig: 0.0,
            p_dram_eviction_source: 1.0,
            p_nvm_hit_source: 0.0,
            degenerate: true,
        };
    }
    let from_eviction = p_missbasic / denom;
    let from_hit = p_nbasic / denom;
    let p_nnomig = from_eviction * p_nbasic + from_hit * (p_dbasic + p_nbasic);
    NoMigProbs {
        p_dnomig: (1.0 - p_nnomig - p_missbasic).max(0.0),
        p_nnomig,
        p_dram_eviction_source: from_eviction,
        p_nvm_hit_source: from_hit,
        degenerate: false,
    }
}

pub fn p_dram_mixed(basic: &BasicProbs, nomig: &NoMigProbs, p_mig: f64) -> f64 {
    nomig.p_dnomig * (1.0 - p_mig) + basic.p_dbasic * p_mig
}

/// Everything the Markov model needs to know about where hits land.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DramHitModel {
    pub geometry: MemoryGeometry,
    pub p_mig: f64,
    pub basic: BasicProbs,
    pub nomig: NoMigProbs,
    pub p_d: f64,
    pub p_hitdram_given_hit: f64,
    /// Hit-conditioned distribution over positions `0..total_pages`
    /// (DRAM first, then NVM).
    #[serde(skip)]
    pub prob_arr_adj: Vec<f64>,
    /// Running sums of `prob_arr_adj`: `cumulative[i] = sum(adj[..i])`.
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl DramHitModel {
    pub fn build(profile: &SequenceProfile, geom: MemoryGeometry, p_mig: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_mig) {
            return Err(Error::Argument(format!(
                "migration probability must be in [0,1], got {p_mig}"
            )));
        }
        let basic = basic_probs(profile, &geom);
        let nomig = nomig_probs(&basic);
        let p_d = p_dram_mixed(&basic, &nomig, p_mig);
        let adj = adjusted_prob_arr(profile, &geom, &basic, p_d);
        let hit_mass = 1.0 - basic.p_missbasic;
        let p_hitdram_given_hit = if hit_mass > 0.0 {
            clamp_unit(p_d / hit_mass)
        } else {
            0.0
        };
        let mut cumulative = Vec::with_capacity(adj.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for &a in &adj {
            acc += a;
            cumulative.push(acc);
        }
        Ok(Self {
            geometry: geom,
            p_mig,
            basic,
            nomig,
            p_d,
            p_hitdram_given_hit,
            prob_arr_adj: adj,
            cumulative,
        })
    }

    /// Hit-conditioned mass of global positions `[lo, hi)`.
    pub fn mass(&self, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.prob_arr_adj.len());
        if lo >= hi {
            return 0.0;
        }
        self.cumulative[hi] - self.cumulative[lo]
    }

    /// Probability that a hit lands at or before `position` of `tier`,
    /// counting every DRAM position as before any NVM position.
    pub fn p_before_given_hit(&self, tier: Tier, position: u64) -> Result<f64> {
        let size = self.geometry.size(tier);
        if position >= size {
            return Err(Error::Argument(format!(
                "position {position} outside {tier:?} of {size} pages"
            )));
        }
        let d = self.geometry.dram_pages as usize;
        let p = position as usize;
        let raw = match tier {
            Tier::Dram => self.mass(0, p + 1),
            Tier::Nvm => self.p_hitdram_given_hit + self.mass(d, d + p + 1),
        };
        Ok(clamp_unit(raw))
    }

    pub fn p_nvm_hit(&self) -> f64 {
        (1.0 - self.p_d - self.basic.p_missbasic).max(0.0)
    }
}

/// Stack-distance distribution restricted to the memory, with the DRAM and
/// NVM regions rescaled to the migration-mixed totals and normalized over
/// hits. Regions whose basic mass is zero stay at zero.
pub fn adjusted_prob_arr(
    profile: &SequenceProfile,
    geom: &MemoryGeometry,
    basic: &BasicProbs,
    p_d: f64,
) -> Vec<f64> {
    let dram = geom.dram_pages as usize;
    let total = geom.total_pages() as usize;
    let p_n = (1.0 - p_d - basic.p_missbasic).max(0.0);
    let dram_scale = if basic.p_dbasic > 0.0 {
        p_d / basic.p_dbasic
    } else {
        0.0
    };
    let nvm_scale = if basic.p_nbasic > 0.0 {
        p_n / basic.p_nbasic
    } else {
        0.0
    };
    let mut adj: Vec<f64> = (0..total)
        .map(|i| {
            let scale = if i < dram { dram_scale } else { nvm_scale };
            profile.prob_at(i) * scale
        })
        .collect();
    let mass: f64 = adj.iter().sum();
    if mass > 0.0 {
        adj.iter_mut().for_each(|a| *a /= mass);
    }
    adj
}

pub(crate) fn clamp_unit(x: f64) -> f64 {
    if !(-DRIFT_TOLERANCE..=1.0 + DRIFT_TOLERANCE).contains(&x) {
        log::warn!("probability {x} drifted outside [0,1]");
    }
    x.clamp(0.0, 1.0)
}
