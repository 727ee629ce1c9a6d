//! Markov model of one page between two consecutive accesses to it.
//!
//! A state `(r, u, m, p)` says that `r` accesses with `u` distinct pages
//! remain before the target page is touched again, and that the target sits
//! in memory `m` with `p` co-resident pages that outlive it. The state also
//! remembers how many distinct pages were touched since the target. Every
//! step consumes one access.
//!
//! A unique access has not been touched since the target, so its recency
//! rank is deeper than every page seen so far: it hits with probability `h`
//! times the hit-conditioned mass of those deeper ranks, and misses
//! otherwise. Misses and promotions push the target towards its memory's
//! victim slot, from where DRAM pages are demoted to the NVM head and NVM
//! pages leave memory. A repeat hits a page that sits in front of the
//! target. It only matters when that page is in NVM and gets promoted,
//! which inserts into DRAM.
//!
//! Sequences start in DRAM or NVM. The DRAM share follows from a balance:
//! misses enter DRAM with the fault-destination probability, hits find the
//! target where the chain left it, and NVM hits migrate with the migration
//! probability. Profiles with reuse links refine this per reuse-distance
//! bucket, since where a page starts depends on how its previous sequence
//! ended.
//!
//! Two routes evaluate the chain: exact polynomials in `h` built by
//! memoized recursion (for small states and as an oracle), and forward
//! propagation of the position distribution through unique accesses at a
//! numeric `h`, which covers a whole profile in `O(max_u * memory pages)`
//! per point. The numeric route spreads repeat promotions over the unique
//! steps by the mean number of repeats between them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hitmodel::{DramHitModel, MemoryGeometry, Tier};
use crate::policies::HmaPolicy;
use crate::profiler::{reuse_bucket, write_ratio, ReuseLinks, SequenceProfile};

/// Transition weights must sum to one within this tolerance.
pub const CLOSURE_TOLERANCE: f64 = 1e-9;

/// Largest `r` the exact polynomial route accepts.
pub const SYMBOLIC_MAX_R: u64 = 48;

/// Live probability mass below which forward propagation stops early.
const LIVE_MASS_EPSILON: f64 = 1e-15;

/// Numeric evaluations per point when repeats can promote: the first uses
/// the hit model's estimate of where repeats live, later ones the chain's.
const REPEAT_ROUNDS: usize = 2;

/// Convergence of the per-bucket origin probabilities.
const LINK_TOLERANCE: f64 = 1e-13;
const LINK_MAX_ITER: usize = 1000;

/// Evaluates the toy one-memory model where each unique access evicts the
/// target with probability `eviction` and repeats never do.
pub fn simple_markov(r: u64, u: u64, eviction: f64) -> f64 {
    if u > r {
        return 0.0;
    }
    // table[j] holds M(rr, j) for the current rr.
    let mut table = vec![0.0; u as usize + 1];
    for rr in 1..=r {
        for j in (1..=u.min(rr) as usize).rev() {
            let unique = j as f64 / rr as f64;
            table[j] =
                unique * (eviction + (1.0 - eviction) * table[j - 1]) + (1.0 - unique) * table[j];
        }
    }
    table[u as usize]
}

/// A point in the life of the target page between two of its accesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MarkovState {
    pub r: u64,
    pub u: u64,
    pub m: Tier,
    pub p: u64,
    /// Distinct pages accessed since the target. A page not touched yet sits
    /// deeper than all of them in the recency stack.
    #[serde(default)]
    pub seen: u64,
}

impl MarkovState {
    pub fn new(r: u64, u: u64, m: Tier, p: u64) -> Self {
        Self {
            r,
            u,
            m,
            p,
            seen: 0,
        }
    }

    pub fn with_seen(self, seen: u64) -> Self {
        Self { seen, ..self }
    }

    pub fn is_terminal(&self) -> bool {
        self.r == 0 || self.u == 0
    }
}

/// Dense polynomial in `h`, lowest degree first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn zero() -> Self {
        Poly(Vec::new())
    }

    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn linear(a: f64, b: f64) -> Self {
        Poly(vec![a, b])
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * h + c)
    }

    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn coeff(&self, i: usize) -> f64 {
        self.0.get(i).copied().unwrap_or(0.0)
    }

    pub fn add(&mut self, other: &Poly) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), 0.0);
        }
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.0.is_empty() || other.0.is_empty() {
            return Poly::zero();
        }
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn scale(&self, k: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * k).collect())
    }

    /// Whether this is the constant `c` coefficient-wise within `tol`.
    pub fn is_constant(&self, c: f64, tol: f64) -> bool {
        (self.coeff(0) - c).abs() <= tol && self.0.iter().skip(1).all(|x| x.abs() <= tol)
    }

    fn trimmed(mut self) -> Self {
        trim(&mut self.0);
        self
    }
}

/// Outcome polynomials of a state in the HMA hit ratio: the probability
/// that the target is evicted before its next access, the expected number
/// of demotions on the way, and the probability that the next access finds
/// it in DRAM.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MissPoly {
    pub miss_coeffs: Vec<f64>,
    pub demote_coeffs: Vec<f64>,
    #[serde(default)]
    pub dram_end_coeffs: Vec<f64>,
}

impl MissPoly {
    pub fn constant(miss: f64) -> Self {
        Self {
            miss_coeffs: vec![miss],
            ..Self::default()
        }
    }

    fn hit_in(m: Tier) -> Self {
        Self {
            dram_end_coeffs: if m == Tier::Dram {
                vec![1.0]
            } else {
                Vec::new()
            },
            ..Self::default()
        }
    }

    pub fn miss(&self, h: f64) -> f64 {
        Poly(self.miss_coeffs.clone()).eval(h)
    }

    pub fn demotions(&self, h: f64) -> f64 {
        Poly(self.demote_coeffs.clone()).eval(h)
    }

    pub fn dram_end(&self, h: f64) -> f64 {
        Poly(self.dram_end_coeffs.clone()).eval(h)
    }

    pub fn degree(&self) -> usize {
        let d = |c: &[f64]| Poly(c.to_vec()).degree();
        d(&self.miss_coeffs)
            .max(d(&self.demote_coeffs))
            .max(d(&self.dram_end_coeffs))
    }

    /// `self += w * other`, plus `w` extra demotions when `demotes`.
    fn add_weighted(&mut self, w: &Poly, other: &MissPoly, demotes: bool) {
        let acc = |dst: &mut Vec<f64>, src: &[f64], extra: bool| {
            let mut p = Poly(std::mem::take(dst));
            let mut s = Poly(src.to_vec());
            if extra {
                s.add(&Poly::constant(1.0));
            }
            p.add(&w.mul(&s));
            *dst = p.0;
        };
        acc(&mut self.miss_coeffs, &other.miss_coeffs, false);
        acc(&mut self.demote_coeffs, &other.demote_coeffs, demotes);
        acc(&mut self.dram_end_coeffs, &other.dram_end_coeffs, false);
    }

    fn trim(&mut self) {
        trim(&mut self.miss_coeffs);
        trim(&mut self.demote_coeffs);
        trim(&mut self.dram_end_coeffs);
    }
}

/// What a single access does to the target page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    /// A repeat that misses. Repeats sit in front of the target, so never.
    RepeatMiss,
    /// A repeat that hits in DRAM: nothing moves.
    RepeatBefore,
    /// A repeat that hits in NVM without migrating: nothing moves.
    RepeatAfter,
    /// A repeat that hits in NVM and is promoted. A DRAM target slides back
    /// or is demoted; an NVM target loses a page in front and gains the
    /// demoted one, so it stays.
    RepeatAfterMigrate,
    /// A unique page misses. Hit mass at recency ranks the unique page
    /// cannot occupy (at most `seen`) is counted here as well.
    UniqueMiss,
    /// A unique page hits in front of the target. Impossible in DRAM, so it
    /// carries no weight there; for an NVM target it keeps it in place.
    UniqueBefore,
    /// A unique page hits behind the target in the target's memory.
    UniqueAfter,
    /// A DRAM target sees a unique NVM hit that does not migrate.
    UniqueNvmHit,
    /// A DRAM target sees a unique NVM hit that is promoted into DRAM.
    UniqueAfterMigrate,
    /// The target is the DRAM victim of an insertion and is demoted to the
    /// NVM head, in the same step as the access that caused it.
    Demote,
    /// The target is the NVM victim of an insertion and leaves memory.
    Evict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Successor {
    State(MarkovState),
    TerminalMiss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub kind: TransitionKind,
    pub weight: Poly,
    pub to: Successor,
    pub demotes: bool,
}

/// `a + b*h`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Lin {
    a: f64,
    b: f64,
}

impl Lin {
    fn h(b: f64) -> Self {
        Lin { a: 0.0, b }
    }

    fn scale(self, k: f64) -> Self {
        Lin {
            a: self.a * k,
            b: self.b * k,
        }
    }

    fn at(self, h: f64) -> f64 {
        self.a + self.b * h
    }

    fn poly(self) -> Poly {
        Poly::linear(self.a, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dest {
    At(Tier, u64),
    Miss,
}

/// One outgoing edge of a unique access.
#[derive(Debug, Clone, Copy)]
struct Move {
    kind: TransitionKind,
    w: Lin,
    to: Dest,
    demotes: bool,
}

/// Where a unique access after `seen` distinct pages can hit: the
/// hit-conditioned mass of deeper DRAM ranks, of deeper NVM ranks, and of
/// NVM ranks that are deeper than `seen` but in front of NVM slot `p`.
#[derive(Debug, Clone, Copy)]
struct UniqueMass {
    dram: f64,
    nvm: f64,
}

/// Per-request summary of one origin's sequences at a fixed `h`. All
/// fields are counts weighted by sequence occurrences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OriginStats {
    /// Finite sequences.
    pub pairs: f64,
    /// Sequences whose target was evicted before the closing access.
    pub miss: f64,
    /// Demotions over all sequences and final residencies.
    pub demote: f64,
    /// Sequences whose closing access finds the target in DRAM.
    pub dram_end: f64,
}

/// Result of evaluating the chain over a whole profile at one `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainEval {
    pub h: f64,
    /// Predicted miss ratio; `1 - h` should equal it at the fixed point.
    pub miss: f64,
    /// Expected demotions per request over all sequences, including the
    /// final residency of every page.
    pub demotions_per_request: f64,
    /// Share of hits that find the target in DRAM.
    pub dram_share: f64,
    /// Probability that a sequence starts with the target in DRAM.
    pub origin_dram: f64,
}

/// Bisection steps for the scalar origin balance.
const ORIGIN_BISECTION_STEPS: usize = 60;

/// Mixes the two origins. The DRAM origin weight `w` must reproduce
/// itself: a miss lands in DRAM with the fault-destination probability, a
/// hit finds the target in DRAM with the share the chain predicts from
/// `w`, and an NVM hit is promoted with the migration probability.
fn combine(
    h: f64,
    total: f64,
    first: f64,
    dram: OriginStats,
    nvm: Option<OriginStats>,
    fault_to_dram: f64,
    p_mig: f64,
) -> ChainEval {
    let Some(nvm) = nvm else {
        return ChainEval {
            h,
            miss: (first + dram.miss) / total,
            demotions_per_request: dram.demote / total,
            dram_share: 1.0,
            origin_dram: 1.0,
        };
    };
    let share = |w: f64| {
        let hits = w * (dram.pairs - dram.miss) + (1.0 - w) * (nvm.pairs - nvm.miss);
        if hits > 0.0 {
            ((w * dram.dram_end + (1.0 - w) * nvm.dram_end) / hits).clamp(0.0, 1.0)
        } else {
            w
        }
    };
    let balance = |w: f64| {
        let s = share(w);
        fault_to_dram * (1.0 - h) + h * (s + (1.0 - s) * p_mig) - w
    };
    // balance(0) >= 0 >= balance(1), so a root is bracketed.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..ORIGIN_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if balance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    ChainEval {
        h,
        miss: (first + w * dram.miss + (1.0 - w) * nvm.miss) / total,
        demotions_per_request: (w * dram.demote + (1.0 - w) * nvm.demote) / total,
        dram_share: share(w),
        origin_dram: w,
    }
}

/// Everything the solver needs for one (profile, geometry, policy) point.
#[derive(Debug)]
pub struct SolveContext {
    pub geometry: MemoryGeometry,
    pub hit_model: DramHitModel,
    pub policy: HmaPolicy,
    /// Probability that a faulting page is loaded into DRAM.
    pub fault_to_dram: f64,
    /// Nothing ever reaches DRAM, so NVM behaves as the only memory. The
    /// hit model and chain then describe NVM as a single level.
    pub dram_unreachable: bool,
    s_d: u64,
    s_n: u64,
    evict_dram: Vec<f64>,
    evict_nvm: Vec<f64>,
    memo: RwLock<HashMap<MarkovState, MissPoly>>,
    fingerprint: String,
    evaluations: AtomicU64,
    /// Repeat gaps of the profile this context evaluates, computed on first
    /// use.
    gaps: OnceLock<Vec<f64>>,
}

impl SolveContext {
    pub fn new(
        profile: &SequenceProfile,
        geom: MemoryGeometry,
        policy: &HmaPolicy,
    ) -> Result<Self> {
        policy.validate()?;
        let mut fault_to_dram = policy
            .fault_destination
            .to_dram_probability(write_ratio(profile));
        if geom.nvm_pages == 0 {
            fault_to_dram = 1.0;
        }
        if fault_to_dram > 0.0 || policy.p_mig > 0.0 {
            let model = DramHitModel::build(profile, geom, policy.p_mig)?;
            return Ok(Self::from_parts(model, policy.clone(), fault_to_dram));
        }
        // NVM alone: run the chain on a one-level memory of NVM's size and
        // eviction model.
        let single = MemoryGeometry::new(geom.nvm_pages, 0)?;
        let mut single_policy = policy.clone();
        single_policy.eviction_dram = policy.eviction_nvm.clone();
        let model = DramHitModel::build(profile, single, policy.p_mig)?;
        let mut ctx = Self::from_parts(model, single_policy, 1.0);
        ctx.policy = policy.clone();
        ctx.geometry = geom;
        ctx.dram_unreachable = true;
        ctx.fingerprint = ctx.compute_fingerprint();
        Ok(ctx)
    }

    /// Builds a context straight from a hit model, bypassing profile-derived
    /// policy parameters.
    pub fn from_parts(hit_model: DramHitModel, policy: HmaPolicy, fault_to_dram: f64) -> Self {
        let g = hit_model.geometry;
        let (s_d, s_n) = (g.dram_pages, g.nvm_pages);
        let evict_dram = (0..s_d)
            .map(|p| policy.eviction_dram.probability(p, s_d))
            .collect();
        let evict_nvm = (0..s_n)
            .map(|p| policy.eviction_nvm.probability(p, s_n))
            .collect();
        let mut ctx = Self {
            geometry: g,
            hit_model,
            policy,
            fault_to_dram,
            dram_unreachable: false,
            s_d,
            s_n,
            evict_dram,
            evict_nvm,
            memo: RwLock::new(HashMap::new()),
            fingerprint: String::new(),
            evaluations: AtomicU64::new(0),
            gaps: OnceLock::new(),
        };
        ctx.fingerprint = ctx.compute_fingerprint();
        ctx
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Numeric chain evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn memo_len(&self) -> usize {
        self.memo.read().expect("memo lock").len()
    }

    /// Memo entries, e.g. for persisting.
    pub fn memo_entries(&self) -> Vec<(MarkovState, MissPoly)> {
        let memo = self.memo.read().expect("memo lock");
        let mut v: Vec<_> = memo.iter().map(|(k, v)| (*k, v.clone())).collect();
        v.sort_by_key(|e| e.0);
        v
    }

    /// Seeds the memo; existing entries win.
    pub fn preload_memo(&self, entries: impl IntoIterator<Item = (MarkovState, MissPoly)>) {
        let mut memo = self.memo.write().expect("memo lock");
        for (k, v) in entries {
            memo.entry(k).or_insert(v);
        }
    }

    /// Whether the chain has an NVM level.
    pub fn two_level(&self) -> bool {
        self.s_n > 0
    }

    fn compute_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let g = self.geometry;
        hasher.update(g.dram_pages.to_le_bytes());
        hasher.update(g.nvm_pages.to_le_bytes());
        hasher.update([self.dram_unreachable as u8]);
        hasher.update(serde_json::to_vec(&self.policy).expect("policy serializes"));
        for x in [
            self.fault_to_dram,
            self.hit_model.p_mig,
            self.hit_model.p_hitdram_given_hit,
        ] {
            hasher.update(x.to_bits().to_le_bytes());
        }
        for a in &self.hit_model.prob_arr_adj {
            hasher.update(a.to_bits().to_le_bytes());
        }
        hex(&hasher.finalize())
    }

    /// Probability that a repeat finds its page in NVM, linear in `h`. The
    /// page was placed by its latest access: a miss lands in DRAM with the
    /// fault-destination probability, a hit in DRAM with the hit model's
    /// share, and an NVM hit is promoted with the migration probability.
    fn repeat_nvm(&self) -> Lin {
        if !self.two_level() {
            return Lin::h(0.0);
        }
        let f = self.fault_to_dram;
        let pm = self.hit_model.p_mig;
        let phd = self.hit_model.p_hitdram_given_hit;
        Lin {
            a: 1.0 - f,
            b: f - phd - (1.0 - phd) * pm,
        }
    }

    fn unique_mass(&self, seen: u64) -> UniqueMass {
        let (d, t) = (self.s_d as usize, (self.s_d + self.s_n) as usize);
        let k = seen as usize + 1;
        let dram = self.hit_model.mass(k, d);
        UniqueMass {
            dram,
            nvm: self.hit_model.mass(k.max(d), t),
        }
    }

    /// NVM mass deeper than `seen` and in front of (or at) NVM slot `p`.
    fn nvm_before(&self, seen: u64, p: u64) -> f64 {
        let d = self.s_d as usize;
        self.hit_model
            .mass((seen as usize + 1).max(d), d + p as usize + 1)
    }

    /// Edges of a unique access for a target at `(m, p)` after `seen`
    /// distinct pages, weights linear in `h`.
    fn unique_moves(&self, m: Tier, p: u64, seen: u64) -> Vec<Move> {
        let um = self.unique_mass(seen);
        let pm = self.hit_model.p_mig;
        let f = self.fault_to_dram;
        let miss = Lin {
            a: 1.0,
            b: -(um.dram + um.nvm),
        };
        let mut moves = Vec::with_capacity(8);
        match m {
            Tier::Dram => {
                let stay = Dest::At(Tier::Dram, p);
                moves.push(Move {
                    kind: TransitionKind::UniqueBefore,
                    w: Lin::h(0.0),
                    to: stay,
                    demotes: false,
                });
                moves.push(Move {
                    kind: TransitionKind::UniqueAfter,
                    w: Lin::h(um.dram),
                    to: Dest::At(Tier::Dram, (p + 1).min(self.s_d - 1)),
                    demotes: false,
                });
                moves.push(Move {
                    kind: TransitionKind::UniqueNvmHit,
                    w: Lin::h(um.nvm * (1.0 - pm)),
                    to: stay,
                    demotes: false,
                });
                self.insert(
                    &mut moves,
                    TransitionKind::UniqueAfterMigrate,
                    Lin::h(um.nvm * pm),
                    Tier::Dram,
                    p,
                );
                self.insert(
                    &mut moves,
                    TransitionKind::UniqueMiss,
                    miss.scale(f),
                    Tier::Dram,
                    p,
                );
                moves.push(Move {
                    kind: TransitionKind::UniqueMiss,
                    w: miss.scale(1.0 - f),
                    to: stay,
                    demotes: false,
                });
            }
            Tier::Nvm => {
                let before = self.nvm_before(seen, p);
                moves.push(Move {
                    kind: TransitionKind::UniqueBefore,
                    w: Lin::h(um.dram + before),
                    to: Dest::At(Tier::Nvm, p),
                    demotes: false,
                });
                moves.push(Move {
                    kind: TransitionKind::UniqueAfter,
                    w: Lin::h((um.nvm - before).max(0.0)),
                    to: Dest::At(Tier::Nvm, (p + 1).min(self.s_n - 1)),
                    demotes: false,
                });
                self.insert(&mut moves, TransitionKind::UniqueMiss, miss, Tier::Nvm, p);
            }
        }
        moves
    }

    /// An insertion into a full memory: the target is the victim with the
    /// eviction probability of its slot, otherwise it slides back one slot.
    fn insert(&self, moves: &mut Vec<Move>, kind: TransitionKind, w: Lin, tier: Tier, p: u64) {
        let (size, e) = match tier {
            Tier::Dram => (self.s_d, self.evict_dram[p as usize]),
            Tier::Nvm => (self.s_n, self.evict_nvm[p as usize]),
        };
        if e > 0.0 {
            let (vkind, to, demotes) = match tier {
                Tier::Dram if self.s_n > 0 => {
                    (TransitionKind::Demote, Dest::At(Tier::Nvm, 0), true)
                }
                _ => (TransitionKind::Evict, Dest::Miss, false),
            };
            moves.push(Move {
                kind: vkind,
                w: w.scale(e),
                to,
                demotes,
            });
        }
        if e < 1.0 {
            moves.push(Move {
                kind,
                w: w.scale(1.0 - e),
                to: Dest::At(tier, (p + 1).min(size - 1)),
                demotes: false,
            });
        }
    }

    /// Full outgoing distribution of a non-terminal state.
    pub fn step_transitions(&self, s: MarkovState) -> Result<Vec<Transition>> {
        if s.is_terminal() || s.u > s.r {
            return Err(Error::Argument(format!("state {s:?} has no transitions")));
        }
        let size = match s.m {
            Tier::Dram => self.s_d,
            Tier::Nvm => self.s_n,
        };
        if s.p >= size {
            return Err(Error::Argument(format!(
                "position {} outside {:?} of {size} pages",
                s.p, s.m
            )));
        }
        let unique = s.u as f64 / s.r as f64;
        let repeat = 1.0 - unique;
        let rho = self.repeat_nvm();
        let pm = self.hit_model.p_mig;
        let same = Successor::State(MarkovState { r: s.r - 1, ..s });
        let mut out = vec![
            Transition {
                kind: TransitionKind::RepeatMiss,
                weight: Poly::zero(),
                to: Successor::TerminalMiss,
                demotes: false,
            },
            Transition {
                kind: TransitionKind::RepeatBefore,
                weight: Lin {
                    a: 1.0 - rho.a,
                    b: -rho.b,
                }
                .scale(repeat)
                .poly(),
                to: same,
                demotes: false,
            },
            Transition {
                kind: TransitionKind::RepeatAfter,
                weight: rho.scale(repeat * (1.0 - pm)).poly(),
                to: same,
                demotes: false,
            },
        ];
        let promoted = rho.scale(repeat * pm);
        match s.m {
            Tier::Dram => {
                let mut moves = Vec::with_capacity(2);
                self.insert(
                    &mut moves,
                    TransitionKind::RepeatAfterMigrate,
                    promoted,
                    Tier::Dram,
                    s.p,
                );
                for mv in moves {
                    out.push(Transition {
                        kind: mv.kind,
                        weight: mv.w.poly(),
                        to: match mv.to {
                            Dest::At(m, p) => Successor::State(MarkovState {
                                r: s.r - 1,
                                m,
                                p,
                                ..s
                            }),
                            Dest::Miss => Successor::TerminalMiss,
                        },
                        demotes: mv.demotes,
                    });
                }
            }
            Tier::Nvm => out.push(Transition {
                kind: TransitionKind::RepeatAfterMigrate,
                weight: promoted.poly(),
                to: same,
                demotes: false,
            }),
        }
        for mv in self.unique_moves(s.m, s.p, s.seen) {
            let to = match mv.to {
                Dest::At(m, p) => Successor::State(MarkovState {
                    r: s.r - 1,
                    u: s.u - 1,
                    m,
                    p,
                    seen: s.seen + 1,
                }),
                Dest::Miss => Successor::TerminalMiss,
            };
            out.push(Transition {
                kind: mv.kind,
                weight: Poly::linear(mv.w.a * unique, mv.w.b * unique),
                to,
                demotes: mv.demotes,
            });
        }
        let mut total = Poly::zero();
        for t in &out {
            total.add(&t.weight);
        }
        if !total.is_constant(1.0, CLOSURE_TOLERANCE) {
            return Err(Error::Invariant(format!(
                "outgoing mass of {s:?} is {:?}, not 1",
                total.0
            )));
        }
        Ok(out)
    }

    /// Exact outcome polynomials of a state, memoized.
    pub fn solve_state(&self, s: MarkovState) -> Result<MissPoly> {
        if s.is_terminal() {
            return Ok(MissPoly::hit_in(s.m));
        }
        if let Some(hit) = self.memo.read().expect("memo lock").get(&s) {
            return Ok(hit.clone());
        }
        let mut acc = MissPoly::default();
        for t in self.step_transitions(s)? {
            if t.weight.0.iter().all(|&c| c == 0.0) {
                continue;
            }
            let sub = match t.to {
                Successor::TerminalMiss => MissPoly::constant(1.0),
                Successor::State(next) => {
                    if next.r >= s.r {
                        return Err(Error::Invariant(format!(
                            "transition from {s:?} to {next:?} does not consume an access"
                        )));
                    }
                    self.solve_state(next)?
                }
            };
            acc.add_weighted(&t.weight, &sub, t.demotes);
        }
        acc.trim();
        self.memo
            .write()
            .expect("memo lock")
            .entry(s)
            .or_insert_with(|| acc.clone());
        Ok(acc)
    }

    /// Outcome polynomials of a pair started in DRAM and, for two levels,
    /// in NVM.
    pub fn pair_origins(&self, r: u64, u: u64) -> Result<(MissPoly, Option<MissPoly>)> {
        if u > r {
            return Err(Error::Argument(format!("pair ({r},{u}) has u > r")));
        }
        if r > SYMBOLIC_MAX_R {
            return Err(Error::Argument(format!(
                "pair ({r},{u}) exceeds the symbolic limit r <= {SYMBOLIC_MAX_R}"
            )));
        }
        let d = self.solve_state(MarkovState::new(r, u, Tier::Dram, 0))?;
        let n = if self.s_n > 0 {
            Some(self.solve_state(MarkovState::new(r, u, Tier::Nvm, 0))?)
        } else {
            None
        };
        Ok((d, n))
    }

    /// Pair polynomials mixed with a fixed DRAM origin weight.
    pub fn pair_miss(&self, r: u64, u: u64, w_dram: f64) -> Result<MissPoly> {
        let (d, n) = self.pair_origins(r, u)?;
        let mut out = MissPoly::default();
        let (wd, wn) = match n {
            Some(_) => (w_dram, 1.0 - w_dram),
            None => (1.0, 0.0),
        };
        out.add_weighted(&Poly::constant(wd), &d, false);
        if let Some(n) = n {
            out.add_weighted(&Poly::constant(wn), &n, false);
        }
        out.trim();
        Ok(out)
    }

    /// Forward-propagates the target's position distribution through unique
    /// accesses at a fixed `h` and folds in the profile's weights. `profile`
    /// must be the one the context was built from.
    pub fn evaluate(&self, profile: &SequenceProfile, h: f64) -> ChainEval {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let pm = self.hit_model.p_mig;
        let gaps: &[f64] = if self.two_level() && pm > 0.0 {
            self.gaps.get_or_init(|| repeat_gaps(profile))
        } else {
            &[]
        };
        let pushes = |rho: f64| -> Vec<f64> { gaps.iter().map(|g| g * rho * pm).collect() };
        let mut eval = self.evaluate_with(profile, h, &pushes(self.repeat_nvm().at(h)));
        if !gaps.is_empty() {
            for _ in 1..REPEAT_ROUNDS {
                eval = self.evaluate_with(profile, h, &pushes(1.0 - eval.origin_dram));
            }
        }
        eval
    }

    /// One numeric evaluation with `repeat_pushes[k]` promoted repeats
    /// after unique access `k`.
    pub fn evaluate_with(
        &self,
        profile: &SequenceProfile,
        h: f64,
        repeat_pushes: &[f64],
    ) -> ChainEval {
        let steps = last_distance(profile);
        let td = self.trajectory_with(h, Tier::Dram, steps, repeat_pushes);
        let total = profile.total_requests() as f64;
        let first = profile.first_access() as f64;
        let (f, pm) = (self.fault_to_dram, self.hit_model.p_mig);
        if !self.two_level() {
            return combine(h, total, first, fold(profile, &td), None, f, pm);
        }
        let tn = self.trajectory_with(h, Tier::Nvm, steps, repeat_pushes);
        match profile.links() {
            Some(links) => self.link_mix(profile, links, h, &td, &tn),
            None => combine(
                h,
                total,
                first,
                fold(profile, &td),
                Some(fold(profile, &tn)),
                f,
                pm,
            ),
        }
    }

    /// Sequence outcomes per origin memory at a fixed `h`, without repeat
    /// promotions.
    pub fn origin_stats(
        &self,
        profile: &SequenceProfile,
        h: f64,
    ) -> (OriginStats, Option<OriginStats>) {
        let steps = last_distance(profile);
        let dram = fold(profile, &self.trajectory(h, Tier::Dram, steps));
        let nvm = (self.s_n > 0).then(|| fold(profile, &self.trajectory(h, Tier::Nvm, steps)));
        (dram, nvm)
    }

    /// Mixes the origins per reuse bucket. A sequence starts in DRAM with
    /// the probability that the access opening it left the page there, and
    /// that access closed the page's previous sequence, whose bucket and
    /// origin the links record.
    fn link_mix(
        &self,
        profile: &SequenceProfile,
        links: &ReuseLinks,
        h: f64,
        td: &Trajectory,
        tn: &Trajectory,
    ) -> ChainEval {
        let f = self.fault_to_dram;
        let pm = self.hit_model.p_mig;
        let buckets = links
            .bucket_count()
            .max(profile.max_u().map_or(0, |u| reuse_bucket(u) as usize + 1));
        let mut acc = vec![BucketStats::default(); buckets];
        for (u, &c) in profile
            .u_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
        {
            let b = &mut acc[reuse_bucket(u as u64) as usize];
            let c = c as f64;
            b.count += c;
            for (x, t) in [td, tn].into_iter().enumerate() {
                let o = t.at(u);
                b.absorbed[x] += c * o.absorbed;
                b.in_dram[x] += c * o.in_dram;
                b.demoted[x] += c * o.demoted;
            }
        }
        // Probability that the access closing a sequence of each bucket and
        // origin leaves the page in DRAM.
        let leave: Vec<[f64; 2]> = acc
            .iter()
            .map(|b| {
                if b.count == 0.0 {
                    return [f, f];
                }
                [0, 1].map(|x| {
                    let miss = b.absorbed[x] / b.count;
                    let dram = b.in_dram[x] / b.count;
                    dram + (1.0 - miss - dram).max(0.0) * pm + miss * f
                })
            })
            .collect();
        let after = |q: &[f64], prev: Option<u32>| match prev {
            None => f,
            Some(p) => {
                let p = p as usize;
                q[p] * leave[p][0] + (1.0 - q[p]) * leave[p][1]
            }
        };
        let pairs: Vec<(Option<u32>, usize, f64)> = links
            .pairs
            .iter()
            .map(|(&(prev, b), &c)| (prev, b as usize, c as f64))
            .collect();
        let mut q = vec![f; buckets];
        let mut next = vec![0.0; buckets];
        for _ in 0..LINK_MAX_ITER {
            next.iter_mut().for_each(|x| *x = 0.0);
            for &(prev, b, c) in &pairs {
                next[b] += c * after(&q, prev);
            }
            let mut diff = 0.0f64;
            for (b, x) in next.iter_mut().enumerate() {
                *x = if acc[b].count > 0.0 {
                    *x / acc[b].count
                } else {
                    f
                };
                diff = diff.max((*x - q[b]).abs());
            }
            std::mem::swap(&mut q, &mut next);
            if diff < LINK_TOLERANCE {
                break;
            }
        }
        let mut miss = KahanSum::default();
        let mut demote = KahanSum::default();
        let mut dram_end = KahanSum::default();
        let mut started_dram = KahanSum::default();
        let mut pairs = 0.0;
        miss.add(profile.first_access() as f64);
        for (b, qb) in acc.iter().zip(&q) {
            let mix = |v: [f64; 2]| qb * v[0] + (1.0 - qb) * v[1];
            miss.add(mix(b.absorbed));
            demote.add(mix(b.demoted));
            dram_end.add(mix(b.in_dram));
            started_dram.add(qb * b.count);
            pairs += b.count;
        }
        for (&(prev, u), &c) in &links.tails {
            let w = after(&q, prev);
            let u = u as usize;
            demote.add(c as f64 * (w * td.at(u).demoted + (1.0 - w) * tn.at(u).demoted));
        }
        let total = profile.total_requests() as f64;
        let hits = pairs - (miss.value() - profile.first_access() as f64);
        let origin_dram = if pairs > 0.0 {
            started_dram.value() / pairs
        } else {
            f
        };
        ChainEval {
            h,
            miss: miss.value() / total,
            demotions_per_request: demote.value() / total,
            dram_share: if hits > 0.0 {
                (dram_end.value() / hits).clamp(0.0, 1.0)
            } else {
                origin_dram
            },
            origin_dram,
        }
    }

    /// State of a target that starts at slot 0 of `origin` after each number
    /// of unique accesses, up to `steps`. Entry `k` holds the probability
    /// of having been evicted, the expected demotions so far and the
    /// probability of being in DRAM. The vectors stop early once no mass is
    /// left in memory; later entries equal the last one.
    pub fn trajectory(&self, h: f64, origin: Tier, steps: usize) -> Trajectory {
        self.trajectory_with(h, origin, steps, &[])
    }

    /// Like `trajectory`, with `repeat_pushes[k]` extra DRAM insertions
    /// after unique access `k` caused by promoted repeats.
    pub fn trajectory_with(
        &self,
        h: f64,
        origin: Tier,
        steps: usize,
        repeat_pushes: &[f64],
    ) -> Trajectory {
        let s_d = self.s_d as usize;
        let s_n = self.s_n as usize;
        let pm = self.hit_model.p_mig;
        let f = self.fault_to_dram;
        let mut d = vec![0.0; s_d];
        let mut n = vec![0.0; s_n];
        let mut nd = vec![0.0; s_d];
        let mut nn = vec![0.0; s_n];
        match origin {
            Tier::Dram => d[0] = 1.0,
            Tier::Nvm => n[0] = 1.0,
        }
        let mut absorbed = 0.0;
        let mut demoted = 0.0;
        let mut out = Trajectory::default();
        // Slots that may hold mass in each memory.
        let (mut reach_d, mut reach_n) = match origin {
            Tier::Dram => (1usize, 0usize),
            Tier::Nvm => (0usize, 1usize),
        };
        let mut live = 1.0;
        for k in 0..=steps {
            out.absorbed.push(absorbed);
            out.demoted.push(demoted);
            out.in_dram.push(d[..reach_d].iter().sum());
            if live < LIVE_MASS_EPSILON || k == steps {
                break;
            }

            let um = self.unique_mass(k as u64);
            let pd = h * um.dram;
            let pn = h * um.nvm;
            let pmiss = (1.0 - pd - pn).max(0.0);
            let d_stay = pn * (1.0 - pm) + pmiss * (1.0 - f);
            let d_insert = pn * pm + pmiss * f;

            let next_reach_d = (reach_d + 1).min(s_d);
            nd[..next_reach_d].iter_mut().for_each(|x| *x = 0.0);
            let next_reach_n = (reach_n + 1).min(s_n);
            nn[..next_reach_n].iter_mut().for_each(|x| *x = 0.0);
            let mut into_nvm_head = 0.0;
            for p in 0..reach_d {
                let x = d[p];
                if x == 0.0 {
                    continue;
                }
                let back = (p + 1).min(s_d - 1);
                nd[back] += x * pd;
                nd[p] += x * d_stay;
                let ins = x * d_insert;
                let e = self.evict_dram[p];
                nd[back] += ins * (1.0 - e);
                if e > 0.0 {
                    if s_n > 0 {
                        into_nvm_head += ins * e;
                        demoted += ins * e;
                    } else {
                        absorbed += ins * e;
                    }
                }
            }
            let seen_rank = (k + 1).max(s_d);
            for p in 0..reach_n {
                let x = n[p];
                if x == 0.0 {
                    continue;
                }
                let before = h * self.hit_model.mass(seen_rank, s_d + p + 1);
                let after = (pn - before).max(0.0);
                let back = (p + 1).min(s_n - 1);
                nn[p] += x * (pd + before);
                nn[back] += x * after;
                let e = self.evict_nvm[p];
                nn[back] += x * pmiss * (1.0 - e);
                absorbed += x * pmiss * e;
            }
            let mut x = repeat_pushes.get(k).copied().unwrap_or(0.0);
            while x > 0.0 && s_d > 0 {
                let prob = x.min(1.0);
                x -= prob;
                for p in (0..s_d).rev() {
                    let m = nd[p] * prob;
                    if m == 0.0 {
                        continue;
                    }
                    nd[p] -= m;
                    let e = self.evict_dram[p];
                    if p + 1 < s_d {
                        nd[p + 1] += m * (1.0 - e);
                    } else {
                        nd[p] += m * (1.0 - e);
                    }
                    if s_n > 0 {
                        into_nvm_head += m * e;
                        demoted += m * e;
                    } else {
                        absorbed += m * e;
                    }
                }
            }
            if s_n > 0 {
                nn[0] += into_nvm_head;
            }
            reach_d = if repeat_pushes.is_empty() {
                next_reach_d
            } else {
                s_d
            };
            if reach_n > 0 || into_nvm_head > 0.0 {
                reach_n = next_reach_n.max(1);
            }
            std::mem::swap(&mut d, &mut nd);
            std::mem::swap(&mut n, &mut nn);
            live = d[..reach_d].iter().sum::<f64>() + n[..reach_n].iter().sum::<f64>();
        }
        out
    }
}

/// Largest stack distance any sequence or final residency needs.
fn last_distance(profile: &SequenceProfile) -> usize {
    let tails = profile
        .tails()
        .keys()
        .next_back()
        .map_or(0, |&u| u as usize);
    profile.u_counts().len().saturating_sub(1).max(tails)
}

/// Folds a trajectory over the profile's sequences and final residencies.
fn fold(profile: &SequenceProfile, t: &Trajectory) -> OriginStats {
    let mut stats = KahanStats::default();
    for (u, &c) in profile
        .u_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
    {
        stats.add_pair(c as f64, t.at(u));
    }
    for (&u, &c) in profile.tails() {
        stats.add_tail(c as f64, t.at(u as usize));
    }
    stats.value()
}

/// Mean number of repeats between unique access `k` and `k + 1`. Pairs
/// with `u = k` take `r - u` repeats on average over their `k` unique
/// steps, so the increments of the mean `r` per `u`, less the unique step
/// itself, spread them. Gaps in the histogram and noise are smoothed by a
/// running maximum.
fn repeat_gaps(profile: &SequenceProfile) -> Vec<f64> {
    let n = profile.u_counts().len() + 1;
    let mut sum_r = vec![0.0; n];
    let mut count = vec![0.0; n];
    for ((r, u), c) in profile.pairs() {
        sum_r[u as usize] += r as f64 * c as f64;
        count[u as usize] += c as f64;
    }
    let mut mean = vec![0.0; n];
    let mut running = 0.0f64;
    for u in 0..n {
        if count[u] > 0.0 {
            running = running.max(sum_r[u] / count[u]);
        }
        mean[u] = running.max(u as f64);
    }
    mean.windows(2)
        .map(|w| (w[1] - w[0] - 1.0).max(0.0))
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
struct BucketStats {
    count: f64,
    absorbed: [f64; 2],
    in_dram: [f64; 2],
    demoted: [f64; 2],
}

/// Outcome of a target after a given number of unique accesses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepOutcome {
    pub absorbed: f64,
    pub demoted: f64,
    pub in_dram: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub absorbed: Vec<f64>,
    pub demoted: Vec<f64>,
    pub in_dram: Vec<f64>,
}

impl Trajectory {
    pub fn at(&self, k: usize) -> StepOutcome {
        let i = k.min(self.absorbed.len() - 1);
        StepOutcome {
            absorbed: self.absorbed[i],
            demoted: self.demoted[i],
            in_dram: self.in_dram[i],
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct KahanStats {
    pairs: KahanSum,
    miss: KahanSum,
    demote: KahanSum,
    dram_end: KahanSum,
}

impl KahanStats {
    fn add_pair(&mut self, c: f64, o: StepOutcome) {
        self.pairs.add(c);
        self.miss.add(c * o.absorbed);
        self.demote.add(c * o.demoted);
        self.dram_end.add(c * o.in_dram);
    }

    fn add_tail(&mut self, c: f64, o: StepOutcome) {
        self.demote.add(c * o.demoted);
    }

    fn value(&self) -> OriginStats {
        OriginStats {
            pairs: self.pairs.value(),
            miss: self.miss.value(),
            demote: self.demote.value(),
            dram_end: self.dram_end.value(),
        }
    }
}

/// Per-origin polynomial sums over a profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OriginPolys {
    pub pairs: f64,
    pub miss: Poly,
    pub demote: Poly,
    pub dram_end: Poly,
}

impl OriginPolys {
    fn add(&mut self, count: f64, poly: &MissPoly, tail: bool) {
        let c = Poly::constant(count);
        if !tail {
            self.pairs += count;
            self.miss.add(&c.mul(&Poly(poly.miss_coeffs.clone())));
            self.dram_end
                .add(&c.mul(&Poly(poly.dram_end_coeffs.clone())));
        }
        self.demote.add(&c.mul(&Poly(poly.demote_coeffs.clone())));
    }

    pub fn at(&self, h: f64) -> OriginStats {
        OriginStats {
            pairs: self.pairs,
            miss: self.miss.eval(h),
            demote: self.demote.eval(h),
            dram_end: self.dram_end.eval(h),
        }
    }
}

/// The whole profile through the exact route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoly {
    pub total_requests: f64,
    pub first_access: f64,
    pub dram: OriginPolys,
    pub nvm: Option<OriginPolys>,
    pub fault_to_dram: f64,
    pub p_mig: f64,
}

impl ProfilePoly {
    pub fn eval(&self, h: f64) -> ChainEval {
        combine(
            h,
            self.total_requests,
            self.first_access,
            self.dram.at(h),
            self.nvm.as_ref().map(|n| n.at(h)),
            self.fault_to_dram,
            self.p_mig,
        )
    }

    pub fn miss(&self, h: f64) -> f64 {
        self.eval(h).miss
    }

    pub fn solve(&self) -> Result<f64> {
        solve_fixed_point(|h| self.miss(h))
    }
}

/// The whole-profile outcome via the exact route. Only for profiles whose
/// sequences and final residencies fit the symbolic limit.
pub fn total_miss(profile: &SequenceProfile, ctx: &SolveContext) -> Result<ProfilePoly> {
    let mut dram = OriginPolys::default();
    let mut nvm = ctx.two_level().then(OriginPolys::default);
    let mut fold = |r: u64, u: u64, c: u64, tail: bool| -> Result<()> {
        let (d, n) = ctx.pair_origins(r, u)?;
        dram.add(c as f64, &d, tail);
        if let (Some(acc), Some(n)) = (nvm.as_mut(), n) {
            acc.add(c as f64, &n, tail);
        }
        Ok(())
    };
    for ((r, u), c) in profile.pairs() {
        fold(r, u, c, false)?;
    }
    for (&u, &c) in profile.tails() {
        fold(u, u, c, true)?;
    }
    for o in std::iter::once(&mut dram).chain(nvm.as_mut()) {
        o.miss = std::mem::take(&mut o.miss).trimmed();
        o.demote = std::mem::take(&mut o.demote).trimmed();
        o.dram_end = std::mem::take(&mut o.dram_end).trimmed();
    }
    Ok(ProfilePoly {
        total_requests: profile.total_requests() as f64,
        first_access: profile.first_access() as f64,
        dram,
        nvm,
        fault_to_dram: ctx.fault_to_dram,
        p_mig: ctx.hit_model.p_mig,
    })
}
/// Root-finder settings for the fixed point `h = 1 - miss(h)`.
pub const BISECTION_TOLERANCE: f64 = 1e-9;
pub const BISECTION_MAX_ITER: usize = 60;
/// Bisection stops early once the residual is this small, well inside the
/// acceptance tolerance so hit ratios are good to about this much.
const BISECTION_STOP: f64 = 1e-12;
pub const DAMPING: f64 = 0.5;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;

/// Solves `h = 1 - miss(h)` on `[0, 1]`: bisection on `h - 1 + miss(h)`,
/// falling back to damped fixed-point iteration without a sign change.
pub fn solve_fixed_point(mut miss: impl FnMut(f64) -> f64) -> Result<f64> {
    let mut g = |h: f64| h - 1.0 + miss(h);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (g_lo, g_hi) = (g(lo), g(hi));
    if g_lo.abs() <= BISECTION_TOLERANCE && g_lo.abs() <= g_hi.abs() {
        return Ok(lo);
    }
    if g_hi.abs() <= BISECTION_TOLERANCE {
        return Ok(hi);
    }
    if g_lo.signum() != g_hi.signum() {
        let increasing = g_hi > g_lo;
        let mut best = (f64::INFINITY, 0.5);
        for _ in 0..BISECTION_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm.abs() < best.0 {
                best = (gm.abs(), mid);
            }
            if gm.abs() <= BISECTION_STOP || (hi - lo).abs() < f64::EPSILON {
                break;
            }
            if (gm > 0.0) == increasing {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if best.0 <= BISECTION_TOLERANCE {
            return Ok(best.1);
        }
    }
    let mut h = 0.5;
    let mut residual = f64::INFINITY;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let target = (h - g(h)).clamp(0.0, 1.0);
        let next = (1.0 - DAMPING) * h + DAMPING * target;
        residual = (next - h).abs();
        h = next;
        if residual <= BISECTION_TOLERANCE {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence { residual })
}

/// Fixed point of a miss polynomial.
pub fn solve_hit_ratio(poly: &MissPoly) -> Result<f64> {
    solve_fixed_point(|h| poly.miss(h))
}

/// `total_requests * demote(h)` for a whole-profile polynomial.
pub fn expected_demotions(poly: &MissPoly, h: f64, total_requests: u64) -> f64 {
    total_requests as f64 * poly.demotions(h).max(0.0)
}

/// Solved operating point of a context on a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub hit_ratio: f64,
    pub demotions_per_request: f64,
    /// Share of hits the chain places in DRAM at the solution.
    pub dram_share: f64,
    /// Chain evaluations used by this solve.
    pub evaluations: u64,
}

/// Solves the HMA hit ratio with the numeric route.
pub fn solve(profile: &SequenceProfile, ctx: &SolveContext) -> Result<Solution> {
    let before = ctx.evaluations();
    let h = solve_fixed_point(|h| ctx.evaluate(profile, h).miss)?;
    let at = ctx.evaluate(profile, h);
    Ok(Solution {
        hit_ratio: h,
        demotions_per_request: at.demotions_per_request,
        dram_share: at.dram_share,
        evaluations: ctx.evaluations() - before,
    })
}

/// Hit ratio per migration probability, reusing the profile.
pub fn migration_sweep(
    profile: &SequenceProfile,
    geom: MemoryGeometry,
    template: &HmaPolicy,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&pm| {
            let ctx = SolveContext::new(profile, geom, &template.with_p_mig(pm))?;
            Ok((pm, solve(profile, &ctx)?.hit_ratio))
        })
        .collect()
}

fn trim(v: &mut Vec<f64>) {
    while v.last() == Some(&0.0) {
        v.pop();
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
