//! Trace-driven ground-truth simulation of hybrid DRAM-NVM page management.
//!
//! Two machines are built in. TwoLRU keeps an LRU queue per memory, loads
//! faults into DRAM, demotes the DRAM LRU page to the NVM head and promotes
//! an NVM page once its hit counter reaches a threshold. With no NVM it is
//! plain LRU. CLOCK-DWF keeps a CLOCK per memory, sends read faults to NVM
//! and write faults to DRAM, and promotes an NVM page on its first write
//! hit, so NVM never absorbs a direct write.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::hitmodel::{MemoryGeometry, Tier};
use crate::trace::{Op, PageAccess, PageId, Trace};

/// Where a request was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Served {
    Dram,
    Nvm,
    Disk,
}

/// Side effects of one access, reported by every machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccessOutcome {
    pub served: Option<Served>,
    /// Page loaded from disk into this memory.
    pub fault_to: Option<Tier>,
    pub promoted: bool,
    pub demoted: Option<PageId>,
    pub evicted: Option<PageId>,
}

/// Executable hybrid-memory policy. The mapping is the policy's per-page
/// replacement state: larger values are better protected, and a just-touched
/// page holds `hit_mapping` of its memory.
pub trait PolicyMachine: Send {
    fn name(&self) -> &str;
    fn geometry(&self) -> MemoryGeometry;
    fn access(&mut self, access: PageAccess) -> AccessOutcome;
    fn residency(&self, page: PageId) -> Option<Tier>;
    fn mapping(&self, page: PageId) -> Option<i64>;
    fn hit_mapping(&self, tier: Tier) -> i64;
    /// Resident pages of one memory in a stable internal order.
    fn resident(&self, tier: Tier) -> Vec<PageId>;
    /// The page that the next eviction from `tier` would pick.
    fn victim(&mut self, tier: Tier) -> Option<PageId>;
    fn clone_box(&self) -> Box<dyn PolicyMachine>;
    /// Renames every resident page through `f`, keeping all other state.
    fn relabel(&mut self, f: &dyn Fn(PageId) -> PageId);

    /// Pages of `tier` in the order successive evictions would remove them.
    fn eviction_order(&self, tier: Tier) -> Vec<PageId> {
        let mut m = self.clone_box();
        let mut out = Vec::new();
        while let Some(v) = m.victim(tier) {
            out.push(v);
            m.remove(v);
        }
        out
    }

    /// Drops a page without side effects on other pages.
    fn remove(&mut self, page: PageId);
}

impl Clone for Box<dyn PolicyMachine> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Names a built-in machine independently of the memory it runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MachineSpec {
    TwoLru { threshold: u32 },
    ClockDwf,
}

impl MachineSpec {
    pub fn build(&self, geom: MemoryGeometry) -> Box<dyn PolicyMachine> {
        match *self {
            MachineSpec::TwoLru { threshold } => Box::new(TwoLru::new(geom, threshold)),
            MachineSpec::ClockDwf => Box::new(ClockDwf::new(geom)),
        }
    }
}

pub fn two_lru_machine(threshold: u32) -> MachineSpec {
    MachineSpec::TwoLru {
        threshold: threshold.max(1),
    }
}

pub fn clock_dwf_machine() -> MachineSpec {
    MachineSpec::ClockDwf
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub machine: String,
    pub total: u64,
    pub r_dram: u64,
    pub w_dram: u64,
    pub r_nvm: u64,
    pub w_nvm: u64,
    pub miss: u64,
    pub mig_to_dram: u64,
    pub mig_to_nvm: u64,
    pub disk_to_nvm_copies: u64,
    pub disk_to_dram_copies: u64,
    pub hit_ratio: f64,
    pub p_hitdram_given_hit_measured: f64,
}

impl SimReport {
    pub fn hits(&self) -> u64 {
        self.total - self.miss
    }

    pub const CSV_HEADER: &'static str = "machine,total,r_dram,w_dram,r_nvm,w_nvm,miss,mig_to_dram,mig_to_nvm,disk_to_nvm_copies,disk_to_dram_copies,hit_ratio,p_hitdram_given_hit";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.machine,
            self.total,
            self.r_dram,
            self.w_dram,
            self.r_nvm,
            self.w_nvm,
            self.miss,
            self.mig_to_dram,
            self.mig_to_nvm,
            self.disk_to_nvm_copies,
            self.disk_to_dram_copies,
            self.hit_ratio,
            self.p_hitdram_given_hit_measured
        )
    }
}

pub fn simulate(trace: &Trace, spec: &MachineSpec, geom: MemoryGeometry) -> SimReport {
    let mut machine = spec.build(geom);
    run_machine(trace.accesses(), machine.as_mut())
}

/// Replays accesses on an already-built machine and tallies the counters.
pub fn run_machine(accesses: &[PageAccess], machine: &mut dyn PolicyMachine) -> SimReport {
    let mut rep = SimReport {
        machine: machine.name().to_string(),
        ..SimReport::default()
    };
    for &a in accesses {
        let out = machine.access(a);
        rep.total += 1;
        match (out.served, a.op) {
            (Some(Served::Dram), Op::Read) => rep.r_dram += 1,
            (Some(Served::Dram), Op::Write) => rep.w_dram += 1,
            (Some(Served::Nvm), Op::Read) => rep.r_nvm += 1,
            (Some(Served::Nvm), Op::Write) => rep.w_nvm += 1,
            _ => rep.miss += 1,
        }
        match out.fault_to {
            Some(Tier::Dram) => rep.disk_to_dram_copies += 1,
            Some(Tier::Nvm) => rep.disk_to_nvm_copies += 1,
            None => {}
        }
        rep.mig_to_dram += out.promoted as u64;
        rep.mig_to_nvm += out.demoted.is_some() as u64;
    }
    if rep.total > 0 {
        rep.hit_ratio = 1.0 - rep.miss as f64 / rep.total as f64;
    }
    let hits = rep.hits();
    if hits > 0 {
        rep.p_hitdram_given_hit_measured = (rep.r_dram + rep.w_dram) as f64 / hits as f64;
    }
    rep
}

const NIL: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node<T> {
    page: PageId,
    data: T,
    prev: usize,
    next: usize,
}

/// Doubly linked page list with O(1) insert, remove and lookup.
/// The front is the most recently inserted end.
#[derive(Debug, Clone)]
struct PageList<T> {
    nodes: Vec<Node<T>>,
    free: Vec<usize>,
    index: HashMap<PageId, usize>,
    head: usize,
    tail: usize,
}

impl<T: Clone> PageList<T> {
    fn new() -> Self {
        Self {
            nodes: Vec::new(),
            free: Vec::new(),
            index: HashMap::new(),
            head: NIL,
            tail: NIL,
        }
    }

    fn len(&self) -> usize {
        self.index.len()
    }

    fn contains(&self, page: PageId) -> bool {
        self.index.contains_key(&page)
    }

    fn get(&self, page: PageId) -> Option<&T> {
        self.index.get(&page).map(|&i| &self.nodes[i].data)
    }

    fn get_mut(&mut self, page: PageId) -> Option<&mut T> {
        let i = *self.index.get(&page)?;
        Some(&mut self.nodes[i].data)
    }

    fn push_front(&mut self, page: PageId, data: T) {
        debug_assert!(!self.contains(page));
        let node = Node {
            page,
            data,
            prev: NIL,
            next: self.head,
        };
        let i = match self.free.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        if self.head != NIL {
            self.nodes[self.head].prev = i;
        } else {
            self.tail = i;
        }
        self.head = i;
        self.index.insert(page, i);
    }

    fn remove(&mut self, page: PageId) -> Option<T> {
        let i = self.index.remove(&page)?;
        let (prev, next) = (self.nodes[i].prev, self.nodes[i].next);
        if prev != NIL {
            self.nodes[prev].next = next;
        } else {
            self.head = next;
        }
        if next != NIL {
            self.nodes[next].prev = prev;
        } else {
            self.tail = prev;
        }
        self.free.push(i);
        Some(self.nodes[i].data.clone())
    }

    fn back(&self) -> Option<PageId> {
        (self.tail != NIL).then(|| self.nodes[self.tail].page)
    }

    fn pop_back(&mut self) -> Option<(PageId, T)> {
        let page = self.back()?;
        let data = self.remove(page)?;
        Some((page, data))
    }

    /// Front to back.
    fn pages(&self) -> Vec<PageId> {
        let mut out = Vec::with_capacity(self.len());
        let mut i = self.head;
        while i != NIL {
            out.push(self.nodes[i].page);
            i = self.nodes[i].next;
        }
        out
    }

    fn relabel(&mut self, f: &dyn Fn(PageId) -> PageId) {
        let order = self.pages();
        let mut fresh = Self::new();
        for page in order.into_iter().rev() {
            let data = self.get(page).cloned().expect("listed page");
            fresh.push_front(f(page), data);
        }
        *self = fresh;
    }
}

/// TwoLRU; with `nvm_pages == 0` it is a plain LRU memory.
#[derive(Debug, Clone)]
pub struct TwoLru {
    geom: MemoryGeometry,
    threshold: u32,
    dram: PageList<()>,
    /// Data is the page's NVM hit counter.
    nvm: PageList<u32>,
    name: String,
}

impl TwoLru {
    pub fn new(geom: MemoryGeometry, threshold: u32) -> Self {
        let name = if geom.nvm_pages == 0 {
            "lru".to_string()
        } else {
            format!("two-lru(threshold={threshold})")
        };
        Self {
            geom,
            threshold: threshold.max(1),
            dram: PageList::new(),
            nvm: PageList::new(),
            name,
        }
    }

    /// Puts `page` at the DRAM head, demoting the DRAM LRU page if full.
    fn insert_dram(&mut self, page: PageId, out: &mut AccessOutcome) {
        if self.dram.len() as u64 >= self.geom.dram_pages {
            let (victim, ()) = self.dram.pop_back().expect("full DRAM has a tail");
            if self.geom.nvm_pages == 0 {
                out.evicted = Some(victim);
            } else {
                out.demoted = Some(victim);
                self.insert_nvm(victim, out);
            }
        }
        self.dram.push_front(page, ());
    }

    fn insert_nvm(&mut self, page: PageId, out: &mut AccessOutcome) {
        if self.nvm.len() as u64 >= self.geom.nvm_pages {
            let (victim, _) = self.nvm.pop_back().expect("full NVM has a tail");
            out.evicted = Some(victim);
        }
        self.nvm.push_front(page, 0);
    }
}

impl PolicyMachine for TwoLru {
    fn name(&self) -> &str {
        &self.name
    }

    fn geometry(&self) -> MemoryGeometry {
        self.geom
    }

    fn access(&mut self, a: PageAccess) -> AccessOutcome {
        let mut out = AccessOutcome::default();
        if self.dram.remove(a.page).is_some() {
            self.dram.push_front(a.page, ());
            out.served = Some(Served::Dram);
        } else if let Some(count) = self.nvm.remove(a.page) {
            out.served = Some(Served::Nvm);
            let count = count + 1;
            if count >= self.threshold {
                out.promoted = true;
                self.insert_dram(a.page, &mut out);
            } else {
                self.nvm.push_front(a.page, count);
            }
        } else {
            out.served = None;
            out.fault_to = Some(Tier::Dram);
            self.insert_dram(a.page, &mut out);
        }
        out
    }

    fn residency(&self, page: PageId) -> Option<Tier> {
        if self.dram.contains(page) {
            Some(Tier::Dram)
        } else if self.nvm.contains(page) {
            Some(Tier::Nvm)
        } else {
            None
        }
    }

    fn mapping(&self, page: PageId) -> Option<i64> {
        let list = match self.residency(page)? {
            Tier::Dram => self.dram.pages(),
            Tier::Nvm => self.nvm.pages(),
        };
        list.iter()
            .position(|&p| p == page)
            .map(|rank| -(rank as i64))
    }

    fn hit_mapping(&self, _tier: Tier) -> i64 {
        0
    }

    fn resident(&self, tier: Tier) -> Vec<PageId> {
        match tier {
            Tier::Dram => self.dram.pages(),
            Tier::Nvm => self.nvm.pages(),
        }
    }

    fn victim(&mut self, tier: Tier) -> Option<PageId> {
        match tier {
            Tier::Dram => self.dram.back(),
            Tier::Nvm => self.nvm.back(),
        }
    }

    fn clone_box(&self) -> Box<dyn PolicyMachine> {
        Box::new(self.clone())
    }

    fn relabel(&mut self, f: &dyn Fn(PageId) -> PageId) {
        self.dram.relabel(f);
        self.nvm.relabel(f);
    }

    fn remove(&mut self, page: PageId) {
        self.dram.remove(page);
        self.nvm.remove(page);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ClockEntry {
    referenced: bool,
    writes: u32,
}

/// Second-chance CLOCK laid out as a queue: the back is under the hand and
/// new pages go in at the front, just behind the hand.
#[derive(Debug, Clone)]
struct Clock {
    list: PageList<ClockEntry>,
    /// Whether write counts protect pages from eviction.
    write_aware: bool,
}

impl Clock {
    fn new(write_aware: bool) -> Self {
        Self {
            list: PageList::new(),
            write_aware,
        }
    }

    /// Rotates the hand until it rests on an evictable page, clearing
    /// reference bits and halving write counts on the way.
    fn settle(&mut self) -> Option<PageId> {
        loop {
            let page = self.list.back()?;
            let e = *self.list.get(page).expect("back page is listed");
            if !e.referenced && (!self.write_aware || e.writes == 0) {
                return Some(page);
            }
            let aged = if e.referenced {
                ClockEntry {
                    referenced: false,
                    ..e
                }
            } else {
                ClockEntry {
                    writes: e.writes / 2,
                    ..e
                }
            };
            self.list.remove(page);
            self.list.push_front(page, aged);
        }
    }

    fn evict(&mut self) -> Option<PageId> {
        let v = self.settle()?;
        self.list.remove(v);
        Some(v)
    }

    fn insert(&mut self, page: PageId, writes: u32) {
        self.list.push_front(
            page,
            ClockEntry {
                referenced: true,
                writes,
            },
        );
    }
}

/// CLOCK-DWF. The DRAM clock protects written pages through a write counter
/// that is halved every time the hand passes an unreferenced page.
#[derive(Debug, Clone)]
pub struct ClockDwf {
    geom: MemoryGeometry,
    dram: Clock,
    nvm: Clock,
}

impl ClockDwf {
    pub fn new(geom: MemoryGeometry) -> Self {
        Self {
            geom,
            dram: Clock::new(true),
            nvm: Clock::new(false),
        }
    }

    fn insert_dram(&mut self, page: PageId, out: &mut AccessOutcome) {
        if self.dram.list.len() as u64 >= self.geom.dram_pages {
            let victim = self.dram.evict().expect("full DRAM has a victim");
            if self.geom.nvm_pages == 0 {
                out.evicted = Some(victim);
            } else {
                out.demoted = Some(victim);
                self.insert_nvm(victim, out);
            }
        }
        self.dram.insert(page, 1);
    }

    fn insert_nvm(&mut self, page: PageId, out: &mut AccessOutcome) {
        if self.nvm.list.len() as u64 >= self.geom.nvm_pages {
            out.evicted = self.nvm.evict();
        }
        self.nvm.insert(page, 0);
    }
}

impl PolicyMachine for ClockDwf {
    fn name(&self) -> &str {
        "clock-dwf"
    }

    fn geometry(&self) -> MemoryGeometry {
        self.geom
    }

    fn access(&mut self, a: PageAccess) -> AccessOutcome {
        let mut out = AccessOutcome::default();
        let write = a.op.is_write();
        if let Some(e) = self.dram.list.get_mut(a.page) {
            e.referenced = true;
            if write {
                e.writes = e.writes.saturating_add(1);
            }
            out.served = Some(Served::Dram);
        } else if self.nvm.list.contains(a.page) {
            if write {
                self.nvm.list.remove(a.page);
                out.promoted = true;
                self.insert_dram(a.page, &mut out);
                out.served = Some(Served::Dram);
            } else {
                self.nvm.list.get_mut(a.page).expect("resident").referenced = true;
                out.served = Some(Served::Nvm);
            }
        } else if write || self.geom.nvm_pages == 0 {
            out.fault_to = Some(Tier::Dram);
            self.insert_dram(a.page, &mut out);
        } else {
            out.fault_to = Some(Tier::Nvm);
            self.insert_nvm(a.page, &mut out);
        }
        out
    }

    fn residency(&self, page: PageId) -> Option<Tier> {
        if self.dram.list.contains(page) {
            Some(Tier::Dram)
        } else if self.nvm.list.contains(page) {
            Some(Tier::Nvm)
        } else {
            None
        }
    }

    fn mapping(&self, page: PageId) -> Option<i64> {
        self.dram
            .list
            .get(page)
            .or_else(|| self.nvm.list.get(page))
            .map(|e| e.referenced as i64)
    }

    fn hit_mapping(&self, _tier: Tier) -> i64 {
        1
    }

    fn resident(&self, tier: Tier) -> Vec<PageId> {
        match tier {
            Tier::Dram => self.dram.list.pages(),
            Tier::Nvm => self.nvm.list.pages(),
        }
    }

    fn victim(&mut self, tier: Tier) -> Option<PageId> {
        match tier {
            Tier::Dram => self.dram.settle(),
            Tier::Nvm => self.nvm.settle(),
        }
    }

    fn clone_box(&self) -> Box<dyn PolicyMachine> {
        Box::new(self.clone())
    }

    fn relabel(&mut self, f: &dyn Fn(PageId) -> PageId) {
        self.dram.list.relabel(f);
        self.nvm.list.relabel(f);
    }

    fn remove(&mut self, page: PageId) {
        self.dram.list.remove(page);
        self.nvm.list.remove(page);
    }
}
