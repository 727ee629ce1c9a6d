//! Sequence profiling: for every repeat access, the number of accesses `r`
//! and distinct pages `u` seen since the previous access to the same page.
//!
//! `u` is the LRU stack distance of the access. It is computed in
//! `O(log n)` per access with a Fenwick tree over access timestamps: every
//! page keeps a mark at the time of its latest access, so the marks strictly
//! between two consecutive accesses to a page count the distinct pages in
//! that window.
//!
//! Alongside the histogram the profile records how the reuse distances of
//! one page follow each other, bucketed on a log scale. Pages that were
//! reused at a short distance tend to be reused at a short distance again,
//! and where a page sits after an access depends on how it got there.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{PageId, Trace};

/// Key of the pair histogram. `FirstAccess` stands for the `<inf,inf>` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuPair {
    FirstAccess,
    Seq { r: u64, u: u64 },
}

/// Reuse-distance buckets per doubling of `u + 1`.
pub const BUCKETS_PER_OCTAVE: f64 = 4.0;

/// Log-scale bucket of a stack distance.
pub fn reuse_bucket(u: u64) -> u32 {
    (BUCKETS_PER_OCTAVE * ((u + 1) as f64).log2()).floor() as u32
}

/// Successive reuse distances of the same page. The previous bucket is
/// `None` when the previous access was the page's first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReuseLinks {
    /// `(previous bucket, bucket)` of every repeat access.
    pub pairs: BTreeMap<(Option<u32>, u32), u64>,
    /// Final residencies by the bucket of the page's last reuse and the
    /// number of distinct pages accessed afterwards.
    pub tails: BTreeMap<(Option<u32>, u64), u64>,
}

impl ReuseLinks {
    pub fn bucket_count(&self) -> usize {
        let cur = self.pairs.keys().map(|&(p, b)| b.max(p.unwrap_or(0)));
        let tail = self.tails.keys().filter_map(|&(p, _)| p);
        cur.chain(tail).max().map_or(0, |b| b as usize + 1)
    }

    /// Checks the links against the histogram they were recorded with.
    fn check(&self, u_counts: &[u64], tails: &BTreeMap<u64, u64>) -> Result<()> {
        let mut by_bucket: BTreeMap<u32, u64> = BTreeMap::new();
        for (u, &c) in u_counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            *by_bucket.entry(reuse_bucket(u as u64)).or_insert(0) += c;
        }
        let mut linked: BTreeMap<u32, u64> = BTreeMap::new();
        for (&(_, b), &c) in &self.pairs {
            *linked.entry(b).or_insert(0) += c;
        }
        linked.retain(|_, c| *c > 0);
        let mut linked_tails: BTreeMap<u64, u64> = BTreeMap::new();
        for (&(_, u), &c) in &self.tails {
            *linked_tails.entry(u).or_insert(0) += c;
        }
        linked_tails.retain(|_, c| *c > 0);
        let mut plain_tails = tails.clone();
        plain_tails.retain(|_, c| *c > 0);
        if linked != by_bucket || linked_tails != plain_tails {
            return Err(Error::Argument(
                "reuse links do not match the pair histogram".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ProfileDoc", try_from = "ProfileDoc")]
pub struct SequenceProfile {
    pairs: BTreeMap<(u64, u64), u64>,
    first_access: u64,
    total: u64,
    writes: u64,
    prob_arr: Vec<f64>,
    /// Occurrences per stack distance; `prob_arr` is this divided by `total`.
    u_counts: Vec<u64>,
    /// Pages by the number of distinct pages accessed after their last
    /// access. These final residencies are not closed by any pair.
    tails: BTreeMap<u64, u64>,
    links: Option<ReuseLinks>,
}

impl SequenceProfile {
    pub fn pair_count(&self, pair: RuPair) -> u64 {
        match pair {
            RuPair::FirstAccess => self.first_access,
            RuPair::Seq { r, u } => self.pairs.get(&(r, u)).copied().unwrap_or(0),
        }
    }

    /// Finite pairs as `((r, u), count)`, ordered by `(r, u)`.
    pub fn pairs(&self) -> impl Iterator<Item = ((u64, u64), u64)> + '_ {
        self.pairs.iter().map(|(&k, &v)| (k, v))
    }

    pub fn distinct_pair_count(&self) -> usize {
        self.pairs.len() + usize::from(self.first_access > 0)
    }

    pub fn first_access(&self) -> u64 {
        self.first_access
    }

    pub fn total_requests(&self) -> u64 {
        self.total
    }

    pub fn write_count(&self) -> u64 {
        self.writes
    }

    pub fn distinct_pages(&self) -> u64 {
        self.first_access
    }

    pub fn prob_arr(&self) -> &[f64] {
        &self.prob_arr
    }

    pub fn u_counts(&self) -> &[u64] {
        &self.u_counts
    }

    /// `prob_arr[i]`, zero past the end.
    pub fn prob_at(&self, i: usize) -> f64 {
        self.prob_arr.get(i).copied().unwrap_or(0.0)
    }

    /// Weight `alpha` of a pair: its share of all requests.
    pub fn weight(&self, pair: RuPair) -> f64 {
        self.pair_count(pair) as f64 / self.total as f64
    }

    /// Largest finite stack distance observed.
    pub fn max_u(&self) -> Option<u64> {
        (self.u_counts.len() as u64).checked_sub(1)
    }

    pub fn tails(&self) -> &BTreeMap<u64, u64> {
        &self.tails
    }

    pub fn with_tails(mut self, tails: BTreeMap<u64, u64>) -> Self {
        self.tails = tails;
        self.links = None;
        self
    }

    /// Reuse links, present for profiles extracted from a trace.
    pub fn links(&self) -> Option<&ReuseLinks> {
        self.links.as_ref()
    }

    pub fn with_links(mut self, links: ReuseLinks) -> Result<Self> {
        links.check(&self.u_counts, &self.tails)?;
        self.links = Some(links);
        Ok(self)
    }

    pub fn without_links(mut self) -> Self {
        self.links = None;
        self
    }

    /// Builds a profile directly from pair counts, e.g. for hand-made examples.
    pub fn from_parts(
        pairs: BTreeMap<(u64, u64), u64>,
        first_access: u64,
        writes: u64,
    ) -> Result<Self> {
        let total = pairs.values().sum::<u64>() + first_access;
        if total == 0 {
            return Err(Error::EmptyTrace);
        }
        if writes > total {
            return Err(Error::Argument(format!(
                "write count {writes} exceeds {total} requests"
            )));
        }
        if let Some(&(r, u)) = pairs.keys().find(|&&(r, u)| u > r) {
            return Err(Error::Argument(format!("pair ({r},{u}) has u > r")));
        }
        let max_u = pairs.keys().map(|&(_, u)| u).max();
        let mut u_counts = vec![0u64; max_u.map_or(0, |m| m as usize + 1)];
        for (&(_, u), &c) in &pairs {
            u_counts[u as usize] += c;
        }
        let prob_arr = u_counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self {
            pairs,
            first_access,
            total,
            writes,
            prob_arr,
            u_counts,
            tails: BTreeMap::new(),
            links: None,
        })
    }
}

/// Wire format: `{pairs: [[r,u,count],...], first_access, total, writes,
/// prob_arr}` plus optional tails `[[u,count],...]` and links. In links a
/// previous bucket is stored as `bucket + 1`, with 0 for a first access.
#[derive(Serialize, Deserialize)]
struct ProfileDoc {
    pairs: Vec<[u64; 3]>,
    first_access: u64,
    total: u64,
    writes: u64,
    prob_arr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tails: Vec<[u64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    links: Option<LinksDoc>,
}

#[derive(Serialize, Deserialize)]
struct LinksDoc {
    pairs: Vec<[u64; 3]>,
    tails: Vec<[u64; 3]>,
}

fn encode_prev(p: Option<u32>) -> u64 {
    p.map_or(0, |b| b as u64 + 1)
}

fn decode_prev(x: u64) -> Result<Option<u32>> {
    match x {
        0 => Ok(None),
        x => u32::try_from(x - 1)
            .map(Some)
            .map_err(|_| Error::Argument(format!("bucket {x} out of range"))),
    }
}

impl From<SequenceProfile> for ProfileDoc {
    fn from(p: SequenceProfile) -> Self {
        ProfileDoc {
            pairs: p.pairs.iter().map(|(&(r, u), &c)| [r, u, c]).collect(),
            first_access: p.first_access,
            total: p.total,
            writes: p.writes,
            prob_arr: p.prob_arr,
            tails: p.tails.iter().map(|(&u, &c)| [u, c]).collect(),
            links: p.links.map(|l| LinksDoc {
                pairs: l
                    .pairs
                    .iter()
                    .map(|(&(p, b), &c)| [encode_prev(p), b as u64, c])
                    .collect(),
                tails: l
                    .tails
                    .iter()
                    .map(|(&(p, u), &c)| [encode_prev(p), u, c])
                    .collect(),
            }),
        }
    }
}

impl TryFrom<ProfileDoc> for SequenceProfile {
    type Error = Error;

    fn try_from(doc: ProfileDoc) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for [r, u, c] in doc.pairs {
            *pairs.entry((r, u)).or_insert(0) += c;
        }
        let tails = doc.tails.iter().map(|&[u, c]| (u, c)).collect();
        let mut profile =
            SequenceProfile::from_parts(pairs, doc.first_access, doc.writes)?.with_tails(tails);
        if let Some(l) = doc.links {
            let mut links = ReuseLinks::default();
            for [p, b, c] in l.pairs {
                let b = u32::try_from(b)
                    .map_err(|_| Error::Argument(format!("bucket {b} out of range")))?;
                *links.pairs.entry((decode_prev(p)?, b)).or_insert(0) += c;
            }
            for [p, u, c] in l.tails {
                *links.tails.entry((decode_prev(p)?, u)).or_insert(0) += c;
            }
            profile = profile.with_links(links)?;
        }
        if profile.total != doc.total {
            return Err(Error::Argument(format!(
                "profile total {} does not match pair counts ({})",
                doc.total, profile.total
            )));
        }
        Ok(profile)
    }
}

struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, idx: usize, delta: i64) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over `[0, idx)`.
    fn prefix(&self, idx: usize) -> i64 {
        let mut i = idx;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Streaming `(r, u)` extraction; feed accesses in order.
struct PairScanner {
    /// Latest access time of each page and the bucket of its latest reuse.
    last_seen: HashMap<PageId, (usize, Option<u32>)>,
    marks: Fenwick,
    time: usize,
}

impl PairScanner {
    fn new(len: usize) -> Self {
        Self {
            last_seen: HashMap::new(),
            marks: Fenwick::new(len),
            time: 0,
        }
    }

    /// The access's pair and, for repeats, the bucket of the page's
    /// previous reuse.
    fn step(&mut self, page: PageId) -> (RuPair, Option<u32>) {
        let now = self.time;
        self.time += 1;
        let (pair, prev_bucket, bucket) = match self.last_seen.get(&page) {
            Some(&(prev, prev_bucket)) => {
                let r = (now - prev - 1) as u64;
                let u = (self.marks.prefix(now) - self.marks.prefix(prev + 1)) as u64;
                self.marks.add(prev, -1);
                (RuPair::Seq { r, u }, prev_bucket, Some(reuse_bucket(u)))
            }
            None => (RuPair::FirstAccess, None, None),
        };
        self.last_seen.insert(page, (now, bucket));
        self.marks.add(now, 1);
        (pair, prev_bucket)
    }

    /// Distinct pages seen after each page's latest access, keyed by the
    /// bucket of the page's latest reuse.
    fn tails(&self) -> BTreeMap<(Option<u32>, u64), u64> {
        let mut out = BTreeMap::new();
        let end = self.marks.prefix(self.time);
        for &(last, bucket) in self.last_seen.values() {
            let u = (end - self.marks.prefix(last + 1)) as u64;
            *out.entry((bucket, u)).or_insert(0) += 1;
        }
        out
    }
}

/// Extracts the pair histogram, stack-distance distribution and write count.
pub fn extract_pairs(trace: &Trace) -> Result<SequenceProfile> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut scanner = PairScanner::new(trace.len());
    let mut pairs = BTreeMap::new();
    let mut links = ReuseLinks::default();
    let mut first = 0u64;
    let mut writes = 0u64;
    for access in trace.accesses() {
        if access.op.is_write() {
            writes += 1;
        }
        match scanner.step(access.page) {
            (RuPair::FirstAccess, _) => first += 1,
            (RuPair::Seq { r, u }, prev) => {
                *pairs.entry((r, u)).or_insert(0u64) += 1;
                *links.pairs.entry((prev, reuse_bucket(u))).or_insert(0) += 1;
            }
        }
    }
    links.tails = scanner.tails();
    let mut tails = BTreeMap::new();
    for (&(_, u), &c) in &links.tails {
        *tails.entry(u).or_insert(0) += c;
    }
    SequenceProfile::from_parts(pairs, first, writes)?
        .with_tails(tails)
        .with_links(links)
}

/// Share of requests that repeat the immediately preceding page, i.e. the
/// `(0,0)` pair.
pub fn consecutive_fraction(profile: &SequenceProfile) -> f64 {
    profile.weight(RuPair::Seq { r: 0, u: 0 })
}

pub fn write_ratio(profile: &SequenceProfile) -> f64 {
    profile.write_count() as f64 / profile.total_requests() as f64
}

/// Number of distinct pairs (including `<inf,inf>`) observed in each prefix
/// of the trace. `fractions` must be ascending within `(0, 1]`.
pub fn pair_growth(trace: &Trace, fractions: &[f64]) -> Result<Vec<(f64, usize)>> {
    if fractions.windows(2).any(|w| w[0] > w[1])
        || fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0))
    {
        return Err(Error::Argument(
            "fractions must be ascending values in (0, 1]".into(),
        ));
    }
    let n = trace.len();
    let cutoffs: Vec<usize> = fractions
        .iter()
        .map(|&f| ((f * n as f64).round() as usize).min(n))
        .collect();
    let mut scanner = PairScanner::new(n);
    let mut seen: HashSet<RuPair> = HashSet::new();
    let mut out = Vec::with_capacity(fractions.len());
    let mut next = 0;
    for (i, access) in trace.accesses().iter().enumerate() {
        while next < cutoffs.len() && cutoffs[next] == i {
            out.push((fractions[next], seen.len()));
            next += 1;
        }
        seen.insert(scanner.step(access.page).0);
    }
    while next < cutoffs.len() {
        out.push((fractions[next], seen.len()));
        next += 1;
    }
    Ok(out)
}
