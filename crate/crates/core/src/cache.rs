//! On-disk store of solved operating points and chain polynomials.
//!
//! Every record is a gzip-compressed JSON document carrying the format
//! version and the key it was stored under. The version is also part of the
//! file name, so files written by another version are skipped without being
//! read or deleted. Writers race through a temporary file and a hard link:
//! the first record stored under a key wins and later ones are dropped.
//! The store is kept under a byte budget by removing the least recently
//! used current-version files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::SystemTime;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hitmodel::MemoryGeometry;
use crate::markov::{hex, solve, total_miss, MarkovState, MissPoly, Solution, SolveContext};
use crate::metrics::{build_report, EstimateReport, LatencyConfig};
use crate::policies::HmaPolicy;
use crate::profiler::SequenceProfile;

pub const CACHE_FORMAT_VERSION: u32 = 1;

/// Default byte budget of a cache directory.
pub const DEFAULT_CACHE_BYTES: u64 = 256 * 1024 * 1024;

const SUFFIX: &str = ".json.gz";
const RUN_LOG: &str = "runs.log";

#[derive(Serialize, Deserialize)]
struct Record<T> {
    version: u32,
    key: String,
    payload: T,
}

#[derive(Serialize)]
struct RecordRef<'a, T> {
    version: u32,
    key: &'a str,
    payload: &'a T,
}

/// Counters of one process's use of a cache.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Records that could not be used: wrong version, key or content.
    pub rejected: u64,
    pub writes: u64,
    pub evictions: u64,
    /// Chain evaluations spent on cache misses.
    pub evaluations: u64,
}

impl CacheStats {
    fn add(&mut self, o: &CacheStats) {
        self.hits += o.hits;
        self.misses += o.misses;
        self.rejected += o.rejected;
        self.writes += o.writes;
        self.evictions += o.evictions;
        self.evaluations += o.evaluations;
    }
}

/// What is on disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheInventory {
    pub entries: u64,
    pub bytes: u64,
    pub stale_entries: u64,
    pub stale_bytes: u64,
    /// Every run's counters recorded in this directory, summed.
    pub lifetime: CacheStats,
    pub runs: u64,
}

#[derive(Debug)]
pub struct FormulaCache {
    dir: PathBuf,
    max_bytes: u64,
    stats: Mutex<CacheStats>,
    tmp_counter: AtomicU64,
}

impl FormulaCache {
    pub fn open(dir: impl Into<PathBuf>, max_bytes: u64) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            max_bytes,
            stats: Mutex::new(CacheStats::default()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stats(&self) -> CacheStats {
        *self.stats.lock().expect("stats lock")
    }

    fn bump(&self, f: impl FnOnce(&mut CacheStats)) {
        f(&mut self.stats.lock().expect("stats lock"));
    }

    fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.dir
            .join(format!("v{CACHE_FORMAT_VERSION}-{kind}-{key}{SUFFIX}"))
    }

    /// The record stored under `(kind, key)`, if a usable one exists.
    pub fn get<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Option<T> {
        let path = self.path(kind, key);
        if !path.exists() {
            self.bump(|s| s.misses += 1);
            return None;
        }
        match read_record::<T>(&path, key) {
            Ok(v) => {
                // Reading counts as use for the LRU budget.
                if let Ok(f) = OpenOptions::new().append(true).open(&path) {
                    let _ = f.set_modified(SystemTime::now());
                }
                self.bump(|s| s.hits += 1);
                Some(v)
            }
            Err(e) => {
                log::warn!("ignoring cache record {}: {e}", path.display());
                self.bump(|s| {
                    s.rejected += 1;
                    s.misses += 1;
                });
                None
            }
        }
    }

    /// Stores a record unless one already exists. Returns whether this
    /// call wrote it.
    pub fn put<T: Serialize>(&self, kind: &str, key: &str, value: &T) -> Result<bool> {
        let path = self.path(kind, key);
        if path.exists() {
            return Ok(false);
        }
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self
            .dir
            .join(format!(".tmp-{}-{n}-{kind}-{key}", std::process::id()));
        {
            let mut enc =
                GzEncoder::new(BufWriter::new(File::create(&tmp)?), Compression::default());
            let rec = RecordRef {
                version: CACHE_FORMAT_VERSION,
                key,
                payload: value,
            };
            serde_json::to_writer(&mut enc, &rec)?;
            enc.finish()?.flush()?;
        }
        let linked = fs::hard_link(&tmp, &path);
        fs::remove_file(&tmp)?;
        match linked {
            Ok(()) => {
                self.bump(|s| s.writes += 1);
                self.enforce_budget(&path)?;
                Ok(true)
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    /// Removes least recently used current-version records until the
    /// directory fits the budget, sparing `keep`.
    fn enforce_budget(&self, keep: &Path) -> Result<()> {
        let mut files = self.current_files()?;
        let mut total: u64 = files.iter().map(|f| f.1).sum();
        if total <= self.max_bytes {
            return Ok(());
        }
        files.sort_by_key(|f| f.2);
        for (path, size, _) in files {
            if total <= self.max_bytes {
                break;
            }
            if path == keep {
                continue;
            }
            if fs::remove_file(&path).is_ok() {
                total -= size;
                self.bump(|s| s.evictions += 1);
            }
        }
        Ok(())
    }

    fn current_files(&self) -> Result<Vec<(PathBuf, u64, SystemTime)>> {
        let prefix = format!("v{CACHE_FORMAT_VERSION}-");
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(&prefix) && name.ends_with(SUFFIX) {
                let meta = entry.metadata()?;
                out.push((entry.path(), meta.len(), meta.modified()?));
            }
        }
        Ok(out)
    }

    pub fn inventory(&self) -> Result<CacheInventory> {
        let prefix = format!("v{CACHE_FORMAT_VERSION}-");
        let mut inv = CacheInventory::default();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.ends_with(SUFFIX) {
                continue;
            }
            let len = entry.metadata()?.len();
            if name.starts_with(&prefix) {
                inv.entries += 1;
                inv.bytes += len;
            } else {
                inv.stale_entries += 1;
                inv.stale_bytes += len;
            }
        }
        if let Ok(log) = fs::read_to_string(self.dir.join(RUN_LOG)) {
            for line in log.lines() {
                if let Ok(s) = serde_json::from_str::<CacheStats>(line) {
                    inv.lifetime.add(&s);
                    inv.runs += 1;
                }
            }
        }
        Ok(inv)
    }

    /// Appends this process's counters to the directory's run log. Lines
    /// are short single writes, so concurrent runs do not interleave.
    pub fn record_run(&self) -> Result<()> {
        let mut line = serde_json::to_string(&self.stats())?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(RUN_LOG))?;
        f.write_all(line.as_bytes())?;
        Ok(())
    }
}

/// Reads one record, checking its version and key.
pub fn read_record<T: DeserializeOwned>(path: &Path, key: &str) -> Result<T> {
    let mut text = String::new();
    GzDecoder::new(BufReader::new(File::open(path)?)).read_to_string(&mut text)?;
    #[derive(Deserialize)]
    struct Header {
        version: u32,
        key: String,
    }
    let header: Header = serde_json::from_str(&text)?;
    if header.version != CACHE_FORMAT_VERSION {
        return Err(Error::CacheVersion {
            found: header.version,
            expected: CACHE_FORMAT_VERSION,
        });
    }
    if header.key != key {
        return Err(Error::Invariant(format!(
            "record holds key {}, expected {key}",
            header.key
        )));
    }
    let rec: Record<T> = serde_json::from_str(&text)?;
    Ok(rec.payload)
}

/// Content hash of a profile.
pub fn profile_digest(profile: &SequenceProfile) -> String {
    let bytes = serde_json::to_vec(profile).expect("profile serializes");
    hex(&Sha256::digest(&bytes))
}

/// How the chain is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Forward propagation at numeric `h`; any profile.
    Numeric,
    /// Memoized polynomials; profiles whose sequences fit the symbolic limit.
    Exact,
}

/// Per-call bookkeeping of an estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub evaluations: u64,
    pub cache_hit: bool,
}

/// Estimates many configurations of one profile, reusing a cache.
pub struct Estimator<'a> {
    profile: &'a SequenceProfile,
    digest: String,
    cache: Option<&'a FormulaCache>,
    route: Route,
}

impl<'a> Estimator<'a> {
    pub fn new(
        profile: &'a SequenceProfile,
        cache: Option<&'a FormulaCache>,
        route: Route,
    ) -> Self {
        Self {
            profile,
            digest: profile_digest(profile),
            cache,
            route,
        }
    }

    /// Cache key of a solved point: the context fingerprint covers the
    /// hit model and policy, the digest the rest of the profile.
    fn solution_key(&self, ctx: &SolveContext) -> String {
        let mut h = Sha256::new();
        h.update(ctx.fingerprint().as_bytes());
        h.update(self.digest.as_bytes());
        h.update([self.route as u8]);
        hex(&h.finalize())
    }

    pub fn estimate(
        &self,
        geom: MemoryGeometry,
        policy: &HmaPolicy,
        lat: &LatencyConfig,
        pagefactor: u64,
    ) -> Result<(EstimateReport, RunStats)> {
        lat.validate()?;
        let ctx = SolveContext::new(self.profile, geom, policy)?;
        let key = self.solution_key(&ctx);
        if let Some(sol) = self.cache.and_then(|c| c.get::<Solution>("solution", &key)) {
            let stats = RunStats {
                evaluations: 0,
                cache_hit: true,
            };
            return Ok((
                build_report(self.profile, &ctx, &sol, lat, pagefactor),
                stats,
            ));
        }
        let sol = match self.route {
            Route::Numeric => solve(self.profile, &ctx)?,
            Route::Exact => self.solve_exact(&ctx)?,
        };
        if let Some(c) = self.cache {
            c.bump(|s| s.evaluations += sol.evaluations);
            c.put("solution", &key, &sol)?;
        }
        let stats = RunStats {
            evaluations: sol.evaluations,
            cache_hit: false,
        };
        Ok((
            build_report(self.profile, &ctx, &sol, lat, pagefactor),
            stats,
        ))
    }

    /// Exact route, seeding and saving the state memo through the cache.
    /// Evaluations count the states solved here.
    fn solve_exact(&self, ctx: &SolveContext) -> Result<Solution> {
        let memo_key = ctx.fingerprint().to_string();
        if let Some(entries) = self
            .cache
            .and_then(|c| c.get::<Vec<(MarkovState, MissPoly)>>("memo", &memo_key))
        {
            ctx.preload_memo(entries);
        }
        let before = ctx.memo_len();
        let poly = total_miss(self.profile, ctx)?;
        let h = poly.solve()?;
        let at = poly.eval(h);
        let solved = (ctx.memo_len() - before) as u64;
        if let (Some(c), true) = (self.cache, solved > 0) {
            c.put("memo", &memo_key, &ctx.memo_entries())?;
        }
        Ok(Solution {
            hit_ratio: h,
            demotions_per_request: at.demotions_per_request,
            dram_share: at.dram_share,
            evaluations: solved,
        })
    }
}
