use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use hybridmem::cache::{Estimator, FormulaCache, Route, RunStats};
use hybridmem::hitmodel::MemoryGeometry;
use hybridmem::metrics::{compare, ComparisonRow, EstimateReport, LatencyConfig};
use hybridmem::policies::{clock_dwf_policy, two_lru_policy, HmaPolicy, PolicyConfig};
use hybridmem::profiler::{extract_pairs, SequenceProfile};
use hybridmem::simulator::{simulate, MachineSpec, SimReport};
use hybridmem::trace::{generate_zipf_trace, read_trace_file, Trace};
use hybridmem::Error;

use crate::{
    CacheStatsArgs, Command, EstimateArgs, Format, GenArgs, ModelArgs, PolicyArgs, ProfileArgs,
    RouteArg, SimulateArgs, SweepArgs, TraceArgs, UsageError,
};

const DEFAULT_THRESHOLD: u32 = 4;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Profile(a) => profile(a),
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::CacheStats(a) => cache_stats(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .map_err(Error::from)
                .with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(Error::from)?;
    writeln!(out).map_err(Error::from)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)
        .map_err(Error::from)
        .with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(io::BufReader::new(file))
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))
}

fn load_trace(input: &TraceArgs) -> Result<Trace> {
    let path = input
        .trace
        .as_ref()
        .ok_or_else(|| usage("--trace is required"))?;
    read_trace_file(path, input.page_size_log2)
        .with_context(|| format!("reading {}", path.display()))
}

/// The saved profile if given, else the profile of the trace.
fn load_profile(input: &TraceArgs, model: &ModelArgs) -> Result<SequenceProfile> {
    if let Some(path) = &model.profile_in {
        return read_json(path);
    }
    if input.trace.is_none() {
        return Err(usage("one of --trace and --profile-in is required"));
    }
    let profile = extract_pairs(&load_trace(input)?)?;
    if let Some(path) = &model.profile_out {
        write_json(output(Some(path))?.as_mut(), &profile)?;
    }
    Ok(profile)
}

fn latencies(model: &ModelArgs) -> Result<LatencyConfig> {
    let lat = match &model.latencies {
        Some(p) => read_json(p)?,
        None => LatencyConfig::default(),
    };
    lat.validate()?;
    Ok(lat)
}

fn open_cache(model: &ModelArgs) -> Result<Option<FormulaCache>> {
    match (&model.cache_dir, model.no_cache) {
        (Some(dir), false) => Ok(Some(FormulaCache::open(dir, model.cache_bytes)?)),
        _ => Ok(None),
    }
}

fn route(model: &ModelArgs) -> Route {
    match model.route {
        RouteArg::Numeric => Route::Numeric,
        RouteArg::Exact => Route::Exact,
    }
}

/// The model policy, before any `--p-mig` override.
fn base_policy(args: &PolicyArgs, profile: &SequenceProfile) -> Result<HmaPolicy> {
    match args.policy.as_str() {
        "two-lru" => Ok(two_lru_policy(args.threshold.unwrap_or(DEFAULT_THRESHOLD))?),
        "clock-dwf" => {
            if args.threshold.is_some() {
                return Err(usage("--threshold only applies to two-lru"));
            }
            Ok(clock_dwf_policy(profile))
        }
        path => {
            let mut config: PolicyConfig = read_json(Path::new(path))?;
            if let Some(t) = args.threshold {
                config.threshold = Some(t);
                config.p_mig = None;
            }
            Ok(HmaPolicy::try_from(config)?)
        }
    }
}

fn apply_p_mig(policy: HmaPolicy, p_mig: Option<f64>) -> Result<HmaPolicy> {
    match p_mig {
        Some(p) => {
            let policy = policy.with_p_mig(p);
            policy.validate()?;
            Ok(policy)
        }
        None => Ok(policy),
    }
}

/// Simulator machine for a policy; needs no profile.
fn machine(args: &PolicyArgs) -> Result<MachineSpec> {
    match args.policy.as_str() {
        "two-lru" => Ok(MachineSpec::TwoLru {
            threshold: args.threshold.unwrap_or(DEFAULT_THRESHOLD),
        }),
        "clock-dwf" => Ok(MachineSpec::ClockDwf),
        path => {
            let mut config: PolicyConfig = read_json(Path::new(path))?;
            if let Some(t) = args.threshold {
                config.threshold = Some(t);
                config.p_mig = None;
            }
            HmaPolicy::try_from(config)?
                .machine()
                .ok_or_else(|| usage(format!("policy {path} has no simulator machine")))
        }
    }
}

fn finish(cache: Option<&FormulaCache>) -> Result<()> {
    if let Some(c) = cache {
        log::info!("cache {}: {:?}", c.dir().display(), c.stats());
        c.record_run()?;
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let trace = generate_zipf_trace(a.accesses, a.pages, a.alpha, a.write_ratio, a.seed)?;
    let mut out = output(a.out.as_deref())?;
    trace.write_to(&mut out).map_err(Error::from)?;
    out.flush().map_err(Error::from)?;
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<()> {
    let profile = extract_pairs(&load_trace(&a.input)?)?;
    let mut out = output(a.profile_out.as_deref())?;
    write_json(out.as_mut(), &profile)?;
    out.flush().map_err(Error::from)?;
    Ok(())
}

fn estimate_one(
    a: &EstimateArgs,
    profile: &SequenceProfile,
    cache: Option<&FormulaCache>,
) -> Result<EstimateReport> {
    let geom = MemoryGeometry::new(a.dram_pages, a.nvm_pages)?;
    let policy = apply_p_mig(base_policy(&a.policy, profile)?, a.policy.p_mig)?;
    let lat = latencies(&a.model)?;
    let (report, stats) = Estimator::new(profile, cache, route(&a.model)).estimate(
        geom,
        &policy,
        &lat,
        a.model.pagefactor,
    )?;
    log::info!(
        "evaluations {} cache hit {}",
        stats.evaluations,
        stats.cache_hit
    );
    Ok(report)
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let profile = load_profile(&a.input, &a.model)?;
    let cache = open_cache(&a.model)?;
    let report = estimate_one(&a, &profile, cache.as_ref())?;
    let mut out = output(a.out.as_deref())?;
    match a.format {
        Format::Json => write_json(out.as_mut(), &report)?,
        Format::Csv => writeln!(out, "{}\n{}", EstimateReport::CSV_HEADER, report.csv_row())
            .map_err(Error::from)?,
    }
    out.flush().map_err(Error::from)?;
    finish(cache.as_ref())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let geom = MemoryGeometry::new(a.dram_pages, a.nvm_pages)?;
    let spec = machine(&a.policy)?;
    let trace = load_trace(&a.input)?;
    let report = simulate(&trace, &spec, geom);
    let mut out = output(a.out.as_deref())?;
    match a.format {
        Format::Json => write_json(out.as_mut(), &report)?,
        Format::Csv => {
            writeln!(out, "{}\n{}", SimReport::CSV_HEADER, report.csv_row()).map_err(Error::from)?
        }
    }
    out.flush().map_err(Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    estimate: EstimateReport,
    simulation: SimReport,
    rows: Vec<ComparisonRow>,
}

fn compare_cmd(a: EstimateArgs) -> Result<()> {
    let trace = load_trace(&a.input)?;
    let profile = match &a.model.profile_in {
        Some(p) => read_json(p)?,
        None => {
            let p = extract_pairs(&trace)?;
            if let Some(path) = &a.model.profile_out {
                write_json(output(Some(path))?.as_mut(), &p)?;
            }
            p
        }
    };
    let cache = open_cache(&a.model)?;
    let est = estimate_one(&a, &profile, cache.as_ref())?;
    let geom = MemoryGeometry::new(a.dram_pages, a.nvm_pages)?;
    let sim = simulate(&trace, &machine(&a.policy)?, geom);
    let rows = compare(&est, &sim, &latencies(&a.model)?);
    let mut out = output(a.out.as_deref())?;
    match a.format {
        Format::Json => write_json(
            out.as_mut(),
            &Comparison {
                estimate: est,
                simulation: sim,
                rows,
            },
        )?,
        Format::Csv => {
            writeln!(out, "{}", ComparisonRow::CSV_HEADER).map_err(Error::from)?;
            for r in &rows {
                writeln!(out, "{}", r.csv_row()).map_err(Error::from)?;
            }
        }
    }
    out.flush().map_err(Error::from)?;
    finish(cache.as_ref())
}

/// One configuration of a sweep.
struct Point {
    parameter: String,
    policy: HmaPolicy,
    machine: Option<MachineSpec>,
    geom: MemoryGeometry,
}

#[derive(Serialize)]
struct SweepRow {
    parameter: String,
    report: EstimateReport,
    wall_ms: f64,
    evaluations: u64,
    cache_hit: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulated_hit_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sim_wall_ms: Option<f64>,
}

const SWEEP_CSV_HEADER: &str =
    "parameter,policy,threshold,p_mig,dram_pages,nvm_pages,hit_ratio,amat_ns,nvm_writes,wall_ms,evaluations,cache_hit,simulated_hit_ratio,sim_wall_ms";

impl SweepRow {
    fn csv_row(&self) -> String {
        let r = &self.report;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3},{},{},{},{}",
            self.parameter,
            r.policy,
            r.threshold.map(|t| t.to_string()).unwrap_or_default(),
            r.p_mig,
            r.dram_pages,
            r.nvm_pages,
            r.hit_ratio,
            r.amat_ns,
            r.nvm_writes,
            self.wall_ms,
            self.evaluations,
            self.cache_hit,
            opt(self.simulated_hit_ratio),
            opt(self.sim_wall_ms)
        )
    }
}

/// Parses `dram%:nvm%`.
fn parse_size(s: &str) -> Result<(f64, f64)> {
    let (d, n) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("size {s:?} is not dram%:nvm%")))?;
    let pct = |v: &str| -> Result<f64> {
        let x: f64 = v
            .trim()
            .trim_end_matches('%')
            .parse()
            .map_err(|_| usage(format!("bad percentage {v:?}")))?;
        if !(x >= 0.0 && x.is_finite()) {
            return Err(usage(format!("bad percentage {v:?}")));
        }
        Ok(x)
    };
    Ok((pct(d)?, pct(n)?))
}

fn sweep_points(a: &SweepArgs, profile: &SequenceProfile) -> Result<Vec<Point>> {
    let base = base_policy(&a.policy, profile)?;
    let base_machine = base.machine();
    let mut policies: Vec<(String, HmaPolicy, Option<MachineSpec>)> = Vec::new();
    for &t in &a.thresholds {
        let p = two_lru_policy(t)?;
        log::info!(
            "threshold {t}: p_mig {}{}",
            p.p_mig,
            if p.interpolated {
                " (interpolated)"
            } else {
                ""
            }
        );
        let m = p.machine();
        policies.push((format!("threshold={t}"), p, m));
    }
    for &pm in &a.p_migs {
        policies.push((
            format!("p_mig={pm}"),
            apply_p_mig(base.clone(), Some(pm))?,
            base_machine,
        ));
    }
    if policies.is_empty() {
        let p = apply_p_mig(base, a.policy.p_mig)?;
        policies.push((String::new(), p, base_machine));
    }

    let mut sizes: Vec<(String, MemoryGeometry)> = Vec::new();
    if a.sizes.is_empty() {
        let (Some(d), Some(n)) = (a.dram_pages, a.nvm_pages) else {
            return Err(usage(
                "sweep needs --sizes or both --dram-pages and --nvm-pages",
            ));
        };
        sizes.push((String::new(), MemoryGeometry::new(d, n)?));
    } else {
        let ws = profile.distinct_pages() as f64;
        for s in &a.sizes {
            let (d, n) = parse_size(s)?;
            let pages = |pct: f64| (pct / 100.0 * ws).round() as u64;
            sizes.push((
                format!("size={d}:{n}"),
                MemoryGeometry::new(pages(d), pages(n))?,
            ));
        }
    }

    let mut points = Vec::new();
    for (pname, policy, machine) in &policies {
        for (sname, geom) in &sizes {
            let parameter = [pname.as_str(), sname.as_str()]
                .iter()
                .filter(|s| !s.is_empty())
                .copied()
                .collect::<Vec<_>>()
                .join(";");
            points.push(Point {
                parameter,
                policy: policy.clone(),
                machine: *machine,
                geom: *geom,
            });
        }
    }
    Ok(points)
}

fn sweep(a: SweepArgs) -> Result<()> {
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let trace = if a.simulate {
        Some(load_trace(&a.input)?)
    } else {
        None
    };
    let profile = match (&trace, &a.model.profile_in) {
        (Some(t), None) => extract_pairs(t)?,
        _ => load_profile(&a.input, &a.model)?,
    };
    let points = sweep_points(&a, &profile)?;
    let lat = latencies(&a.model)?;
    let cache = open_cache(&a.model)?;
    let estimator = Estimator::new(&profile, cache.as_ref(), route(&a.model));

    let run_point = |p: &Point| -> Result<SweepRow> {
        let start = Instant::now();
        let (report, stats): (EstimateReport, RunStats) =
            estimator.estimate(p.geom, &p.policy, &lat, a.model.pagefactor)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let (simulated_hit_ratio, sim_wall_ms) = match (&trace, p.machine) {
            (Some(t), Some(m)) => {
                let start = Instant::now();
                let sim = simulate(t, &m, p.geom);
                (
                    Some(sim.hit_ratio),
                    Some(start.elapsed().as_secs_f64() * 1e3),
                )
            }
            _ => (None, None),
        };
        Ok(SweepRow {
            parameter: p.parameter.clone(),
            report,
            wall_ms,
            evaluations: stats.evaluations,
            cache_hit: stats.cache_hit,
            simulated_hit_ratio,
            sim_wall_ms,
        })
    };

    let results: Vec<Mutex<Option<Result<SweepRow>>>> =
        points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..a.jobs.min(points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = points.get(i) else { break };
                let r = run_point(p);
                *results[i].lock().expect("result lock") = Some(r);
            });
        }
    });
    let rows = results
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result lock")
                .expect("every point ran")
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = output(a.out.as_deref())?;
    match a.format {
        Format::Json => write_json(out.as_mut(), &rows)?,
        Format::Csv => {
            writeln!(out, "{SWEEP_CSV_HEADER}").map_err(Error::from)?;
            for r in &rows {
                writeln!(out, "{}", r.csv_row()).map_err(Error::from)?;
            }
        }
    }
    out.flush().map_err(Error::from)?;
    finish(cache.as_ref())
}

#[derive(Serialize)]
struct CacheReport {
    dir: PathBuf,
    #[serde(flatten)]
    inventory: hybridmem::cache::CacheInventory,
}

fn cache_stats(a: CacheStatsArgs) -> Result<()> {
    if !a.cache_dir.is_dir() {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("no cache directory at {}", a.cache_dir.display()),
        ))
        .into());
    }
    let cache = FormulaCache::open(&a.cache_dir, hybridmem::cache::DEFAULT_CACHE_BYTES)?;
    let report = CacheReport {
        dir: a.cache_dir,
        inventory: cache.inventory()?,
    };
    let mut out = output(None)?;
    write_json(out.as_mut(), &report)?;
    out.flush().map_err(Error::from)?;
    Ok(())
}
