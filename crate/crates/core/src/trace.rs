//! Page-granular memory access traces.
//!
//! The on-disk format is plain text, one access per line:
//!
//! ```text
//! # comment
//! R 0x7f001000
//! W 4096
//! ```
//!
//! Addresses may be hexadecimal (`0x` prefix) or decimal and are turned into
//! page ids by shifting right by `page_size_log2`. Input traces are assumed to
//! already be filtered by the processor caches; no cache modeling happens here.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PageId = u64;

/// 4 KiB pages.
pub const DEFAULT_PAGE_SIZE_LOG2: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn is_write(self) -> bool {
        matches!(self, Op::Write)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PageAccess {
    pub page: PageId,
    pub op: Op,
}

impl PageAccess {
    pub fn read(page: PageId) -> Self {
        Self { page, op: Op::Read }
    }

    pub fn write(page: PageId) -> Self {
        Self {
            page,
            op: Op::Write,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    accesses: Vec<PageAccess>,
    page_size_log2: u32,
    source: String,
}

impl Trace {
    pub fn new(accesses: Vec<PageAccess>, page_size_log2: u32, source: impl Into<String>) -> Self {
        Self {
            accesses,
            page_size_log2,
            source: source.into(),
        }
    }

    /// Builds a read-only trace straight from page ids.
    pub fn from_pages(pages: &[PageId]) -> Self {
        Self::new(
            pages.iter().map(|&p| PageAccess::read(p)).collect(),
            DEFAULT_PAGE_SIZE_LOG2,
            "inline",
        )
    }

    pub fn accesses(&self) -> &[PageAccess] {
        &self.accesses
    }

    pub fn len(&self) -> usize {
        self.accesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accesses.is_empty()
    }

    pub fn page_size_log2(&self) -> u32 {
        self.page_size_log2
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// The first `len` accesses as a new trace.
    pub fn prefix(&self, len: usize) -> Trace {
        let len = len.min(self.accesses.len());
        Trace {
            accesses: self.accesses[..len].to_vec(),
            page_size_log2: self.page_size_log2,
            source: format!("{}[..{}]", self.source, len),
        }
    }

    /// Writes the trace in the text format, one access per line, using byte
    /// addresses at the start of each page.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# source: {}", self.source)?;
        for a in &self.accesses {
            let tag = match a.op {
                Op::Read => 'R',
                Op::Write => 'W',
            };
            writeln!(out, "{} {:#x}", tag, a.page << self.page_size_log2)?;
        }
        Ok(())
    }
}

pub fn page_of(address: u64, page_size_log2: u32) -> PageId {
    address >> page_size_log2
}

fn parse_address(token: &str) -> Option<u64> {
    if let Some(hex) = token
        .strip_prefix("0x")
        .or_else(|| token.strip_prefix("0X"))
    {
        u64::from_str_radix(hex, 16).ok()
    } else {
        token.parse().ok()
    }
}

fn parse_line(line: &str, page_size_log2: u32) -> Option<PageAccess> {
    let mut parts = line.split_whitespace();
    let op = match parts.next()? {
        "R" | "r" => Op::Read,
        "W" | "w" => Op::Write,
        _ => return None,
    };
    let address = parse_address(parts.next()?)?;
    if parts.next().is_some() {
        return None;
    }
    Some(PageAccess {
        page: page_of(address, page_size_log2),
        op,
    })
}

/// Parses a text trace. Blank lines and `#` comments are skipped.
pub fn parse_trace<R: Read>(stream: R, page_size_log2: u32) -> Result<Trace> {
    parse_trace_named(stream, page_size_log2, "stream")
}

fn parse_trace_named<R: Read>(stream: R, page_size_log2: u32, source: &str) -> Result<Trace> {
    if page_size_log2 >= 64 {
        return Err(Error::Argument(format!(
            "page_size_log2 must be below 64, got {page_size_log2}"
        )));
    }
    let reader = BufReader::new(stream);
    let mut accesses = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_line(trimmed, page_size_log2) {
            Some(access) => accesses.push(access),
            None => {
                return Err(Error::Parse {
                    line: idx + 1,
                    content: trimmed.to_string(),
                })
            }
        }
    }
    if accesses.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(Trace::new(accesses, page_size_log2, source))
}

/// Reads a trace file; names ending in `.gz` are decompressed on the fly.
pub fn read_trace_file(path: &Path, page_size_log2: u32) -> Result<Trace> {
    let file = File::open(path)?;
    let name = path.display().to_string();
    if name.ends_with(".gz") {
        parse_trace_named(GzDecoder::new(file), page_size_log2, &name)
    } else {
        parse_trace_named(file, page_size_log2, &name)
    }
}

/// Synthetic trace where page `i` is drawn with probability proportional to
/// `(i + 1)^-alpha` and each access is a write with probability `write_ratio`.
pub fn generate_zipf_trace(
    n: usize,
    pages: u64,
    alpha: f64,
    write_ratio: f64,
    seed: u64,
) -> Result<Trace> {
    if n == 0 || pages == 0 {
        return Err(Error::Argument(
            "access and page counts must be positive".into(),
        ));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Argument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(0.0..=1.0).contains(&write_ratio) {
        return Err(Error::Argument(format!(
            "write_ratio must be a probability, got {write_ratio}"
        )));
    }
    let zipf = Zipf::new(pages as f64, alpha)
        .map_err(|e| Error::Argument(format!("zipf distribution: {e}")))?;
    let mut rng = StdRng::seed_from_u64(seed);
    let accesses = (0..n)
        .map(|_| {
            // Zipf samples ranks in [1, pages].
            let rank = zipf.sample(&mut rng) as u64;
            let op = if rng.random::<f64>() < write_ratio {
                Op::Write
            } else {
                Op::Read
            };
            PageAccess {
                page: rank.saturating_sub(1).min(pages - 1),
                op,
            }
        })
        .collect();
    Ok(Trace::new(
        accesses,
        DEFAULT_PAGE_SIZE_LOG2,
        format!("zipf(n={n},pages={pages},alpha={alpha},w={write_ratio},seed={seed})"),
    ))
}
