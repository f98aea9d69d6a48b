//! Append-only JSONL log of curator decisions and its last-wins view.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
    Unsure,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accept" => Some(Self::Accept),
            "reject" => Some(Self::Reject),
            "unsure" => Some(Self::Unsure),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub pair_id: usize,
    pub decision: Verdict,
    pub confident: bool,
    pub annotator: String,
    /// UTC seconds.
    pub timestamp: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    pub total: usize,
    pub decided: usize,
    pub pending: usize,
    pub accept: usize,
    pub reject: usize,
    pub unsure: usize,
    /// Share of active decisions marked confident; 0 when there are none.
    pub confident_rate: f64,
}

/// Active decisions keyed by `(pair_id, annotator)`, plus the log file.
pub struct DecisionBook {
    path: PathBuf,
    file: File,
    active: BTreeMap<(usize, String), (u64, CurationDecision)>,
    seq: u64,
}

impl DecisionBook {
    /// Opens (creating if needed) the log at `path` and replays it.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(path)
            .with_context(|| format!("opening decision log {}", path.display()))?;
        let mut book = Self {
            path: path.to_path_buf(),
            file,
            active: BTreeMap::new(),
            seq: 0,
        };
        let reader = BufReader::new(File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: CurationDecision =
                serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
            book.apply(d);
        }
        Ok(book)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn apply(&mut self, d: CurationDecision) {
        self.seq += 1;
        self.active.insert((d.pair_id, d.annotator.clone()), (self.seq, d));
    }

    /// Appends to the log, then updates the view.
    pub fn record(&mut self, d: CurationDecision) -> Result<()> {
        let mut line = serde_json::to_string(&d)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.apply(d);
        Ok(())
    }

    pub fn active(&self) -> impl Iterator<Item = &CurationDecision> {
        self.active.values().map(|(_, d)| d)
    }

    /// Whether `pair_id` has an active decision (from `annotator`, or anyone).
    pub fn is_decided(&self, pair_id: usize, annotator: Option<&str>) -> bool {
        match annotator {
            Some(a) => self.active.contains_key(&(pair_id, a.to_string())),
            None => self.active.range((pair_id, String::new())..).next().is_some_and(|((p, _), _)| *p == pair_id),
        }
    }

    /// The most recent active decision on `pair_id` across annotators.
    pub fn latest(&self, pair_id: usize) -> Option<&CurationDecision> {
        self.latest_entry(pair_id).map(|(_, d)| d)
    }

    fn latest_entry(&self, pair_id: usize) -> Option<(u64, &CurationDecision)> {
        self.active
            .range((pair_id, String::new())..)
            .take_while(|((p, _), _)| *p == pair_id)
            .max_by_key(|(_, (seq, _))| *seq)
            .map(|(_, (seq, d))| (*seq, d))
    }

    /// Pair ids whose latest decision is an accept, most recent first.
    pub fn accepted(&self, num_pairs: usize) -> Vec<usize> {
        let mut out: Vec<(u64, usize)> = (0..num_pairs)
            .filter_map(|p| self.latest_entry(p).filter(|(_, d)| d.decision == Verdict::Accept).map(|(seq, _)| (seq, p)))
            .collect();
        out.sort_unstable_by(|x, y| y.cmp(x));
        out.into_iter().map(|(_, p)| p).collect()
    }

    pub fn stats(&self, num_pairs: usize) -> Stats {
        let mut s = Stats {
            total: num_pairs,
            ..Stats::default()
        };
        let mut confident = 0;
        let mut n = 0;
        for d in self.active().filter(|d| d.pair_id < num_pairs) {
            n += 1;
            confident += d.confident as usize;
            match d.decision {
                Verdict::Accept => s.accept += 1,
                Verdict::Reject => s.reject += 1,
                Verdict::Unsure => s.unsure += 1,
            }
        }
        s.decided = (0..num_pairs).filter(|&p| self.is_decided(p, None)).count();
        s.pending = num_pairs - s.decided;
        s.confident_rate = if n == 0 { 0.0 } else { confident as f64 / n as f64 };
        s
    }
}
