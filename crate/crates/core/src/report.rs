//! Run summary, histogram and density-table output.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ControllerChoice;
use crate::error::{Error, Result};
use crate::harness::{DensitySummary, EpisodeRecord, HistogramBin, SteadyErrorReport};
use crate::supervisor::ControllerKind;

pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLE_FILE: &str = "table.txt";
pub const CONFIG_FILE: &str = "config.txt";

/// Episode statistics for a single controller run without a partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnpairedSummary {
    pub n_pedestrians: usize,
    pub controller: ControllerKind,
    pub episodes: usize,
    pub mean_duration: f64,
    pub stops: usize,
    pub collisions: usize,
    pub timeouts: usize,
}

impl UnpairedSummary {
    pub fn from_records(n_pedestrians: usize, controller: ControllerKind, records: &[EpisodeRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyAggregate);
        }
        Ok(Self {
            n_pedestrians,
            controller,
            episodes: records.len(),
            mean_duration: records.iter().map(|r| r.duration).sum::<f64>() / records.len() as f64,
            stops: records.iter().filter(|r| r.stopped).count(),
            collisions: records.iter().filter(|r| r.collided).count(),
            timeouts: records.iter().filter(|r| r.completion_time.is_none()).count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub episodes: usize,
    pub controller: ControllerChoice,
    /// Paired results per crowd size, in run order.
    pub densities: Vec<DensitySummary>,
    pub unpaired: Vec<UnpairedSummary>,
    pub pid_steady_error: SteadyErrorReport,
}

impl RunSummary {
    pub fn collisions(&self) -> usize {
        self.densities.iter().map(|d| d.collisions).sum::<usize>()
            + self.unpaired.iter().map(|u| u.collisions).sum::<usize>()
    }

    pub fn load(out: &Path) -> Result<Self> {
        let path = out.join(SUMMARY_FILE);
        if !path.is_file() {
            return Err(Error::MissingInput(path));
        }
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(out.join(SUMMARY_FILE), text)?;
        Ok(())
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "N.A.".to_string(), |x| format!("{x:.4}"))
}

/// Plain-text table of mean MPC − PID time differences, one row per crowd size.
pub fn density_table(summary: &RunSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Average time difference, MPC - PID (s)");
    let _ = writeln!(s, "{:<12}{:>12}{:>16}{:>12}{:>8}", "Pedestrians", "General", "Stop-and-Wait", "Non-stop", "Pairs");
    for d in &summary.densities {
        let _ = writeln!(
            s,
            "{:<12}{:>12}{:>16}{:>12}{:>8}",
            d.n_pedestrians,
            cell(d.general.mean),
            cell(d.stop_and_wait.mean),
            cell(d.non_stop.mean),
            d.pairs
        );
    }
    for u in &summary.unpaired {
        let _ = writeln!(
            s,
            "{} only, {} pedestrians: {} episodes, mean time {:.4} s, {} stopped, {} timed out",
            u.controller.as_str(),
            u.n_pedestrians,
            u.episodes,
            u.mean_duration,
            u.stops,
            u.timeouts
        );
    }
    let e = &summary.pid_steady_error;
    let _ = writeln!(
        s,
        "PID steady error at v_ref = {} m/s: {:.4} m/s after 15 s, {:.4} m/s after {} s (reference {:.2} m/s)",
        e.v_ref, e.error_at_15s, e.error_at_end, e.duration, e.reference_error
    );
    let _ = writeln!(s, "Collisions: {}", summary.collisions());
    s
}

fn write_histogram(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    // Header is written even when there are no bins.
    w.write_record(["bin_left", "bin_right", "count"])?;
    for b in bins {
        w.write_record([b.bin_left.to_string(), b.bin_right.to_string(), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write histogram CSVs and the density table derived from `summary`.
/// Returns the files written.
pub fn write_derived(out: &Path, summary: &RunSummary) -> Result<Vec<PathBuf>> {
    let dir = out.join("histograms");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for d in &summary.densities {
        for (name, bins) in d.histograms() {
            let path = dir.join(format!("n{}_{name}.csv", d.n_pedestrians));
            write_histogram(&path, &bins)?;
            written.push(path);
        }
    }
    let table = out.join(TABLE_FILE);
    fs::write(&table, density_table(summary))?;
    written.push(table);
    Ok(written)
}

/// Regenerate derived outputs from an existing run directory.
pub fn regenerate(out: &Path) -> Result<RunSummary> {
    let summary = RunSummary::load(out)?;
    write_derived(out, &summary)?;
    Ok(summary)
}
