use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{HandoverCount, HarnessError, RunMetrics, ThroughputRow};
use crate::controller::ControlEvent;

const THROUGHPUT_HEADER: [&str; 7] = ["t", "user_id", "session_id", "subflow_id", "net_type", "bytes", "state"];
const EVENTS_HEADER: [&str; 4] = ["t", "user_id", "event", "detail"];
const COUNTS_HEADER: [&str; 6] = ["algorithm", "user_id", "handovers", "completed", "failed", "suppressed"];

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// Writes `metrics.json`, `throughput.csv`, `events.csv` and
/// `handover_counts.csv` into `out_dir`, creating it if needed.
pub fn export(metrics: &RunMetrics, out_dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut json = BufWriter::new(File::create(out_dir.join("metrics.json"))?);
    serde_json::to_writer_pretty(&mut json, metrics)?;
    json.write_all(b"\n")?;
    json.flush()?;
    write_csv(&out_dir.join("throughput.csv"), &THROUGHPUT_HEADER, &metrics.throughput)?;
    write_csv(&out_dir.join("events.csv"), &EVENTS_HEADER, &metrics.events)?;
    write_csv(&out_dir.join("handover_counts.csv"), &COUNTS_HEADER, &metrics.counts)?;
    Ok(())
}

/// Reads back a directory written by [`export`].
pub fn import(dir: &Path) -> Result<RunMetrics, HarnessError> {
    let mut m: RunMetrics = serde_json::from_reader(std::io::BufReader::new(File::open(dir.join("metrics.json"))?))?;
    m.throughput = read_csv::<ThroughputRow>(&dir.join("throughput.csv"))?;
    m.events = read_csv::<ControlEvent>(&dir.join("events.csv"))?;
    m.counts = read_csv::<HandoverCount>(&dir.join("handover_counts.csv"))?;
    Ok(m)
}
