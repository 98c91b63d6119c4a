//! The three experiments: overhead sweep, utilization grid and adaptation runs.
//!
//! Each experiment expands its spec into a cross-product of cells, runs
//! every (cell, seed) pair as an independent session, possibly in parallel,
//! and assembles the results in a fixed order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::catalog::{build_default_catalog, MediaCatalog};
use crate::client::ClientSession;
use crate::metrics::{aggregate, measure_run, MetricsSummary, RunMetrics};
use crate::netem::{default_trajectory, BandwidthTrajectory};
use crate::session::{run_session, FrameRecord, PacketRecord, SessionConfig};
use crate::transport::analytic_stack_overhead;
use crate::{Error, Result, SimTime, StackConfig, StackKind};

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// 60 s of content at 2 s per segment.
pub const DEFAULT_SEGMENTS_PER_CELL: u32 = 30;
pub const MAX_RTT_MS: u64 = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Overhead,
    Utilization,
    Adaptation,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Overhead => "overhead",
            Experiment::Utilization => "utilization",
            Experiment::Adaptation => "adaptation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub experiment: Experiment,
    pub stacks: Vec<StackKind>,
    pub rtts_ms: Vec<u64>,
    /// Levels swept by the overhead and utilization experiments.
    pub levels: Vec<usize>,
    /// Shaped rate of the adaptation experiment.
    pub trajectory: Arc<BandwidthTrajectory>,
    pub catalog: MediaCatalog,
    pub seeds: Vec<u64>,
    /// Where CSV files go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Segments fetched per fixed-level cell.
    pub segments_per_cell: u32,
    /// Also write per-run packet and frame logs.
    pub dump_packets: bool,
}

impl ScenarioSpec {
    pub fn new(experiment: Experiment) -> Self {
        let catalog = build_default_catalog();
        let rtts_ms = match experiment {
            Experiment::Overhead => vec![0],
            _ => crate::netem::RTT_PRESETS_MS.to_vec(),
        };
        ScenarioSpec {
            experiment,
            stacks: StackKind::ALL.to_vec(),
            rtts_ms,
            levels: (0..catalog.level_count()).collect(),
            trajectory: Arc::new(default_trajectory()),
            catalog,
            seeds: DEFAULT_SEEDS.to_vec(),
            out_dir: None,
            segments_per_cell: DEFAULT_SEGMENTS_PER_CELL,
            dump_packets: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn distinct<T: PartialEq>(what: &'static str, items: &[T]) -> Result<()> {
            if items.is_empty() {
                return Err(Error::invalid(what, "list is empty"));
            }
            for (i, a) in items.iter().enumerate() {
                if items[..i].contains(a) {
                    return Err(Error::invalid(what, "list has duplicates"));
                }
            }
            Ok(())
        }
        distinct("stacks", &self.stacks)?;
        distinct("rtts", &self.rtts_ms)?;
        distinct("seeds", &self.seeds)?;
        if let Some(&rtt) = self.rtts_ms.iter().find(|&&r| r > MAX_RTT_MS) {
            return Err(Error::invalid("rtts", format!("{rtt} ms exceeds {MAX_RTT_MS} ms")));
        }
        if self.experiment != Experiment::Adaptation {
            distinct("levels", &self.levels)?;
            if let Some(&l) = self.levels.iter().find(|&&l| l >= self.catalog.level_count()) {
                return Err(Error::OutOfRange { what: "level", index: l, limit: self.catalog.level_count() });
            }
            if self.segments_per_cell == 0 || self.segments_per_cell > self.catalog.segment_count() {
                return Err(Error::invalid(
                    "segments per cell",
                    format!("{} not in 1..={}", self.segments_per_cell, self.catalog.segment_count()),
                ));
            }
        }
        if let Some(dir) = &self.out_dir {
            if dir.exists() && !dir.is_dir() {
                return Err(Error::invalid("output directory", format!("{} is not a directory", dir.display())));
            }
        }
        Ok(())
    }

    fn expect(&self, experiment: Experiment) -> Result<()> {
        if self.experiment != experiment {
            return Err(Error::invalid(
                "scenario",
                format!("expected a {} spec, got {}", experiment.name(), self.experiment.name()),
            ));
        }
        self.validate()
    }
}

/// One cell of the cross-product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    stack: StackKind,
    rtt_ms: u64,
    level: Option<usize>,
}

impl Cell {
    fn id(&self, experiment: Experiment) -> String {
        let mut id = format!("{}/{}/rtt{}", experiment.name(), self.stack.name(), self.rtt_ms);
        if let Some(level) = self.level {
            id += &format!("/level{level:02}");
        }
        id
    }

    fn file_stem(&self, seed: u64) -> String {
        let mut stem = format!("{}_rtt{}", self.stack.name(), self.rtt_ms);
        if let Some(level) = self.level {
            stem += &format!("_level{level:02}");
        }
        format!("{stem}_seed{seed}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario_id: String,
    pub stack: StackKind,
    pub rtt_ms: u64,
    /// Fixed level, for the overhead and utilization experiments.
    pub level: Option<usize>,
    /// Link rate, or the trajectory mean over the session for adaptation runs.
    pub rate_kbps: f64,
    pub summary: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
}

/// Mean utilization of one stack at one RTT across levels.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCell {
    pub stack: StackKind,
    pub rtt_ms: u64,
    pub utilization: f64,
    pub levels: usize,
}

const SUMMARY_HEADER: [&str; 8] = [
    "scenario_id",
    "stack",
    "rtt_ms",
    "rate_kbps",
    "overhead",
    "utilization",
    "avg_throughput_kbps",
    "runs",
];

fn summary_record(row: &ResultRow, rate_kbps: f64, m: (f64, f64, f64), runs: usize) -> [String; 8] {
    [
        row.scenario_id.clone(),
        row.stack.name().to_owned(),
        row.rtt_ms.to_string(),
        format!("{rate_kbps:.3}"),
        format!("{:.6}", m.0),
        format!("{:.6}", m.1),
        format!("{:.3}", m.2),
        runs.to_string(),
    ]
}

impl ResultTable {
    pub fn row(&self, stack: StackKind, rtt_ms: u64, level: Option<usize>) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.stack == stack && r.rtt_ms == rtt_ms && r.level == level)
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_HEADER)?;
        for row in &self.rows {
            let s = &row.summary;
            w.write_record(summary_record(
                row,
                row.rate_kbps,
                (s.overhead, s.utilization, s.avg_throughput_kbps),
                s.run_count(),
            ))?;
        }
        w.flush().map_err(|e| Error::io("summary", e))?;
        Ok(())
    }

    /// The same columns restricted to one seed's run of every cell.
    pub fn write_seed_csv<W: Write>(&self, seed: u64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_HEADER)?;
        for row in &self.rows {
            let run = row
                .summary
                .runs
                .iter()
                .find(|r| r.seed == seed)
                .ok_or_else(|| Error::invalid("seed", format!("no run with seed {seed} in {}", row.scenario_id)))?;
            w.write_record(summary_record(
                row,
                row.rate_kbps,
                (run.overhead, run.utilization, run.avg_throughput_kbps),
                1,
            ))?;
        }
        w.flush().map_err(|e| Error::io("seed summary", e))?;
        Ok(())
    }

    /// Per stack and RTT, the mean utilization over all levels.
    pub fn rtt_averages(&self) -> Vec<AveragedCell> {
        let mut cells: Vec<AveragedCell> = Vec::new();
        for row in &self.rows {
            match cells.iter_mut().find(|c| c.stack == row.stack && c.rtt_ms == row.rtt_ms) {
                Some(c) => {
                    c.utilization += row.summary.utilization;
                    c.levels += 1;
                }
                None => cells.push(AveragedCell {
                    stack: row.stack,
                    rtt_ms: row.rtt_ms,
                    utilization: row.summary.utilization,
                    levels: 1,
                }),
            }
        }
        for c in &mut cells {
            c.utilization /= c.levels as f64;
        }
        cells
    }
}

pub fn write_averages_csv<W: Write>(cells: &[AveragedCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stack", "rtt_ms", "utilization", "levels"])?;
    for c in cells {
        w.write_record([
            c.stack.name().to_owned(),
            c.rtt_ms.to_string(),
            format!("{:.6}", c.utilization),
            c.levels.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("averages", e))?;
    Ok(())
}

/// Per-segment trace of one adaptation run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub stack: StackKind,
    pub rtt_ms: u64,
    pub seed: u64,
    pub session: ClientSession,
}

#[derive(Debug, Clone)]
pub struct AdaptationOutput {
    pub table: ResultTable,
    pub traces: Vec<RunTrace>,
}

struct RunResult {
    metrics: RunMetrics,
    rate_kbps: f64,
    session: Option<ClientSession>,
    packets: Vec<PacketRecord>,
    frames: Vec<FrameRecord>,
}

fn cells(spec: &ScenarioSpec) -> Vec<Cell> {
    let mut out = Vec::new();
    for &stack in &spec.stacks {
        for &rtt_ms in &spec.rtts_ms {
            if spec.experiment == Experiment::Adaptation {
                out.push(Cell { stack, rtt_ms, level: None });
            } else {
                for &level in &spec.levels {
                    out.push(Cell { stack, rtt_ms, level: Some(level) });
                }
            }
        }
    }
    out
}

fn run_cell(spec: &ScenarioSpec, cell: Cell, seed: u64, id: &str) -> Result<RunResult> {
    let rtt = SimTime::from_millis(cell.rtt_ms);
    let mut cfg = match cell.level {
        Some(level) => {
            let rate = spec.catalog.representation(level)?.bitrate_kbps;
            let mut cfg = SessionConfig::new(cell.stack, rtt, Arc::new(BandwidthTrajectory::constant(rate)?));
            cfg.client.fixed_level = Some(level);
            cfg.segment_limit = Some(spec.segments_per_cell);
            cfg
        }
        None => SessionConfig::new(cell.stack, rtt, spec.trajectory.clone()),
    };
    cfg.seed = seed;
    cfg.record_packets = spec.dump_packets;
    cfg.record_frames = spec.dump_packets;
    let out = run_session(&spec.catalog, &cfg)?;
    let rate_kbps = match cell.level {
        Some(level) => f64::from(spec.catalog.representation(level)?.bitrate_kbps),
        None => spec.trajectory.time_weighted_mean(out.session.last_byte_at()),
    };
    let metrics = measure_run(id, &out.session, rate_kbps)?;
    let keep_session = spec.experiment == Experiment::Adaptation;
    Ok(RunResult {
        metrics,
        rate_kbps,
        session: keep_session.then_some(out.session),
        packets: out.packets,
        frames: out.frames,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(BufWriter::new(file))
}

fn write_packets<W: Write>(packets: &[PacketRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_us", "direction", "header_bytes", "payload_bytes", "stream_id", "kind", "dropped"])?;
    for p in packets {
        w.write_record([
            p.time.as_micros().to_string(),
            p.direction.name().to_owned(),
            p.header_bytes.to_string(),
            p.payload_bytes.to_string(),
            p.stream_id.map_or(String::new(), |s| s.to_string()),
            p.kind.to_owned(),
            u8::from(p.dropped).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("packets", e))?;
    Ok(())
}

fn write_frames<W: Write>(frames: &[FrameRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_us", "direction", "stream", "frame_type", "size"])?;
    for f in frames {
        w.write_record([
            f.time.as_micros().to_string(),
            f.direction.name().to_owned(),
            f.stream.to_string(),
            f.frame_type.to_owned(),
            f.size.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("frames", e))?;
    Ok(())
}

/// Runs every (cell, seed) pair and assembles rows in cross-product order.
fn execute(spec: &ScenarioSpec) -> Result<(ResultTable, Vec<RunTrace>)> {
    let cells = cells(spec);
    let jobs: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|c| spec.seeds.iter().map(move |&s| (c, s))).collect();
    let results: Vec<Result<RunResult>> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let id = cells[c].id(spec.experiment);
            run_cell(spec, cells[c], seed, &id).map_err(|e| e.in_scenario(format!("{id} seed {seed}")))
        })
        .collect();

    if let Some(dir) = &spec.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = Vec::with_capacity(cells.len());
    let mut traces = Vec::new();
    let mut results = results.into_iter();
    for cell in &cells {
        let id = cell.id(spec.experiment);
        let mut runs = Vec::with_capacity(spec.seeds.len());
        let mut rate_sum = 0.0;
        for &seed in &spec.seeds {
            let r = results.next().expect("one result per job")?;
            if let (Some(dir), true) = (&spec.out_dir, spec.dump_packets) {
                let stem = cell.file_stem(seed);
                write_packets(&r.packets, create(dir, &format!("packets_{stem}.csv"))?)?;
                write_frames(&r.frames, create(dir, &format!("frames_{stem}.csv"))?)?;
            }
            if let Some(session) = r.session {
                if let Some(dir) = &spec.out_dir {
                    session.write_trace_csv(create(dir, &format!("trace_{}.csv", cell.file_stem(seed)))?)?;
                }
                traces.push(RunTrace { stack: cell.stack, rtt_ms: cell.rtt_ms, seed, session });
            }
            rate_sum += r.rate_kbps;
            runs.push(r.metrics);
        }
        let summary = aggregate(&runs).map_err(|e| e.in_scenario(&id))?;
        rows.push(ResultRow {
            scenario_id: id,
            stack: cell.stack,
            rtt_ms: cell.rtt_ms,
            level: cell.level,
            rate_kbps: rate_sum / spec.seeds.len() as f64,
            summary,
        });
    }
    let table = ResultTable { experiment: spec.experiment, rows };

    if let Some(dir) = &spec.out_dir {
        let name = spec.experiment.name();
        table.write_summary_csv(create(dir, &format!("{name}_summary.csv"))?)?;
        for &seed in &spec.seeds {
            table.write_seed_csv(seed, create(dir, &format!("{name}_seed{seed}.csv"))?)?;
        }
        if spec.experiment == Experiment::Utilization {
            write_averages_csv(&table.rtt_averages(), create(dir, "table1.csv")?)?;
        }
    }
    Ok((table, traces))
}

/// Every stack at every level, with the link shaped to the level's bitrate.
pub fn run_overhead_sweep(spec: &ScenarioSpec) -> Result<ResultTable> {
    spec.expect(Experiment::Overhead)?;
    Ok(execute(spec)?.0)
}

/// Every stack at every RTT and level; `ResultTable::rtt_averages` gives
/// the per-stack, per-RTT means.
pub fn run_utilization_grid(spec: &ScenarioSpec) -> Result<ResultTable> {
    spec.expect(Experiment::Utilization)?;
    Ok(execute(spec)?.0)
}

/// Full adaptive sessions against the trajectory.
pub fn run_adaptation(spec: &ScenarioSpec) -> Result<AdaptationOutput> {
    spec.expect(Experiment::Adaptation)?;
    let (table, traces) = execute(spec)?;
    Ok(AdaptationOutput { table, traces })
}

/// Header bytes per full-MTU frame of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct Table2Row {
    pub path: &'static str,
    pub ethernet: u32,
    pub ip: u32,
    pub transport: u32,
    pub mtu: u32,
    pub overhead: f64,
}

pub fn table2() -> Vec<Table2Row> {
    [("TCP", StackKind::Http2Tcp), ("QUIC", StackKind::Http1Quic)]
        .into_iter()
        .map(|(path, kind)| {
            let stack = StackConfig::new(kind);
            Table2Row {
                path,
                ethernet: stack.headers.ethernet,
                ip: stack.headers.ip,
                transport: stack.headers.transport,
                mtu: stack.mtu,
                overhead: analytic_stack_overhead(&stack),
            }
        })
        .collect()
}

pub fn write_table2_csv<W: Write>(rows: &[Table2Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "ethernet_bytes", "ip_bytes", "transport_bytes", "total_bytes", "mtu_bytes", "overhead_percent"])?;
    for r in rows {
        w.write_record([
            r.path.to_owned(),
            r.ethernet.to_string(),
            r.ip.to_string(),
            r.transport.to_string(),
            (r.ethernet + r.ip + r.transport).to_string(),
            r.mtu.to_string(),
            format!("{:.4}", r.overhead * 100.0),
        ])?;
    }
    w.flush().map_err(|e| Error::io("table2", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(experiment: Experiment) -> ScenarioSpec {
        let mut spec = ScenarioSpec::new(experiment);
        spec.stacks = vec![StackKind::Http2Tcp, StackKind::Http1Quic];
        spec.levels = vec![0, 13];
        spec.seeds = vec![1, 2];
        spec.segments_per_cell = 3;
        spec
    }

    #[test]
    fn validation() {
        let mut spec = small(Experiment::Overhead);
        assert!(spec.validate().is_ok());
        spec.seeds.clear();
        assert!(spec.validate().is_err());
        let mut spec = small(Experiment::Utilization);
        spec.levels = vec![14];
        assert!(spec.validate().is_err());
        let mut spec = small(Experiment::Utilization);
        spec.stacks = vec![StackKind::Http2Tcp, StackKind::Http2Tcp];
        assert!(spec.validate().is_err());
        assert!(run_overhead_sweep(&small(Experiment::Utilization)).is_err());
    }

    #[test]
    fn table_covers_cross_product_in_order() {
        let table = run_utilization_grid(&small(Experiment::Utilization)).unwrap();
        assert_eq!(table.rows.len(), 2 * 3 * 2);
        let keys: Vec<_> = table.rows.iter().map(|r| (r.stack, r.rtt_ms, r.level)).collect();
        assert_eq!(keys[0], (StackKind::Http2Tcp, 0, Some(0)));
        assert_eq!(keys[1], (StackKind::Http2Tcp, 0, Some(13)));
        assert_eq!(keys[2], (StackKind::Http2Tcp, 50, Some(0)));
        assert!(table.rows.iter().all(|r| r.summary.run_count() == 2));
        assert_eq!(table.rtt_averages().len(), 6);
        assert_eq!(table.row(StackKind::Http1Quic, 150, Some(13)).unwrap().rate_kbps, 4_500.0);
    }

    #[test]
    fn table2_values() {
        let rows = table2();
        assert_eq!(rows[0].ethernet + rows[0].ip + rows[0].transport, 66);
        assert_eq!(rows[1].ethernet + rows[1].ip + rows[1].transport, 42);
        assert!((rows[0].overhead * 100.0 - 4.36).abs() < 0.005);
        assert!((rows[1].overhead * 100.0 - 3.38).abs() < 0.005);
    }
}
