//! Experiment configuration, sweeps and report emission.
//!
//! A single TOML file names the designs, the LLM runs and the carbon
//! parameters. Every (design, run) pair becomes one sweep point; points run
//! in parallel and the reports are assembled in configuration order, so the
//! same file and seed always produce byte-identical output.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{area_of, energy_of, AreaItem, CarbonParams, CostReport, CostTable};
use crate::lut::{Lut, LutWindow, NonlinearKind, WindowPolicy};
use crate::numeric::{Bf16, Int4};
use crate::perf::noc::TraceRecord;
use crate::perf::{
    noc_schedule, ArrayConfig, BaselineConfig, BaselineKind, Design, GemmEngine, NocConfig, NonlinearEngine,
};
use crate::vlp::{self, ApproxPath, Matrix, QuantizedMatrix};
use crate::workload::{build_graph, tokens_per_second, Category, ModelSpec, OpGraph, Phase, RunSpec};

/// A configuration problem, located by the key that caused it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError { key: key.into(), message: message.to_string() }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    fn runtime(e: impl fmt::Display) -> Self {
        ExperimentError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DesignEntry {
    pub id: String,
    #[serde(default)]
    pub node: ArrayConfig,
    pub gemm: GemmEngine,
    pub nonlinear: NonlinearEngine,
    /// Falls back to the experiment-wide NoC.
    pub noc: Option<NocConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ModelRef {
    Preset(String),
    Spec(ModelSpec),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub id: String,
    pub model: ModelRef,
    pub batch: u64,
    #[serde(default)]
    pub phase: Phase,
    #[serde(default = "default_group")]
    pub group_size: u64,
    pub seq_len: Option<u64>,
}

fn default_group() -> u64 {
    crate::workload::DEFAULT_GROUP_SIZE
}

/// Axes multiplied into the listed runs and VLP designs.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub batches: Vec<u64>,
    pub seq_lens: Vec<u64>,
    pub heights: Vec<u32>,
}

/// Seeded GEMM cross-checks of the functional model.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalChecks {
    pub gemm_cases: usize,
    pub max_dim: usize,
}

impl Default for FunctionalChecks {
    fn default() -> Self {
        FunctionalChecks { gemm_cases: 0, max_dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub workers: Option<usize>,
    /// Design id every normalized column divides by.
    pub baseline: Option<String>,
    pub output_dir: Option<PathBuf>,
    /// Cost table file, relative to the config file. Defaults to the
    /// built-in placeholder table.
    pub cost_table: Option<PathBuf>,
    pub carbon: CarbonParams,
    pub noc: Option<NocConfig>,
    #[serde(default)]
    pub designs: Vec<DesignEntry>,
    #[serde(default)]
    pub runs: Vec<RunEntry>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub functional: FunctionalChecks,
}

/// A validated configuration with sweeps expanded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub seed: u64,
    pub workers: Option<usize>,
    pub baseline: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub cost: CostTable,
    pub carbon: CarbonParams,
    pub designs: Vec<Design>,
    pub runs: Vec<(String, RunSpec)>,
    pub functional: FunctionalChecks,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_else(|| "config".into());
            ConfigError::new(key, e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    /// Validates and expands the configuration. Relative paths resolve
    /// against `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Experiment, ConfigError> {
        self.carbon.validate().map_err(|e| ConfigError::new("carbon", e))?;
        let cost = match &self.cost_table {
            None => CostTable::default(),
            Some(p) => {
                let path = base_dir.join(p);
                let text = fs::read_to_string(&path).map_err(|e| ConfigError::new("cost_table", format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| ConfigError::new("cost_table", e.message()))?
            }
        };
        cost.validate().map_err(|e| ConfigError::new("cost_table", e))?;
        if self.workers == Some(0) {
            return Err(ConfigError::new("workers", "must be at least 1"));
        }
        if self.functional.gemm_cases > 0 && self.functional.max_dim == 0 {
            return Err(ConfigError::new("functional.max_dim", "must be positive"));
        }
        check_sweep(&self.sweep)?;

        let mut designs = Vec::new();
        for (i, d) in self.designs.iter().enumerate() {
            let key = format!("designs[{i}]");
            if d.id.is_empty() {
                return Err(ConfigError::new(format!("{key}.id"), "must not be empty"));
            }
            let base = Design {
                id: d.id.clone(),
                node: d.node.clone(),
                gemm: d.gemm,
                nonlinear: d.nonlinear,
                noc: d.noc.or(self.noc).unwrap_or_default(),
            };
            base.validate().map_err(|e| ConfigError::new(&key, e))?;
            let vlp_rows = is_vlp(&base);
            if vlp_rows {
                design_height(&base).validate_sweep().map_err(|e| ConfigError::new(format!("{key}.node.height"), e))?;
            }
            if vlp_rows && !self.sweep.heights.is_empty() {
                for &h in &self.sweep.heights {
                    designs.push(with_height(&base, h));
                }
            } else {
                designs.push(base);
            }
        }
        unique(designs.iter().map(|d| d.id.as_str()), "designs")?;

        let mut runs = Vec::new();
        for (i, r) in self.runs.iter().enumerate() {
            let key = format!("runs[{i}]");
            let mut model = match &r.model {
                ModelRef::Preset(name) => ModelSpec::preset(name).map_err(|e| ConfigError::new(format!("{key}.model"), e))?,
                ModelRef::Spec(m) => m.clone(),
            };
            if let Some(s) = r.seq_len {
                check_seq(s).map_err(|m| ConfigError::new(format!("{key}.seq_len"), m))?;
                model.seq_len = s;
            }
            let spec = RunSpec { model, batch: r.batch, phase: r.phase, group_size: r.group_size };
            spec.validate().map_err(|e| ConfigError::new(&key, e))?;
            let batches = if self.sweep.batches.is_empty() { vec![None] } else { self.sweep.batches.iter().map(|&b| Some(b)).collect() };
            let seqs = if self.sweep.seq_lens.is_empty() { vec![None] } else { self.sweep.seq_lens.iter().map(|&s| Some(s)).collect() };
            for b in &batches {
                for s in &seqs {
                    let mut id = r.id.clone();
                    let mut run = spec.clone();
                    if let Some(b) = b {
                        id.push_str(&format!("-b{b}"));
                        run.batch = *b;
                    }
                    if let Some(s) = s {
                        id.push_str(&format!("-s{s}"));
                        run.model.seq_len = *s;
                    }
                    runs.push((id, run));
                }
            }
        }
        unique(runs.iter().map(|(id, _)| id.as_str()), "runs")?;

        if let Some(b) = &self.baseline {
            if !designs.iter().any(|d| &d.id == b) {
                return Err(ConfigError::new("baseline", format!("no design with id `{b}`")));
            }
        }
        Ok(Experiment {
            seed: self.seed,
            workers: self.workers,
            baseline: self.baseline.clone(),
            output_dir: self.output_dir.as_ref().map(|p| base_dir.join(p)),
            cost,
            carbon: self.carbon,
            designs,
            runs,
            functional: self.functional.clone(),
        })
    }
}

/// Dotted path of the TOML key at `offset`, following table headers and
/// one level of inline table.
fn key_at(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let line_start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let mut section = String::new();
    for line in text[..line_start].lines() {
        let t = line.trim();
        if t.starts_with('[') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
    }
    let line = text[line_start..].lines().next().unwrap_or("");
    let cut = offset - line_start;
    let mut parts: Vec<String> = Vec::new();
    if !section.is_empty() {
        parts.push(section);
    }
    if let Some((outer, rest)) = line.split_once('=') {
        if !outer.contains('[') {
            parts.push(outer.trim().to_string());
        }
        // Inside an inline table: take the nearest key before the error.
        let brace = outer.len() + 1 + rest.find('{').unwrap_or(usize::MAX - outer.len() - 1);
        if brace < cut {
            let tail = &line[cut..];
            let head = &line[brace + 1..cut];
            let inner = tail
                .split_once('=')
                .map(|(k, _)| k)
                .filter(|k| !k.contains(['{', '}', ',']))
                .or_else(|| head.rsplit(',').next().and_then(|seg| seg.split_once('=')).map(|(k, _)| k));
            if let Some(k) = inner {
                parts.push(k.trim().to_string());
            }
        }
    }
    if parts.is_empty() {
        "config".into()
    } else {
        parts.join(".")
    }
}

fn check_seq(s: u64) -> Result<(), String> {
    if (128..=4096).contains(&s) {
        Ok(())
    } else {
        Err(format!("sequence length {s} outside 128..=4096"))
    }
}

fn check_sweep(s: &Sweep) -> Result<(), ConfigError> {
    for &b in &s.batches {
        if !(1..=32).contains(&b) {
            return Err(ConfigError::new("sweep.batches", format!("batch {b} outside 1..=32")));
        }
    }
    for &q in &s.seq_lens {
        check_seq(q).map_err(|m| ConfigError::new("sweep.seq_lens", m))?;
    }
    for &h in &s.heights {
        ArrayConfig::with_height(h).validate_sweep().map_err(|e| ConfigError::new("sweep.heights", e))?;
    }
    Ok(())
}

fn unique<'a>(ids: impl Iterator<Item = &'a str>, key: &str) -> Result<(), ConfigError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ConfigError::new(key, format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

fn is_vlp(d: &Design) -> bool {
    match d.gemm {
        GemmEngine::Vlp => true,
        GemmEngine::Baseline(b) => b.kind == BaselineKind::Carat,
    }
}

fn design_height(d: &Design) -> ArrayConfig {
    match d.gemm {
        GemmEngine::Baseline(b) => ArrayConfig { height: b.dim, ..d.node.clone() },
        GemmEngine::Vlp => d.node.clone(),
    }
}

fn with_height(d: &Design, h: u32) -> Design {
    let mut out = d.clone();
    out.id = format!("{}-h{h}", d.id);
    out.node.height = h;
    if let GemmEngine::Baseline(b) = d.gemm {
        out.gemm = GemmEngine::Baseline(BaselineConfig { dim: h, ..b });
    }
    if let NonlinearEngine::Baseline(b) = d.nonlinear {
        if b.kind == BaselineKind::MugiL {
            out.nonlinear = NonlinearEngine::Baseline(BaselineConfig { dim: h, ..b });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub design: String,
    pub run: String,
    pub model: String,
    pub phase: Phase,
    pub batch: u64,
    pub seq_len: u64,
    pub nodes: u64,
    pub cycles: u64,
    pub seconds: f64,
    pub throughput: f64,
    pub chip_area_mm2: f64,
    pub node_area_mm2: f64,
    pub energy_j: f64,
    pub offchip_energy_j: f64,
    pub avg_power_w: f64,
    pub energy_eff: f64,
    pub power_eff: f64,
    pub baseline: Option<String>,
    pub norm_throughput: Option<f64>,
    pub norm_energy_eff: Option<f64>,
    pub norm_power_eff: Option<f64>,
    pub norm_area: Option<f64>,
}

impl SummaryRow {
    pub const HEADER: [&'static str; 22] = [
        "design",
        "run",
        "model",
        "phase",
        "batch",
        "seq_len",
        "nodes",
        "cycles",
        "seconds",
        "throughput",
        "chip_area_mm2",
        "node_area_mm2",
        "energy_j",
        "offchip_energy_j",
        "avg_power_w",
        "energy_eff",
        "power_eff",
        "baseline",
        "norm_throughput",
        "norm_energy_eff",
        "norm_power_eff",
        "norm_area",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpRow {
    pub design: String,
    pub run: String,
    pub op: String,
    pub kind: String,
    pub shape: String,
    pub nodes_used: u64,
    pub compute_cycles: u64,
    pub transfer_cycles: u64,
    pub cycles: u64,
    pub bound: String,
    pub utilization: f64,
    pub column_utilization: f64,
    pub fits_buffers: bool,
}

impl OpRow {
    pub const HEADER: [&'static str; 13] = [
        "design",
        "run",
        "op",
        "kind",
        "shape",
        "nodes_used",
        "compute_cycles",
        "transfer_cycles",
        "cycles",
        "bound",
        "utilization",
        "column_utilization",
        "fits_buffers",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownRow {
    pub design: String,
    pub run: String,
    pub proj_cycles: u64,
    pub attn_cycles: u64,
    pub ffn_cycles: u64,
    pub nonlinear_cycles: u64,
    pub proj_share: f64,
    pub attn_share: f64,
    pub ffn_share: f64,
    pub nonlinear_share: f64,
}

impl BreakdownRow {
    pub const HEADER: [&'static str; 10] = [
        "design",
        "run",
        "proj_cycles",
        "attn_cycles",
        "ffn_cycles",
        "nonlinear_cycles",
        "proj_share",
        "attn_share",
        "ffn_share",
        "nonlinear_share",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarbonRow {
    pub design: String,
    pub run: String,
    pub operational_g: f64,
    pub embodied_g: f64,
    pub baseline: Option<String>,
    pub norm_operational: Option<f64>,
    pub norm_embodied: Option<f64>,
}

impl CarbonRow {
    pub const HEADER: [&'static str; 7] =
        ["design", "run", "operational_g", "embodied_g", "baseline", "norm_operational", "norm_embodied"];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalRow {
    pub case: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub group_size: usize,
    pub array_height: usize,
    pub mismatches: usize,
    pub pass: bool,
}

impl FunctionalRow {
    pub const HEADER: [&'static str; 8] = ["case", "m", "n", "k", "group_size", "array_height", "mismatches", "pass"];
}

/// Nested per-point record for the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub design: String,
    pub run: String,
    pub cost: CostReport,
    pub area: Vec<AreaItem>,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub ops: Vec<OpRow>,
    pub breakdown: Vec<BreakdownRow>,
    pub carbon: Vec<CarbonRow>,
    pub functional: Vec<FunctionalRow>,
    pub points: Vec<PointReport>,
}

struct Point {
    summary: SummaryRow,
    ops: Vec<OpRow>,
    breakdown: BreakdownRow,
    carbon: CarbonRow,
    detail: PointReport,
}

fn run_point(exp: &Experiment, design: &Design, run_id: &str, run: &RunSpec) -> Result<Point, ExperimentError> {
    let context = |e: &dyn fmt::Display| ExperimentError::Runtime(format!("{} / {run_id}: {e}", design.id));
    let graph: OpGraph = build_graph(run).map_err(|e| context(&e))?;
    let schedule = noc_schedule(design, &graph.named_shapes()).map_err(|e| context(&e))?;
    let freq = design.node.frequency_hz;
    let seconds = schedule.seconds(freq);
    let tokens = run.tokens();
    let throughput = tokens_per_second(tokens, schedule.total_cycles, freq).map_err(|e| context(&e))?;
    let area = area_of(design, &exp.cost).map_err(|e| context(&e))?;
    let energy = energy_of(design, &schedule.events, seconds, &exp.cost).map_err(|e| context(&e))?;
    let cost = CostReport::new(area.chip_mm2, energy, seconds, tokens as f64, &exp.carbon).map_err(|e| context(&e))?;
    debug_assert!((cost.throughput - throughput).abs() <= 1e-9 * throughput);

    let mut by_cat = [0u64; 4];
    let mut ops = Vec::with_capacity(graph.ops.len());
    for (op, s) in graph.ops.iter().zip(&schedule.ops) {
        let idx = match op.kind.category() {
            Category::Proj => 0,
            Category::Attn => 1,
            Category::Ffn => 2,
            Category::Nonlinear => 3,
        };
        by_cat[idx] += s.timing.cycles;
        ops.push(OpRow {
            design: design.id.clone(),
            run: run_id.to_string(),
            op: op.name.clone(),
            kind: format!("{:?}", op.kind).to_lowercase(),
            shape: crate::perf::noc::describe(&op.shape),
            nodes_used: s.nodes_used,
            compute_cycles: s.compute_cycles,
            transfer_cycles: s.transfer_cycles,
            cycles: s.timing.cycles,
            bound: format!("{:?}", s.timing.bound).to_lowercase(),
            utilization: s.timing.utilization,
            column_utilization: s.timing.column_utilization,
            fits_buffers: s.fits_buffers,
        });
    }
    let total = schedule.total_cycles as f64;
    let share = |c: u64| c as f64 / total;
    Ok(Point {
        summary: SummaryRow {
            design: design.id.clone(),
            run: run_id.to_string(),
            model: run.model.name.clone(),
            phase: run.phase,
            batch: run.batch,
            seq_len: run.model.seq_len,
            nodes: design.noc.nodes(),
            cycles: schedule.total_cycles,
            seconds,
            throughput,
            chip_area_mm2: area.chip_mm2,
            node_area_mm2: area.node_mm2,
            energy_j: cost.energy_j,
            offchip_energy_j: cost.offchip_energy_j,
            avg_power_w: cost.avg_power_w,
            energy_eff: cost.energy_eff,
            power_eff: cost.power_eff,
            baseline: None,
            norm_throughput: None,
            norm_energy_eff: None,
            norm_power_eff: None,
            norm_area: None,
        },
        ops,
        breakdown: BreakdownRow {
            design: design.id.clone(),
            run: run_id.to_string(),
            proj_cycles: by_cat[0],
            attn_cycles: by_cat[1],
            ffn_cycles: by_cat[2],
            nonlinear_cycles: by_cat[3],
            proj_share: share(by_cat[0]),
            attn_share: share(by_cat[1]),
            ffn_share: share(by_cat[2]),
            nonlinear_share: share(by_cat[3]),
        },
        carbon: CarbonRow {
            design: design.id.clone(),
            run: run_id.to_string(),
            operational_g: cost.operational_carbon_g,
            embodied_g: cost.embodied_carbon_g,
            baseline: None,
            norm_operational: None,
            norm_embodied: None,
        },
        detail: PointReport {
            design: design.id.clone(),
            run: run_id.to_string(),
            cost,
            area: area.items,
            trace: schedule.trace(),
        },
    })
}

/// Runs every (design, run) point and the functional checks.
pub fn run_experiment(exp: &Experiment) -> Result<Report, ExperimentError> {
    let pairs: Vec<(&Design, &(String, RunSpec))> =
        exp.designs.iter().flat_map(|d| exp.runs.iter().map(move |r| (d, r))).collect();
    let work = || -> Result<Vec<Point>, ExperimentError> {
        pairs.par_iter().map(|(d, (id, run))| run_point(exp, d, id, run)).collect()
    };
    let points = match exp.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(ExperimentError::runtime)?
            .install(work)?,
        None => work()?,
    };

    let mut report = Report::default();
    for p in points {
        report.summary.push(p.summary);
        report.ops.extend(p.ops);
        report.breakdown.push(p.breakdown);
        report.carbon.push(p.carbon);
        report.points.push(p.detail);
    }
    if let Some(base) = &exp.baseline {
        normalize(&mut report, base);
    }
    report.functional = functional_checks(&exp.functional, exp.seed)?;
    Ok(report)
}

fn normalize(report: &mut Report, base: &str) {
    let find = |run: &str| report.summary.iter().position(|r| r.design == base && r.run == run);
    let idx: Vec<Option<usize>> = report.summary.iter().map(|r| find(&r.run)).collect();
    let summary = report.summary.clone();
    for (row, b) in report.summary.iter_mut().zip(&idx) {
        if let Some(b) = b {
            let b = &summary[*b];
            row.baseline = Some(base.to_string());
            row.norm_throughput = Some(row.throughput / b.throughput);
            row.norm_energy_eff = Some(row.energy_eff / b.energy_eff);
            row.norm_power_eff = Some(row.power_eff / b.power_eff);
            row.norm_area = Some(row.chip_area_mm2 / b.chip_area_mm2);
        }
    }
    let carbon = report.carbon.clone();
    for (row, b) in report.carbon.iter_mut().zip(&idx) {
        if let Some(b) = b {
            let b = &carbon[*b];
            row.baseline = Some(base.to_string());
            row.norm_operational = Some(row.operational_g / b.operational_g);
            row.norm_embodied = Some(row.embodied_g / b.embodied_g);
        }
    }
}

fn random_bf16(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> Bf16 {
    Bf16::from_f32(rng.gen_range(lo..hi))
}

/// Seeded random GEMMs checked against [`vlp::gemm_reference`].
pub fn functional_checks(cfg: &FunctionalChecks, seed: u64) -> Result<Vec<FunctionalRow>, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(cfg.gemm_cases);
    for case in 0..cfg.gemm_cases {
        let m = rng.gen_range(1..=cfg.max_dim);
        let n = rng.gen_range(1..=cfg.max_dim);
        let k = rng.gen_range(1..=cfg.max_dim);
        let divisors: Vec<usize> = (1..=k).filter(|d| k % d == 0).collect();
        let group = divisors[rng.gen_range(0..divisors.len())];
        let height = [1usize, 2, 4, 8, 32][rng.gen_range(0..5)];
        let values: Vec<Int4> = (0..m * k).map(|_| Int4::new(rng.gen_range(-8..=7)).expect("in range")).collect();
        let scales: Vec<Bf16> = (0..m * (k / group)).map(|_| random_bf16(&mut rng, 0.001, 1.0)).collect();
        let b: Vec<Bf16> = (0..k * n).map(|_| random_bf16(&mut rng, -8.0, 8.0)).collect();
        let a = QuantizedMatrix::new(
            Matrix::new(m, k, values).map_err(ExperimentError::runtime)?,
            group,
            Matrix::new(m, k / group, scales).map_err(ExperimentError::runtime)?,
        )
        .map_err(ExperimentError::runtime)?;
        let b = Matrix::new(k, n, b).map_err(ExperimentError::runtime)?;
        let got = vlp::gemm(&a, &b, height).map_err(ExperimentError::runtime)?;
        let want = vlp::gemm_reference(&a, &b).map_err(ExperimentError::runtime)?;
        let mismatches = got.data.iter().zip(&want.data).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        rows.push(FunctionalRow { case, m, n, k, group_size: group, array_height: height, mismatches, pass: mismatches == 0 });
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(ExperimentError::runtime)?;
    w.write_record(header).map_err(ExperimentError::runtime)?;
    for r in rows {
        w.serialize(r).map_err(ExperimentError::runtime)?;
    }
    w.flush().map_err(ExperimentError::runtime)
}

pub const REPORT_FILES: [&str; 6] =
    ["summary.csv", "ops.csv", "breakdown.csv", "carbon.csv", "functional.csv", "report.json"];

impl Report {
    /// Writes the CSV tables and the nested JSON report into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir).map_err(ExperimentError::runtime)?;
        write_csv(&dir.join("summary.csv"), &SummaryRow::HEADER, &self.summary)?;
        write_csv(&dir.join("ops.csv"), &OpRow::HEADER, &self.ops)?;
        write_csv(&dir.join("breakdown.csv"), &BreakdownRow::HEADER, &self.breakdown)?;
        write_csv(&dir.join("carbon.csv"), &CarbonRow::HEADER, &self.carbon)?;
        write_csv(&dir.join("functional.csv"), &FunctionalRow::HEADER, &self.functional)?;
        let json = serde_json::to_string_pretty(&self.points).map_err(ExperimentError::runtime)?;
        let mut f = fs::File::create(dir.join("report.json")).map_err(ExperimentError::runtime)?;
        f.write_all(json.as_bytes()).and_then(|_| f.write_all(b"\n")).map_err(ExperimentError::runtime)
    }
}

/// Inputs for an error curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCurveSpec {
    pub kind: NonlinearKind,
    pub window: LutWindow,
    pub policy: WindowPolicy,
    pub from: f64,
    pub to: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorPoint {
    /// The sample rounded to BF16, as seen by the hardware.
    pub input: f64,
    pub exact: f64,
    pub approx: f64,
    pub relative_error: f64,
    /// True when the exponent landed inside the sliding window.
    pub in_window: bool,
    /// True when a nonzero result was forced to zero.
    pub flushed: bool,
}

/// Relative error of the LUT approximation against double precision over
/// evenly spaced samples. Each sample forms its own mapping. Outputs forced
/// to zero report an error of exactly 1.
pub fn error_curve(spec: &ErrorCurveSpec) -> Result<Vec<ErrorPoint>, ExperimentError> {
    if spec.samples < 2 {
        return Err(ExperimentError::runtime("error curve needs at least 2 samples"));
    }
    if !(spec.from.is_finite() && spec.to.is_finite()) {
        return Err(ExperimentError::runtime("error curve range must be finite"));
    }
    let lut = Lut::build(spec.kind, spec.window).map_err(ExperimentError::runtime)?;
    let step = (spec.to - spec.from) / (spec.samples - 1) as f64;
    (0..spec.samples)
        .map(|i| {
            let x = Bf16::from_f64(spec.from + step * i as f64);
            let r = vlp::approximate_mapping(&[x], &lut, spec.policy).map_err(ExperimentError::runtime)?[0];
            let input = x.to_f64();
            let exact = spec.kind.eval(input);
            let approx = r.value.to_f64();
            let flushed = approx == 0.0 && exact != 0.0;
            let relative_error = if flushed {
                1.0
            } else if exact == 0.0 {
                approx.abs()
            } else {
                (approx - exact).abs() / exact.abs()
            };
            Ok(ErrorPoint { input, exact, approx, relative_error, in_window: r.path == ApproxPath::Lut, flushed })
        })
        .collect()
}

pub fn write_error_curve<W: Write>(points: &[ErrorPoint], w: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(w);
    for p in points {
        w.serialize(p).map_err(ExperimentError::runtime)?;
    }
    w.flush().map_err(ExperimentError::runtime)
}
