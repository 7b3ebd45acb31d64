use serde::{Deserialize, Serialize};

use super::PerfError;
use crate::vlp::ARRAY_WIDTH;

/// One compute node: the VLP array (when present) plus its memories, clock
/// and vector unit. Baseline designs reuse the memory, clock and vector
/// fields and ignore `height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    /// Rows of the VLP array. The width is fixed at 8.
    pub height: u32,
    pub isram_bytes: u64,
    pub wsram_bytes: u64,
    pub osram_bytes: u64,
    pub input_word_bits: u32,
    pub weight_word_bits: u32,
    pub frequency_hz: f64,
    /// Pipeline registers between the array and the output accumulators.
    pub pipeline_depth: u64,
    pub vector_lanes: u32,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            height: 128,
            isram_bytes: 64 * 1024,
            wsram_bytes: 64 * 1024,
            osram_bytes: 64 * 1024,
            input_word_bits: 16,
            weight_word_bits: 4,
            frequency_hz: 400e6,
            pipeline_depth: 4,
            vector_lanes: 8,
        }
    }
}

impl ArrayConfig {
    pub fn with_height(height: u32) -> Self {
        ArrayConfig { height, ..Default::default() }
    }

    pub fn width(&self) -> u32 {
        ARRAY_WIDTH as u32
    }

    pub fn lanes(&self) -> u64 {
        self.height as u64 * ARRAY_WIDTH as u64
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        let bad = |m: &str| Err(PerfError::InvalidConfig(m.to_string()));
        if self.height == 0 {
            return bad("array height must be positive");
        }
        if self.vector_lanes == 0 {
            return bad("vector unit needs at least one lane");
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return bad("frequency must be positive");
        }
        if self.isram_bytes == 0 || self.wsram_bytes == 0 || self.osram_bytes == 0 {
            return bad("SRAM sizes must be positive");
        }
        if self.input_word_bits == 0 || self.weight_word_bits == 0 {
            return bad("word widths must be positive");
        }
        Ok(())
    }

    /// Extra checks for sweep configurations: heights are powers of two
    /// between 32 and 256.
    pub fn validate_sweep(&self) -> Result<(), PerfError> {
        self.validate()?;
        if !(32..=256).contains(&self.height) || !self.height.is_power_of_two() {
            return Err(PerfError::InvalidConfig(format!(
                "array height {} outside the supported 32..=256 powers of two",
                self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Weight-stationary systolic array, dequantizing INT4 weights on load.
    Systolic,
    /// SIMD array with adder trees.
    Simd,
    /// Systolic array of FP-INT PEs (no dequantization pass).
    SystolicFigna,
    SimdFigna,
    /// 8x16x16 matrix unit.
    TensorCore,
    /// VLP GEMM array without value reuse; nonlinear ops go elsewhere.
    Carat,
    /// Vector unit computing nonlinear functions exactly.
    PreciseVector,
    /// Piecewise-linear vector unit.
    PwlVector,
    /// Taylor-series vector unit.
    TaylorVector,
    /// One dedicated LUT per array row.
    MugiL,
}

impl BaselineKind {
    pub fn runs_gemm(self) -> bool {
        matches!(
            self,
            BaselineKind::Systolic
                | BaselineKind::Simd
                | BaselineKind::SystolicFigna
                | BaselineKind::SimdFigna
                | BaselineKind::TensorCore
                | BaselineKind::Carat
        )
    }

    pub fn runs_nonlinear(self) -> bool {
        matches!(
            self,
            BaselineKind::PreciseVector | BaselineKind::PwlVector | BaselineKind::TaylorVector | BaselineKind::MugiL
        )
    }

    pub fn is_figna(self) -> bool {
        matches!(self, BaselineKind::SystolicFigna | BaselineKind::SimdFigna)
    }
}

/// A comparison engine. `dim` is the array side (systolic, SIMD), the row
/// count (Carat, Mugi-L) or the lane count (vector units). `per_element_cycles`
/// is the occupancy of the iterative vector unit or the pipeline depth of
/// the pipelined ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawBaseline")]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub dim: u32,
    pub per_element_cycles: u64,
    /// Pipeline fill for the matrix unit.
    pub fill_cycles: u64,
}

/// Omitted cycle counts take the per-kind defaults of [`BaselineConfig::new`].
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaseline {
    kind: BaselineKind,
    dim: u32,
    per_element_cycles: Option<u64>,
    fill_cycles: Option<u64>,
}

impl From<RawBaseline> for BaselineConfig {
    fn from(r: RawBaseline) -> Self {
        let d = BaselineConfig::new(r.kind, r.dim);
        BaselineConfig {
            per_element_cycles: r.per_element_cycles.unwrap_or(d.per_element_cycles),
            fill_cycles: r.fill_cycles.unwrap_or(d.fill_cycles),
            ..d
        }
    }
}

pub const PRECISE_CYCLES_PER_ELEMENT: u64 = 44;
pub const PWL_SEGMENTS: u64 = 22;
pub const TAYLOR_DEGREE: u64 = 9;

impl BaselineConfig {
    pub fn new(kind: BaselineKind, dim: u32) -> Self {
        let per_element_cycles = match kind {
            BaselineKind::PreciseVector => PRECISE_CYCLES_PER_ELEMENT,
            BaselineKind::PwlVector => pwl_depth(PWL_SEGMENTS),
            BaselineKind::TaylorVector => TAYLOR_DEGREE,
            _ => 0,
        };
        BaselineConfig { kind, dim, per_element_cycles, fill_cycles: 0 }
    }

    pub fn systolic(dim: u32) -> Self {
        Self::new(BaselineKind::Systolic, dim)
    }

    pub fn simd(dim: u32) -> Self {
        Self::new(BaselineKind::Simd, dim)
    }

    pub fn tensor_core() -> Self {
        Self::new(BaselineKind::TensorCore, 16)
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        if self.dim == 0 {
            return Err(PerfError::InvalidConfig(format!("{:?} with zero dimension", self.kind)));
        }
        if matches!(
            self.kind,
            BaselineKind::PreciseVector | BaselineKind::PwlVector | BaselineKind::TaylorVector
        ) && self.per_element_cycles == 0
        {
            return Err(PerfError::InvalidConfig(format!("{:?} needs per_element_cycles", self.kind)));
        }
        Ok(())
    }
}

/// Segment search plus one multiply-add.
pub fn pwl_depth(segments: u64) -> u64 {
    (segments.max(1) as f64).log2().ceil() as u64 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NocConfig {
    pub rows: u32,
    pub cols: u32,
    pub frequency_hz: f64,
    /// Bytes per NoC cycle on each injection link of each channel.
    pub link_bytes_per_cycle: u64,
    pub offchip_bytes_per_s: f64,
}

impl Default for NocConfig {
    fn default() -> Self {
        NocConfig { rows: 1, cols: 1, frequency_hz: 400e6, link_bytes_per_cycle: 256, offchip_bytes_per_s: 256e9 }
    }
}

impl NocConfig {
    pub fn mesh(rows: u32, cols: u32) -> Self {
        NocConfig { rows, cols, ..Default::default() }
    }

    pub fn nodes(&self) -> u64 {
        self.rows as u64 * self.cols as u64
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(PerfError::InvalidConfig("mesh needs at least one node".into()));
        }
        if !(self.frequency_hz > 0.0 && self.offchip_bytes_per_s > 0.0) || self.link_bytes_per_cycle == 0 {
            return Err(PerfError::InvalidConfig("NoC bandwidths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "engine")]
pub enum GemmEngine {
    /// The VLP array of the node.
    Vlp,
    Baseline(BaselineConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "engine")]
pub enum NonlinearEngine {
    /// Value reuse on the same VLP array that runs GEMM.
    Vlp,
    Baseline(BaselineConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    pub id: String,
    #[serde(default)]
    pub node: ArrayConfig,
    pub gemm: GemmEngine,
    pub nonlinear: NonlinearEngine,
    #[serde(default)]
    pub noc: NocConfig,
}

impl Design {
    pub fn mugi(id: impl Into<String>, height: u32) -> Self {
        Design {
            id: id.into(),
            node: ArrayConfig::with_height(height),
            gemm: GemmEngine::Vlp,
            nonlinear: NonlinearEngine::Vlp,
            noc: NocConfig::default(),
        }
    }

    pub fn baseline(id: impl Into<String>, gemm: BaselineConfig, nonlinear: BaselineConfig) -> Self {
        Design {
            id: id.into(),
            node: ArrayConfig::default(),
            gemm: GemmEngine::Baseline(gemm),
            nonlinear: NonlinearEngine::Baseline(nonlinear),
            noc: NocConfig::default(),
        }
    }

    pub fn with_noc(mut self, noc: NocConfig) -> Self {
        self.noc = noc;
        self
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        self.node.validate()?;
        self.noc.validate()?;
        if let GemmEngine::Baseline(b) = self.gemm {
            b.validate()?;
            if !b.kind.runs_gemm() {
                return Err(PerfError::Unsupported { kind: b.kind, op: "GEMM" });
            }
        }
        match self.nonlinear {
            NonlinearEngine::Baseline(b) => {
                b.validate()?;
                if !b.kind.runs_nonlinear() {
                    return Err(PerfError::Unsupported { kind: b.kind, op: "nonlinear ops" });
                }
            }
            NonlinearEngine::Vlp if self.gemm != GemmEngine::Vlp => {
                return Err(PerfError::InvalidConfig(format!(
                    "design {}: value-reuse nonlinear ops need the VLP GEMM array",
                    self.id
                )));
            }
            NonlinearEngine::Vlp => {}
        }
        Ok(())
    }
}
