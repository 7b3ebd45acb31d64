//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line and then asserts it.

use std::path::Path;
use std::time::Instant;

use mugi::cost::{area_of, carbon_of, CarbonParams, CostTable};
use mugi::experiment::{error_curve, run_experiment, ErrorCurveSpec, ExperimentConfig};
use mugi::lut::{Lut, LutWindow, NonlinearKind, WindowPolicy};
use mugi::numeric::{Bf16, Int4};
use mugi::perf::event::{simulate_baseline, simulate_nonlinear, simulate_vlp_gemm};
use mugi::perf::{
    baseline_cycles, gemm_cycles, nonlinear_cycles, op_cycles, ArrayConfig, BaselineConfig, BaselineKind, Design,
    GemmShape, NonlinearClass, OpShape, OpTiming,
};
use mugi::vlp::{approximate_mapping, gemm, softmax, temporal_multiply, Matrix, QuantizedMatrix};
use mugi::workload::{build_graph, ModelSpec, RunSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn finite_bf16(rng: &mut ChaCha8Rng) -> Bf16 {
    loop {
        let b = Bf16::from_bits(rng.gen());
        if b.is_finite() {
            return b;
        }
    }
}

#[test]
fn criterion_01_temporal_multiply() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..1000 {
        let w = finite_bf16(&mut rng);
        for i in 0..16u32 {
            // i * w needs at most 12 significant bits, so both sides are exact.
            let want = (i as f64 * w.to_f64()) as f32;
            let got = temporal_multiply(i, w).unwrap();
            if got.to_bits() != want.to_bits() && !(got == 0.0 && want == 0.0) {
                bad += 1;
            }
        }
    }
    let t = start.elapsed().as_secs_f64();
    verdict(1, bad == 0 && t < 1.0, &format!("mismatches={bad} time={t:.3}s"));
}

/// `(sign, 3-bit mantissa index, exponent)` of a normal BF16, rounded half to
/// even with plain f64 arithmetic.
fn round_input(x: f64) -> (bool, f64, i32) {
    let a = x.abs();
    let mut e = a.log2().floor() as i32;
    if 2f64.powi(e) > a {
        e -= 1;
    } else if 2f64.powi(e + 1) <= a {
        e += 1;
    }
    let frac = (a / 2f64.powi(e) - 1.0) * 8.0;
    let q = frac.round_ties_even();
    if q == 8.0 {
        (x < 0.0, 0.0, e + 1)
    } else {
        (x < 0.0, q, e)
    }
}

fn reference(kind: NonlinearKind, x: f64) -> f64 {
    match kind {
        NonlinearKind::Exp => x.exp(),
        NonlinearKind::Silu => x / (1.0 + (-x).exp()),
        NonlinearKind::GeluTanh => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
        }
        _ => unreachable!(),
    }
}

/// Expected output for a one-element mapping over a signed table [lo, hi].
fn oracle(kind: NonlinearKind, x: Bf16, lo: i32, hi: i32) -> Bf16 {
    let v = x.to_f64();
    if v.is_nan() {
        return Bf16::NAN;
    }
    if v.is_infinite() {
        return Bf16::from_f64(if v > 0.0 { f64::INFINITY } else { 0.0 });
    }
    // Zero and subnormals read as zero.
    if v.abs() < f64::from(f32::MIN_POSITIVE) {
        return Bf16::from_f64(reference(kind, 0.0));
    }
    let (neg, q, e) = round_input(v);
    let at = |e: i32| {
        let mag = (1.0 + q / 8.0) * 2f64.powi(e);
        Bf16::from_f64(reference(kind, if neg { -mag } else { mag }))
    };
    let exp = kind == NonlinearKind::Exp;
    if e < lo {
        if exp { at(lo) } else { Bf16::ZERO }
    } else if e > hi {
        if exp {
            at(hi)
        } else if neg {
            Bf16::ZERO
        } else {
            x
        }
    } else {
        at(e)
    }
}

fn same(a: Bf16, b: Bf16) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

#[test]
fn criterion_02_input_approximation_contract() {
    let (lo, hi) = (-6, 5);
    let mut details = Vec::new();
    let mut ok = true;
    for kind in [NonlinearKind::Exp, NonlinearKind::Silu, NonlinearKind::GeluTanh] {
        let start = Instant::now();
        let lut = Lut::build(kind, LutWindow::new(lo, hi, true).unwrap()).unwrap();
        let mut bad = 0u32;
        for bits in 0..=u16::MAX {
            let x = Bf16::from_bits(bits);
            let got = approximate_mapping(&[x], &lut, WindowPolicy::AlignMax).unwrap()[0].value;
            if !same(got, oracle(kind, x, lo, hi)) {
                bad += 1;
            }
        }
        let t = start.elapsed().as_secs_f64();
        ok &= bad == 0 && t < 10.0;
        details.push(format!("{kind:?}: mismatches={bad} time={t:.2}s"));
    }
    verdict(2, ok, &details.join(", "));
}

#[test]
fn criterion_03_softmax_properties() {
    let start = Instant::now();
    let lut = Lut::build(NonlinearKind::Exp, LutWindow::new(-6, 5, false).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut negative, mut sum_bad, mut argmax_bad, mut checked) = (0, 0, 0, 0);
    for _ in 0..10_000 {
        let len = rng.gen_range(2..=4096);
        let spread: f32 = rng.gen_range(0.5..32.0);
        let xs: Vec<Bf16> = (0..len).map(|_| Bf16::from_f32(rng.gen_range(-spread..spread))).collect();
        let p = softmax(&xs, &lut).unwrap();
        negative += p.iter().filter(|v| v.to_f64() < 0.0 || v.is_nan()).count();
        let sum: f64 = p.iter().map(|v| v.to_f64()).sum();
        if (sum - 1.0).abs() > 2f64.powi(-6) {
            sum_bad += 1;
        }
        let top = |v: &[f64]| {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let at: Vec<usize> = (0..v.len()).filter(|&i| v[i] == m).collect();
            at
        };
        let xin: Vec<f64> = xs.iter().map(|v| v.to_f64()).collect();
        let pout: Vec<f64> = p.iter().map(|v| v.to_f64()).collect();
        let (ti, to) = (top(&xin), top(&pout));
        if ti.len() == 1 && to.len() == 1 {
            checked += 1;
            if ti != to {
                argmax_bad += 1;
            }
        }
    }
    let t = start.elapsed().as_secs_f64();
    verdict(
        3,
        negative == 0 && sum_bad == 0 && argmax_bad == 0 && t < 30.0,
        &format!("negative={negative} sum_out_of_range={sum_bad} argmax_changed={argmax_bad}/{checked} time={t:.2}s"),
    );
}

fn triple_loop(a: &QuantizedMatrix, b: &Matrix<Bf16>) -> Vec<Bf16> {
    let (m_dim, k_dim, n_dim) = (a.rows(), a.cols(), b.cols);
    let g = a.group_size;
    let mut out = Vec::with_capacity(m_dim * n_dim);
    for m in 0..m_dim {
        for n in 0..n_dim {
            let mut total = 0.0f32;
            for grp in 0..k_dim / g {
                let mut part = 0.0f32;
                for k in grp * g..(grp + 1) * g {
                    part += f32::from(a.values.get(m, k).value()) * b.get(k, n).to_f32();
                }
                total += a.scales.get(m, grp).to_f32() * part;
            }
            out.push(Bf16::from_f32(total));
        }
    }
    out
}

#[test]
fn criterion_04_gemm_equivalence() {
    let start = Instant::now();
    let dims = [1usize, 2, 3, 8, 9, 16];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut bad, mut cases) = (0, 0);
    for &m in &dims {
        for &n in &dims {
            for &k in &dims {
                let divisors: Vec<usize> = (1..=k).filter(|d| k % d == 0).collect();
                for _ in 0..100 {
                    let g = divisors[rng.gen_range(0..divisors.len())];
                    let h = [1usize, 2, 4, 8, 16, 32][rng.gen_range(0..6)];
                    // Sign-magnitude range of the temporal converters.
                    let values = (0..m * k).map(|_| Int4::new(rng.gen_range(-7..=7)).unwrap()).collect();
                    let scales = (0..m * (k / g)).map(|_| Bf16::from_f32(rng.gen_range(1e-3f32..2.0))).collect();
                    let bv = (0..k * n).map(|_| Bf16::from_f32(rng.gen_range(-16f32..16.0))).collect();
                    let a = QuantizedMatrix::new(
                        Matrix::new(m, k, values).unwrap(),
                        g,
                        Matrix::new(m, k / g, scales).unwrap(),
                    )
                    .unwrap();
                    let b = Matrix::new(k, n, bv).unwrap();
                    let got = gemm(&a, &b, h).unwrap();
                    let want = triple_loop(&a, &b);
                    cases += 1;
                    if got.data.iter().zip(&want).any(|(x, y)| x.to_bits() != y.to_bits()) {
                        bad += 1;
                    }
                }
            }
        }
    }
    let t = start.elapsed().as_secs_f64();
    verdict(4, bad == 0 && t < 60.0, &format!("mismatching instances={bad}/{cases} time={t:.2}s"));
}

fn agree(a: &OpTiming, b: &OpTiming) -> bool {
    a.signature() == b.signature() && a.utilization == b.utilization && a.column_utilization == b.column_utilization
}

#[test]
fn criterion_05_analytical_matches_event() {
    let start = Instant::now();
    let dims = [1u64, 7, 8, 9, 64];
    let groups = [None, Some(8)];
    let (mut bad, mut cases) = (0, 0);
    let mut check = |ok: bool| {
        cases += 1;
        if !ok {
            bad += 1;
        }
    };
    for h in [8u32, 32] {
        let cfg = ArrayConfig::with_height(h);
        for &m in &dims {
            for &n in &dims {
                for &k in &dims {
                    for group in groups {
                        for instances in [1, 3] {
                            let s = GemmShape { m, n, k, instances, group_size: group };
                            check(agree(
                                &gemm_cycles(&cfg, &s).unwrap(),
                                &simulate_vlp_gemm(h as u64, &cfg, &s, false).unwrap(),
                            ));
                            let carat = BaselineConfig::new(BaselineKind::Carat, h);
                            let op = OpShape::Gemm(s);
                            check(agree(
                                &baseline_cycles(&carat, &cfg, &op).unwrap(),
                                &simulate_baseline(&carat, &cfg, &op).unwrap(),
                            ));
                        }
                    }
                }
            }
        }
        for e in [1u64, 7, 8, 9, 64, 300, 1000] {
            for class in [NonlinearClass::Softmax, NonlinearClass::Activation] {
                check(agree(&nonlinear_cycles(&cfg, e, class).unwrap(), &simulate_nonlinear(&cfg, e, class).unwrap()));
            }
        }
    }
    let node = ArrayConfig::default();
    let mut engines = Vec::new();
    for d in [8u32, 32] {
        for kind in [
            BaselineKind::Systolic,
            BaselineKind::Simd,
            BaselineKind::SystolicFigna,
            BaselineKind::SimdFigna,
            BaselineKind::PreciseVector,
            BaselineKind::PwlVector,
            BaselineKind::TaylorVector,
            BaselineKind::MugiL,
        ] {
            engines.push(BaselineConfig::new(kind, d));
        }
    }
    engines.push(BaselineConfig::tensor_core());
    engines.push(BaselineConfig { fill_cycles: 12, ..BaselineConfig::tensor_core() });
    for b in &engines {
        let mut ops = Vec::new();
        if b.kind.runs_gemm() {
            for &m in &dims {
                for &n in &dims {
                    for &k in &dims {
                        for group in groups {
                            ops.push(OpShape::Gemm(GemmShape { m, n, k, instances: 2, group_size: group }));
                        }
                    }
                }
            }
        }
        if b.kind.runs_nonlinear() {
            for &e in &dims {
                for class in [NonlinearClass::Softmax, NonlinearClass::Activation] {
                    ops.push(OpShape::Nonlinear { class, elements: e });
                }
            }
        }
        for op in &ops {
            check(agree(&baseline_cycles(b, &node, op).unwrap(), &simulate_baseline(b, &node, op).unwrap()));
        }
    }
    let t = start.elapsed().as_secs_f64();
    verdict(5, bad == 0 && t < 60.0, &format!("disagreements={bad}/{cases} time={t:.2}s"));
}

#[test]
fn criterion_06_subscription_cycle() {
    // S-M-E = 0-3-2: positive, mantissa index 3, exponent 2. With the window
    // based at exponent 0 the exponent column index equals E.
    let x = Bf16::from_f64((1.0 + 3.0 / 8.0) * 4.0);
    let lut = Lut::build(NonlinearKind::Exp, LutWindow::new(0, 7, true).unwrap()).unwrap();
    let r = approximate_mapping(&[x], &lut, WindowPolicy::AlignMin).unwrap()[0];
    let row = 3;
    let column = 2;
    let ok = r.subscription_cycle == row + column
        && r.elapsed_cycles() == 6
        && same(r.value, Bf16::from_f64(5.5f64.exp()));
    verdict(
        6,
        ok,
        &format!("row=3 column=2 combined={} elapsed={}", r.subscription_cycle, r.elapsed_cycles()),
    );
}

#[test]
fn criterion_07_carbon_model() {
    let p = |ci, cpa| CarbonParams::new(ci, cpa).unwrap();
    let mut ok = carbon_of(2.0, 0.0, &p(0.5, 1.0)).0 == 1.0
        && carbon_of(0.0, 3.0, &p(1.0, 2.0)).1 == 6.0
        && carbon_of(0.0, 1.0, &p(123.0, 1.0)).0 == 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (e, a) = (rng.gen_range(0.0..1e3), rng.gen_range(0.0..1e3));
        let params = p(rng.gen_range(1e-6..1.0), rng.gen_range(1e-3..10.0));
        let (op, emb) = carbon_of(e, a, &params);
        ok &= op == e * params.carbon_intensity && emb == a * params.carbon_per_area;
        let s = rng.gen_range(0.0..8.0);
        let (op2, emb2) = carbon_of(s * e, s * a, &params);
        ok &= (op2 - s * op).abs() <= 1e-12 * op2.abs().max(1.0) && (emb2 - s * emb).abs() <= 1e-12 * emb2.abs().max(1.0);
    }
    verdict(7, ok, "100 random triples plus the three fixed examples");
}

#[test]
fn criterion_08_table3_ordering() {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/table3.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let exp = cfg.resolve(path.parent().unwrap()).unwrap();
    let report = run_experiment(&exp).unwrap();
    let tput = |id: &str| {
        report
            .summary
            .iter()
            .find(|r| r.design == id && r.run == "llama2-70b-b8")
            .unwrap_or_else(|| panic!("no row for {id}"))
            .throughput
    };
    let (m256, m128, sa, sd) = (tput("mugi256"), tput("mugi128"), tput("sa16"), tput("sd16"));
    let ratio = m256 / sa;
    let close = (sa - sd).abs() / sa.max(sd) < 0.05;
    let t = start.elapsed().as_secs_f64();
    let ok = m256 > m128 && m128 > sa.max(sd) && close && (2.07 * 0.7..=2.07 * 1.3).contains(&ratio) && t < 300.0;
    verdict(
        8,
        ok,
        &format!("mugi256={m256:.3} mugi128={m128:.3} sa16={sa:.3} sd16={sd:.3} ratio={ratio:.3} time={t:.2}s"),
    );
}

fn attn_column_utilization(model: ModelSpec) -> f64 {
    let run = RunSpec::decode(model, 8);
    let graph = build_graph(&run).unwrap();
    let op = graph.ops.iter().find(|o| o.name == "l0.attn_qk").unwrap();
    op_cycles(&Design::mugi("m", 256), &op.shape).unwrap().column_utilization
}

#[test]
fn criterion_09_gqa_utilization() {
    let gqa = attn_column_utilization(ModelSpec::llama2_70b());
    let mha = attn_column_utilization(ModelSpec::preset("llama2-70b-mha").unwrap());
    verdict(9, gqa == 1.0 && mha == 0.125, &format!("group8={gqa} group1={mha}"));
}

#[test]
fn criterion_10_buffer_area_ratio() {
    let table = CostTable::default();
    let mut ratios = Vec::new();
    for h in [32u32, 64, 128, 256] {
        let mugi = area_of(&Design::mugi("m", h), &table).unwrap();
        let carat = area_of(
            &Design::baseline(
                "c",
                BaselineConfig::new(BaselineKind::Carat, h),
                BaselineConfig::new(BaselineKind::PwlVector, 16),
            ),
            &table,
        )
        .unwrap();
        ratios.push(carat.buffer_mm2() / mugi.buffer_mm2());
    }
    let ok = ratios.iter().all(|r| (r / 4.5 - 1.0).abs() <= 0.05);
    verdict(10, ok, &format!("ratios={ratios:?}"));
}

#[test]
fn criterion_11_error_envelope() {
    let start = Instant::now();
    let exp = error_curve(&ErrorCurveSpec {
        kind: NonlinearKind::Exp,
        window: LutWindow::new(-3, 4, false).unwrap(),
        policy: WindowPolicy::AlignMax,
        from: -16.0,
        to: 0.0,
        samples: 4097,
    })
    .unwrap();
    let mut violations = Vec::new();
    for p in exp.iter().filter(|p| p.in_window) {
        let e = p.exact.abs().log2().floor() as i32;
        let ulp_rel = 2f64.powi(e - 7) / p.exact.abs();
        let bound = p.input.abs() * 2f64.powi(-4) + 2.0 * ulp_rel;
        if p.relative_error > bound {
            violations.push((p.input, p.relative_error, bound));
        }
    }
    let flush_ok = exp.iter().filter(|p| p.flushed).all(|p| p.relative_error == 1.0);
    let silu = error_curve(&ErrorCurveSpec {
        kind: NonlinearKind::Silu,
        window: LutWindow::new(-3, 4, true).unwrap(),
        policy: WindowPolicy::AlignMin,
        from: -0.1,
        to: -0.001,
        samples: 64,
    })
    .unwrap();
    let silu_ok = silu.iter().all(|p| p.in_window || (p.flushed && p.relative_error == 1.0));
    let t = start.elapsed().as_secs_f64();
    let worst = violations.iter().cloned().fold(None, |w: Option<(f64, f64, f64)>, v| match w {
        Some(w) if w.1 - w.2 >= v.1 - v.2 => Some(w),
        _ => Some(v),
    });
    verdict(
        11,
        violations.is_empty() && flush_ok && silu_ok && t < 10.0,
        &format!(
            "envelope violations={} worst(x, err, bound)={worst:?} flush_ok={} time={t:.2}s",
            violations.len(),
            flush_ok && silu_ok
        ),
    );
}
