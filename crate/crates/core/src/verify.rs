//! Verification suites shared by the `selftest` and `gradcheck` commands and
//! the acceptance tests. Each routine returns one [`OracleReport`] per case.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analyzer::{compare, count_flops, count_params, Analysis};
use crate::attention::{msw_msa, wmsa_branch, Branch, MswMsaParams};
use crate::dwm::{dwm_forward, select_weights, DmswMode, DmswParams};
use crate::error::Result;
use crate::model::{Model, ModelConfig, StageConfig, TraceEntry};
use crate::nn::{Init, Module};
use crate::oracle::{brute_rel_pos, dense_msa, finite_diff_grad, model_oracle, Dense, OracleReport, Weights};
use crate::tensor::{Element, Tape, Tensor, Var};
use crate::window::{self, WindowSet};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-6;
/// Absolute slack for gradients too small for a relative bound. Rounding in
/// the forward pass perturbs each difference quotient by up to ~2e-10 at
/// `ε = 1e-5`; some entries, key biases among them, have an exact zero
/// gradient.
pub const GRADCHECK_ATOL: f64 = 1e-9;
pub const GRADCHECK_MAX_PARAMS: usize = 50_000;
/// Half-width of the uniform draw for the gradient check's parameters.
pub const GRADCHECK_PARAM_SCALE: f64 = 0.3;

fn random<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.gen_range(-scale..scale))).expect("positive dims")
}

fn randomize<T: Element, M: Module<T>>(m: &mut M, rng: &mut ChaCha8Rng, scale: f64) {
    m.visit_mut(&mut |p| {
        for v in p.value_mut().data_mut() {
            *v = T::of(rng.gen_range(-scale..scale));
        }
    });
}

fn as_f64<T: Element>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn bits_equal<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
}

/// Reference sizes with their targets and allowed fractional deviation.
pub struct Anchor {
    pub label: &'static str,
    pub measured: f64,
    pub target: f64,
    pub fraction: f64,
}

impl Anchor {
    pub fn report(&self) -> OracleReport {
        let dev = (self.measured - self.target).abs() / self.target;
        OracleReport {
            case: format!("{} = {:.3} (target {:.2} ±{}%)", self.label, self.measured, self.target, self.fraction * 100.0),
            max_abs: (self.measured - self.target).abs(),
            max_rel: dev,
            tolerance: self.fraction,
            relative: true,
            pass: dev <= self.fraction,
        }
    }
}

fn millions(cfg: &ModelConfig) -> Result<f64> {
    Ok(count_params(&Model::<f32>::skeleton(cfg)?).total as f64 / 1e6)
}

fn giga_flops(cfg: &ModelConfig) -> Result<f64> {
    Ok(count_flops(&Model::<f32>::skeleton(cfg)?).counted as f64 / 1e9)
}

/// Parameter counts of the tiny layout in every weighting mode.
pub fn param_anchors() -> Result<Vec<OracleReport>> {
    let t = ModelConfig::dw_t();
    let anchors = [
        ("DW-T dynamic params (M)", millions(&t)?, 29.77, 0.05),
        ("DW-T equal-weight params (M)", millions(&t.clone().with_mode(DmswMode::EqualWeight))?, 29.05, 0.05),
        ("DW-T off, multi-window params (M)", millions(&t.with_mode(DmswMode::Off))?, 28.33, 0.05),
        ("single window 7, off params (M)", millions(&ModelConfig::single_window_t(7))?, 28.29, 0.02),
    ];
    Ok(anchors
        .into_iter()
        .map(|(label, measured, target, fraction)| Anchor { label, measured, target, fraction }.report())
        .collect())
}

/// Headline FLOPs of the tiny layout and size of the base layout.
pub fn flop_anchors() -> Result<Vec<OracleReport>> {
    let t = ModelConfig::dw_t();
    let b = Model::<f32>::skeleton(&ModelConfig::dw_b())?;
    let anchors = [
        ("DW-T dynamic GFLOPs", giga_flops(&t)?, 5.18, 0.05),
        ("single window 7, off GFLOPs", giga_flops(&ModelConfig::single_window_t(7))?, 4.49, 0.02),
        ("DW-T off, multi-window GFLOPs", giga_flops(&t.with_mode(DmswMode::Off))?, 5.07, 0.05),
        ("DW-B params (M)", count_params(&b).total as f64 / 1e6, 91.0, 0.05),
        ("DW-B GFLOPs", count_flops(&b).counted as f64 / 1e9, 17.0, 0.05),
    ];
    Ok(anchors
        .into_iter()
        .map(|(label, measured, target, fraction)| Anchor { label, measured, target, fraction }.report())
        .collect())
}

/// A random configuration that satisfies every divisibility rule.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let n_win = rng.gen_range(1..=3);
    let group = rng.gen_range(1..=2);
    let head_dim = 2 * rng.gen_range(1..=2);
    let heads = n_win * group;
    let channels = heads * head_dim;
    let stages = (0..rng.gen_range(1..=3))
        .map(|i| StageConfig {
            channels: channels << i,
            heads: heads << i,
            windows: (0..n_win).map(|_| rng.gen_range(1..=9)).collect(),
            depth: 2 * rng.gen_range(1..=2),
        })
        .collect();
    let mode = [DmswMode::Dynamic, DmswMode::EqualWeight, DmswMode::Off][rng.gen_range(0..3)];
    ModelConfig {
        image_size: [rng.gen_range(8..=64), rng.gen_range(8..=64)],
        num_classes: rng.gen_range(1..=20),
        dmsw_mode: mode,
        stages,
        in_channels: 3,
        patch_size: 4,
        mlp_ratio: 4,
    }
}

/// Measured attention and weighting costs equal the closed form per block.
pub fn closed_form_equality(random_cases: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut configs = vec![("DW-T".to_string(), ModelConfig::dw_t()), ("DW-B".to_string(), ModelConfig::dw_b())];
    for i in 0..random_cases {
        let cfg = random_config(&mut rng);
        let label = format!(
            "random #{i} {}x{} {} windows={:?}",
            cfg.image_size[0], cfg.image_size[1], cfg.dmsw_mode, cfg.stages[0].windows
        );
        configs.push((label, cfg));
    }
    let mut out = Vec::new();
    for (label, cfg) in configs {
        let cmp = compare(&count_flops(&Model::<f32>::skeleton(&cfg)?))?;
        let worst = cmp
            .blocks
            .iter()
            .map(|b| b.delta_msw.unsigned_abs().max(b.delta_dmsw.unsigned_abs()))
            .max()
            .unwrap_or(0);
        let mut r = OracleReport::check(format!("{label}: {} blocks", cmp.blocks.len()), cmp.all_match);
        r.max_abs = worst as f64;
        out.push(r);
    }
    Ok(out)
}

fn expected_trace(cfg: &ModelConfig, outputs: &[[usize; 3]], windows: &[&[usize]], heads: &[usize], depths: &[usize]) -> Vec<OracleReport> {
    let model = match Model::<f32>::skeleton(cfg) {
        Ok(m) => m,
        Err(e) => return vec![OracleReport::check(format!("build failed: {e}"), false)],
    };
    let trace = model.trace();
    let mut out = Vec::new();
    for (si, ((shape, win), (&h, &depth))) in outputs.iter().zip(windows).zip(heads.iter().zip(depths)).enumerate() {
        let blocks: Vec<&TraceEntry> = trace
            .iter()
            .filter(|e| e.name.starts_with(&format!("stages.{si}.blocks.")))
            .collect();
        let ok = blocks.len() == depth
            && blocks.iter().all(|e| e.output == shape.to_vec() && e.windows.as_deref() == Some(*win))
            && model.stages[si].blocks.iter().all(|b| b.attn.heads == h);
        out.push(OracleReport::check(
            format!("stage {} -> {}x{}x{}, windows {:?}, {h} heads, depth {depth}", si + 1, shape[0], shape[1], shape[2], win),
            ok,
        ));
    }
    out.push(OracleReport::check(
        format!("logits length {}", cfg.num_classes),
        trace.last().map(|e| e.output.clone()) == Some(vec![cfg.num_classes]),
    ));
    out
}

/// Stage output sizes, channels, heads, depths and clamped windows at 224².
pub fn shape_law() -> Vec<OracleReport> {
    let mut out = expected_trace(
        &ModelConfig::dw_t(),
        &[[56, 56, 96], [28, 28, 192], [14, 14, 384], [7, 7, 768]],
        &[&[7, 14, 21], &[7, 14, 21], &[7, 14, 14], &[7, 7, 7]],
        &[3, 6, 12, 24],
        &[2, 2, 6, 2],
    );
    for r in &mut out {
        r.case = format!("DW-T {}", r.case);
    }
    let mut b = expected_trace(
        &ModelConfig::dw_b(),
        &[[56, 56, 128], [28, 28, 256], [14, 14, 512], [7, 7, 1024]],
        &[&[7, 12, 17, 22], &[7, 12, 17, 22], &[7, 12, 14, 14], &[7, 7, 7, 7]],
        &[4, 8, 16, 32],
        &[2, 2, 18, 2],
    );
    for r in &mut b {
        r.case = format!("DW-B {}", r.case);
    }
    out.extend(b);
    out
}

/// Windows covering the whole map, zero bias, against global attention.
pub fn oracle_equivalence(cases: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cases);
    for i in 0..cases {
        let n_win = rng.gen_range(1..=2);
        let heads = n_win * rng.gen_range(1..=2);
        let c = heads * rng.gen_range(1..=4);
        let side = rng.gen_range(1..=8);
        let windows = WindowSet::new(vec![side; n_win])?;
        let mut params = MswMsaParams::<f32>::init(&mut Init::new(i as u64), "attn", c, heads, &windows)?;
        randomize(&mut params.qkv, &mut rng, 0.5);
        let x = random::<f32>(&mut rng, &[side, side, c], 1.0);
        let shifted = rng.gen_bool(0.5);
        let tape = Tape::inference();
        let got = msw_msa(&tape.constant(x.clone()), &params, &windows, shifted)?.y;
        let want = dense_msa(&as_f64(&x), side * side, &Dense::from_linear(&params.qkv), heads, None);
        out.push(OracleReport::absolute(
            format!("case {i}: N={} C={c} heads={heads} n_win={n_win}", side * side),
            &as_f64(got.value()),
            &want,
            1e-5,
        ));
    }
    Ok(out)
}

/// Single-scale windowed attention with output projection, composed
/// directly from the attention primitives.
fn single_scale<T: Element>(x: &Var<T>, attn: &MswMsaParams<T>, proj: &crate::nn::Linear<T>, win: usize, shifted: bool) -> Result<Var<T>> {
    let [h, w, c] = *x.shape() else { unreachable!() };
    let heads = attn.heads;
    let qkv = attn.qkv.forward(x)?.reshape([h, w, 3, heads, c / heads])?;
    let part = |i| qkv.narrow(2, i, 1)?.reshape([h, w, c]);
    let shift = if shifted && win < h.min(w) { win / 2 } else { 0 };
    let table = x.tape().param(&attn.bias_tables[0]);
    let y = wmsa_branch(&part(0)?, &part(1)?, &part(2)?, Branch { heads, win, shift }, &table, None)?;
    proj.forward(&y)
}

/// One window size with the weighting module off reproduces plain windowed
/// attention bit for bit.
pub fn baseline_collapse(seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows = WindowSet::new(vec![7])?;
    let mut out = Vec::new();
    for case in 0..4 {
        let mut init = Init::new(seed + case);
        let mut attn = MswMsaParams::<f32>::init(&mut init, "attn", 96, 3, &windows)?;
        let mut dmsw = DmswParams::<f32>::init(&mut init, "dmsw", 96, 1, DmswMode::Off)?;
        randomize(&mut attn, &mut rng, 0.2);
        randomize(&mut dmsw, &mut rng, 0.2);
        let x = random::<f32>(&mut rng, &[14, 14, 96], 1.0);
        let shifted = case % 2 == 1;
        let tape = Tape::inference();
        let xv = tape.constant(x);
        let got = dwm_forward(&xv, &attn, &dmsw, &windows, shifted)?;
        let want = single_scale(&xv, &attn, &dmsw.fc1, 7, shifted)?;
        let mut r = OracleReport::absolute(
            format!("14x14x96 case {case}, shifted={shifted}, bit-identical"),
            &as_f64(got.value()),
            &as_f64(want.value()),
            0.0,
        );
        r.pass = bits_equal(got.value(), want.value());
        out.push(r);
    }
    Ok(out)
}

/// Attention rows and branch weights each sum to one.
pub fn normalization(cases: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_rows = 0.0f64;
    for _ in 0..cases {
        let win = rng.gen_range(2..=4);
        let (h, w) = (win * rng.gen_range(1..=3), win * rng.gen_range(1..=3));
        let heads = rng.gen_range(1..=2);
        let c = heads * rng.gen_range(1..=3);
        let shift = if win < h.min(w) && rng.gen_bool(0.5) { win / 2 } else { 0 };
        let tape = Tape::<f64>::inference();
        let q = tape.constant(random(&mut rng, &[h, w, c], 3.0));
        let k = tape.constant(random(&mut rng, &[h, w, c], 3.0));
        // with all-ones values every output entry is a row sum of the weights
        let v = tape.constant(Tensor::ones([h, w, c])?);
        let table = tape.constant(random(&mut rng, &[(2 * win - 1).pow(2), heads], 2.0));
        let y = wmsa_branch(&q, &k, &v, Branch { heads, win, shift }, &table, None)?;
        worst_rows = y.value().data().iter().fold(worst_rows, |m, s| m.max((s - 1.0).abs()));
    }
    let mut worst_alpha = 0.0f64;
    for i in 0..cases {
        let n = rng.gen_range(2..=4);
        let c = 2 * n * rng.gen_range(1..=3);
        let mut p = DmswParams::<f64>::init(&mut Init::new(i as u64), "d", c, n, DmswMode::Dynamic)?;
        randomize(&mut p, &mut rng, 2.0);
        let tape = Tape::inference();
        let fused = tape.constant(random(&mut rng, &[1, 1, c / (2 * n)], 2.0));
        let alpha = select_weights(&fused, &p)?;
        let a = alpha.value();
        for ch in 0..c / n {
            let s: f64 = (0..n).map(|b| a.at(&[b, ch])).sum();
            worst_alpha = worst_alpha.max((s - 1.0).abs());
        }
    }
    let report = |case: String, worst: f64| {
        let mut r = OracleReport::check(case, worst <= 1e-6);
        r.max_abs = worst;
        r.tolerance = 1e-6;
        r
    };
    Ok(vec![
        report(format!("attention rows sum to 1 over {cases} cases"), worst_rows),
        report(format!("branch weights sum to 1 over {cases} cases"), worst_alpha),
    ])
}

/// Partition/reverse, shift/unshift and pad/crop over a grid of sizes.
pub fn roundtrips() -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut total, mut bad_partition, mut bad_shift, mut bad_pad) = (0, 0, 0, 0);
    for h in 4..=28 {
        for w in 4..=28 {
            for win in [2, 4, 7] {
                total += 1;
                let x = random::<f32>(&mut rng, &[h, w, 2], 1.0);
                let (padded, pad) = window::pad_to_multiple(&x, win)?;
                let (hp, wp) = pad.padded();
                let back = window::window_reverse(&window::window_partition(&padded, win)?, hp, wp)?;
                if !bits_equal(&back, &padded) || !bits_equal(&window::crop(&back, &pad)?, &x) {
                    bad_partition += 1;
                }
                if !bits_equal(&window::crop(&padded, &pad)?, &x) {
                    bad_pad += 1;
                }
                let s = (win / 2).max(1) as isize;
                let there = window::cyclic_shift(&x, -s, -s)?;
                if !bits_equal(&window::cyclic_shift(&there, s, s)?, &x) {
                    bad_shift += 1;
                }
            }
        }
    }
    let report = |what: &str, bad: usize| OracleReport::check(format!("{what}: {bad} of {total} sizes differ"), bad == 0);
    Ok(vec![
        report("partition/reverse", bad_partition),
        report("cyclic shift/unshift", bad_shift),
        report("pad/crop", bad_pad),
    ])
}

/// Relative position indices against direct coordinate enumeration.
pub fn rel_pos() -> Vec<OracleReport> {
    (1..=7)
        .map(|m| {
            let brute: Vec<usize> = brute_rel_pos(m).into_iter().flatten().collect();
            OracleReport::check(format!("M={m}: {} pairs", brute.len()), window::rel_pos_index(m).as_slice() == brute)
        })
        .collect()
}

/// Toy model at a generic point: every parameter outside the layer norms is
/// drawn uniformly from ±[`GRADCHECK_PARAM_SCALE`]. At the training
/// initializer many gradients sit near the finite-difference noise floor.
pub fn gradcheck_model(seed: u64) -> Result<Model<f64>> {
    let mut model = Model::<f64>::build(&ModelConfig::toy(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    model.visit_mut(&mut |p| {
        if !p.name().contains("norm") {
            for v in p.value_mut().data_mut() {
                *v = rng.gen_range(-GRADCHECK_PARAM_SCALE..GRADCHECK_PARAM_SCALE);
            }
        }
    });
    Ok(model)
}

/// Analytic gradients of the summed logits against central differences on
/// `samples` randomly chosen parameter entries of the toy model. A sample
/// passes when `|a - n| <= tol * max(|a|, |n|)` or `|a - n| <= atol`.
pub fn gradcheck(seed: u64, samples: usize) -> Result<Vec<OracleReport>> {
    gradcheck_on(gradcheck_model(seed)?, seed, samples)
}

/// [`gradcheck`] for any `f64` model.
pub fn gradcheck_on(mut model: Model<f64>, seed: u64, samples: usize) -> Result<Vec<OracleReport>> {
    let total = model.param_count();
    let mut out = vec![OracleReport::check(
        format!("toy model has {total} parameters (limit {GRADCHECK_MAX_PARAMS})"),
        total <= GRADCHECK_MAX_PARAMS,
    )];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [h, w] = model.config.image_size;
    let image = random::<f64>(&mut rng, &[h, w, model.config.in_channels], 1.0);

    let tape = Tape::new();
    let loss = model.forward_var(&tape.constant(image.clone()))?.sum()?;
    let grads = loss.backward()?;
    let mut names = Vec::new();
    let mut theta = Vec::with_capacity(total);
    let mut analytic = Vec::with_capacity(total);
    model.visit(&mut |p| {
        let g = grads.param(p.name()).expect("every parameter is reached");
        for (i, (v, d)) in p.value().data().iter().zip(g.data()).enumerate() {
            names.push((p.name().to_string(), i));
            theta.push(*v);
            analytic.push(*d);
        }
    });

    let coords = sample(&mut rng, total, samples.min(total)).into_vec();
    let numeric = finite_diff_grad(
        |t| {
            let mut at = 0;
            model.visit_mut(&mut |p| {
                let n = p.numel();
                p.value_mut().data_mut().copy_from_slice(&t[at..at + n]);
                at += n;
            });
            Ok(model.forward(&image)?.data().iter().sum())
        },
        &theta,
        &coords,
        GRADCHECK_EPS,
    )?;
    for (&c, n) in coords.iter().zip(numeric) {
        let (name, i) = &names[c];
        out.push(OracleReport::relative_floor(
            format!("{name}[{i}]"),
            &[analytic[c]],
            &[n],
            GRADCHECK_TOL,
            GRADCHECK_ATOL / GRADCHECK_TOL,
        ));
    }
    Ok(out)
}

/// Symmetric branch weights reduce to equal weighting, and capacity grows
/// with the weighting mode.
pub fn mode_collapse(seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (case, (c, wins, hw)) in [(24, vec![2, 4, 8], 8), (32, vec![3, 5], 10), (96, vec![7, 14, 21], 14)]
        .into_iter()
        .enumerate()
    {
        let n = wins.len();
        let windows = WindowSet::new(wins)?.clamp(hw, hw);
        let mut init = Init::new(seed + case as u64);
        let mut attn = MswMsaParams::<f64>::init(&mut init, "attn", c, n, &windows)?;
        let mut dynamic = DmswParams::<f64>::init(&mut init, "dmsw", c, n, DmswMode::Dynamic)?;
        randomize(&mut attn, &mut rng, 0.3);
        randomize(&mut dynamic, &mut rng, 0.3);
        let first = dynamic.alpha[0].clone();
        for a in &mut dynamic.alpha {
            a.weight.set(first.weight.value().clone())?;
            if let (Some(b), Some(b0)) = (a.bias.as_mut(), first.bias.as_ref()) {
                b.set(b0.value().clone())?;
            }
        }
        let equal = DmswParams {
            mode: DmswMode::EqualWeight,
            fc2: None,
            alpha: Vec::new(),
            ..dynamic.clone()
        };
        let x = random::<f64>(&mut rng, &[hw, hw, c], 1.0);
        let tape = Tape::inference();
        let xv = tape.constant(x);
        for shifted in [false, true] {
            let a = dwm_forward(&xv, &attn, &dynamic, &windows, shifted)?;
            let b = dwm_forward(&xv, &attn, &equal, &windows, shifted)?;
            out.push(OracleReport::absolute(
                format!("{hw}x{hw}x{c} windows {:?} shifted={shifted}", windows.effective()),
                &as_f64(a.value()),
                &as_f64(b.value()),
                1e-6,
            ));
        }
    }
    for (label, cfg) in [("DW-T", ModelConfig::dw_t()), ("DW-B", ModelConfig::dw_b())] {
        let count = |m| -> Result<usize> { Ok(Model::<f32>::skeleton(&cfg.clone().with_mode(m))?.param_count()) };
        let (d, e, o) = (count(DmswMode::Dynamic)?, count(DmswMode::EqualWeight)?, count(DmswMode::Off)?);
        out.push(OracleReport::check(format!("{label} params dynamic {d} > equal {e} > off {o}"), d > e && e > o));
    }
    Ok(out)
}

/// Fixed seeds give bit-identical weights, logits and reports.
pub fn determinism(seed: u64) -> Result<Vec<OracleReport>> {
    let cfg = ModelConfig::toy();
    let a = Model::<f32>::build(&cfg, seed)?;
    let b = Model::<f32>::build(&cfg, seed)?;
    let pa = a.named_params();
    let pb = b.named_params();
    let weights_equal = pa.len() == pb.len()
        && pa.iter().zip(&pb).all(|(x, y)| x.name() == y.name() && bits_equal(x.value(), y.value()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = random::<f32>(&mut rng, &[16, 16, 3], 1.0);
    let (la, lb) = (a.forward(&image)?, b.forward(&image)?);
    let report_a = Analysis::of(&Model::<f32>::build(&ModelConfig::dw_t(), seed)?)?.to_json();
    let report_b = Analysis::of(&Model::<f32>::build(&ModelConfig::dw_t(), seed)?)?.to_json();
    let toy_a = Analysis::of(&a)?.to_table();
    let toy_b = Analysis::of(&b)?.to_table();
    Ok(vec![
        OracleReport::check("weights bit-identical across builds", weights_equal),
        OracleReport::check("logits bit-identical across runs", bits_equal(&la, &lb)),
        OracleReport::check("trace identical across builds", a.trace() == b.trace()),
        OracleReport::check("reports identical across runs", report_a == report_b && toy_a == toy_b),
    ])
}

/// The whole toy model against the straight-line composition, every mode.
pub fn oracle_composition(seed: u64) -> Result<Vec<OracleReport>> {
    let mut out = Vec::new();
    for mode in [DmswMode::Dynamic, DmswMode::EqualWeight, DmswMode::Off] {
        let cfg = ModelConfig::toy().with_mode(mode).with_image_size(18, 22);
        let mut model = Model::<f64>::build(&cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.visit_mut(&mut |p| {
            if p.name().ends_with(".bias") || p.name().contains("rel_bias") {
                for v in p.value_mut().data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        });
        let image = random::<f64>(&mut rng, &[18, 22, 3], 1.0);
        let got = model.forward(&image)?;
        let want = model_oracle(&cfg, &Weights::of(&model), image.data());
        out.push(OracleReport::absolute(format!("toy 18x22 {mode} logits"), got.data(), &want, 1e-10));
    }
    Ok(out)
}

/// A named group of reports.
pub struct Suite {
    pub name: &'static str,
    pub reports: Vec<OracleReport>,
}

impl Suite {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// Every suite with its default size.
pub fn selftest(seed: u64) -> Result<Vec<Suite>> {
    Ok(vec![
        Suite { name: "parameter anchors", reports: param_anchors()? },
        Suite { name: "flop anchors", reports: flop_anchors()? },
        Suite { name: "closed form", reports: closed_form_equality(20, seed)? },
        Suite { name: "shape law", reports: shape_law() },
        Suite { name: "dense attention oracle", reports: oracle_equivalence(20, seed)? },
        Suite { name: "baseline collapse", reports: baseline_collapse(seed)? },
        Suite { name: "normalization", reports: normalization(1000, seed)? },
        Suite { name: "roundtrips", reports: roundtrips()? },
        Suite { name: "relative positions", reports: rel_pos() },
        Suite { name: "gradient check", reports: gradcheck(seed, 100)? },
        Suite { name: "mode collapse", reports: mode_collapse(seed)? },
        Suite { name: "determinism", reports: determinism(seed)? },
        Suite { name: "model oracle", reports: oracle_composition(seed)? },
    ])
}
