//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p kseg --test acceptance -- 1 7 9`.

use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kseg_core::autodiff::{Tape, Tensor, Var};
use kseg_core::data::{generate_phantom, Extents, LabelVolume, PhantomParams, Task};
use kseg_core::kspace::{labels_to_kspace, packed_width, rfft2_pack, irfft2_unpack};
use kseg_core::metrics::{flops_estimate, subject_metrics};
use kseg_core::models::{Activation, Architecture, Model, ModelSpec, PositionalEncoding};
use kseg_core::pipeline::{
    decode_output, evaluate, label_targets, make_loss, spec_for, train, DomainConfig, Loss, Sample, Targets,
    TrainConfig,
};
use kseg_core::rng::Rng;

type Outcome = Result<String, String>;

const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;
const FFT_TOL: f64 = 1e-10;
const PARSEVAL_TOL: f64 = 1e-9;
const OVERFIT_DICE: f64 = 0.95;
const OVERFIT_STEPS: usize = 500;
/// Calibrated once against an initial run (0.91) and frozen.
const GENERALIZATION_DICE: f64 = 0.70;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

// ---- 1. gradient oracle ----

/// Largest relative error between tape gradients and central differences
/// of `f` with respect to every element of every input.
fn check_inputs(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let eval = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs);
        t.value(o).data()[0]
    };
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        for j in 0..xs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + GRAD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = orig - GRAD_STEP;
            let down = eval(&xs);
            xs[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[i][j], (up - down) / (2.0 * GRAD_STEP)));
        }
    }
    worst
}

/// Reduces a tensor-valued op to a scalar with fixed random weights.
fn weighted(t: &mut Tape, y: Var, seed: u64) -> Var {
    let w = random_tensor(&mut Rng::seed(seed), t.shape(y));
    let w = t.constant(w);
    let p = t.mul(y, w).unwrap();
    t.sum(p)
}

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> {
    vec![
        ("matmul", vec![vec![2, 3, 4], vec![4, 5]], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted(t, y, 1)
        })),
        ("matmul_batched", vec![vec![2, 2, 3, 4], vec![2, 2, 4, 3]], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted(t, y, 2)
        })),
        ("add_broadcast", vec![vec![2, 3, 4], vec![4]], Box::new(|t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            weighted(t, y, 3)
        })),
        ("sub", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            weighted(t, y, 4)
        })),
        ("mul_broadcast", vec![vec![2, 3, 4], vec![3, 4]], Box::new(|t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            weighted(t, y, 5)
        })),
        ("scale", vec![vec![5]], Box::new(|t, v| {
            let y = t.scale(v[0], -1.7);
            weighted(t, y, 6)
        })),
        ("tanh", vec![vec![2, 5]], Box::new(|t, v| {
            let y = t.tanh(v[0]);
            weighted(t, y, 7)
        })),
        ("gelu", vec![vec![2, 5]], Box::new(|t, v| {
            let y = t.gelu(v[0]);
            weighted(t, y, 8)
        })),
        ("softmax_last", vec![vec![2, 3, 4]], Box::new(|t, v| {
            let y = t.softmax(v[0], 2).unwrap();
            weighted(t, y, 9)
        })),
        ("softmax_first", vec![vec![3, 4]], Box::new(|t, v| {
            let y = t.softmax(v[0], 0).unwrap();
            weighted(t, y, 10)
        })),
        ("layer_norm", vec![vec![2, 3, 6]], Box::new(|t, v| {
            let y = t.layer_norm(v[0], 1e-5);
            weighted(t, y, 11)
        })),
        ("reshape", vec![vec![2, 6]], Box::new(|t, v| {
            let y = t.reshape(v[0], &[3, 4]).unwrap();
            weighted(t, y, 12)
        })),
        ("permute", vec![vec![2, 3, 4]], Box::new(|t, v| {
            let y = t.permute(v[0], &[2, 0, 1]).unwrap();
            weighted(t, y, 13)
        })),
        ("transpose", vec![vec![2, 3, 4]], Box::new(|t, v| {
            let y = t.transpose(v[0], 0, 2).unwrap();
            weighted(t, y, 14)
        })),
        ("concat", vec![vec![2, 3], vec![2, 2]], Box::new(|t, v| {
            let y = t.concat(&[v[0], v[1]], 1).unwrap();
            weighted(t, y, 15)
        })),
        ("slice", vec![vec![2, 6, 3]], Box::new(|t, v| {
            let y = t.slice(v[0], 1, 2, 3).unwrap();
            weighted(t, y, 16)
        })),
        ("sum", vec![vec![3, 4]], Box::new(|t, v| {
            let y = t.sum(v[0]);
            t.scale(y, 0.3)
        })),
        ("mean", vec![vec![3, 4]], Box::new(|t, v| {
            let y = t.mean(v[0]);
            t.tanh(y)
        })),
        ("cross_entropy", vec![vec![6, 3]], Box::new(|t, v| t.cross_entropy(v[0], &[0, 2, 1, 1, 0, 2]).unwrap())),
        ("mse", vec![vec![2, 4]], Box::new(|t, v| {
            let target: Vec<f64> = (0..8).map(|i| 0.25 * i as f64 - 1.0).collect();
            t.mse(v[0], &target).unwrap()
        })),
    ]
}

/// Largest relative error over every parameter of `model` under `loss`.
fn check_model(model: &mut Model, x: &Tensor, loss: &Loss, targets: &Targets) -> f64 {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let fwd = model.forward(&mut tape, xv, true).unwrap();
    let l = loss.apply(&mut tape, fwd.output, targets).unwrap();
    tape.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = fwd.params.iter().map(|&p| tape.grad(p).unwrap().to_vec()).collect();

    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        for j in 0..analytic[i].len() {
            let orig = model.params().tensors()[i].data()[j];
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig + GRAD_STEP;
            let up = loss.value(&model.predict(x).unwrap(), targets).unwrap();
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig - GRAD_STEP;
            let down = loss.value(&model.predict(x).unwrap(), targets).unwrap();
            model.params_mut().tensors_mut()[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[i][j], (up - down) / (2.0 * GRAD_STEP)));
        }
    }
    worst
}

fn random_labels(rng: &mut Rng, extents: Extents, classes: usize) -> LabelVolume {
    let n = extents.iter().product();
    LabelVolume::new(extents, 1.0, (0..n).map(|_| rng.below(classes) as u16).collect()).unwrap()
}

fn criterion_gradients() -> Outcome {
    let mut rng = Rng::seed(17);
    let mut ops = 0;
    for (name, shapes, f) in op_cases() {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
        let e = check_inputs(&inputs, f.as_ref());
        ensure(e < GRAD_TOL, || format!("op {name}: relative error {e:.3e}"))?;
        ops += 1;
    }

    let extents: Extents = [4, 8, 8];
    let (classes, batch) = (2, 2);
    let x_spatial = random_tensor(&mut rng, &[batch, 4, DomainConfig::SpatialToSpatial.in_features(extents)]);
    let x_kspace = random_tensor(&mut rng, &[batch, 4, DomainConfig::KToK.in_features(extents)]);
    let mut worst: f64 = 0.0;
    let mut models = 0;
    for arch in Architecture::ALL {
        for domain in DomainConfig::ALL {
            let pes: &[PositionalEncoding] = if arch == Architecture::TransformerEncoder {
                &[PositionalEncoding::None, PositionalEncoding::Fourier { bands: 2 }]
            } else {
                &[PositionalEncoding::None]
            };
            for &pe in pes {
                let mut spec = spec_for(arch, domain, extents, classes, 1, 16);
                spec.heads = 2;
                spec.latents = 4;
                spec.pe = pe;
                let mut model = Model::build(&spec, 5 + models as u64).map_err(err)?;
                let x = if domain.kspace_input() { &x_kspace } else { &x_spatial };
                let mut samples = Vec::new();
                for _ in 0..batch {
                    samples.push(random_labels(&mut rng, extents, classes));
                }
                let targets = match domain {
                    DomainConfig::KToK => {
                        let mut all = Vec::new();
                        for l in &samples {
                            match label_targets(l, domain, classes).map_err(err)? {
                                Targets::Spectra(v) => all.extend(v),
                                Targets::Classes(_) => unreachable!(),
                            }
                        }
                        Targets::Spectra(all)
                    }
                    _ => Targets::Classes(samples.iter().flat_map(|l| l.data().iter().map(|&c| c as usize)).collect()),
                };
                let e = check_model(&mut model, x, &make_loss(domain, classes), &targets);
                ensure(e < GRAD_TOL, || {
                    format!("{} {} pe={:?}: relative error {e:.3e}", arch.name(), domain.name(), pe)
                })?;
                worst = worst.max(e);
                models += 1;
            }
        }
    }
    Ok(format!("{ops} ops, {models} models, max relative error {worst:.2e}"))
}

// ---- 2. FFT oracle ----

/// Orthonormal half spectrum by the direct double sum.
fn naive_rfft2(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let wp = w / 2 + 1;
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let (mut re, mut im) = (vec![0.0; h * wp], vec![0.0; h * wp]);
    for k in 0..h {
        for l in 0..wp {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * PI * ((k * y) as f64 / h as f64 + (l * x) as f64 / w as f64);
                    sr += plane[y * w + x] * phase.cos();
                    si += plane[y * w + x] * phase.sin();
                }
            }
            re[k * wp + l] = sr * scale;
            im[k * wp + l] = si * scale;
        }
    }
    (re, im)
}

fn criterion_fft() -> Outcome {
    let mut rng = Rng::seed(23);
    let (mut dft, mut trip, mut parseval) = (0.0f64, 0.0f64, 0.0f64);
    for h in [2usize, 4, 8] {
        for w in [2usize, 4, 8] {
            for _ in 0..5 {
                let plane: Vec<f64> = (0..h * w).map(|_| rng.range(-3.0, 3.0)).collect();
                let k = rfft2_pack(&plane, h, w).map_err(err)?;
                let (re, im) = naive_rfft2(&plane, h, w);
                for i in 0..re.len() {
                    dft = dft.max((k.real()[i] - re[i]).abs()).max((k.imag()[i] - im[i]).abs());
                }
                let back = irfft2_unpack(&k).map_err(err)?;
                for (a, b) in back.iter().zip(&plane) {
                    trip = trip.max((a - b).abs());
                }
                let wp = packed_width(w);
                let mut half = 0.0;
                for i in 0..re.len() {
                    let col = i % wp;
                    let weight = if col == 0 || 2 * col == w { 1.0 } else { 2.0 };
                    half += weight * (k.real()[i].powi(2) + k.imag()[i].powi(2));
                }
                let spatial: f64 = plane.iter().map(|v| v * v).sum();
                parseval = parseval.max((half - spatial).abs());
            }
        }
    }
    ensure(dft < FFT_TOL, || format!("DFT mismatch {dft:.3e}"))?;
    ensure(trip < FFT_TOL, || format!("round trip error {trip:.3e}"))?;
    ensure(parseval < PARSEVAL_TOL, || format!("Parseval error {parseval:.3e}"))?;
    Ok(format!("dft {dft:.1e}, round trip {trip:.1e}, Parseval {parseval:.1e}"))
}

// ---- 3. KToK decode ----

fn criterion_decode() -> Outcome {
    let mut rng = Rng::seed(29);
    let extents: Extents = [16, 16, 16];
    let mut exact = 0;
    for i in 0..100 {
        let classes = 2 + rng.below(6);
        let labels = random_labels(&mut rng, extents, classes);
        let spectra: Vec<Vec<f64>> = labels_to_kspace(&labels, classes)
            .map_err(err)?
            .iter()
            .map(|k| k.to_features())
            .collect();
        let per = spectra[0].len() / extents[0];
        let mut output = Vec::with_capacity(classes * spectra[0].len());
        for d in 0..extents[0] {
            for s in &spectra {
                output.extend_from_slice(&s[d * per..(d + 1) * per]);
            }
        }
        let decoded = decode_output(&output, DomainConfig::KToK, extents, 1.0, classes).map_err(err)?;
        ensure(decoded.data() == labels.data(), || format!("volume {i} ({classes} classes) not recovered"))?;
        exact += 1;
    }
    Ok(format!("{exact}/100 recovered exactly"))
}

// ---- 4. overfit ----

fn phantom(seed: u64, extents: Extents, task: Task) -> Sample {
    let (v, l) = generate_phantom(&PhantomParams {
        seed,
        extents,
        task,
        ..Default::default()
    })
    .unwrap();
    Sample::new(v, l).unwrap()
}

fn criterion_overfit() -> Outcome {
    let extents: Extents = [16, 16, 16];
    let task = Task::SkullStrip;
    let set: Vec<Sample> = (100..104).map(|s| phantom(s, extents, task)).collect();
    let mut lowest = f64::INFINITY;
    for arch in Architecture::ALL {
        for domain in DomainConfig::ALL {
            let spec = spec_for(arch, domain, extents, task.classes(), 2, 64);
            let mut cfg = TrainConfig::new(spec, domain, task, 7);
            cfg.epochs = OVERFIT_STEPS;
            cfg.patience = OVERFIT_STEPS;
            cfg.max_steps = Some(OVERFIT_STEPS);
            let out = train(&cfg, &set, &set).map_err(err)?;
            let dice = evaluate(&out.model, &set, domain).map_err(err)?.macro_dice();
            ensure(out.steps <= OVERFIT_STEPS, || format!("{} steps", out.steps))?;
            ensure(dice >= OVERFIT_DICE, || {
                format!("{} {}: train Dice {dice:.4}", arch.name(), domain.name())
            })?;
            lowest = lowest.min(dice);
        }
    }
    Ok(format!("12/12 runs, lowest train Dice {lowest:.4}"))
}

// ---- 5. generalization ----

fn criterion_generalization() -> Outcome {
    let extents: Extents = [32, 32, 32];
    let task = Task::Tissue;
    let train_set: Vec<Sample> = (0..64).map(|s| phantom(s, extents, task)).collect();
    let val_set: Vec<Sample> = (1000..1008).map(|s| phantom(s, extents, task)).collect();
    let domain = DomainConfig::KToSpatial;
    let spec = spec_for(Architecture::TransformerEncoder, domain, extents, task.classes(), 2, 128);
    let cfg = TrainConfig::new(spec, domain, task, 7);
    let out = train(&cfg, &train_set, &val_set).map_err(err)?;
    let dice = evaluate(&out.model, &val_set, domain).map_err(err)?.macro_dice();
    ensure(dice >= GENERALIZATION_DICE, || format!("validation macro Dice {dice:.4}"))?;
    Ok(format!("validation macro Dice {dice:.4} after {} epochs", out.history.len()))
}

// ---- 6, 8. CLI harness ----

fn kseg(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_kseg"))
        .args(args)
        .env_remove("KSEG_SEED")
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!("kseg {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_config(dir: &Path, extents: usize, epochs: usize, grid: &str) -> Result<String, String> {
    let text = format!(
        r#"{{
  "output_dir": "out",
  "dataset": {{ "subjects": 10, "split_seed": 1,
               "phantom": {{ "seed": 4, "extents": [{extents}, {extents}, {extents}], "task": "skull_strip" }} }},
  "train": {{ "epochs": {epochs}, "batch_size": 4, "lr": 0.001, "seed": 9 }},
  "grid": [{grid}]
}}"#
    );
    let p = dir.join("experiment.json");
    fs::write(&p, text).map_err(err)?;
    Ok(p.to_string_lossy().into_owned())
}

fn criterion_pe_ablation() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let base = r#""arch": "TransformerEncoder", "domain": "KToK", "layers": 1, "width": 32"#;
    let grid = format!(r#"{{ {base} }}, {{ {base}, "pe": {{ "kind": "fourier", "bands": 4 }} }}"#);
    let cfg = write_config(dir.path(), 16, 5, &grid)?;
    kseg(&["gen-data", &cfg])?;
    kseg(&["train", &cfg])?;
    let report = kseg(&["report", &dir.path().join("out").to_string_lossy()])?;
    let mut lines = report.lines().skip_while(|l| !l.contains("|ΔDice|"));
    ensure(lines.next().is_some(), || "report has no |ΔDice| column".into())?;
    let row = lines.next().ok_or("no ablation row")?;
    let delta: f64 = row
        .split_whitespace()
        .last()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("unparseable ablation row {row:?}"))?;
    Ok(format!("paired runs complete, |ΔDice| = {delta:.4}"))
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let grid = r#"{ "arch": "TransformerEncoder", "domain": "KToSpatial", "layers": 1, "width": 16 },
               { "arch": "ResMLP", "domain": "KToK", "layers": 1, "width": 16 }"#;
    let cfg = write_config(dir.path(), 8, 3, grid)?;
    kseg(&["gen-data", &cfg])?;
    let runs = dir.path().join("out/runs");
    let snapshot = || -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut files = Vec::new();
        for run in fs::read_dir(&runs).map_err(err)? {
            let run = run.map_err(err)?.path();
            for f in ["metrics.csv", "checkpoint.kseg"] {
                files.push((run.join(f).to_string_lossy().into_owned(), fs::read(run.join(f)).map_err(err)?));
            }
        }
        files.sort();
        Ok(files)
    };
    kseg(&["train", &cfg, "--jobs", "1"])?;
    let first = snapshot()?;
    fs::remove_dir_all(&runs).map_err(err)?;
    kseg(&["train", &cfg, "--jobs", "1"])?;
    let second = snapshot()?;
    ensure(first.len() == 4 && second.len() == 4, || format!("{} files", second.len()))?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok("metrics.csv and checkpoint.kseg bitwise identical for 2 runs".into())
}

// ---- 7. FLOPs ----

fn tiny(arch: Architecture, layers: usize, pe: PositionalEncoding) -> ModelSpec {
    ModelSpec {
        arch,
        layers,
        width: 12,
        heads: 3,
        latents: 5,
        pe,
        activation: Activation::Gelu,
        tokens: 6,
        in_features: 10,
        out_features: 7,
    }
}

/// Hand-derived (forward per sample, parameters).
fn closed_form(spec: &ModelSpec) -> (u64, u64) {
    let t = spec.tokens as u64;
    let f = (spec.in_features + spec.pe.extra_features()) as u64;
    let (m, o, l) = (spec.width as u64, spec.out_features as u64, spec.latents as u64);
    let (b, hd) = (spec.layers as u64, 4 * m);
    let block_params = 2 * m + 4 * (m * m + m) + 2 * m + (m * hd + hd) + (hd * m + m);
    let cross_params = block_params + 2 * m;
    let io = (2 * t * f * m + 2 * t * m * o, f * m + m + m * o + o);
    match spec.arch {
        Architecture::Mlp => (
            io.0 + b * 2 * t * m * m,
            io.1 + b * (m * m + m),
        ),
        Architecture::TransformerEncoder => (
            io.0 + b * (8 * t * m * m + 4 * t * t * m + 4 * t * m * hd),
            io.1 + b * block_params,
        ),
        Architecture::PerceiverIo => {
            // encode: L queries over T tokens; decode: T queries over L latents
            let encode = 4 * l * m * m + 4 * t * m * m + 4 * l * t * m + 4 * l * m * hd;
            let latent = 8 * l * m * m + 4 * l * l * m + 4 * l * m * hd;
            let decode = 4 * t * m * m + 4 * l * m * m + 4 * t * l * m + 4 * t * m * hd;
            (
                io.0 + encode + b * latent + decode,
                io.1 + l * m + t * m + 2 * cross_params + b * block_params,
            )
        }
        Architecture::ResMlp => unreachable!(),
    }
}

fn criterion_flops() -> Outcome {
    let specs = [
        tiny(Architecture::Mlp, 1, PositionalEncoding::None),
        tiny(Architecture::TransformerEncoder, 1, PositionalEncoding::Fourier { bands: 2 }),
        tiny(Architecture::PerceiverIo, 1, PositionalEncoding::None),
    ];
    for spec in &specs {
        let name = spec.arch.name();
        let (forward, params) = closed_form(spec);
        let r = flops_estimate(spec, 1);
        ensure(r.forward == forward, || format!("{name}: forward {} vs closed form {forward}", r.forward))?;
        ensure(r.parameters == params, || format!("{name}: parameters {} vs closed form {params}", r.parameters))?;
        let r3 = flops_estimate(spec, 3);
        ensure(r3.forward == 3 * forward, || format!("{name}: batch scaling"))?;
        let built = Model::build(spec, 1).map_err(err)?.parameter_count() as u64;
        ensure(built == params, || format!("{name}: built model has {built} weights, closed form {params}"))?;
    }
    for arch in Architecture::ALL {
        for layers in [0, 1, 3] {
            let spec = tiny(arch, layers, PositionalEncoding::None);
            let r = flops_estimate(&spec, 2);
            ensure(r.backward == 2 * r.forward, || format!("{}: backward/forward != 2", arch.name()))?;
            let built = Model::build(&spec, 1).map_err(err)?.parameter_count() as u64;
            ensure(built == r.parameters, || format!("{} L={layers}: {built} weights vs {}", arch.name(), r.parameters))?;
        }
    }
    Ok("3 closed forms exact, backward = 2 x forward, parameter counts match built models".into())
}

// ---- 9. metric oracles ----

/// Set form: 2|A∩B|/(|A|+|B|), |A∩B|/|B|, |¬A∩¬B|/|¬B|, with empty sets
/// scoring 1 when the prediction agrees.
fn naive_metrics(pred: &[u16], gt: &[u16], class: u16) -> (f64, f64, f64) {
    let (mut inter, mut a, mut b, mut inter_neg, mut not_b) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p == class, g == class);
        a += p as u64;
        b += g as u64;
        inter += (p && g) as u64;
        not_b += (!g) as u64;
        inter_neg += (!p && !g) as u64;
    }
    let not_a = pred.len() as u64 - a;
    let dice = if a + b == 0 { 1.0 } else { (2 * inter) as f64 / (a + b) as f64 };
    let sens = match (b, a) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => inter as f64 / b as f64,
    };
    let spec = match (not_b, not_a) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => inter_neg as f64 / not_b as f64,
    };
    (dice, sens, spec)
}

fn criterion_metrics() -> Outcome {
    let mut rng = Rng::seed(31);
    let extents: Extents = [8, 8, 8];
    for i in 0..50 {
        let classes = 2 + rng.below(4);
        let gt = random_labels(&mut rng, extents, classes);
        let pred = if i % 5 == 0 {
            // mostly correct predictions, including absent classes
            let mut p = gt.clone();
            for v in p.data_mut() {
                if rng.uniform() < 0.1 {
                    *v = 0;
                }
            }
            p
        } else {
            random_labels(&mut rng, extents, classes)
        };
        let got = subject_metrics(&pred, &gt, classes + 1).map_err(err)?;
        for (c, m) in got.iter().enumerate() {
            let (d, s, p) = naive_metrics(pred.data(), gt.data(), c as u16);
            ensure(m.dice == d && m.sensitivity == s && m.specificity == p, || {
                format!("pair {i} class {c}: {m:?} vs ({d}, {s}, {p})")
            })?;
        }
    }

    // prediction covers exactly half of the reference
    let n = 8 * 8 * 8;
    let gt = LabelVolume::new(extents, 1.0, (0..n).map(|i| (i < 256) as u16).collect()).map_err(err)?;
    let pred = LabelVolume::new(extents, 1.0, (0..n).map(|i| (i < 128) as u16).collect()).map_err(err)?;
    let dice = subject_metrics(&pred, &gt, 2).map_err(err)?[1].dice;
    ensure(dice == 2.0 / 3.0, || format!("half overlap Dice {dice}"))?;
    Ok(format!("50/50 pairs exact, half overlap Dice = {dice:.6}"))
}

// ---- driver ----

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let all = [
        Criterion { id: 1, name: "gradient oracle", budget: Some(Duration::from_secs(120)), run: criterion_gradients },
        Criterion { id: 2, name: "FFT oracle", budget: Some(Duration::from_secs(10)), run: criterion_fft },
        Criterion { id: 3, name: "KToK decode exactness", budget: None, run: criterion_decode },
        Criterion { id: 4, name: "overfit suite", budget: Some(Duration::from_secs(15 * 60)), run: criterion_overfit },
        Criterion { id: 5, name: "generalization smoke test", budget: Some(Duration::from_secs(20 * 60)), run: criterion_generalization },
        Criterion { id: 6, name: "PE ablation harness", budget: None, run: criterion_pe_ablation },
        Criterion { id: 7, name: "FLOPs estimator", budget: None, run: criterion_flops },
        Criterion { id: 8, name: "determinism", budget: None, run: criterion_determinism },
        Criterion { id: 9, name: "metric oracles", budget: None, run: criterion_metrics },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));

    let mut failed = 0;
    for c in all.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("exceeded {}s budget", b.as_secs())),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  [{}] {}: {detail} ({:.1}s)", c.id, c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  [{}] {}: {why} ({:.1}s)", c.id, c.name, elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
