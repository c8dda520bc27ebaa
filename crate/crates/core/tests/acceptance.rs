//! End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sise_core::augment::{
    build_test, build_train_dev, generate_toy_corpus, generate_toy_noise_pool, mix_at_snr, synth_babble,
    synthesize_toy_utterance, CorpusManifest, NoiseKind, NoiseSpec, SnrPolicy, Split, ToyCorpusConfig,
};
use sise_core::eval::{
    build_report, ppmc, relative_improvement, run_model, stoi, summarize, Cell, CellResult, EvalOptions,
    EvalSummary, PpmcMode, ReportGrid,
};
use sise_core::losses::{
    cms_graph, cms_loss, mrs_graph, mrs_loss, si_task_graph, si_task_loss, wsdr_graph, wsdr_loss, LossConfig,
    SpectralTarget,
};
use sise_core::model::{load_checkpoint, ForwardOptions, HeadSet, ModelConfig, SiseModel};
use sise_core::nn::gradcheck::relative_error;
use sise_core::nn::{Graph, ParamGroup};
use sise_core::scenario::Scenario;
use sise_core::signal::wav::read_wav;
use sise_core::signal::{compress, decompress, istft, measure_snr, stft, SpectrogramGeometry, Waveform};
use sise_core::track::ArticulatoryTrack;
use sise_core::train::{
    run_stage, train_scenario, BatchPolicy, Dataset, EarlyStopping, MetricsLog, StageSelection, StopDecision,
    TrainConfig, TrainingSetup,
};
use sise_core::Error;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise(len: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-0.5..0.5)).collect()
}

fn wave(x: Vec<f64>) -> Waveform {
    Waveform::at_16k(x).unwrap()
}

// ---------------------------------------------------------------- 1

fn dsp_kernel() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(1);
    let geos = [
        SpectrogramGeometry::canonical(),
        SpectrogramGeometry::hann_quarter_hop(256),
        SpectrogramGeometry::hann_quarter_hop(512),
        SpectrogramGeometry::hann_quarter_hop(1024),
    ];
    let mut worst_rt = 0.0f64;
    for i in 0..40 {
        let geo = geos[i % geos.len()];
        let len = r.random_range(3 * geo.fft_size..32000);
        let x = wave(noise(len, &mut r));
        let y = istft(&stft(&x, geo).map_err(err)?).map_err(err)?;
        ensure(y.len() == len, || format!("length {} -> {}", len, y.len()))?;
        let n = geo.fft_size;
        for k in n..len - n {
            worst_rt = worst_rt.max((x.samples()[k] - y.samples()[k]).abs());
        }
    }
    ensure(worst_rt < 1e-6, || format!("round-trip error {worst_rt:.2e}"))?;

    let mut worst_c = 0.0f64;
    let mags = Array2::from_shape_fn((64, 201), |_| 10f64.powf(r.random_range(-6.0..6.0)));
    let back = decompress(&compress(mags.view(), SpectrogramGeometry::canonical()).map_err(err)?);
    for (a, b) in mags.iter().zip(back.iter()) {
        worst_c = worst_c.max((a - b).abs() / a);
    }
    ensure(worst_c < 1e-6, || format!("compress inverse error {worst_c:.2e}"))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("round-trip {worst_rt:.1e} (<1e-6), compress {worst_c:.1e} (<1e-6), {secs:.2} s (<10 s)"))
}

// ---------------------------------------------------------------- 2

fn mixing_precision() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let cfg = ToyCorpusConfig { n_utts: 25, duration_s: 1.0, duration_jitter: 0.3, seed: 31 };
    let cleans: Vec<Waveform> = (0..25).map(|i| synthesize_toy_utterance(&cfg, i).0).collect();
    let babble_cfg = ToyCorpusConfig { seed: 77, ..cfg.clone() };
    let talkers: Vec<Waveform> = (0..24).map(|i| synthesize_toy_utterance(&babble_cfg, i).0).collect();
    let mut r = rng(2);
    let colored: Vec<Waveform> = (0..5)
        .map(|_| {
            let c: f64 = r.random_range(-0.9..0.9);
            let mut y = 0.0;
            wave((0..20000).map(|_| { y = r.random_range(-1.0..1.0) + c * y; y }).collect())
        })
        .collect();

    let mut worst = 0.0f64;
    for i in 0..500u64 {
        let clean = &cleans[i as usize % cleans.len()];
        let target = r.random_range(-5.0..=10.0);
        let noise = if i % 2 == 0 {
            synth_babble(&talkers, clean.len(), i).map_err(err)?.wave
        } else {
            colored[i as usize % colored.len()].clone()
        };
        let m = mix_at_snr(clean, &noise, target, 1000 + i).map_err(err)?;
        let c = m.clean_component(clean);
        let resid: Vec<f64> = m.mixture.samples().iter().zip(c.samples()).map(|(a, b)| a - b).collect();
        let got = measure_snr(&c, &wave(resid)).map_err(err)?;
        worst = worst.max((got - target).abs());
    }
    ensure(worst <= 0.05, || format!("SNR off by {worst:.4} dB"))?;

    let counts: Vec<usize> = (0..500u64)
        .map(|s| synth_babble(&talkers, 8000, s).map(|b| b.talkers.len()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    ensure(lo >= 5 && hi <= 20, || format!("talker counts span [{lo}, {hi}]"))?;

    let corpus = generate_toy_corpus(
        &ToyCorpusConfig { n_utts: 10, duration_s: 0.5, duration_jitter: 0.0, seed: 3 },
        &tmp.path().join("c"),
    )
    .map_err(err)?;
    let pools = tmp.path().join("p");
    let tb = generate_toy_noise_pool(NoiseKind::Babble, 20, 1.0, 1, &pools.join("train")).map_err(err)?;
    let tn = generate_toy_noise_pool(NoiseKind::Nonbabble, 2, 1.0, 1, &pools.join("train")).map_err(err)?;
    let eb = generate_toy_noise_pool(NoiseKind::Babble, 20, 1.0, 2, &pools.join("test")).map_err(err)?;
    let en = generate_toy_noise_pool(NoiseKind::Nonbabble, 2, 1.0, 2, &pools.join("test")).map_err(err)?;
    let spec = |kind, pool: &Vec<PathBuf>| NoiseSpec {
        kind,
        source_pool: pool.clone(),
        snr_policy: SnrPolicy::test_default(),
        seed: 9,
    };
    let train_pools: Vec<PathBuf> = tb.iter().chain(&tn).cloned().collect();
    let clean_ok = build_test(
        &corpus,
        &spec(NoiseKind::Babble, &eb),
        &spec(NoiseKind::Nonbabble, &en),
        &train_pools,
        &tmp.path().join("c"),
    );
    ensure(clean_ok.is_ok(), || format!("disjoint pools rejected: {:?}", clean_ok.err()))?;
    let leaked: Vec<PathBuf> = en.iter().cloned().chain([tn[0].clone()]).collect();
    let contaminated = build_test(
        &corpus,
        &spec(NoiseKind::Babble, &eb),
        &spec(NoiseKind::Nonbabble, &leaked),
        &train_pools,
        &tmp.path().join("c"),
    );
    ensure(matches!(contaminated, Err(Error::ContaminatedEvaluation(_))), || {
        format!("shared noise file accepted: {:?}", contaminated.err())
    })?;
    Ok(format!(
        "500 mixes within {worst:.2e} dB (<=0.05), talkers in [{lo}, {hi}] (within [5, 20]), shared pool rejected"
    ))
}

// ---------------------------------------------------------------- 3

/// Negative cosine similarity, zero when either side is silent.
fn brute_neg_cos(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na * nb <= 1e-8 {
        0.0
    } else {
        -ab / (na * nb)
    }
}

fn brute_wsdr(x: &[f64], y: &[f64], e: &[f64]) -> f64 {
    let n: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let ne: Vec<f64> = x.iter().zip(e).map(|(a, b)| a - b).collect();
    let ey: f64 = y.iter().map(|v| v * v).sum();
    let en: f64 = n.iter().map(|v| v * v).sum();
    let alpha = ey / (ey + en);
    alpha * brute_neg_cos(y, e) + (1.0 - alpha) * brute_neg_cos(&n, &ne)
}

/// DFT of centered, reflect-padded, periodic-Hann frames: `[frame][bin]`.
struct BruteStft {
    n: usize,
    hop: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    window: Vec<f64>,
}

impl BruteStft {
    fn new(n: usize, hop: usize) -> Self {
        Self {
            n,
            hop,
            cos: (0..n).map(|j| (2.0 * PI * j as f64 / n as f64).cos()).collect(),
            sin: (0..n).map(|j| (2.0 * PI * j as f64 / n as f64).sin()).collect(),
            window: (0..n).map(|m| 0.5 * (1.0 - (2.0 * PI * m as f64 / n as f64).cos())).collect(),
        }
    }

    fn run(&self, x: &[f64]) -> Vec<Vec<(f64, f64)>> {
        let len = x.len() as i64;
        let pad = (self.n / 2) as i64;
        let reflect = |i: i64| -> usize {
            let j = if i < 0 { -i } else if i >= len { 2 * (len - 1) - i } else { i };
            j as usize
        };
        let frames = 1 + (x.len() + 2 * self.n / 2 - self.n) / self.hop;
        (0..frames)
            .map(|t| {
                let seg: Vec<f64> = (0..self.n)
                    .map(|m| x[reflect((t * self.hop + m) as i64 - pad)] * self.window[m])
                    .collect();
                (0..=self.n / 2)
                    .map(|k| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for (m, s) in seg.iter().enumerate() {
                            let j = (k * m) % self.n;
                            re += s * self.cos[j];
                            im -= s * self.sin[j];
                        }
                        (re, im)
                    })
                    .collect()
            })
            .collect()
    }
}

fn brute_cms(dft: &BruteStft, y: &[f64], e: &[f64]) -> f64 {
    let (sy, se) = (dft.run(y), dft.run(e));
    let mut sum = 0.0;
    let mut count = 0usize;
    for (fy, fe) in sy.iter().zip(&se) {
        for (a, b) in fy.iter().zip(fe) {
            sum += (a.0.hypot(a.1).ln_1p() - b.0.hypot(b.1).ln_1p()).abs();
            count += 1;
        }
    }
    sum / count as f64
}

fn brute_mrs(dfts: &[BruteStft], y: &[f64], e: &[f64]) -> f64 {
    let per: Vec<f64> = dfts
        .iter()
        .map(|d| {
            let (sy, se) = (d.run(y), d.run(e));
            let mut sum = 0.0;
            let mut count = 0usize;
            for (fy, fe) in sy.iter().zip(&se) {
                for (a, b) in fy.iter().zip(fe) {
                    sum += (a.0 - b.0).abs() + (a.1 - b.1).abs();
                    count += 1;
                }
            }
            sum / count as f64
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

fn brute_si_task(p: &Array2<f64>, y: &Array2<f64>, alpha: f64) -> f64 {
    let (n, c) = p.dim();
    let nf = n as f64;
    let mut pc_sum = 0.0;
    let mut rmse_sum = 0.0;
    for ch in 0..c {
        let (mut sp, mut sy, mut spp, mut syy, mut spy, mut sq) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let (a, b) = (p[[i, ch]], y[[i, ch]]);
            sp += a;
            sy += b;
            spp += a * a;
            syy += b * b;
            spy += a * b;
            sq += (a - b) * (a - b);
        }
        let cov = spy / nf - (sp / nf) * (sy / nf);
        let vp = spp / nf - (sp / nf).powi(2);
        let vy = syy / nf - (sy / nf).powi(2);
        pc_sum += cov / (vp * vy).sqrt();
        rmse_sum += (sq / nf).sqrt();
    }
    (1.0 - pc_sum / c as f64) + alpha * rmse_sum / c as f64
}

fn loss_oracles() -> Outcome {
    let cfg = LossConfig::default();
    let canonical = BruteStft::new(400, 160);
    let multi: Vec<BruteStft> = cfg.mrs_fft_sizes.iter().map(|&n| BruteStft::new(n, n / 4)).collect();
    let mut r = rng(3);
    let mut worst = [0.0f64; 4];
    for case in 0..100 {
        let len = r.random_range(1100..2400);
        let y = noise(len, &mut r);
        let n = noise(len, &mut r);
        let g = r.random_range(0.1..2.0);
        let x: Vec<f64> = y.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        let e: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b) + 0.05 * r.random_range(-1.0..1.0)).collect();
        let (xw, yw, ew) = (wave(x.clone()), wave(y.clone()), wave(e.clone()));
        let d = [
            (wsdr_loss(&xw, &yw, &ew).map_err(err)? - brute_wsdr(&x, &y, &e)).abs(),
            (cms_loss(&yw, &ew).map_err(err)? - brute_cms(&canonical, &y, &e)).abs(),
            (mrs_loss(&yw, &ew, &cfg).map_err(err)? - brute_mrs(&multi, &y, &e)).abs(),
            {
                let frames = r.random_range(5..80);
                let p = Array2::from_shape_fn((frames, 10), |_| r.random_range(-2.0..2.0));
                let t = Array2::from_shape_fn((frames, 10), |_| r.random_range(-2.0..2.0));
                (si_task_loss(p.view(), t.view(), &cfg).map_err(err)? - brute_si_task(&p, &t, cfg.alpha_si)).abs()
            },
        ];
        for (w, v) in worst.iter_mut().zip(d) {
            *w = w.max(v);
        }
        ensure(d.iter().all(|v| *v < 1e-6), || format!("case {case}: deviations {d:?}"))?;
    }

    let y = noise(2048, &mut r);
    let x: Vec<f64> = y.iter().map(|v| v + 0.3 * r.random_range(-1.0..1.0)).collect();
    let (xw, yw) = (wave(x), wave(y));
    let t = Array2::from_shape_fn((40, 10), |_| r.random_range(-2.0..2.0));
    let perfect = [
        wsdr_loss(&xw, &yw, &yw).map_err(err)?,
        cms_loss(&yw, &yw).map_err(err)?,
        mrs_loss(&yw, &yw, &cfg).map_err(err)?,
        si_task_loss(t.view(), t.view(), &cfg).map_err(err)?,
    ];
    ensure(perfect == [-1.0, 0.0, 0.0, 0.0], || format!("perfect predictions give {perfect:?}"))?;

    // Dyadic values keep every intermediate exact.
    let target = Array2::from_shape_fn((64, 10), |(i, c)| ((i * 7 + c * 3) % 29) as f64 / 1024.0);
    let shifted = target.mapv(|v| v + 0.5);
    let lin = si_task_loss(shifted.view(), target.view(), &cfg).map_err(err)?;
    ensure(lin == 0.2 * 0.5, || format!("offset 0.5 gives {lin}, want exactly 0.1"))?;
    Ok(format!(
        "max deviation wsdr {:.1e}, cms {:.1e}, mrs {:.1e}, si {:.1e} (<1e-6, 100 cases); perfect = -1/0/0/0; 0.2*RMSE exact",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// ---------------------------------------------------------------- 4

fn gradient_checks() -> Outcome {
    let cfg = LossConfig::default();
    let mcfg = ModelConfig { se_hidden: 64, se_depth: 1, si_hidden: 64, si_depth: 1, init_seed: 4, ..Default::default() };
    let mut model = SiseModel::new(mcfg, HeadSet { se: true, si: true }).map_err(err)?;
    let mut r = rng(4);
    let len = 2400;
    let clean: Vec<Vec<f64>> = (0..2).map(|_| noise(len, &mut r)).collect();
    let mixed: Vec<Vec<f64>> = clean.iter().map(|c| c.iter().map(|v| v + 0.2 * r.random_range(-1.0..1.0)).collect()).collect();
    let to_arr = |rows: &[Vec<f64>]| Array2::from_shape_fn((rows.len(), len), |(b, i)| rows[b][i]);
    let (clean_a, mix_a) = (to_arr(&clean), to_arr(&mixed));
    let waves: Vec<Waveform> = mixed.iter().map(|m| wave(m.clone())).collect();
    let target_spec = SpectralTarget::new(&clean_a, &cfg).map_err(err)?;
    let frames = model.forward(&mut Graph::new(), &waves, ForwardOptions { si: true, ..Default::default() })
        .map_err(err)?
        .feature_frames;
    let tracks = Array2::from_shape_fn((frames * 2, 10), |_| r.random_range(-1.0..1.0));

    // Each head is checked against its own scalar loss.
    let objective = |m: &SiseModel, g: &mut Graph, head: ParamGroup| {
        let se = head == ParamGroup::SeHead;
        let f = m
            .forward(g, &waves, ForwardOptions { se, si: !se, train: true, mask_override: None })
            .expect("forward");
        if se {
            let enh = f.enhanced.expect("se");
            let w = wsdr_graph(g, &mix_a, &clean_a, enh);
            let c = cms_graph(g, enh, &target_spec);
            let s = mrs_graph(g, enh, &target_spec, cfg.complex_l1);
            let a = g.add(w, c);
            g.add(a, s)
        } else {
            si_task_graph(g, f.tracks.expect("si"), &tracks, &cfg).0
        }
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    for head in [ParamGroup::SeHead, ParamGroup::SiHead] {
        let mut g = Graph::new();
        let loss = objective(&model, &mut g, head);
        g.backward(loss);
        let grads: Vec<_> = g.param_grads().into_iter().filter(|(id, _)| model.store.get(*id).group == head).collect();
        ensure(!grads.is_empty(), || format!("{head:?} has no gradients"))?;
        for _ in 0..10 {
            let (id, grad) = &grads[r.random_range(0..grads.len())];
            let idx = (r.random_range(0..grad.nrows()), r.random_range(0..grad.ncols()));
            let h = 1e-5;
            let orig = model.store.get(*id).value[idx];
            let eval = |v: f64, m: &mut SiseModel| {
                m.store.get_mut(*id).value[idx] = v;
                let mut g = Graph::new();
                let l = objective(m, &mut g, head);
                g.scalar(l)
            };
            let plus = eval(orig + h, &mut model);
            let minus = eval(orig - h, &mut model);
            model.store.get_mut(*id).value[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let e = relative_error(grad[idx], numeric, 1e-6);
            ensure(e < 1e-3, || format!("{} {idx:?}: {} vs {numeric}", model.store.get(*id).name, grad[idx]))?;
            worst = worst.max(e);
            checked += 1;
        }
    }
    Ok(format!("{checked} sampled head parameters (64-dim heads), max relative error {worst:.1e} (<1e-3)"))
}

// ---------------------------------------------------------------- 5

fn small_corpus(root: &Path, n: usize, seed: u64) -> Result<CorpusManifest, String> {
    let cfg = ToyCorpusConfig { n_utts: n, duration_s: 0.6, duration_jitter: 0.0, seed };
    let clean = generate_toy_corpus(&cfg, &root.join("corpus")).map_err(err)?;
    let pools = root.join("pools");
    let b = generate_toy_noise_pool(NoiseKind::Babble, 20, 1.0, 1, &pools).map_err(err)?;
    let o = generate_toy_noise_pool(NoiseKind::Nonbabble, 3, 1.0, 1, &pools).map_err(err)?;
    let p = SnrPolicy::train_default();
    let bs = NoiseSpec { kind: NoiseKind::Babble, source_pool: b, snr_policy: p.clone(), seed: 2 };
    let os = NoiseSpec { kind: NoiseKind::Nonbabble, source_pool: o, snr_policy: p, seed: 3 };
    build_train_dev(&clean, &bs, &os, 4, &root.join("corpus")).map_err(err)
}

fn small_config(scenario: Scenario, epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        scenario,
        seed: 5,
        max_epochs: epochs,
        patience: 2,
        stage1_lr: lr,
        stage2_lr: lr / 10.0,
        batch: BatchPolicy { utterances: 4, ..Default::default() },
        model: ModelConfig { se_hidden: 6, se_depth: 1, si_hidden: 6, si_depth: 1, ..Default::default() },
        ..Default::default()
    }
}

fn tst_contract() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let m = small_corpus(tmp.path(), 10, 8)?;
    let cfg = small_config(Scenario::SiseM, 6, 0.05);
    let setup = TrainingSetup {
        cfg: &cfg,
        train: Dataset::load(&m, Split::Train, true).map_err(err)?,
        dev: Dataset::load(&m, Split::Dev, true).map_err(err)?,
        preprocessor: None,
    };
    let mut model = SiseModel::for_scenario(cfg.model.clone(), cfg.scenario).map_err(err)?;
    let bb = |m: &SiseModel| m.store.digest(&[ParamGroup::Backbone]);
    let bb0 = bb(&model);
    let heads0 = model.store.digest(&[ParamGroup::SeHead, ParamGroup::SiHead]);
    let best = tmp.path().join("best.ckpt");
    let r1 = run_stage(&mut model, &setup, 1, &mut MetricsLog::disabled(), Some(&best)).map_err(err)?;
    ensure(bb(&model) == bb0, || "stage 1 moved the backbone".into())?;
    ensure(model.store.digest(&[ParamGroup::SeHead, ParamGroup::SiHead]) != heads0, || {
        "stage 1 left the heads untouched".into()
    })?;

    let argmin = r1
        .epochs
        .iter()
        .min_by(|a, b| a.dev_loss.total_cmp(&b.dev_loss))
        .map(|e| e.epoch)
        .unwrap();
    ensure(r1.best_epoch == argmin, || format!("best epoch {} but argmin {argmin}", r1.best_epoch))?;
    ensure(model.param_digest() == r1.best_param_digest, || "live parameters are not the best snapshot".into())?;
    let reloaded = load_checkpoint(&best, None).map_err(err)?;
    ensure(reloaded.param_digest() == r1.best_param_digest, || "best checkpoint digest differs".into())?;
    let (dev, _) = setup.evaluate(&model).map_err(err)?;
    ensure(dev == r1.best_dev_loss, || format!("restored dev loss {dev} vs best {}", r1.best_dev_loss))?;

    let mut es = EarlyStopping::new(5);
    let seq = [1.0, 0.8, 0.81, 0.82, 0.80, 0.83, 0.9, 0.7];
    let stop = seq
        .iter()
        .enumerate()
        .find(|(i, l)| es.observe(i + 1, **l) == StopDecision::Stop)
        .map(|(i, _)| i + 1);
    ensure(stop == Some(7) && es.best_epoch() == 2, || {
        format!("synthetic sequence stopped at {stop:?}, best {}", es.best_epoch())
    })?;
    Ok(format!(
        "backbone digest unchanged in stage 1; restored epoch {} of {} (argmin, digest equal); synthetic stop at epoch 7",
        r1.best_epoch, r1.stopped_epoch
    ))
}

// ---------------------------------------------------------------- 6

struct ToyRun {
    hidden: usize,
    depth: usize,
    epochs: usize,
    patience: usize,
    lr1: f64,
    lr2: f64,
    duration_s: f64,
}

const TOY_RUN: ToyRun = ToyRun { hidden: 48, depth: 1, epochs: 80, patience: 8, lr1: 3e-3, lr2: 1e-3, duration_s: 1.5 };

fn toy_end_to_end() -> Outcome {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().map_err(err)?;
    let root = tmp.path();
    let cfg = ToyCorpusConfig { n_utts: 64, duration_s: TOY_RUN.duration_s, duration_jitter: 0.2, seed: 21 };
    let clean = generate_toy_corpus(&cfg, &root.join("corpus")).map_err(err)?;
    let pool = |kind, n, seed, dir: &str| generate_toy_noise_pool(kind, n, 3.0, seed, &root.join(dir)).map_err(err);
    let train_b = pool(NoiseKind::Babble, 20, 1, "pools/train")?;
    let train_n = pool(NoiseKind::Nonbabble, 6, 1, "pools/train")?;
    let test_b = pool(NoiseKind::Babble, 20, 2, "pools/test")?;
    let test_n = pool(NoiseKind::Nonbabble, 6, 2, "pools/test")?;
    let spec = |kind, pool: Vec<PathBuf>, snr_policy, seed| NoiseSpec { kind, source_pool: pool, snr_policy, seed };
    let zero = SnrPolicy::Uniform { lo: 0.0, hi: 0.0 };
    let mut train = build_train_dev(
        &clean,
        &spec(NoiseKind::Babble, train_b.clone(), zero.clone(), 2),
        &spec(NoiseKind::Nonbabble, train_n.clone(), zero, 3),
        4,
        &root.join("corpus"),
    )
    .map_err(err)?;
    train.entries.retain(|e| e.noise_kind.is_none() || e.noise_kind == Some(NoiseKind::Nonbabble));
    let at0 = SnrPolicy::Levels(vec![0.0]);
    let train_pools: Vec<PathBuf> = train_b.into_iter().chain(train_n).collect();
    let test = build_test(
        &clean,
        &spec(NoiseKind::Babble, test_b, at0.clone(), 5),
        &spec(NoiseKind::Nonbabble, test_n, at0, 6),
        &train_pools,
        &root.join("corpus"),
    )
    .map_err(err)?;

    let cell = Cell { noise: Some(NoiseKind::Nonbabble), snr_db: Some(0.0) };
    let mut results: Vec<CellResult> = Vec::new();
    for scenario in [Scenario::SiseM, Scenario::SiO] {
        let tc = TrainConfig {
            scenario,
            seed: 1,
            max_epochs: TOY_RUN.epochs,
            patience: TOY_RUN.patience,
            stage1_lr: TOY_RUN.lr1,
            stage2_lr: TOY_RUN.lr2,
            batch: BatchPolicy { utterances: 8, ..Default::default() },
            model: ModelConfig {
                se_hidden: TOY_RUN.hidden,
                se_depth: TOY_RUN.depth,
                si_hidden: TOY_RUN.hidden,
                si_depth: TOY_RUN.depth,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = train_scenario(&tc, &train, &root.join(scenario.as_str()), &StageSelection::default())
            .map_err(err)?;
        let outputs = run_model(&out.model, None, &test, Split::Test).map_err(err)?;
        let summary = summarize(scenario, &outputs, &EvalOptions::default()).map_err(err)?;
        results.push(summary.cell(cell).cloned().ok_or("no nonbabble@0 cell")?);
    }
    let secs = t0.elapsed().as_secs_f64();
    let sise_m = &results[0];
    let si_o = &results[1];
    let ppmc_m = sise_m.ppmc.as_ref().ok_or("no SISE-M PPMC")?.avg_all;
    let ppmc_o = si_o.ppmc.as_ref().ok_or("no SI-O PPMC")?.avg_all;
    let se = sise_m.se.as_ref().ok_or("no SE summary")?;
    let checks = [
        ("a", ppmc_m >= 0.80, format!("PPMC {ppmc_m:.3} >= 0.80")),
        ("b", se.snr_gain_median >= 5.0, format!("median SNR gain {:.2} dB >= 5", se.snr_gain_median)),
        ("c", se.stoi_improved_fraction >= 0.90, format!("STOI improved on {:.0}% >= 90%", 100.0 * se.stoi_improved_fraction)),
        ("d", ppmc_m >= ppmc_o, format!("SI-O PPMC {ppmc_o:.3} <= SISE-M")),
        ("t", secs <= 900.0, format!("{secs:.0} s <= 900")),
    ];
    let ok = checks.iter().all(|c| c.1);
    let parts: Vec<String> = checks
        .iter()
        .map(|(k, pass, what)| format!("{k}:{} {what}", if *pass { "ok" } else { "FAIL" }))
        .collect();
    let detail = format!("n={} | {}", sise_m.n_utterances, parts.join(" | "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 7

fn report_arithmetic() -> Outcome {
    let cases = [(0.76, 0.42, 80.95), (0.82, 0.59, 38.98), (0.82, 0.76, 7.89), (1.62, 1.39, 16.55)];
    let mut worst = 0.0f64;
    for (new, base, want) in cases {
        let got = relative_improvement(new, base).map_err(err)?;
        worst = worst.max((got - want).abs());
    }
    ensure(worst < 0.01, || format!("relative improvement off by {worst:.4} points"))?;

    let mut r = rng(7);
    let mut summaries = Vec::new();
    for scenario in [Scenario::SiO, Scenario::SiseP, Scenario::SiseM] {
        let mut cells = Vec::new();
        for cell in ReportGrid::default().cells() {
            let gt: Vec<ArticulatoryTrack> = (0..3)
                .map(|_| ArticulatoryTrack::new(Array2::from_shape_fn((60, 10), |_| r.random_range(-1.0..1.0)), 50.0))
                .collect::<Result<_, _>>()
                .map_err(err)?;
            let est: Vec<ArticulatoryTrack> = gt
                .iter()
                .map(|t| {
                    let c = t.channels().mapv(|v| v + r.random_range(-1.0..1.0));
                    ArticulatoryTrack::new(c, 50.0)
                })
                .collect::<Result<_, _>>()
                .map_err(err)?;
            cells.push(CellResult {
                cell,
                n_utterances: 3,
                ppmc: Some(ppmc(&est, &gt, PpmcMode::Corpus).map_err(err)?),
                se: None,
            });
        }
        summaries.push(EvalSummary { scenario, ppmc_mode: PpmcMode::Corpus, cells });
    }
    let tables = build_report(&ReportGrid::default(), &summaries).map_err(err)?;
    let csv = tables.si_csv();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let first = header.iter().position(|h| *h == "LA").ok_or("no LA column")?;
    let avg = header.iter().position(|h| *h == "avg_all").ok_or("no avg_all column")?;
    let mut rows = 0;
    let mut worst_avg = 0.0f64;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let vals: Vec<f64> = f[first..first + 10].iter().map(|v| v.parse::<f64>()).collect::<Result<_, _>>().map_err(err)?;
        let a: f64 = f[avg].parse().map_err(err)?;
        worst_avg = worst_avg.max((a - vals.iter().sum::<f64>() / 10.0).abs());
        rows += 1;
    }
    ensure(rows == 27, || format!("{rows} rows emitted, want 27"))?;
    ensure(worst_avg <= 1e-12, || format!("avg_all off by {worst_avg:.2e}"))?;
    Ok(format!(
        "80.95/38.98/7.89/16.55 within {worst:.1e} points (<0.01); avg_all = column mean within {worst_avg:.1e} over {rows} rows (<=1e-12)"
    ))
}

// ---------------------------------------------------------------- 8

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let m = small_corpus(tmp.path(), 10, 9)?;
    let cfg = small_config(Scenario::SiseM, 2, 5e-3);
    let dirs = [tmp.path().join("run_a"), tmp.path().join("run_b")];
    for d in &dirs {
        train_scenario(&cfg, &m, d, &StageSelection::default()).map_err(err)?;
    }
    let mut compared = Vec::new();
    for name in ["metrics.jsonl", "stage1.ckpt", "stage2.ckpt", "best_stage1.ckpt", "best_stage2.ckpt"] {
        let a = std::fs::read(dirs[0].join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = std::fs::read(dirs[1].join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(a == b, || format!("{name} differs between runs"))?;
        compared.push(name);
    }
    Ok(format!("bitwise identical: {}", compared.join(", ")))
}

// ---------------------------------------------------------------- 9

fn stoi_cross_check() -> Outcome {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/stoi");
    let refs: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(data.join("reference.json")).map_err(err)?).map_err(err)?;
    ensure(refs.len() == 20, || format!("{} reference pairs", refs.len()))?;
    let mut worst = 0.0f64;
    for r in &refs {
        let i = r["index"].as_u64().ok_or("bad index")?;
        let c = read_wav(&data.join(format!("{i:02}_clean.wav"))).map_err(err)?;
        let d = read_wav(&data.join(format!("{i:02}_degraded.wav"))).map_err(err)?;
        let want = r["stoi"].as_f64().ok_or("bad value")?;
        worst = worst.max((stoi(&c, &d).map_err(err)? - want).abs());
    }
    ensure(worst < 0.01, || format!("max deviation {worst:.4}"))?;

    let cfg = ToyCorpusConfig { n_utts: 10, duration_s: 3.0, duration_jitter: 0.0, seed: 12 };
    let (clean, _) = synthesize_toy_utterance(&cfg, 0);
    let mut r = rng(9);
    let n = wave(noise(clean.len(), &mut r));
    let ladder = [20.0, 10.0, 0.0, -5.0, -10.0];
    let scores: Vec<f64> = ladder
        .iter()
        .map(|&snr| {
            let m = mix_at_snr(&clean, &n, snr, 3)?;
            stoi(&m.clean_component(&clean), &m.mixture)
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    ensure(scores.windows(2).all(|w| w[0] > w[1]), || format!("ladder scores {scores:?}"))?;
    Ok(format!(
        "20 pairs within {worst:.1e} (<0.01); ladder {}",
        scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(" > ")
    ))
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 dsp kernel", dsp_kernel),
        ("2 mixing precision", mixing_precision),
        ("3 loss oracles", loss_oracles),
        ("4 gradient checks", gradient_checks),
        ("5 two-stage training contract", tst_contract),
        ("6 toy end-to-end", toy_end_to_end),
        ("7 report arithmetic", report_arithmetic),
        ("8 determinism", determinism),
        ("9 stoi cross-check", stoi_cross_check),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if filter.as_ref().is_some_and(|p| !name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {name}: PASS ({secs:.1} s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {name}: FAIL ({secs:.1} s) {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
