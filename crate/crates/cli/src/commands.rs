use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tcja_core::arch::parse_arch;
use tcja_core::attention::{
    ccf_values, cla_values, param_count, tla_values, AverageMatrix, TcjaParams,
};
use tcja_core::data::{
    gen_synthetic, integrate_frames, load_streams, read_events, split_train_test, write_dataset,
    Dataset, EventFormat, EventStream, SyntheticConfig,
};
use tcja_core::network::{Network, NetworkConfig};
use tcja_core::report::{write_matrix, Scale};
use tcja_core::train::{
    evaluate, network_from_checkpoint, train, Checkpoint, OutputPaths, TrainState,
};
use tcja_core::{Precision, Scalar, Tensor};

use crate::config::{
    flag, parse_flag, resolve, split_flags, to_json, DataConfig, RunConfig, RESOLVED_CONFIG,
};
use crate::error::{CliError, CliResult};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::data(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::data(path, e))
}

fn read_manifest_streams(
    path: &Path,
    sensor: Option<(u16, u16)>,
) -> CliResult<Vec<(EventStream, usize)>> {
    if !path.exists() {
        return Err(CliError::data(path, "dataset manifest not found"));
    }
    Ok(load_streams(path, sensor)?)
}

/// Train and test sets for `net`. Shape disagreements between the data and
/// the network are reported through `mismatch`.
fn load_data<F: Scalar>(
    data: &DataConfig,
    net: &NetworkConfig,
    split_seed: u64,
    mismatch: fn(String) -> CliError,
) -> CliResult<(Dataset<F>, Dataset<F>)> {
    let (t, k) = (net.time_steps, net.num_classes);
    let (train_set, test_set) = match &data.manifest {
        None => {
            let syn = &data.synthetic;
            if (syn.classes, syn.height as usize, syn.width as usize, 2)
                != (k, net.height, net.width, net.channels)
            {
                return Err(mismatch(format!(
                    "synthetic data is {} classes of 2x{}x{}, network expects {} classes of {}x{}x{}",
                    syn.classes, syn.height, syn.width, k, net.channels, net.height, net.width
                )));
            }
            let test_cfg = SyntheticConfig {
                samples: data.test_samples,
                seed: data.test_seed,
                ..syn.clone()
            };
            (
                Dataset::from_streams(&gen_synthetic(syn)?, t, k)?,
                Dataset::from_streams(&gen_synthetic(&test_cfg)?, t, k)?,
            )
        }
        Some(path) => {
            let all = Dataset::from_streams(&read_manifest_streams(path, data.sensor)?, t, k)?;
            match &data.test_manifest {
                Some(test) => (
                    all,
                    Dataset::from_streams(&read_manifest_streams(test, data.sensor)?, t, k)?,
                ),
                None => {
                    let (tr, te) = split_train_test(&all.labels, split_seed)?;
                    (all.subset(&tr), all.subset(&te))
                }
            }
        }
    };
    let expected = [t, net.channels, net.height, net.width];
    for ds in [&train_set, &test_set] {
        if let Some(shape) = ds.sample_shape() {
            if shape != expected {
                return Err(mismatch(format!(
                    "samples are {shape:?}, network expects {expected:?}"
                )));
            }
        }
    }
    Ok((train_set, test_set))
}

pub fn train_cmd(args: &[String]) -> CliResult<()> {
    let (own, rest) = split_flags(args, &["config"])?;
    let cfg: RunConfig = resolve(flag(&own, "config").map(Path::new), &rest)?;
    match cfg.train.precision {
        Precision::F32 => run_train::<f32>(&cfg),
        Precision::F64 => run_train::<f64>(&cfg),
    }
}

fn run_train<F: Scalar>(cfg: &RunConfig) -> CliResult<()> {
    let arch = parse_arch(&cfg.arch)?;
    let net = Network::<F>::build(&arch, &cfg.network, cfg.train.seed)?;
    let (train_set, test_set) =
        load_data::<F>(&cfg.data, &cfg.network, cfg.train.seed, CliError::Config)?;
    create_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join(RESOLVED_CONFIG), to_json(cfg))?;
    log::info!(
        "{} ({} parameters, {} in attention), {} train / {} test samples",
        arch,
        net.param_count(),
        net.tcja_param_count(),
        train_set.len(),
        test_set.len()
    );
    let mut state = TrainState::new(net, &cfg.train)?;
    let paths = OutputPaths::in_dir(&cfg.out_dir);
    let out = train(
        &mut state,
        &train_set,
        &test_set,
        &cfg.train,
        Some(&paths),
        |m| {
            log::info!(
                "epoch {:>3}  loss {:.5}  test acc {:.4}  {:.1}s",
                m.epoch,
                m.train_loss,
                m.test_acc,
                m.wall_seconds
            )
        },
    )?;
    match out.best_acc {
        Some(acc) => println!("best test accuracy {acc} at epoch {}", out.best_epoch),
        None => println!("no epochs run"),
    }
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

fn load_checkpoint(own: &[(String, String)]) -> CliResult<(PathBuf, Checkpoint)> {
    let path = PathBuf::from(
        flag(own, "checkpoint")
            .ok_or_else(|| CliError::Config("--checkpoint is required".into()))?,
    );
    let ck = Checkpoint::load(&path)?;
    Ok((path, ck))
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

pub fn eval_cmd(args: &[String]) -> CliResult<()> {
    let (own, rest) = split_flags(args, &["config", "checkpoint", "predictions"])?;
    let (path, ck) = load_checkpoint(&own)?;
    let cfg: RunConfig = resolve(flag(&own, "config").map(Path::new), &rest)?;
    let out =
        flag(&own, "predictions").map_or_else(|| sibling(&path, "predictions.csv"), PathBuf::from);
    match ck.meta.precision {
        Precision::F32 => run_eval::<f32>(&ck, &cfg, &out),
        Precision::F64 => run_eval::<f64>(&ck, &cfg, &out),
    }
}

fn run_eval<F: Scalar>(ck: &Checkpoint, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let net = network_from_checkpoint::<F>(ck)?;
    let (_, test) = load_data::<F>(&cfg.data, net.config(), cfg.train.seed, CliError::Mismatch)?;
    let report = evaluate(&net, &test, cfg.train.eval_batch_size)?;
    println!("accuracy {} ({} samples)", report.accuracy, test.len());
    println!("class  correct  total  accuracy");
    for (c, s) in report.per_class.iter().enumerate() {
        let acc = if s.total == 0 {
            0.0
        } else {
            s.correct as f64 / s.total as f64
        };
        println!("{c:>5}  {:>7}  {:>5}  {acc:.4}", s.correct, s.total);
    }
    let rates: Vec<String> = report
        .firing_rates
        .iter()
        .map(|r| format!("{r:.4}"))
        .collect();
    println!("LIF firing rates: {}", rates.join(" "));

    let k = test.num_classes;
    let mut csv = String::from("sample_id,true,predicted");
    for c in 0..k {
        csv.push_str(&format!(",rate_{c}"));
    }
    csv.push('\n');
    for (i, (&truth, &pred)) in test.labels.iter().zip(&report.predictions).enumerate() {
        csv.push_str(&format!("{i},{truth},{pred}"));
        for r in &report.rates[i] {
            csv.push_str(&format!(",{r}"));
        }
        csv.push('\n');
    }
    write(out, csv)?;
    println!("predictions in {}", out.display());
    Ok(())
}

pub fn inspect_cmd(args: &[String]) -> CliResult<()> {
    let (own, rest) = split_flags(
        args,
        &["config", "checkpoint", "sample", "events", "out", "cell"],
    )?;
    let (path, ck) = load_checkpoint(&own)?;
    let cfg: RunConfig = resolve(flag(&own, "config").map(Path::new), &rest)?;
    let out = flag(&own, "out").map_or_else(|| sibling(&path, "attention"), PathBuf::from);
    let sample = parse_flag::<usize>(&own, "sample")?.unwrap_or(0);
    let cell = parse_flag::<usize>(&own, "cell")?.unwrap_or(8);
    let events = flag(&own, "events").map(PathBuf::from);
    let opts = InspectOptions {
        sample,
        events,
        cell,
        out,
    };
    match ck.meta.precision {
        Precision::F32 => run_inspect::<f32>(&ck, &cfg, &opts),
        Precision::F64 => run_inspect::<f64>(&ck, &cfg, &opts),
    }
}

struct InspectOptions {
    sample: usize,
    events: Option<PathBuf>,
    cell: usize,
    out: PathBuf,
}

fn run_inspect<F: Scalar>(
    ck: &Checkpoint,
    cfg: &RunConfig,
    opts: &InspectOptions,
) -> CliResult<()> {
    let net = network_from_checkpoint::<F>(ck)?;
    if net.tcja_blocks() == 0 {
        return Err(CliError::NoAttention(format!(
            "{} has no TCJA blocks, so there is no attention to inspect",
            ck.arch
        )));
    }
    let net_cfg = net.config();
    let frames: Tensor<F> = match &opts.events {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::data(p, "event file not found"));
            }
            let stream = read_events(p, EventFormat::from_path(p), cfg.data.sensor)?;
            integrate_frames(&stream, net_cfg.time_steps)?
        }
        None => {
            let (_, test) = load_data::<F>(&cfg.data, net_cfg, cfg.train.seed, CliError::Mismatch)?;
            test.frames.get(opts.sample).cloned().ok_or_else(|| {
                CliError::Config(format!(
                    "--sample {} but the test set has {}",
                    opts.sample,
                    test.len()
                ))
            })?
        }
    };
    let expected = [
        net_cfg.time_steps,
        net_cfg.channels,
        net_cfg.height,
        net_cfg.width,
    ];
    if frames.shape() != expected {
        return Err(CliError::Mismatch(format!(
            "sample is {:?}, network expects {expected:?}",
            frames.shape()
        )));
    }
    create_dir(&opts.out)?;
    for (n, maps) in net.attention_maps(&frames)?.iter().enumerate() {
        let stem = format!("tcja{n}");
        for (name, m, scale) in [
            ("temporal", &maps.t_map, Scale::MinMax),
            ("channel", &maps.c_map, Scale::MinMax),
            ("fusion", &maps.f_map, Scale::Fixed { lo: 0.0, hi: 1.0 }),
        ] {
            let base = opts.out.join(format!("{stem}_{name}"));
            write_matrix(
                &base.with_extension("csv"),
                &base.with_extension("pgm"),
                m,
                scale,
                opts.cell,
            )?;
        }
        let (lo, hi) = maps
            .f_map
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v.as_f64()), b.max(v.as_f64()))
            });
        let shape = maps.f_map.shape();
        println!(
            "{stem}: {}x{} (CxT), fusion in [{lo:.4}, {hi:.4}]",
            shape[0], shape[1]
        );
    }
    println!("maps in {}", opts.out.display());
    Ok(())
}

fn parse_list(own: &[(String, String)], key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
    match flag(own, key) {
        None => Ok(default.to_vec()),
        Some(v) => v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::Config(format!("--{key} {v}: {e}")))
            })
            .collect(),
    }
}

/// Median wall time of `reps` calls, in nanoseconds.
fn time_op(reps: usize, mut f: impl FnMut()) -> u128 {
    let mut times: Vec<u128> = (0..reps.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_nanos()
        })
        .collect();
    times.sort_unstable();
    times[times.len() / 2].max(1)
}

pub fn bench_cmd(args: &[String]) -> CliResult<()> {
    let (own, rest) = split_flags(args, &["c", "t", "k", "reps", "out"])?;
    if let Some((k, _)) = rest.first() {
        return Err(CliError::Config(format!("bench does not take --{k}")));
    }
    let cs = parse_list(&own, "c", &[16, 32, 64, 128])?;
    let ts = parse_list(&own, "t", &[4, 8, 16])?;
    let ks = parse_list(&own, "k", &[2, 4])?;
    let reps = parse_flag::<usize>(&own, "reps")?.unwrap_or(20);
    let out = PathBuf::from(flag(&own, "out").unwrap_or("bench.csv"));

    let mut csv = String::from("c,t,k,op,nanos,params\n");
    for &c in &cs {
        for &t in &ts {
            for &k in &ks {
                if k == 0 || k >= c || k >= t {
                    log::warn!("skipping c={c} t={t} k={k}: kernel must be below both dimensions");
                    continue;
                }
                let counts = param_count(c, t, k, k);
                let z = Tensor::<f64>::from_fn(&[c, t], |i| (i as f64 * 0.37).sin());
                let p = TcjaParams::<f64>::zeros(c, t, k, k, Default::default())?;
                let avg = AverageMatrix::from_matrix(z.clone())?;
                let t_map = tla_values(&z, &p.w)?;
                let c_map = cla_values(&z, &p.e)?;
                let dense = vec![0.5f64; counts.fc_baseline];
                let flat = z.data().to_vec();
                let rows: [(&str, u128, usize); 5] = [
                    (
                        "tla",
                        time_op(reps, || drop(tla_values(&z, &p.w))),
                        counts.tla,
                    ),
                    (
                        "cla",
                        time_op(reps, || drop(cla_values(&z, &p.e))),
                        counts.cla,
                    ),
                    (
                        "ccf",
                        time_op(reps, || drop(ccf_values(&t_map, &c_map, p.fusion))),
                        0,
                    ),
                    (
                        "tcja",
                        time_op(reps, || drop(p.attention(&avg))),
                        counts.tcja(),
                    ),
                    (
                        "fc",
                        time_op(reps, || {
                            let n = flat.len();
                            let y: Vec<f64> = dense
                                .chunks(n)
                                .map(|row| row.iter().zip(&flat).map(|(a, b)| a * b).sum())
                                .collect();
                            std::hint::black_box(y);
                        }),
                        counts.fc_baseline,
                    ),
                ];
                for (op, nanos, params) in rows {
                    csv.push_str(&format!("{c},{t},{k},{op},{nanos},{params}\n"));
                }
            }
        }
    }
    print!("{csv}");
    write(&out, csv)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

pub fn gen_synthetic_cmd(args: &[String]) -> CliResult<()> {
    let (own, rest) = split_flags(args, &["config", "out", "format"])?;
    let cfg: SyntheticConfig = resolve(flag(&own, "config").map(Path::new), &rest)?;
    let out = PathBuf::from(
        flag(&own, "out").ok_or_else(|| CliError::Config("--out is required".into()))?,
    );
    let format = match flag(&own, "format").unwrap_or("csv") {
        "csv" => EventFormat::Csv,
        "bin" => EventFormat::Bin,
        other => {
            return Err(CliError::Config(format!(
                "--format must be csv or bin, got {other}"
            )))
        }
    };
    let streams = gen_synthetic(&cfg)?;
    create_dir(&out)?;
    let manifest = write_dataset(&out, &streams, format)?;
    write(&out.join("synthetic.json"), to_json(&cfg))?;
    println!("{} samples, manifest {}", streams.len(), manifest.display());
    Ok(())
}
