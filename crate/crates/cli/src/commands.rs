use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use isodrift::io::{load_detector, parse_stream_record, save_detector, to_stream_line};
use isodrift::pipeline::{FitOptions, MonitorConfig, MonitorEvent};
use isodrift::report::{histogram, ThresholdMeta};
use isodrift::stats::{ks_test, DEFAULT_MAD_K};
use isodrift::synth::{dim_sweep, gen_baseline, gen_stream, sweep_csv, DriftSchedule, SynthConfig};
use isodrift::{Detector, ForestConfig, Monitor};

use crate::files::{extension, read_records, read_scores, write_records};
use crate::{
    Cli, Command, FitArgs, Format, KstestArgs, MonitorArgs, ReportArgs, ScheduleKind, ScoreArgs, ServeArgs,
    SimulateArgs,
};

const EXIT_ALARM: u8 = 3;

pub fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Fit(a) => fit(cli, a),
        Command::Score(a) => score(cli, a),
        Command::Monitor(a) => monitor(cli, a),
        Command::Kstest(a) => kstest(a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

fn load(path: &Path) -> Result<Detector> {
    load_detector(path).with_context(|| format!("loading model {}", path.display()))
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<ExitCode> {
    let set = read_records(&a.train, cli.format)?;
    let forest = ForestConfig::new(set.dim)
        .with_trees(a.trees as usize)
        .with_psi(a.psi as usize)
        .with_seed(a.seed);
    let mut opts = FitOptions::new(forest).with_k(a.mad_k);
    opts.consistency = a.mad_consistency;
    opts.created_at = a.created_at.clone();
    let (detector, _) = Detector::fit_with(&set.records, &opts).context("fitting detector")?;
    save_detector(&detector, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    for w in &detector.meta().warnings {
        eprintln!("warning: {w}");
    }
    println!("threshold {}", detector.threshold());
    println!("baseline_flag_rate {}", detector.baseline_flag_rate());
    if cli.verbose {
        eprintln!(
            "fitted {} trees (effective psi {}) on {} non-defect records of dim {}",
            detector.forest().trees().len(),
            detector.forest().effective_psi(),
            detector.meta().n_train,
            detector.dim()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn score(cli: &Cli, a: &ScoreArgs) -> Result<ExitCode> {
    let detector = load(&a.model)?;
    let set = read_records(&a.input, cli.format)?;
    let scored = detector.score_records(&set.records).context("scoring")?;
    let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    writeln!(out, "id,pred,score,flagged")?;
    for s in &scored {
        writeln!(out, "{},{},{},{}", s.id, s.pred, s.score, u8::from(s.flagged))?;
    }
    out.flush()?;
    if cli.verbose {
        eprintln!("scored {} records", scored.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_alarm_rate(s: &str, detector: &Detector) -> Result<f64> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(detector.default_alarm_rate());
    }
    match s.parse::<f64>() {
        Ok(r) if (0.0..=1.0).contains(&r) => Ok(r),
        _ => bail!("--alarm-rate must be `auto` or a number in [0, 1], got {s:?}"),
    }
}

fn emit(out: &mut impl Write, events: &[MonitorEvent<f64>]) -> Result<()> {
    for ev in events {
        serde_json::to_writer(&mut *out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn monitor(cli: &Cli, a: &MonitorArgs) -> Result<ExitCode> {
    let detector = load(&a.model)?;
    let config = MonitorConfig {
        window: a.window as usize,
        alarm_rate: parse_alarm_rate(&a.alarm_rate, &detector)?,
    };
    if cli.verbose {
        eprintln!("monitor window {} alarm_rate {}", config.window, config.alarm_rate);
    }
    let mut state = Monitor::new(config);
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());

    let embedding_file = a.input.as_deref().filter(|p| {
        cli.format.is_some()
            || p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("bin"))
    });
    if let Some(path) = embedding_file {
        let set = read_records(path, cli.format)?;
        for record in &set.records {
            let (_, events) = state.observe(&detector, record);
            emit(&mut out, &events)?;
        }
    } else {
        let reader: Box<dyn BufRead> = match &a.input {
            Some(p) => Box::new(BufReader::new(
                File::open(p).with_context(|| format!("opening {}", p.display()))?,
            )),
            None => Box::new(io::stdin().lock()),
        };
        let dim = detector.dim();
        for line in reader.lines() {
            let line = line.context("reading input stream")?;
            if line.trim().is_empty() {
                continue;
            }
            let events = match parse_stream_record(&line, Some(dim)) {
                Ok(record) => state.observe(&detector, &record).1,
                Err(e) => vec![state.record_error(e.id, e.message)],
            };
            emit(&mut out, &events)?;
        }
    }

    let snap = state.snapshot();
    let mut summary = serde_json::to_value(snap)?;
    if let Value::Object(map) = &mut summary {
        map.insert("event".into(), json!("summary"));
    }
    serde_json::to_writer(&mut out, &summary)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(if snap.alarms_raised > 0 {
        ExitCode::from(EXIT_ALARM)
    } else {
        ExitCode::SUCCESS
    })
}

fn kstest(a: &KstestArgs) -> Result<ExitCode> {
    let x = read_scores(&a.a)?;
    let y = read_scores(&a.b)?;
    let ks = ks_test(&x, &y).context("KS test")?;
    println!("D {}", ks.d_statistic);
    println!("p {}", ks.p_value);
    println!("n1 {} n2 {}", ks.n1, ks.n2);
    Ok(ExitCode::SUCCESS)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<ExitCode> {
    let config = SynthConfig::new(a.dim, a.seed)
        .with_sigma(a.sigma)
        .with_sizes(a.n_train, a.n_test);
    let schedule = match a.schedule {
        ScheduleKind::Abrupt => DriftSchedule::abrupt(a.t0, a.severity, a.type2_rate),
        ScheduleKind::Gradual => {
            DriftSchedule::gradual(a.t0, a.t1.unwrap_or(a.t0), a.severity, a.type2_rate)
        }
    }
    .with_max_fraction(a.ood_fraction);
    if a.schedule == ScheduleKind::Abrupt && a.t1.is_some_and(|t1| t1 != a.t0) {
        bail!("an abrupt schedule has t1 = t0");
    }

    let baseline = gen_baseline(&config)?;
    let stream = gen_stream(&config, &schedule, a.length)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let format = cli.format.unwrap_or(Format::Csv);
    let ext = extension(format);
    write_records(&a.out.join(format!("train.{ext}")), format, a.dim, &baseline.train)?;
    write_records(&a.out.join(format!("test.{ext}")), format, a.dim, &baseline.test)?;
    write_records(&a.out.join(format!("stream.{ext}")), format, a.dim, &stream)?;

    let mut lines = BufWriter::new(File::create(a.out.join("stream.jsonl"))?);
    for r in &stream {
        writeln!(lines, "{}", to_stream_line(r).map_err(|e| anyhow::anyhow!(e.message))?)?;
    }
    lines.flush()?;

    let manifest = json!({
        "config": config,
        "schedule": schedule,
        "length": a.length,
        "format": ext,
        "n_ood": stream.iter().filter(|r| r.truth == isodrift::ClassCode::OOD).count(),
    });
    fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;

    if !a.sweep_dims.is_empty() {
        let rows = dim_sweep::<f64>(
            &config,
            &a.sweep_dims,
            &schedule,
            a.length,
            ForestConfig::new(a.dim).with_seed(a.seed),
            DEFAULT_MAD_K,
        )?;
        fs::write(a.out.join("sweep.csv"), sweep_csv(&rows))?;
    }
    if cli.verbose {
        eprintln!("wrote {} train, {} test, {} stream records to {}", baseline.train.len(), baseline.test.len(), stream.len(), a.out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn report(a: &ReportArgs) -> Result<ExitCode> {
    let detector = load(&a.model)?;
    let train = read_scores(&a.train_scores)?;
    let test = read_scores(&a.test_scores)?;
    let ood = match &a.ood_scores {
        Some(p) => read_scores(p)?,
        None => Vec::new(),
    };
    let bins = a.bins as usize;
    let Some(hist) = histogram(&train, &test, &ood, bins) else {
        bail!("no scores to bin");
    };
    fs::write(&a.out, hist.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    let mad = detector.mad();
    let meta = ThresholdMeta {
        threshold: detector.threshold(),
        median: mad.median,
        mad: mad.mad,
        k: mad.k,
        bins,
        range_lo: hist.lo,
        range_hi: hist.hi,
        n_train: train.len(),
        n_test: test.len(),
        n_ood: ood.len(),
    };
    fs::write(a.out.with_extension("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    if let Some(svg) = &a.svg {
        fs::write(svg, hist.to_svg(detector.threshold())).with_context(|| format!("writing {}", svg.display()))?;
    }
    println!("threshold {}", detector.threshold());
    Ok(ExitCode::SUCCESS)
}

fn serve(a: &ServeArgs) -> Result<ExitCode> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let state = Arc::new(isodrift_service::Registry::new(a.recent_events));
    eprintln!("listening on http://{}", a.addr);
    runtime
        .block_on(isodrift_service::serve(a.addr, state))
        .with_context(|| format!("serving on {}", a.addr))?;
    Ok(ExitCode::SUCCESS)
}
