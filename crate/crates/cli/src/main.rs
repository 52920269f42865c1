mod artifacts;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ddssm::experiment::{self, Dataset, ExperimentConfig};
use ddssm::oracle::{hutchinson_cubic, HutchinsonParams, OracleReport};
use ddssm::ssm::{OrderChoice, PredictionReport, SsmModel};
use ddssm::trajectory::fmt_e12;
use ddssm::{par, systems, Trajectory};
use serde::Serialize;

use artifacts::Artifacts;

const THREADS_VAR: &str = "DDSSM_THREADS";

#[derive(Parser)]
#[command(name = "ddssm", version, about = "Spectral-submanifold models of delay differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured histories into train_*.csv / test_*.csv.
    Simulate(Common),
    /// Characteristic roots at the configured equilibrium.
    Spectrum(Common),
    /// Fit an SSM model to the training trajectories in --data.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Grid-search (manifold, dynamics) orders up to the configured ones
        /// by test NMTE and keep the best pair.
        #[arg(long)]
        sweep_orders: bool,
    },
    /// Predict every test trajectory in --data with a fitted model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Chaos diagnostics of the data and a fitted model.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Fit the parametric family, score unseen parameters, track the
    /// rightmost root.
    Parametric(Common),
    /// Limit-cycle fold scan of the parametric family.
    Bifurcate(Common),
    /// Equation-driven cubic SSM of the Hutchinson equation.
    Oracle {
        #[arg(long, default_value = "hutchinson")]
        system: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Built-in systems.
    Systems {
        #[command(subcommand)]
        action: SystemsAction,
    },
}

#[derive(Subcommand)]
enum SystemsAction {
    /// Names and default parameters as JSON.
    List,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match setup_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn setup_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_VAR}={v} is not a thread count"))?;
        par::init_threads(n)?;
    }
    Ok(())
}

/// 2 for rejected input, 3 for numerical failures, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    use ddssm::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Validation(_) | E::Config(_) | E::Catalog(_) | E::Parse(_) | E::Extrapolation { .. } | E::Io(_) => 2,
                E::Diverged { .. } | E::Numeric(_) | E::Resonance(_) | E::NoReturn { .. } => 3,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return 2;
        }
    }
    1
}

struct Loaded {
    cfg: ExperimentConfig,
    art: Artifacts,
}

fn load(common: &Common, command: &'static str) -> Result<Loaded> {
    let text = fs::read(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let cfg: ExperimentConfig = toml::from_str(std::str::from_utf8(&text).context("config is not UTF-8")?)
        .with_context(|| format!("parsing {}", common.config.display()))?;
    cfg.validate()?;
    let mut art = Artifacts::create(&common.out, command)?;
    art.seed(cfg.seed);
    art.input(&common.config, &text);
    Ok(Loaded { cfg, art })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(c) => simulate(&c),
        Command::Spectrum(c) => spectrum(&c),
        Command::Fit { common, data, sweep_orders } => fit(&common, &data, sweep_orders),
        Command::Predict { common, data, model } => predict(&common, &data, &model),
        Command::Diagnose { common, data, model } => diagnose(&common, &data, &model),
        Command::Parametric(c) => parametric(&c),
        Command::Bifurcate(c) => bifurcate(&c),
        Command::Oracle { system, out } => oracle(&system, out.as_deref()),
        Command::Systems { action: SystemsAction::List } => emit(&systems::catalog_json()),
    }
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn report(path: PathBuf) {
    println!("wrote {}", path.display());
}

fn trajectory_csv(t: &Trajectory) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    Ok(buf)
}

fn simulate(c: &Common) -> Result<()> {
    let Loaded { cfg, mut art } = load(c, "simulate")?;
    let data = experiment::generate(&cfg)?;
    for (prefix, set) in [("train", &data.train), ("test", &data.test)] {
        for (i, t) in set.iter().enumerate() {
            art.write(&format!("{prefix}_{i:03}.csv"), trajectory_csv(t)?)?;
        }
    }
    report(art.finish()?);
    Ok(())
}

fn spectrum(c: &Common) -> Result<()> {
    let Loaded { cfg, mut art } = load(c, "spectrum")?;
    let rep = experiment::spectrum(&cfg)?;
    art.write("spectrum.csv", rep.spectrum.to_csv())?;
    art.write_json("spectrum.json", &rep)?;
    report(art.finish()?);
    Ok(())
}

/// Reads `train_*.csv` and `test_*.csv` from `dir`, each sorted by name.
fn read_dataset(dir: &Path, art: &mut Artifacts) -> Result<Dataset> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    names.sort();
    let mut data = Dataset { train: Vec::new(), test: Vec::new() };
    for p in names {
        let stem = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        let set = if stem.starts_with("train_") {
            &mut data.train
        } else if stem.starts_with("test_") {
            &mut data.test
        } else {
            continue;
        };
        let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        art.input(&p, &bytes);
        set.push(Trajectory::read_csv(BufReader::new(&bytes[..])).with_context(|| format!("parsing {}", p.display()))?);
    }
    if data.train.is_empty() {
        return Err(ddssm::Error::Validation(format!("{}: no train_*.csv trajectories", dir.display())).into());
    }
    Ok(data)
}

fn read_model(path: &Path, art: &mut Artifacts) -> Result<SsmModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    art.input(path, text.as_bytes());
    SsmModel::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn require_tests(data: &Dataset) -> Result<()> {
    if data.test.is_empty() {
        return Err(ddssm::Error::Validation("no test_*.csv trajectories".into()).into());
    }
    Ok(())
}

fn fit(c: &Common, dir: &Path, sweep_orders: bool) -> Result<()> {
    let Loaded { mut cfg, mut art } = load(c, "fit")?;
    let data = read_dataset(dir, &mut art)?;
    if sweep_orders {
        require_tests(&data)?;
        let experiment::DynamicsConfig::Poly { order, .. } = cfg.model.dynamics else {
            bail!(ddssm::Error::Validation("model.dynamics: order sweeps need a polynomial field".into()));
        };
        let choices: Vec<OrderChoice> = (1..=cfg.model.manifold_order)
            .flat_map(|m| (1..=order).map(move |n| OrderChoice { manifold: m, dynamics: n }))
            .collect();
        let ranked = experiment::sweep(&cfg, &data, &choices)?;
        let mut csv = String::from("manifold_order,dynamics_order,nmte\n");
        for (ch, e) in &ranked {
            csv.push_str(&format!("{},{},{}\n", ch.manifold, ch.dynamics, fmt_e12(*e)));
        }
        art.write("sweep.csv", csv)?;
        let best = ranked[0].0;
        cfg.model.manifold_order = best.manifold;
        if let experiment::DynamicsConfig::Poly { order, .. } = &mut cfg.model.dynamics {
            *order = best.dynamics;
        }
    }
    let model = experiment::fit(&cfg, &data.train)?;
    art.write("model.json", model.to_json()? + "\n")?;
    report(art.finish()?);
    Ok(())
}

fn prediction_csv(r: &PredictionReport) -> String {
    let k = r.truth.first().map_or(0, Vec::len);
    let mut s = String::from("t");
    (1..=k).for_each(|c| s.push_str(&format!(",true_{c}")));
    (1..=k).for_each(|c| s.push_str(&format!(",pred_{c}")));
    s.push('\n');
    for (i, t) in r.times.iter().enumerate() {
        s.push_str(&fmt_e12(*t));
        for v in r.truth[i].iter().chain(&r.predicted[i]) {
            s.push(',');
            s.push_str(&fmt_e12(*v));
        }
        s.push('\n');
    }
    s
}

fn predict(c: &Common, dir: &Path, model: &Path) -> Result<()> {
    let Loaded { cfg, mut art } = load(c, "predict")?;
    let data = read_dataset(dir, &mut art)?;
    require_tests(&data)?;
    let model = read_model(model, &mut art)?;
    let reps = experiment::score(&cfg, &model, &data.test)?;
    let mut csv = String::from("trajectory,nmte,diverged\n");
    for (i, r) in reps.iter().enumerate() {
        csv.push_str(&format!("{i},{},{}\n", fmt_e12(r.nmte), r.diverged));
        art.write(&format!("prediction_{i:03}.csv"), prediction_csv(r))?;
    }
    art.write("nmte.csv", csv)?;
    println!("mean NMTE {:.4}", experiment::mean_nmte(&reps));
    report(art.finish()?);
    Ok(())
}

fn diagnose(c: &Common, dir: &Path, model: &Path) -> Result<()> {
    let Loaded { cfg, mut art } = load(c, "diagnose")?;
    let data = read_dataset(dir, &mut art)?;
    let model = read_model(model, &mut art)?;
    let d = experiment::diagnose(&cfg, &data, &model)?;
    if let Some(f) = &d.corr_embedded {
        art.write("correlation_embedded.csv", f.to_csv())?;
    }
    if let Some(f) = &d.corr_reduced {
        art.write("correlation_reduced.csv", f.to_csv())?;
    }
    if let Some(f) = &d.lyapunov_full {
        art.write("lyapunov_full.csv", f.to_csv())?;
    }
    if let Some(f) = &d.lyapunov_model {
        art.write("lyapunov_model.csv", f.to_csv())?;
    }
    if let Some(p) = &d.pdf {
        art.write("pdf.csv", p.to_csv())?;
    }
    art.write_json("diagnostics.json", &d)?;
    if cfg.build_system()?.periodic.is_some() {
        let steps = cfg.diagnostics.as_ref().map_or(0, |d| d.orbit_steps);
        let m = experiment::microchaos(&cfg, &data, &model, steps)?;
        art.write("microchaos_pdf.csv", m.pdf.to_csv())?;
        let mut orbits = String::from("j,exact,model\n");
        for (j, (a, b)) in m.exact.iter().zip(&m.model).enumerate() {
            orbits.push_str(&format!("{j},{},{}\n", fmt_e12(*a), fmt_e12(*b)));
        }
        art.write("microchaos_orbits.csv", orbits)?;
        println!("micro-chaos PDF L1 {:.4}", m.pdf.max_l1());
    }
    report(art.finish()?);
    Ok(())
}

#[derive(Serialize)]
struct UnseenScore {
    mu: f64,
    nmte: f64,
}

fn parametric(c: &Common) -> Result<()> {
    let Loaded { cfg, mut art } = load(c, "parametric")?;
    let pc = cfg.parametric.as_ref().expect("validated");
    if pc.track.is_some() {
        let tr = experiment::hopf_track(&cfg)?;
        let mut csv = String::from("mu,re,im\n");
        for p in &tr.points {
            csv.push_str(&format!("{},{},{}\n", fmt_e12(p.param), fmt_e12(p.root.re), fmt_e12(p.root.im)));
        }
        art.write("track.csv", csv)?;
        art.write_json("crossings.json", &tr.crossings)?;
    }
    let (family, fits) = experiment::fit_family(&cfg)?;
    let mut csv = String::from("mu,nmte,eta_radius\n");
    for f in &fits {
        csv.push_str(&format!("{},{},{}\n", fmt_e12(f.mu), fmt_e12(f.nmte), fmt_e12(f.eta_radius)));
    }
    art.write("nodes.csv", csv)?;
    art.write_json("family.json", &family)?;
    let unseen = experiment::score_unseen(&cfg, &family)?;
    let mut csv = String::from("mu,nmte\n");
    for (mu, e) in &unseen {
        csv.push_str(&format!("{},{}\n", fmt_e12(*mu), fmt_e12(*e)));
    }
    art.write("unseen.csv", csv)?;
    let scores: Vec<UnseenScore> = unseen.iter().map(|&(mu, nmte)| UnseenScore { mu, nmte }).collect();
    art.write_json("unseen.json", &scores)?;
    report(art.finish()?);
    Ok(())
}

#[derive(Serialize)]
struct FoldSummary<'a> {
    folds: &'a [f64],
    gaps: &'a [(f64, f64)],
}

fn bifurcate(c: &Common) -> Result<()> {
    let Loaded { cfg, mut art } = load(c, "bifurcate")?;
    let (family, fits) = experiment::fit_family(&cfg)?;
    let diag = experiment::bifurcation(&cfg, &family, &fits)?;
    art.write("diagram.csv", diag.to_csv())?;
    art.write_json("folds.json", &FoldSummary { folds: &diag.folds, gaps: &diag.gaps })?;
    println!("folds {:?}", diag.folds);
    report(art.finish()?);
    Ok(())
}

fn oracle(system: &str, out: Option<&Path>) -> Result<()> {
    if system != "hutchinson" {
        return Err(
            ddssm::Error::Validation(format!("system: the oracle covers `hutchinson` only, not `{system}`")).into()
        );
    }
    let sol = hutchinson_cubic(HutchinsonParams::default())?;
    let rep = OracleReport::new(&sol)?;
    match out {
        Some(dir) => {
            let mut art = Artifacts::create(dir, "oracle")?;
            art.write_json("oracle.json", &rep)?;
            report(art.finish()?);
        }
        None => emit(&serde_json::to_string_pretty(&rep)?)?,
    }
    Ok(())
}
