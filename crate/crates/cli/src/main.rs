use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pzsrc::classify::{atom_correlations, write_correlation_csv};
use pzsrc::dictionary::{assemble, AuxScheme, ClassSubdict, Dictionary};
use pzsrc::moments::{build_basis, build_disk_geometry};
use pzsrc::pipeline::{
    classify_all, report, resolve_scheme, run_experiment, write_decisions_csv, AuxKind, Dataset, RunConfig,
    RUN_CONFIG_FILE,
};
use pzsrc::sparse::StepPolicy;
use pzsrc::synth::{generate_dataset, SynthPlan};
use pzsrc::{Error, ErrorKind, Result};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "pzsrc", version, about = "Pseudo-Zernike sparse-representation classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and serialize the sampled basis matrix.
    Basis {
        #[command(flatten)]
        common: Common,
    },
    /// Build a dictionary from a manifest's training split.
    BuildDict {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Encode and classify a manifest's test split.
    Classify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a range of moving-window sizes or correlation thresholds.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Correlation curves of one class in moment space and pixel space.
    Correlate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long, value_delimiter = ',', required = true)]
        references: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Render a synthetic dataset from a plan file.
    Synth {
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run the command recorded in a run_config.json.
    Replay {
        record: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SweepParam {
    Window,
    Upsilon,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuxArg {
    None,
    Fix,
    Mov,
    Corr,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    Unit,
    Spectral,
}

/// Flags shared by every subcommand; unset flags fall back to `--config`
/// and then to the defaults.
#[derive(Args, Clone)]
struct Common {
    /// Start from a previously written run_config.json.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long, value_enum)]
    fusion: Option<Switch>,
    #[arg(long, value_enum)]
    normalize: Option<Switch>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long, value_enum)]
    aux: Option<AuxArg>,
    #[arg(long)]
    window: Option<usize>,
    /// Wrap the moving window around the class instead of zero-padding.
    #[arg(long)]
    circular: bool,
    #[arg(long)]
    upsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    residual_tol: Option<f64>,
    #[arg(long, value_enum)]
    step: Option<StepArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunRecord::read(path)?.config,
            None => RunConfig::default(),
        };
        if let Some(v) = self.n_max {
            c.n_max = v;
        }
        if self.side.is_some() {
            c.side = self.side;
        }
        if let Some(v) = self.fusion {
            c.fusion = matches!(v, Switch::On);
        }
        if let Some(v) = self.normalize {
            c.normalize = matches!(v, Switch::On);
        }
        if self.xi.is_some() {
            c.xi = self.xi;
        }
        if let Some(v) = self.aux {
            c.aux = match v {
                AuxArg::None => AuxKind::None,
                AuxArg::Fix => AuxKind::Fix,
                AuxArg::Mov => AuxKind::Mov,
                AuxArg::Corr => AuxKind::Corr,
            };
        }
        if self.window.is_some() {
            c.window = self.window;
        }
        if self.circular {
            c.circular = true;
        }
        if self.upsilon.is_some() {
            c.upsilon = self.upsilon;
        }
        if let Some(v) = self.gamma {
            c.iht.gamma = v;
        }
        if let Some(v) = self.max_iters {
            c.iht.max_iters = v;
        }
        if let Some(v) = self.residual_tol {
            c.iht.residual_tol = v;
        }
        if let Some(v) = self.step {
            c.iht.step = match v {
                StepArg::Unit => StepPolicy::Unit,
                StepArg::Spectral => StepPolicy::Spectral,
            };
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// What was run, with every input resolved; written as run_config.json.
#[derive(Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Job {
    Basis,
    BuildDict {
        manifest: PathBuf,
    },
    Classify {
        manifest: PathBuf,
        dictionary: PathBuf,
    },
    Sweep {
        manifest: PathBuf,
        param: SweepParam,
        values: Vec<f64>,
    },
    Correlate {
        manifest: PathBuf,
        dictionary: PathBuf,
        class: String,
        references: Vec<usize>,
    },
    Synth {
        plan: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct RunRecord {
    #[serde(flatten)]
    job: Job,
    out: PathBuf,
    config: RunConfig,
}

impl RunRecord {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    fn write(&self) -> Result<()> {
        let path = self.out.join(RUN_CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| io_error(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| io_error(path, e))
}

fn write_csv(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| io_error(path, e))?;
    finish(w, path)
}

fn read_dictionary(path: &Path) -> Result<Dictionary> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    Dictionary::read_from(&mut BufReader::new(file))
}

fn run(record: RunRecord) -> Result<()> {
    fs::create_dir_all(&record.out).map_err(|e| io_error(&record.out, e))?;
    let config = record.config.clone();
    let out = record.out.clone();
    let resolved = config.install(|| execute(&record.job, &config, &out))??;
    RunRecord {
        config: resolved,
        ..record
    }
    .write()
}

/// Runs one job and returns the config with every default resolved.
fn execute(job: &Job, config: &RunConfig, out: &Path) -> Result<RunConfig> {
    match job {
        Job::Basis => {
            let side = config
                .side
                .ok_or_else(|| Error::InvalidArgument("--side is required for basis".into()))?;
            let basis = build_basis(config.n_max, &build_disk_geometry(side)?)?;
            let path = out.join("basis.pzb");
            let mut w = create(&path)?;
            basis.write_to(&mut w)?;
            finish(w, &path)?;
            eprintln!(
                "basis: P={} N={} -> {}",
                basis.num_moments(),
                basis.num_pixels(),
                path.display()
            );
            Ok(config.clone())
        }
        Job::BuildDict { manifest } => {
            let data = Dataset::open(manifest)?;
            let (extractor, mut resolved) = data.extractor(config)?;
            let subdicts = training_subdicts(&data, &extractor)?;
            let scheme = resolve_scheme(&resolved, &subdicts)?;
            record_scheme(&mut resolved, scheme);
            let dict = assemble(&subdicts, scheme)?;
            let path = out.join("dictionary.pzd");
            let mut w = create(&path)?;
            dict.write_to(&mut w)?;
            finish(w, &path)?;
            let log = build_log(&dict);
            eprint!("{log}");
            let log_path = out.join("build_log.txt");
            fs::write(&log_path, log).map_err(|e| io_error(&log_path, e))?;
            Ok(resolved)
        }
        Job::Classify { manifest, dictionary } => {
            let data = Dataset::open(manifest)?;
            if data.manifest.test.is_empty() {
                return Err(Error::Degenerate("manifest test split is empty".into()));
            }
            let dict = read_dictionary(dictionary)?;
            let (extractor, resolved) = data.extractor(config)?;
            if dict.num_moments() != extractor.basis().num_moments() {
                return Err(Error::InvalidArgument(format!(
                    "dictionary atoms have {} moments but n_max = {} gives {}",
                    dict.num_moments(),
                    resolved.n_max,
                    extractor.basis().num_moments()
                )));
            }
            let features = data.features(&extractor, &data.manifest.test)?;
            let decisions = classify_all(&dict, &features, &resolved.iht)?;
            let truths: Vec<String> = data.manifest.test.iter().map(|i| i.class.clone()).collect();
            let eval = report(&dict, &truths, &decisions)?;
            write_csv(&out.join("decisions.csv"), |w| {
                write_decisions_csv(w, &dict, &data.manifest.test, &decisions)
            })?;
            write_csv(&out.join("report.csv"), |w| eval.write_csv(w))?;
            eprintln!("classify: {} items, omega = {:.2}", decisions.len(), eval.omega);
            Ok(resolved)
        }
        Job::Sweep { manifest, param, values } => {
            if values.is_empty() {
                return Err(Error::InvalidArgument("sweep needs at least one value".into()));
            }
            let data = Dataset::open(manifest)?;
            let (extractor, resolved) = data.extractor(config)?;
            let subdicts = training_subdicts(&data, &extractor)?;
            let test = data.features(&extractor, &data.manifest.test)?;
            let truths: Vec<String> = data.manifest.test.iter().map(|i| i.class.clone()).collect();
            let j_mean =
                subdicts.iter().map(|s| s.num_atoms()).sum::<usize>() as f64 / subdicts.len() as f64;
            let mut rows = Vec::new();
            for &v in values {
                let scheme = match param {
                    SweepParam::Window => {
                        if v < 1.0 || v.fract() != 0.0 {
                            return Err(Error::InvalidArgument(format!("window must be a positive integer, got {v}")));
                        }
                        AuxScheme::Mov {
                            window: v as usize,
                            circular: resolved.circular,
                        }
                    }
                    SweepParam::Upsilon => AuxScheme::Corr { upsilon: v },
                };
                let eval = run_experiment(&subdicts, scheme, &test, &truths, &resolved.iht)?;
                eprintln!("sweep: {scheme} -> omega = {:.2}", eval.omega);
                rows.push((v, eval.omega));
            }
            write_csv(&out.join("sweep.csv"), |w| match param {
                SweepParam::Window => {
                    writeln!(w, "window,w_over_j,omega")?;
                    for (v, omega) in &rows {
                        writeln!(w, "{v},{:.6},{omega:.6}", v / j_mean)?;
                    }
                    Ok(())
                }
                SweepParam::Upsilon => {
                    writeln!(w, "upsilon,omega")?;
                    for (v, omega) in &rows {
                        writeln!(w, "{v:.6},{omega:.6}")?;
                    }
                    Ok(())
                }
            })?;
            Ok(resolved)
        }
        Job::Correlate {
            manifest,
            dictionary,
            class,
            references,
        } => {
            let data = Dataset::open(manifest)?;
            let dict = read_dictionary(dictionary)?;
            let pz = dict.primary_subdict(class)?;
            let (extractor, resolved) = data.extractor(config)?;
            let mut items: Vec<_> = data.manifest.train.iter().filter(|i| &i.class == class).collect();
            items.sort_by(|a, b| a.angle.total_cmp(&b.angle));
            if items.len() != pz.num_atoms() {
                return Err(Error::DimensionMismatch {
                    what: "training items of the class vs dictionary atoms",
                    expected: pz.num_atoms(),
                    actual: items.len(),
                });
            }
            let pixels = items
                .iter()
                .map(|i| extractor.image_vector(&data.load(i)?).map(|g| g.values))
                .collect::<Result<Vec<_>>>()?;
            let raw = ClassSubdict::from_features(class.clone(), &pixels, None)?;
            let pz_table = atom_correlations(&pz, references)?;
            let raw_table = atom_correlations(&raw, references)?;
            write_csv(&out.join("correlations.csv"), |w| {
                write_correlation_csv(w, "pz", references, &pz_table, true)?;
                write_correlation_csv(w, "pixel", references, &raw_table, false)
            })?;
            Ok(resolved)
        }
        Job::Synth { plan } => {
            let text = fs::read_to_string(plan).map_err(|e| io_error(plan, e))?;
            let plan: SynthPlan = serde_json::from_str(&text).map_err(|e| Error::Json {
                path: plan.clone(),
                source: e,
            })?;
            let manifest = generate_dataset(&plan, out)?;
            eprintln!(
                "synth: {} train + {} test images -> {}",
                manifest.train.len(),
                manifest.test.len(),
                out.display()
            );
            let mut resolved = config.clone();
            resolved.side = Some(plan.side);
            Ok(resolved)
        }
    }
}

fn training_subdicts(data: &Dataset, extractor: &pzsrc::pipeline::FeatureExtractor) -> Result<Vec<ClassSubdict>> {
    let train = data.features(extractor, &data.manifest.train)?;
    data.subdicts(&train)
}

fn record_scheme(config: &mut RunConfig, scheme: AuxScheme) {
    match scheme {
        AuxScheme::Mov { window, .. } => config.window = Some(window),
        AuxScheme::Corr { upsilon } => config.upsilon = Some(upsilon),
        AuxScheme::None | AuxScheme::Fix => {}
    }
}

fn build_log(dict: &Dictionary) -> String {
    let mut s = format!("scheme {}\n", dict.scheme());
    for b in dict.classes() {
        s += &format!("class {} J={} L={}\n", b.class_id, b.num_primary(), b.num_auxiliary());
    }
    s += &format!("P {}\nQ {}\n", dict.num_moments(), dict.num_atoms());
    s
}

fn record_for(command: Command) -> Result<RunRecord> {
    let (job, common) = match command {
        Command::Basis { common } => (Job::Basis, common),
        Command::BuildDict { manifest, common } => (
            Job::BuildDict {
                manifest: absolute(&manifest)?,
            },
            common,
        ),
        Command::Classify {
            manifest,
            dictionary,
            common,
        } => (
            Job::Classify {
                manifest: absolute(&manifest)?,
                dictionary: absolute(&dictionary)?,
            },
            common,
        ),
        Command::Sweep {
            manifest,
            param,
            values,
            common,
        } => (
            Job::Sweep {
                manifest: absolute(&manifest)?,
                param,
                values,
            },
            common,
        ),
        Command::Correlate {
            manifest,
            dictionary,
            class,
            references,
            common,
        } => (
            Job::Correlate {
                manifest: absolute(&manifest)?,
                dictionary: absolute(&dictionary)?,
                class,
                references,
            },
            common,
        ),
        Command::Synth { plan, common } => (Job::Synth { plan: absolute(&plan)? }, common),
        Command::Replay { record, out } => {
            let mut r = RunRecord::read(&record)?;
            if let Some(out) = out {
                r.out = out;
            }
            return Ok(r);
        }
    };
    Ok(RunRecord {
        job,
        out: common.out.clone(),
        config: common.resolve()?,
    })
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match record_for(cli.command).and_then(run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
