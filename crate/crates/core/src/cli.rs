//! The `ifss` command line. [`run`] returns the process exit code; failures
//! print a single `error: <kind>: <message>` line to stderr.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::baseline::{fill_between_slices, zero_order_propagate};
use crate::config::{dataset_spec, train_setup, TrainSetup};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, per_slice_csv, per_slice_scores, report_csv};
use crate::net::{load_checkpoint, save_checkpoint};
use crate::phantom::generate_phantom;
use crate::propagate::{propagate, FusePolicy};
use crate::train::{log_to_csv, train_from_scratch, Patient, TrainMode};
use crate::volume::{
    decremental_schedule, fixed_interval_schedule, format_schedules, parse_schedules, read_mvol, write_mvol,
    AnnotationSchedule, DecrementalParams, MvolObject,
};

/// Exit code for bad invocations and missing inputs.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for every other failure.
pub const EXIT_FAILURE: i32 = 1;

pub const VOLUME_FILE: &str = "volume.mvol";
pub const SCHEDULE_FILE: &str = "schedule.txt";
pub const SPARSE_MASK_FILE: &str = "mask.mvol";

pub fn mask_file(structure: usize) -> String {
    format!("mask_{structure}.mvol")
}

pub fn patient_dir(i: usize) -> String {
    format!("patient_{i:03}")
}

#[derive(Parser, Debug)]
#[command(name = "ifss", version, about = "Sparse-annotation mask propagation through volumetric stacks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Full,
    #[value(name = "few_shot")]
    FewShot,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FuseArg {
    Last,
    Mean,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineArg {
    Zero,
    Fbs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScheduleArg {
    Interval,
    Decremental,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset: one directory per patient holding
    /// `volume.mvol` and one `mask_<k>.mvol` per structure.
    GenPhantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per structure found in the dataset.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; with several structures, `<out>.<k>` per structure.
        #[arg(long)]
        out: PathBuf,
        /// Structures trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Segment a whole volume from its first `w` annotated slices. Later
    /// slices of the seed mask are ignored, so a full ground truth works too.
    Propagate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "last")]
        fuse: FuseArg,
    },
    /// Compare a predicted mask with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        per_slice: Option<PathBuf>,
    },
    /// Non-learning propagation from a directory holding `mask.mvol` and
    /// `schedule.txt` (annotated slice indices on one line).
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineArg,
        #[arg(long)]
        sparse: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print annotation schedules, one index list per line.
    Schedule {
        #[arg(long, value_enum)]
        mode: ScheduleArg,
        /// Slices per volume.
        #[arg(long = "T")]
        depth: usize,
        /// Interval mode: distance between annotation groups.
        #[arg(long)]
        period: Option<usize>,
        /// Interval mode: slices per group.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Decremental mode: number of patients.
        #[arg(long, default_value_t = 29)]
        patients: usize,
        #[arg(long)]
        init_frac: Option<f64>,
        #[arg(long)]
        floor_frac: Option<f64>,
        #[arg(long)]
        budget_frac: Option<f64>,
    },
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                print!("{e}");
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { EXIT_USAGE } else { 0 };
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error: usage: {first}");
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            match e {
                Error::Io(ref io) if io.kind() == ErrorKind::NotFound => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenPhantom { spec, out } => gen_phantom(&spec, &out),
        Cmd::Train { mode, data, config, out, jobs } => {
            let mode = match mode {
                ModeArg::Full => TrainMode::Full,
                ModeArg::FewShot => TrainMode::FewShot,
            };
            train_cmd(mode, &data, &config, &out, jobs)
        }
        Cmd::Propagate { ckpt, volume, seeds, out, fuse } => {
            let policy = match fuse {
                FuseArg::Last => FusePolicy::Last,
                FuseArg::Mean => FusePolicy::Mean,
            };
            let (net, state) = load_checkpoint(&ckpt)?;
            let volume = read_mvol(&volume)?.into_volume()?;
            let seeds = read_mvol(&seeds)?.into_mask()?;
            let p = propagate(&net, &state, &volume, &seeds, policy)?;
            write_mvol(&p.mask.into(), &out)
        }
        Cmd::Eval { pred, gt, report, per_slice } => {
            let name = gt.file_stem().map_or_else(|| "structure".into(), |s| s.to_string_lossy().into_owned());
            let p = read_mvol(&pred)?.into_mask()?;
            let g = read_mvol(&gt)?.into_mask()?;
            let spacing = g.spacing();
            let r = evaluate(&p, &g, spacing)?;
            fs::write(&report, report_csv(&[(name, r)]))?;
            if let Some(path) = per_slice {
                fs::write(path, per_slice_csv(&per_slice_scores(&p, &g, spacing)?))?;
            }
            Ok(())
        }
        Cmd::Baseline { method, sparse, out } => {
            let mask = read_mvol(sparse.join(SPARSE_MASK_FILE))?.into_mask()?;
            let schedule = read_schedule(&sparse.join(SCHEDULE_FILE), mask.depth())?;
            let result = match method {
                BaselineArg::Zero => zero_order_propagate(&mask, &schedule)?,
                BaselineArg::Fbs => {
                    let r = fill_between_slices(&mask, &schedule)?;
                    if r.fell_back {
                        eprintln!("warning: fewer than two annotations, copied the nearest annotation instead");
                    }
                    r.mask
                }
            };
            write_mvol(&result.into(), &out)
        }
        Cmd::Schedule { mode, depth, period, k, patients, init_frac, floor_frac, budget_frac } => {
            let schedules = match mode {
                ScheduleArg::Interval => {
                    let period = period.ok_or_else(|| Error::InvalidArgument("interval mode needs --period".into()))?;
                    vec![fixed_interval_schedule(depth, period, k)?]
                }
                ScheduleArg::Decremental => {
                    let d = DecrementalParams::default();
                    let params = DecrementalParams {
                        init_frac: init_frac.unwrap_or(d.init_frac),
                        floor_frac: floor_frac.unwrap_or(d.floor_frac),
                        budget_frac: budget_frac.unwrap_or(d.budget_frac),
                        w: k,
                    };
                    decremental_schedule(&vec![depth; patients], &params)?
                }
            };
            print!("{}", format_schedules(&schedules));
            Ok(())
        }
    }
}

fn gen_phantom(spec: &Path, out: &Path) -> Result<()> {
    let ds = dataset_spec(&fs::read_to_string(spec)?)?;
    for i in 0..ds.count {
        let p = generate_phantom(&ds.patient(i))?;
        let dir = out.join(patient_dir(i));
        fs::create_dir_all(&dir)?;
        write_mvol(&MvolObject::Volume(p.volume), dir.join(VOLUME_FILE))?;
        for (s, m) in p.masks.into_iter().enumerate() {
            write_mvol(&MvolObject::Mask(m), dir.join(mask_file(s)))?;
        }
    }
    Ok(())
}

/// First line of a schedule file, checked against the volume depth.
pub fn read_schedule(path: &Path, depth: usize) -> Result<AnnotationSchedule> {
    let lines = parse_schedules(&fs::read_to_string(path)?)?;
    let idx = lines
        .into_iter()
        .next()
        .ok_or_else(|| Error::Schedule(format!("{} is empty", path.display())))?;
    AnnotationSchedule::new(depth, idx)
}

struct PatientFiles {
    dir: PathBuf,
    n_masks: usize,
}

fn list_patients(data: &Path) -> Result<Vec<PatientFiles>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(VOLUME_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!("no patient directories with {VOLUME_FILE} under {}", data.display())));
    }
    Ok(dirs
        .into_iter()
        .map(|dir| {
            let n_masks = (0..).take_while(|&s| dir.join(mask_file(s)).is_file()).count();
            PatientFiles { dir, n_masks }
        })
        .collect())
}

fn load_structure(files: &[PatientFiles], structure: usize, mode: TrainMode, setup: &TrainSetup) -> Result<Vec<Patient>> {
    let mut volumes = Vec::new();
    for f in files {
        let volume = read_mvol(f.dir.join(VOLUME_FILE))?.into_volume()?;
        let mask = read_mvol(f.dir.join(mask_file(structure)))?.into_mask()?;
        volumes.push((f, volume, mask));
    }
    let depths: Vec<usize> = volumes.iter().map(|v| v.1.depth()).collect();
    let schedules: Vec<AnnotationSchedule> = match mode {
        TrainMode::Full => depths.iter().map(|&d| AnnotationSchedule::full(d)).collect(),
        TrainMode::FewShot if files.iter().all(|f| f.dir.join(SCHEDULE_FILE).is_file()) => files
            .iter()
            .zip(&depths)
            .map(|(f, &d)| read_schedule(&f.dir.join(SCHEDULE_FILE), d))
            .collect::<Result<_>>()?,
        TrainMode::FewShot => decremental_schedule(&depths, &setup.decremental)?,
    };
    Ok(volumes
        .into_iter()
        .zip(schedules)
        .map(|((_, volume, mask), schedule)| Patient { volume, mask, schedule })
        .collect())
}

/// Output checkpoint of `structure` when `n` structures are trained.
pub fn checkpoint_path(out: &Path, structure: usize, n: usize) -> PathBuf {
    if n == 1 {
        out.to_path_buf()
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(format!(".{structure}"));
        PathBuf::from(s)
    }
}

fn log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

fn train_one(files: &[PatientFiles], structure: usize, mode: TrainMode, setup: &TrainSetup, out: &Path) -> Result<()> {
    let patients = load_structure(files, structure, mode, setup)?;
    let (_, h, w) = patients[0].volume.dims();
    if h != w {
        return Err(Error::Shape(format!("slices must be square, got {h}x{w}")));
    }
    let mut net_cfg = setup.net.clone();
    net_cfg.in_hw = h;
    net_cfg.validate()?;
    let cfg = crate::train::TrainConfig { mode, ..setup.train.clone() };
    let (_, state, log) = train_from_scratch(&net_cfg, &patients, &cfg)?;
    save_checkpoint(&state, out)?;
    fs::write(log_path(out), log_to_csv(&log))?;
    Ok(())
}

fn train_cmd(mode: TrainMode, data: &Path, config: &Path, out: &Path, jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be >= 1".into()));
    }
    let setup = train_setup(&fs::read_to_string(config)?)?;
    let files = list_patients(data)?;
    let n = files.iter().map(|f| f.n_masks).min().unwrap_or(0);
    if n == 0 {
        return Err(Error::InvalidArgument(format!("patients under {} carry no {}", data.display(), mask_file(0))));
    }
    // Structures are independent jobs; each keeps its own state and RNG.
    let structures: Vec<usize> = (0..n).collect();
    for batch in structures.chunks(jobs) {
        let results: Vec<Result<()>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&k| {
                    let (files, setup) = (&files, &setup);
                    let path = checkpoint_path(out, k, n);
                    s.spawn(move || train_one(files, k, mode, setup, &path))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("training thread panicked".into()))))
                .collect()
        });
        results.into_iter().collect::<Result<()>>()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["ifss", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["ifss", "eval", "--pred", "a"]), EXIT_USAGE);
        assert_eq!(run(["ifss", "eval", "--pred", "/nonexistent/a", "--gt", "/nonexistent/b", "--report", "r"]), EXIT_USAGE);
    }

    #[test]
    fn checkpoint_paths() {
        assert_eq!(checkpoint_path(Path::new("m.ckpt"), 0, 1), PathBuf::from("m.ckpt"));
        assert_eq!(checkpoint_path(Path::new("m.ckpt"), 2, 3), PathBuf::from("m.ckpt.2"));
    }
}
