//! `mckba`: encrypt and decrypt PGM images with MCKBA/HCKBA, and break it.

pub mod report;

use anyhow::{ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mckba_core::cpa::{build_chosen_images, cpa_recover, TagRecord};
use mckba_core::kernel::{solve_state, CaseTag, KernelInstance};
use mckba_core::keystream::parse_x0;
use mckba_core::kpa::{decrypt_with_equivalent, kpa_attack, AmbiguityPolicy, EquivalentKey};
use mckba_core::prob::empirical_profile;
use mckba_core::{
    block_codec, decrypt_image, encrypt_image, keygen, GrayImage, SecretKey, WordSize,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use report::{hex, AnalysisReport, AttackReport, KeyFile, RunInfo, TargetInfo};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(name = "mckba", version, about)]
pub struct Cli {
    /// Leave wall-clock timings out of reports so reruns are byte-identical.
    #[arg(long, global = true)]
    no_timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct KeyArgs {
    #[arg(long, value_parser = parse_word_size)]
    n: WordSize,
    /// Decimal or 0x-prefixed hex.
    #[arg(long, value_parser = parse_u64)]
    key1: u64,
    #[arg(long, value_parser = parse_u64)]
    key2: u64,
    /// Decimal fraction, `a/b` or `a/2^k`.
    #[arg(long)]
    x0: String,
}

impl KeyArgs {
    fn key(&self) -> Result<SecretKey> {
        Ok(SecretKey::new(
            self.n,
            self.key1,
            self.key2,
            parse_x0(&self.x0)?,
        )?)
    }
}

#[derive(clap::Args, Debug)]
struct KnownArgs {
    #[arg(long)]
    p1: PathBuf,
    #[arg(long)]
    c1: PathBuf,
    #[arg(long)]
    p2: PathBuf,
    #[arg(long)]
    c2: PathBuf,
}

#[derive(clap::Args, Debug)]
struct TargetArgs {
    /// Cipher image to decrypt with the recovered key.
    #[arg(long, requires = "out")]
    target: Option<PathBuf>,
    #[arg(long, requires = "target")]
    out: Option<PathBuf>,
    /// Key class assumed for blocks whose class could not be recovered.
    #[arg(long, value_enum, default_value_t = Assume::Key1)]
    assume: Assume,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Assume {
    Key1,
    Key2,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a key whose sub-keys differ in ceil(n/2) bits.
    Keygen {
        #[arg(long, value_parser = parse_word_size)]
        n: WordSize,
        #[arg(long)]
        seed: u64,
        /// Write the key here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Encrypt {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Decrypt {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confirm bits of x from y = (alpha + x) ^ (beta + x) and trace each plane.
    KernelSolve {
        #[arg(long, value_parser = parse_word_size)]
        n: WordSize,
        #[arg(long, value_parser = parse_u64)]
        alpha: u64,
        #[arg(long, value_parser = parse_u64)]
        beta: u64,
        #[arg(long, value_parser = parse_u64)]
        y: u64,
    },
    /// Known-plaintext attack from two plain/cipher pairs.
    Kpa {
        #[arg(long, value_parser = parse_word_size)]
        n: WordSize,
        #[command(flatten)]
        known: KnownArgs,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Write the two chosen plain images and their per-block query record.
    CpaGen {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, value_parser = parse_word_size)]
        n: WordSize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out1: PathBuf,
        #[arg(long)]
        out2: PathBuf,
        #[arg(long)]
        tags: PathBuf,
    },
    /// Chosen-plaintext attack on the encryptions of a `cpa-gen` pair.
    CpaRecover {
        #[arg(long, value_parser = parse_word_size)]
        n: WordSize,
        #[command(flatten)]
        known: KnownArgs,
        #[arg(long)]
        tags: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Modelled versus measured bit-confirmation rates.
    Analyze {
        #[arg(long, value_parser = parse_word_size)]
        n: WordSize,
        /// Ignored for n <= 8, where every input is enumerated.
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_u64(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(&h.replace('_', ""), 16),
        None => s.replace('_', "").parse(),
    }
    .map_err(|e| format!("{s:?}: {e}"))
}

fn parse_word_size(s: &str) -> std::result::Result<WordSize, String> {
    let n: u32 = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    WordSize::new(n).map_err(|e| e.to_string())
}

fn verbose() -> bool {
    std::env::var("MCKBA_VERBOSE").is_ok_and(|v| !v.is_empty() && v != "0")
}

macro_rules! note {
    ($($arg:tt)*) => {
        if verbose() {
            eprintln!($($arg)*);
        }
    };
}

fn load(path: &Path) -> Result<GrayImage> {
    GrayImage::load(path).with_context(|| format!("reading {}", path.display()))
}

fn save(img: &GrayImage, path: &Path) -> Result<()> {
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let timing = !cli.no_timing;
    let start = Instant::now();
    let elapsed = || timing.then(|| start.elapsed().as_millis() as u64);

    match cli.command {
        Command::Keygen { n, seed, out } => {
            let key = keygen(n, &mut ChaCha8Rng::seed_from_u64(seed));
            write_json(&KeyFile::new(&key), out.as_deref())?;
        }
        Command::Encrypt { key, input, out } => {
            let key = key.key()?;
            save(&encrypt_image(&load(&input)?, &key)?, &out)?;
        }
        Command::Decrypt { key, input, out } => {
            let key = key.key()?;
            save(&decrypt_image(&load(&input)?, &key)?, &out)?;
        }
        Command::KernelSolve { n, alpha, beta, y } => kernel_solve(n, alpha, beta, y)?,
        Command::Kpa { n, known, target } => {
            let [p1, c1, p2, c2] = [&known.p1, &known.c1, &known.p2, &known.c2].map(|p| load(p));
            let (p1, c1, p2, c2) = (p1?, c1?, p2?, c2?);
            note!(
                "kpa: {}x{} images, n = {}",
                p1.width(),
                p1.height(),
                n.bits()
            );
            let out = kpa_attack(&p1, &c1, &p2, &c2, n)?;
            note!("kpa: merge {:?}", out.merge);
            let mut report = AttackReport::new(
                run_info("kpa", n, &p1, None),
                &out.key,
                Some(out.merge.clone()),
                &out.selectors,
            );
            report.mean_confirmed_bits = Some(out.mean_confirmed);
            report.target = decrypt_target(&target, &out.key)?;
            report.run.elapsed_ms = elapsed();
            write_json(&report, target.report.as_deref())?;
        }
        Command::CpaGen {
            width,
            height,
            n,
            seed,
            out1,
            out2,
            tags,
        } => {
            let (p1, p2, record) = build_chosen_images(width, height, n, seed)?;
            save(&p1, &out1)?;
            save(&p2, &out2)?;
            write_json(&record, Some(&tags))?;
        }
        Command::CpaRecover {
            n,
            known,
            tags,
            target,
        } => {
            let text = std::fs::read_to_string(&tags)
                .with_context(|| format!("reading {}", tags.display()))?;
            let record: TagRecord = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", tags.display()))?;
            ensure!(
                record.word_size == n,
                "tag record was made for n = {}, not {}",
                record.word_size.bits(),
                n.bits()
            );
            let [p1, c1, p2, c2] = [&known.p1, &known.c1, &known.p2, &known.c2].map(|p| load(p));
            let (p1, c1, p2, c2) = (p1?, c1?, p2?, c2?);
            let out = cpa_recover(&p1, &c1, &p2, &c2, &record)?;
            note!(
                "cpa: {} joint solves, sources {:?}",
                out.joint_solves,
                out.key_sources
            );
            let mut report = AttackReport::new(
                run_info("cpa-recover", n, &p1, Some(record.seed)),
                &out.key,
                out.merge.clone(),
                &out.selectors,
            );
            report.key_sources = Some(out.key_sources);
            report.target = decrypt_target(&target, &out.key)?;
            report.run.elapsed_ms = elapsed();
            write_json(&report, target.report.as_deref())?;
        }
        Command::Analyze {
            n,
            trials,
            seed,
            report,
        } => {
            let profile = empirical_profile(n, trials, seed)?;
            let mut out = AnalysisReport::new(&profile, seed);
            out.elapsed_ms = elapsed();
            print_table(&out);
            if let Some(path) = report {
                write_json(&out, Some(&path))?;
            }
        }
    }
    Ok(())
}

fn run_info(command: &str, n: WordSize, img: &GrayImage, seed: Option<u64>) -> RunInfo {
    RunInfo {
        command: command.into(),
        n: n.bits(),
        width: img.width(),
        height: img.height(),
        blocks: block_codec::block_count(img.width(), img.height(), n),
        seed,
        elapsed_ms: None,
    }
}

fn decrypt_target(args: &TargetArgs, key: &EquivalentKey) -> Result<Option<TargetInfo>> {
    let (Some(target), Some(out)) = (&args.target, &args.out) else {
        return Ok(None);
    };
    let policy = match args.assume {
        Assume::Key1 => AmbiguityPolicy::AssumeKey1,
        Assume::Key2 => AmbiguityPolicy::AssumeKey2,
    };
    let (img, flagged) = decrypt_with_equivalent(&load(target)?, key, policy)?;
    save(&img, out)?;
    Ok(Some(TargetInfo {
        path: target.display().to_string(),
        out: out.display().to_string(),
        guessed_blocks: flagged.len(),
    }))
}

fn kernel_solve(n: WordSize, alpha: u64, beta: u64, y: u64) -> Result<()> {
    let inst = KernelInstance::new(n, alpha, beta, y)?;
    let state = solve_state(&inst)?;
    let (value, mask) = state.confirmed();
    println!("value {}", hex(n, value));
    println!("mask  {}", hex(n, mask));
    println!("bit  a b yt  case         c  ct  x  rule");
    let yt = inst.y_tilde();
    let show = |v: Option<bool>| v.map_or('.', |b| if b { '1' } else { '0' });
    for i in 0..n.bits() {
        let case = state
            .case(i)
            .map_or("-".to_string(), |c: CaseTag| c.to_string());
        let rule = state
            .deduction(i)
            .map_or(String::new(), |d| format!("{d:?}"));
        println!(
            "{i:>3}  {} {} {}   {case:<12} {}  {}   {}  {rule}",
            alpha >> i & 1,
            beta >> i & 1,
            yt >> i & 1,
            show(state.carry.get(i)),
            show(state.carry_tilde.get(i)),
            show(state.x.get(i)),
        );
    }
    Ok(())
}

fn print_table(r: &AnalysisReport) {
    println!(
        "n = {}, {} {}",
        r.n,
        r.trials,
        if r.exhaustive {
            "inputs (exhaustive)"
        } else {
            "trials"
        }
    );
    println!("bit  P(yt=0) model/meas   P[c] model/meas    P[x] model/meas  |diff|  optimal");
    for p in &r.planes {
        println!(
            "{:>3}  {:.4} {:.4}      {:.4} {:.4}      {:.4} {:.4}  {:.4}  {:.4}",
            p.bit,
            p.model_y_zero,
            p.measured_y_zero,
            p.model_carry,
            p.measured_carry,
            p.model_x,
            p.measured_x,
            p.abs_diff_x,
            p.optimal_x
        );
    }
}
