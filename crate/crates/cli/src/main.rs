use clap::{Args, Parser, Subcommand};
use srtlab::bench::{
    append_result, compare, manifest, read_results, report, sweep_runner, ResultRecord, Runner, ScenarioConfig,
    SweepTable,
};
use srtlab::device::{serve, LoopbackProcessor};
use srtlab::fade::{grid_budget, run_grid, srt_from_map, Pipeline};
use srtlab::signal::wav::{export_corpus, export_masker};
use srtlab::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "srtlab", version, about = "Simulated speech recognition thresholds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Device descriptor or external endpoint (`tcp:HOST:PORT`, `cmd:PROGRAM ARGS`).
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    masker: Option<String>,
    /// `NH`, `N3` or an audiogram table.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    layout: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Export the synthetic corpus tokens and the masker as WAV files.
    SynthCorpus {
        #[command(flatten)]
        common: Common,
        /// Masker length in seconds.
        #[arg(long, default_value_t = 60.0)]
        masker_seconds: f64,
    },
    /// Exhaustive recognition map and its SRT.
    FadeGrid {
        #[command(flatten)]
        common: Common,
        /// Training SNRs in dB; the standard grid when absent.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        train: Option<Vec<f64>>,
        /// Test SNRs in dB; the training SNRs when absent.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        test: Option<Vec<f64>>,
    },
    /// Adaptive SRT estimate; appends to results.csv.
    DarfRun {
        #[command(flatten)]
        common: Common,
        /// Runs with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Adaptive runs over training and test sentence counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "120,240")]
        train: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "20,40")]
        test: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        reps: usize,
        /// Reference SRT in dB; simulated with the grid method when absent.
        #[arg(long, allow_hyphen_values = true)]
        reference: Option<f64>,
    },
    /// RMSE, bias and R² of per-scenario mean SRTs in two results files.
    Compare {
        pred: PathBuf,
        reference: PathBuf,
    },
    /// Summarize a finished sweep.
    Report {
        /// Sweep table; `<out>/sweep.csv` when absent.
        input: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Loopback processor speaking the device protocol, for external-device tests.
    Serve {
        /// Listen address; serves stdin/stdout when absent.
        #[arg(long)]
        listen: Option<String>,
        #[arg(long, default_value_t = 0)]
        delay: usize,
        #[arg(long, default_value_t = 1.0)]
        gain: f64,
        /// Sessions to answer before exiting; 0 for no limit.
        #[arg(long, default_value_t = 0)]
        sessions: usize,
    },
}

fn scenario(c: &Common) -> Result<(ScenarioConfig, PathBuf)> {
    let (mut s, base) = match &c.config {
        Some(p) => (
            ScenarioConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ScenarioConfig::default(), PathBuf::from(".")),
    };
    if let Some(d) = &c.device {
        s.device = d.clone();
    }
    if let Some(m) = &c.masker {
        s.masker = m.clone();
    }
    if let Some(p) = &c.profile {
        s.profile = p.clone();
    }
    if let Some(l) = &c.layout {
        s.layout = l.clone();
    }
    s.validate()?;
    Ok((s, base))
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthCorpus { common, masker_seconds } => {
            let (s, base) = scenario(&common)?;
            // the corpus and masker the simulations of this scenario use
            let pipeline = Pipeline::new(s.pipeline_config(&base)?)?;
            let dir = common.out.join("corpus");
            let manifest = export_corpus(pipeline.corpus(), &dir)?;
            println!("{}", manifest.display());
            if !pipeline.config().in_silence() {
                let path = common.out.join(format!("masker_{}.wav", s.masker));
                export_masker(pipeline.corpus(), &pipeline.config().masker, masker_seconds, &path)?;
                println!("{}", path.display());
            }
        }
        Command::FadeGrid { common, train, test } => {
            let (s, base) = scenario(&common)?;
            let runner = Runner::new(&s, &base)?;
            let (map, srt, budget) = match (&train, runner.pipeline()) {
                (Some(tr), Some(p)) => {
                    let te = test.clone().unwrap_or_else(|| tr.clone());
                    let counts = s.fade.counts;
                    let map = run_grid(p, tr, &te, counts, common.seed)?;
                    let srt = srt_from_map(&map, s.fade.target)?.srt;
                    (map, srt, grid_budget(p, tr.len(), te.len(), counts))
                }
                (Some(_), None) => return Err(Error::Config("explicit grids need a simulated scenario".into())),
                (None, p) => {
                    let (map, srt) = runner.fade(&s.fade, common.seed)?;
                    let budget = p.map_or(0.0, |p| {
                        grid_budget(p, map.train_snrs().len(), map.test_snrs().len(), s.fade.counts)
                    });
                    (map, srt, budget)
                }
            };
            create_out(&common.out)?;
            let stem = format!("{}_seed{}_fade", s.id, common.seed);
            std::fs::write(common.out.join(format!("{stem}_map.csv")), map.to_csv())?;
            std::fs::write(
                common.out.join(format!("{stem}_map.svg")),
                map.to_svg(&format!("{} grid, SRT {srt:.2} dB", s.id)),
            )?;
            let rec = ResultRecord {
                scenario_id: s.id.clone(),
                seed: common.seed,
                srt_db: srt,
                srt_pre_multicondition_db: srt,
                budget_s: budget,
                iterations: 0,
                wall_s: budget,
            };
            append_result(&common.out.join("fade_results.csv"), &rec)?;
            println!("{}", rec.to_csv_row());
        }
        Command::DarfRun { common, reps } => {
            let (s, base) = scenario(&common)?;
            let runner = Runner::new(&s, &base)?;
            create_out(&common.out)?;
            for k in 0..reps.max(1) as u64 {
                let seed = common.seed + k;
                let r = runner.darf(&s.darf, seed)?;
                let stem = format!("{}_seed{seed}", s.id);
                std::fs::write(
                    common.out.join(format!("{stem}.manifest.txt")),
                    manifest(&s, &runner.hash(), seed, &r),
                )?;
                std::fs::write(common.out.join(format!("{stem}_map.csv")), r.state.map.to_csv())?;
                std::fs::write(
                    common.out.join(format!("{stem}_map.svg")),
                    r.state.map.to_svg(&format!("{} adaptive, SRT {:.2} dB", s.id, r.srt)),
                )?;
                let rec = ResultRecord::from_result(&s.id, seed, &r);
                append_result(&common.out.join("results.csv"), &rec)?;
                println!("{}", rec.to_csv_row());
            }
        }
        Command::Sweep {
            common,
            train,
            test,
            reps,
            reference,
        } => {
            let (s, base) = scenario(&common)?;
            let runner = Runner::new(&s, &base)?;
            let reference = match reference.or(s.reference_srt_db) {
                Some(r) => r,
                None => runner.fade(&s.fade, common.seed)?.1,
            };
            let table = sweep_runner(&runner, &s.darf, &train, &test, reps, Some(reference), common.seed)?;
            create_out(&common.out)?;
            std::fs::write(common.out.join("sweep.csv"), table.to_csv())?;
            std::fs::write(common.out.join("sweep.svg"), table.to_svg())?;
            print!("{}", table.to_csv());
        }
        Command::Compare { pred, reference } => {
            let means = |p: &Path| -> Result<BTreeMap<String, f64>> {
                let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
                for r in read_results(&std::fs::read_to_string(p)?)? {
                    let e = acc.entry(r.scenario_id).or_default();
                    e.0 += r.srt_db;
                    e.1 += 1;
                }
                Ok(acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
            };
            let (a, b) = (means(&pred)?, means(&reference)?);
            let ids: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
            let p: Vec<f64> = ids.iter().map(|k| a[*k]).collect();
            let r: Vec<f64> = ids.iter().map(|k| b[*k]).collect();
            let st = compare(&p, &r)?;
            println!("n,rmse_db,bias_db,r2");
            println!(
                "{},{:.4},{:.4},{}",
                st.n,
                st.rmse,
                st.bias,
                st.r2.map_or("NA".to_string(), |x| format!("{x:.4}"))
            );
        }
        Command::Report { input, out } => {
            let path = input.unwrap_or_else(|| out.join("sweep.csv"));
            let table = SweepTable::from_csv(&std::fs::read_to_string(&path)?)?;
            print!("{}", report(&table)?);
        }
        Command::Serve {
            listen,
            delay,
            gain,
            sessions,
        } => {
            let proc = LoopbackProcessor {
                delay,
                gain,
                ..Default::default()
            };
            match listen {
                None => serve(std::io::stdin().lock(), std::io::stdout().lock(), &proc)?,
                Some(addr) => {
                    let listener = std::net::TcpListener::bind(&addr)?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    for (n, sock) in listener.incoming().enumerate() {
                        let sock = sock?;
                        if let Err(e) = serve(sock.try_clone()?, sock, &proc) {
                            eprintln!("session failed: {e}");
                        }
                        if sessions > 0 && n + 1 >= sessions {
                            break;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
