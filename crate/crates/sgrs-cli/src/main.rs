//! Batch front end: scenario simulation, property verification, figure
//! data emission, subgroup-key counting and the encoded cost table.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgrs::analytic;
use sgrs::group::{count_keys_bruteforce, count_keys_closed_form, count_z_as_printed};
use sgrs::id::{GroupId, MemberId};
use sgrs::primitives::SeededRng;
use sgrs::protocol::{bootstrap_group_standalone, MutationSet};
use sgrs::scenario::{self, all_checks, churn_scenario, Scenario, ScenarioError};
use sgrs::simnet::SizeModel;

const EXIT_PARSE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_REFUSED: u8 = 4;
const EXIT_PROPERTY: u8 = 5;

#[derive(Parser)]
#[command(
    name = "sgrs",
    version,
    about = "Group key agreement simulator: membership protocols, secrecy checks, cost model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonRunArgs {
    /// Output directory for report and transcript files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Abstract size model, e.g. "int=4,key=32".
    #[arg(long)]
    sizes: Option<String>,
    /// Disable one rekeying countermeasure (testing builds only):
    /// join-key-mix, leave-nonce-rehash, merge-sponsor-rehash,
    /// partition-function-g.
    #[cfg(debug_assertions)]
    #[arg(long)]
    mutation: Option<String>,
}

impl CommonRunArgs {
    fn mutations(&self) -> Result<MutationSet, String> {
        #[cfg(debug_assertions)]
        if let Some(name) = &self.mutation {
            return MutationSet::disabling(name)
                .ok_or_else(|| format!("unknown mutation {name:?}"));
        }
        Ok(MutationSet::default())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its report and transcript.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Run a scenario (or the seeded churn suite) and check the secrecy
    /// properties; nonzero exit on any failure.
    Verify {
        /// Scenario file; omit when using --churn-seeds.
        scenario: Option<PathBuf>,
        /// Comma-separated property list (default: all four).
        #[arg(long)]
        properties: Option<String>,
        /// Run the built-in churn suite over this inclusive seed range,
        /// e.g. "1-50".
        #[arg(long)]
        churn_seeds: Option<String>,
        /// Initial group size for the churn suite.
        #[arg(long, default_value_t = 8)]
        churn_initial: u32,
        /// Events per churn scenario.
        #[arg(long, default_value_t = 200)]
        churn_events: usize,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Emit the data series behind one of the published figures (10-13).
    Figures {
        figure: u8,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Closed-form and brute-force subgroup key counts for a group of N.
    EnumerateKeys { n: usize },
    /// Render the encoded cost table with as-printed annotations.
    Table1,
}

fn parse_sizes(arg: &Option<String>) -> Result<SizeModel, String> {
    let mut sizes = SizeModel::default();
    if let Some(text) = arg {
        for part in text.split(',') {
            match part.trim().split_once('=') {
                Some(("int", v)) => {
                    sizes.int_bytes = v.parse().map_err(|_| format!("bad int size {v:?}"))?
                }
                Some(("key", v)) => {
                    sizes.key_bytes = v.parse().map_err(|_| format!("bad key size {v:?}"))?
                }
                _ => return Err(format!("unrecognized size component {part:?}")),
            }
        }
    }
    Ok(sizes)
}

fn load_scenario(path: &Path, sizes: &Option<String>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    let mut s = Scenario::from_toml(&text)?;
    if let Some(sz) = sizes {
        let parsed = parse_sizes(&Some(sz.clone())).map_err(ScenarioError::Parse)?;
        s.accounting = Some(scenario::AccountingSpec {
            int_bytes: parsed.int_bytes,
            key_bytes: parsed.key_bytes,
        });
    }
    Ok(s)
}

fn scenario_exit(err: &ScenarioError) -> u8 {
    match err {
        ScenarioError::Parse(_) | ScenarioError::Io(_) => EXIT_PARSE,
        ScenarioError::Validation(_, _) => EXIT_VALIDATION,
        ScenarioError::Refused(_, _) | ScenarioError::InvariantViolated(_, _) => EXIT_REFUSED,
    }
}

fn write_outputs(out: &Option<PathBuf>, report: &str, transcript: &str) -> Result<(), String> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("report.txt"), report).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("transcript.txt"), transcript).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_simulate(path: &Path, common: &CommonRunArgs) -> ExitCode {
    let muts = match common.mutations() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_PARSE);
        }
    };
    let s = match load_scenario(path, &common.sizes) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(scenario_exit(&e));
        }
    };
    match scenario::execute(&s, muts) {
        Ok(outcome) => {
            let report = scenario::render_report(&outcome);
            let transcript = outcome.runner.net.export_transcript();
            if let Err(e) = write_outputs(&common.out, &report, &transcript) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_PARSE);
            }
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(scenario_exit(&e))
        }
    }
}

fn selected_checks(properties: &Option<String>) -> Result<Vec<String>, String> {
    match properties {
        None => Ok(all_checks()),
        Some(list) => {
            let mut out = Vec::new();
            for name in list.split(',') {
                let name = name.trim().to_string();
                if sgrs::adversary::Property::parse(&name).is_none() {
                    return Err(format!("unknown property {name:?}"));
                }
                out.push(name);
            }
            Ok(out)
        }
    }
}

fn cmd_verify(
    path: Option<&Path>,
    properties: &Option<String>,
    churn_seeds: &Option<String>,
    churn_initial: u32,
    churn_events: usize,
    common: &CommonRunArgs,
) -> ExitCode {
    let muts = match common.mutations() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_PARSE);
        }
    };
    let checks = match selected_checks(properties) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_PARSE);
        }
    };

    let scenarios: Vec<Scenario> = if let Some(range) = churn_seeds {
        let (lo, hi) = match range.split_once('-') {
            Some((a, b)) => match (a.parse::<u64>(), b.parse::<u64>()) {
                (Ok(a), Ok(b)) if a <= b => (a, b),
                _ => {
                    eprintln!("error: bad seed range {range:?}");
                    return ExitCode::from(EXIT_PARSE);
                }
            },
            None => match range.parse::<u64>() {
                Ok(v) => (v, v),
                Err(_) => {
                    eprintln!("error: bad seed range {range:?}");
                    return ExitCode::from(EXIT_PARSE);
                }
            },
        };
        (lo..=hi)
            .map(|seed| {
                let mut s = churn_scenario(seed, churn_initial, churn_events);
                s.checks = checks.clone();
                s
            })
            .collect()
    } else {
        let path = match path {
            Some(p) => p,
            None => {
                eprintln!("error: provide a scenario file or --churn-seeds");
                return ExitCode::from(EXIT_PARSE);
            }
        };
        match load_scenario(path, &common.sizes) {
            Ok(mut s) => {
                s.checks = checks.clone();
                vec![s]
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(scenario_exit(&e));
            }
        }
    };

    let mut all_hold = true;
    let mut witness_dump = String::new();
    for s in &scenarios {
        match scenario::execute(s, muts) {
            Ok(outcome) => {
                let mut line = format!("seed {:>4}: ", s.seed);
                for rep in &outcome.property_reports {
                    let tag = format!(
                        "{}{}={}",
                        rep.property,
                        if rep.variant.is_empty() {
                            String::new()
                        } else {
                            format!("[{}]", rep.variant)
                        },
                        if rep.holds() { "PASS" } else { "FAIL" }
                    );
                    line.push_str(&tag);
                    line.push(' ');
                    if !rep.holds() {
                        all_hold = false;
                        for v in &rep.violations {
                            witness_dump.push_str(&format!("seed {}: {v}", s.seed));
                        }
                    }
                }
                println!("{line}");
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(scenario_exit(&e));
            }
        }
    }
    if !witness_dump.is_empty() {
        if let Some(dir) = &common.out {
            if std::fs::create_dir_all(dir).is_ok() {
                let _ = std::fs::write(dir.join("witnesses.txt"), &witness_dump);
            }
        } else {
            print!("{witness_dump}");
        }
    }
    if all_hold {
        println!("verdict: all properties hold");
        ExitCode::SUCCESS
    } else {
        println!("verdict: property failure (witness chains recorded)");
        ExitCode::from(EXIT_PROPERTY)
    }
}

fn cmd_figures(figure: u8, out: &Path, sizes_arg: &Option<String>) -> ExitCode {
    let sizes = match parse_sizes(sizes_arg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_PARSE);
        }
    };
    match analytic::figure_data(figure, &sizes) {
        Ok(data) => {
            let csv = analytic::figure_csv(&data);
            let meta = analytic::figure_metadata(&data, &sizes);
            if std::fs::create_dir_all(out).is_err() {
                eprintln!("error: cannot create {}", out.display());
                return ExitCode::from(EXIT_PARSE);
            }
            let csv_path = out.join(format!("figure{figure}.csv"));
            let meta_path = out.join(format!("figure{figure}.meta.txt"));
            if std::fs::write(&csv_path, &csv).is_err()
                || std::fs::write(&meta_path, &meta).is_err()
            {
                eprintln!("error: cannot write figure files");
                return ExitCode::from(EXIT_PARSE);
            }
            println!(
                "wrote {} ({} series x {} points) and {}",
                csv_path.display(),
                data.series.len(),
                data.xs.len(),
                meta_path.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_PARSE)
        }
    }
}

fn cmd_enumerate_keys(n: usize) -> ExitCode {
    match count_keys_closed_form(n) {
        Ok((w, z)) => {
            println!("closed form: W = {w}, Z = {z}");
            let as_printed = count_z_as_printed(n).expect("same bounds");
            if as_printed != z {
                println!(
                    "note: odd-branch Z as printed = {as_printed} (trailing +1 \
                     contradicts the published N = 7 example; pinned to 2^(N-1) - 1)"
                );
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    if n <= sgrs::group::BRUTE_FORCE_MAX {
        let mut rng = SeededRng::new(7);
        let g = bootstrap_group_standalone(
            GroupId(0),
            (1..=n as u32).map(MemberId).collect(),
            &mut rng,
        );
        let census = count_keys_bruteforce(&g).expect("size checked");
        let z_values: BTreeSet<u64> = census.z_per_member.values().copied().collect();
        let (w, z) = count_keys_closed_form(n).expect("checked");
        println!(
            "brute force: W_sem = {} (subsets derivable by >= 2 members), \
             W_reachable = {}, Z per member = {:?}",
            census.w_semantic, census.w_reachable, z_values
        );
        let w_delta = census.w_semantic as i128 - w as i128;
        let z_delta = z_values
            .iter()
            .map(|zv| *zv as i128 - z as i128)
            .next()
            .unwrap_or(0);
        println!("delta: W {w_delta:+}, Z {z_delta:+}");
        if w_delta != 0 {
            println!(
                "note: the printed even-N W branch counts single-holder private \
                 keys; the semantic count excludes them"
            );
        }
    } else {
        println!(
            "brute force: skipped (N > {})",
            sgrs::group::BRUTE_FORCE_MAX
        );
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { scenario, common } => cmd_simulate(scenario, common),
        Command::Verify {
            scenario,
            properties,
            churn_seeds,
            churn_initial,
            churn_events,
            common,
        } => cmd_verify(
            scenario.as_deref(),
            properties,
            churn_seeds,
            *churn_initial,
            *churn_events,
            common,
        ),
        Command::Figures { figure, out, sizes } => cmd_figures(*figure, out, sizes),
        Command::EnumerateKeys { n } => cmd_enumerate_keys(*n),
        Command::Table1 => {
            print!("{}", analytic::render_table());
            ExitCode::SUCCESS
        }
    }
}
