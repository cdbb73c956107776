use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use preplay_core::actors::IssuerLogRecord;
use preplay_core::analyzer::{classify, AnalysisReport};
use preplay_core::attack::{run_campaign, CampaignOutput, CampaignReport};
use preplay_core::countermeasures::AuditFinding;
use preplay_core::fixtures;
use preplay_core::scenario::ScenarioConfig;
use serde::Serialize;

mod unlog;

#[derive(Parser)]
#[command(name = "preplay", version, about = "EMV pre-play attack laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Run the campaign described by a scenario file.
    Run {
        config: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Keep transcripts for this many attempts.
        #[arg(long, default_value_t = 100)]
        transcripts: usize,
    },
    /// Classify the UN source(s) behind a date,time,un CSV log.
    Analyze {
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Regenerate the committed test vectors.
    GenFixtures {
        #[arg(long, default_value = "fixtures")]
        out_dir: PathBuf,
        /// Compare with the files in out-dir instead of writing.
        #[arg(long)]
        check: bool,
    },
}

/// Input the user can fix; exit status 2.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            format,
            transcripts,
        } => cmd_run(&config, seed, &out_dir, format, transcripts),
        Command::Analyze { csv, format } => cmd_analyze(&csv, format),
        Command::GenFixtures { out_dir, check } => cmd_gen_fixtures(&out_dir, check),
    };
    match r {
        Ok(code) => code,
        Err(e) if e.is::<InputError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Parses and validates a scenario; errors name the offending field.
fn load_scenario(text: &str) -> Result<ScenarioConfig, String> {
    let de = toml::Deserializer::parse(text).map_err(|e| e.to_string())?;
    let sc: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            inner.to_string()
        } else {
            format!("field `{path}`: {inner}")
        }
    })?;
    sc.validate().map_err(|e| format!("field `{}`: {}", e.field, e.message))?;
    Ok(sc)
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    // Temporary files are created private; outputs are ordinary files.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(dir.join(name)).with_context(|| format!("writing {name}"))?;
    Ok(())
}

#[derive(Serialize)]
struct RunReport<'a> {
    #[serde(flatten)]
    campaign: &'a CampaignReport,
    findings: &'a [AuditFinding],
}

fn transcripts_log(out: &CampaignOutput) -> String {
    let mut s = String::new();
    for (label, t) in &out.transcripts {
        s.push_str(&format!("# {label}\n{t}"));
    }
    s
}

fn issuer_csv(log: &[IssuerLogRecord]) -> String {
    let mut s = String::from(IssuerLogRecord::CSV_HEADER);
    s.push('\n');
    for r in log {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

fn cmd_run(config: &Path, seed: Option<u64>, out_dir: &Path, format: Format, limit: usize) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut sc = load_scenario(&text).map_err(|m| input_error(format!("{}: {m}", config.display())))?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let out = run_campaign(&sc, limit);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let report = RunReport {
        campaign: &out.report,
        findings: &out.audit_findings,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_atomic(out_dir, "report.json", json.as_bytes())?;
    write_atomic(out_dir, "transcripts.log", transcripts_log(&out).as_bytes())?;
    write_atomic(out_dir, "issuer_log.csv", issuer_csv(&out.issuer_log).as_bytes())?;
    match format {
        Format::Json => print!("{json}"),
        Format::Table => print!("{}", campaign_table(&out.report)),
    }
    Ok(ExitCode::SUCCESS)
}

fn campaign_table(r: &CampaignReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("scenario".into(), r.scenario.clone()),
        ("seed".into(), r.seed.to_string()),
        ("generator".into(), r.generator.clone()),
        ("attempts".into(), r.attempts.to_string()),
        ("dispenses".into(), r.dispenses.to_string()),
        ("dispense rate".into(), format!("{:.4}", r.dispense_rate)),
        ("amount stolen".into(), r.amount_stolen.to_string()),
        ("feigned failures".into(), r.feigned_failures.to_string()),
        ("online messages".into(), r.online_messages.to_string()),
    ];
    for (k, v) in &r.declines_by_reason {
        rows.push((format!("declined {k}"), v.to_string()));
    }
    for (k, v) in &r.fails_by_reason {
        rows.push((format!("failed {k}"), v.to_string()));
    }
    if let Some(a) = &r.audit {
        rows.push((
            "audit flagged".into(),
            format!("{}/{} pre-played, {} genuine", a.preplay_flagged, a.preplay_approvals, a.genuine_flagged),
        ));
    }
    rows.push((
        "2CM.085 conformance".into(),
        if r.conformance.pass { "PASS" } else { "FAIL" }.into(),
    ));
    if let Some(e) = &r.experiment {
        rows.push(("experiment".into(), format!("{:?}", e.verdict)));
    }
    render(&rows)
}

fn render(rows: &[(String, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
}

#[derive(Serialize)]
struct SourceReport {
    source_id: String,
    #[serde(flatten)]
    report: AnalysisReport,
}

fn analysis_table(s: &SourceReport) -> String {
    let r = &s.report;
    let mut rows = vec![
        ("source".to_string(), if s.source_id.is_empty() { "-".into() } else { s.source_id.clone() }),
        ("samples".into(), r.sample_count.to_string()),
        ("classification".into(), r.classification.to_string()),
        ("stuck zero mask".into(), format!("0x{:08X}", r.stuck_bits.zero_mask)),
        ("stuck one mask".into(), format!("0x{:08X}", r.stuck_bits.one_mask)),
        ("stuck p-value".into(), format!("{:e}", r.stuck_bits.p_value)),
        ("characteristic C".into(), format!("{} (p={:e})", r.char_c.present, r.char_c.p_value)),
    ];
    if r.stuck_bits.low_confidence {
        rows.push(("note".into(), "LOW_CONFIDENCE: fewer than 10 samples".into()));
    }
    match &r.counter_fit {
        Some(c) => rows.push((
            "counter".into(),
            format!(
                "{} prefix bits 0x{:X}, modulus {}, {:.1} ticks/s, residual {:.3}",
                c.prefix_bits, c.prefix_value, c.modulus, c.ticks_per_second, c.residual
            ),
        )),
        None => rows.push(("counter".into(), "no fit".into())),
    }
    match &r.lcg_fit {
        Some(l) => rows.push(("lcg".into(), format!("{} seed {}", l.family, l.seed))),
        None => rows.push(("lcg".into(), "no fit".into())),
    }
    render(&rows)
}

fn cmd_analyze(csv: &Path, format: Format) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let obs = unlog::parse(&text).map_err(|e| input_error(format!("{}: {e}", csv.display())))?;
    let reports: Vec<SourceReport> = unlog::by_source(obs)
        .into_iter()
        .map(|(source_id, seq)| {
            let report = classify(&seq).expect("sources are never empty");
            SourceReport { source_id, report }
        })
        .collect();
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&reports)?),
        Format::Table => {
            let tables: Vec<String> = reports.iter().map(analysis_table).collect();
            print!("{}", tables.join("\n"));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_fixtures(out_dir: &Path, check: bool) -> anyhow::Result<ExitCode> {
    let mut drift = false;
    if !check {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    }
    for (name, text) in fixtures::all() {
        if check {
            let path = out_dir.join(name);
            let old = fs::read_to_string(&path).unwrap_or_default();
            if old != text {
                println!("DIFF {}", path.display());
                drift = true;
            } else {
                println!("same {}", path.display());
            }
        } else {
            write_atomic(out_dir, name, text.as_bytes())?;
            println!("wrote {}", out_dir.join(name).display());
        }
    }
    Ok(if drift { ExitCode::from(1) } else { ExitCode::SUCCESS })
}
