//! `notary`: operator front end for sealing, serving and verifying sensor logs.

mod commands;
mod keys;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use notary_core::model::SealMode;

#[derive(Parser)]
#[command(name = "notary", version, about = "Tamper-evident sealing and verification of sensor logs")]
struct Cli {
    /// Directory holding key files, the verifier registry and local config.
    #[arg(long, env = "NOTARY_KEYS", default_value = "notary-keys", global = true)]
    keys: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create key pairs for every party plus the verifier registry.
    Setup(SetupArgs),
    /// Generate a synthetic connectivity event file.
    Gen(GenArgs),
    /// Encrypt an event file for the sealer (controller side).
    Feed(FeedArgs),
    /// Publish data-capture rules to the sealer and produce broadcasts.
    Notify(NotifyArgs),
    /// Acknowledge broadcast rules on behalf of a device.
    Ack(AckArgs),
    /// Seal an encrypted feed (or a plain event file) into a chunk store.
    Seal(SealArgs),
    /// Run the retrieval service.
    Serve(ServeArgs),
    /// Fetch logs from a retrieval service and report what came back.
    Fetch(FetchArgs),
    /// Auditor verification over a time range.
    Audit(AuditArgs),
    /// User verification of one device over a time range.
    VerifyUser(VerifyUserArgs),
    /// Inspect or (for testing) corrupt a chunk store.
    Store(StoreArgs),
    /// Measure storage overhead and verification cost of a sealed store.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SetupArgs {
    #[arg(long, default_value_t = 10)]
    pub devices: u32,
    /// Replace existing key material.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1)]
    pub days: u32,
    #[arg(long, default_value_t = 490)]
    pub sensors: u32,
    #[arg(long, default_value_t = 5000)]
    pub devices: u32,
    #[arg(long, default_value_t = 600_000)]
    pub events_per_day: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// First second of the workload (Unix time).
    #[arg(long, default_value_t = notary_core::workload::DEFAULT_START)]
    pub start: u64,
    #[arg(long, default_value_t = 100)]
    pub params_len: usize,
    #[arg(long, default_value_t = 30)]
    pub buildings: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FeedArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the feed key and nonces; random when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum NoticeModel {
    Nom,
    Nam,
}

#[derive(Args)]
pub struct NotifyArgs {
    #[arg(long, value_enum)]
    pub model: NoticeModel,
    /// Rule file with the rules to publish.
    #[arg(long)]
    pub rule: PathBuf,
    /// Broadcast file the rules are appended to.
    #[arg(long, default_value = "broadcast.txt")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AckArgs {
    /// Device index as created by `setup`.
    #[arg(long)]
    pub device: u32,
    #[arg(long, default_value = "broadcast.txt")]
    pub broadcast: PathBuf,
    /// Only acknowledge this rule; all broadcast rules otherwise.
    #[arg(long)]
    pub rule_id: Option<u64>,
    #[arg(long, default_value = "acks.txt")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Entire,
    Mixed,
    PerSensor,
    PerUser,
}

impl From<ModeArg> for SealMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Entire => SealMode::Entire,
            ModeArg::Mixed => SealMode::Mixed,
            ModeArg::PerSensor => SealMode::PerSensor,
            ModeArg::PerUser => SealMode::PerUser,
        }
    }
}

#[derive(Args)]
pub struct SealArgs {
    /// Encrypted feed produced by `notary feed`.
    #[arg(long, conflicts_with = "events", required_unless_present = "events")]
    pub feed: Option<PathBuf>,
    /// Plain event file, bypassing the controller.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_enum, default_value = "mixed")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 5_000_000)]
    pub chunk_bytes: u64,
    #[arg(long, default_value_t = 1800)]
    pub chunk_age: u64,
    #[arg(long, default_value_t = 490)]
    pub buckets: u32,
    /// Acknowledgment file; enables notice-and-acknowledge gating.
    #[arg(long)]
    pub acks: Option<PathBuf>,
    /// Seed for the random strings; random when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    #[arg(long)]
    pub store: PathBuf,
    /// Exit after this many sessions.
    #[arg(long)]
    pub sessions: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Auditor,
    User,
}

#[derive(Args, Clone)]
pub struct RangeArgs {
    /// Start of the range (Unix seconds); the beginning of time when absent.
    #[arg(long)]
    pub from: Option<u64>,
    /// End of the range (Unix seconds, inclusive); the end of time when absent.
    #[arg(long)]
    pub to: Option<u64>,
}

#[derive(Args)]
pub struct FetchArgs {
    #[arg(long)]
    pub server: String,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    /// Device index for the user role.
    #[arg(long)]
    pub device: Option<u32>,
    /// Verifier id; defaults to the one `setup` registered for the role.
    #[arg(long)]
    pub v_id: Option<String>,
    #[command(flatten)]
    pub range: RangeArgs,
}

#[derive(Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub range: RangeArgs,
    /// Read the store directly.
    #[arg(long, conflicts_with = "server", required_unless_present = "server")]
    pub store: Option<PathBuf>,
    /// Retrieve through the retrieval service.
    #[arg(long)]
    pub server: Option<String>,
}

#[derive(Args)]
pub struct VerifyUserArgs {
    /// Device index as created by `setup`.
    #[arg(long)]
    pub device: u32,
    #[command(flatten)]
    pub range: RangeArgs,
    #[arg(long, conflicts_with = "server", required_unless_present = "server")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub server: Option<String>,
}

#[derive(Args)]
pub struct StoreArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[command(subcommand)]
    pub action: StoreAction,
}

#[derive(Subcommand)]
pub enum StoreAction {
    /// List chunks.
    Ls,
    /// Show one chunk.
    Cat {
        /// Stream tag; omit for single-stream stores.
        #[arg(long)]
        stream: Option<String>,
        #[arg(long)]
        index: u64,
        /// Include every record instead of a summary.
        #[arg(long)]
        records: bool,
    },
    /// Corrupt a chunk. Only for exercising verification.
    Tamper(TamperArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TamperKind {
    DeleteRecord,
    SwapRecords,
    Truncate,
    FlipDigest,
    FlipSignature,
    FlipByte,
    DeleteChunk,
}

#[derive(Args)]
pub struct TamperArgs {
    /// Required acknowledgment that the store will be damaged.
    #[arg(long)]
    pub allow_tamper: bool,
    #[arg(long, value_enum)]
    pub kind: TamperKind,
    #[arg(long)]
    pub stream: Option<String>,
    #[arg(long)]
    pub index: u64,
    /// Record, digest or byte position the edit applies to.
    #[arg(long, default_value_t = 0)]
    pub at: usize,
    /// Recompute chain digests after record edits.
    #[arg(long)]
    pub rechain: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Non-optimized store of the same workload, for the size comparison.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Largest chunks to re-seal in memory for seal timing.
    #[arg(long, default_value_t = 3)]
    pub reseal: usize,
    /// Device index for a user-verification measurement.
    #[arg(long)]
    pub device: Option<u32>,
    #[command(flatten)]
    pub range: RangeArgs,
}

/// Outcome of a command: a machine-readable report for stdout, a short
/// summary for stderr and the exit status.
pub struct Report {
    pub json: serde_json::Value,
    pub summary: String,
    pub code: u8,
}

impl Report {
    pub fn ok(json: serde_json::Value, summary: impl Into<String>) -> Self {
        Self { json, summary: summary.into(), code: 0 }
    }

    pub fn verdict(passed: bool, json: serde_json::Value, summary: impl Into<String>) -> Self {
        Self { json, summary: summary.into(), code: if passed { 0 } else { 2 } }
    }
}

pub type CmdResult = Result<Report, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let keys = keys::KeyDir::new(cli.keys);
    let result = match cli.command {
        Command::Setup(a) => commands::setup::run(&keys, &a),
        Command::Gen(a) => commands::data::gen(&a),
        Command::Feed(a) => commands::data::feed(&keys, &a),
        Command::Notify(a) => commands::policy::notify(&keys, &a),
        Command::Ack(a) => commands::policy::ack(&keys, &a),
        Command::Seal(a) => commands::data::seal(&keys, &a),
        Command::Serve(a) => commands::remote::serve(&keys, &a),
        Command::Fetch(a) => commands::remote::fetch(&keys, &a),
        Command::Audit(a) => commands::remote::audit(&keys, &a),
        Command::VerifyUser(a) => commands::remote::verify_user_cmd(&keys, &a),
        Command::Store(a) => commands::store::run(&keys, &a),
        Command::Bench(a) => commands::bench::run(&keys, &a),
    };
    match result {
        Ok(r) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&r.json).expect("json values serialize"));
            let _ = writeln!(std::io::stderr(), "{}", r.summary);
            ExitCode::from(r.code)
        }
        Err(e) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::json!({ "error": e }));
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(1)
        }
    }
}
