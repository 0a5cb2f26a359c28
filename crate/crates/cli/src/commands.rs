use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use serde_json::json;

use bitextkit::dedup::{KeyFn, NearDupParams, ReferenceSet};
use bitextkit::ensemble::{read_paragraphs, Ensemble, EnsembleConfig, EnsembleError, RerankOutput};
use bitextkit::ingest::{load_manifest, DatasetManifestEntry};
use bitextkit::ingest::{read_all, read_pairs, Format, PairReader, PairWriter};
use bitextkit::metrics::{chrf_corpus, ChrfParams};
use bitextkit::model::SentencePair;
use bitextkit::pipeline::{validate_order, write_audit, Pipeline};
use bitextkit::scorer::conformance::{load_loopback_fixture, run_conformance, ConformanceOptions};
use bitextkit::scorer::{BackendHandle, StubKind, StubSpec, Transport, ADAPTER_DIR_ENV};
use bitextkit::synth::{read_candidate_records, select_corpus, SelectionParams, SynthError};

use crate::shared::{adapter, data, open_read, resolve_format, write_file, CliError, RawConfig};
use crate::{ConfigArgs, InputArgs};

fn origin_of(paths: &[PathBuf]) -> String {
    paths
        .first()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn output_format(explicit: Option<&str>, paths: &[PathBuf], fallback: Format) -> Result<Format, CliError> {
    match explicit {
        Some(_) => resolve_format(explicit, paths, "--out"),
        None if paths.len() == 1 && Format::from_extension(&paths[0]).is_none() && fallback.path_count() == 1 => {
            Ok(fallback)
        }
        None => resolve_format(None, paths, "--out"),
    }
}

fn write_output(pairs: &[SentencePair], format: Format, paths: &[PathBuf]) -> Result<u64, CliError> {
    let mut writer = PairWriter::create(format, paths)?;
    for p in pairs {
        writer.write(p)?;
    }
    Ok(writer.finish()?)
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(data)?;
    writeln!(out).map_err(data)
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    input: InputArgs,
    /// Output file; two (source, target) for moses-pair.
    #[arg(long = "out", value_name = "PATH", num_args = 1..=2, required = true)]
    out: Vec<PathBuf>,
    /// Output format; defaults to the extension, else the input format.
    #[arg(long, value_name = "FORMAT")]
    out_format: Option<String>,
    /// Write the funnel report as JSON.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Write the funnel report as CSV (stage,in,removed,modified,out).
    #[arg(long, value_name = "PATH")]
    report_csv: Option<PathBuf>,
    /// Write every removed pair with its stage and reason as JSONL.
    #[arg(long, value_name = "PATH")]
    audit: Option<PathBuf>,
    /// Checkpoint file; defaults to the first output path plus `.checkpoint`.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint instead of reading input.
    #[arg(long, value_name = "PATH", conflicts_with = "input")]
    resume: Option<PathBuf>,
    /// Zero the stage wall times in the report, for reproducible files.
    #[arg(long)]
    no_timing: bool,
}

pub fn filter(args: FilterArgs) -> Result<(), CliError> {
    let raw = RawConfig::load(&args.config)?;
    let mut config = raw.pipeline()?;
    if args.audit.is_some() {
        config.audit_removed = true;
    }
    for w in validate_order(&config) {
        log::warn!("{w}");
    }
    let checkpoint = args.checkpoint.clone().unwrap_or_else(|| {
        let mut p = args.out[0].as_os_str().to_owned();
        p.push(".checkpoint");
        PathBuf::from(p)
    });
    let pipeline = Pipeline::new(config)?.checkpoint_to(checkpoint);
    let (output, in_format) = match &args.resume {
        Some(path) => (pipeline.resume(path)?, Format::Jsonl),
        None => {
            let format = args.input.resolve()?;
            let (pairs, skipped) = read_all(format, &args.input.input, &origin_of(&args.input.input))?;
            if skipped > 0 {
                log::warn!("skipped {skipped} malformed rows");
            }
            (pipeline.run(pairs)?, format)
        }
    };
    let out_format = output_format(args.out_format.as_deref(), &args.out, in_format)?;
    write_output(&output.pairs, out_format, &args.out)?;
    if let Some(path) = &args.report {
        write_file(path, &output.report.to_json(!args.no_timing))?;
    }
    if let Some(path) = &args.report_csv {
        write_file(path, &output.report.to_csv())?;
    }
    if let Some(path) = &args.audit {
        let file = std::fs::File::create(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        write_audit(&output.audit, io::BufWriter::new(file)).map_err(data)?;
    }
    eprintln!("{}", output.report);
    Ok(())
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Default)]
struct LengthStats {
    min: Option<usize>,
    max: usize,
    total: u64,
    empty: u64,
}

impl LengthStats {
    fn add(&mut self, text: &str) {
        let n = text.chars().count();
        self.min = Some(self.min.map_or(n, |m| m.min(n)));
        self.max = self.max.max(n);
        self.total += n as u64;
        self.empty += u64::from(n == 0);
    }

    fn to_json(&self, count: u64) -> serde_json::Value {
        let mean = if count == 0 { 0.0 } else { self.total as f64 / count as f64 };
        json!({ "min": self.min.unwrap_or(0), "max": self.max, "mean": mean, "empty": self.empty })
    }
}

pub fn stats(args: StatsArgs) -> Result<(), CliError> {
    let format = args.input.resolve()?;
    let mut reader = PairReader::open(format, &args.input.input, origin_of(&args.input.input))?;
    let (mut src, mut tgt) = (LengthStats::default(), LengthStats::default());
    let mut origins: BTreeMap<String, u64> = BTreeMap::new();
    let mut scored: BTreeMap<String, u64> = BTreeMap::new();
    let mut pairs = 0u64;
    for item in reader.by_ref() {
        let pair = match item {
            Ok(p) => p,
            Err(e) if e.is_row_error() => {
                log::warn!("skipping row: {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        pairs += 1;
        src.add(&pair.src);
        tgt.add(&pair.tgt);
        *origins.entry(pair.origin).or_default() += 1;
        for kind in pair.scores.into_keys() {
            *scored.entry(kind).or_default() += 1;
        }
    }
    print_json(&json!({
        "pairs": pairs,
        "skipped": reader.skipped(),
        "origins": origins,
        "src_chars": src.to_json(pairs),
        "tgt_chars": tgt.to_json(pairs),
        "scored": scored,
    }))
}

#[derive(Debug, Args)]
pub struct DedupBuildArgs {
    /// Corpus to add; repeat `--in` per file (two per moses-pair corpus).
    #[arg(long = "in", value_name = "PATH")]
    input: Vec<PathBuf>,
    /// Format of the `--in` files; inferred when omitted.
    #[arg(long, value_name = "FORMAT")]
    format: Option<String>,
    /// Add every dataset listed in a manifest.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Key: exact or near.
    #[arg(long, value_name = "KEY", default_value = "exact")]
    key: String,
    /// Near key: keep digits.
    #[arg(long)]
    keep_numeric: bool,
    /// Near key: keep capitalized mid-sentence words.
    #[arg(long)]
    keep_capitalized: bool,
    /// Near key: keep letter case.
    #[arg(long)]
    keep_case: bool,
    /// Reference-set file to write.
    #[arg(long, value_name = "PATH", required = true)]
    out: PathBuf,
}

pub fn dedup_build(args: DedupBuildArgs) -> Result<(), CliError> {
    let key_fn = match args.key.as_str() {
        "exact" => KeyFn::Exact,
        "near" => KeyFn::near(NearDupParams {
            strip_numeric: !args.keep_numeric,
            strip_mid_sentence_capitalized: !args.keep_capitalized,
            lowercase: !args.keep_case,
        })
        .map_err(|e| CliError::Usage(e.to_string()))?,
        other => return Err(CliError::Usage(format!("--key must be exact or near, got `{other}`"))),
    };
    let mut readers = Vec::new();
    if let Some(m) = &args.manifest {
        for entry in load_manifest(m).map_err(data)? {
            readers.push(read_pairs(&entry)?);
        }
    }
    if !args.input.is_empty() {
        let format = resolve_format(args.format.as_deref(), &args.input, "--in")?;
        readers.push(PairReader::open(format, &args.input, origin_of(&args.input))?);
    }
    if readers.is_empty() {
        return Err(CliError::Usage("give --in or --manifest".into()));
    }
    let mut keys = Vec::new();
    for reader in readers {
        for item in reader {
            match item {
                Ok(pair) => keys.push(key_fn.key(&pair)),
                Err(e) if e.is_row_error() => log::warn!("skipping row: {e}"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    let pairs = keys.len();
    let set = ReferenceSet::from_keys(keys, key_fn);
    set.save(&args.out).map_err(data)?;
    print_json(&json!({ "pairs": pairs, "keys": set.len() }))
}

#[derive(Debug, Args)]
pub struct SelectSynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Candidate lists as JSONL: {"source": ..., "candidates": [...]}.
    #[arg(long = "in", value_name = "PATH", required = true)]
    input: PathBuf,
    /// Selected pairs; two (source, target) for moses-pair.
    #[arg(long = "out", value_name = "PATH", num_args = 1..=2, required = true)]
    out: Vec<PathBuf>,
    /// Output format; defaults to the extension.
    #[arg(long, value_name = "FORMAT")]
    out_format: Option<String>,
    /// Write selection statistics here instead of stdout.
    #[arg(long, value_name = "PATH")]
    stats: Option<PathBuf>,
}

pub fn select_synth(args: SelectSynthArgs) -> Result<(), CliError> {
    let raw = RawConfig::load(&args.config)?;
    let mut section = raw.section("synth").unwrap_or_default();
    let scorer = match section.remove("scorer") {
        Some(toml::Value::String(id)) => raw.attach(&id)?,
        Some(other) => return Err(data(format!("synth.scorer must be a backend id, got {other}"))),
        None => BackendHandle::stub(StubSpec { kind: StubKind::Similarity, seed: 0 }),
    };
    let params: SelectionParams =
        toml::Value::Table(section).try_into().map_err(|e: toml::de::Error| data(format!("synth: {}", e.message())))?;
    let format = output_format(args.out_format.as_deref(), &args.out, Format::Jsonl)?;
    let records: Vec<_> =
        read_candidate_records(open_read(&args.input)?).collect::<Result<_, _>>().map_err(synth_err)?;
    let (sources, lists): (Vec<String>, Vec<Vec<String>>) =
        records.into_iter().map(|r| (r.source, r.candidates)).unzip();
    let (pairs, stats) = select_corpus(sources, lists, &params, &scorer).map_err(synth_err)?;
    write_output(&pairs, format, &args.out)?;
    let stats = serde_json::to_value(&stats).map_err(data)?;
    match &args.stats {
        Some(path) => write_file(path, &(serde_json::to_string_pretty(&stats).map_err(data)? + "\n")),
        None => print_json(&stats),
    }
}

fn synth_err(e: SynthError) -> CliError {
    match e {
        SynthError::Scorer(_) => adapter(e),
        SynthError::Params { .. } => data(format!("synth: {e}")),
        other => data(other),
    }
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Paragraphs as JSONL: {"id": ..., "src": ...}.
    #[arg(long = "in", value_name = "PATH", required = true)]
    input: PathBuf,
    /// Translations as JSONL.
    #[arg(long = "out", value_name = "PATH", required = true)]
    out: PathBuf,
    /// Write per-origin selection statistics here instead of stdout.
    #[arg(long, value_name = "PATH")]
    stats: Option<PathBuf>,
}

fn ensemble_err(e: EnsembleError) -> CliError {
    match e {
        EnsembleError::Backend { .. } => adapter(e),
        other => data(other),
    }
}

pub fn rerank(args: RerankArgs) -> Result<(), CliError> {
    let raw = RawConfig::load(&args.config)?;
    let section = raw.section("ensemble").ok_or_else(|| data("rerank needs a config with an [ensemble] section"))?;
    let config: EnsembleConfig = toml::Value::Table(section)
        .try_into()
        .map_err(|e: toml::de::Error| data(format!("ensemble: {}", e.message())))?;
    let translators = config.backends.iter().map(|b| raw.attach(b)).collect::<Result<Vec<_>, _>>()?;
    let corrector = config.corrector.as_deref().map(|c| raw.attach(c)).transpose()?;
    let qe = raw.attach(&config.qe)?;
    let ensemble = Ensemble::new(config, translators, corrector, qe).map_err(ensemble_err)?;
    let paragraphs = read_paragraphs(open_read(&args.input)?).map_err(ensemble_err)?;
    let sources: Vec<&str> = paragraphs.iter().map(|p| p.src.as_str()).collect();
    let (translations, stats) = ensemble.translate_all(&sources).map_err(ensemble_err)?;
    let mut lines = String::new();
    for (p, t) in paragraphs.iter().zip(&translations) {
        lines.push_str(&serde_json::to_string(&RerankOutput::new(&ensemble, p.id.clone(), t)).map_err(data)?);
        lines.push('\n');
    }
    write_file(&args.out, &lines)?;
    eprint!("{stats}");
    let stats = serde_json::to_value(&stats).map_err(data)?;
    match &args.stats {
        Some(path) => write_file(path, &(serde_json::to_string_pretty(&stats).map_err(data)? + "\n")),
        None => print_json(&stats),
    }
}

#[derive(Debug, Args)]
pub struct ChrfArgs {
    /// Hypotheses, one segment per line.
    #[arg(long, value_name = "PATH", required = true)]
    hyp: PathBuf,
    /// References, aligned with the hypotheses.
    #[arg(long = "ref", value_name = "PATH", required = true)]
    reference: PathBuf,
    /// Highest character n-gram order.
    #[arg(long, value_name = "N", default_value_t = 6)]
    max_n: usize,
    /// Recall weight.
    #[arg(long, value_name = "BETA", default_value_t = 2.0)]
    beta: f64,
    /// Count whitespace as characters.
    #[arg(long)]
    keep_whitespace: bool,
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    open_read(path)?.lines().collect::<Result<_, _>>().map_err(|e| data(format!("{}: {e}", path.display())))
}

pub fn chrf(args: ChrfArgs) -> Result<(), CliError> {
    let params = ChrfParams { max_n: args.max_n, beta: args.beta, strip_whitespace: !args.keep_whitespace };
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let hyps = read_lines(&args.hyp)?;
    let refs = read_lines(&args.reference)?;
    let score = chrf_corpus(&hyps, &refs, &params).map_err(data)?;
    println!("{score:.1}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateConfigArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Print the resolved config, every default filled in.
    #[arg(long)]
    print: bool,
}

pub fn validate_config(args: ValidateConfigArgs) -> Result<(), CliError> {
    if args.config.config.is_none() {
        return Err(CliError::Usage("--config is required".into()));
    }
    let raw = RawConfig::load(&args.config)?;
    let config = raw.pipeline()?;
    if let Some(mut synth) = raw.section("synth") {
        synth.remove("scorer");
        let params: SelectionParams = toml::Value::Table(synth)
            .try_into()
            .map_err(|e: toml::de::Error| data(format!("synth: {}", e.message())))?;
        params.validate().map_err(|e| data(format!("synth: {e}")))?;
    }
    if let Some(ensemble) = raw.section("ensemble") {
        let _: EnsembleConfig = toml::Value::Table(ensemble)
            .try_into()
            .map_err(|e: toml::de::Error| data(format!("ensemble: {}", e.message())))?;
    }
    let warnings = validate_order(&config);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("config ok: {} stages, {} warnings", config.stages.len(), warnings.len());
    if args.print {
        print!("{}", config.to_toml_string());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ManifestCheckArgs {
    /// Manifest file.
    #[arg(long, value_name = "PATH", required = true)]
    manifest: PathBuf,
    /// Also read every dataset and compare with its expected pair count.
    #[arg(long)]
    count: bool,
}

pub fn manifest_check(args: ManifestCheckArgs) -> Result<(), CliError> {
    let entries = load_manifest(&args.manifest).map_err(data)?;
    let mut problems = 0usize;
    let mut out = io::stdout().lock();
    for e in &entries {
        let missing: Vec<String> = e.paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
        let status = if !missing.is_empty() {
            format!("missing {}", missing.join(","))
        } else if args.count {
            match count_pairs(e) {
                Ok(n) => format!("ok {n}"),
                Err(err) => format!("bad {err}"),
            }
        } else {
            "ok".to_string()
        };
        problems += usize::from(!status.starts_with("ok"));
        let expected = e.expected_pairs.map_or_else(|| "-".to_string(), |n| n.to_string());
        writeln!(out, "{}\t{}\t{}\t{}\t{}", e.index, e.origin(), e.format, expected, status).map_err(data)?;
    }
    eprintln!("{} entries, {} problems", entries.len(), problems);
    if problems > 0 {
        return Err(data(format!("{problems} manifest entries failed")));
    }
    Ok(())
}

fn count_pairs(entry: &DatasetManifestEntry) -> Result<u64, String> {
    let mut reader = read_pairs(entry).map_err(|e| e.to_string())?;
    for item in reader.by_ref() {
        if let Err(e) = item {
            if !e.is_row_error() {
                return Err(e.to_string());
            }
        }
    }
    Ok(reader.parsed())
}

#[derive(Debug, Args)]
pub struct AdapterCheckArgs {
    /// Adapter command line, split on whitespace.
    #[arg(long, value_name = "CMD", conflicts_with_all = ["address", "adapter"])]
    command: Option<String>,
    /// Adapter listening on a TCP socket.
    #[arg(long, value_name = "HOST:PORT", conflicts_with = "adapter")]
    address: Option<String>,
    /// Executable name inside the adapter directory.
    #[arg(long, value_name = "NAME")]
    adapter: Option<String>,
    /// Loopback fixture to replay bit-exactly.
    #[arg(long, value_name = "PATH")]
    loopback_fixture: Option<PathBuf>,
    /// Seed the loopback adapter was started with.
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Seconds to wait for each reply.
    #[arg(long, value_name = "SECS", default_value_t = 10.0)]
    timeout: f64,
}

pub fn adapter_check(args: AdapterCheckArgs) -> Result<(), CliError> {
    let transport = if let Some(cmd) = &args.command {
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(CliError::Usage("--command is empty".into()));
        }
        Transport::Command(argv)
    } else if let Some(addr) = &args.address {
        Transport::Tcp(addr.clone())
    } else if let Some(name) = &args.adapter {
        let dir = std::env::var_os(ADAPTER_DIR_ENV)
            .ok_or_else(|| CliError::Usage(format!("--adapter needs {ADAPTER_DIR_ENV} to be set")))?;
        Transport::Command(vec![PathBuf::from(dir).join(name).to_string_lossy().into_owned()])
    } else {
        return Err(CliError::Usage("give --command, --address or --adapter".into()));
    };
    if !(args.timeout > 0.0 && args.timeout.is_finite()) {
        return Err(CliError::Usage("--timeout must be positive".into()));
    }
    let loopback = match &args.loopback_fixture {
        Some(path) => Some((args.seed, load_loopback_fixture(path).map_err(data)?)),
        None => None,
    };
    let options = ConformanceOptions { timeout: Duration::from_secs_f64(args.timeout), loopback };
    let report = run_conformance(&transport, &options)?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(adapter(format!("{transport}: conformance failed")))
    }
}
