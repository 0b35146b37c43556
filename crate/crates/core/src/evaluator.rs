//! Candidate evaluation through an external command.
//!
//! Each genome is rendered into a fresh temporary directory and the configured
//! command is run there with `{workdir}` substituted. The command reports
//! results on stdout with a line
//!
//! ```text
//! GE_METRICS: {"objectives": {"accuracy": 0.93, "param_count": 518230}}
//! ```
//!
//! Only the last such line counts. Records are cached by genome id in an
//! append-only NDJSON file.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::genome::{Genome, GenomeId, SeedTemplate};
use crate::moea::{Fitness, ObjectiveSpec};

pub const METRICS_PREFIX: &str = "GE_METRICS: ";
pub const WORKDIR_PLACEHOLDER: &str = "{workdir}";
const TAIL_BYTES: usize = 4096;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("cannot create work directory: {0}")]
    Workdir(std::io::Error),
    #[error("cannot launch `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("evaluation cache {path}: {source}")]
    Cache {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub command: Vec<String>,
    pub timeout: Duration,
    pub objective_spec: ObjectiveSpec,
    pub max_concurrent: usize,
    pub cache_path: Option<PathBuf>,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.command.is_empty() {
            return Err(EvalError::Config("command must not be empty".into()));
        }
        if self.timeout.is_zero() {
            return Err(EvalError::Config("timeout must be positive".into()));
        }
        if self.max_concurrent == 0 {
            return Err(EvalError::Config("max_concurrent must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ExitStatus {
    Code(i32),
    Signal(i32),
    Timeout,
}

impl ExitStatus {
    pub fn success(self) -> bool {
        self == ExitStatus::Code(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    NonzeroExit,
    Signal,
    Timeout,
    NoMetrics,
    MalformedMetrics,
    MissingObjective,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub genome_id: GenomeId,
    pub fitness: Fitness,
    pub wall_time_ms: u64,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub exit_status: ExitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<InvalidReason>,
    /// Set on records served from the cache; never persisted as true.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cache_hit: bool,
}

/// Interprets captured stdout under the metrics protocol.
pub fn parse_metrics(stdout: &str, spec: &ObjectiveSpec) -> Result<Fitness, InvalidReason> {
    let line = stdout
        .lines()
        .rev()
        .find_map(|l| l.trim_end_matches('\r').strip_prefix(METRICS_PREFIX))
        .ok_or(InvalidReason::NoMetrics)?;
    metrics_from_json(line, spec)
}

fn metrics_from_json(json: &str, spec: &ObjectiveSpec) -> Result<Fitness, InvalidReason> {
    let v: Value = serde_json::from_str(json.trim()).map_err(|_| InvalidReason::MalformedMetrics)?;
    let objectives = v
        .get("objectives")
        .and_then(Value::as_object)
        .ok_or(InvalidReason::MalformedMetrics)?;
    let mut values = BTreeMap::new();
    for name in spec.names() {
        let raw = objectives.get(name).ok_or(InvalidReason::MissingObjective)?;
        let x = raw.as_f64().ok_or(InvalidReason::MalformedMetrics)?;
        if !x.is_finite() {
            return Err(InvalidReason::NonFinite);
        }
        values.insert(name.to_string(), x);
    }
    Fitness::valid(values).map_err(|_| InvalidReason::NonFinite)
}

/// Keeps the last `TAIL_BYTES` bytes of a stream, plus the last metrics line.
#[derive(Default)]
struct Capture {
    tail: String,
    last_metrics: Option<String>,
}

impl Capture {
    fn read_from(stream: impl Read) -> Capture {
        let mut cap = Capture::default();
        let mut reader = BufReader::new(stream);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    let line = String::from_utf8_lossy(&buf);
                    let trimmed = line.trim_end_matches(['\n', '\r']);
                    if trimmed.starts_with(METRICS_PREFIX) {
                        cap.last_metrics = Some(trimmed.to_string());
                    }
                    cap.tail.push_str(&line);
                    if cap.tail.len() > 2 * TAIL_BYTES {
                        cap.trim();
                    }
                }
            }
        }
        cap.trim();
        cap
    }

    fn trim(&mut self) {
        if self.tail.len() > TAIL_BYTES {
            let mut cut = self.tail.len() - TAIL_BYTES;
            while !self.tail.is_char_boundary(cut) {
                cut += 1;
            }
            self.tail.drain(..cut);
        }
    }
}

struct EvalCache {
    path: Option<PathBuf>,
    records: RwLock<HashMap<GenomeId, EvalRecord>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl EvalCache {
    fn open(path: Option<&Path>) -> Result<Self, EvalError> {
        let mut records = HashMap::new();
        let writer = match path {
            Some(p) => {
                let cache_err = |source| EvalError::Cache {
                    path: p.to_path_buf(),
                    source,
                };
                if p.exists() {
                    let file = File::open(p).map_err(cache_err)?;
                    for (n, line) in BufReader::new(file).lines().enumerate() {
                        let line = line.map_err(cache_err)?;
                        if line.trim().is_empty() {
                            continue;
                        }
                        match serde_json::from_str::<EvalRecord>(&line) {
                            Ok(rec) => {
                                records.entry(rec.genome_id.clone()).or_insert(rec);
                            }
                            Err(e) => log::warn!("{}:{}: skipping corrupt cache line: {e}", p.display(), n + 1),
                        }
                    }
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(cache_err)?;
                Some(BufWriter::new(file))
            }
            None => None,
        };
        Ok(Self {
            path: path.map(Path::to_path_buf),
            records: RwLock::new(records),
            writer: Mutex::new(writer),
        })
    }

    fn get(&self, id: &GenomeId) -> Option<EvalRecord> {
        self.records.read().expect("cache lock").get(id).cloned()
    }

    /// Stores `record` unless another evaluation got there first; returns the
    /// record that is now authoritative.
    fn insert(&self, record: EvalRecord) -> Result<EvalRecord, EvalError> {
        let mut records = self.records.write().expect("cache lock");
        if let Some(existing) = records.get(&record.genome_id) {
            return Ok(existing.clone());
        }
        if let Some(w) = self.writer.lock().expect("cache lock").as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|source| EvalError::Cache {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        records.insert(record.genome_id.clone(), record.clone());
        Ok(record)
    }
}

pub struct Evaluator {
    cfg: EvalConfig,
    template: SeedTemplate,
    cache: EvalCache,
    launches: AtomicUsize,
    live: AtomicUsize,
    peak_live: AtomicUsize,
}

impl Evaluator {
    pub fn new(template: SeedTemplate, cfg: EvalConfig) -> Result<Self, EvalError> {
        cfg.validate()?;
        let cache = EvalCache::open(cfg.cache_path.as_deref())?;
        Ok(Self {
            cfg,
            template,
            cache,
            launches: AtomicUsize::new(0),
            live: AtomicUsize::new(0),
            peak_live: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EvalConfig {
        &self.cfg
    }

    pub fn template(&self) -> &SeedTemplate {
        &self.template
    }

    /// Subprocesses started since construction.
    pub fn launches(&self) -> usize {
        self.launches.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously running subprocesses observed.
    pub fn peak_live(&self) -> usize {
        self.peak_live.load(Ordering::SeqCst)
    }

    pub fn cached(&self, id: &GenomeId) -> Option<EvalRecord> {
        self.cache.get(id)
    }

    pub fn evaluate(&self, genome: &Genome) -> Result<EvalRecord, EvalError> {
        if let Some(mut hit) = self.cache.get(genome.id()) {
            hit.cache_hit = true;
            return Ok(hit);
        }
        let record = self.execute(genome)?;
        self.cache.insert(record)
    }

    /// Evaluates distinct genome ids at most once each, with at most
    /// `max_concurrent` subprocesses alive. Output is aligned with input.
    pub fn evaluate_batch(&self, genomes: &[Genome]) -> Result<Vec<EvalRecord>, EvalError> {
        let mut unique: Vec<&Genome> = Vec::new();
        for g in genomes {
            if !unique.iter().any(|u| u.id() == g.id()) {
                unique.push(g);
            }
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<HashMap<GenomeId, Result<EvalRecord, EvalError>>> = Mutex::new(HashMap::new());
        let workers = self.cfg.max_concurrent.min(unique.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(g) = unique.get(i) else { break };
                    let r = self.evaluate(g);
                    results.lock().expect("results lock").insert(g.id().clone(), r);
                });
            }
        });
        let mut results = results.into_inner().expect("results lock");
        let mut by_id = HashMap::new();
        for g in &unique {
            let r = results.remove(g.id()).expect("every unique genome evaluated")?;
            by_id.insert(g.id().clone(), r);
        }
        Ok(genomes.iter().map(|g| by_id[g.id()].clone()).collect())
    }

    fn execute(&self, genome: &Genome) -> Result<EvalRecord, EvalError> {
        let workdir = tempfile::Builder::new()
            .prefix("gevo-eval-")
            .tempdir()
            .map_err(EvalError::Workdir)?;
        self.template
            .render_to_dir(genome, workdir.path())
            .map_err(EvalError::Workdir)?;
        let dir = workdir.path().to_string_lossy().into_owned();
        let argv: Vec<String> = self
            .cfg
            .command
            .iter()
            .map(|a| a.replace(WORKDIR_PLACEHOLDER, &dir))
            .collect();

        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .current_dir(workdir.path())
            .env("GE_GENOME_ID", genome.id().as_str())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|source| EvalError::Spawn {
            command: argv.join(" "),
            source,
        })?;
        self.launches.fetch_add(1, Ordering::SeqCst);
        let now_live = self.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_live.fetch_max(now_live, Ordering::SeqCst);

        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || Capture::read_from(stdout));
        let err_reader = std::thread::spawn(move || Capture::read_from(stderr));

        let exit_status = wait_with_timeout(&mut child, self.cfg.timeout);
        self.live.fetch_sub(1, Ordering::SeqCst);
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        let wall_time_ms = started.elapsed().as_millis() as u64;

        let outcome = match exit_status {
            ExitStatus::Timeout => Err(InvalidReason::Timeout),
            ExitStatus::Signal(_) => Err(InvalidReason::Signal),
            ExitStatus::Code(0) => match &out.last_metrics {
                Some(line) => metrics_from_json(&line[METRICS_PREFIX.len()..], &self.cfg.objective_spec),
                None => Err(InvalidReason::NoMetrics),
            },
            ExitStatus::Code(_) => Err(InvalidReason::NonzeroExit),
        };
        let (fitness, reason) = match outcome {
            Ok(f) => (f, None),
            Err(r) => (Fitness::invalid(), Some(r)),
        };
        Ok(EvalRecord {
            genome_id: genome.id().clone(),
            fitness,
            wall_time_ms,
            stdout_tail: out.tail,
            stderr_tail: err.tail,
            exit_status,
            reason,
            cache_hit: false,
        })
    }
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; take down any grandchildren too.
        let pgid = child.id() as libc::pid_t;
        unsafe {
            libc::killpg(pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> ExitStatus {
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                // Reap stragglers that may still hold the output pipes.
                #[cfg(unix)]
                unsafe {
                    libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
                }
                return convert_status(status);
            }
            Ok(None) if Instant::now() >= deadline => {
                kill_tree(child);
                let _ = child.wait();
                return ExitStatus::Timeout;
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(_) => {
                kill_tree(child);
                let _ = child.wait();
                return ExitStatus::Signal(-1);
            }
        }
    }
}

fn convert_status(status: std::process::ExitStatus) -> ExitStatus {
    if let Some(code) = status.code() {
        return ExitStatus::Code(code);
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return ExitStatus::Signal(sig);
        }
    }
    ExitStatus::Signal(-1)
}
