//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Each check returns a short detail string on success. A check that errors,
//! panics or overruns its time limit fails. Oracles here are written
//! independently of the library code they judge.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use gevo_core::bundled::{mini_tree, toy_tree};
use gevo_core::engine::{list_checkpoints, resume, Checkpoint};
use gevo_core::evaluator::{EvalConfig, Evaluator, ExitStatus, InvalidReason};
use gevo_core::genome::{parse_seed, CodeBlock, Genome, Provenance, SeedTemplate};
use gevo_core::llm::{ChatRequest, LlmBackend, LlmClient, LlmError, MockBackend, SamplingConfig, Transcript, TranscriptRecord};
use gevo_core::moea::{
    crowding_distance, dominates, fast_nondominated_sort, nsga2_tournaments, spea2_environmental_select,
    spea2_fitness, Direction, Fitness, Objective, ObjectiveSpec, ScoredGenome,
};
use gevo_core::operators::{mate, mutate, OperatorContext, PromptLibrary, PERSONA_NONE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GEVO: &str = env!("CARGO_BIN_EXE_gevo");

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- oracles

/// Minimization vector with maximize objectives negated, `None` if invalid.
fn oracle_point(f: &Fitness, spec: &ObjectiveSpec) -> Option<Vec<f64>> {
    if !f.is_valid() {
        return None;
    }
    Some(
        spec.objectives()
            .iter()
            .map(|o| {
                let v = f.get(&o.name).unwrap();
                if o.direction == Direction::Maximize {
                    -v
                } else {
                    v
                }
            })
            .collect(),
    )
}

fn oracle_dominates(a: &Option<Vec<f64>>, b: &Option<Vec<f64>>) -> bool {
    match (a, b) {
        (None, _) => false,
        (Some(_), None) => true,
        (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y),
    }
}

/// Repeatedly strips the members nobody else remaining dominates.
fn peel_off(points: &[Option<Vec<f64>>]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| oracle_dominates(&points[j], &points[i])))
            .collect();
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

fn named(dirs: &[Direction]) -> ObjectiveSpec {
    ObjectiveSpec::new(
        dirs.iter()
            .enumerate()
            .map(|(i, d)| Objective::new(format!("f{i}"), *d))
            .collect(),
    )
    .unwrap()
}

fn random_dirs(rng: &mut ChaCha8Rng) -> Vec<Direction> {
    let m = rng.gen_range(2..=3);
    (0..m)
        .map(|_| if rng.gen_bool(0.5) { Direction::Minimize } else { Direction::Maximize })
        .collect()
}

fn member(tag: usize, fitness: Fitness) -> ScoredGenome {
    let genome = Genome::from_blocks(
        vec![CodeBlock::new("B", &format!("m{tag}\n"), Provenance::Seed, 0)],
        Vec::new(),
        0,
    );
    ScoredGenome::new(genome, fitness)
}

fn random_fitness(rng: &mut ChaCha8Rng, spec: &ObjectiveSpec, levels: u32, invalid_rate: f64) -> Fitness {
    if rng.gen_bool(invalid_rate) {
        return Fitness::invalid();
    }
    Fitness::from_pairs(spec.names().map(|n| (n, rng.gen_range(0..levels) as f64))).unwrap()
}

fn random_pop(rng: &mut ChaCha8Rng, spec: &ObjectiveSpec, n: usize, levels: u32, invalid_rate: f64) -> Vec<ScoredGenome> {
    (0..n).map(|i| member(i, random_fitness(rng, spec, levels, invalid_rate))).collect()
}

fn sorted_fronts(mut fronts: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for f in &mut fronts {
        f.sort_unstable();
    }
    fronts
}

// --------------------------------------------------------------- criteria

fn moea_oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut with_ties = 0;
    for _ in 0..1000 {
        let spec = named(&random_dirs(&mut rng));
        let n = rng.gen_range(1..=12);
        let levels = rng.gen_range(2..=6);
        let pop = random_pop(&mut rng, &spec, n, levels, 0.1);
        let points: Vec<_> = pop.iter().map(|s| oracle_point(&s.fitness, &spec)).collect();
        let got = sorted_fronts(ok(fast_nondominated_sort(&pop, &spec))?);
        let want = peel_off(&points);
        ensure!(got == want, "fronts {got:?} != oracle {want:?} for {points:?}");
        if points.iter().map(|p| format!("{p:?}")).collect::<HashSet<_>>().len() < points.len() {
            with_ties += 1;
        }
    }
    Ok(format!("1000 populations (size <= 12, 2-3 objectives, {with_ties} with duplicate points), exact"))
}

fn dominance_axioms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut chains = 0;
    for _ in 0..10_000 {
        let spec = named(&random_dirs(&mut rng));
        let [a, b, c] = [0; 3].map(|_| random_fitness(&mut rng, &spec, 3, 0.05));
        let d = |x: &Fitness, y: &Fitness| dominates(x, y, &spec).unwrap();
        for x in [&a, &b, &c] {
            ensure!(!d(x, x), "reflexive domination: {x:?}");
        }
        for (x, y) in [(&a, &b), (&b, &c), (&a, &c)] {
            ensure!(!(d(x, y) && d(y, x)), "symmetric domination: {x:?} {y:?}");
            let want = oracle_dominates(&oracle_point(x, &spec), &oracle_point(y, &spec));
            ensure!(d(x, y) == want, "dominates({x:?}, {y:?}) disagrees with oracle");
        }
        if d(&a, &b) && d(&b, &c) {
            chains += 1;
            ensure!(d(&a, &c), "transitivity broken: {a:?} {b:?} {c:?}");
        }
    }
    ensure!(chains > 100, "only {chains} transitivity premises exercised");

    // Negating a maximize objective and flipping it to minimize is a no-op.
    let mut flips = 0;
    for trial in 0..300u64 {
        let mut dirs = random_dirs(&mut rng);
        dirs[0] = Direction::Maximize;
        let spec = named(&dirs);
        let mut flipped_dirs = dirs.clone();
        flipped_dirs[0] = Direction::Minimize;
        let flipped_spec = named(&flipped_dirs);
        let n = rng.gen_range(2..=12);
        let pop = random_pop(&mut rng, &spec, n, 5, 0.1);
        let flipped: Vec<ScoredGenome> = pop
            .iter()
            .map(|s| {
                let f = if s.fitness.is_valid() {
                    Fitness::from_pairs(s.fitness.values().iter().map(|(k, v)| {
                        (k.as_str(), if k == "f0" { -v } else { *v })
                    }))
                    .unwrap()
                } else {
                    Fitness::invalid()
                };
                ScoredGenome::new(s.genome.clone(), f)
            })
            .collect();
        let fa = ok(fast_nondominated_sort(&pop, &spec))?;
        let fb = ok(fast_nondominated_sort(&flipped, &flipped_spec))?;
        ensure!(fa == fb, "fronts change under direction flip");
        let ta = ok(nsga2_tournaments(&pop, 16, &spec, &mut ChaCha8Rng::seed_from_u64(trial)))?;
        let tb = ok(nsga2_tournaments(&flipped, 16, &flipped_spec, &mut ChaCha8Rng::seed_from_u64(trial)))?;
        ensure!(ta == tb, "tournament outcomes change under direction flip");
        flips += 1;
    }
    Ok(format!("10000 triples ({chains} transitive chains), {flips} direction-flip populations, exact"))
}

fn crowding_and_spea2() -> Check {
    let spec = named(&[Direction::Minimize, Direction::Minimize]);
    let pts = |v: &[[f64; 2]]| -> Vec<ScoredGenome> {
        v.iter()
            .enumerate()
            .map(|(i, p)| member(i, Fitness::from_pairs([("f0", p[0]), ("f1", p[1])]).unwrap()))
            .collect()
    };
    let d = ok(crowding_distance(&pts(&[[0.0, 2.0], [1.0, 1.0], [2.0, 0.0]]), &spec))?;
    ensure!(d[0] == f64::INFINITY && d[2] == f64::INFINITY, "boundaries {d:?}");
    ensure!((d[1] - 2.0).abs() <= 1e-12, "middle distance {}", d[1]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let spec = named(&random_dirs(&mut rng));
        let n = rng.gen_range(3..=12);
        let pop = random_pop(&mut rng, &spec, n, 1000, 0.0);
        let points: Vec<_> = pop.iter().map(|s| oracle_point(&s.fitness, &spec)).collect();
        // Boundary members of a non-dominated front are infinitely crowded.
        let front_idx = &peel_off(&points)[0];
        let front: Vec<ScoredGenome> = front_idx.iter().map(|&i| pop[i].clone()).collect();
        let cd = ok(crowding_distance(&front, &spec))?;
        for m in 0..spec.len() {
            let vals: Vec<f64> = front_idx.iter().map(|&i| points[i].as_ref().unwrap()[m]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (k, v) in vals.iter().enumerate() {
                if (*v == lo || *v == hi) && lo < hi {
                    let extreme_unique = vals.iter().filter(|x| *x == v).count() == 1;
                    ensure!(!extreme_unique || cd[k].is_infinite(), "boundary distance {} not infinite", cd[k]);
                }
            }
        }
        let fit = ok(spea2_fitness(&pop, &spec))?;
        for (i, f) in fit.iter().enumerate() {
            ensure!(f.density > 0.0 && f.density <= 0.5, "density {} outside (0, 0.5]", f.density);
            let nondominated = !points.iter().any(|q| oracle_dominates(q, &points[i]));
            ensure!(!nondominated || f.total < 1.0, "non-dominated member has total {}", f.total);
            ensure!(nondominated || f.total >= 1.0, "dominated member has total {}", f.total);
        }
    }

    // Four non-dominated points, one slot too many. Normalized neighbour
    // distances: p1 -> {p2 0.0177, p0 0.7071, p3 0.7071},
    // p2 -> {p1 0.0177, p3 0.6894, p0 0.7248}; p2 goes first.
    let four = pts(&[[0.0, 4.0], [2.0, 2.0], [2.05, 1.95], [4.0, 0.0]]);
    let kept: BTreeSet<String> = ok(spea2_environmental_select(&four, 3, &spec))?
        .iter()
        .map(|s| s.id().to_string())
        .collect();
    let want: BTreeSet<String> = [0, 1, 3].iter().map(|&i| four[i].id().to_string()).collect();
    ensure!(kept == want, "truncation kept the wrong members");
    Ok("boundary inf, middle 2.0 +- 1e-12; 300 SPEA-2 populations; 4-point truncation drops p2".into())
}

/// Appends a numbered comment to whatever source the prompt is about.
struct EditingBackend {
    count: AtomicUsize,
}

impl LlmBackend for EditingBackend {
    fn id(&self) -> &str {
        "editing"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let n = self.count.fetch_add(1, Ordering::Relaxed);
        Ok(format!("```\n{}# edit {n}\n```", request.subject_source))
    }
}

/// The changed line range between two renders sits inside the marker
/// region of `block`, and the markers themselves are untouched.
fn diff_confined(before: &[(String, String)], after: &[(String, String)], block: &str) -> Result<(), String> {
    ensure!(before.len() == after.len(), "file set changed");
    let mut changed_files = 0;
    for ((pa, ta), (pb, tb)) in before.iter().zip(after) {
        ensure!(pa == pb, "file order changed");
        if ta == tb {
            continue;
        }
        changed_files += 1;
        let a: Vec<&str> = ta.lines().collect();
        let b: Vec<&str> = tb.lines().collect();
        let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
        let max_suffix = a.len().min(b.len()) - prefix;
        let suffix = a.iter().rev().zip(b.iter().rev()).take(max_suffix).take_while(|(x, y)| x == y).count();
        let open = b[..prefix]
            .iter()
            .rposition(|l| l.contains("@GE-BLOCK:"))
            .ok_or("change before any block")?;
        ensure!(
            b[open].trim_end().ends_with(&format!("@GE-BLOCK: {block}")),
            "change lands in `{}`, expected `{block}`",
            b[open]
        );
        let close = b[..b.len() - suffix]
            .iter()
            .skip(open)
            .position(|l| l.contains("@GE-END"));
        ensure!(close.is_none(), "change crosses the end marker of `{block}`");
        ensure!(
            b[b.len() - suffix..].iter().any(|l| l.contains("@GE-END")),
            "end marker of `{block}` was touched"
        );
    }
    ensure!(changed_files == 1, "{changed_files} files changed");
    Ok(())
}

fn genome_round_trip_and_locality() -> Check {
    for tree in [toy_tree(), mini_tree()] {
        let template = ok(parse_seed(&tree))?;
        let rendered = ok(template.render(&template.seed_genome()))?;
        ensure!(rendered == tree, "render(parse(seed)) differs from the seed");
    }

    let library = PromptLibrary::builtin();
    let sampling = SamplingConfig::default();
    let mut applications = 0;
    for (i, tree) in [toy_tree(), mini_tree()].into_iter().enumerate() {
        let template = ok(parse_seed(&tree))?;
        let seed = template.seed_genome();
        let llm = LlmClient::new(
            Box::new(EditingBackend {
                count: AtomicUsize::new(0),
            }),
            Transcript::in_memory(),
            1,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let mut pool = vec![seed.clone()];
        let mut elites: Vec<ScoredGenome> = Vec::new();
        for step in 0..120 {
            let ctx = OperatorContext {
                library: &library,
                llm: &llm,
                sampling: &sampling,
                seed: &seed,
                elites: &elites,
                prob_eot: 0.5,
                crp_enabled: true,
                eot_enabled: true,
                generation: 1,
            };
            let a = pool[rng.gen_range(0..pool.len())].clone();
            let v = if step % 3 == 2 && pool.len() > 1 {
                let b = pool[rng.gen_range(0..pool.len())].clone();
                ok(mate(&a, &b, &ctx, &mut rng))?
            } else {
                ok(mutate(&a, &ctx, &mut rng))?
            };
            let Some(block) = &v.block else { continue };
            ensure!(v.changed, "operator left block `{block}` unchanged");
            diff_confined(&ok(template.render(&a))?, &ok(template.render(&v.genome))?, block)?;
            applications += 1;
            if elites.len() < 4 {
                elites.push(ScoredGenome::new(v.genome.clone(), Fitness::from_pairs([("f", 0.0)]).unwrap()));
            }
            pool.push(v.genome);
        }
    }
    ensure!(applications >= 200, "only {applications} applications");
    Ok(format!("toy and mini byte-exact; {applications} operator applications confined to one region"))
}

fn prompt_cardinality() -> Check {
    let library = PromptLibrary::builtin();
    let sampling = SamplingConfig::default();
    let template = ok(parse_seed(&toy_tree()))?;
    let seed = template.seed_genome();
    let mut counts = Vec::new();
    for crp in [true, false] {
        let llm = LlmClient::new(Box::new(MockBackend::new(BTreeMap::new())), Transcript::in_memory(), 1);
        let ctx = OperatorContext {
            library: &library,
            llm: &llm,
            sampling: &sampling,
            seed: &seed,
            elites: &[],
            prob_eot: 0.0,
            crp_enabled: crp,
            eot_enabled: false,
            generation: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1500 {
            ok(mutate(&seed, &ctx, &mut rng))?;
        }
        let mut per_block: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in llm.transcript().records() {
            per_block
                .entry(r.request.key.block.clone())
                .or_default()
                .insert(format!("{}\u{0}{}", r.request.system_text, r.request.user_text));
        }
        ensure!(per_block.len() == 4, "only {} blocks sampled", per_block.len());
        let sizes: BTreeSet<usize> = per_block.values().map(BTreeSet::len).collect();
        ensure!(sizes.len() == 1, "blocks disagree on prompt count: {sizes:?}");
        counts.push(*sizes.iter().next().unwrap());
    }
    ensure!(counts == [24, 6], "distinct prompts per block: CRP on {}, off {}", counts[0], counts[1]);
    Ok("24 distinct prompts per block with personas, 6 without".into())
}

// ------------------------------------------------------ end-to-end runs

struct RunDir {
    _tmp: tempfile::TempDir,
    proj: PathBuf,
    launches: PathBuf,
}

const IMPROVING_AND_BREAKING: &str = r#"{
  "quadratic:*:*": "```\nc2 = -0.3\n```",
  "linear:hyperparam_uncommon:*": "```\nc1 = banana\n```"
}"#;

/// `gevo init` of the toy target, scored through a wrapper that logs every
/// launch and sleeps `$GE_TEST_SLEEP` seconds first.
fn scaffold() -> Result<RunDir, String> {
    let tmp = ok(tempfile::tempdir())?;
    let out = ok(Command::new(GEVO).arg("init").arg("proj").current_dir(tmp.path()).output())?;
    ensure!(out.status.success(), "init failed: {}", String::from_utf8_lossy(&out.stderr));
    let proj = tmp.path().join("proj");
    let launches = proj.join("launches.log");
    ok(std::fs::write(proj.join("corpus.json"), IMPROVING_AND_BREAKING))?;
    let cfg_path = proj.join("gevo.toml");
    let cfg = ok(std::fs::read_to_string(&cfg_path))?;
    let start = cfg.find("command = [").ok_or("no command in config")?;
    let end = start + cfg[start..].find("]\n").ok_or("unterminated command")? + 2;
    let wrapper = [
        "sh",
        "-c",
        r#"echo launch >> "$2"; sleep "${GE_TEST_SLEEP:-0}"; exec "$0" toy-eval "$1""#,
        GEVO,
        "{workdir}",
        &launches.display().to_string(),
    ]
    .map(|s| format!("{s:?}"))
    .join(", ");
    let cfg = format!("{}command = [{wrapper}]\n{}", &cfg[..start], &cfg[end..]);
    ok(std::fs::write(&cfg_path, cfg))?;
    Ok(RunDir {
        _tmp: tmp,
        proj,
        launches,
    })
}

fn gevo_run(dir: &RunDir, args: &[&str]) -> Result<(), String> {
    let out = ok(Command::new(GEVO).args(args).current_dir(&dir.proj).output())?;
    ensure!(
        out.status.success(),
        "`gevo {}` exited {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn final_checkpoint(dir: &RunDir) -> Result<Checkpoint, String> {
    let list = ok(list_checkpoints(&dir.proj.join("run/checkpoints")))?;
    let (_, path) = list.last().ok_or("no checkpoints")?;
    ok(resume(path))
}

fn lineage(dir: &RunDir) -> Result<Vec<serde_json::Value>, String> {
    let text = ok(std::fs::read_to_string(dir.proj.join("run/lineage.ndjson")))?;
    text.lines().map(|l| ok(serde_json::from_str(l))).collect()
}

fn transcript(dir: &RunDir) -> Result<Vec<TranscriptRecord>, String> {
    let text = ok(std::fs::read_to_string(dir.proj.join("run/transcript.ndjson")))?;
    text.lines().map(|l| ok(serde_json::from_str(l))).collect()
}

fn fitness_of(event: &serde_json::Value) -> Option<Fitness> {
    let obj = event.get("objectives")?.as_object()?;
    Fitness::from_pairs(obj.iter().map(|(k, v)| (k.as_str(), v.as_f64().unwrap()))).ok()
}

/// Each generation's elites either survive into the next population or are
/// dominated by an offspring evaluated in that next generation.
fn audit_elites(events: &[serde_json::Value], spec: &ObjectiveSpec, last: u64) -> Result<usize, String> {
    let of = |g: u64, kind: &str| -> Vec<&serde_json::Value> {
        events
            .iter()
            .filter(|e| e["generation"].as_u64() == Some(g) && e["event_type"] == kind)
            .collect()
    };
    let mut audited = 0;
    for g in 0..last {
        let elites = of(g, "elite");
        ensure!(!elites.is_empty(), "no elites logged for generation {g}");
        let survivors: HashSet<&str> = of(g + 1, "survivor").iter().map(|e| e["genome_id"].as_str().unwrap()).collect();
        let offspring: Vec<Option<Vec<f64>>> = of(g + 1, "evaluated")
            .iter()
            .map(|e| fitness_of(e).and_then(|f| oracle_point(&f, spec)))
            .collect();
        for e in elites {
            let id = e["genome_id"].as_str().unwrap();
            let p = fitness_of(e).and_then(|f| oracle_point(&f, spec));
            let beaten = offspring.iter().any(|o| oracle_dominates(o, &p));
            ensure!(survivors.contains(id) || beaten, "elite {id} lost at generation {}", g + 1);
            audited += 1;
        }
    }
    Ok(audited)
}

fn scripted_end_to_end() -> Check {
    let a = scaffold()?;
    gevo_run(&a, &["run"])?;
    let cp = final_checkpoint(&a)?;
    let spec = &cp.config.objectives;
    ensure!(cp.config.run.population_size == 8, "population {}", cp.config.run.population_size);
    ensure!(cp.state.generation == 5, "stopped at generation {}", cp.state.generation);

    let seed = oracle_point(&cp.state.baseline.fitness, spec);
    ensure!(cp.state.baseline.id() == cp.template.seed_genome().id(), "baseline is not the seed");
    let winner = cp
        .state
        .hall_of_fame
        .members()
        .iter()
        .find(|m| oracle_dominates(&oracle_point(&m.fitness, spec), &seed))
        .ok_or("no hall-of-fame member dominates the seed")?;

    let events = lineage(&a)?;
    let audited = audit_elites(&events, spec, 5)?;

    let launches = ok(std::fs::read_to_string(&a.launches))?.lines().count();
    let evaluated: HashSet<&str> = events
        .iter()
        .filter(|e| e["event_type"] == "evaluated")
        .map(|e| e["genome_id"].as_str().unwrap())
        .collect();
    ensure!(launches == evaluated.len(), "{launches} launches for {} distinct genomes", evaluated.len());
    let invalid = cp.state.history.iter().filter(|h| !h.fitness.is_valid()).count();
    ensure!(invalid > 0, "the breaking mutation was never evaluated");

    let b = scaffold()?;
    gevo_run(&b, &["run"])?;
    let la = ok(std::fs::read(a.proj.join("run/lineage.ndjson")))?;
    let lb = ok(std::fs::read(b.proj.join("run/lineage.ndjson")))?;
    ensure!(la == lb, "lineage logs of same-seed runs differ");
    Ok(format!(
        "hall of fame member {} dominates the seed; {audited} elites audited; {launches} launches == distinct ids; {invalid} invalid; lineage identical",
        winner.id().short()
    ))
}

fn checkpoint_equivalence() -> Check {
    let full = scaffold()?;
    gevo_run(&full, &["run"])?;
    let want = final_checkpoint(&full)?;

    let cut = scaffold()?;
    let mut child = ok(Command::new(GEVO)
        .arg("run")
        .env("GE_TEST_SLEEP", "0.3")
        .current_dir(&cut.proj)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn())?;
    let target = cut.proj.join("run/checkpoints/gen-0002.json");
    let deadline = Instant::now() + Duration::from_secs(40);
    while !target.exists() {
        ensure!(Instant::now() < deadline, "generation 2 never checkpointed");
        if let Ok(Some(status)) = child.try_wait() {
            return Err(format!("run ended early with {status}"));
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    ok(child.kill())?;
    ok(child.wait())?;
    let killed_at = ok(list_checkpoints(&cut.proj.join("run/checkpoints")))?
        .last()
        .map(|(g, _)| *g)
        .unwrap_or(0);
    ensure!(killed_at < 5, "run finished before it could be killed");

    gevo_run(&cut, &["resume", "run/checkpoints/gen-0002.json"])?;
    let got = final_checkpoint(&cut)?;
    ensure!(got.state.generation == want.state.generation, "resumed run stopped at {}", got.state.generation);
    let key = |cp: &Checkpoint| -> Vec<(String, Fitness)> {
        cp.state
            .hall_of_fame
            .members()
            .iter()
            .map(|m| (m.id().to_string(), m.fitness.clone()))
            .collect()
    };
    ensure!(key(&got) == key(&want), "final hall of fame differs after resume");
    let same_lineage = ok(std::fs::read(full.proj.join("run/lineage.ndjson")))?
        == ok(std::fs::read(cut.proj.join("run/lineage.ndjson")))?;
    ensure!(same_lineage, "lineage differs after resume");
    Ok(format!(
        "killed with gen-{killed_at:04} on disk, resumed from gen-0002; {} hall-of-fame members and lineage identical",
        want.state.hall_of_fame.len()
    ))
}

fn all_genomes(dir: &RunDir) -> Result<Vec<Genome>, String> {
    let mut out = Vec::new();
    for (_, path) in ok(list_checkpoints(&dir.proj.join("run/checkpoints")))? {
        let cp = ok(resume(&path))?;
        let s = &cp.state;
        out.extend(s.population.iter().chain(&s.elites).chain(s.hall_of_fame.members()).map(|m| m.genome.clone()));
    }
    Ok(out)
}

fn eot_blocks(genomes: &[Genome]) -> usize {
    genomes
        .iter()
        .flat_map(|g| g.blocks())
        .filter(|b| matches!(b.provenance, Provenance::Eot { .. }))
        .count()
}

fn persona_preambles(records: &[TranscriptRecord], library: &PromptLibrary) -> usize {
    let preambles: Vec<&str> = library
        .personas()
        .iter()
        .filter(|p| !p.is_none())
        .map(|p| p.preamble.as_str())
        .collect();
    records
        .iter()
        .filter(|r| {
            r.request.key.persona != PERSONA_NONE || preambles.iter().any(|p| r.request.user_text.contains(p))
        })
        .count()
}

fn ablation_switches() -> Check {
    let library = PromptLibrary::builtin();
    let base = scaffold()?;
    gevo_run(&base, &["run"])?;
    let base_eot = eot_blocks(&all_genomes(&base)?);
    let base_eot_calls = transcript(&base)?.iter().filter(|r| r.request.key.category == "eot").count();
    let base_personas = persona_preambles(&transcript(&base)?, &library);
    ensure!(base_eot_calls > 0, "control run made no evolution-of-thought calls");
    ensure!(base_personas > 0, "control run used no personas");

    let no_eot = scaffold()?;
    gevo_run(&no_eot, &["run", "--no-eot"])?;
    let eot = eot_blocks(&all_genomes(&no_eot)?);
    let eot_calls = transcript(&no_eot)?.iter().filter(|r| r.request.key.category == "eot").count();
    let eot_events = lineage(&no_eot)?.iter().filter(|e| e["operator"] == "eot").count();
    ensure!(eot + eot_calls + eot_events == 0, "--no-eot: {eot} blocks, {eot_calls} calls, {eot_events} events");

    let no_crp = scaffold()?;
    gevo_run(&no_crp, &["run", "--no-crp"])?;
    let records = transcript(&no_crp)?;
    let personas = persona_preambles(&records, &library);
    ensure!(personas == 0, "--no-crp: {personas} prompts carry a persona");
    Ok(format!(
        "--no-eot: 0 eot blocks (control {base_eot} blocks, {base_eot_calls} calls); --no-crp: 0 of {} prompts with personas (control {base_personas})",
        records.len()
    ))
}

fn evaluator_with(script: &str, timeout: Duration, cache: Option<&Path>) -> Result<(Evaluator, SeedTemplate), String> {
    let template = ok(parse_seed(&toy_tree()))?;
    let spec = ok(ObjectiveSpec::new(vec![
        Objective::new("fit_error", Direction::Minimize),
        Objective::new("complexity_count", Direction::Minimize),
    ]))?;
    let ev = ok(Evaluator::new(
        template.clone(),
        EvalConfig {
            command: vec!["sh".into(), "-c".into(), script.into()],
            timeout,
            objective_spec: spec,
            max_concurrent: 1,
            cache_path: cache.map(Path::to_path_buf),
        },
    ))?;
    Ok((ev, template))
}

fn evaluator_robustness() -> Check {
    let secs = Duration::from_secs;
    let (ev, t) = evaluator_with("sleep 1000 & sleep 1000", secs(1), None)?;
    let start = Instant::now();
    let rec = ok(ev.evaluate(&t.seed_genome()))?;
    let took = start.elapsed();
    ensure!(took < secs(6), "timeout kill took {took:?}");
    ensure!(rec.exit_status == ExitStatus::Timeout && !rec.fitness.is_valid(), "{rec:?}");
    ensure!(rec.reason == Some(InvalidReason::Timeout), "reason {:?}", rec.reason);

    let two_lines = r#"echo 'GE_METRICS: {"objectives":{"fit_error":9,"complexity_count":9}}'
echo 'GE_METRICS: {"objectives":{"fit_error":1.5,"complexity_count":2}}'"#;
    let (ev, t) = evaluator_with(two_lines, secs(10), None)?;
    let rec = ok(ev.evaluate(&t.seed_genome()))?;
    ensure!(
        rec.fitness == Fitness::from_pairs([("fit_error", 1.5), ("complexity_count", 2.0)]).unwrap(),
        "last line not used: {:?}",
        rec.fitness
    );

    let tmp = ok(tempfile::tempdir())?;
    let cache = tmp.path().join("cache.ndjson");
    let (ev, t) = evaluator_with(two_lines, secs(10), Some(&cache))?;
    let g = t.seed_genome();
    let first = ok(ev.evaluate(&g))?;
    let second = ok(ev.evaluate(&g))?;
    ensure!(!first.cache_hit && second.cache_hit, "cache flags {} {}", first.cache_hit, second.cache_hit);
    ensure!(first.fitness == second.fitness && ev.launches() == 1, "cache hit relaunched or changed fitness");
    drop(ev);
    let (ev, _) = evaluator_with("exit 1", secs(10), Some(&cache))?;
    let third = ok(ev.evaluate(&g))?;
    ensure!(third.cache_hit && third.fitness == first.fitness && ev.launches() == 0, "cache not persisted");

    let (ev, t) = evaluator_with("echo 'GE_METRICS: {\"objectives\":{}}'; exit 3", secs(10), None)?;
    let rec = ok(ev.evaluate(&t.seed_genome()))?;
    ensure!(rec.reason == Some(InvalidReason::NonzeroExit) && !rec.fitness.is_valid(), "{:?}", rec.reason);
    let (ev, t) = evaluator_with("echo 'GE_METRICS: {not json'", secs(10), None)?;
    let rec = ok(ev.evaluate(&t.seed_genome()))?;
    ensure!(rec.reason == Some(InvalidReason::MalformedMetrics) && !rec.fitness.is_valid(), "{:?}", rec.reason);
    Ok(format!("timeout killed in {:.2}s; last line wins; cache hit persisted; nonzero exit and malformed metrics invalid", took.as_secs_f64()))
}

// ------------------------------------------------------------------ main

fn main() {
    let criteria: [Criterion; 9] = [
        ("moea oracle equivalence", Duration::from_secs(10), moea_oracle_equivalence),
        ("dominance axioms", Duration::from_secs(5), dominance_axioms),
        ("crowding distance and SPEA-2 fitness", Duration::from_secs(1), crowding_and_spea2),
        ("genome round-trip and operator locality", Duration::from_secs(10), genome_round_trip_and_locality),
        ("prompt-space cardinality", Duration::from_secs(1), prompt_cardinality),
        ("scripted end-to-end", Duration::from_secs(60), scripted_end_to_end),
        ("checkpoint equivalence", Duration::from_secs(60), checkpoint_equivalence),
        ("ablation switches", Duration::from_secs(60), ablation_switches),
        ("evaluator robustness", Duration::from_secs(30), evaluator_robustness),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(_) if took > limit => Err(format!("took {:.2}s, limit {}s", took.as_secs_f64(), limit.as_secs())),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS  {name}  ({:.2}s of {}s)  {detail}", took.as_secs_f64(), limit.as_secs()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}  ({:.2}s of {}s)  {why}", took.as_secs_f64(), limit.as_secs());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
