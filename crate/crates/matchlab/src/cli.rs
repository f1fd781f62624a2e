//! Command-line front end: problem files, the mechanism spec grammar, audit
//! commands, the golden fixture runner, and machine-readable reports.
//!
//! Exit codes, used consistently by every subcommand:
//!
//! * 0 — success (for audit-style commands: the negative verdict was not found)
//! * 1 — the audit found the negative verdict the command tests against
//!   (`audit`: a manipulable admission; `equilibrium --reported`: not an
//!   equilibrium; `equilibrium --admission`: manipulable in equilibrium;
//!   `fixtures`: some golden check failed)
//! * 2 — usage, parse, or validation errors
//! * 3 — the evaluation budget was exceeded

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, AuditError, EquilibriumAdmissionVerdict, NashVerdict, PreferenceDomain,
};
use crate::mechanisms::{apply_mechanism, Family, MechanismSpec, RoundLengths};
use crate::model::{
    Environment, Matching, Names, Preference, PreferenceProfile, PriorityOrder, Problem, SchoolId,
    StudentId,
};
use crate::scenarios::{self, ReformCriterion};
use crate::stability;

// ---------------------------------------------------------------------------
// problem files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    students: Vec<String>,
    schools: Vec<SchoolEntry>,
    /// either {"common": [student names]} or one entry per school name;
    /// "common" is a reserved key
    priorities: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preferences: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    fpf_schools: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SchoolEntry {
    name: String,
    capacity: u32,
}

/// A parsed and validated problem file. Environment-only files (no
/// `preferences` key) load with an all-empty profile and
/// `has_preferences = false`.
pub struct LoadedProblem {
    pub problem: Problem,
    pub names: Names,
    pub fpf_schools: BTreeSet<SchoolId>,
    pub has_preferences: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FileError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

/// Parses the JSON problem schema: names are resolved to dense indices and
/// the result must pass structural validation.
pub fn parse_problem_file(text: &str) -> Result<LoadedProblem, FileError> {
    let file: ProblemFile =
        serde_json::from_str(text).map_err(|e| FileError::Parse(e.to_string()))?;
    let names = Names {
        students: file.students.clone(),
        schools: file.schools.iter().map(|s| s.name.clone()).collect(),
    };
    let n = names.students.len();
    let m = names.schools.len();
    for (label, list) in [("student", &names.students), ("school", &names.schools)] {
        let mut seen = BTreeSet::new();
        for name in list {
            if !seen.insert(name) {
                return Err(FileError::Validation(format!(
                    "duplicate {label} name `{name}`"
                )));
            }
        }
    }

    let student = |name: &str| {
        names
            .student_index(name)
            .ok_or_else(|| FileError::Validation(format!("unknown student `{name}`")))
    };
    let school = |name: &str| {
        names
            .school_index(name)
            .ok_or_else(|| FileError::Validation(format!("unknown school `{name}`")))
    };

    let priorities: Vec<PriorityOrder> = if file.priorities.len() == 1
        && file.priorities.contains_key("common")
    {
        let order = file.priorities["common"]
            .iter()
            .map(|s| student(s))
            .collect::<Result<Vec<_>, _>>()?;
        vec![PriorityOrder::new(order); m]
    } else {
        if file.priorities.contains_key("common") {
            return Err(FileError::Validation(
                "`common` cannot be mixed with per-school priorities".into(),
            ));
        }
        let mut per_school = Vec::with_capacity(m);
        for name in &names.schools {
            let list = file.priorities.get(name).ok_or_else(|| {
                FileError::Validation(format!("missing priority order for school `{name}`"))
            })?;
            let order = list
                .iter()
                .map(|s| student(s))
                .collect::<Result<Vec<_>, _>>()?;
            per_school.push(PriorityOrder::new(order));
        }
        per_school
    };

    let mut lists = vec![Preference::empty(); n];
    let has_preferences = file.preferences.is_some();
    if let Some(preferences) = &file.preferences {
        for (who, ranked) in preferences {
            let i = student(who)?;
            let ranking = ranked
                .iter()
                .map(|s| school(s))
                .collect::<Result<Vec<_>, _>>()?;
            lists[i.index()] = Preference::new(ranking);
        }
    }

    let capacities = file.schools.iter().map(|s| s.capacity).collect();
    let problem = Problem::new(Environment::new(priorities, capacities), PreferenceProfile::new(lists));
    let report = problem.validate();
    if !report.is_structurally_valid() {
        let details: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(FileError::Validation(details.join("; ")));
    }

    let fpf_schools = file
        .fpf_schools
        .iter()
        .map(|s| school(s))
        .collect::<Result<BTreeSet<_>, _>>()?;

    Ok(LoadedProblem {
        problem,
        names,
        fpf_schools,
        has_preferences,
    })
}

/// Serializes a problem back into the file schema (inverse of
/// [`parse_problem_file`]).
pub fn render_problem_file(
    problem: &Problem,
    names: &Names,
    fpf_schools: &BTreeSet<SchoolId>,
    include_preferences: bool,
) -> String {
    let env = &problem.environment;
    let mut priorities = BTreeMap::new();
    if let Some(common) = env.common_priority() {
        priorities.insert(
            "common".to_string(),
            common
                .order()
                .iter()
                .map(|&i| names.student(i).to_string())
                .collect(),
        );
    } else {
        for (s, order) in env.priorities.iter().enumerate() {
            priorities.insert(
                names.school(SchoolId(s as u32)).to_string(),
                order
                    .order()
                    .iter()
                    .map(|&i| names.student(i).to_string())
                    .collect(),
            );
        }
    }
    let preferences = include_preferences.then(|| {
        problem
            .profile
            .preferences()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                (
                    names.student(StudentId(i as u32)).to_string(),
                    p.ranking().iter().map(|&s| names.school(s).to_string()).collect(),
                )
            })
            .collect()
    });
    let file = ProblemFile {
        students: names.students.clone(),
        schools: names
            .schools
            .iter()
            .zip(&env.capacities)
            .map(|(name, &capacity)| SchoolEntry {
                name: name.clone(),
                capacity,
            })
            .collect(),
        priorities,
        preferences,
        fpf_schools: fpf_schools
            .iter()
            .map(|&s| names.school(s).to_string())
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("schema serializes")
}

// ---------------------------------------------------------------------------
// mechanism spec grammar
// ---------------------------------------------------------------------------

/// A parsed (but not yet name-resolved) mechanism spec:
/// `gs`, `gs:k=3`, `sd:k=6`, `boston:k=4`, `fpf:k=3:fpf=s5,s7`,
/// `chinese:e=2`, `chinese:rounds=1,2,3`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SpecExpr {
    pub family: Family,
    pub constraint: Option<u32>,
    pub fpf_names: Vec<String>,
    pub rounds: Option<RoundLengths>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecParseError {
    #[error("cannot parse mechanism spec: {0}")]
    Malformed(String),
    #[error("unknown school `{0}` in first-preference-first set")]
    UnknownSchool(String),
}

pub fn parse_mechanism_spec(text: &str) -> Result<SpecExpr, SpecParseError> {
    let mut segments = text.split(':');
    let family = match segments.next().unwrap_or("") {
        "gs" => Family::Gs,
        "sd" => Family::Sd,
        "fpf" => Family::Fpf,
        "boston" => Family::Boston,
        "chinese" => Family::Chinese,
        other => {
            return Err(SpecParseError::Malformed(format!(
                "unknown family `{other}` (expected gs, sd, fpf, boston or chinese)"
            )))
        }
    };
    let mut expr = SpecExpr {
        family,
        constraint: None,
        fpf_names: Vec::new(),
        rounds: None,
    };
    for segment in segments {
        let (key, value) = segment
            .split_once('=')
            .ok_or_else(|| SpecParseError::Malformed(format!("expected key=value, got `{segment}`")))?;
        let duplicate = |present: bool| {
            if present {
                Err(SpecParseError::Malformed(format!("duplicate key `{key}`")))
            } else {
                Ok(())
            }
        };
        match key {
            "k" => {
                duplicate(expr.constraint.is_some())?;
                let k: u32 = value
                    .parse()
                    .map_err(|_| SpecParseError::Malformed(format!("invalid k `{value}`")))?;
                if k < 1 {
                    return Err(SpecParseError::Malformed("k must be at least 1".into()));
                }
                expr.constraint = Some(k);
            }
            "fpf" => {
                if family != Family::Fpf {
                    return Err(SpecParseError::Malformed(
                        "fpf= is only valid for the fpf family".into(),
                    ));
                }
                duplicate(!expr.fpf_names.is_empty())?;
                expr.fpf_names = value.split(',').map(|s| s.trim().to_string()).collect();
                if expr.fpf_names.iter().any(|s| s.is_empty()) {
                    return Err(SpecParseError::Malformed("empty school name in fpf=".into()));
                }
            }
            "e" => {
                if family != Family::Chinese {
                    return Err(SpecParseError::Malformed(
                        "e= is only valid for the chinese family".into(),
                    ));
                }
                duplicate(expr.rounds.is_some())?;
                let e: u32 = value
                    .parse()
                    .map_err(|_| SpecParseError::Malformed(format!("invalid e `{value}`")))?;
                if e < 1 {
                    return Err(SpecParseError::Malformed("e must be at least 1".into()));
                }
                expr.rounds = Some(RoundLengths::Uniform(e));
            }
            "rounds" => {
                if family != Family::Chinese {
                    return Err(SpecParseError::Malformed(
                        "rounds= is only valid for the chinese family".into(),
                    ));
                }
                duplicate(expr.rounds.is_some())?;
                let lens = value
                    .split(',')
                    .map(|v| v.trim().parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| {
                        SpecParseError::Malformed(format!("invalid round list `{value}`"))
                    })?;
                if lens.is_empty() || lens.iter().any(|&l| l < 1) {
                    return Err(SpecParseError::Malformed(
                        "every round length must be at least 1".into(),
                    ));
                }
                expr.rounds = Some(RoundLengths::Explicit(lens));
            }
            other => {
                return Err(SpecParseError::Malformed(format!("unknown key `{other}`")));
            }
        }
    }
    if family == Family::Chinese && expr.rounds.is_none() {
        return Err(SpecParseError::Malformed(
            "the chinese family requires e= or rounds=".into(),
        ));
    }
    Ok(expr)
}

impl SpecExpr {
    /// Resolves school names against the problem's naming.
    pub fn resolve(&self, names: &Names) -> Result<MechanismSpec, SpecParseError> {
        let fpf_schools = self
            .fpf_names
            .iter()
            .map(|name| {
                names
                    .school_index(name)
                    .ok_or_else(|| SpecParseError::UnknownSchool(name.clone()))
            })
            .collect::<Result<BTreeSet<_>, _>>()?;
        Ok(MechanismSpec {
            family: self.family,
            constraint: self.constraint,
            fpf_schools,
            rounds: self.rounds.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// command line
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "matchlab",
    version,
    about = "School-choice mechanisms and brute-force manipulability audits",
    after_help = "Exit codes: 0 success / negative verdict absent; 1 negative verdict found; \
                  2 usage or parse error; 3 evaluation budget exceeded."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// Evaluation budget (overrides MATCHLAB_CAP and the built-in default).
    #[arg(long, global = true)]
    cap: Option<u64>,
    /// Seed for sampled preference domains.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Length cap for the full preference domain.
    #[arg(long, global = true)]
    max_len: Option<usize>,
    /// Worker threads; outputs are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Criterion {
    Immunity,
    Manipulability,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a mechanism to a problem and report the matching and its
    /// stability (exit 0 on success).
    Match {
        /// Problem file (JSON).
        problem: PathBuf,
        /// Mechanism spec, e.g. gs:k=3 or fpf:k=3:fpf=s5.
        #[arg(long)]
        mech: String,
    },
    /// Audit which admissions are strategy-proof per student (exit 1 when
    /// any admission is manipulable).
    Audit {
        /// Problem or environment file (preferences are ignored).
        input: PathBuf,
        #[arg(long)]
        mech: String,
        /// Preference domain: full (default), tiers=s1,s2/s3,s4 or sample=N.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Compare two mechanisms on an environment (exit 0 on a completed
    /// comparison, whatever the verdict).
    Compare {
        /// Environment file (preferences are ignored).
        env: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, value_enum, default_value_t = Criterion::Immunity)]
        criterion: Criterion,
        #[arg(long)]
        domain: Option<String>,
    },
    /// Equilibrium checks: verify a reported profile (exit 1 when it is not
    /// an equilibrium) or run the refined admission audit (exit 1 when the
    /// admission is manipulable in equilibrium).
    Equilibrium {
        problem: PathBuf,
        #[arg(long)]
        mech: String,
        /// Reported-profile file: {"preferences": {...}}.
        #[arg(long)]
        reported: Option<PathBuf>,
        /// Audit one admission, written student:school.
        #[arg(long)]
        admission: Option<String>,
    },
    /// Run golden fixtures (all by default); exit 0 iff every check passes.
    Fixtures {
        names: Vec<String>,
        /// Skip the expensive equilibrium-audit checks.
        #[arg(long)]
        quick: bool,
    },
    /// Evaluate documented reform rows on a supplied environment.
    Reforms {
        #[arg(long)]
        env: PathBuf,
        /// Substring filter on the system name.
        #[arg(long)]
        rows: Option<String>,
        #[arg(long, value_enum, default_value_t = Criterion::Immunity)]
        criterion: Criterion,
    },
}

/// Runs the CLI on the given argv (including the program name), writing all
/// output to `out`; returns the exit code.
pub fn run_command<W: Write>(argv: &[String], out: &mut W) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{e}");
            // --help and --version are successful exits
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(out, "thread pool: {e}");
            return 2;
        }
    };
    let mut buf = Vec::new();
    let code = pool.install(|| match execute(&cli, &mut buf) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(buf, "{e}");
            e.exit_code()
        }
    });
    let _ = out.write_all(&buf);
    code
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    File(#[from] FileError),
    #[error("{0}")]
    Spec(#[from] SpecParseError),
    #[error("{0}")]
    Audit(#[from] AuditError),
    #[error("{0}")]
    Mechanism(#[from] crate::mechanisms::MechanismError),
    #[error("{0}")]
    Reform(#[from] scenarios::ReformError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Audit(AuditError::SizeCapExceeded { .. }) => 3,
            CliError::Reform(scenarios::ReformError::Audit(AuditError::SizeCapExceeded {
                ..
            })) => 3,
            _ => 2,
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn default_cap(cli_cap: Option<u64>) -> u64 {
    cli_cap
        .or_else(|| {
            std::env::var("MATCHLAB_CAP")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(analysis::DEFAULT_SIZE_CAP)
}

fn build_domain(
    spec: Option<&str>,
    names: &Names,
    max_len: Option<usize>,
    seed: Option<u64>,
    cap: u64,
) -> Result<PreferenceDomain, CliError> {
    let domain = match spec {
        None | Some("full") => match max_len {
            Some(l) => PreferenceDomain::full_capped(l),
            None => PreferenceDomain::full(),
        },
        Some(text) => {
            if let Some(tiers) = text.strip_prefix("tiers=") {
                let mut parsed = Vec::new();
                for tier in tiers.split('/') {
                    let mut ids = Vec::new();
                    for name in tier.split(',') {
                        let id = names.school_index(name.trim()).ok_or_else(|| {
                            CliError::Usage(format!("unknown school `{name}` in --domain"))
                        })?;
                        ids.push(id);
                    }
                    parsed.push(ids);
                }
                PreferenceDomain::tiered(parsed)
            } else if let Some(count) = text.strip_prefix("sample=") {
                let count: usize = count
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid sample count `{count}`")))?;
                PreferenceDomain::sampled(count, seed.unwrap_or(0))
            } else {
                return Err(CliError::Usage(format!(
                    "unknown domain `{text}` (expected full, tiers=... or sample=N)"
                )));
            }
        }
    };
    Ok(domain.with_cap(cap))
}

fn resolve_spec(
    text: &str,
    loaded: &LoadedProblem,
) -> Result<MechanismSpec, CliError> {
    let expr = parse_mechanism_spec(text)?;
    let mut spec = expr.resolve(&loaded.names)?;
    // an fpf spec without its own school set borrows the file's declaration
    if spec.family == Family::Fpf && spec.fpf_schools.is_empty() {
        spec.fpf_schools = loaded.fpf_schools.clone();
    }
    Ok(spec)
}

fn execute<W: Write>(cli: &Cli, out: &mut W) -> Result<i32, CliError> {
    let cap = default_cap(cli.cap);
    match &cli.command {
        Command::Match { problem, mech } => {
            let loaded = parse_problem_file(&read_file(problem)?)?;
            let spec = resolve_spec(mech, &loaded)?;
            let mu = apply_mechanism(&spec, &loaded.problem)?;
            let truncated = match spec.constraint {
                Some(k) => loaded.problem.truncate(k as usize),
                None => loaded.problem.clone(),
            };
            let report = MatchReport {
                schema: 1,
                command: "match",
                mechanism: spec.to_string(),
                matching: render_assignment(&mu, &loaded.names),
                individually_rational: stability::is_individually_rational(&loaded.problem, &mu),
                non_wasteful: stability::is_non_wasteful(&loaded.problem, &mu),
                justified_envy: stability::justified_envy_pairs(&loaded.problem, &mu)
                    .into_iter()
                    .map(|(i, j, s)| EnvyEntry {
                        envious: loaded.names.student(i).to_string(),
                        envied: loaded.names.student(j).to_string(),
                        school: loaded.names.school(s).to_string(),
                    })
                    .collect(),
                stable_for_submitted_profile: stability::is_stable(&loaded.problem, &mu),
                stable_for_truncated_profile: stability::is_stable(&truncated, &mu),
            };
            match cli.format {
                Format::Json => emit_json(out, &report),
                Format::Human => {
                    let _ = writeln!(out, "mechanism: {}", report.mechanism);
                    for entry in &report.matching {
                        let _ = writeln!(
                            out,
                            "  {} -> {}",
                            entry.student,
                            entry.school.as_deref().unwrap_or("∅")
                        );
                    }
                    let _ = writeln!(
                        out,
                        "individually rational: {}; non-wasteful: {}; envy pairs: {}",
                        report.individually_rational,
                        report.non_wasteful,
                        report.justified_envy.len()
                    );
                    let _ = writeln!(
                        out,
                        "stable for submitted profile: {}; for truncated profile: {}",
                        report.stable_for_submitted_profile, report.stable_for_truncated_profile
                    );
                }
            }
            Ok(0)
        }
        Command::Audit {
            input,
            mech,
            domain,
        } => {
            let loaded = parse_problem_file(&read_file(input)?)?;
            let spec = resolve_spec(mech, &loaded)?;
            let domain = build_domain(domain.as_deref(), &loaded.names, cli.max_len, cli.seed, cap)?;
            let sets =
                analysis::strategyproof_school_sets(&spec, &loaded.problem.environment, &domain)?;
            let names = &loaded.names;
            let report = AuditReport {
                schema: 1,
                command: "audit",
                mechanism: spec.to_string(),
                domain: sets.domain_label.clone(),
                cap,
                strategy_proof: sets
                    .strategy_proof
                    .iter()
                    .enumerate()
                    .map(|(i, schools)| StudentSchools {
                        student: names.student(StudentId(i as u32)).to_string(),
                        schools: schools.iter().map(|&s| names.school(s).to_string()).collect(),
                    })
                    .collect(),
                witnesses: sets
                    .witnesses
                    .iter()
                    .map(|((i, s), w)| WitnessEntry::render(*i, Some(*s), w, names))
                    .collect(),
            };
            let manipulable = !report.witnesses.is_empty();
            match cli.format {
                Format::Json => emit_json(out, &report),
                Format::Human => {
                    let _ = writeln!(
                        out,
                        "strategy-proof admissions via {} over the {} domain:",
                        report.mechanism, report.domain
                    );
                    for row in &report.strategy_proof {
                        let _ = writeln!(
                            out,
                            "  {}: {}",
                            row.student,
                            if row.schools.is_empty() {
                                "(none)".to_string()
                            } else {
                                row.schools.join(", ")
                            }
                        );
                    }
                    let _ = writeln!(out, "manipulable admissions: {}", report.witnesses.len());
                }
            }
            Ok(if manipulable { 1 } else { 0 })
        }
        Command::Compare {
            env,
            a,
            b,
            criterion,
            domain,
        } => {
            let loaded = parse_problem_file(&read_file(env)?)?;
            let spec_a = resolve_spec(a, &loaded)?;
            let spec_b = resolve_spec(b, &loaded)?;
            let domain = build_domain(domain.as_deref(), &loaded.names, cli.max_len, cli.seed, cap)?;
            let envs = vec![loaded.problem.environment.clone()];
            let names = &loaded.names;
            let immunity = match criterion {
                Criterion::Immunity | Criterion::Both => Some(analysis::compare_immunity(
                    &spec_a, &spec_b, &envs, &domain,
                )?),
                Criterion::Manipulability => None,
            };
            let manipulability = match criterion {
                Criterion::Manipulability | Criterion::Both => Some(
                    analysis::compare_manipulability(&spec_a, &spec_b, &envs, &domain)?,
                ),
                Criterion::Immunity => None,
            };
            let report = CompareReport {
                schema: 1,
                command: "compare",
                a: spec_a.to_string(),
                b: spec_b.to_string(),
                domain: domain.label(),
                cap,
                immunity: immunity.as_ref().map(|cmp| ImmunitySection {
                    verdict: immunity_verdict_str(cmp.overall).to_string(),
                    scope: cmp.scope_note.clone(),
                    per_env: cmp
                        .per_env
                        .iter()
                        .map(|e| EnvImmunitySection {
                            verdict: immunity_verdict_str(e.verdict).to_string(),
                            strategy_proof_a: render_school_sets(&e.sp_a, names),
                            strategy_proof_b: render_school_sets(&e.sp_b, names),
                            strict_a_over_b: e
                                .strict_a_over_b
                                .iter()
                                .map(|w| {
                                    WitnessEntry::render(
                                        w.student,
                                        Some(w.school),
                                        &w.witness,
                                        names,
                                    )
                                })
                                .collect(),
                            strict_b_over_a: e
                                .strict_b_over_a
                                .iter()
                                .map(|w| {
                                    WitnessEntry::render(
                                        w.student,
                                        Some(w.school),
                                        &w.witness,
                                        names,
                                    )
                                })
                                .collect(),
                        })
                        .collect(),
                }),
                manipulability: manipulability.as_ref().map(|cmp| ManipulabilitySection {
                    verdict: manipulability_verdict_str(cmp.overall).to_string(),
                    scope: cmp.scope_note.clone(),
                    per_env: cmp
                        .per_env
                        .iter()
                        .map(|e| EnvManipulabilitySection {
                            verdict: manipulability_verdict_str(e.verdict).to_string(),
                            profiles_scanned: e.profiles_scanned,
                            vulnerable_a: e.vulnerable_a,
                            vulnerable_b: e.vulnerable_b,
                            only_a: e.only_a,
                            only_b: e.only_b,
                            example_only_a: e
                                .example_only_a
                                .as_ref()
                                .map(|w| WitnessEntry::render(w.student, None, w, names)),
                            example_only_b: e
                                .example_only_b
                                .as_ref()
                                .map(|w| WitnessEntry::render(w.student, None, w, names)),
                        })
                        .collect(),
                }),
            };
            match cli.format {
                Format::Json => emit_json(out, &report),
                Format::Human => {
                    let _ = writeln!(out, "A = {}, B = {}", report.a, report.b);
                    if let Some(section) = &report.immunity {
                        let _ = writeln!(out, "immunity: {} ({})", section.verdict, section.scope);
                    }
                    if let Some(section) = &report.manipulability {
                        let _ = writeln!(
                            out,
                            "manipulability: {} ({})",
                            section.verdict, section.scope
                        );
                    }
                }
            }
            Ok(0)
        }
        Command::Equilibrium {
            problem,
            mech,
            reported,
            admission,
        } => {
            let loaded = parse_problem_file(&read_file(problem)?)?;
            let spec = resolve_spec(mech, &loaded)?;
            let domain = build_domain(None, &loaded.names, cli.max_len, cli.seed, cap)?;
            match (reported, admission) {
                (Some(reported_path), None) => {
                    let reported = parse_reported_profile(
                        &read_file(reported_path)?,
                        &loaded.names,
                    )?;
                    let verdict = analysis::is_nash_equilibrium(
                        &spec,
                        &loaded.problem.profile,
                        &reported,
                        &loaded.problem.environment,
                        &domain,
                    )?;
                    let report = EquilibriumReport {
                        schema: 1,
                        command: "equilibrium",
                        mechanism: spec.to_string(),
                        mode: "reported-profile",
                        domain: domain.label(),
                        cap,
                        equilibrium: Some(verdict.is_equilibrium()),
                        deviator: match &verdict {
                            NashVerdict::NotEquilibrium { deviator, .. } => {
                                Some(loaded.names.student(*deviator).to_string())
                            }
                            NashVerdict::Equilibrium => None,
                        },
                        strategy_proof_in_equilibrium: None,
                        witness: None,
                    };
                    let code = if verdict.is_equilibrium() { 0 } else { 1 };
                    emit_equilibrium(out, cli.format, &report);
                    Ok(code)
                }
                (None, Some(admission)) => {
                    let (student_name, school_name) =
                        admission.split_once(':').ok_or_else(|| {
                            CliError::Usage("--admission expects student:school".into())
                        })?;
                    let student = loaded.names.student_index(student_name).ok_or_else(|| {
                        CliError::Usage(format!("unknown student `{student_name}`"))
                    })?;
                    let school = loaded.names.school_index(school_name).ok_or_else(|| {
                        CliError::Usage(format!("unknown school `{school_name}`"))
                    })?;
                    let verdict = analysis::strategyproof_admission_in_equilibrium(
                        &spec,
                        &loaded.problem.environment,
                        student,
                        school,
                        &domain,
                    )?;
                    let report = EquilibriumReport {
                        schema: 1,
                        command: "equilibrium",
                        mechanism: spec.to_string(),
                        mode: "admission",
                        domain: domain.label(),
                        cap,
                        equilibrium: None,
                        deviator: None,
                        strategy_proof_in_equilibrium: Some(verdict.is_strategy_proof()),
                        witness: match &verdict {
                            EquilibriumAdmissionVerdict::NotStrategyProofInEquilibrium {
                                witness,
                                ..
                            } => Some(WitnessEntry::render(
                                witness.student,
                                witness.target_school,
                                witness,
                                &loaded.names,
                            )),
                            EquilibriumAdmissionVerdict::StrategyProofInEquilibrium => None,
                        },
                    };
                    let code = if verdict.is_strategy_proof() { 0 } else { 1 };
                    emit_equilibrium(out, cli.format, &report);
                    Ok(code)
                }
                _ => Err(CliError::Usage(
                    "equilibrium requires exactly one of --reported or --admission".into(),
                )),
            }
        }
        Command::Fixtures { names, quick } => {
            let selected: Vec<&str> = if names.is_empty() {
                scenarios::fixture_names()
            } else {
                names.iter().map(|s| s.as_str()).collect()
            };
            let mut results = Vec::new();
            for name in selected {
                let fx = scenarios::fixture(name)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                for check in fx.checks.iter().filter(|c| !(*quick && c.is_expensive())) {
                    results.push(scenarios::run_check(&fx, check));
                }
            }
            let all_pass = results.iter().all(|r| r.pass);
            let report = FixturesReport {
                schema: 1,
                command: "fixtures",
                results: results
                    .iter()
                    .map(|r| FixtureResult {
                        fixture: r.fixture.clone(),
                        check: r.label.clone(),
                        pass: r.pass,
                        detail: r.detail.clone(),
                    })
                    .collect(),
                all_pass,
            };
            match cli.format {
                Format::Json => emit_json(out, &report),
                Format::Human => {
                    for r in &report.results {
                        let _ = writeln!(
                            out,
                            "{} {}/{} — {}",
                            if r.pass { "PASS" } else { "FAIL" },
                            r.fixture,
                            r.check,
                            r.detail
                        );
                    }
                    let _ = writeln!(out, "all pass: {all_pass}");
                }
            }
            Ok(if all_pass { 0 } else { 1 })
        }
        Command::Reforms {
            env,
            rows,
            criterion,
        } => {
            let loaded = parse_problem_file(&read_file(env)?)?;
            let audit_env = scenarios::AuditEnv {
                label: env
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "environment".into()),
                environment: loaded.problem.environment.clone(),
                names: loaded.names.clone(),
                fpf_schools: loaded.fpf_schools.clone(),
            };
            let domain = build_domain(None, &loaded.names, cli.max_len, cli.seed, cap)?;
            let reform_criterion = match criterion {
                Criterion::Immunity => ReformCriterion::Immunity,
                Criterion::Manipulability => ReformCriterion::Manipulability,
                Criterion::Both => ReformCriterion::Both,
            };
            let needle = rows.as_deref().map(str::to_lowercase);
            let mut rendered = Vec::new();
            for record in scenarios::reform_table() {
                if let Some(needle) = &needle {
                    if !record.system.to_lowercase().contains(needle) {
                        continue;
                    }
                }
                let report =
                    scenarios::reform_report(&[clone_env(&audit_env)], &record, &domain, reform_criterion)?;
                rendered.push(ReformRow {
                    system: report.system.clone(),
                    year: report.year,
                    from: report.from.to_string(),
                    to: report.to.to_string(),
                    immunity: report.immunity.as_ref().map(|(v, _)| v.as_str().to_string()),
                    manipulability: report
                        .manipulability
                        .as_ref()
                        .map(|(v, _)| v.as_str().to_string()),
                });
            }
            let report = ReformsReport {
                schema: 1,
                command: "reforms",
                environment: audit_env.label.clone(),
                domain: domain.label(),
                cap,
                scope: format!(
                    "verdicts recomputed on the supplied environment only, over the {} domain",
                    domain.label()
                ),
                rows: rendered,
            };
            match cli.format {
                Format::Json => emit_json(out, &report),
                Format::Human => {
                    let _ = writeln!(out, "reform verdicts on {} ({})", report.environment, report.scope);
                    for row in &report.rows {
                        let _ = writeln!(
                            out,
                            "  {} {}: {} -> {}  immune: {}  manipulable: {}",
                            row.system,
                            row.year,
                            row.from,
                            row.to,
                            row.immunity.as_deref().unwrap_or("-"),
                            row.manipulability.as_deref().unwrap_or("-"),
                        );
                    }
                }
            }
            Ok(0)
        }
    }
}

fn clone_env(env: &scenarios::AuditEnv) -> scenarios::AuditEnv {
    scenarios::AuditEnv {
        label: env.label.clone(),
        environment: env.environment.clone(),
        names: env.names.clone(),
        fpf_schools: env.fpf_schools.clone(),
    }
}

fn parse_reported_profile(text: &str, names: &Names) -> Result<PreferenceProfile, CliError> {
    #[derive(Deserialize)]
    struct ReportedFile {
        preferences: BTreeMap<String, Vec<String>>,
    }
    let file: ReportedFile =
        serde_json::from_str(text).map_err(|e| FileError::Parse(e.to_string()))?;
    let mut lists = vec![Preference::empty(); names.students.len()];
    for (who, ranked) in &file.preferences {
        let i = names
            .student_index(who)
            .ok_or_else(|| FileError::Validation(format!("unknown student `{who}`")))?;
        let ranking = ranked
            .iter()
            .map(|s| {
                names
                    .school_index(s)
                    .ok_or_else(|| FileError::Validation(format!("unknown school `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        lists[i.index()] = Preference::new(ranking);
    }
    Ok(PreferenceProfile::new(lists))
}

// ---------------------------------------------------------------------------
// report schemas (versioned)
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AssignmentEntry {
    student: String,
    school: Option<String>,
}

#[derive(Serialize)]
struct EnvyEntry {
    envious: String,
    envied: String,
    school: String,
}

#[derive(Serialize)]
struct MatchReport {
    schema: u32,
    command: &'static str,
    mechanism: String,
    matching: Vec<AssignmentEntry>,
    individually_rational: bool,
    non_wasteful: bool,
    justified_envy: Vec<EnvyEntry>,
    stable_for_submitted_profile: bool,
    stable_for_truncated_profile: bool,
}

#[derive(Serialize)]
struct StudentSchools {
    student: String,
    schools: Vec<String>,
}

#[derive(Serialize)]
struct WitnessEntry {
    student: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_school: Option<String>,
    misreport: Vec<String>,
    truthful_outcome: Option<String>,
    deviating_outcome: Option<String>,
    profile: BTreeMap<String, Vec<String>>,
}

impl WitnessEntry {
    fn render(
        student: StudentId,
        school: Option<SchoolId>,
        w: &analysis::ManipulationWitness,
        names: &Names,
    ) -> WitnessEntry {
        let list = |p: &Preference| -> Vec<String> {
            p.ranking().iter().map(|&s| names.school(s).to_string()).collect()
        };
        WitnessEntry {
            student: names.student(student).to_string(),
            target_school: school.map(|s| names.school(s).to_string()),
            misreport: list(&w.misreport),
            truthful_outcome: w.truthful_outcome.map(|s| names.school(s).to_string()),
            deviating_outcome: w.deviating_outcome.map(|s| names.school(s).to_string()),
            profile: w
                .profile
                .preferences()
                .iter()
                .enumerate()
                .map(|(i, p)| (names.student(StudentId(i as u32)).to_string(), list(p)))
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct AuditReport {
    schema: u32,
    command: &'static str,
    mechanism: String,
    domain: String,
    cap: u64,
    strategy_proof: Vec<StudentSchools>,
    witnesses: Vec<WitnessEntry>,
}

#[derive(Serialize)]
struct EnvImmunitySection {
    verdict: String,
    strategy_proof_a: Vec<StudentSchools>,
    strategy_proof_b: Vec<StudentSchools>,
    strict_a_over_b: Vec<WitnessEntry>,
    strict_b_over_a: Vec<WitnessEntry>,
}

#[derive(Serialize)]
struct ImmunitySection {
    verdict: String,
    scope: String,
    per_env: Vec<EnvImmunitySection>,
}

#[derive(Serialize)]
struct EnvManipulabilitySection {
    verdict: String,
    profiles_scanned: u64,
    vulnerable_a: u64,
    vulnerable_b: u64,
    only_a: u64,
    only_b: u64,
    example_only_a: Option<WitnessEntry>,
    example_only_b: Option<WitnessEntry>,
}

#[derive(Serialize)]
struct ManipulabilitySection {
    verdict: String,
    scope: String,
    per_env: Vec<EnvManipulabilitySection>,
}

#[derive(Serialize)]
struct CompareReport {
    schema: u32,
    command: &'static str,
    a: String,
    b: String,
    domain: String,
    cap: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    immunity: Option<ImmunitySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    manipulability: Option<ManipulabilitySection>,
}

#[derive(Serialize)]
struct EquilibriumReport {
    schema: u32,
    command: &'static str,
    mechanism: String,
    mode: &'static str,
    domain: String,
    cap: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    equilibrium: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deviator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy_proof_in_equilibrium: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness: Option<WitnessEntry>,
}

#[derive(Serialize)]
struct FixtureResult {
    fixture: String,
    check: String,
    pass: bool,
    detail: String,
}

#[derive(Serialize)]
struct FixturesReport {
    schema: u32,
    command: &'static str,
    results: Vec<FixtureResult>,
    all_pass: bool,
}

#[derive(Serialize)]
struct ReformRow {
    system: String,
    year: u16,
    from: String,
    to: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    immunity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    manipulability: Option<String>,
}

#[derive(Serialize)]
struct ReformsReport {
    schema: u32,
    command: &'static str,
    environment: String,
    domain: String,
    cap: u64,
    scope: String,
    rows: Vec<ReformRow>,
}

fn render_assignment(mu: &Matching, names: &Names) -> Vec<AssignmentEntry> {
    mu.assignment()
        .iter()
        .enumerate()
        .map(|(i, a)| AssignmentEntry {
            student: names.student(StudentId(i as u32)).to_string(),
            school: a.map(|s| names.school(s).to_string()),
        })
        .collect()
}

fn render_school_sets(sets: &[BTreeSet<SchoolId>], names: &Names) -> Vec<StudentSchools> {
    sets.iter()
        .enumerate()
        .map(|(i, schools)| StudentSchools {
            student: names.student(StudentId(i as u32)).to_string(),
            schools: schools.iter().map(|&s| names.school(s).to_string()).collect(),
        })
        .collect()
}

fn immunity_verdict_str(v: analysis::ImmunityVerdict) -> &'static str {
    match v {
        analysis::ImmunityVerdict::AMoreImmune => "a_more_immune",
        analysis::ImmunityVerdict::BMoreImmune => "b_more_immune",
        analysis::ImmunityVerdict::Equal => "equal",
        analysis::ImmunityVerdict::Incomparable => "incomparable",
    }
}

fn manipulability_verdict_str(v: analysis::ManipulabilityVerdict) -> &'static str {
    match v {
        analysis::ManipulabilityVerdict::ALessManipulable => "a_less_manipulable",
        analysis::ManipulabilityVerdict::BLessManipulable => "b_less_manipulable",
        analysis::ManipulabilityVerdict::Equal => "equal",
        analysis::ManipulabilityVerdict::Incomparable => "incomparable",
    }
}

fn emit_json<W: Write, T: Serialize>(out: &mut W, value: &T) {
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(value).expect("reports serialize")
    );
}

fn emit_equilibrium<W: Write>(out: &mut W, format: Format, report: &EquilibriumReport) {
    match format {
        Format::Json => emit_json(out, report),
        Format::Human => {
            match report.mode {
                "reported-profile" => {
                    let _ = writeln!(
                        out,
                        "reported profile under {}: {}",
                        report.mechanism,
                        if report.equilibrium == Some(true) {
                            "Nash equilibrium".to_string()
                        } else {
                            format!(
                                "not an equilibrium (deviator {})",
                                report.deviator.as_deref().unwrap_or("?")
                            )
                        }
                    );
                }
                _ => {
                    let _ = writeln!(
                        out,
                        "admission audit under {}: {}",
                        report.mechanism,
                        if report.strategy_proof_in_equilibrium == Some(true) {
                            "strategy-proof in equilibrium"
                        } else {
                            "manipulable in equilibrium"
                        }
                    );
                }
            };
        }
    }
}
