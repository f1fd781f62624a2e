//! Brute-force manipulability audits.
//!
//! Everything here quantifies over an explicit [`PreferenceDomain`]: an
//! enumerable set of preference relations per student. Audits are exact
//! relative to that domain and label their reports with it. Scans run in a
//! fixed canonical order and report the first witness found in that order,
//! no matter how many worker threads participate, so results are bytewise
//! reproducible.
//!
//! The expensive audits factor their work through outcome tables: for a fixed
//! assignment of the other students' preferences, one evaluation per possible
//! report of the audited student yields their whole outcome function, which
//! then answers every "does a profitable deviation exist" question for that
//! slice without further mechanism runs. Three sound reductions keep the
//! tables small; each one is cross-checked against a naive scan in the tests:
//!
//! * a list constraint makes the mechanism read only length-k prefixes, so
//!   reports collapse to their truncations;
//! * under a serial dictatorship, a student's outcome only depends on the
//!   preferences of students with higher priority;
//! * under the parallel-rounds family, a student can obtain a school at all
//!   if and only if they obtain it by ranking it first.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;

use crate::mechanisms::{Engine, Family, MechanismError, MechanismSpec};
use crate::model::{Environment, Preference, PreferenceProfile, Problem, SchoolId, StudentId};

/// Default evaluation budget: audits estimating more mechanism evaluations
/// than this return [`AuditError::SizeCapExceeded`] instead of running.
pub const DEFAULT_SIZE_CAP: u64 = 10_000_000;

// ---------------------------------------------------------------------------
// enumeration helpers
// ---------------------------------------------------------------------------

/// All preference relations over `m` schools with at most `max_len`
/// acceptable schools (all lengths when `None`), ordered by length and then
/// lexicographically by school index. This order puts every truncation of a
/// list before the list itself.
pub fn enumerate_preferences(m: usize, max_len: Option<usize>) -> Vec<Preference> {
    let limit = max_len.unwrap_or(m).min(m);
    let mut out = Vec::new();
    out.push(Preference::empty());
    let mut current: Vec<SchoolId> = Vec::with_capacity(limit);
    let mut used = vec![false; m];
    for len in 1..=limit {
        extend_preferences(m, len, &mut current, &mut used, &mut out);
    }
    out
}

fn extend_preferences(
    m: usize,
    target_len: usize,
    current: &mut Vec<SchoolId>,
    used: &mut [bool],
    out: &mut Vec<Preference>,
) {
    if current.len() == target_len {
        out.push(Preference::new(current.clone()));
        return;
    }
    for s in 0..m {
        if !used[s] {
            used[s] = true;
            current.push(SchoolId(s as u32));
            extend_preferences(m, target_len, current, used, out);
            current.pop();
            used[s] = false;
        }
    }
}

/// Number of preference relations over `m` schools with length up to
/// `max_len`: sum over j of m!/(m-j)!.
pub fn preference_count(m: usize, max_len: Option<usize>) -> u128 {
    let limit = max_len.unwrap_or(m).min(m);
    let mut total = 1u128; // empty list
    let mut block = 1u128;
    for j in 0..limit {
        block = block.saturating_mul((m - j) as u128);
        total = total.saturating_add(block);
    }
    total
}

/// Capacity vectors used by the exhaustive problem enumerators.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum CapacityFamily {
    /// One seat everywhere.
    Ones,
    /// Every vector over {1, 2}.
    Small,
}

fn permutations_of(n: usize) -> Vec<Vec<u32>> {
    let mut items: Vec<u32> = (0..n as u32).collect();
    let mut out = Vec::new();
    permute(&mut items, 0, &mut out);
    out.sort();
    out
}

fn permute(items: &mut Vec<u32>, at: usize, out: &mut Vec<Vec<u32>>) {
    if at == items.len() {
        out.push(items.clone());
        return;
    }
    for i in at..items.len() {
        items.swap(at, i);
        permute(items, at + 1, out);
        items.swap(at, i);
    }
}

/// Every environment with `n` students and `m` schools: the full cross
/// product of priority orders per school and the capacity family. Sizes grow
/// as (n!)^m, so this is only meant for desk-scale sweeps.
pub fn enumerate_environments(n: usize, m: usize, caps: CapacityFamily) -> Vec<Environment> {
    let perms = permutations_of(n);
    let cap_vectors: Vec<Vec<u32>> = match caps {
        CapacityFamily::Ones => vec![vec![1; m]],
        CapacityFamily::Small => (0..(1u32 << m))
            .map(|mask| (0..m).map(|s| 1 + ((mask >> s) & 1)).collect())
            .collect(),
    };
    let mut priority_choices: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..m {
        let mut next = Vec::with_capacity(priority_choices.len() * perms.len());
        for partial in &priority_choices {
            for idx in 0..perms.len() {
                let mut v = partial.clone();
                v.push(idx);
                next.push(v);
            }
        }
        priority_choices = next;
    }
    let mut envs = Vec::new();
    for choice in &priority_choices {
        let priorities: Vec<_> = choice
            .iter()
            .map(|&idx| crate::model::PriorityOrder::from_indices(&perms[idx]))
            .collect();
        for caps in &cap_vectors {
            envs.push(Environment::new(priorities.clone(), caps.clone()));
        }
    }
    envs
}

/// A small deterministic family of environments for sweeps where the full
/// cross product is out of reach: common ascending and descending priorities,
/// per-school rotations, a mixed ascending/descending set, and one uneven
/// capacity vector.
pub fn representative_environments(n: usize, m: usize) -> Vec<Environment> {
    let asc: Vec<u32> = (0..n as u32).collect();
    let desc: Vec<u32> = (0..n as u32).rev().collect();
    let rotate = |by: usize| -> Vec<u32> { (0..n).map(|i| ((i + by) % n) as u32).collect() };
    let common_asc = crate::model::PriorityOrder::from_indices(&asc);
    let common_desc = crate::model::PriorityOrder::from_indices(&desc);
    let mut envs = vec![
        Environment::with_common_priority(common_asc.clone(), vec![1; m]),
        Environment::with_common_priority(common_desc, vec![1; m]),
        Environment::new(
            (0..m)
                .map(|s| crate::model::PriorityOrder::from_indices(&rotate(s)))
                .collect(),
            vec![1; m],
        ),
        Environment::new(
            (0..m)
                .map(|s| {
                    if s % 2 == 0 {
                        crate::model::PriorityOrder::from_indices(&asc)
                    } else {
                        crate::model::PriorityOrder::from_indices(&desc)
                    }
                })
                .collect(),
            vec![1; m],
        ),
    ];
    let mut caps = vec![1; m];
    if m > 0 {
        caps[0] = 2;
    }
    envs.push(Environment::with_common_priority(common_asc, caps));
    envs
}

/// Iterates every profile over the full preference space, last student
/// varying fastest.
pub fn enumerate_profiles(n: usize, m: usize) -> impl Iterator<Item = PreferenceProfile> {
    let prefs = Arc::new(enumerate_preferences(m, None));
    let total = (prefs.len() as u128).pow(n as u32);
    (0..total).map(move |id| {
        let mut rest = id;
        let mut lists = vec![Preference::empty(); n];
        for slot in (0..n).rev() {
            let d = (rest % prefs.len() as u128) as usize;
            rest /= prefs.len() as u128;
            lists[slot] = prefs[d].clone();
        }
        PreferenceProfile::new(lists)
    })
}

/// Every problem with `n` students and `m` schools: all environments from
/// [`enumerate_environments`] crossed with all profiles.
pub fn enumerate_problems(
    n: usize,
    m: usize,
    caps: CapacityFamily,
) -> impl Iterator<Item = Problem> {
    let envs = enumerate_environments(n, m, caps);
    envs.into_iter().flat_map(move |env| {
        enumerate_profiles(n, m).map(move |profile| Problem::new(env.clone(), profile))
    })
}

// ---------------------------------------------------------------------------
// preference domains
// ---------------------------------------------------------------------------

/// The set of preference relations an audit quantifies over.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum DomainKind {
    /// Every ranking of distinct schools, optionally length-capped.
    Full { max_len: Option<usize> },
    /// Full-length rankings consistent with an ordered tier partition: every
    /// school of tier j ranked above every school of tier j+1, order free
    /// within a tier.
    Tiered { tiers: Vec<Vec<SchoolId>> },
    /// An explicit list of admissible preferences per student.
    Explicit { per_student: Vec<Vec<Preference>> },
    /// A reproducible sample of the full space, drawn per student from the
    /// given seed.
    Sampled { count: usize, seed: u64 },
}

/// A [`DomainKind`] plus the evaluation budget audits may spend on it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PreferenceDomain {
    pub kind: DomainKind,
    pub size_cap: u64,
}

impl PreferenceDomain {
    pub fn full() -> Self {
        PreferenceDomain {
            kind: DomainKind::Full { max_len: None },
            size_cap: DEFAULT_SIZE_CAP,
        }
    }

    pub fn full_capped(max_len: usize) -> Self {
        PreferenceDomain {
            kind: DomainKind::Full {
                max_len: Some(max_len),
            },
            size_cap: DEFAULT_SIZE_CAP,
        }
    }

    pub fn tiered(tiers: Vec<Vec<SchoolId>>) -> Self {
        PreferenceDomain {
            kind: DomainKind::Tiered { tiers },
            size_cap: DEFAULT_SIZE_CAP,
        }
    }

    pub fn explicit(per_student: Vec<Vec<Preference>>) -> Self {
        PreferenceDomain {
            kind: DomainKind::Explicit { per_student },
            size_cap: DEFAULT_SIZE_CAP,
        }
    }

    pub fn sampled(count: usize, seed: u64) -> Self {
        PreferenceDomain {
            kind: DomainKind::Sampled { count, seed },
            size_cap: DEFAULT_SIZE_CAP,
        }
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.size_cap = cap;
        self
    }

    /// Short human-readable description used to label reports.
    pub fn label(&self) -> String {
        match &self.kind {
            DomainKind::Full { max_len: None } => "full".to_string(),
            DomainKind::Full { max_len: Some(l) } => format!("full(max_len={l})"),
            DomainKind::Tiered { tiers } => {
                let sizes: Vec<String> = tiers.iter().map(|t| t.len().to_string()).collect();
                format!("tiered({})", sizes.join("+"))
            }
            DomainKind::Explicit { .. } => "explicit".to_string(),
            DomainKind::Sampled { count, seed } => format!("sampled(count={count},seed={seed})"),
        }
    }

    /// True when the domain covers every preference relation; only then is an
    /// audit exact in the unqualified sense.
    pub fn is_exhaustive(&self) -> bool {
        matches!(self.kind, DomainKind::Full { max_len: None })
    }

    pub(crate) fn materialize(&self, n: usize, m: usize) -> Result<DomainTables, AuditError> {
        let per_student: Vec<Arc<Vec<Preference>>> = match &self.kind {
            DomainKind::Full { max_len } => {
                let shared = Arc::new(enumerate_preferences(m, *max_len));
                vec![shared; n]
            }
            DomainKind::Tiered { tiers } => {
                let mut seen = vec![false; m];
                for tier in tiers {
                    for s in tier {
                        if s.index() >= m || seen[s.index()] {
                            return Err(AuditError::InvalidDomain(
                                "tiers must partition the school set".into(),
                            ));
                        }
                        seen[s.index()] = true;
                    }
                }
                if seen.iter().any(|&b| !b) {
                    return Err(AuditError::InvalidDomain(
                        "tiers must partition the school set".into(),
                    ));
                }
                let shared = Arc::new(tier_consistent_preferences(tiers));
                vec![shared; n]
            }
            DomainKind::Explicit { per_student } => {
                if per_student.len() != n {
                    return Err(AuditError::InvalidDomain(format!(
                        "explicit domain lists {} students, problem has {n}",
                        per_student.len()
                    )));
                }
                if per_student.iter().any(|lists| lists.is_empty()) {
                    return Err(AuditError::InvalidDomain(
                        "every student needs at least one admissible preference".into(),
                    ));
                }
                per_student.iter().map(|v| Arc::new(v.clone())).collect()
            }
            DomainKind::Sampled { count, seed } => {
                let total = preference_count(m, None);
                if total > (1u128 << 40) {
                    return Err(AuditError::InvalidDomain(
                        "sampled domains support at most 12 schools".into(),
                    ));
                }
                let total = total as usize;
                (0..n)
                    .map(|i| {
                        if *count >= total {
                            return Arc::new(enumerate_preferences(m, None));
                        }
                        let stream = seed ^ (0x9E37_79B9_7F4A_7C15u64).wrapping_mul(i as u64 + 1);
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stream);
                        let mut picked =
                            rand::seq::index::sample(&mut rng, total, *count).into_vec();
                        picked.sort_unstable();
                        Arc::new(
                            picked
                                .into_iter()
                                .map(|idx| unrank_preference(m, idx as u128))
                                .collect(),
                        )
                    })
                    .collect()
            }
        };
        Ok(DomainTables {
            per_student,
            m,
            label: self.label(),
            // length-and-lex enumeration order containing every truncation
            truncation_closed: matches!(self.kind, DomainKind::Full { .. }),
        })
    }
}

/// All full-length rankings consistent with the tier partition, tiers in
/// order, permutations within a tier in lexicographic order, later tiers
/// varying fastest.
fn tier_consistent_preferences(tiers: &[Vec<SchoolId>]) -> Vec<Preference> {
    let mut lists: Vec<Vec<SchoolId>> = vec![vec![]];
    for tier in tiers {
        let perms = permutations_of(tier.len());
        let mut next = Vec::with_capacity(lists.len() * perms.len());
        for prefix in &lists {
            for perm in &perms {
                let mut v = prefix.clone();
                v.extend(perm.iter().map(|&p| tier[p as usize]));
                next.push(v);
            }
        }
        lists = next;
    }
    lists.into_iter().map(Preference::new).collect()
}

/// Preference at `index` in the [`enumerate_preferences`] order, computed
/// without materializing the space.
fn unrank_preference(m: usize, mut index: u128) -> Preference {
    if index == 0 {
        return Preference::empty();
    }
    index -= 1;
    let mut len = 1usize;
    loop {
        let block = falling_factorial(m, len);
        if index < block {
            break;
        }
        index -= block;
        len += 1;
    }
    let mut available: Vec<u32> = (0..m as u32).collect();
    let mut ranking = Vec::with_capacity(len);
    for pos in 0..len {
        let tail = falling_factorial(m - pos - 1, len - pos - 1);
        let choice = (index / tail) as usize;
        index %= tail;
        ranking.push(SchoolId(available.remove(choice)));
    }
    Preference::new(ranking)
}

/// Rank of a preference in the [`enumerate_preferences`] order over `m`
/// schools.
fn rank_in_enumeration(p: &Preference, m: usize) -> usize {
    let mut index = 0u128;
    for len in 0..p.len() {
        index += falling_factorial(m, len);
    }
    let mut available: Vec<u32> = (0..m as u32).collect();
    let mut within = 0u128;
    for (pos, s) in p.ranking().iter().enumerate() {
        let choice = available
            .iter()
            .position(|&a| a == s.0)
            .expect("school within range");
        within += choice as u128 * falling_factorial(m - pos - 1, p.len() - pos - 1);
        available.remove(choice);
    }
    (index + within) as usize
}

fn falling_factorial(m: usize, j: usize) -> u128 {
    let mut v = 1u128;
    for x in 0..j {
        v = v.saturating_mul((m - x) as u128);
    }
    v
}

pub(crate) struct DomainTables {
    per_student: Vec<Arc<Vec<Preference>>>,
    m: usize,
    label: String,
    truncation_closed: bool,
}

impl DomainTables {
    fn prefs(&self, student: usize) -> &[Preference] {
        &self.per_student[student]
    }

    fn size(&self, student: usize) -> usize {
        self.per_student[student].len()
    }
}

// ---------------------------------------------------------------------------
// errors, witnesses, verdicts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("audit would need an estimated {estimated} mechanism evaluations, cap is {cap}")]
    SizeCapExceeded { estimated: u128, cap: u64 },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error("invalid preference domain: {0}")]
    InvalidDomain(String),
}

/// The certificate returned by every negative audit: a profile, a deviating
/// student, their misreport, and both outcomes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ManipulationWitness {
    pub profile: PreferenceProfile,
    pub student: StudentId,
    pub misreport: Preference,
    pub truthful_outcome: Option<SchoolId>,
    pub deviating_outcome: Option<SchoolId>,
    pub target_school: Option<SchoolId>,
}

impl ManipulationWitness {
    /// Re-evaluates the mechanism on both profiles and checks that the
    /// deviation is strictly profitable (and hits the target school, when one
    /// is recorded).
    pub fn verify(&self, spec: &MechanismSpec, env: &Environment) -> bool {
        let p = Problem::new(env.clone(), self.profile.clone());
        let Ok(truthful) = crate::mechanisms::apply_mechanism(spec, &p) else {
            return false;
        };
        let deviated = p.with_report(self.student, self.misreport.clone());
        let Ok(deviating) = crate::mechanisms::apply_mechanism(spec, &deviated) else {
            return false;
        };
        let true_pref = self.profile.student(self.student);
        truthful.of(self.student) == self.truthful_outcome
            && deviating.of(self.student) == self.deviating_outcome
            && true_pref.prefers(self.deviating_outcome, self.truthful_outcome)
            && self
                .target_school
                .map_or(true, |s| self.deviating_outcome == Some(s))
    }
}

/// Verdict of a (student, school) admission audit.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum AdmissionVerdict {
    StrategyProof,
    NotStrategyProof(ManipulationWitness),
}

impl AdmissionVerdict {
    pub fn is_strategy_proof(&self) -> bool {
        matches!(self, AdmissionVerdict::StrategyProof)
    }
}

/// Per-student sets of schools whose admission is strategy-proof, plus a
/// witness for every school that is not.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SchoolSets {
    pub strategy_proof: Vec<BTreeSet<SchoolId>>,
    pub witnesses: BTreeMap<(StudentId, SchoolId), ManipulationWitness>,
    pub domain_label: String,
}

impl SchoolSets {
    pub fn is_strategy_proof(&self, i: StudentId, s: SchoolId) -> bool {
        self.strategy_proof[i.index()].contains(&s)
    }

    /// Students for whom admission to every school in `schools` is
    /// strategy-proof.
    pub fn fully_strategy_proof_students(&self, schools: &BTreeSet<SchoolId>) -> Vec<StudentId> {
        self.strategy_proof
            .iter()
            .enumerate()
            .filter(|(_, set)| schools.is_subset(set))
            .map(|(i, _)| StudentId(i as u32))
            .collect()
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum ImmunityVerdict {
    AMoreImmune,
    BMoreImmune,
    Equal,
    Incomparable,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum ManipulabilityVerdict {
    ALessManipulable,
    BLessManipulable,
    Equal,
    Incomparable,
}

/// A (student, school) admission that separates two mechanisms, with the
/// manipulation witness from the side where it is not strategy-proof.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StrictImmunityWitness {
    pub student: StudentId,
    pub school: SchoolId,
    pub witness: ManipulationWitness,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EnvImmunity {
    pub sp_a: Vec<BTreeSet<SchoolId>>,
    pub sp_b: Vec<BTreeSet<SchoolId>>,
    pub verdict: ImmunityVerdict,
    /// admissions strategy-proof via A but not via B
    pub strict_a_over_b: Vec<StrictImmunityWitness>,
    /// admissions strategy-proof via B but not via A
    pub strict_b_over_a: Vec<StrictImmunityWitness>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ImmunityComparison {
    pub per_env: Vec<EnvImmunity>,
    pub overall: ImmunityVerdict,
    pub domain_label: String,
    /// The definitional quantifier ranges over all environments; this report
    /// is scoped to the supplied collection.
    pub scope_note: String,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EnvManipulability {
    pub profiles_scanned: u64,
    pub vulnerable_a: u64,
    pub vulnerable_b: u64,
    pub only_a: u64,
    pub only_b: u64,
    pub verdict: ManipulabilityVerdict,
    pub example_only_a: Option<ManipulationWitness>,
    pub example_only_b: Option<ManipulationWitness>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ManipulabilityComparison {
    pub per_env: Vec<EnvManipulability>,
    pub overall: ManipulabilityVerdict,
    pub domain_label: String,
    pub scope_note: String,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum NashVerdict {
    Equilibrium,
    NotEquilibrium {
        deviator: StudentId,
        report: Preference,
        current_outcome: Option<SchoolId>,
        improved_outcome: Option<SchoolId>,
    },
}

impl NashVerdict {
    pub fn is_equilibrium(&self) -> bool {
        matches!(self, NashVerdict::Equilibrium)
    }
}

/// Record of the equilibrium verification attached to a refined-audit
/// witness.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EquilibriumCertificate {
    pub reported: PreferenceProfile,
    pub deviations_checked: u64,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum EquilibriumAdmissionVerdict {
    StrategyProofInEquilibrium,
    NotStrategyProofInEquilibrium {
        witness: ManipulationWitness,
        certificate: EquilibriumCertificate,
    },
}

impl EquilibriumAdmissionVerdict {
    pub fn is_strategy_proof(&self) -> bool {
        matches!(self, EquilibriumAdmissionVerdict::StrategyProofInEquilibrium)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SdCharacterization {
    pub agrees: bool,
    /// profile not vulnerable under the constrained dictatorship
    pub left: bool,
    /// constrained and unconstrained outcomes coincide
    pub right: bool,
}

/// Scan options. The defaults enable every sound reduction; tests flip them
/// off to prove the reductions change nothing.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct AuditOptions {
    /// Skip true preferences that cannot possibly support a witness under a
    /// constrained deferred-acceptance mechanism (more than k acceptable
    /// schools, target below the top k).
    pub lemma_pruning: bool,
    /// Collapse reports to their length-k truncations when the mechanism
    /// truncates at k anyway, and restrict misreport scans likewise.
    pub truncation_collapse: bool,
    /// Under a common-priority serial dictatorship, only quantify over the
    /// preferences of students ranked above the audited one.
    pub sd_prefix: bool,
    /// Decide reachability of the target school with a single rank-it-first
    /// probe for the parallel-rounds family.
    pub chinese_probe: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            lemma_pruning: true,
            truncation_collapse: true,
            sd_prefix: true,
            chinese_probe: true,
        }
    }
}

// ---------------------------------------------------------------------------
// fixed-profile scans: find_manipulation / is_vulnerable
// ---------------------------------------------------------------------------

/// The first (in enumeration order) misreport of student `i` in the domain
/// that strictly improves their outcome at `p`, or `None`.
pub fn find_manipulation(
    spec: &MechanismSpec,
    p: &Problem,
    i: StudentId,
    strategy_domain: &PreferenceDomain,
) -> Result<Option<ManipulationWitness>, AuditError> {
    find_manipulation_with(spec, p, i, strategy_domain, AuditOptions::default())
}

pub fn find_manipulation_with(
    spec: &MechanismSpec,
    p: &Problem,
    i: StudentId,
    strategy_domain: &PreferenceDomain,
    opts: AuditOptions,
) -> Result<Option<ManipulationWitness>, AuditError> {
    spec.validate()?;
    let tables = strategy_domain.materialize(p.student_count(), p.school_count())?;
    let estimated = 1u128 + tables.size(i.index()) as u128;
    check_cap(estimated, strategy_domain.size_cap)?;
    let mut engine = Engine::new(spec, &p.environment)?;
    let mut refs: Vec<&Preference> = p.profile.preferences().iter().collect();
    let truthful = engine.run(&refs)[i.index()];
    Ok(scan_misreports(
        spec, &mut engine, &mut refs, p, i, &tables, truthful, opts,
    ))
}

/// Scans students in index order and returns the first profitable
/// manipulation by any of them; one is enough to declare the profile
/// vulnerable.
pub fn is_vulnerable(
    spec: &MechanismSpec,
    p: &Problem,
    strategy_domain: &PreferenceDomain,
) -> Result<Option<ManipulationWitness>, AuditError> {
    is_vulnerable_with(spec, p, strategy_domain, AuditOptions::default())
}

pub fn is_vulnerable_with(
    spec: &MechanismSpec,
    p: &Problem,
    strategy_domain: &PreferenceDomain,
    opts: AuditOptions,
) -> Result<Option<ManipulationWitness>, AuditError> {
    spec.validate()?;
    let n = p.student_count();
    let tables = strategy_domain.materialize(n, p.school_count())?;
    let estimated = 1u128 + (0..n).map(|i| tables.size(i) as u128).sum::<u128>();
    check_cap(estimated, strategy_domain.size_cap)?;
    let mut engine = Engine::new(spec, &p.environment)?;
    let mut refs: Vec<&Preference> = p.profile.preferences().iter().collect();
    let truthful: Vec<Option<SchoolId>> = engine.run(&refs).to_vec();
    for i in 0..n {
        let student = StudentId(i as u32);
        if let Some(w) = scan_misreports(
            spec,
            &mut engine,
            &mut refs,
            p,
            student,
            &tables,
            truthful[i],
            opts,
        ) {
            return Ok(Some(w));
        }
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn scan_misreports<'a>(
    spec: &MechanismSpec,
    engine: &mut Engine,
    refs: &mut [&'a Preference],
    p: &'a Problem,
    i: StudentId,
    tables: &'a DomainTables,
    truthful: Option<SchoolId>,
    opts: AuditOptions,
) -> Option<ManipulationWitness> {
    let idx = i.index();
    let true_pref = p.profile.student(i);
    // a constrained deferred-acceptance mechanism cannot be manipulated by a
    // student whose list fits within the constraint
    if opts.lemma_pruning && lemma_applies(spec) {
        let k = spec.constraint.unwrap() as usize;
        if true_pref.len() <= k {
            return None;
        }
    }
    let scan_len = misreport_scan_len(spec, tables, idx, opts);
    let original = refs[idx];
    let mut found = None;
    for r in &tables.prefs(idx)[..scan_len] {
        refs[idx] = r;
        let outcome = engine.run(refs)[idx];
        if true_pref.prefers(outcome, truthful) {
            found = Some(ManipulationWitness {
                profile: p.profile.clone(),
                student: i,
                misreport: r.clone(),
                truthful_outcome: truthful,
                deviating_outcome: outcome,
                target_school: None,
            });
            break;
        }
    }
    refs[idx] = original;
    found
}

/// Misreports beyond the list constraint act exactly like their truncations,
/// and the enumeration order lists every truncation first, so the scan may
/// stop at the length-k prefix on enumeration-ordered domains.
fn misreport_scan_len(
    spec: &MechanismSpec,
    tables: &DomainTables,
    student: usize,
    opts: AuditOptions,
) -> usize {
    let d = tables.size(student);
    if !opts.truncation_collapse || !tables.truncation_closed {
        return d;
    }
    match spec.constraint {
        Some(k) => d.min(preference_count(tables.m, Some(k as usize)) as usize),
        None => d,
    }
}

fn lemma_applies(spec: &MechanismSpec) -> bool {
    spec.constraint.is_some() && matches!(spec.family, Family::Gs | Family::Sd)
}

fn check_cap(estimated: u128, cap: u64) -> Result<(), AuditError> {
    if estimated > cap as u128 {
        Err(AuditError::SizeCapExceeded { estimated, cap })
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// the outcome-table scanner over assignments of the other students
// ---------------------------------------------------------------------------

/// Iteration space over the other students' preferences: which students
/// participate as digits (ascending; earlier = more significant), everyone
/// else sits fixed at their domain's first entry.
struct OthersSpace {
    digits: Vec<usize>,
    sizes: Vec<usize>,
    total: u128,
}

impl OthersSpace {
    fn build(
        spec: &MechanismSpec,
        env: &Environment,
        report_lens: &[usize],
        i: usize,
        sd_prefix: bool,
    ) -> OthersSpace {
        let n = env.student_count();
        let mut participating: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        if sd_prefix && spec.family == Family::Sd {
            if let Some(common) = env.common_priority() {
                // under a serial dictatorship only students picking earlier
                // can influence the audited student's options
                let rank = common.rank_table(n);
                participating.retain(|&j| rank[j] < rank[i]);
            }
        }
        let sizes: Vec<usize> = participating.iter().map(|&j| report_lens[j]).collect();
        let total = sizes.iter().fold(1u128, |acc, &s| acc * s as u128);
        OthersSpace {
            digits: participating,
            sizes,
            total,
        }
    }

    fn unrank(&self, mut id: u128, out: &mut [usize]) {
        for slot in (0..self.sizes.len()).rev() {
            out[slot] = (id % self.sizes[slot] as u128) as usize;
            id /= self.sizes[slot] as u128;
        }
    }
}

/// Per-worker state for table scans.
struct Worker<'a> {
    engine: Engine,
    refs: Vec<&'a Preference>,
    digit_vals: Vec<usize>,
    out_i: Vec<Option<SchoolId>>,
    full_out: Vec<Vec<Option<SchoolId>>>,
}

impl<'a> Worker<'a> {
    fn new(
        spec: &MechanismSpec,
        env: &Environment,
        tables: &'a DomainTables,
        space: &OthersSpace,
        report_count: usize,
        keep_full: bool,
    ) -> Worker<'a> {
        let n = env.student_count();
        // non-participating students sit at their domain's first entry
        let refs: Vec<&Preference> = (0..n).map(|j| &tables.prefs(j)[0]).collect();
        Worker {
            engine: Engine::new(spec, env).expect("spec validated before scanning"),
            refs,
            digit_vals: vec![0; space.digits.len()],
            out_i: vec![None; report_count],
            full_out: if keep_full {
                vec![vec![None; n]; report_count]
            } else {
                Vec::new()
            },
        }
    }

    /// Positions the worker at assignment `id` of the others space.
    fn seek(&mut self, space: &OthersSpace, tables: &'a DomainTables, id: u128) {
        space.unrank(id, &mut self.digit_vals);
        for (slot, &j) in space.digits.iter().enumerate() {
            self.refs[j] = &tables.prefs(j)[self.digit_vals[slot]];
        }
    }

    /// Advances the odometer by one; returns false past the end.
    fn step(&mut self, space: &OthersSpace, tables: &'a DomainTables) -> bool {
        for slot in (0..space.digits.len()).rev() {
            let j = space.digits[slot];
            self.digit_vals[slot] += 1;
            if self.digit_vals[slot] < space.sizes[slot] {
                self.refs[j] = &tables.prefs(j)[self.digit_vals[slot]];
                return true;
            }
            self.digit_vals[slot] = 0;
            self.refs[j] = &tables.prefs(j)[0];
        }
        false
    }

    /// Evaluates the mechanism for every report of student `i`, filling the
    /// outcome column (and optionally the full matchings).
    fn fill_tables(&mut self, i: usize, reports: &'a [Preference], keep_full: bool) {
        for (r, report) in reports.iter().enumerate() {
            self.refs[i] = report;
            let out = self.engine.run(&self.refs);
            self.out_i[r] = out[i];
            if keep_full {
                self.full_out[r].copy_from_slice(out);
            }
        }
    }

    /// The current profile with student `i` reporting `true_pref`.
    fn profile_with(&self, i: usize, true_pref: &Preference) -> PreferenceProfile {
        let mut lists: Vec<Preference> = self.refs.iter().map(|p| (*p).clone()).collect();
        lists[i] = true_pref.clone();
        PreferenceProfile::new(lists)
    }
}

fn chunk_ranges(total: u128, target: usize) -> Vec<(u128, u128)> {
    if total == 0 {
        return Vec::new();
    }
    // keep chunks coarse enough to amortize per-worker setup
    let chunks = (target as u128).min(total.div_ceil(MIN_CHUNK)).max(1);
    let base = total / chunks;
    let extra = total % chunks;
    let mut ranges = Vec::with_capacity(chunks as usize);
    let mut lo = 0u128;
    for c in 0..chunks {
        let len = base + if c < extra { 1 } else { 0 };
        ranges.push((lo, lo + len));
        lo += len;
    }
    ranges
}

const TARGET_CHUNKS: usize = 1024;
const MIN_CHUNK: u128 = 64;
const WAVE: usize = 8;

// ---------------------------------------------------------------------------
// strategy-proof admission audits
// ---------------------------------------------------------------------------

/// Is the admission of student `i` to school `s` strategy-proof under the
/// mechanism, relative to the domain? `NotStrategyProof` carries the first
/// witness in canonical scan order (others' preferences, then the true
/// preference, then the misreport).
pub fn strategyproof_admission(
    spec: &MechanismSpec,
    env: &Environment,
    i: StudentId,
    s: SchoolId,
    domain: &PreferenceDomain,
) -> Result<AdmissionVerdict, AuditError> {
    strategyproof_admission_with(spec, env, i, s, domain, AuditOptions::default())
}

pub fn strategyproof_admission_with(
    spec: &MechanismSpec,
    env: &Environment,
    i: StudentId,
    s: SchoolId,
    domain: &PreferenceDomain,
    opts: AuditOptions,
) -> Result<AdmissionVerdict, AuditError> {
    let sets = school_sets_impl(spec, env, domain, opts, Some((i, s)))?;
    Ok(match sets.witnesses.get(&(i, s)) {
        Some(w) => AdmissionVerdict::NotStrategyProof(w.clone()),
        None => AdmissionVerdict::StrategyProof,
    })
}

/// For each student, the set of schools whose admission is strategy-proof to
/// them, with witnesses for every school that is not.
pub fn strategyproof_school_sets(
    spec: &MechanismSpec,
    env: &Environment,
    domain: &PreferenceDomain,
) -> Result<SchoolSets, AuditError> {
    strategyproof_school_sets_with(spec, env, domain, AuditOptions::default())
}

pub fn strategyproof_school_sets_with(
    spec: &MechanismSpec,
    env: &Environment,
    domain: &PreferenceDomain,
    opts: AuditOptions,
) -> Result<SchoolSets, AuditError> {
    school_sets_impl(spec, env, domain, opts, None)
}

fn school_sets_impl(
    spec: &MechanismSpec,
    env: &Environment,
    domain: &PreferenceDomain,
    opts: AuditOptions,
    only: Option<(StudentId, SchoolId)>,
) -> Result<SchoolSets, AuditError> {
    spec.validate()?;
    let n = env.student_count();
    let m = env.school_count();
    let tables = domain.materialize(n, m)?;
    let report_lens: Vec<usize> = (0..n)
        .map(|j| misreport_scan_len(spec, &tables, j, opts))
        .collect();

    let students: Vec<usize> = match only {
        Some((i, _)) => vec![i.index()],
        None => (0..n).collect(),
    };

    let mut estimated = 0u128;
    let mut spaces = Vec::new();
    for &i in &students {
        let space = OthersSpace::build(spec, env, &report_lens, i, opts.sd_prefix);
        estimated = estimated.saturating_add(space.total.saturating_mul(report_lens[i] as u128));
        spaces.push(space);
    }
    check_cap(estimated, domain.size_cap)?;
    // fail fast on spec/environment mismatches before spawning workers
    Engine::new(spec, env)?;

    let mut strategy_proof: Vec<BTreeSet<SchoolId>> = vec![BTreeSet::new(); n];
    let mut witnesses = BTreeMap::new();

    for (&i, space) in students.iter().zip(&spaces) {
        let student = StudentId(i as u32);
        let targets: Vec<SchoolId> = match only {
            Some((_, s)) => vec![s],
            None => (0..m as u32).map(SchoolId).collect(),
        };
        let found = scan_def1_student(spec, env, &tables, space, i, report_lens[i], &targets, opts);
        for s in targets {
            match found.get(&s) {
                Some(w) => {
                    witnesses.insert((student, s), w.clone());
                }
                None => {
                    strategy_proof[i].insert(s);
                }
            }
        }
    }

    Ok(SchoolSets {
        strategy_proof,
        witnesses,
        domain_label: tables.label.clone(),
    })
}

/// Scans the others space in waves of parallel chunks; per school the first
/// witness in canonical order wins. Exhausts the space for schools where no
/// witness exists.
#[allow(clippy::too_many_arguments)]
fn scan_def1_student(
    spec: &MechanismSpec,
    env: &Environment,
    tables: &DomainTables,
    space: &OthersSpace,
    i: usize,
    report_len: usize,
    targets: &[SchoolId],
    opts: AuditOptions,
) -> BTreeMap<SchoolId, ManipulationWitness> {
    let m = env.school_count();
    let reports = &tables.prefs(i)[..report_len];
    let ranges = chunk_ranges(space.total, TARGET_CHUNKS);
    let mut resolved: BTreeMap<SchoolId, ManipulationWitness> = BTreeMap::new();

    for wave in ranges.chunks(WAVE) {
        let open: Vec<SchoolId> = targets
            .iter()
            .copied()
            .filter(|s| !resolved.contains_key(s))
            .collect();
        if open.is_empty() {
            break;
        }
        let partials: Vec<BTreeMap<SchoolId, ManipulationWitness>> = wave
            .par_iter()
            .map(|&(lo, hi)| {
                let mut w = Worker::new(spec, env, tables, space, report_len, false);
                let mut local: BTreeMap<SchoolId, ManipulationWitness> = BTreeMap::new();
                let mut first_give: Vec<Option<usize>> = vec![None; m];
                w.seek(space, tables, lo);
                let mut id = lo;
                while id < hi {
                    w.fill_tables(i, reports, false);
                    first_give.iter_mut().for_each(|f| *f = None);
                    for (r, out) in w.out_i.iter().enumerate() {
                        if let Some(s) = out {
                            if first_give[s.index()].is_none() {
                                first_give[s.index()] = Some(r);
                            }
                        }
                    }
                    for &s in &open {
                        if local.contains_key(&s) {
                            continue;
                        }
                        let Some(give) = first_give[s.index()] else {
                            continue;
                        };
                        if let Some(found) =
                            def1_true_pref_scan(spec, tables, i, s, &w, reports, give, opts)
                        {
                            local.insert(s, found);
                        }
                    }
                    if local.len() == open.len() {
                        break;
                    }
                    id += 1;
                    if id < hi && !w.step(space, tables) {
                        break;
                    }
                }
                local
            })
            .collect();
        for partial in partials {
            for (s, w) in partial {
                resolved.entry(s).or_insert(w);
            }
        }
    }
    resolved
}

/// Given the outcome column for every report of student `i`, finds the first
/// true preference making the first `s`-yielding report a strictly
/// profitable deviation.
#[allow(clippy::too_many_arguments)]
fn def1_true_pref_scan(
    spec: &MechanismSpec,
    tables: &DomainTables,
    i: usize,
    s: SchoolId,
    w: &Worker,
    reports: &[Preference],
    give: usize,
    opts: AuditOptions,
) -> Option<ManipulationWitness> {
    let prune = opts.lemma_pruning && lemma_applies(spec);
    let k = spec.constraint.unwrap_or(0) as usize;
    for (pi, true_pref) in tables.prefs(i).iter().enumerate() {
        if prune {
            // a witness needs more than k acceptable schools and the target
            // acceptable but below the top k
            if true_pref.len() <= k {
                continue;
            }
            match true_pref.rank_of(s) {
                Some(pos) if pos >= k => {}
                _ => continue,
            }
        }
        let truthful = w.out_i[truncated_report_index(spec, tables, i, pi, reports)];
        if true_pref.prefers(Some(s), truthful) {
            return Some(ManipulationWitness {
                profile: w.profile_with(i, true_pref),
                student: StudentId(i as u32),
                misreport: reports[give].clone(),
                truthful_outcome: truthful,
                deviating_outcome: Some(s),
                target_school: Some(s),
            });
        }
    }
    None
}

/// Index into the (possibly collapsed) report table of the outcome a student
/// obtains when reporting preference `pi` of their domain.
fn truncated_report_index(
    spec: &MechanismSpec,
    tables: &DomainTables,
    i: usize,
    pi: usize,
    reports: &[Preference],
) -> usize {
    if pi < reports.len() {
        return pi;
    }
    // only reachable when reports were collapsed to the length-k prefix of an
    // enumeration-ordered domain
    let k = spec.constraint.expect("collapse implies a constraint") as usize;
    let truncated = tables.prefs(i)[pi].truncate(k);
    rank_in_enumeration(&truncated, tables.m)
}

// ---------------------------------------------------------------------------
// immunity and manipulability comparisons
// ---------------------------------------------------------------------------

/// Compares the strategy-proof school sets of two mechanisms over the
/// supplied environments. A is more immune when B's set is contained in A's
/// for every student in every environment, strictly somewhere.
pub fn compare_immunity(
    spec_a: &MechanismSpec,
    spec_b: &MechanismSpec,
    envs: &[Environment],
    domain: &PreferenceDomain,
) -> Result<ImmunityComparison, AuditError> {
    let mut per_env = Vec::new();
    let mut a_contains_b_everywhere = true;
    let mut b_contains_a_everywhere = true;

    for env in envs {
        let sets_a = strategyproof_school_sets(spec_a, env, domain)?;
        let sets_b = strategyproof_school_sets(spec_b, env, domain)?;
        let mut strict_a_over_b = Vec::new();
        let mut strict_b_over_a = Vec::new();
        for i in 0..env.student_count() {
            let student = StudentId(i as u32);
            for s in sets_a.strategy_proof[i].difference(&sets_b.strategy_proof[i]) {
                strict_a_over_b.push(StrictImmunityWitness {
                    student,
                    school: *s,
                    witness: sets_b.witnesses[&(student, *s)].clone(),
                });
            }
            for s in sets_b.strategy_proof[i].difference(&sets_a.strategy_proof[i]) {
                strict_b_over_a.push(StrictImmunityWitness {
                    student,
                    school: *s,
                    witness: sets_a.witnesses[&(student, *s)].clone(),
                });
            }
        }
        let verdict = inclusion_verdict(strict_a_over_b.len(), strict_b_over_a.len());
        if !strict_a_over_b.is_empty() {
            // A protects an admission B does not, so B's sets cannot contain A's
            b_contains_a_everywhere = false;
        }
        if !strict_b_over_a.is_empty() {
            a_contains_b_everywhere = false;
        }
        per_env.push(EnvImmunity {
            sp_a: sets_a.strategy_proof,
            sp_b: sets_b.strategy_proof,
            verdict,
            strict_a_over_b,
            strict_b_over_a,
        });
    }

    let overall = match (a_contains_b_everywhere, b_contains_a_everywhere) {
        (true, true) => ImmunityVerdict::Equal,
        (true, false) => ImmunityVerdict::AMoreImmune,
        (false, true) => ImmunityVerdict::BMoreImmune,
        (false, false) => ImmunityVerdict::Incomparable,
    };

    Ok(ImmunityComparison {
        per_env,
        overall,
        domain_label: domain.label(),
        scope_note: format!(
            "verdict scoped to the {} supplied environment(s) and the {} preference domain; \
             the definition quantifies over all environments",
            envs.len(),
            domain.label()
        ),
    })
}

fn inclusion_verdict(a_only: usize, b_only: usize) -> ImmunityVerdict {
    match (a_only > 0, b_only > 0) {
        (false, false) => ImmunityVerdict::Equal,
        (true, false) => ImmunityVerdict::AMoreImmune,
        (false, true) => ImmunityVerdict::BMoreImmune,
        (true, true) => ImmunityVerdict::Incomparable,
    }
}

/// Partitions the domain's profiles into vulnerable/not under each mechanism
/// per environment; A is less manipulable when its vulnerable set is
/// contained in B's everywhere, strictly somewhere.
pub fn compare_manipulability(
    spec_a: &MechanismSpec,
    spec_b: &MechanismSpec,
    envs: &[Environment],
    domain: &PreferenceDomain,
) -> Result<ManipulabilityComparison, AuditError> {
    spec_a.validate()?;
    spec_b.validate()?;
    let mut per_env = Vec::new();
    let mut a_subset_everywhere = true;
    let mut b_subset_everywhere = true;

    for env in envs {
        let n = env.student_count();
        let m = env.school_count();
        let tables = domain.materialize(n, m)?;
        let profile_total: u128 = (0..n).map(|j| tables.size(j) as u128).product();
        let per_profile: u128 = (0..n).map(|j| 1 + tables.size(j) as u128).sum();
        check_cap(
            profile_total.saturating_mul(per_profile).saturating_mul(2),
            domain.size_cap,
        )?;
        Engine::new(spec_a, env)?;
        Engine::new(spec_b, env)?;

        let sizes: Vec<usize> = (0..n).map(|j| tables.size(j)).collect();
        let ranges = chunk_ranges(profile_total, TARGET_CHUNKS);
        let opts = AuditOptions::default();

        struct Partial {
            scanned: u64,
            vuln_a: u64,
            vuln_b: u64,
            only_a: u64,
            only_b: u64,
            example_a: Option<ManipulationWitness>,
            example_b: Option<ManipulationWitness>,
        }

        let partials: Vec<Partial> = ranges
            .par_iter()
            .map(|&(lo, hi)| {
                let mut engine_a = Engine::new(spec_a, env).expect("validated");
                let mut engine_b = Engine::new(spec_b, env).expect("validated");
                let mut digit_vals = vec![0usize; n];
                let mut partial = Partial {
                    scanned: 0,
                    vuln_a: 0,
                    vuln_b: 0,
                    only_a: 0,
                    only_b: 0,
                    example_a: None,
                    example_b: None,
                };
                let mut id = lo;
                let mut rest = id;
                for slot in (0..n).rev() {
                    digit_vals[slot] = (rest % sizes[slot] as u128) as usize;
                    rest /= sizes[slot] as u128;
                }
                while id < hi {
                    let profile = PreferenceProfile::new(
                        (0..n)
                            .map(|j| tables.prefs(j)[digit_vals[j]].clone())
                            .collect(),
                    );
                    let p = Problem::new(env.clone(), profile);
                    partial.scanned += 1;
                    let wa = vulnerability_scan(spec_a, &mut engine_a, &p, &tables, opts);
                    let wb = vulnerability_scan(spec_b, &mut engine_b, &p, &tables, opts);
                    if wa.is_some() {
                        partial.vuln_a += 1;
                    }
                    if wb.is_some() {
                        partial.vuln_b += 1;
                    }
                    match (wa, wb) {
                        (Some(w), None) => {
                            partial.only_a += 1;
                            partial.example_a.get_or_insert(w);
                        }
                        (None, Some(w)) => {
                            partial.only_b += 1;
                            partial.example_b.get_or_insert(w);
                        }
                        _ => {}
                    }
                    id += 1;
                    if id >= hi {
                        break;
                    }
                    for slot in (0..n).rev() {
                        digit_vals[slot] += 1;
                        if digit_vals[slot] < sizes[slot] {
                            break;
                        }
                        digit_vals[slot] = 0;
                    }
                }
                partial
            })
            .collect();

        let mut env_report = EnvManipulability {
            profiles_scanned: 0,
            vulnerable_a: 0,
            vulnerable_b: 0,
            only_a: 0,
            only_b: 0,
            verdict: ManipulabilityVerdict::Equal,
            example_only_a: None,
            example_only_b: None,
        };
        for partial in partials {
            env_report.profiles_scanned += partial.scanned;
            env_report.vulnerable_a += partial.vuln_a;
            env_report.vulnerable_b += partial.vuln_b;
            env_report.only_a += partial.only_a;
            env_report.only_b += partial.only_b;
            if env_report.example_only_a.is_none() {
                env_report.example_only_a = partial.example_a;
            }
            if env_report.example_only_b.is_none() {
                env_report.example_only_b = partial.example_b;
            }
        }
        env_report.verdict = match (env_report.only_a > 0, env_report.only_b > 0) {
            (false, false) => ManipulabilityVerdict::Equal,
            (false, true) => ManipulabilityVerdict::ALessManipulable,
            (true, false) => ManipulabilityVerdict::BLessManipulable,
            (true, true) => ManipulabilityVerdict::Incomparable,
        };
        if env_report.only_a > 0 {
            a_subset_everywhere = false;
        }
        if env_report.only_b > 0 {
            b_subset_everywhere = false;
        }
        per_env.push(env_report);
    }

    let overall = match (a_subset_everywhere, b_subset_everywhere) {
        (true, true) => ManipulabilityVerdict::Equal,
        (true, false) => ManipulabilityVerdict::ALessManipulable,
        (false, true) => ManipulabilityVerdict::BLessManipulable,
        (false, false) => ManipulabilityVerdict::Incomparable,
    };

    Ok(ManipulabilityComparison {
        per_env,
        overall,
        domain_label: domain.label(),
        scope_note: format!(
            "verdict scoped to the {} supplied environment(s) and the {} preference domain",
            envs.len(),
            domain.label()
        ),
    })
}

fn vulnerability_scan(
    spec: &MechanismSpec,
    engine: &mut Engine,
    p: &Problem,
    tables: &DomainTables,
    opts: AuditOptions,
) -> Option<ManipulationWitness> {
    let n = p.student_count();
    let mut refs: Vec<&Preference> = p.profile.preferences().iter().collect();
    let truthful: Vec<Option<SchoolId>> = engine.run(&refs).to_vec();
    for i in 0..n {
        if let Some(w) = scan_misreports(
            spec,
            engine,
            &mut refs,
            p,
            StudentId(i as u32),
            tables,
            truthful[i],
            opts,
        ) {
            return Some(w);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Nash equilibrium and the refined audit
// ---------------------------------------------------------------------------

/// Is `reported` a Nash equilibrium of the game induced by the mechanism at
/// `true_profile`? Students deviate one at a time to any report in their
/// domain entry; improvements are judged by their true preference.
pub fn is_nash_equilibrium(
    spec: &MechanismSpec,
    true_profile: &PreferenceProfile,
    reported: &PreferenceProfile,
    env: &Environment,
    strategy_domain: &PreferenceDomain,
) -> Result<NashVerdict, AuditError> {
    spec.validate()?;
    let n = env.student_count();
    let tables = strategy_domain.materialize(n, env.school_count())?;
    let opts = AuditOptions::default();
    let estimated: u128 = 1 + (0..n)
        .map(|j| misreport_scan_len(spec, &tables, j, opts) as u128)
        .sum::<u128>();
    check_cap(estimated, strategy_domain.size_cap)?;
    let mut engine = Engine::new(spec, env)?;
    let mut refs: Vec<&Preference> = reported.preferences().iter().collect();
    let base: Vec<Option<SchoolId>> = engine.run(&refs).to_vec();
    for i in 0..n {
        let true_pref = true_profile.student(StudentId(i as u32));
        let scan = misreport_scan_len(spec, &tables, i, opts);
        let original = refs[i];
        for r in &tables.prefs(i)[..scan] {
            refs[i] = r;
            let out = engine.run(&refs)[i];
            if true_pref.prefers(out, base[i]) {
                return Ok(NashVerdict::NotEquilibrium {
                    deviator: StudentId(i as u32),
                    report: r.clone(),
                    current_outcome: base[i],
                    improved_outcome: out,
                });
            }
        }
        refs[i] = original;
    }
    Ok(NashVerdict::Equilibrium)
}

/// The refined admission audit: a witness must not only hand student `i`
/// school `s` profitably, the deviation together with everyone else's
/// truthful reports must also form a Nash equilibrium of the induced game.
pub fn strategyproof_admission_in_equilibrium(
    spec: &MechanismSpec,
    env: &Environment,
    i: StudentId,
    s: SchoolId,
    domain: &PreferenceDomain,
) -> Result<EquilibriumAdmissionVerdict, AuditError> {
    strategyproof_admission_in_equilibrium_with(spec, env, i, s, domain, AuditOptions::default())
}

pub fn strategyproof_admission_in_equilibrium_with(
    spec: &MechanismSpec,
    env: &Environment,
    i: StudentId,
    s: SchoolId,
    domain: &PreferenceDomain,
    opts: AuditOptions,
) -> Result<EquilibriumAdmissionVerdict, AuditError> {
    spec.validate()?;
    let n = env.student_count();
    let m = env.school_count();
    let tables = domain.materialize(n, m)?;
    let report_lens: Vec<usize> = (0..n)
        .map(|j| misreport_scan_len(spec, &tables, j, opts))
        .collect();
    let idx = i.index();
    // excluding lower-priority students from the equilibrium scan is only
    // sound when their filler preference cannot want to deviate, i.e. when it
    // is the empty list
    let sd_prefix_ok = opts.sd_prefix && (0..n).all(|j| tables.prefs(j)[0].is_empty());
    let space = OthersSpace::build(spec, env, &report_lens, idx, sd_prefix_ok);
    // coarse bound: one table per assignment plus equilibrium checks
    let estimated = space
        .total
        .saturating_mul(report_lens[idx] as u128)
        .saturating_mul(n as u128);
    check_cap(estimated, domain.size_cap)?;
    Engine::new(spec, env)?;

    // a single rank-it-first probe decides reachability of `s` for the
    // parallel-rounds family
    let probe_report: Option<usize> = if opts.chinese_probe
        && spec.family == Family::Chinese
        && spec.constraint.is_none()
    {
        tables.prefs(idx)[..report_lens[idx]]
            .iter()
            .position(|p| p.ranking() == [s])
    } else {
        None
    };

    let reports = &tables.prefs(idx)[..report_lens[idx]];
    let ranges = chunk_ranges(space.total, TARGET_CHUNKS);

    for wave in ranges.chunks(WAVE) {
        let hits: Vec<Option<(ManipulationWitness, EquilibriumCertificate)>> = wave
            .par_iter()
            .map(|&(lo, hi)| {
                let mut w = Worker::new(spec, env, &tables, &space, reports.len(), true);
                w.seek(&space, &tables, lo);
                let mut id = lo;
                while id < hi {
                    if let Some(found) = def3_check_assignment(
                        spec,
                        &tables,
                        &space,
                        &mut w,
                        idx,
                        s,
                        reports,
                        &report_lens,
                        probe_report,
                    ) {
                        return Some(found);
                    }
                    id += 1;
                    if id < hi && !w.step(&space, &tables) {
                        break;
                    }
                }
                None
            })
            .collect();
        for hit in hits.into_iter().flatten() {
            let (witness, certificate) = hit;
            return Ok(EquilibriumAdmissionVerdict::NotStrategyProofInEquilibrium {
                witness,
                certificate,
            });
        }
    }
    Ok(EquilibriumAdmissionVerdict::StrategyProofInEquilibrium)
}

/// Checks one assignment of the other students: does any (misreport, true
/// preference) pair satisfy both the profitable-deviation condition and the
/// equilibrium condition?
#[allow(clippy::too_many_arguments)]
fn def3_check_assignment<'a>(
    spec: &MechanismSpec,
    tables: &'a DomainTables,
    space: &OthersSpace,
    w: &mut Worker<'a>,
    i: usize,
    s: SchoolId,
    reports: &'a [Preference],
    report_lens: &[usize],
    probe_report: Option<usize>,
) -> Option<(ManipulationWitness, EquilibriumCertificate)> {
    if let Some(probe) = probe_report {
        w.refs[i] = &reports[probe];
        if w.engine.run(&w.refs)[i] != Some(s) {
            return None;
        }
    }
    w.fill_tables(i, reports, true);
    // i's attainable outcomes at this assignment, for the best-response check
    let mut attainable: Vec<Option<SchoolId>> = Vec::new();
    let mut gives_s = false;
    for out in &w.out_i {
        if !attainable.contains(out) {
            attainable.push(*out);
        }
        gives_s |= *out == Some(s);
    }
    if !gives_s {
        return None;
    }
    for (r_dev, deviation) in reports.iter().enumerate() {
        if w.out_i[r_dev] != Some(s) {
            continue;
        }
        // the first true preference under which the deviation is profitable
        // and s is already i's best attainable outcome
        let mut chosen: Option<(usize, Option<SchoolId>)> = None;
        for (pi, true_pref) in tables.prefs(i).iter().enumerate() {
            let truthful = w.out_i[truncated_report_index(spec, tables, i, pi, reports)];
            if !true_pref.prefers(Some(s), truthful) {
                continue;
            }
            if attainable.iter().any(|a| true_pref.prefers(*a, Some(s))) {
                continue;
            }
            chosen = Some((pi, truthful));
            break;
        }
        let Some((pi, truthful)) = chosen else {
            continue;
        };
        // equilibrium condition for everyone else: no deviation from the
        // reported profile improves on their own truthful report
        let mut deviations_checked = 0u64;
        let mut equilibrium = true;
        w.refs[i] = &reports[r_dev];
        // the enumeration order already tries the empty list and every
        // singleton first, which is where improving deviations usually live
        'students: for &j in &space.digits {
            let p_j = w.refs[j];
            let current = w.full_out[r_dev][j];
            for cand in &tables.prefs(j)[..report_lens[j]] {
                w.refs[j] = cand;
                let out = w.engine.run(&w.refs)[j];
                deviations_checked += 1;
                if p_j.prefers(out, current) {
                    w.refs[j] = p_j;
                    equilibrium = false;
                    break 'students;
                }
            }
            w.refs[j] = p_j;
        }
        if equilibrium {
            let true_pref = &tables.prefs(i)[pi];
            let witness = ManipulationWitness {
                profile: w.profile_with(i, true_pref),
                student: StudentId(i as u32),
                misreport: deviation.clone(),
                truthful_outcome: truthful,
                deviating_outcome: Some(s),
                target_school: Some(s),
            };
            let mut reported_lists: Vec<Preference> =
                w.refs.iter().map(|p| (*p).clone()).collect();
            reported_lists[i] = deviation.clone();
            let certificate = EquilibriumCertificate {
                reported: PreferenceProfile::new(reported_lists),
                deviations_checked,
            };
            return Some((witness, certificate));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// serial-dictatorship propositions
// ---------------------------------------------------------------------------

/// The guarantee level of a constrained serial dictatorship: the sum of the
/// k smallest capacities. The mechanism is strategy-proof to that many
/// highest-priority students.
pub fn sd_guarantee(env: &Environment, k: usize) -> Result<u64, AuditError> {
    if env.common_priority().is_none() {
        return Err(AuditError::Mechanism(
            MechanismError::CommonPriorityViolation(SchoolId(0), SchoolId(0)),
        ));
    }
    let m = env.school_count();
    if k < 1 || k > m {
        return Err(AuditError::Mechanism(MechanismError::InvalidSpec(format!(
            "constraint k={k} must satisfy 1 <= k <= {m}"
        ))));
    }
    let mut caps = env.capacities.clone();
    caps.sort_unstable();
    Ok(caps[..k].iter().map(|&c| c as u64).sum())
}

/// Checks on one problem that "not vulnerable under the k-constrained serial
/// dictatorship" coincides with "the constraint does not bind": the
/// constrained and unconstrained outcomes agree.
pub fn sd_vulnerability_characterization(
    p: &Problem,
    k: u32,
) -> Result<SdCharacterization, AuditError> {
    let constrained = MechanismSpec::sd().with_constraint(k);
    let unconstrained = MechanismSpec::sd();
    let right = crate::mechanisms::apply_mechanism(&constrained, p)?
        == crate::mechanisms::apply_mechanism(&unconstrained, p)?;
    let left = is_vulnerable(&constrained, p, &PreferenceDomain::full())?.is_none();
    Ok(SdCharacterization {
        agrees: left == right,
        left,
        right,
    })
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::apply_mechanism;
    use crate::model::PriorityOrder;

    fn pref(ids: &[u32]) -> Preference {
        Preference::new(ids.iter().map(|&i| SchoolId(i)).collect())
    }

    #[test]
    fn preference_enumeration_counts() {
        assert_eq!(enumerate_preferences(2, None).len(), 5);
        assert_eq!(enumerate_preferences(3, None).len(), 16);
        assert_eq!(enumerate_preferences(7, Some(3)).len(), 260);
        assert_eq!(preference_count(7, None), 13_700);
        assert_eq!(preference_count(7, Some(3)), 260);
    }

    #[test]
    fn preference_enumeration_order_is_by_length_then_lex() {
        let prefs = enumerate_preferences(2, None);
        assert_eq!(
            prefs,
            vec![pref(&[]), pref(&[0]), pref(&[1]), pref(&[0, 1]), pref(&[1, 0])]
        );
    }

    #[test]
    fn unranking_matches_enumeration() {
        for m in 1..=4usize {
            for (idx, p) in enumerate_preferences(m, None).iter().enumerate() {
                assert_eq!(&unrank_preference(m, idx as u128), p);
                assert_eq!(rank_in_enumeration(p, m), idx);
            }
        }
    }

    #[test]
    fn tiered_domain_lists_full_length_orders() {
        let tiers = vec![
            vec![SchoolId(0), SchoolId(1)],
            vec![SchoolId(2), SchoolId(3)],
        ];
        let lists = tier_consistent_preferences(&tiers);
        assert_eq!(lists.len(), 4);
        for p in &lists {
            assert_eq!(p.len(), 4);
            let pos: Vec<usize> = [0, 1, 2, 3]
                .iter()
                .map(|&s| p.rank_of(SchoolId(s)).unwrap())
                .collect();
            assert!(pos[0].max(pos[1]) < pos[2].min(pos[3]));
        }
    }

    #[test]
    fn sampled_domains_are_reproducible() {
        let d = PreferenceDomain::sampled(10, 42);
        let a = d.materialize(3, 4).unwrap();
        let b = d.materialize(3, 4).unwrap();
        for i in 0..3 {
            assert_eq!(a.prefs(i), b.prefs(i));
            assert_eq!(a.size(i), 10);
        }
        let c = PreferenceDomain::sampled(10, 43).materialize(3, 4).unwrap();
        assert_ne!(a.prefs(0), c.prefs(0));
    }

    #[test]
    fn tiered_domain_rejects_non_partitions() {
        let bad = PreferenceDomain::tiered(vec![vec![SchoolId(0)], vec![SchoolId(0)]]);
        assert!(matches!(
            bad.materialize(2, 2),
            Err(AuditError::InvalidDomain(_))
        ));
        let missing = PreferenceDomain::tiered(vec![vec![SchoolId(0)]]);
        assert!(missing.materialize(2, 2).is_err());
    }

    #[test]
    fn cap_is_checked_upfront() {
        let env = Environment::with_common_priority(
            PriorityOrder::from_indices(&[0, 1, 2, 3, 4]),
            vec![1; 4],
        );
        let tiny = PreferenceDomain::full().with_cap(100);
        let err = strategyproof_school_sets(&MechanismSpec::boston(), &env, &tiny).unwrap_err();
        assert!(matches!(err, AuditError::SizeCapExceeded { .. }));
    }

    // --- naive oracles: literal quantifier evaluation, no reductions ---

    fn naive_outcome(
        spec: &MechanismSpec,
        env: &Environment,
        profile: &PreferenceProfile,
    ) -> Vec<Option<SchoolId>> {
        apply_mechanism(spec, &Problem::new(env.clone(), profile.clone()))
            .unwrap()
            .assignment()
            .to_vec()
    }

    fn profiles_over(prefs: &[Preference], n: usize) -> Vec<PreferenceProfile> {
        let total = (prefs.len() as u128).pow(n as u32);
        (0..total)
            .map(|id| {
                let mut rest = id;
                let mut lists = vec![Preference::empty(); n];
                for slot in (0..n).rev() {
                    lists[slot] = prefs[(rest % prefs.len() as u128) as usize].clone();
                    rest /= prefs.len() as u128;
                }
                PreferenceProfile::new(lists)
            })
            .collect()
    }

    fn naive_def1(
        spec: &MechanismSpec,
        env: &Environment,
        i: StudentId,
        s: SchoolId,
        prefs: &[Preference],
    ) -> bool {
        // true = strategy-proof
        for profile in profiles_over(prefs, env.student_count()) {
            let truthful = naive_outcome(spec, env, &profile)[i.index()];
            for r in prefs {
                let dev = profile.with_report(i, r.clone());
                let out = naive_outcome(spec, env, &dev)[i.index()];
                if out == Some(s) && profile.student(i).prefers(Some(s), truthful) {
                    return false;
                }
            }
        }
        true
    }

    fn naive_is_ne(
        spec: &MechanismSpec,
        env: &Environment,
        true_profile: &PreferenceProfile,
        reported: &PreferenceProfile,
        prefs: &[Preference],
    ) -> bool {
        let n = env.student_count();
        let base = naive_outcome(spec, env, reported);
        for i in 0..n {
            let id = StudentId(i as u32);
            for r in prefs {
                let out = naive_outcome(spec, env, &reported.with_report(id, r.clone()))[i];
                if true_profile.student(id).prefers(out, base[i]) {
                    return false;
                }
            }
        }
        true
    }

    fn naive_def3(
        spec: &MechanismSpec,
        env: &Environment,
        i: StudentId,
        s: SchoolId,
        prefs: &[Preference],
    ) -> bool {
        // true = strategy-proof in equilibrium
        for profile in profiles_over(prefs, env.student_count()) {
            let truthful = naive_outcome(spec, env, &profile)[i.index()];
            for r in prefs {
                let reported = profile.with_report(i, r.clone());
                let out = naive_outcome(spec, env, &reported)[i.index()];
                if out == Some(s)
                    && profile.student(i).prefers(Some(s), truthful)
                    && naive_is_ne(spec, env, &profile, &reported, prefs)
                {
                    return false;
                }
            }
        }
        true
    }

    fn audit_spec_battery() -> Vec<MechanismSpec> {
        vec![
            MechanismSpec::gs(),
            MechanismSpec::gs().with_constraint(1),
            MechanismSpec::boston(),
            MechanismSpec::boston().with_constraint(1),
            MechanismSpec::fpf([SchoolId(0)]).with_constraint(1),
            MechanismSpec::chinese(1),
            MechanismSpec::chinese(2),
        ]
    }

    #[test]
    fn def1_audit_matches_naive_oracle_n3_m2() {
        let prefs = enumerate_preferences(2, None);
        let domain = PreferenceDomain::full();
        for env in representative_environments(3, 2) {
            for spec in audit_spec_battery() {
                for i in 0..3u32 {
                    for s in 0..2u32 {
                        let fast =
                            strategyproof_admission(&spec, &env, StudentId(i), SchoolId(s), &domain)
                                .unwrap();
                        let slow = naive_def1(&spec, &env, StudentId(i), SchoolId(s), &prefs);
                        assert_eq!(
                            fast.is_strategy_proof(),
                            slow,
                            "spec {spec} student {i} school {s} env {env:?}"
                        );
                        if let AdmissionVerdict::NotStrategyProof(w) = &fast {
                            assert!(w.verify(&spec, &env));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn def1_audit_matches_naive_oracle_sd_n3_m2() {
        let prefs = enumerate_preferences(2, None);
        let domain = PreferenceDomain::full();
        let env =
            Environment::with_common_priority(PriorityOrder::from_indices(&[1, 2, 0]), vec![1, 1]);
        for spec in [MechanismSpec::sd().with_constraint(1), MechanismSpec::sd()] {
            for i in 0..3u32 {
                for s in 0..2u32 {
                    let fast =
                        strategyproof_admission(&spec, &env, StudentId(i), SchoolId(s), &domain)
                            .unwrap();
                    let slow = naive_def1(&spec, &env, StudentId(i), SchoolId(s), &prefs);
                    assert_eq!(fast.is_strategy_proof(), slow, "spec {spec} i {i} s {s}");
                }
            }
        }
    }

    #[test]
    fn def3_audit_matches_naive_oracle_n3_m2() {
        let prefs = enumerate_preferences(2, None);
        let domain = PreferenceDomain::full();
        for env in representative_environments(3, 2).into_iter().take(3) {
            for spec in [
                MechanismSpec::chinese(1),
                MechanismSpec::chinese(2),
                MechanismSpec::gs().with_constraint(1),
                MechanismSpec::boston(),
            ] {
                for i in 0..3u32 {
                    for s in 0..2u32 {
                        let fast = strategyproof_admission_in_equilibrium(
                            &spec,
                            &env,
                            StudentId(i),
                            SchoolId(s),
                            &domain,
                        )
                        .unwrap();
                        let slow = naive_def3(&spec, &env, StudentId(i), SchoolId(s), &prefs);
                        assert_eq!(
                            fast.is_strategy_proof(),
                            slow,
                            "spec {spec} student {i} school {s}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn refined_audit_never_finds_more_than_the_plain_one() {
        // strategy-proof under the plain audit implies strategy-proof in
        // equilibrium: the refined witnesses are a subset
        let domain = PreferenceDomain::full();
        for env in representative_environments(3, 2).into_iter().take(2) {
            for spec in [MechanismSpec::boston(), MechanismSpec::chinese(2)] {
                for i in 0..3u32 {
                    for s in 0..2u32 {
                        let plain =
                            strategyproof_admission(&spec, &env, StudentId(i), SchoolId(s), &domain)
                                .unwrap();
                        let refined = strategyproof_admission_in_equilibrium(
                            &spec,
                            &env,
                            StudentId(i),
                            SchoolId(s),
                            &domain,
                        )
                        .unwrap();
                        if plain.is_strategy_proof() {
                            assert!(refined.is_strategy_proof());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reductions_do_not_change_def1_verdicts() {
        // lemma pruning and truncation collapse, on vs off, over every
        // priority structure at n=3, m=3, k=2
        let domain = PreferenceDomain::full();
        let specs = [
            MechanismSpec::gs().with_constraint(2),
            MechanismSpec::boston().with_constraint(2),
        ];
        let off = AuditOptions {
            lemma_pruning: false,
            truncation_collapse: false,
            sd_prefix: false,
            chinese_probe: false,
        };
        for env in enumerate_environments(3, 3, CapacityFamily::Ones) {
            for spec in &specs {
                let with = strategyproof_school_sets(spec, &env, &domain).unwrap();
                let without = strategyproof_school_sets_with(spec, &env, &domain, off).unwrap();
                assert_eq!(with.strategy_proof, without.strategy_proof, "spec {spec}");
                for w in with.witnesses.values() {
                    assert!(w.verify(spec, &env));
                }
                for w in without.witnesses.values() {
                    assert!(w.verify(spec, &env));
                }
            }
        }
    }

    #[test]
    fn sd_prefix_restriction_matches_full_scan() {
        let domain = PreferenceDomain::full();
        let spec = MechanismSpec::sd().with_constraint(2);
        let off = AuditOptions {
            sd_prefix: false,
            ..AuditOptions::default()
        };
        for prio in [[0u32, 1, 2], [2, 0, 1]] {
            let env = Environment::with_common_priority(
                PriorityOrder::from_indices(&prio),
                vec![1, 1, 1],
            );
            let with = strategyproof_school_sets(&spec, &env, &domain).unwrap();
            let without = strategyproof_school_sets_with(&spec, &env, &domain, off).unwrap();
            assert_eq!(with.strategy_proof, without.strategy_proof);
        }
    }

    #[test]
    fn chinese_probe_matches_unprobed_scan() {
        let domain = PreferenceDomain::full();
        let off = AuditOptions {
            chinese_probe: false,
            ..AuditOptions::default()
        };
        for env in representative_environments(3, 2).into_iter().take(3) {
            for e in [1u32, 2] {
                let spec = MechanismSpec::chinese(e);
                for i in 0..3u32 {
                    for s in 0..2u32 {
                        let probed = strategyproof_admission_in_equilibrium(
                            &spec,
                            &env,
                            StudentId(i),
                            SchoolId(s),
                            &domain,
                        )
                        .unwrap();
                        let plain = strategyproof_admission_in_equilibrium_with(
                            &spec,
                            &env,
                            StudentId(i),
                            SchoolId(s),
                            &domain,
                            off,
                        )
                        .unwrap();
                        assert_eq!(
                            probed.is_strategy_proof(),
                            plain.is_strategy_proof(),
                            "e={e} i={i} s={s}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn misreport_prefix_finds_the_same_witness() {
        // restricting misreports to length <= k never changes a verdict, and
        // because every truncation precedes its extensions in enumeration
        // order, the first witness is literally the same
        let spec = MechanismSpec::gs().with_constraint(2);
        let domain = PreferenceDomain::full();
        let off = AuditOptions {
            truncation_collapse: false,
            ..AuditOptions::default()
        };
        let mut compared = 0;
        for p in enumerate_problems(3, 3, CapacityFamily::Ones).step_by(17) {
            let a = is_vulnerable(&spec, &p, &domain).unwrap();
            let b = is_vulnerable_with(&spec, &p, &domain, off).unwrap();
            assert_eq!(a, b);
            compared += 1;
        }
        assert!(compared > 1000);
    }

    #[test]
    fn unconstrained_gs_has_no_vulnerable_profile_n3_m2() {
        let spec = MechanismSpec::gs();
        let domain = PreferenceDomain::full();
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            assert_eq!(is_vulnerable(&spec, &p, &domain).unwrap(), None);
        }
    }

    #[test]
    fn find_manipulation_returns_first_improving_misreport() {
        // student 1 truthfully reports school 0 first, loses it to student 0,
        // and the constraint hides school 1; reporting school 1 first wins it
        let env =
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1, 2]), vec![1, 1]);
        let profile = PreferenceProfile::new(vec![pref(&[0]), pref(&[0, 1]), pref(&[])]);
        let p = Problem::new(env, profile);
        let spec = MechanismSpec::boston().with_constraint(1);
        let w = find_manipulation(&spec, &p, StudentId(1), &PreferenceDomain::full())
            .unwrap()
            .unwrap();
        assert_eq!(w.misreport, pref(&[1]));
        assert_eq!(w.truthful_outcome, None);
        assert_eq!(w.deviating_outcome, Some(SchoolId(1)));
        assert!(w.verify(&spec, &p.environment));
    }

    #[test]
    fn nash_check_agrees_with_naive_oracle() {
        let prefs = enumerate_preferences(2, None);
        let domain = PreferenceDomain::full();
        let env = Environment::new(
            vec![
                PriorityOrder::from_indices(&[1, 2, 0]),
                PriorityOrder::from_indices(&[1, 2, 0]),
            ],
            vec![1, 1],
        );
        let spec = MechanismSpec::boston();
        let true_profile =
            PreferenceProfile::new(vec![pref(&[0, 1]), pref(&[0, 1]), pref(&[0, 1])]);
        for reported_mid in &prefs {
            let reported = true_profile.with_report(StudentId(0), reported_mid.clone());
            let fast = is_nash_equilibrium(&spec, &true_profile, &reported, &env, &domain)
                .unwrap()
                .is_equilibrium();
            let slow = naive_is_ne(&spec, &env, &true_profile, &reported, &prefs);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn truthful_reporting_is_an_equilibrium_under_gs() {
        let spec = MechanismSpec::gs();
        let domain = PreferenceDomain::full();
        for p in enumerate_problems(3, 2, CapacityFamily::Ones) {
            let verdict =
                is_nash_equilibrium(&spec, &p.profile, &p.profile, &p.environment, &domain)
                    .unwrap();
            assert!(verdict.is_equilibrium(), "profile {:?}", p.profile);
        }
    }

    #[test]
    fn sd_guarantee_sums_smallest_capacities() {
        let env = Environment::with_common_priority(
            PriorityOrder::from_indices(&(0..12).collect::<Vec<_>>()),
            vec![400; 10],
        );
        assert_eq!(sd_guarantee(&env, 4).unwrap(), 1600);
        assert_eq!(sd_guarantee(&env, 6).unwrap(), 2400);
        let single = Environment::with_common_priority(
            PriorityOrder::from_indices(&(0..12).collect::<Vec<_>>()),
            vec![5],
        );
        assert_eq!(sd_guarantee(&single, 1).unwrap(), 5);
        assert!(sd_guarantee(&single, 2).is_err());
        let uneven = Environment::new(
            vec![
                PriorityOrder::from_indices(&[0, 1]),
                PriorityOrder::from_indices(&[1, 0]),
            ],
            vec![1, 1],
        );
        assert!(sd_guarantee(&uneven, 1).is_err());
    }

    #[test]
    fn sd_characterization_agrees_on_every_profile_n3_m2() {
        for prio in [[0u32, 1, 2], [1, 2, 0]] {
            let env =
                Environment::with_common_priority(PriorityOrder::from_indices(&prio), vec![1, 1]);
            for profile in enumerate_profiles(3, 2) {
                let p = Problem::new(env.clone(), profile);
                let c = sd_vulnerability_characterization(&p, 1).unwrap();
                assert!(c.agrees, "disagrees on {:?}", p.profile);
            }
        }
    }

    #[test]
    fn non_binding_constraint_is_never_vulnerable() {
        let env =
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1, 2]), vec![1, 1]);
        for profile in enumerate_profiles(3, 2).step_by(3) {
            let p = Problem::new(env.clone(), profile);
            let c = sd_vulnerability_characterization(&p, 2).unwrap();
            assert!(c.left && c.right && c.agrees);
        }
    }

    #[test]
    fn compare_identical_specs_is_equal() {
        let envs = representative_environments(3, 2);
        let domain = PreferenceDomain::full();
        let spec = MechanismSpec::gs().with_constraint(1);
        let imm = compare_immunity(&spec, &spec, &envs, &domain).unwrap();
        assert_eq!(imm.overall, ImmunityVerdict::Equal);
        for env_report in &imm.per_env {
            assert_eq!(env_report.verdict, ImmunityVerdict::Equal);
        }
        let man = compare_manipulability(&spec, &spec, &envs[..2], &domain).unwrap();
        assert_eq!(man.overall, ManipulabilityVerdict::Equal);
    }

    #[test]
    fn longer_lists_are_more_immune_n4_m3() {
        let envs = vec![Environment::with_common_priority(
            PriorityOrder::from_indices(&[0, 1, 2, 3]),
            vec![1, 1, 1],
        )];
        let domain = PreferenceDomain::full();
        let imm = compare_immunity(
            &MechanismSpec::gs().with_constraint(2),
            &MechanismSpec::gs().with_constraint(1),
            &envs,
            &domain,
        )
        .unwrap();
        assert_eq!(imm.overall, ImmunityVerdict::AMoreImmune);
        for w in &imm.per_env[0].strict_a_over_b {
            assert!(w
                .witness
                .verify(&MechanismSpec::gs().with_constraint(1), &envs[0]));
        }
    }

    #[test]
    fn constrained_gs_less_manipulable_than_constrained_boston() {
        let envs = representative_environments(3, 2);
        let domain = PreferenceDomain::full();
        let man = compare_manipulability(
            &MechanismSpec::gs().with_constraint(2),
            &MechanismSpec::boston().with_constraint(2),
            &envs,
            &domain,
        )
        .unwrap();
        assert_eq!(man.overall, ManipulabilityVerdict::ALessManipulable);
        let strict: u64 = man.per_env.iter().map(|e| e.only_b).sum();
        assert!(strict > 0);
        for e in &man.per_env {
            assert_eq!(e.only_a, 0);
            assert_eq!(e.profiles_scanned, 125);
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let env = Environment::with_common_priority(
            PriorityOrder::from_indices(&[0, 1, 2, 3]),
            vec![1, 1, 1],
        );
        let domain = PreferenceDomain::full();
        let spec = MechanismSpec::boston().with_constraint(1);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| strategyproof_school_sets(&spec, &env, &domain).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.strategy_proof, four.strategy_proof);
        assert_eq!(one.witnesses, four.witnesses);
    }
}
