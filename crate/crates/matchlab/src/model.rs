//! Core domain types for school-choice problems.
//!
//! Students and schools are dense 0-based indices. A preference ranks a
//! subset of the schools (acceptable ones, best first); everything not listed
//! is unacceptable and ranked below the outside option of staying unmatched.

use std::fmt;

/// A student, identified by a dense 0-based index within a problem.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StudentId(pub u32);

/// A school, identified by a dense 0-based index within a problem.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SchoolId(pub u32);

impl StudentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl SchoolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

impl fmt::Debug for SchoolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0 + 1)
    }
}

/// A strict preference over schools: the acceptable schools in order, best
/// first. Schools that are absent are unacceptable; being unmatched is
/// implicitly ranked right after the last listed school.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Preference {
    ranking: Vec<SchoolId>,
}

impl Preference {
    pub fn new(ranking: Vec<SchoolId>) -> Self {
        Preference { ranking }
    }

    /// Empty preference: every school is unacceptable.
    pub fn empty() -> Self {
        Preference::default()
    }

    pub fn ranking(&self) -> &[SchoolId] {
        &self.ranking
    }

    pub fn len(&self) -> usize {
        self.ranking.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranking.is_empty()
    }

    /// Position of `s` in the ranking (0 = best), or `None` if unacceptable.
    pub fn rank_of(&self, s: SchoolId) -> Option<usize> {
        self.ranking.iter().position(|&t| t == s)
    }

    pub fn is_acceptable(&self, s: SchoolId) -> bool {
        self.rank_of(s).is_some()
    }

    /// Strict preference between two outcomes (`None` = unmatched).
    ///
    /// Unmatched sits right below the last listed school; unacceptable
    /// schools all sit below unmatched and are never strictly preferred to
    /// one another.
    pub fn prefers(&self, a: Option<SchoolId>, b: Option<SchoolId>) -> bool {
        self.outcome_key(a) < self.outcome_key(b)
    }

    fn outcome_key(&self, outcome: Option<SchoolId>) -> usize {
        match outcome {
            Some(s) => self.rank_of(s).unwrap_or(self.ranking.len() + 1),
            None => self.ranking.len(),
        }
    }

    /// Truncation after the k'th acceptable choice: keeps the first
    /// `min(k, len)` entries in order.
    pub fn truncate(&self, k: usize) -> Preference {
        Preference {
            ranking: self.ranking[..self.ranking.len().min(k)].to_vec(),
        }
    }
}

impl fmt::Debug for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ranking.is_empty() {
            return write!(f, "(empty)");
        }
        let parts: Vec<String> = self.ranking.iter().map(|s| format!("{s:?}")).collect();
        write!(f, "{}", parts.join(">"))
    }
}

/// Truncation of a preference after its k'th acceptable choice.
pub fn truncate(pref: &Preference, k: usize) -> Preference {
    pref.truncate(k)
}

/// One preference per student, indexed by student.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct PreferenceProfile {
    per_student: Vec<Preference>,
}

impl PreferenceProfile {
    pub fn new(per_student: Vec<Preference>) -> Self {
        PreferenceProfile { per_student }
    }

    pub fn len(&self) -> usize {
        self.per_student.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_student.is_empty()
    }

    pub fn student(&self, i: StudentId) -> &Preference {
        &self.per_student[i.index()]
    }

    pub fn preferences(&self) -> &[Preference] {
        &self.per_student
    }

    /// Profile with student `i`'s preference replaced by `report`.
    pub fn with_report(&self, i: StudentId, report: Preference) -> PreferenceProfile {
        let mut copy = self.clone();
        copy.per_student[i.index()] = report;
        copy
    }

    /// Every preference truncated after its k'th choice.
    pub fn truncate(&self, k: usize) -> PreferenceProfile {
        PreferenceProfile {
            per_student: self.per_student.iter().map(|p| p.truncate(k)).collect(),
        }
    }
}

/// A strict priority order over all students, highest priority first.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PriorityOrder {
    order: Vec<StudentId>,
}

impl PriorityOrder {
    pub fn new(order: Vec<StudentId>) -> Self {
        PriorityOrder { order }
    }

    /// Priority order from raw indices, highest first.
    pub fn from_indices(ids: &[u32]) -> Self {
        PriorityOrder {
            order: ids.iter().map(|&i| StudentId(i)).collect(),
        }
    }

    pub fn order(&self) -> &[StudentId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Rank table: `rank[student] = position`, 0 = highest priority.
    /// Students missing from the order get `u32::MAX` (only possible on
    /// structurally invalid input).
    pub fn rank_table(&self, n: usize) -> Vec<u32> {
        let mut rank = vec![u32::MAX; n];
        for (pos, s) in self.order.iter().enumerate() {
            if s.index() < n && rank[s.index()] == u32::MAX {
                rank[s.index()] = pos as u32;
            }
        }
        rank
    }

    pub fn is_permutation_of(&self, n: usize) -> bool {
        if self.order.len() != n {
            return false;
        }
        let mut seen = vec![false; n];
        for s in &self.order {
            if s.index() >= n || seen[s.index()] {
                return false;
            }
            seen[s.index()] = true;
        }
        true
    }
}

/// The school side of a problem: one priority order and one capacity per
/// school.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Environment {
    pub priorities: Vec<PriorityOrder>,
    pub capacities: Vec<u32>,
}

impl Environment {
    pub fn new(priorities: Vec<PriorityOrder>, capacities: Vec<u32>) -> Self {
        Environment {
            priorities,
            capacities,
        }
    }

    /// Environment where every school uses the same priority order.
    pub fn with_common_priority(priority: PriorityOrder, capacities: Vec<u32>) -> Self {
        let m = capacities.len();
        Environment {
            priorities: vec![priority; m],
            capacities,
        }
    }

    pub fn school_count(&self) -> usize {
        self.priorities.len()
    }

    pub fn student_count(&self) -> usize {
        self.priorities.first().map_or(0, |p| p.len())
    }

    /// The shared priority order, if all schools agree on one.
    pub fn common_priority(&self) -> Option<&PriorityOrder> {
        let first = self.priorities.first()?;
        if self.priorities.iter().all(|p| p == first) {
            Some(first)
        } else {
            None
        }
    }
}

/// A full school-choice problem: environment plus submitted preferences.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Problem {
    pub environment: Environment,
    pub profile: PreferenceProfile,
}

impl Problem {
    pub fn new(environment: Environment, profile: PreferenceProfile) -> Self {
        Problem {
            environment,
            profile,
        }
    }

    pub fn student_count(&self) -> usize {
        self.profile.len()
    }

    pub fn school_count(&self) -> usize {
        self.environment.school_count()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_problem(self)
    }

    /// Same environment, preferences truncated after the k'th choice.
    pub fn truncate(&self, k: usize) -> Problem {
        Problem {
            environment: self.environment.clone(),
            profile: self.profile.truncate(k),
        }
    }

    /// Same environment, student `i` reporting `report` instead.
    pub fn with_report(&self, i: StudentId, report: Preference) -> Problem {
        Problem {
            environment: self.environment.clone(),
            profile: self.profile.with_report(i, report),
        }
    }
}

/// An assignment of each student to a school or to being unmatched.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Matching {
    assignment: Vec<Option<SchoolId>>,
}

impl Matching {
    pub fn new(assignment: Vec<Option<SchoolId>>) -> Self {
        Matching { assignment }
    }

    pub fn assignment(&self) -> &[Option<SchoolId>] {
        &self.assignment
    }

    pub fn of(&self, i: StudentId) -> Option<SchoolId> {
        self.assignment[i.index()]
    }

    pub fn student_count(&self) -> usize {
        self.assignment.len()
    }

    /// Students assigned to school `s`.
    pub fn assigned_to(&self, s: SchoolId) -> Vec<StudentId> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Some(s))
            .map(|(i, _)| StudentId(i as u32))
            .collect()
    }

    /// Number of students per school.
    pub fn fill_counts(&self, m: usize) -> Vec<u32> {
        let mut counts = vec![0u32; m];
        for a in self.assignment.iter().flatten() {
            counts[a.index()] += 1;
        }
        counts
    }

    /// True iff no school holds more students than its capacity.
    pub fn respects_capacities(&self, env: &Environment) -> bool {
        self.fill_counts(env.school_count())
            .iter()
            .zip(&env.capacities)
            .all(|(filled, cap)| filled <= cap)
    }
}

/// A structural violation found by [`validate_problem`].
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Violation {
    DuplicateSchoolInPreference { student: StudentId, school: SchoolId },
    UnknownSchoolInPreference { student: StudentId, school: SchoolId },
    PriorityNotPermutation { school: SchoolId },
    CapacityBelowOne { school: SchoolId },
    PriorityCountMismatch { expected: usize, found: usize },
    CapacityCountMismatch { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSchoolInPreference { student, school } => {
                write!(f, "student {student:?} lists school {school:?} twice")
            }
            Violation::UnknownSchoolInPreference { student, school } => {
                write!(f, "student {student:?} lists unknown school {school:?}")
            }
            Violation::PriorityNotPermutation { school } => {
                write!(f, "priority of school {school:?} is not a permutation of the students")
            }
            Violation::CapacityBelowOne { school } => {
                write!(f, "school {school:?} has capacity below one")
            }
            Violation::PriorityCountMismatch { expected, found } => {
                write!(f, "expected {expected} priority orders, found {found}")
            }
            Violation::CapacityCountMismatch { expected, found } => {
                write!(f, "expected {expected} capacities, found {found}")
            }
        }
    }
}

/// Outcome of structural validation. An empty violation list means the
/// problem is well-formed; `paper_assumptions_hold` additionally reports
/// whether there are more students than schools and at least two schools,
/// the standing assumption of the theory. Problems violating it are still
/// accepted everywhere.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub paper_assumptions_hold: bool,
}

impl ValidationReport {
    pub fn is_structurally_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks index ranges, duplicate rankings, priority permutations and
/// capacities. Violations are the report's content, never an `Err`.
pub fn validate_problem(p: &Problem) -> ValidationReport {
    let n = p.student_count();
    let m = p.school_count();
    let mut violations = Vec::new();

    if p.environment.priorities.len() != m {
        violations.push(Violation::PriorityCountMismatch {
            expected: m,
            found: p.environment.priorities.len(),
        });
    }
    if p.environment.capacities.len() != m {
        violations.push(Violation::CapacityCountMismatch {
            expected: m,
            found: p.environment.capacities.len(),
        });
    }

    for (idx, pref) in p.profile.preferences().iter().enumerate() {
        let student = StudentId(idx as u32);
        let mut seen = vec![false; m];
        for &s in pref.ranking() {
            if s.index() >= m {
                violations.push(Violation::UnknownSchoolInPreference { student, school: s });
            } else if seen[s.index()] {
                violations.push(Violation::DuplicateSchoolInPreference { student, school: s });
            } else {
                seen[s.index()] = true;
            }
        }
    }

    for (idx, priority) in p.environment.priorities.iter().enumerate() {
        if !priority.is_permutation_of(n) {
            violations.push(Violation::PriorityNotPermutation {
                school: SchoolId(idx as u32),
            });
        }
    }

    for (idx, &cap) in p.environment.capacities.iter().enumerate() {
        if cap == 0 {
            violations.push(Violation::CapacityBelowOne {
                school: SchoolId(idx as u32),
            });
        }
    }

    ValidationReport {
        violations,
        paper_assumptions_hold: n > m && m >= 2,
    }
}

/// Display names for students and schools, used when rendering output.
/// The core types stay index-based; names travel alongside.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Names {
    pub students: Vec<String>,
    pub schools: Vec<String>,
}

impl Names {
    /// Default names: students "1".."n", schools "s1".."sm".
    pub fn default_for(n: usize, m: usize) -> Self {
        Names {
            students: (1..=n).map(|i| i.to_string()).collect(),
            schools: (1..=m).map(|s| format!("s{s}")).collect(),
        }
    }

    pub fn student(&self, i: StudentId) -> &str {
        &self.students[i.index()]
    }

    pub fn school(&self, s: SchoolId) -> &str {
        &self.schools[s.index()]
    }

    pub fn outcome(&self, o: Option<SchoolId>) -> String {
        match o {
            Some(s) => self.school(s).to_string(),
            None => "∅".to_string(),
        }
    }

    pub fn student_index(&self, name: &str) -> Option<StudentId> {
        self.students
            .iter()
            .position(|s| s == name)
            .map(|i| StudentId(i as u32))
    }

    pub fn school_index(&self, name: &str) -> Option<SchoolId> {
        self.schools
            .iter()
            .position(|s| s == name)
            .map(|i| SchoolId(i as u32))
    }
}
