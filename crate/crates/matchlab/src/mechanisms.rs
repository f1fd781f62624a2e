//! The admission mechanisms: student-proposing deferred acceptance and the
//! real-life rules built on top of it (serial dictatorship,
//! first-preference-first, Boston, Chinese parallel rounds), plus a
//! spec-driven dispatcher.
//!
//! All mechanisms are deterministic pure functions of the problem. The
//! internal [`Engine`] reuses scratch buffers so audit loops can evaluate a
//! mechanism hundreds of millions of times without allocating.

use std::collections::BTreeSet;
use std::collections::VecDeque;
use std::fmt;

use crate::model::{
    Environment, Matching, Preference, PreferenceProfile, PriorityOrder, Problem, SchoolId,
    StudentId,
};

/// Mechanism families.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Hash)]
pub enum Family {
    Gs,
    Sd,
    Fpf,
    Boston,
    Chinese,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gs => "gs",
            Family::Sd => "sd",
            Family::Fpf => "fpf",
            Family::Boston => "boston",
            Family::Chinese => "chinese",
        }
    }
}

/// Round lengths of the Chinese parallel mechanism: a uniform length per
/// round, or an explicit list. An explicit list that runs out repeats its
/// final entry, which makes the uniform case the one-entry special case.
#[derive(Clone, PartialEq, Eq, Debug, Hash)]
pub enum RoundLengths {
    Uniform(u32),
    Explicit(Vec<u32>),
}

impl RoundLengths {
    /// Cumulative list budget after `rounds` rounds (1-based).
    pub fn cumulative(&self, rounds: usize) -> u32 {
        match self {
            RoundLengths::Uniform(e) => e.saturating_mul(rounds as u32),
            RoundLengths::Explicit(lens) => {
                let mut total = 0u32;
                for r in 0..rounds {
                    let l = *lens.get(r).or(lens.last()).unwrap_or(&1);
                    total = total.saturating_add(l);
                }
                total
            }
        }
    }

    fn validate(&self) -> Result<(), MechanismError> {
        let ok = match self {
            RoundLengths::Uniform(e) => *e >= 1,
            RoundLengths::Explicit(lens) => !lens.is_empty() && lens.iter().all(|&l| l >= 1),
        };
        if ok {
            Ok(())
        } else {
            Err(MechanismError::RoundLengthBelowOne)
        }
    }
}

impl From<u32> for RoundLengths {
    fn from(e: u32) -> Self {
        RoundLengths::Uniform(e)
    }
}

/// A parsed description of a mechanism: family, optional list constraint,
/// the first-preference-first school set, round lengths for the Chinese
/// family.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MechanismSpec {
    pub family: Family,
    pub constraint: Option<u32>,
    pub fpf_schools: BTreeSet<SchoolId>,
    pub rounds: Option<RoundLengths>,
}

impl MechanismSpec {
    pub fn gs() -> Self {
        MechanismSpec {
            family: Family::Gs,
            constraint: None,
            fpf_schools: BTreeSet::new(),
            rounds: None,
        }
    }

    pub fn sd() -> Self {
        MechanismSpec {
            family: Family::Sd,
            ..MechanismSpec::gs()
        }
    }

    pub fn boston() -> Self {
        MechanismSpec {
            family: Family::Boston,
            ..MechanismSpec::gs()
        }
    }

    pub fn fpf(schools: impl IntoIterator<Item = SchoolId>) -> Self {
        MechanismSpec {
            family: Family::Fpf,
            fpf_schools: schools.into_iter().collect(),
            ..MechanismSpec::gs()
        }
    }

    pub fn chinese(rounds: impl Into<RoundLengths>) -> Self {
        MechanismSpec {
            family: Family::Chinese,
            rounds: Some(rounds.into()),
            ..MechanismSpec::gs()
        }
    }

    pub fn with_constraint(mut self, k: u32) -> Self {
        self.constraint = Some(k);
        self
    }

    /// Checks internal consistency: k ≥ 1, round lengths ≥ 1, the
    /// first-preference-first set only for that family, round lengths only
    /// for the Chinese family.
    pub fn validate(&self) -> Result<(), MechanismError> {
        if let Some(k) = self.constraint {
            if k == 0 {
                return Err(MechanismError::ConstraintBelowOne);
            }
        }
        if !self.fpf_schools.is_empty() && self.family != Family::Fpf {
            return Err(MechanismError::InvalidSpec(
                "first-preference-first schools are only valid for the fpf family".into(),
            ));
        }
        match (&self.rounds, self.family) {
            (Some(r), Family::Chinese) => r.validate(),
            (Some(_), _) => Err(MechanismError::InvalidSpec(
                "round lengths are only valid for the chinese family".into(),
            )),
            (None, Family::Chinese) => Err(MechanismError::InvalidSpec(
                "the chinese family requires a round length".into(),
            )),
            (None, _) => Ok(()),
        }
    }
}

impl fmt::Display for MechanismSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.family.name())?;
        if let Some(k) = self.constraint {
            write!(f, ":k={k}")?;
        }
        if !self.fpf_schools.is_empty() {
            let names: Vec<String> = self
                .fpf_schools
                .iter()
                .map(|s| format!("s{}", s.0 + 1))
                .collect();
            write!(f, ":fpf={}", names.join(","))?;
        }
        match &self.rounds {
            Some(RoundLengths::Uniform(e)) => write!(f, ":e={e}")?,
            Some(RoundLengths::Explicit(lens)) => {
                let parts: Vec<String> = lens.iter().map(|l| l.to_string()).collect();
                write!(f, ":rounds={}", parts.join(","))?;
            }
            None => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MechanismError {
    #[error("serial dictatorship requires a common priority order, but schools {0:?} and {1:?} differ")]
    CommonPriorityViolation(SchoolId, SchoolId),
    #[error("unknown school `{0}` in first-preference-first set")]
    UnknownSchool(String),
    #[error("list constraint k must be at least 1")]
    ConstraintBelowOne,
    #[error("every round length must be at least 1")]
    RoundLengthBelowOne,
    #[error("invalid mechanism spec: {0}")]
    InvalidSpec(String),
}

/// Internal proposal scheduling of deferred acceptance. The outcome is the
/// student-optimal stable matching either way; the knob exists so tests can
/// demonstrate schedule independence.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Default)]
pub enum Schedule {
    #[default]
    Fifo,
    Lifo,
}

enum EngineFamily {
    Gs,
    Sd,
    FpfLike,
    Chinese(RoundLengths),
}

/// Reusable mechanism evaluator. Construction validates the spec against the
/// environment and precomputes priority rank tables; [`Engine::run`] then
/// evaluates the mechanism on a profile without allocating.
pub struct Engine {
    family: EngineFamily,
    constraint: Option<u32>,
    n: usize,
    m: usize,
    capacities: Vec<u32>,
    /// keys[s][i]: lower = higher priority at school s; for fpf schools the
    /// upper half carries the submitted rank position of s.
    keys: Vec<Vec<u64>>,
    env_rank: Vec<Vec<u32>>,
    fpf: Vec<bool>,
    common_order: Vec<u32>,
    pub schedule: Schedule,
    // scratch
    eff: Vec<u32>,
    next: Vec<u32>,
    holds: Vec<Vec<u32>>,
    queue: VecDeque<u32>,
    residual: Vec<u32>,
    active: Vec<bool>,
    round_out: Vec<Option<SchoolId>>,
    out: Vec<Option<SchoolId>>,
}

impl Engine {
    pub fn new(spec: &MechanismSpec, env: &Environment) -> Result<Engine, MechanismError> {
        spec.validate()?;
        let n = env.student_count();
        let m = env.school_count();

        let mut fpf = vec![false; m];
        match spec.family {
            Family::Fpf => {
                for s in &spec.fpf_schools {
                    if s.index() >= m {
                        return Err(MechanismError::UnknownSchool(format!("s{}", s.0 + 1)));
                    }
                    fpf[s.index()] = true;
                }
            }
            Family::Boston => fpf.iter_mut().for_each(|b| *b = true),
            _ => {}
        }

        let mut common_order = Vec::new();
        if spec.family == Family::Sd {
            match env.common_priority() {
                Some(prio) => common_order = prio.order().iter().map(|s| s.0).collect(),
                None => {
                    let first = &env.priorities[0];
                    let other = env
                        .priorities
                        .iter()
                        .position(|p| p != first)
                        .unwrap_or(0);
                    return Err(MechanismError::CommonPriorityViolation(
                        SchoolId(0),
                        SchoolId(other as u32),
                    ));
                }
            }
        }

        let env_rank: Vec<Vec<u32>> = env.priorities.iter().map(|p| p.rank_table(n)).collect();
        let keys: Vec<Vec<u64>> = env_rank
            .iter()
            .map(|row| row.iter().map(|&r| r as u64).collect())
            .collect();

        let family = match spec.family {
            Family::Gs => EngineFamily::Gs,
            Family::Sd => EngineFamily::Sd,
            Family::Fpf | Family::Boston => EngineFamily::FpfLike,
            Family::Chinese => EngineFamily::Chinese(spec.rounds.clone().unwrap()),
        };

        Ok(Engine {
            family,
            constraint: spec.constraint,
            n,
            m,
            capacities: env.capacities.clone(),
            keys,
            env_rank,
            fpf,
            common_order,
            schedule: Schedule::default(),
            eff: vec![0; n],
            next: vec![0; n],
            holds: vec![Vec::new(); m],
            queue: VecDeque::with_capacity(n),
            residual: vec![0; m],
            active: vec![true; n],
            round_out: vec![None; n],
            out: vec![None; n],
        })
    }

    /// Evaluates the mechanism on the given per-student preferences and
    /// returns the assignment. The slice is valid until the next call.
    pub fn run(&mut self, prefs: &[&Preference]) -> &[Option<SchoolId>] {
        debug_assert_eq!(prefs.len(), self.n);
        let cap = self.constraint.map_or(u32::MAX, |k| k);
        for (i, p) in prefs.iter().enumerate() {
            self.eff[i] = (p.len() as u32).min(cap);
        }
        self.out.iter_mut().for_each(|o| *o = None);

        match &self.family {
            EngineFamily::Gs => {
                self.active.iter_mut().for_each(|a| *a = true);
                self.residual.copy_from_slice(&self.capacities);
                da_pass(
                    prefs,
                    &self.eff,
                    &self.keys,
                    &self.residual,
                    &self.active,
                    self.schedule,
                    &mut self.next,
                    &mut self.holds,
                    &mut self.queue,
                    &mut self.out,
                );
            }
            EngineFamily::Sd => {
                self.residual.copy_from_slice(&self.capacities);
                for &i in &self.common_order {
                    let i = i as usize;
                    let list = prefs[i].ranking();
                    let lim = self.eff[i] as usize;
                    for &s in &list[..lim] {
                        if self.residual[s.index()] > 0 {
                            self.residual[s.index()] -= 1;
                            self.out[i] = Some(s);
                            break;
                        }
                    }
                }
            }
            EngineFamily::FpfLike => {
                // rebuild the adjusted keys for the favored schools:
                // primary = submitted rank position, tie-break = original rank
                for s in 0..self.m {
                    if self.fpf[s] {
                        for i in 0..self.n {
                            self.keys[s][i] =
                                ((u32::MAX as u64) << 32) | self.env_rank[s][i] as u64;
                        }
                    }
                }
                for (i, p) in prefs.iter().enumerate() {
                    let lim = self.eff[i] as usize;
                    for (pos, &s) in p.ranking()[..lim].iter().enumerate() {
                        if self.fpf[s.index()] {
                            self.keys[s.index()][i] =
                                ((pos as u64) << 32) | self.env_rank[s.index()][i] as u64;
                        }
                    }
                }
                self.active.iter_mut().for_each(|a| *a = true);
                self.residual.copy_from_slice(&self.capacities);
                da_pass(
                    prefs,
                    &self.eff,
                    &self.keys,
                    &self.residual,
                    &self.active,
                    self.schedule,
                    &mut self.next,
                    &mut self.holds,
                    &mut self.queue,
                    &mut self.out,
                );
            }
            EngineFamily::Chinese(rounds) => {
                let rounds = rounds.clone();
                self.run_chinese(prefs, &rounds, None);
            }
        }
        &self.out
    }

    fn run_chinese(
        &mut self,
        prefs: &[&Preference],
        rounds: &RoundLengths,
        mut trace: Option<&mut Vec<ChineseRound>>,
    ) {
        self.active.iter_mut().for_each(|a| *a = true);
        self.residual.copy_from_slice(&self.capacities);
        let mut round = 1usize;
        let mut unmatched = self.n;
        loop {
            let budget = rounds.cumulative(round);
            let base = std::mem::take(&mut self.eff);
            let mut round_eff = std::mem::take(&mut self.next);
            round_eff
                .iter_mut()
                .zip(&base)
                .for_each(|(e, &b)| *e = b.min(budget));
            self.round_out.iter_mut().for_each(|o| *o = None);
            let mut next = vec![0u32; self.n];
            da_pass(
                prefs,
                &round_eff,
                &self.keys,
                &self.residual,
                &self.active,
                self.schedule,
                &mut next,
                &mut self.holds,
                &mut self.queue,
                &mut self.round_out,
            );
            self.next = round_eff;
            self.eff = base;
            let mut matched_now = Vec::new();
            for i in 0..self.n {
                if self.active[i] {
                    if let Some(s) = self.round_out[i] {
                        // the matching is final for matched students
                        self.out[i] = Some(s);
                        self.active[i] = false;
                        self.residual[s.index()] -= 1;
                        unmatched -= 1;
                        if trace.is_some() {
                            matched_now.push((StudentId(i as u32), s));
                        }
                    }
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(ChineseRound {
                    budget,
                    matched: matched_now,
                });
            }
            // once the budget covers every school the truncation is the
            // identity and later rounds are fixed points
            if unmatched == 0 || budget as usize >= self.m {
                break;
            }
            round += 1;
        }
    }
}

fn da_pass(
    prefs: &[&Preference],
    eff: &[u32],
    keys: &[Vec<u64>],
    caps: &[u32],
    active: &[bool],
    schedule: Schedule,
    next: &mut [u32],
    holds: &mut [Vec<u32>],
    queue: &mut VecDeque<u32>,
    out: &mut [Option<SchoolId>],
) {
    queue.clear();
    for h in holds.iter_mut() {
        h.clear();
    }
    for i in 0..prefs.len() {
        next[i] = 0;
        if active[i] && eff[i] > 0 {
            queue.push_back(i as u32);
        }
    }
    while let Some(i) = match schedule {
        Schedule::Fifo => queue.pop_front(),
        Schedule::Lifo => queue.pop_back(),
    } {
        let i = i as usize;
        let list = prefs[i].ranking();
        let lim = eff[i] as usize;
        while (next[i] as usize) < lim {
            let s = list[next[i] as usize].index();
            next[i] += 1;
            let cap = caps[s] as usize;
            if cap == 0 {
                continue;
            }
            if holds[s].len() < cap {
                holds[s].push(i as u32);
                break;
            }
            let key_row = &keys[s];
            let (slot, worst) = holds[s]
                .iter()
                .enumerate()
                .max_by_key(|(_, &j)| key_row[j as usize])
                .map(|(slot, &j)| (slot, j))
                .unwrap();
            if key_row[i] < key_row[worst as usize] {
                holds[s][slot] = i as u32;
                queue.push_back(worst);
                break;
            }
            // rejected; keep walking down the list
        }
    }
    for (s, h) in holds.iter().enumerate() {
        for &i in h {
            out[i as usize] = Some(SchoolId(s as u32));
        }
    }
}

/// One round of the Chinese parallel mechanism as recorded by
/// [`chinese_round_trace`].
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChineseRound {
    pub budget: u32,
    pub matched: Vec<(StudentId, SchoolId)>,
}

/// The student-optimal stable matching, computed by student-proposing
/// deferred acceptance.
pub fn gale_shapley(p: &Problem) -> Matching {
    let mut engine = Engine::new(&MechanismSpec::gs(), &p.environment).expect("gs spec is valid");
    let refs: Vec<&Preference> = p.profile.preferences().iter().collect();
    let out = engine.run(&refs).to_vec();
    let mu = Matching::new(out);
    debug_assert!(mu.respects_capacities(&p.environment));
    mu
}

/// Gale-Shapley under a common priority order; equivalently, students pick
/// their best remaining school in priority order.
pub fn serial_dictatorship(p: &Problem) -> Result<Matching, MechanismError> {
    let mut engine = Engine::new(&MechanismSpec::sd(), &p.environment)?;
    let refs: Vec<&Preference> = p.profile.preferences().iter().collect();
    let out = engine.run(&refs).to_vec();
    Ok(Matching::new(out))
}

/// Reorders the priority of every first-preference-first school with respect
/// to the submitted profile: students ranking the school higher come first,
/// ties within a rank position keep the original order, and students not
/// ranking the school at all form the last group.
pub fn adjust_priorities_fpf(
    profile: &PreferenceProfile,
    env: &Environment,
    fpf_schools: &BTreeSet<SchoolId>,
) -> Environment {
    let mut priorities = env.priorities.clone();
    for &s in fpf_schools {
        let positions: Vec<u32> = profile
            .preferences()
            .iter()
            .map(|p| p.rank_of(s).map_or(u32::MAX, |pos| pos as u32))
            .collect();
        let mut order = priorities[s.index()].order().to_vec();
        order.sort_by_key(|student| positions[student.index()]);
        priorities[s.index()] = PriorityOrder::new(order);
    }
    Environment::new(priorities, env.capacities.clone())
}

/// Gale-Shapley on the environment adjusted for the given
/// first-preference-first schools.
pub fn first_preference_first(p: &Problem, fpf_schools: &BTreeSet<SchoolId>) -> Matching {
    let adjusted = adjust_priorities_fpf(&p.profile, &p.environment, fpf_schools);
    gale_shapley(&Problem::new(adjusted, p.profile.clone()))
}

/// The Boston mechanism: first-preference-first where every school is a
/// first-preference-first school; equivalently immediate acceptance round by
/// round.
pub fn boston(p: &Problem) -> Matching {
    let all: BTreeSet<SchoolId> = (0..p.school_count() as u32).map(SchoolId).collect();
    first_preference_first(p, &all)
}

/// The Chinese parallel mechanism: rounds of constrained deferred acceptance
/// with a growing cumulative list budget; matched students are final each
/// round and capacities shrink accordingly.
pub fn chinese_parallel(p: &Problem, rounds: impl Into<RoundLengths>) -> Matching {
    let mut engine = Engine::new(&MechanismSpec::chinese(rounds.into()), &p.environment)
        .expect("chinese spec is valid");
    let refs: Vec<&Preference> = p.profile.preferences().iter().collect();
    let out = engine.run(&refs).to_vec();
    Matching::new(out)
}

/// Like [`chinese_parallel`], additionally reporting which students became
/// final in each round.
pub fn chinese_round_trace(
    p: &Problem,
    rounds: impl Into<RoundLengths>,
) -> (Matching, Vec<ChineseRound>) {
    let rounds = rounds.into();
    let mut engine =
        Engine::new(&MechanismSpec::chinese(rounds.clone()), &p.environment).expect("valid spec");
    let refs: Vec<&Preference> = p.profile.preferences().iter().collect();
    let cap = engine.constraint.map_or(u32::MAX, |k| k);
    for (i, pr) in refs.iter().enumerate() {
        engine.eff[i] = (pr.len() as u32).min(cap);
    }
    engine.out.iter_mut().for_each(|o| *o = None);
    let mut trace = Vec::new();
    engine.run_chinese(&refs, &rounds, Some(&mut trace));
    (Matching::new(engine.out.clone()), trace)
}

/// Truncates every preference at the spec's list constraint, then dispatches
/// to the family implementation.
pub fn apply_mechanism(spec: &MechanismSpec, p: &Problem) -> Result<Matching, MechanismError> {
    let mut engine = Engine::new(spec, &p.environment)?;
    let refs: Vec<&Preference> = p.profile.preferences().iter().collect();
    let out = engine.run(&refs).to_vec();
    let mu = Matching::new(out);
    debug_assert!(mu.respects_capacities(&p.environment));
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{enumerate_preferences, enumerate_problems, CapacityFamily};
    use crate::model::PreferenceProfile;
    use crate::stability::{is_individually_rational, is_stable};

    fn pref(ids: &[u32]) -> Preference {
        Preference::new(ids.iter().map(|&i| SchoolId(i)).collect())
    }

    fn matching(ids: &[Option<u32>]) -> Matching {
        Matching::new(ids.iter().map(|o| o.map(SchoolId)).collect())
    }

    #[test]
    fn gs_with_empty_preferences_leaves_everyone_unmatched() {
        let p = Problem::new(
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1, 2]), vec![1, 1]),
            PreferenceProfile::new(vec![Preference::empty(); 3]),
        );
        assert_eq!(gale_shapley(&p), matching(&[None, None, None]));
    }

    #[test]
    fn sd_sequential_picking_forced_case() {
        let p = Problem::new(
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1, 2]), vec![1, 1]),
            PreferenceProfile::new(vec![pref(&[0, 1]); 3]),
        );
        assert_eq!(
            serial_dictatorship(&p).unwrap(),
            matching(&[Some(0), Some(1), None])
        );
    }

    #[test]
    fn sd_rejects_differing_priorities() {
        let p = Problem::new(
            Environment::new(
                vec![
                    PriorityOrder::from_indices(&[0, 1, 2]),
                    PriorityOrder::from_indices(&[1, 0, 2]),
                ],
                vec![1, 1],
            ),
            PreferenceProfile::new(vec![pref(&[0]); 3]),
        );
        assert!(matches!(
            serial_dictatorship(&p),
            Err(MechanismError::CommonPriorityViolation(_, _))
        ));
    }

    #[test]
    fn sd_equals_gs_on_every_common_priority_problem() {
        // n=3, m=2: all 125 profiles, all 6 common priorities, capacities one each
        let prefs = enumerate_preferences(2, None);
        let mut checked = 0;
        for prio in permutations(3) {
            let env = Environment::with_common_priority(
                PriorityOrder::from_indices(&prio),
                vec![1, 1],
            );
            for p0 in &prefs {
                for p1 in &prefs {
                    for p2 in &prefs {
                        let p = Problem::new(
                            env.clone(),
                            PreferenceProfile::new(vec![p0.clone(), p1.clone(), p2.clone()]),
                        );
                        assert_eq!(serial_dictatorship(&p).unwrap(), gale_shapley(&p));
                        checked += 1;
                    }
                }
            }
        }
        assert_eq!(checked, 6 * 125);
    }

    fn permutations(n: u32) -> Vec<Vec<u32>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for rest in permutations(n - 1) {
            for slot in 0..=rest.len() {
                let mut v = rest.clone();
                v.insert(slot, n - 1);
                out.push(v);
            }
        }
        out.sort();
        out
    }

    #[test]
    fn fpf_adjustment_orders_by_submitted_rank() {
        let fx = crate::scenarios::fixture("ps13-counterexample").unwrap();
        let deviation = fx
            .problem
            .with_report(StudentId(0), pref(&[3]))
            .truncate(3);
        let adjusted = adjust_priorities_fpf(
            &deviation.profile,
            &deviation.environment,
            &fx.fpf_schools,
        );
        // student five (index 4) ranks the favored school first, student six
        // (index 5) second; everyone else not at all
        let s5 = SchoolId(4);
        assert_eq!(
            &adjusted.priorities[s5.index()].order()[..2],
            &[StudentId(4), StudentId(5)]
        );
    }

    #[test]
    fn fpf_adjustment_with_empty_set_is_identity() {
        let env = Environment::with_common_priority(PriorityOrder::from_indices(&[2, 0, 1]), vec![1, 1]);
        let profile = PreferenceProfile::new(vec![pref(&[0]), pref(&[1, 0]), pref(&[])]);
        let adjusted = adjust_priorities_fpf(&profile, &env, &BTreeSet::new());
        assert_eq!(adjusted, env);
    }

    #[test]
    fn fpf_adjustment_school_listed_by_nobody_keeps_order() {
        let env = Environment::with_common_priority(PriorityOrder::from_indices(&[2, 0, 1]), vec![1, 1]);
        let profile = PreferenceProfile::new(vec![pref(&[0]), pref(&[0]), pref(&[])]);
        let fpf: BTreeSet<SchoolId> = [SchoolId(1)].into();
        let adjusted = adjust_priorities_fpf(&profile, &env, &fpf);
        assert_eq!(adjusted, env);
    }

    #[test]
    fn fpf_extremes_match_gs_and_boston_exhaustively() {
        let all: BTreeSet<SchoolId> = [SchoolId(0), SchoolId(1)].into();
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            assert_eq!(first_preference_first(&p, &BTreeSet::new()), gale_shapley(&p));
            assert_eq!(first_preference_first(&p, &all), boston(&p));
        }
    }

    #[test]
    fn boston_singleton_lists_all_match() {
        let p = Problem::new(
            Environment::with_common_priority(PriorityOrder::from_indices(&[2, 1, 0]), vec![1, 1, 1]),
            PreferenceProfile::new(vec![pref(&[1]), pref(&[0]), pref(&[2])]),
        );
        assert_eq!(boston(&p), matching(&[Some(1), Some(0), Some(2)]));
    }

    #[test]
    fn chinese_collapses_to_gs_when_rounds_cover_all_schools() {
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            assert_eq!(chinese_parallel(&p, 2), gale_shapley(&p));
            assert_eq!(chinese_parallel(&p, 5), gale_shapley(&p));
        }
    }

    #[test]
    fn chinese_single_length_equals_boston() {
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            assert_eq!(chinese_parallel(&p, 1), boston(&p));
        }
        for p in enumerate_problems(3, 3, CapacityFamily::Ones) {
            assert_eq!(chinese_parallel(&p, 1), boston(&p));
        }
    }

    #[test]
    fn chinese_explicit_rounds_repeat_last_length() {
        let r = RoundLengths::Explicit(vec![1, 2]);
        assert_eq!(r.cumulative(1), 1);
        assert_eq!(r.cumulative(2), 3);
        assert_eq!(r.cumulative(3), 5);
        assert_eq!(RoundLengths::Uniform(2).cumulative(3), 6);
    }

    #[test]
    fn chinese_finalized_students_keep_their_seats() {
        for p in enumerate_problems(3, 3, CapacityFamily::Ones).take(2000) {
            let (mu, trace) = chinese_round_trace(&p, 1);
            let mut seen = 0;
            for round in &trace {
                for &(i, s) in &round.matched {
                    assert_eq!(mu.of(i), Some(s));
                    seen += 1;
                }
            }
            let matched_total = mu.assignment().iter().flatten().count();
            assert_eq!(seen, matched_total);
        }
    }

    #[test]
    fn apply_truncates_before_dispatch() {
        let fx = crate::scenarios::fixture("ps13-counterexample").unwrap();
        let spec = MechanismSpec::gs().with_constraint(3);
        let via_spec = apply_mechanism(&spec, &fx.problem).unwrap();
        let via_truncation = gale_shapley(&fx.problem.truncate(3));
        assert_eq!(via_spec, via_truncation);
    }

    #[test]
    fn constrained_chinese_e1_matches_constrained_boston() {
        // with every list cut to one school the parallel rounds cannot help
        // anyone past round one, so the k=1 versions coincide as well
        let boston1 = MechanismSpec::boston().with_constraint(1);
        let chinese1 = MechanismSpec::chinese(1).with_constraint(1);
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            assert_eq!(
                apply_mechanism(&boston1, &p).unwrap(),
                apply_mechanism(&chinese1, &p).unwrap()
            );
        }
    }

    #[test]
    fn constraint_equal_to_school_count_is_identity() {
        for p in enumerate_problems(3, 3, CapacityFamily::Ones) {
            for spec in [MechanismSpec::gs(), MechanismSpec::boston()] {
                let constrained = spec.clone().with_constraint(3);
                assert_eq!(
                    apply_mechanism(&constrained, &p).unwrap(),
                    apply_mechanism(&spec, &p).unwrap()
                );
            }
        }
    }

    #[test]
    fn gs_output_is_stable_for_its_profile() {
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            let mu = gale_shapley(&p);
            assert!(is_stable(&p, &mu), "unstable GS output on {p:?}");
        }
        for p in enumerate_problems(4, 3, CapacityFamily::Ones).step_by(7) {
            let mu = gale_shapley(&p);
            assert!(is_stable(&p, &mu));
        }
    }

    #[test]
    fn no_mechanism_assigns_an_unlisted_school() {
        let all: BTreeSet<SchoolId> = [SchoolId(0), SchoolId(1)].into();
        let specs = vec![
            MechanismSpec::gs(),
            MechanismSpec::gs().with_constraint(1),
            MechanismSpec::boston(),
            MechanismSpec::fpf(all.clone()).with_constraint(1),
            MechanismSpec::chinese(1),
            MechanismSpec::chinese(RoundLengths::Explicit(vec![1, 2])),
        ];
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            for spec in &specs {
                let mu = apply_mechanism(spec, &p).unwrap();
                let k = spec.constraint.map_or(usize::MAX, |k| k as usize);
                for (i, a) in mu.assignment().iter().enumerate() {
                    if let Some(s) = a {
                        let truncated = p.profile.preferences()[i].truncate(k);
                        assert!(truncated.is_acceptable(*s));
                    }
                }
            }
        }
    }

    #[test]
    fn deferred_acceptance_outcome_is_schedule_independent() {
        let all: BTreeSet<SchoolId> = [SchoolId(0), SchoolId(1)].into();
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            for spec in [MechanismSpec::gs(), MechanismSpec::fpf(all.clone())] {
                let refs: Vec<&Preference> = p.profile.preferences().iter().collect();
                let mut fifo = Engine::new(&spec, &p.environment).unwrap();
                fifo.schedule = Schedule::Fifo;
                let a = fifo.run(&refs).to_vec();
                let mut lifo = Engine::new(&spec, &p.environment).unwrap();
                lifo.schedule = Schedule::Lifo;
                let b = lifo.run(&refs).to_vec();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn fpf_engine_agrees_with_explicit_adjustment() {
        // the audit fast path computes adjusted priorities as comparison keys;
        // the public operation literally re-sorts the environment
        let fpf: BTreeSet<SchoolId> = [SchoolId(1)].into();
        let spec = MechanismSpec::fpf(fpf.clone());
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            assert_eq!(
                apply_mechanism(&spec, &p).unwrap(),
                first_preference_first(&p, &fpf)
            );
        }
    }

    #[test]
    fn spec_validation_rejects_malformed_specs() {
        assert!(MechanismSpec::gs().with_constraint(0).validate().is_err());
        assert!(MechanismSpec::chinese(0).validate().is_err());
        assert!(MechanismSpec::chinese(RoundLengths::Explicit(vec![])).validate().is_err());
        let mut bad = MechanismSpec::gs();
        bad.fpf_schools.insert(SchoolId(0));
        assert!(bad.validate().is_err());
        let mut bad = MechanismSpec::boston();
        bad.rounds = Some(RoundLengths::Uniform(1));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_display_is_canonical() {
        assert_eq!(MechanismSpec::gs().to_string(), "gs");
        assert_eq!(MechanismSpec::gs().with_constraint(3).to_string(), "gs:k=3");
        assert_eq!(
            MechanismSpec::fpf([SchoolId(4), SchoolId(6)]).with_constraint(3).to_string(),
            "fpf:k=3:fpf=s5,s7"
        );
        assert_eq!(MechanismSpec::chinese(2).to_string(), "chinese:e=2");
        assert_eq!(
            MechanismSpec::chinese(RoundLengths::Explicit(vec![1, 2, 3])).to_string(),
            "chinese:rounds=1,2,3"
        );
    }

    #[test]
    fn every_matching_respects_capacities() {
        let specs = vec![
            MechanismSpec::gs(),
            MechanismSpec::boston(),
            MechanismSpec::chinese(1),
        ];
        for p in enumerate_problems(3, 2, CapacityFamily::Small) {
            for spec in &specs {
                let mu = apply_mechanism(spec, &p).unwrap();
                assert!(mu.respects_capacities(&p.environment));
            }
        }
        let p = Problem::new(
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1, 2]), vec![1, 1]),
            PreferenceProfile::new(vec![pref(&[0, 1]); 3]),
        );
        assert!(is_individually_rational(&p, &gale_shapley(&p)));
    }
}
