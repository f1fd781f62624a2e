//! Stability predicates: individual rationality, justified envy,
//! non-wastefulness, and their conjunction.
//!
//! Every predicate is evaluated against the profile stored in the supplied
//! problem. Constrained mechanisms produce matchings that are stable with
//! respect to the truncated profile but generally not the original one, so
//! the caller chooses which profile to judge against.

use crate::model::{Matching, Problem, SchoolId, StudentId};

/// True iff every matched student finds their assigned school acceptable.
pub fn is_individually_rational(p: &Problem, mu: &Matching) -> bool {
    mu.assignment()
        .iter()
        .enumerate()
        .all(|(i, a)| match a {
            Some(s) => p.profile.preferences()[i].is_acceptable(*s),
            None => true,
        })
}

/// All triples (envious student, envied student, school) where the envious
/// student prefers the school held by the envied one and outranks them in
/// that school's priority. Returned in (envious, envied) index order.
pub fn justified_envy_pairs(p: &Problem, mu: &Matching) -> Vec<(StudentId, StudentId, SchoolId)> {
    let n = p.student_count();
    let ranks: Vec<Vec<u32>> = p
        .environment
        .priorities
        .iter()
        .map(|prio| prio.rank_table(n))
        .collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        let pref_i = &p.profile.preferences()[i];
        let own = mu.assignment()[i];
        for j in 0..n {
            if i == j {
                continue;
            }
            let Some(s) = mu.assignment()[j] else {
                continue;
            };
            if pref_i.prefers(Some(s), own) && ranks[s.index()][i] < ranks[s.index()][j] {
                pairs.push((StudentId(i as u32), StudentId(j as u32), s));
            }
        }
    }
    pairs
}

/// True iff no student prefers a school that still has an empty seat.
pub fn is_non_wasteful(p: &Problem, mu: &Matching) -> bool {
    let counts = mu.fill_counts(p.school_count());
    for (i, pref) in p.profile.preferences().iter().enumerate() {
        let own = mu.assignment()[i];
        for (s, (&filled, &cap)) in counts.iter().zip(&p.environment.capacities).enumerate() {
            if filled < cap && pref.prefers(Some(SchoolId(s as u32)), own) {
                return false;
            }
        }
    }
    true
}

/// Individually rational, no justified envy, non-wasteful.
pub fn is_stable(p: &Problem, mu: &Matching) -> bool {
    is_individually_rational(p, mu) && justified_envy_pairs(p, mu).is_empty() && is_non_wasteful(p, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{boston, gale_shapley};
    use crate::model::{Environment, Preference, PreferenceProfile, PriorityOrder};
    use crate::scenarios;
    use proptest::prelude::*;

    fn pref(ids: &[u32]) -> Preference {
        Preference::new(ids.iter().map(|&i| SchoolId(i)).collect())
    }

    #[test]
    fn all_unmatched_is_individually_rational() {
        let p = Problem::new(
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1]), vec![1]),
            PreferenceProfile::new(vec![pref(&[0]), pref(&[0])]),
        );
        assert!(is_individually_rational(&p, &Matching::new(vec![None, None])));
    }

    #[test]
    fn unlisted_assignment_is_irrational() {
        let p = Problem::new(
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1]), vec![1, 1]),
            PreferenceProfile::new(vec![pref(&[0]), pref(&[0])]),
        );
        let mu = Matching::new(vec![Some(SchoolId(1)), None]);
        assert!(!is_individually_rational(&p, &mu));
    }

    #[test]
    fn counterexample_truncated_matching_is_rational_and_stable() {
        let fx = scenarios::fixture("ps13-counterexample").unwrap();
        let truncated = fx.problem.truncate(3);
        let mu = gale_shapley(&truncated);
        assert!(is_individually_rational(&truncated, &mu));
        assert!(is_stable(&truncated, &mu));
    }

    #[test]
    fn lower_priority_holder_triggers_envy() {
        // one seat, both want it, the lower-priority student holds it
        let p = Problem::new(
            Environment::new(vec![PriorityOrder::from_indices(&[0, 1])], vec![1]),
            PreferenceProfile::new(vec![pref(&[0]), pref(&[0])]),
        );
        let mu = Matching::new(vec![None, Some(SchoolId(0))]);
        assert_eq!(
            justified_envy_pairs(&p, &mu),
            vec![(StudentId(0), StudentId(1), SchoolId(0))]
        );
    }

    #[test]
    fn boston_truthful_outcome_of_equilibrium_example_has_no_envy() {
        let fx = scenarios::fixture("boston-equilibrium").unwrap();
        let mu = boston(&fx.problem);
        assert!(justified_envy_pairs(&fx.problem, &mu).is_empty());
        assert!(is_stable(&fx.problem, &mu));
    }

    #[test]
    fn first_choices_for_everyone_is_non_wasteful() {
        let p = Problem::new(
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1]), vec![1, 1]),
            PreferenceProfile::new(vec![pref(&[0]), pref(&[1])]),
        );
        let mu = Matching::new(vec![Some(SchoolId(0)), Some(SchoolId(1))]);
        assert!(is_non_wasteful(&p, &mu));
        assert!(is_stable(&p, &mu));
    }

    #[test]
    fn unmatched_student_with_free_acceptable_seat_is_wasteful() {
        let p = Problem::new(
            Environment::with_common_priority(PriorityOrder::from_indices(&[0, 1]), vec![1, 1]),
            PreferenceProfile::new(vec![pref(&[0, 1]), pref(&[0])]),
        );
        let mu = Matching::new(vec![Some(SchoolId(0)), None]);
        // school 1 has a free seat but student 0 holds school 0; fine
        assert!(is_non_wasteful(&p, &mu));
        // now student 0 is parked below their taste
        let mu = Matching::new(vec![Some(SchoolId(1)), None]);
        assert!(!is_non_wasteful(&p, &mu));
        assert!(!is_stable(&p, &mu));
    }

    #[test]
    fn binding_constraint_wastes_last_tier_seats() {
        // five students, two tiers of two schools, everyone ranks all four;
        // the length-2 dictatorship outcome leaves tier-two seats idle
        let fx = scenarios::fixture("tier-sd").unwrap();
        let full = &fx.problem;
        let mu = crate::mechanisms::apply_mechanism(
            &crate::mechanisms::MechanismSpec::sd().with_constraint(2),
            full,
        )
        .unwrap();
        assert!(!is_non_wasteful(full, &mu));
    }

    fn arb_problem_and_matching() -> impl Strategy<Value = (Problem, Matching)> {
        (2usize..=4, 1usize..=3).prop_flat_map(|(n, m)| {
            let prefs = proptest::collection::vec(
                proptest::sample::subsequence((0..m as u32).collect::<Vec<_>>(), 0..=m)
                    .prop_shuffle()
                    .prop_map(|ids| Preference::new(ids.into_iter().map(SchoolId).collect())),
                n,
            );
            let priorities = proptest::collection::vec(
                Just((0..n as u32).collect::<Vec<u32>>()).prop_shuffle(),
                m,
            );
            let caps = proptest::collection::vec(1u32..=2, m);
            let assignment = proptest::collection::vec(
                proptest::option::of(0..m as u32),
                n,
            );
            (prefs, priorities, caps, assignment).prop_map(move |(prefs, prios, caps, assign)| {
                let env = Environment::new(
                    prios.iter().map(|o| PriorityOrder::from_indices(o)).collect(),
                    caps.clone(),
                );
                // clamp the assignment to the capacities so the matching is feasible
                let mut counts = vec![0u32; m];
                let assignment = assign
                    .into_iter()
                    .map(|a| {
                        a.and_then(|s| {
                            if counts[s as usize] < caps[s as usize] {
                                counts[s as usize] += 1;
                                Some(SchoolId(s))
                            } else {
                                None
                            }
                        })
                    })
                    .collect();
                (
                    Problem::new(env, PreferenceProfile::new(prefs)),
                    Matching::new(assignment),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn stability_is_the_conjunction_of_its_parts((p, mu) in arb_problem_and_matching()) {
            prop_assert!(mu.respects_capacities(&p.environment));
            let expected = is_individually_rational(&p, &mu)
                && justified_envy_pairs(&p, &mu).is_empty()
                && is_non_wasteful(&p, &mu);
            prop_assert_eq!(is_stable(&p, &mu), expected);
        }
    }
}
