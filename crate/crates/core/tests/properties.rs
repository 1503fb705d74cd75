use ase_core::confidence::{hoeffding_width, width_states, AnalogyOracle, ConfidenceModel};
use ase_core::mdp::{is_closed, is_communicating};
use ase_core::oracle::{brute_force_candidate_max, compute_true_safe_set};
use ase_core::plan::{inner_max, inner_max_value, occupancy_distribution};
use ase_core::safe_set::expand_safe_set;
use ase_core::verify::{random_mdp, random_row};
use ase_core::{ActionId, Pair, Policy, StateActionSet, StateId, Value};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn values_strategy(k: usize) -> impl Strategy<Value = Vec<Value>> {
    prop::collection::vec(
        prop_oneof![1 => Just(Value::Bottom), 4 => (-1.0f64..1.0).prop_map(Value::Finite)],
        k,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn inner_max_stays_in_the_ball(seed in any::<u64>(), width in 0.0f64..2.0, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center_row = random_row(&mut rng, k, 0.1);
        let mut center = vec![0.0; k];
        for &(s, p) in &center_row {
            center[s.0] = p;
        }
        let allowed: Vec<bool> = (0..k).map(|s| center[s] > 0.0 || rng.gen::<bool>()).collect();
        let values: Vec<Value> = (0..k).map(|_| Value::Finite(rng.gen_range(-1.0..1.0))).collect();
        let row = inner_max(&center, width, &allowed, &values).expect("finite values present");
        let mass: f64 = row.iter().sum();
        let l1: f64 = row.iter().zip(&center).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        prop_assert!(l1 <= width + 1e-9);
        prop_assert!(row.iter().zip(&allowed).all(|(&p, &ok)| ok || p == 0.0));
        prop_assert!(row.iter().all(|&p| p >= -1e-12));
        let base: f64 = center.iter().zip(&values).map(|(p, v)| p * v.finite().unwrap()).sum();
        let got = inner_max_value(&center, width, &allowed, &values).finite().unwrap();
        prop_assert!(got >= base - 1e-9);
    }

    #[test]
    fn inner_max_matches_lattice_search(units in prop::collection::vec(0usize..=10, 3), width_units in 0usize..=10, values in values_strategy(3)) {
        let total: usize = units.iter().sum();
        prop_assume!(total > 0);
        // Normalize onto a 0.1 lattice with the remainder on the first entry.
        let mut center: Vec<f64> = units.iter().map(|&u| (u * 10 / total) as f64 / 10.0).collect();
        let rest = 1.0 - center.iter().sum::<f64>();
        center[0] += rest;
        let allowed = vec![true; 3];
        let width = width_units as f64 * 0.2;
        let got = inner_max_value(&center, width, &allowed, &values);
        let oracle = brute_force_candidate_max(&center, width, &allowed, &values, 0.1);
        match got {
            Value::Bottom => prop_assert_eq!(oracle, f64::NEG_INFINITY),
            Value::Finite(v) => prop_assert!((v - oracle).abs() < 1e-6, "greedy {v} vs lattice {oracle}"),
        }
    }

    #[test]
    fn width_shrinks_with_samples(n in 1u32..5000, states in 2usize..40) {
        let a = hoeffding_width(n, states, 0.1).unwrap();
        let b = hoeffding_width(n + 1, states, 0.1).unwrap();
        prop_assert!(b <= a);
        prop_assert!(a > 0.0);
    }

    #[test]
    fn transferred_width_never_grows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, na, tau) = (5, 2, 0.25);
        let mdp = random_mdp(&mut rng, ns, na, tau, 0.0);
        // Every pair is a half-width analog of every other; successors map to themselves.
        let links = (0..ns * na)
            .map(|i| (0..ns * na).filter(|&j| j != i).map(|j| (Pair::from_index(j, na), 0.5)).collect())
            .collect();
        let analogy = AnalogyOracle::new(ns, na, links, std::sync::Arc::new(|_, s2, _| Some(s2)));
        let mut model = ConfidenceModel::new(&analogy, 50, 0.1, width_states(ns, tau, true)).unwrap();
        let mut before: Vec<f64> = mdp.pairs().map(|p| model.eps_tilde(p)).collect();
        for _ in 0..200 {
            let p = Pair::new(rng.gen_range(0..ns), rng.gen_range(0..na));
            model.record_transition(p, mdp.sample_next(p, rng.gen()));
            model.transfer(&analogy);
            let after: Vec<f64> = mdp.pairs().map(|p| model.eps_tilde(p)).collect();
            prop_assert!(after.iter().zip(&before).all(|(a, b)| a <= b));
            before = after;
        }
    }

    #[test]
    fn expansion_grows_with_knowledge(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ns = rng.gen_range(2..=6);
        let na = rng.gen_range(1..=3);
        let tau = 0.25;
        let mdp = random_mdp(&mut rng, ns, na, tau, 0.15);
        let z0 = StateActionSet::from_pairs(ns, na, [Pair::new(0, 0)]);
        let analogy = AnalogyOracle::identity(ns, na);
        let mut model = ConfidenceModel::new(&analogy, 10, 0.1, width_states(ns, tau, true).max(2)).unwrap();
        let truth = compute_true_safe_set(&mdp, &z0).unwrap().z_safe;
        let mut prev = z0.clone();
        let mut order: Vec<Pair> = mdp.pairs().collect();
        order.sort_by_key(|_| rng.gen::<u32>());
        for p in order {
            model.set_known_row(p, mdp.support(p).clone());
            model.transfer(&analogy);
            let z = expand_safe_set(&z0, &model, mdp.rewards(), tau).z_safe;
            prop_assert!(prev.is_subset(&z));
            prop_assert!(z.is_subset(&truth));
            prop_assert!(is_closed(&z, &mdp));
            prop_assert!(is_communicating(&z, &mdp));
            prev = z;
        }
        // Once every row is known the expansion reaches the true safe set.
        prop_assert_eq!(prev, truth);
    }

    #[test]
    fn occupancy_mass_identity(seed in any::<u64>(), gamma in 0.05f64..0.99, horizon in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, na) = (rng.gen_range(1..=6), rng.gen_range(1..=3));
        let transitions: Vec<_> = (0..ns * na).map(|_| random_row(&mut rng, ns, 0.1)).collect();
        let policy = Policy { actions: (0..ns).map(|_| ActionId(rng.gen_range(0..na))).collect() };
        let occ = occupancy_distribution(&policy, &transitions, na, StateId(0), gamma, horizon);
        prop_assert!((occ.total() - (1.0 - gamma.powi(horizon as i32 + 1))).abs() < 1e-9);
        prop_assert!(occ.rho.iter().all(|&r| r >= 0.0));
        for s in 0..ns {
            for a in 0..na {
                if a != policy.actions[s].0 {
                    prop_assert_eq!(occ.rho[s * na + a], 0.0);
                }
            }
        }
    }

    #[test]
    fn set_algebra(bits in prop::collection::vec(any::<bool>(), 12), other in prop::collection::vec(any::<bool>(), 12)) {
        let a = StateActionSet::from_fn(4, 3, |p| bits[p.index(3)]);
        let b = StateActionSet::from_fn(4, 3, |p| other[p.index(3)]);
        let diff = a.difference(&b);
        prop_assert!(diff.is_subset(&a));
        prop_assert!(!diff.intersects(&b));
        let mut union = diff.clone();
        union.union_with(&b);
        prop_assert!(a.is_subset(&union));
        prop_assert_eq!(a.complement().len() + a.len(), 12);
        prop_assert_eq!(a.iter().count(), a.len());
    }
}
