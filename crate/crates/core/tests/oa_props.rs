use std::collections::BTreeMap;

use proptest::prelude::*;

use csvm::oa::{build_l9, earliest_peak, params_for_try, select_by_rules, LevelTable, OaDesign, TrySummary, RUNTIME_TIE_GAP};
use csvm::sso::SsoParams;

fn reference_trials() -> BTreeMap<String, Vec<Vec<TrySummary>>> {
    let mut table: BTreeMap<String, Vec<Vec<TrySummary>>> = BTreeMap::new();
    for line in include_str!("fixtures/reference_trials.csv").lines().skip(1) {
        let p: Vec<&str> = line.split(',').collect();
        let ci = ["25", "50", "75"].iter().position(|c| *c == p[2]).unwrap();
        let entry = table.entry(p[0].to_string()).or_insert_with(|| vec![Vec::new(); 3]);
        entry[ci].push(TrySummary { phi: p[7].parse().unwrap(), runtime: p[3].parse().unwrap(), n_at_best: p[6].parse().unwrap() });
    }
    table
}

#[test]
fn canonical_design_is_orthogonal() {
    let d = build_l9();
    assert!(d.is_level_balanced());
    assert!(d.has_pairwise_coverage());
    assert!(!OaDesign::published().has_pairwise_coverage());
}

#[test]
fn published_rows_give_reported_settings() {
    let levels = LevelTable::default();
    let base = SsoParams::default();
    // dataset, try, n_att, expected (n_filter, n_sol, n_var, c level)
    let cases = [
        ("A", 5, 14, (3, 75, 11, 2)),
        ("B", 9, 10, (4, 25, 5, 3)),
        ("D", 7, 8, (4, 50, 6, 1)),
        ("F", 5, 2, (3, 75, 2, 2)),
        ("H", 1, 13, (1, 25, 4, 1)),
    ];
    for (name, t, n_att, (nf, ns, nv, cl)) in cases {
        let p = params_for_try(OaDesign::published().rows[t - 1], n_att, &levels, &base).unwrap();
        assert_eq!((p.n_filter, p.n_sol, p.n_var), (nf, ns, nv), "dataset {name}");
        assert_eq!(p.c, levels.c[cl - 1], "dataset {name}");
    }
}

#[test]
fn reference_trials_select_reported_tries() {
    let table = reference_trials();
    for (ds, want) in [("A", 5), ("B", 9), ("D", 7), ("F", 5), ("H", 1)] {
        let by_cp = &table[ds];
        let phi: Vec<Vec<f64>> = by_cp.iter().map(|row| row.iter().map(|t| t.phi).collect()).collect();
        let ci = earliest_peak(&phi);
        assert_eq!(select_by_rules(&by_cp[ci], RUNTIME_TIE_GAP) + 1, want, "dataset {ds}");
    }
}

fn summaries() -> impl Strategy<Value = Vec<TrySummary>> {
    prop::collection::vec((0u8..4, 1u32..20, 0usize..4), 1..10).prop_map(|v| {
        v.into_iter()
            .map(|(phi, rt, n)| TrySummary { phi: 0.8 + f64::from(phi) * 0.05, runtime: f64::from(rt), n_at_best: n })
            .collect()
    })
}

proptest! {
    #[test]
    fn winner_has_top_accuracy(tries in summaries(), gap in 0.0f64..0.5) {
        let w = select_by_rules(&tries, gap);
        prop_assert!(tries.iter().all(|t| t.phi <= tries[w].phi));
    }

    #[test]
    fn winner_is_order_independent(tries in summaries(), gap in 0.0f64..0.5, rot in 0usize..10) {
        let w = tries[select_by_rules(&tries, gap)];
        let mut moved = tries.clone();
        let r = rot % moved.len();
        moved.rotate_left(r);
        let m = moved[select_by_rules(&moved, gap)];
        prop_assert_eq!(w.phi, m.phi);
        prop_assert_eq!(w.n_at_best, m.n_at_best);
        // equal up to the remaining index tie-break
        let fastest = tries.iter().filter(|t| t.phi == w.phi).map(|t| t.runtime).fold(f64::INFINITY, f64::min);
        prop_assert!(m.runtime <= fastest * (1.0 + gap));
    }

    #[test]
    fn n_var_stays_in_range(level in 1u8..=3, n_att in 1usize..200) {
        let v = LevelTable::default().n_var(level, n_att);
        prop_assert!((1..=n_att).contains(&v));
    }
}
