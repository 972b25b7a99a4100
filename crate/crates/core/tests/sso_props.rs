use proptest::prelude::*;

use csvm::data_io::{Dataset, Record};
use csvm::sso::{fitness, init_population, step, train, Fitness, SsoParams};

fn dataset() -> impl Strategy<Value = Dataset> {
    (2usize..5, 8usize..20).prop_flat_map(|(dim, n)| {
        prop::collection::vec((prop::collection::vec(0.0f64..1.0, dim), any::<bool>()), n).prop_map(|rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (attributes, b))| {
                    let label = if i == 0 { 1 } else if i == 1 { -1 } else if b { 1 } else { -1 };
                    Record { attributes, label }
                })
                .collect();
            Dataset::new("gen", records).unwrap()
        })
    })
}

fn params(data: &Dataset, n_filter: usize) -> SsoParams {
    SsoParams { n_sol: 4, n_filter, n_var: data.n_att.min(2), n_gen: 12, ..SsoParams::default() }
}

fn lowest_argmax(v: &[f64]) -> usize {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter().position(|&x| x == top).unwrap() + 1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn population_invariants_hold_every_generation(data in dataset(), n_filter in 1usize..4, seed in any::<u64>()) {
        let p = params(&data, n_filter);
        let fit = Fitness::new(&data, &p).unwrap();
        let mut pop = init_population(&fit, seed).unwrap();
        let mut best = pop.best().best_fitness();
        for _ in 0..p.n_gen {
            step(&mut pop, &fit).unwrap();
            let now = pop.best().best_fitness();
            prop_assert!(now >= best);
            best = now;
            let top = pop.candidates.iter().map(|c| c.best_fitness()).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(now, top);
            for c in &pop.candidates {
                for filter in c.bank.filters() {
                    prop_assert!(filter.weights.iter().all(|w| w.abs() <= p.bound));
                }
                let fresh: Vec<f64> = (1..=n_filter).map(|d| fit.value(&c.bank, d).unwrap()).collect();
                prop_assert_eq!(&c.prefix_fitness, &fresh);
                prop_assert_eq!(c.p_filter, lowest_argmax(&fresh));
            }
        }
    }

    #[test]
    fn trained_model_sits_at_shallowest_best_depth(data in dataset(), n_filter in 1usize..4, seed in any::<u64>()) {
        let p = params(&data, n_filter);
        let model = train(&data, &p, seed, &[0, 6, 12]).unwrap();
        prop_assert_eq!(model.bank.n_filter(), model.depth);
        prop_assert_eq!(fitness(&model.bank, model.depth, &data, &p).unwrap(), model.fitness);
        for d in 1..model.depth {
            prop_assert!(fitness(&model.bank, d, &data, &p).unwrap() < model.fitness);
        }
        let series: Vec<f64> = model.checkpoints.iter().map(|c| c.fitness).collect();
        prop_assert!(series.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*series.last().unwrap(), model.fitness);
    }
}
