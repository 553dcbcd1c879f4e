use std::collections::BTreeMap;

use proptest::prelude::*;
use psychocal::irt::{
    log_likelihood, log_likelihood_gradient, params_from_json, params_to_json, score_probabilities, AbilityRecord,
    FitConfig, FitResult, ItemParams, ScoredResponse,
};
use psychocal::sim::{sample_population, AbilityHistogram};

const H: f64 = 1e-5;

fn ability(id: impl Into<String>, theta: f64) -> AbilityRecord {
    AbilityRecord {
        student_id: id.into(),
        theta,
    }
}

#[derive(Debug)]
struct Instance {
    items: BTreeMap<String, ItemParams>,
    abilities: BTreeMap<String, AbilityRecord>,
    responses: Vec<ScoredResponse>,
}

fn instance() -> impl Strategy<Value = Instance> {
    let item = (0.3f64..2.5, -2.0f64..2.0, prop::collection::vec(-1.0f64..1.0, 0..3));
    (
        prop::collection::vec(item, 1..4),
        prop::collection::vec(-2.5f64..2.5, 1..5),
        any::<u64>(),
    )
        .prop_map(|(items, thetas, mix)| {
            let items: BTreeMap<String, ItemParams> = items
                .into_iter()
                .enumerate()
                .map(|(i, (a, b, free))| {
                    let id = format!("i{i}");
                    (id.clone(), ItemParams::from_free_steps(id, a, b, &free).unwrap())
                })
                .collect();
            let abilities: BTreeMap<String, AbilityRecord> = thetas
                .iter()
                .enumerate()
                .map(|(j, &t)| (format!("s{j}"), ability(format!("s{j}"), t)))
                .collect();
            let mut responses = Vec::new();
            for (k, (id, p)) in items.iter().enumerate() {
                for (j, sid) in abilities.keys().enumerate() {
                    let y = (mix.rotate_left((k * 7 + j * 3) as u32) as usize) % p.num_categories();
                    responses.push(ScoredResponse::new(id, sid, "", y));
                }
            }
            Instance {
                items,
                abilities,
                responses,
            }
        })
}

fn ll(inst: &Instance, items: &BTreeMap<String, ItemParams>, abilities: &BTreeMap<String, AbilityRecord>) -> f64 {
    log_likelihood(&inst.responses, items, abilities).unwrap()
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(H) - f(-H)) / (2.0 * H)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3) <= 1e-4
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(inst in instance()) {
        let grad = log_likelihood_gradient(&inst.responses, &inst.items, &inst.abilities).unwrap();
        for (id, p) in &inst.items {
            let with = |q: ItemParams| {
                let mut items = inst.items.clone();
                items.insert(id.clone(), q);
                ll(&inst, &items, &inst.abilities)
            };
            let g = &grad.items[id];
            let da = central(|h| with(ItemParams::from_free_steps(id.as_str(), p.discrimination() + h, p.difficulty(), p.free_steps()).unwrap()));
            prop_assert!(close(g.discrimination, da), "a of {id}: {} vs {da}", g.discrimination);
            let db = central(|h| with(ItemParams::from_free_steps(id.as_str(), p.discrimination(), p.difficulty() + h, p.free_steps()).unwrap()));
            prop_assert!(close(g.difficulty, db), "b of {id}: {} vs {db}", g.difficulty);
            for k in 0..p.free_steps().len() {
                let de = central(|h| {
                    let mut free = p.free_steps().to_vec();
                    free[k] += h;
                    with(ItemParams::from_free_steps(id.as_str(), p.discrimination(), p.difficulty(), &free).unwrap())
                });
                prop_assert!(close(g.free_steps[k], de), "step {k} of {id}: {} vs {de}", g.free_steps[k]);
            }
        }
        for (sid, a) in &inst.abilities {
            let dt = central(|h| {
                let mut abilities = inst.abilities.clone();
                abilities.insert(sid.clone(), ability(sid.as_str(), a.theta + h));
                ll(&inst, &inst.items, &abilities)
            });
            prop_assert!(close(grad.abilities[sid], dt), "theta of {sid}: {} vs {dt}", grad.abilities[sid]);
        }
    }

    #[test]
    fn probabilities_depend_only_on_theta_minus_b(
        a in 0.2f64..3.0, b in -3.0f64..3.0, theta in -4.0f64..4.0, shift in -2.0f64..2.0,
        free in prop::collection::vec(-1.0f64..1.0, 0..4),
    ) {
        let p = ItemParams::from_free_steps("q", a, b, &free).unwrap();
        let q = ItemParams::from_free_steps("q", a, b + shift, &free).unwrap();
        let x = score_probabilities(theta, &p).unwrap();
        let y = score_probabilities(theta + shift, &q).unwrap();
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (u, v) in x.iter().zip(&y) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn params_json_round_trips(a in 0.2f64..3.0, b in -3.0f64..3.0, theta in -3.0f64..3.0) {
        let p = ItemParams::from_free_steps("q", a, b, &[0.25]).unwrap();
        let fit = FitResult {
            item_params: BTreeMap::from([("q".to_string(), p)]),
            abilities: BTreeMap::from([("s".to_string(), ability("s", theta))]),
            holdout_qwk: None,
            final_loss: 1.5,
            loss_curve: Vec::new(),
            config: FitConfig::default(),
        };
        let text = params_to_json(&fit);
        let back = params_from_json(&text).unwrap();
        prop_assert_eq!(params_to_json(&back), text);
        prop_assert!((back.difficulty("q").unwrap() - b).abs() <= 5e-10);
    }
}

#[test]
fn sampled_population_matches_histogram_cdf() {
    // skewed training abilities so the histogram is far from uniform
    let train: Vec<f64> = (0..2000).map(|i| ((i as f64 + 0.5) / 2000.0).powi(3) * 4.0 - 1.0).collect();
    let hist = AbilityHistogram::from_values(&train, 50).unwrap();
    let mut pop = sample_population(&train, 100_000, 50, 17).unwrap();
    pop.sort_by(f64::total_cmp);
    let n = pop.len() as f64;
    let ks = pop
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = hist.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks <= 0.03, "KS distance {ks}");
}
