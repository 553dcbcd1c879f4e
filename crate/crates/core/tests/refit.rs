use std::collections::BTreeMap;

use psychocal::difficulty::predict_difficulties;
use psychocal::irt::{fit, score_probabilities, FitConfig, ItemParams, ScoredResponse};
use psychocal::metrics::pcc;
use psychocal::sim::{run_simulation, sample_population, Item, SimulationPlan, SyntheticGenerator, SyntheticScorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn truth(rng: &mut ChaCha8Rng, prefix: &str, n: usize, spread: f64) -> BTreeMap<String, ItemParams> {
    let normal = Normal::new(0.0, spread).unwrap();
    (0..n)
        .map(|i| {
            let id = format!("{prefix}{i:02}");
            let a = rng.random_range(0.8..1.6);
            let b = normal.sample(rng);
            (id.clone(), ItemParams::from_free_steps(id.as_str(), a, b, &[rng.random_range(-0.3..0.3)]).unwrap())
        })
        .collect()
}

fn draw(rng: &mut ChaCha8Rng, theta: f64, p: &ItemParams) -> usize {
    let probs = score_probabilities(theta, p).unwrap();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, q) in probs.iter().enumerate() {
        acc += q;
        if u < acc {
            return y;
        }
    }
    probs.len() - 1
}

// With a faithful generator and clean scores, more simulated students should
// not make the recovered difficulty order worse.
#[test]
fn larger_simulations_do_not_hurt() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let train_truth = truth(&mut rng, "tr", 12, 1.0);
    let test_truth = truth(&mut rng, "te", 8, 0.4);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut train = Vec::new();
    for s in 0..600 {
        let theta: f64 = normal.sample(&mut rng);
        for (id, p) in &train_truth {
            train.push(ScoredResponse::new(id, format!("s{s:03}"), "", draw(&mut rng, theta, p)));
        }
    }
    let cats: BTreeMap<String, usize> = train_truth.keys().chain(test_truth.keys()).map(|k| (k.clone(), 3)).collect();
    let config = FitConfig {
        learning_rate: 0.01,
        epochs: 30,
        rng_seed: 21,
        ..FitConfig::default()
    };
    let calibrated = fit(&train, &cats, &config, None).unwrap();
    let thetas: Vec<f64> = calibrated.abilities.values().map(|a| a.theta).collect();

    let items: Vec<Item> = test_truth
        .keys()
        .map(|id| Item {
            item_id: id.clone(),
            passage: String::new(),
            question: "q".into(),
            rubric: String::new(),
            num_categories: 3,
        })
        .collect();
    let true_b: Vec<f64> = test_truth.values().map(ItemParams::difficulty).collect();
    let generator = SyntheticGenerator::new(test_truth.clone());
    let accuracy = |n: usize| {
        let population = sample_population(&thetas, n, 50, 21).unwrap();
        let plan = SimulationPlan {
            population_size: n,
            rng_seed: 21,
            backoff_ms: 0,
            ..SimulationPlan::default()
        };
        let sim = run_simulation(&items, &population, &plan, &generator, &SyntheticScorer).unwrap();
        let preds = predict_difficulties(&train, &sim.scored(), &calibrated, &cats, &config).unwrap();
        let got: Vec<f64> = preds.iter().map(|p| p.normalized_difficulty).collect();
        pcc(&true_b, &got).unwrap()
    };
    let small = accuracy(200);
    let large = accuracy(2000);
    assert!(large >= small, "PCC {large} at n=2000 below {small} at n=200");
    assert!(large > 0.9, "PCC {large}");
}
