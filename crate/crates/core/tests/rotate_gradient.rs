use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symkbc::rotate::{RotatEModel, Sample};
use symkbc::{EntityId, RelationId, Triple};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..5 {
        let model = RotatEModel::init(5, 2, 3, 6.0, trial);
        let samples: Vec<Sample> = (0..4)
            .map(|_| Sample {
                positive: Triple::new(
                    EntityId(rng.gen_range(0..5)),
                    RelationId(rng.gen_range(0..2)),
                    EntityId(rng.gen_range(0..5)),
                ),
                negative_tails: (0..3).map(|_| EntityId(rng.gen_range(0..5))).collect(),
            })
            .collect();
        let (_, grad) = model.loss_and_gradient(&samples);
        let eps = 1e-6;
        let n_ent = model.entity_params().len();
        let total = n_ent + model.phase_params().len();
        for i in 0..total {
            let mut plus = model.clone();
            let mut minus = model.clone();
            {
                let (e, p) = plus.params_mut();
                if i < n_ent { e[i] += eps } else { p[i - n_ent] += eps }
            }
            {
                let (e, p) = minus.params_mut();
                if i < n_ent { e[i] -= eps } else { p[i - n_ent] -= eps }
            }
            let numeric = (plus.loss(&samples) - minus.loss(&samples)) / (2.0 * eps);
            let analytic = if i < n_ent { grad.entity[i] } else { grad.phase[i - n_ent] };
            if numeric.abs() < 1e-9 && analytic.abs() < 1e-9 {
                continue;
            }
            assert!(
                rel_err(analytic, numeric) <= 1e-4,
                "param {i}: analytic {analytic} numeric {numeric}"
            );
        }
    }
}
