//! Reference models shared by the integration suites.
//!
//! * `m1` — one type, rate 1, always two own-type children (λ = 1).
//! * `m2` — two types, rate 1 each; type 0 splits into (2,0) or (0,1) with
//!   probability ½ each, type 1 always into (1,1) (λ = √½, α = (½, ½)).
//! * `m3` — one type, rate 1; zero children w.p. ¼, two w.p. ¾ (λ = ½,
//!   extinction probability ⅓).

use branchsim::estimators::ModelContext;
use branchsim::model::{Atom, BranchingModel, OffspringLaw};

pub fn m1() -> BranchingModel {
    BranchingModel::new(
        vec![1.0],
        vec![OffspringLaw::new(vec![Atom {
            counts: vec![2],
            prob: 1.0,
        }])],
    )
}

pub fn m2() -> BranchingModel {
    BranchingModel::new(
        vec![1.0, 1.0],
        vec![
            OffspringLaw::new(vec![
                Atom {
                    counts: vec![2, 0],
                    prob: 0.5,
                },
                Atom {
                    counts: vec![0, 1],
                    prob: 0.5,
                },
            ]),
            OffspringLaw::new(vec![Atom {
                counts: vec![1, 1],
                prob: 1.0,
            }]),
        ],
    )
}

pub fn m3() -> BranchingModel {
    BranchingModel::new(
        vec![1.0],
        vec![OffspringLaw::new(vec![
            Atom {
                counts: vec![0],
                prob: 0.25,
            },
            Atom {
                counts: vec![2],
                prob: 0.75,
            },
        ])],
    )
}

pub fn ctx_m1() -> ModelContext {
    ModelContext::new("m1", m1()).unwrap()
}

pub fn ctx_m2() -> ModelContext {
    ModelContext::new("m2", m2()).unwrap()
}

pub fn ctx_m3() -> ModelContext {
    ModelContext::new("m3", m3()).unwrap()
}

pub const LAMBDA_M2: f64 = std::f64::consts::FRAC_1_SQRT_2;
