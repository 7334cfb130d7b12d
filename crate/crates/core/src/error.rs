use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("angles collide (min gap {min_gap:e})")]
    Collision { min_gap: f64 },

    #[error("driver collision at step {step}; path valid up to step {valid_to}")]
    DriverCollision { step: usize, valid_to: usize },

    #[error("collision guard still tripping at step {step} after {retries} halvings (gap {gap:e})")]
    GuardAbort { step: usize, retries: u32, gap: f64 },

    #[error("driver increment {increment:e} at step {step} exceeds bound {bound:e}")]
    IncrementTooLarge { step: usize, increment: f64, bound: f64 },

    #[error("curve is not simple: sample {index} falls on or outside the unit circle after unzipping (|w| = {modulus})")]
    NotSimple { index: usize, modulus: f64 },

    #[error("capacity estimates disagree at step {step}: refit {refit}, ode {ode}")]
    TimeChangeMismatch { step: usize, refit: f64, ode: f64 },

    #[error("curves {i} and {j} are within {distance:e} of each other (floor {floor:e})")]
    TooClose { i: usize, j: usize, distance: f64, floor: f64 },

    #[error("linear algebra failure: {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}
