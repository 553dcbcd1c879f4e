//! Simulation-based calibration of item difficulty.
//!
//! The crate fits generalized partial credit (GPCM) IRT models to scored
//! open-ended responses, mines likelihood-ranked preference pairs for
//! aligning simulated students, runs population-scale response simulations
//! through pluggable generator and scorer backends, and refits the model on
//! real plus simulated responses to predict the difficulty of unseen items.
//!
//! ```
//! use psychocal::irt::{predict_score, score_probabilities, ItemParams};
//!
//! let item = ItemParams::new("q1", 1.0, 0.0, vec![0.0, 0.5, -0.5]).unwrap();
//! let p = score_probabilities(1.0, &item).unwrap();
//! assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! assert_eq!(predict_score(1.0, &item).unwrap(), 2);
//! ```

pub mod dataio;
pub mod difficulty;
pub mod irt;
pub mod metrics;
pub mod pairs;
pub mod prompt;
pub mod seed;
pub mod sim;
