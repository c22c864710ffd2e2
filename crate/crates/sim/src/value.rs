use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::SimError;

/// How a simulated quantity evolves from one sample to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueModel {
    Constant {
        value: f64,
    },
    RandomWalk {
        start: f64,
        step: f64,
        min: f64,
        max: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Values from the last column of a CSV file, cycled. A header row is
    /// skipped when its last cell is not a number.
    Replay {
        path: PathBuf,
    },
}

impl Default for ValueModel {
    fn default() -> Self {
        ValueModel::Constant { value: 0.0 }
    }
}

impl ValueModel {
    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            ValueModel::Constant { value } if !value.is_finite() => {
                Err(SimError::Model("constant value is not finite".into()))
            }
            ValueModel::RandomWalk { start, step, min, max, .. } => {
                if ![*start, *step, *min, *max].iter().all(|v| v.is_finite()) {
                    Err(SimError::Model("random_walk parameters must be finite".into()))
                } else if !(min <= start && start <= max) {
                    Err(SimError::Model(format!("random_walk start {start} outside [{min}, {max}]")))
                } else if *step <= 0.0 {
                    Err(SimError::Model("random_walk step must be positive".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Seeds derived from `salt` let many instances of one model diverge.
    pub fn source(&self, salt: u64) -> Result<ValueSource, SimError> {
        self.validate()?;
        Ok(match self {
            ValueModel::Constant { value } => ValueSource::Constant(*value),
            ValueModel::RandomWalk { start, step, min, max, seed } => ValueSource::Walk {
                current: *start,
                step: *step,
                min: *min,
                max: *max,
                rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))),
            },
            ValueModel::Replay { path } => {
                let values = read_replay(path)?;
                ValueSource::Replay { current: values[0], values, pos: 0 }
            }
        })
    }
}

fn read_replay(path: &PathBuf) -> Result<Vec<f64>, SimError> {
    let err = |reason: String| SimError::Replay { path: path.display().to_string(), reason };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let Some(cell) = record.iter().next_back() else { continue };
        match cell.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if i == 0 => {}
            _ => return Err(err(format!("line {}: `{cell}` is not a number", i + 1))),
        }
    }
    if values.is_empty() {
        return Err(err("no values".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone)]
pub enum ValueSource {
    Constant(f64),
    Walk {
        current: f64,
        step: f64,
        min: f64,
        max: f64,
        rng: ChaCha8Rng,
    },
    Replay {
        values: Vec<f64>,
        pos: usize,
        current: f64,
    },
}

impl ValueSource {
    pub fn current(&self) -> f64 {
        match self {
            ValueSource::Constant(v) => *v,
            ValueSource::Walk { current, .. } | ValueSource::Replay { current, .. } => *current,
        }
    }

    /// Advances one sample and returns it.
    pub fn next(&mut self) -> f64 {
        match self {
            ValueSource::Constant(v) => *v,
            ValueSource::Walk { current, step, min, max, rng } => {
                let delta = rng.gen_range(-*step..=*step);
                *current = (*current + delta).clamp(*min, *max);
                *current
            }
            ValueSource::Replay { values, pos, current } => {
                *pos = (*pos + 1) % values.len();
                *current = values[*pos];
                *current
            }
        }
    }
}
