//! Linear root-zone water balance
//!
//! ```text
//! v[t+1] = c1·v[t] + c2·(a[t] + p[t]) + c3·e[t] + b
//! ```
//!
//! with `a` irrigation, `p` rain and `e` evapotranspiration, all in inches.
//! The same model drives the simulator (one instance per region) and the
//! safety shield (a separately identified instance), so the two roles never
//! share state. Coefficients come from ordinary least squares on logged days.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weather::WeatherDay;

pub const MIN_FIT_ROWS: usize = 8;
/// Headroom above field capacity kept reachable by the clamp, inches.
pub const SURPLUS_HEADROOM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub b: f64,
    #[serde(default)]
    pub r_squared: f64,
    #[serde(default)]
    pub nrmse: f64,
    /// Upper clamp on predictions; `None` leaves them unbounded above.
    #[serde(default)]
    pub ceiling: Option<f64>,
}

impl PredictorModel {
    pub fn new(c1: f64, c2: f64, c3: f64, b: f64) -> Self {
        Self {
            c1,
            c2,
            c3,
            b,
            r_squared: f64::NAN,
            nrmse: f64::NAN,
            ceiling: None,
        }
    }

    /// Field fit for the first testbed tree.
    pub fn tree1() -> Self {
        Self {
            r_squared: 0.982,
            nrmse: 0.062,
            ..Self::new(0.973, 0.288, -0.103, 0.003)
        }
    }

    /// Field fit for the second testbed tree.
    pub fn tree2() -> Self {
        Self {
            r_squared: 0.985,
            nrmse: 0.071,
            ..Self::new(0.937, 0.325, -0.121, 0.013)
        }
    }

    pub fn with_ceiling(self, ceiling: f64) -> Self {
        Self {
            ceiling: Some(ceiling),
            ..self
        }
    }

    /// Caps predictions at field capacity plus [`SURPLUS_HEADROOM`].
    pub fn capped_at_fc(self, v_fc: f64) -> Self {
        self.with_ceiling(v_fc + SURPLUS_HEADROOM)
    }

    /// The unclamped affine part.
    pub fn linear(&self, v_t: f64, a_t: f64, p_t: f64, e_t: f64) -> f64 {
        self.c1 * v_t + self.c2 * (a_t + p_t) + self.c3 * e_t + self.b
    }

    pub fn predict_next(&self, v_t: f64, a_t: f64, p_t: f64, e_t: f64) -> f64 {
        let v = self.linear(v_t, a_t, p_t, e_t).max(0.0);
        match self.ceiling {
            Some(cap) => v.min(cap),
            None => v,
        }
    }

    /// Iterates [`predict_next`](Self::predict_next) over `(a, p, e)` triples.
    pub fn rollout(&self, v_0: f64, plan: &[(f64, f64, f64)]) -> Vec<f64> {
        plan.iter()
            .scan(v_0, |v, &(a, p, e)| {
                *v = self.predict_next(*v, a, p, e);
                Some(*v)
            })
            .collect()
    }

    /// Whether the coefficients describe draining, water-accepting, ET-losing soil.
    pub fn plausibility_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.c1 > 0.0 && self.c1 <= 1.0) {
            out.push(format!("c1 = {} outside (0, 1]", self.c1));
        }
        if self.c2 < 0.0 {
            out.push(format!("c2 = {} is negative", self.c2));
        }
        if self.c3 > 0.0 {
            out.push(format!("c3 = {} is positive", self.c3));
        }
        out
    }
}

/// One logged day used for identification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub v_t: f64,
    pub a_t: f64,
    pub p_t: f64,
    pub e_t: f64,
    pub v_next: f64,
}

const REGRESSORS: [&str; 3] = ["v_t", "a_t + p_t", "e_t"];

/// Ordinary least squares fit of the water-balance coefficients.
pub fn fit(rows: &[ObservationRow]) -> Result<PredictorModel> {
    if rows.len() < MIN_FIT_ROWS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_ROWS,
            got: rows.len(),
        });
    }
    let n = rows.len();
    let columns: [Vec<f64>; 3] = [
        rows.iter().map(|r| r.v_t).collect(),
        rows.iter().map(|r| r.a_t + r.p_t).collect(),
        rows.iter().map(|r| r.e_t).collect(),
    ];
    for (name, col) in REGRESSORS.iter().zip(&columns) {
        let mean = col.iter().sum::<f64>() / n as f64;
        let spread = col.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
        if spread <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::RankDeficient(name));
        }
    }

    let x = DMatrix::from_fn(n, 4, |i, j| if j < 3 { columns[j][i] } else { 1.0 });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.v_next));
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10;
    if let Some(j) = svd.singular_values.iter().position(|s| *s <= tol) {
        // Name the regressor that dominates the null direction.
        let v_t = svd.v_t.as_ref().expect("requested V");
        let row = v_t.row(j);
        let k = (0..3).max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs())).unwrap_or(0);
        return Err(Error::RankDeficient(REGRESSORS[k]));
    }
    let beta = svd
        .solve(&y, tol)
        .map_err(|_| Error::RankDeficient("design matrix"))?;

    let mut model = PredictorModel::new(beta[0], beta[1], beta[2], beta[3]);
    if let Ok((r2, nrmse)) = diagnostics(&model, rows) {
        model.r_squared = r2;
        model.nrmse = nrmse;
    }
    Ok(model)
}

/// `(R², NRMSE)` of `model` on `rows`; NRMSE is normalised by the observed
/// range of `v_next`.
pub fn diagnostics(model: &PredictorModel, rows: &[ObservationRow]) -> Result<(f64, f64)> {
    if rows.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.v_next).sum::<f64>() / n;
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.v_next), hi.max(r.v_next)));
    let ss_tot: f64 = rows.iter().map(|r| (r.v_next - mean).powi(2)).sum();
    if hi - lo <= 0.0 || ss_tot <= 0.0 {
        return Err(Error::ConstantTarget);
    }
    let ss_res: f64 = rows
        .iter()
        .map(|r| (r.v_next - model.predict_next(r.v_t, r.a_t, r.p_t, r.e_t)).powi(2))
        .sum();
    let rmse = (ss_res / n).sqrt();
    Ok((1.0 - ss_res / ss_tot, rmse / (hi - lo)))
}

/// Simulates an identification log: each day a random irrigation amount in
/// `[0, a_max]` is applied (or none), the model advances with Gaussian
/// equation noise of `noise_std`, and the row is recorded.
pub fn synthesize_observations(
    model: &PredictorModel,
    weather: &[WeatherDay],
    v_0: f64,
    a_max: f64,
    noise_std: f64,
    seed: u64,
) -> Vec<ObservationRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let mut v = v_0;
    weather
        .iter()
        .map(|day| {
            let a_t = if rng.random::<f64>() < 0.7 {
                a_max * rng.random::<f64>()
            } else {
                0.0
            };
            let eps = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let v_next = (model.predict_next(v, a_t, day.precip, day.et) + eps).max(0.0);
            let row = ObservationRow {
                v_t: v,
                a_t,
                p_t: day.precip,
                e_t: day.et,
                v_next,
            };
            v = v_next;
            row
        })
        .collect()
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<Vec<ObservationRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<ObservationRow>, _>>()?;
    Ok(rows)
}

pub fn write_observations(path: impl AsRef<Path>, rows: &[ObservationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
