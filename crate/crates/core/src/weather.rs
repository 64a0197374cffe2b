//! Daily weather records: CSV ingestion, a seeded synthetic season generator,
//! next-day forecasts and the Hargreaves temperature-based ET estimate.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset inside the Hargreaves temperature term, °C.
pub const HARGREAVES_OFFSET_C: f64 = 17.8;

/// Number of weather channels a [`WeatherDay`] contributes to the observation.
pub const WEATHER_CHANNELS: usize = 12;

/// One day of observed weather plus the forecast for the following day.
///
/// Temperatures are °F, humidity percent, solar radiation Ly/day, wind mph,
/// water quantities inches/day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherDay {
    pub date: NaiveDate,
    pub et: f64,
    pub precip: f64,
    pub t_max: f64,
    pub t_avg: f64,
    pub t_min: f64,
    pub h_max: f64,
    pub h_avg: f64,
    pub h_min: f64,
    pub solar: f64,
    pub wind: f64,
    pub predicted_et_next: f64,
    pub forecast_precip_next: f64,
}

impl WeatherDay {
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let finite = [
            ("et", self.et),
            ("precip", self.precip),
            ("t_max", self.t_max),
            ("t_avg", self.t_avg),
            ("t_min", self.t_min),
            ("h_max", self.h_max),
            ("h_avg", self.h_avg),
            ("h_min", self.h_min),
            ("solar", self.solar),
            ("wind", self.wind),
            ("predicted_et_next", self.predicted_et_next),
            ("forecast_precip_next", self.forecast_precip_next),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err((name, format!("non-finite value {v}")));
            }
        }
        if self.t_min > self.t_avg || self.t_avg > self.t_max {
            return Err((
                "t_min",
                format!(
                    "temperatures out of order: min {} avg {} max {}",
                    self.t_min, self.t_avg, self.t_max
                ),
            ));
        }
        for (name, h) in [("h_max", self.h_max), ("h_avg", self.h_avg), ("h_min", self.h_min)] {
            if !(0.0..=100.0).contains(&h) {
                return Err((name, format!("humidity {h} outside [0, 100]")));
            }
        }
        for (name, v) in [
            ("et", self.et),
            ("precip", self.precip),
            ("predicted_et_next", self.predicted_et_next),
            ("forecast_precip_next", self.forecast_precip_next),
        ] {
            if v < 0.0 {
                return Err((name, format!("negative value {v}")));
            }
        }
        Ok(())
    }

    /// The twelve weather channels in observation order.
    pub fn channels(&self) -> [f64; WEATHER_CHANNELS] {
        [
            self.et,
            self.precip,
            self.t_max,
            self.t_avg,
            self.t_min,
            self.h_max,
            self.h_avg,
            self.h_min,
            self.solar,
            self.wind,
            self.predicted_et_next,
            self.forecast_precip_next,
        ]
    }

    pub fn t_avg_celsius(&self) -> f64 {
        fahrenheit_to_celsius(self.t_avg)
    }
}

pub fn fahrenheit_to_celsius(f: f64) -> f64 {
    (f - 32.0) * 5.0 / 9.0
}

pub fn celsius_to_fahrenheit(c: f64) -> f64 {
    c * 9.0 / 5.0 + 32.0
}

/// Coefficients of the Hargreaves ET model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtModelParams {
    /// Crop coefficient.
    pub gamma_c: f64,
    /// Extraterrestrial radiation, in ET units (inches/day of evaporation equivalent).
    pub ra: f64,
    /// Annual average daily temperature range, °C.
    pub td: f64,
}

impl Default for EtModelParams {
    /// Hargreaves' coefficient with a mid-latitude summer radiation term and a
    /// Central-Valley temperature range.
    fn default() -> Self {
        Self {
            gamma_c: 0.0023,
            ra: 0.59,
            td: 13.0,
        }
    }
}

impl EtModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_c > 0.0 && self.ra > 0.0 && self.td >= 0.0) {
            return Err(Error::Config(format!("bad ET model parameters {self:?}")));
        }
        Ok(())
    }

    /// Refits `gamma_c` (least squares, `ra` and `td` held fixed) so the model
    /// reproduces the ET channel of `days`.
    pub fn calibrated_to(self, days: &[WeatherDay]) -> Self {
        let scale = self.ra * self.td.sqrt();
        let (num, den) = days.iter().fold((0.0, 0.0), |(n, d), day| {
            let x = (day.t_avg_celsius() + HARGREAVES_OFFSET_C).max(0.0) * scale;
            (n + x * day.et, d + x * x)
        });
        if den > 0.0 {
            Self {
                gamma_c: num / den,
                ..self
            }
        } else {
            self
        }
    }
}

/// Hargreaves ET for a mean daily temperature in °C. Days colder than
/// −17.8 °C give zero.
pub fn hargreaves_et(params: &EtModelParams, t_avg_c: f64) -> f64 {
    params.gamma_c * params.ra * params.td.sqrt() * (t_avg_c + HARGREAVES_OFFSET_C).max(0.0)
}

/// Shape of a synthetic growing season.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClimateParams {
    pub start: NaiveDate,
    /// Seasonal mean reference ET, inches/day.
    pub et_mean: f64,
    /// Half peak-to-trough swing of the ET trend.
    pub et_amplitude: f64,
    pub et_noise: f64,
    /// Day of year where heat and ET peak.
    pub peak_doy: f64,
    pub t_mean_f: f64,
    pub t_amplitude_f: f64,
    /// Mean spread between daily max and min temperature, °F.
    pub t_range_f: f64,
    /// Rain probability in mid-winter; it falls to zero at the summer peak.
    pub precip_prob: f64,
    /// Mean depth of a rain event, inches.
    pub precip_mean: f64,
    pub wind_mean: f64,
    pub windy_day_prob: f64,
}

impl Default for ClimateParams {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date"),
            et_mean: 0.2,
            et_amplitude: 0.1,
            et_noise: 0.035,
            peak_doy: 196.0,
            t_mean_f: 62.0,
            t_amplitude_f: 14.0,
            t_range_f: 24.0,
            precip_prob: 0.3,
            precip_mean: 0.3,
            wind_mean: 2.8,
            windy_day_prob: 0.05,
        }
    }
}

/// Forecast error model for the next-day channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastNoise {
    /// Standard deviation of the additive ET error, inches/day.
    pub et_std: f64,
    /// Probability a real rain event is forecast as dry.
    pub precip_miss_rate: f64,
    /// Probability a dry day is forecast as rain.
    pub precip_false_alarm_rate: f64,
    /// Mean depth forecast on a false alarm, inches.
    pub false_alarm_mean: f64,
}

impl Default for ForecastNoise {
    fn default() -> Self {
        Self::for_climate(&ClimateParams::default())
    }
}

impl ForecastNoise {
    pub const NONE: ForecastNoise = ForecastNoise {
        et_std: 0.0,
        precip_miss_rate: 0.0,
        precip_false_alarm_rate: 0.0,
        false_alarm_mean: 0.0,
    };

    /// 10% ET error relative to the climate's mean ET, 15% rain misses and false alarms.
    pub fn for_climate(climate: &ClimateParams) -> Self {
        Self {
            et_std: 0.1 * climate.et_mean,
            precip_miss_rate: 0.15,
            precip_false_alarm_rate: 0.15,
            false_alarm_mean: 0.5 * climate.precip_mean,
        }
    }
}

/// How the rain part of a forecast relates to what actually fell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrecipOutcome {
    Exact,
    Miss,
    FalseAlarm(f64),
}

/// Applies a drawn forecast error to next-day actuals; both channels are floored at 0.
pub fn perturb_forecast(actual_et: f64, actual_precip: f64, et_error: f64, rain: PrecipOutcome) -> (f64, f64) {
    let precip = match rain {
        PrecipOutcome::Exact => actual_precip,
        PrecipOutcome::Miss => 0.0,
        PrecipOutcome::FalseAlarm(amount) => actual_precip + amount,
    };
    ((actual_et + et_error).max(0.0), precip.max(0.0))
}

/// Draws a forecast of `actual_next`'s ET and precipitation.
pub fn synthesize_forecast<R: Rng + ?Sized>(actual_next: &WeatherDay, noise: &ForecastNoise, rng: &mut R) -> (f64, f64) {
    let et_error = if noise.et_std > 0.0 {
        Normal::new(0.0, noise.et_std).expect("finite std").sample(rng)
    } else {
        0.0
    };
    let roll: f64 = rng.random();
    let rain = if actual_next.precip > 0.0 {
        if roll < noise.precip_miss_rate {
            PrecipOutcome::Miss
        } else {
            PrecipOutcome::Exact
        }
    } else if roll < noise.precip_false_alarm_rate && noise.false_alarm_mean > 0.0 {
        let amount = Exp::new(1.0 / noise.false_alarm_mean).expect("positive rate").sample(rng);
        PrecipOutcome::FalseAlarm(amount)
    } else {
        PrecipOutcome::Exact
    };
    perturb_forecast(actual_next.et, actual_next.precip, et_error, rain)
}

/// Fills every day's forecast channels from the day after it. The last day
/// keeps whatever it had.
pub fn attach_forecasts<R: Rng + ?Sized>(days: &mut [WeatherDay], noise: &ForecastNoise, rng: &mut R) {
    for i in 0..days.len().saturating_sub(1) {
        let (pred_et, pred_p) = synthesize_forecast(&days[i + 1], noise, rng);
        days[i].predicted_et_next = pred_et;
        days[i].forecast_precip_next = pred_p;
    }
}

fn observed_day<R: Rng + ?Sized>(climate: &ClimateParams, date: NaiveDate, rng: &mut R) -> WeatherDay {
    let doy = date.ordinal() as f64;
    let seasonal = (2.0 * PI * (doy - climate.peak_doy) / 365.0).cos();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let rain_prob = (climate.precip_prob * 0.5 * (1.0 - seasonal)).clamp(0.0, 1.0);
    let rained = rng.random::<f64>() < rain_prob;
    let precip = if rained && climate.precip_mean > 0.0 {
        Exp::new(1.0 / climate.precip_mean).expect("positive rate").sample(rng)
    } else {
        0.0
    };
    let rained = precip > 0.0;

    let t_avg = climate.t_mean_f + climate.t_amplitude_f * seasonal + 3.0 * unit.sample(rng);
    let half_range = 0.5 * climate.t_range_f;
    let t_max = t_avg + (half_range + 2.0 * unit.sample(rng)).max(1.0);
    let t_min = t_avg - (half_range + 2.0 * unit.sample(rng)).max(1.0);

    let sigma = 0.35f64;
    let mu = climate.wind_mean.max(0.1).ln() - 0.5 * sigma * sigma;
    let mut wind = LogNormal::new(mu, sigma).expect("valid lognormal").sample(rng);
    if rng.random::<f64>() < climate.windy_day_prob {
        wind += 4.0 + 6.0 * rng.random::<f64>();
    }

    let trend = climate.et_mean + climate.et_amplitude * seasonal;
    let wind_factor = 1.0 + 0.04 * (wind - climate.wind_mean);
    let rain_factor = if rained { 0.5 } else { 1.0 };
    let et = (trend * wind_factor * rain_factor + climate.et_noise * unit.sample(rng)).max(0.0);

    let h_avg = (55.0 - 15.0 * seasonal + if rained { 20.0 } else { 0.0 } + 5.0 * unit.sample(rng))
        .clamp(5.0, 95.0);
    let h_max = (h_avg + 20.0 + 3.0 * unit.sample(rng).abs()).min(100.0);
    let h_min = (h_avg - 25.0 - 3.0 * unit.sample(rng).abs()).max(0.0);
    let solar = (480.0 + 220.0 * seasonal - if rained { 200.0 } else { 0.0 } + 30.0 * unit.sample(rng)).max(50.0);

    WeatherDay {
        date,
        et,
        precip,
        t_max,
        t_avg,
        t_min,
        h_max,
        h_avg,
        h_min,
        solar,
        wind,
        predicted_et_next: 0.0,
        forecast_precip_next: 0.0,
    }
}

/// Generates `days` consecutive days starting at `climate.start`.
///
/// Deterministic for a given seed. One extra day is simulated past the end so
/// the last returned day also carries a forecast.
pub fn synthesize_season(seed: u64, days: usize, climate: &ClimateParams, noise: &ForecastNoise) -> Vec<WeatherDay> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut season: Vec<WeatherDay> = climate
        .start
        .iter_days()
        .take(days + 1)
        .map(|date| observed_day(climate, date, &mut rng))
        .collect();
    attach_forecasts(&mut season, noise, &mut rng);
    season.truncate(days);
    season
}

const BASE_COLUMNS: [&str; 11] = [
    "date", "et", "precip", "t_max", "t_avg", "t_min", "h_max", "h_avg", "h_min", "solar", "wind",
];
const FORECAST_COLUMNS: [&str; 2] = ["predicted_et_next", "forecast_precip_next"];

/// Reads a weather log with noiseless next-day forecasts.
pub fn load_weather_csv(path: impl AsRef<Path>) -> Result<Vec<WeatherDay>> {
    load_weather_csv_with(path, &ForecastNoise::NONE, 0)
}

/// Reads a weather log.
///
/// The file needs the eleven base columns. When it also carries
/// `predicted_et_next` and `forecast_precip_next`, every row is returned as
/// written. Otherwise forecasts are drawn from the following row with `noise`,
/// and the final row, having no successor, is dropped.
pub fn load_weather_csv_with(path: impl AsRef<Path>, noise: &ForecastNoise, seed: u64) -> Result<Vec<WeatherDay>> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let index_of = |name: &str| headers.iter().position(|h| h == name);
    let row_err = |row: usize, column: &str, message: String| Error::WeatherRow {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let mut base_idx = [0usize; 11];
    for (slot, name) in base_idx.iter_mut().zip(BASE_COLUMNS) {
        *slot = index_of(name).ok_or_else(|| row_err(1, name, "missing column in header".into()))?;
    }
    let forecast_idx = match (index_of(FORECAST_COLUMNS[0]), index_of(FORECAST_COLUMNS[1])) {
        (Some(a), Some(b)) => Some([a, b]),
        _ => None,
    };

    let mut days: Vec<WeatherDay> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is row 1.
        let row = i + 2;
        let record = record?;
        let field = |idx: usize, name: &str| -> Result<f64> {
            let s = record.get(idx).ok_or_else(|| row_err(row, name, "missing field".into()))?;
            s.parse::<f64>()
                .map_err(|e| row_err(row, name, format!("cannot parse `{s}`: {e}")))
        };
        let date_str = record.get(base_idx[0]).unwrap_or_default();
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
            .map_err(|e| row_err(row, "date", format!("cannot parse `{date_str}`: {e}")))?;
        let mut values = [0.0; 10];
        for (k, v) in values.iter_mut().enumerate() {
            *v = field(base_idx[k + 1], BASE_COLUMNS[k + 1])?;
        }
        let (pred_et, pred_p) = match forecast_idx {
            Some([a, b]) => (field(a, FORECAST_COLUMNS[0])?, field(b, FORECAST_COLUMNS[1])?),
            None => (0.0, 0.0),
        };
        let day = WeatherDay {
            date,
            et: values[0],
            precip: values[1],
            t_max: values[2],
            t_avg: values[3],
            t_min: values[4],
            h_max: values[5],
            h_avg: values[6],
            h_min: values[7],
            solar: values[8],
            wind: values[9],
            predicted_et_next: pred_et,
            forecast_precip_next: pred_p,
        };
        day.check().map_err(|(column, message)| row_err(row, column, message))?;
        if let Some(prev) = days.last() {
            if day.date <= prev.date {
                return Err(Error::NonMonotoneDates {
                    path: path.to_path_buf(),
                    row,
                    date: day.date.to_string(),
                    previous: prev.date.to_string(),
                });
            }
        }
        days.push(day);
    }

    if forecast_idx.is_none() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        attach_forecasts(&mut days, noise, &mut rng);
        days.pop();
    }
    Ok(days)
}

/// Writes all thirteen columns, so the file reloads to the same sequence.
pub fn write_weather_csv(path: impl AsRef<Path>, days: &[WeatherDay]) -> Result<()> {
    let mut out = File::create(path)?;
    write_weather(&mut out, days)
}

pub fn write_weather<W: Write>(out: W, days: &[WeatherDay]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BASE_COLUMNS.iter().chain(FORECAST_COLUMNS.iter()))?;
    for d in days {
        let mut rec = vec![d.date.format("%Y-%m-%d").to_string()];
        rec.extend(d.channels()[..10].iter().map(|v| v.to_string()));
        rec.push(d.predicted_et_next.to_string());
        rec.push(d.forecast_precip_next.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
