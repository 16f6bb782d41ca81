//! Gaussian-process machinery: exact marginal-likelihood fitting with
//! analytic gradients, posterior prediction, per-pixel gap-filling in
//! forecast/non-forecast modes, aggregate-series forecasting, and
//! compositional kernel search.

pub mod kernel;
pub mod optimize;

pub use kernel::Kernel;

use crate::error::{Error, Result, SkipReason};
use crate::series::{IndexKind, IndexSeries, ObservationSeries, WeeklySeries};
use crate::time::TimeGrid;
use chrono::NaiveDate;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use optimize::AdamOptions;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Minimum training points for a GP fit.
pub const MIN_TRAIN_POINTS: usize = 10;
/// Minimum present history before an aggregate-series forecast is attempted.
pub const MIN_FORECAST_HISTORY: usize = 52;

/// Relative jitter added to the Gram diagonal before factorization.
const JITTER_REL: f64 = 1e-6;
/// Jitter escalation ceiling (relative to the mean Gram diagonal).
const JITTER_REL_MAX: f64 = 1e-2;

/// Deterministic length-scale initializations, in weeks.
const LENGTH_SCALE_INITS: [f64; 3] = [8.0, 2.0, 26.0];

#[derive(Debug, Clone)]
pub struct GpFitOptions {
    /// Restart count; the first three use the deterministic length-scale
    /// grid, further ones are seeded random perturbations.
    pub restarts: usize,
    pub adam: AdamOptions,
    pub seed: u64,
    /// Extra initialization tried first, e.g. the previous issue date's fit.
    /// Natural units, kernel parameters then noise std.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            adam: AdamOptions::default(),
            seed: 0,
            warm_start: None,
        }
    }
}

impl GpFitOptions {
    /// Reduced budget for inner-loop uses (interpolation, sweeps).
    pub fn quick() -> Self {
        Self {
            restarts: 2,
            adam: AdamOptions {
                max_iters: 80,
                ..AdamOptions::default()
            },
            seed: 0,
            warm_start: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A fitted GP: kernel hyperparameters, constant mean, noise level, and the
/// cached factorization needed for prediction.
#[derive(Debug, Clone)]
pub struct GPModel {
    pub kernel: Kernel,
    pub mean: f64,
    pub noise_std: f64,
    pub log_marginal_likelihood: f64,
    times: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GPModel {
    /// Conditions a model with known hyperparameters on training data.
    pub fn condition(
        kernel: Kernel,
        mean: f64,
        noise_std: f64,
        times: &[f64],
        values: &[f64],
    ) -> Result<Self> {
        validate_training(times, values)?;
        let yc = DVector::from_iterator(values.len(), values.iter().map(|v| v - mean));
        let gram = kernel.gram(times);
        let (chol, _jitter) = factorize(&gram, noise_std)?;
        let alpha = chol.solve(&yc);
        let lml = lml_from_parts(&chol, &yc, &alpha);
        Ok(Self {
            kernel,
            mean,
            noise_std,
            log_marginal_likelihood: lml,
            times: times.to_vec(),
            chol,
            alpha,
        })
    }

    pub fn train_len(&self) -> usize {
        self.times.len()
    }

    /// Posterior mean of the noise-free latent and predictive std (which
    /// includes the observation noise) at each query time.
    pub fn predict(&self, query: &[f64]) -> Vec<(f64, f64)> {
        let k_star = self.kernel.cross(&self.times, query); // n x m
        let mut out = Vec::with_capacity(query.len());
        for (j, &q) in query.iter().enumerate() {
            let col = k_star.column(j);
            let mean = self.mean + col.dot(&self.alpha);
            let v = self.chol.solve(&col.clone_owned());
            let prior = self.kernel.eval(q, q);
            let var = (prior - col.dot(&v) + self.noise_std * self.noise_std).max(0.0);
            out.push((mean, var.sqrt()));
        }
        out
    }

    pub fn predict_one(&self, query: f64) -> (f64, f64) {
        self.predict(&[query])[0]
    }

    /// Natural-unit parameter vector: kernel parameters then noise std.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut p = self.kernel.params();
        p.push(self.noise_std);
        p
    }

    /// Serializes structure and hyperparameters as a JSON object.
    pub fn to_json(&self) -> String {
        let mut hyper = serde_json::Map::new();
        for (name, value) in self.kernel.param_names().iter().zip(self.kernel.params()) {
            hyper.insert(name.clone(), serde_json::json!(value));
        }
        hyper.insert("noise_std".into(), serde_json::json!(self.noise_std));
        serde_json::json!({
            "kernel": self.kernel.structure(),
            "mean": self.mean,
            "log_marginal_likelihood": self.log_marginal_likelihood,
            "hyperparameters": serde_json::Value::Object(hyper),
        })
        .to_string()
    }
}

/// Parses the JSON produced by [`GPModel::to_json`] back into a kernel,
/// mean, and noise std (structure string plus hyperparameter map).
pub fn kernel_from_json(text: &str) -> Result<(Kernel, f64, f64)> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("bad model JSON: {e}")))?;
    let structure = value["kernel"]
        .as_str()
        .ok_or_else(|| Error::InvalidInput("model JSON missing kernel".into()))?;
    let mut kernel = Kernel::parse(structure)?;
    let hyper = value["hyperparameters"]
        .as_object()
        .ok_or_else(|| Error::InvalidInput("model JSON missing hyperparameters".into()))?;
    let mut params = Vec::new();
    for name in kernel.param_names() {
        let v = hyper
            .get(&name)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::InvalidInput(format!("model JSON missing {name}")))?;
        params.push(v);
    }
    kernel.set_params(&params);
    let noise = hyper
        .get("noise_std")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::InvalidInput("model JSON missing noise_std".into()))?;
    let mean = value["mean"].as_f64().unwrap_or(0.0);
    Ok((kernel, mean, noise))
}

fn validate_training(times: &[f64], values: &[f64]) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::InvalidInput(format!(
            "times ({}) and values ({}) differ in length",
            times.len(),
            values.len()
        )));
    }
    if times.len() < MIN_TRAIN_POINTS {
        return Err(Error::InvalidInput(format!(
            "GP fit needs at least {MIN_TRAIN_POINTS} points, got {}",
            times.len()
        )));
    }
    for pair in times.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidInput(
                "training times must be strictly increasing".into(),
            ));
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite training value".into()));
    }
    Ok(())
}

/// Cholesky of `gram + (noise^2 + jitter) I`, escalating jitter by doubling
/// until the ceiling. Returns the factorization and the jitter used.
fn factorize(gram: &DMatrix<f64>, noise_std: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = gram.nrows();
    let mean_diag = gram.diagonal().sum() / n as f64;
    let scale = mean_diag.abs().max(1e-12);
    let mut jitter = JITTER_REL * scale;
    let ceiling = JITTER_REL_MAX * scale;
    loop {
        let mut k = gram.clone();
        let bump = noise_std * noise_std + jitter;
        for i in 0..n {
            k[(i, i)] += bump;
        }
        match Cholesky::new(k) {
            Some(chol) => return Ok((chol, jitter)),
            None => {
                jitter *= 2.0;
                if jitter > ceiling {
                    return Err(Error::Conditioning { max_jitter: ceiling });
                }
            }
        }
    }
}

fn lml_from_parts(chol: &Cholesky<f64, Dyn>, yc: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = yc.len() as f64;
    let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * yc.dot(alpha) - 0.5 * ln_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood and its gradient w.r.t. the natural-unit
/// parameter vector (kernel parameters then noise std), for centered
/// values `yc`. The jitter's dependence on the kernel diagonal is included
/// in the gradient, so finite differences of [`log_marginal_likelihood`]
/// match exactly.
pub fn log_marginal_likelihood_with_grad(
    kernel: &Kernel,
    noise_std: f64,
    times: &[f64],
    yc: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = times.len();
    let (gram, grads) = kernel.gram_with_grads(times);
    let (chol, jitter) = factorize(&gram, noise_std)?;
    let mean_diag = gram.diagonal().sum() / n as f64;
    // jitter = c * mean(diag(K)); its gradient rides along each dK.
    let jitter_coeff = jitter / mean_diag.abs().max(1e-12);

    let y = DVector::from_column_slice(yc);
    let alpha = chol.solve(&y);
    let lml = lml_from_parts(&chol, &y, &alpha);

    let k_inv = chol.inverse();
    let tr_k_inv = k_inv.diagonal().sum();
    let alpha_sq = alpha.dot(&alpha);

    let mut grad = Vec::with_capacity(grads.len() + 1);
    for dk in &grads {
        let quad = alpha.dot(&(dk * &alpha));
        let inner: f64 = k_inv
            .as_slice()
            .iter()
            .zip(dk.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let tr_dk = dk.diagonal().sum();
        let d_jitter = jitter_coeff * tr_dk / n as f64;
        grad.push(0.5 * (quad - inner) + 0.5 * d_jitter * (alpha_sq - tr_k_inv));
    }
    grad.push(noise_std * (alpha_sq - tr_k_inv));
    Ok((lml, grad))
}

/// Log marginal likelihood alone (used by the gradient acceptance check).
pub fn log_marginal_likelihood(
    kernel: &Kernel,
    noise_std: f64,
    times: &[f64],
    yc: &[f64],
) -> Result<f64> {
    let gram = kernel.gram(times);
    let (chol, _) = factorize(&gram, noise_std)?;
    let y = DVector::from_column_slice(yc);
    let alpha = chol.solve(&y);
    Ok(lml_from_parts(&chol, &y, &alpha))
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Fits hyperparameters (and the noise std) by maximizing the exact log
/// marginal likelihood with multi-start Adam ascent. The constant mean is
/// fixed to the training-sample mean.
pub fn gp_fit(
    times: &[f64],
    values: &[f64],
    kernel_template: &Kernel,
    opts: &GpFitOptions,
) -> Result<GPModel> {
    validate_training(times, values)?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let yc: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let data_std = sample_std(&yc).max(1e-3);
    let time_span = (times[times.len() - 1] - times[0]).max(1.0);

    let mut kernel = kernel_template.clone();
    kernel.set_linear_centers(times);
    let kernel_param_count = kernel.param_count();
    let names = kernel.param_names();

    // Initial natural-unit parameter vectors: kernel params then noise.
    let mut inits: Vec<Vec<f64>> = Vec::new();
    if let Some(warm) = &opts.warm_start {
        if warm.len() == kernel_param_count + 1 && warm.iter().all(|v| *v > 0.0) {
            inits.push(warm.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for restart in 0..opts.restarts {
        let mut p = Vec::with_capacity(kernel_param_count + 1);
        let length_scale = if restart < LENGTH_SCALE_INITS.len() {
            LENGTH_SCALE_INITS[restart]
        } else {
            // Log-uniform over [1, 52] weeks.
            rng.gen_range(0.0..52f64.ln()).exp()
        };
        let jitter_factor = |rng: &mut ChaCha8Rng, deterministic: bool| {
            if deterministic {
                1.0
            } else {
                (rng.gen_range(-0.7f64..0.7)).exp()
            }
        };
        let deterministic = restart < LENGTH_SCALE_INITS.len();
        for name in &names {
            let v = if name.ends_with("length_scale") {
                length_scale * jitter_factor(&mut rng, deterministic)
            } else if name.ends_with("alpha") {
                1.0 * jitter_factor(&mut rng, deterministic)
            } else if name.contains(".linear.") {
                // Scale so the linear term's marginal std matches the data.
                data_std / (0.5 * time_span) * jitter_factor(&mut rng, deterministic)
            } else {
                data_std * jitter_factor(&mut rng, deterministic)
            };
            p.push(v.clamp(optimize::PARAM_MIN, optimize::PARAM_MAX));
        }
        let noise = 0.1 * data_std * jitter_factor(&mut rng, deterministic);
        p.push(noise.clamp(optimize::PARAM_MIN, optimize::PARAM_MAX));
        inits.push(p);
    }
    if inits.is_empty() {
        // restarts = 0 with no usable warm start: fall back to one
        // deterministic initialization.
        let mut p: Vec<f64> = names
            .iter()
            .map(|name| {
                if name.ends_with("length_scale") {
                    LENGTH_SCALE_INITS[0]
                } else if name.ends_with("alpha") {
                    1.0
                } else if name.contains(".linear.") {
                    data_std / (0.5 * time_span)
                } else {
                    data_std
                }
            })
            .collect();
        p.push(0.1 * data_std);
        for v in &mut p {
            *v = v.clamp(optimize::PARAM_MIN, optimize::PARAM_MAX);
        }
        inits.push(p);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for init in &inits {
        let log_init: Vec<f64> = init.iter().map(|v| v.ln()).collect();
        let mut objective = |log_params: &[f64]| {
            let natural: Vec<f64> = log_params.iter().map(|v| v.exp()).collect();
            let mut k = kernel.clone();
            k.set_params(&natural[..kernel_param_count]);
            let noise = natural[kernel_param_count];
            match log_marginal_likelihood_with_grad(&k, noise, times, &yc) {
                Ok((lml, grad)) if lml.is_finite() => {
                    // Chain rule into log space.
                    let g: Vec<f64> = grad.iter().zip(&natural).map(|(g, p)| g * p).collect();
                    Some((lml, g))
                }
                _ => None,
            }
        };
        if let Some(outcome) = optimize::maximize(&mut objective, &log_init, &opts.adam) {
            let natural: Vec<f64> = outcome.log_params.iter().map(|v| v.exp()).collect();
            if best.as_ref().map_or(true, |(f, _)| outcome.objective > *f) {
                best = Some((outcome.objective, natural));
            }
        }
    }

    let Some((_, natural)) = best else {
        return Err(Error::FitFailure {
            best_lml: f64::NEG_INFINITY,
        });
    };
    kernel.set_params(&natural[..kernel_param_count]);
    GPModel::condition(kernel, mean, natural[kernel_param_count], times, values)
}

/// Standard posterior prediction (kept as a free function to mirror the
/// module's operation set; equivalent to [`GPModel::predict`]).
pub fn gp_predict(model: &GPModel, query_times: &[f64]) -> Vec<(f64, f64)> {
    model.predict(query_times)
}

/// RBF+Periodic fit for interpolation duties (pixel gap-filling, holdout
/// comparisons).
pub fn fit_interpolant(times: &[f64], values: &[f64], opts: &GpFitOptions) -> Result<GPModel> {
    let template = Kernel::sum(Kernel::rbf(), Kernel::periodic());
    gp_fit(times, values, &template, opts)
}

/// Whether a gap-filling run may train on the full series or only on data
/// up to a cutoff date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapfillMode {
    NonForecast,
    Forecast { cutoff: NaiveDate },
}

/// Outcome of a per-pixel GP gap-fill: a fully present weekly series of
/// posterior means, or a recorded skip.
#[derive(Debug, Clone)]
pub enum GapfillOutcome {
    Filled(WeeklySeries),
    Skipped(SkipReason),
}

/// Trains a GP on a pixel's good observations (all of them, or only those
/// up to the cutoff) and emits posterior means on every grid slot.
pub fn gp_gapfill(
    obs: &ObservationSeries,
    grid: &TimeGrid,
    mode: GapfillMode,
    kernel_template: &Kernel,
    opts: &GpFitOptions,
) -> Result<GapfillOutcome> {
    let start = grid.start();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for s in obs.good_samples() {
        if let GapfillMode::Forecast { cutoff } = mode {
            if s.date > cutoff {
                continue;
            }
        }
        times.push((s.date - start).num_days() as f64 / 7.0);
        values.push(s.value);
    }
    if times.len() < MIN_TRAIN_POINTS {
        return Ok(GapfillOutcome::Skipped(SkipReason::InsufficientHistory));
    }
    let model = gp_fit(&times, &values, kernel_template, opts)?;
    let query: Vec<f64> = (0..grid.len()).map(|slot| slot as f64).collect();
    let predictions = model.predict(&query);
    let series = WeeklySeries::new(
        grid.clone(),
        predictions.into_iter().map(|(mean, _)| Some(mean)).collect(),
    )?;
    Ok(GapfillOutcome::Filled(series))
}

/// A GP forecast for one issue slot, one entry per requested lead.
#[derive(Debug, Clone)]
pub enum GpForecastOutcome {
    Forecast(Vec<(usize, f64, f64)>),
    Skipped(SkipReason),
}

/// Fits an RBF GP to the index series up to `issue_slot` (optionally only
/// the most recent `max_train_weeks` slots) and extrapolates at each lead.
/// Returns the fitted model alongside the forecasts so callers can reuse
/// its hyperparameters as the next warm start.
pub fn gp_forecast_at(
    index: &IndexSeries,
    issue_slot: usize,
    leads: &[usize],
    opts: &GpFitOptions,
    max_train_weeks: Option<usize>,
) -> Result<(GpForecastOutcome, Option<GPModel>)> {
    if !matches!(index.kind, IndexKind::Vci3m | IndexKind::NdviAnomaly) {
        return Err(Error::InvalidInput(format!(
            "GP forecasting applies to vci3m or ndvi-anomaly series, not {}",
            index.kind
        )));
    }
    let mut train: Vec<(usize, f64)> = index
        .series
        .present()
        .filter(|(slot, _)| *slot <= issue_slot)
        .collect();
    if train.len() < MIN_FORECAST_HISTORY {
        return Ok((GpForecastOutcome::Skipped(SkipReason::InsufficientHistory), None));
    }
    if let Some(cap) = max_train_weeks {
        if let Some(cut) = issue_slot.checked_sub(cap.saturating_sub(1)) {
            train.retain(|(slot, _)| *slot >= cut);
        }
        if train.len() < MIN_FORECAST_HISTORY {
            return Ok((GpForecastOutcome::Skipped(SkipReason::InsufficientHistory), None));
        }
    }
    let times: Vec<f64> = train.iter().map(|(slot, _)| *slot as f64).collect();
    let values: Vec<f64> = train.iter().map(|(_, v)| *v).collect();
    let model = gp_fit(&times, &values, &Kernel::rbf(), opts)?;
    let query: Vec<f64> = leads.iter().map(|l| (issue_slot + l) as f64).collect();
    let predictions = model.predict(&query);
    let per_lead = leads
        .iter()
        .zip(predictions)
        .map(|(&lead, (mean, std))| (lead, mean, std))
        .collect();
    Ok((GpForecastOutcome::Forecast(per_lead), Some(model)))
}

/// Single-lead convenience wrapper: forecast at `issue_date + lead_weeks`.
pub fn gp_forecast(
    index: &IndexSeries,
    issue_date: NaiveDate,
    lead_weeks: usize,
    opts: &GpFitOptions,
) -> Result<Option<(f64, f64)>> {
    let Some(issue_slot) = index.series.grid().slot_of_date(issue_date) else {
        return Err(Error::InvalidInput(format!(
            "issue date {issue_date} is not a grid slot date"
        )));
    };
    let (outcome, _) = gp_forecast_at(index, issue_slot, &[lead_weeks], opts, None)?;
    Ok(match outcome {
        GpForecastOutcome::Forecast(leads) => leads.first().map(|&(_, m, s)| (m, s)),
        GpForecastOutcome::Skipped(_) => None,
    })
}

/// One kernel-search candidate with its fitted likelihood, or a failure flag.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub kernel: Kernel,
    pub log_marginal_likelihood: Option<f64>,
}

/// Every primitive plus every pairwise sum and product of distinct primitives.
pub fn default_search_candidates() -> Vec<Kernel> {
    let primitives = [
        Kernel::linear(),
        Kernel::rbf(),
        Kernel::periodic(),
        Kernel::rational_quadratic(),
        Kernel::matern32(),
        Kernel::matern52(),
    ];
    let mut out: Vec<Kernel> = primitives.to_vec();
    for i in 0..primitives.len() {
        for j in i + 1..primitives.len() {
            out.push(Kernel::sum(primitives[i].clone(), primitives[j].clone()));
        }
    }
    for i in 0..primitives.len() {
        for j in i + 1..primitives.len() {
            out.push(Kernel::product(primitives[i].clone(), primitives[j].clone()));
        }
    }
    out
}

/// Fits every candidate and ranks by descending log marginal likelihood.
/// Candidates whose fit fails are kept at the end with a failure flag.
pub fn kernel_search(
    times: &[f64],
    values: &[f64],
    candidates: &[Kernel],
    opts: &GpFitOptions,
) -> Result<Vec<SearchResult>> {
    validate_training(times, values)?;
    let mut results: Vec<SearchResult> = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        match gp_fit(times, values, candidate, opts) {
            Ok(model) => results.push(SearchResult {
                kernel: model.kernel.clone(),
                log_marginal_likelihood: Some(model.log_marginal_likelihood),
            }),
            Err(_) => results.push(SearchResult {
                kernel: candidate.clone(),
                log_marginal_likelihood: None,
            }),
        }
    }
    results.sort_by(|a, b| {
        match (a.log_marginal_likelihood, b.log_marginal_likelihood) {
            (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Equal),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn seeded_normal(seed: u64) -> (ChaCha8Rng, Normal<f64>) {
        (
            ChaCha8Rng::seed_from_u64(seed),
            Normal::new(0.0, 1.0).unwrap(),
        )
    }

    /// Draws from a GP with the given kernel and noise via Cholesky.
    fn sample_gp(kernel: &Kernel, noise_std: f64, times: &[f64], seed: u64) -> Vec<f64> {
        let (mut rng, normal) = seeded_normal(seed);
        let gram = kernel.gram(times);
        let (chol, _) = factorize(&gram, 1e-4).unwrap();
        let z = DVector::from_iterator(
            times.len(),
            (0..times.len()).map(|_| normal.sample(&mut rng)),
        );
        let latent = chol.l() * z;
        latent
            .iter()
            .map(|v| v + noise_std * normal.sample(&mut rng))
            .collect()
    }

    #[test]
    fn predict_interpolates_training_points_at_low_noise() {
        let times: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| (t * 0.3).sin()).collect();
        let kernel = Kernel::Rbf {
            signal_std: 1.0,
            length_scale: 4.0,
        };
        let model = GPModel::condition(kernel, 0.0, 1e-6, &times, &values).unwrap();
        for (i, &t) in times.iter().enumerate().step_by(7) {
            let (mean, _) = model.predict_one(t);
            assert!(
                (mean - values[i]).abs() < 1e-3,
                "at t={t}: {mean} vs {}",
                values[i]
            );
        }
    }

    #[test]
    fn predict_reverts_to_prior_far_from_data() {
        // Pure RBF fully reverts far from the data.
        let times: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 3.0 + (t * 0.5).sin()).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let model = GPModel::condition(
            Kernel::Rbf {
                signal_std: 0.8,
                length_scale: 5.0,
            },
            mean,
            0.3,
            &times,
            &values,
        )
        .unwrap();
        let (far_mean, far_std) = model.predict_one(500.0);
        assert!((far_mean - mean).abs() < 1e-6);
        assert!((far_std - (0.8f64 * 0.8 + 0.3 * 0.3).sqrt()).abs() < 1e-9);

        // RBF+Periodic: a query far away in time AND out of phase with every
        // training point decorrelates both components, so the predictive std
        // approaches sqrt(sigma_rbf^2 + sigma_p^2 + noise^2).
        let times: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 3.0 + (t * 0.5).sin()).collect();
        let kernel = Kernel::sum(
            Kernel::Rbf {
                signal_std: 0.8,
                length_scale: 5.0,
            },
            Kernel::Periodic {
                signal_std: 0.6,
                length_scale: 0.5,
                period: kernel::PERIOD_WEEKS,
            },
        );
        let model = GPModel::condition(kernel, mean, 0.3, &times, &values).unwrap();
        let (far_mean, far_std) = model.predict_one(52.0 * 1000.0 + 26.0);
        let prior_std = (0.8f64 * 0.8 + 0.6 * 0.6 + 0.3 * 0.3).sqrt();
        assert!((far_std - prior_std).abs() < 0.02, "{far_std} vs {prior_std}");
        assert!((far_mean - mean).abs() < 0.1);
    }

    #[test]
    fn posterior_symmetric_around_symmetric_gap() {
        // Data symmetric about t = 10 with a central gap: the posterior mean
        // at the center equals the average of any mirrored pair's prediction.
        let mut times = Vec::new();
        let mut values = Vec::new();
        for i in 0..8 {
            times.push(i as f64);
            values.push((i as f64 - 10.0).powi(2) / 50.0);
        }
        for i in 13..21 {
            times.push(i as f64);
            values.push((i as f64 - 10.0).powi(2) / 50.0);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let kernel = Kernel::Rbf {
            signal_std: 1.0,
            length_scale: 3.0,
        };
        let model = GPModel::condition(kernel, mean, 0.05, &times, &values).unwrap();
        let (left, _) = model.predict_one(10.0 - 1.5);
        let (right, _) = model.predict_one(10.0 + 1.5);
        assert!((left - right).abs() < 1e-6, "{left} vs {right}");
    }

    #[test]
    fn variance_never_increases_when_adding_data() {
        let kernel = Kernel::Rbf {
            signal_std: 1.0,
            length_scale: 4.0,
        };
        let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| (t * 0.2).cos()).collect();
        let small = GPModel::condition(kernel.clone(), 0.0, 0.2, &times[..20], &values[..20])
            .unwrap();
        let large = GPModel::condition(kernel, 0.0, 0.2, &times, &values).unwrap();
        for q in [0.5, 5.3, 14.9, 19.2, 25.0, 60.0] {
            let (_, std_small) = small.predict_one(q);
            let (_, std_large) = large.predict_one(q);
            assert!(
                std_large <= std_small + 1e-9,
                "query {q}: {std_large} > {std_small}"
            );
        }
    }

    #[test]
    fn fit_recovers_length_scale_roughly() {
        // Spec tolerance: within +-30% on data generated from a known RBF GP,
        // allowing 2 misses in 10 seeds.
        let true_kernel = Kernel::Rbf {
            signal_std: 1.0,
            length_scale: 4.0,
        };
        let times: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let mut hits = 0;
        for seed in 0..10 {
            let values = sample_gp(&true_kernel, 0.1, &times, seed);
            let model = gp_fit(&times, &values, &Kernel::rbf(), &GpFitOptions::default())
                .unwrap();
            let params = model.kernel.params();
            let l = params[1];
            if (2.8..=5.2).contains(&l) {
                hits += 1;
            }
        }
        assert!(hits >= 8, "recovered length scale in {hits}/10 seeds");
    }

    #[test]
    fn fit_constant_data_degenerates_cleanly() {
        let times: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let values = vec![0.42; 50];
        let model = gp_fit(&times, &values, &Kernel::rbf(), &GpFitOptions::quick()).unwrap();
        let (mean, _) = model.predict_one(25.5);
        assert!((mean - 0.42).abs() < 1e-6);
        assert!(model.noise_std < 0.01);
        let params = model.kernel.params();
        assert!(params[0] < 0.01, "signal std {} should be small", params[0]);
    }

    #[test]
    fn periodic_kernel_beats_linear_on_sinusoid() {
        let times: Vec<f64> = (0..160).map(|i| i as f64).collect();
        let (mut rng, normal) = seeded_normal(3);
        let values: Vec<f64> = times
            .iter()
            .map(|t| (2.0 * std::f64::consts::PI * t / 52.0).sin() + 0.05 * normal.sample(&mut rng))
            .collect();
        let opts = GpFitOptions::quick();
        let periodic = gp_fit(&times, &values, &Kernel::periodic(), &opts).unwrap();
        let linear = gp_fit(&times, &values, &Kernel::linear(), &opts).unwrap();
        assert!(
            periodic.log_marginal_likelihood > linear.log_marginal_likelihood,
            "{} vs {}",
            periodic.log_marginal_likelihood,
            linear.log_marginal_likelihood
        );
    }

    #[test]
    fn model_json_round_trip() {
        let times: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| (t * 0.23).sin()).collect();
        let model = gp_fit(
            &times,
            &values,
            &Kernel::sum(Kernel::rbf(), Kernel::periodic()),
            &GpFitOptions::quick(),
        )
        .unwrap();
        let json = model.to_json();
        let (kernel, mean, noise) = kernel_from_json(&json).unwrap();
        assert_eq!(kernel.structure(), "rbf+periodic");
        assert_eq!(kernel.params(), model.kernel.params());
        assert_eq!(mean, model.mean);
        assert_eq!(noise, model.noise_std);
    }

    #[test]
    fn gapfill_modes_agree_when_training_sets_coincide() {
        use crate::series::{ObservationSample, Quality};
        use chrono::NaiveDate;

        let start = NaiveDate::parse_from_str("2000-01-01", "%Y-%m-%d").unwrap();
        let grid = TimeGrid::new(start, 80).unwrap();
        let mut samples = Vec::new();
        for slot in 0..50usize {
            let date = grid.slot_date(slot);
            let t = slot as f64;
            samples.push(ObservationSample {
                date,
                value: (0.3 + 0.1 * (t * 0.12).sin()).clamp(-1.0, 1.0),
                quality: Quality::Good,
            });
        }
        let obs = ObservationSeries::new("p", "r", samples).unwrap();
        let kernel = Kernel::sum(Kernel::rbf(), Kernel::periodic());
        let opts = GpFitOptions::quick();

        // Cutoff after the last observation: forecast mode sees everything.
        let full = match gp_gapfill(&obs, &grid, GapfillMode::NonForecast, &kernel, &opts).unwrap()
        {
            GapfillOutcome::Filled(s) => s,
            GapfillOutcome::Skipped(r) => panic!("skipped: {r}"),
        };
        let cut_after = match gp_gapfill(
            &obs,
            &grid,
            GapfillMode::Forecast {
                cutoff: grid.slot_date(79),
            },
            &kernel,
            &opts,
        )
        .unwrap()
        {
            GapfillOutcome::Filled(s) => s,
            GapfillOutcome::Skipped(r) => panic!("skipped: {r}"),
        };
        for slot in 0..grid.len() {
            assert_eq!(full.value(slot), cut_after.value(slot), "slot {slot}");
        }

        // Mid-series cutoff with data beyond it: outputs must diverge after.
        let mut samples = Vec::new();
        for slot in 0..80usize {
            let date = grid.slot_date(slot);
            let t = slot as f64;
            samples.push(ObservationSample {
                date,
                value: (0.3 + 0.1 * (t * 0.12).sin() + if slot >= 50 { 0.2 } else { 0.0 })
                    .clamp(-1.0, 1.0),
                quality: Quality::Good,
            });
        }
        let obs = ObservationSeries::new("p", "r", samples).unwrap();
        let cut_mid = match gp_gapfill(
            &obs,
            &grid,
            GapfillMode::Forecast {
                cutoff: grid.slot_date(49),
            },
            &kernel,
            &opts,
        )
        .unwrap()
        {
            GapfillOutcome::Filled(s) => s,
            GapfillOutcome::Skipped(r) => panic!("skipped: {r}"),
        };
        let full = match gp_gapfill(&obs, &grid, GapfillMode::NonForecast, &kernel, &opts).unwrap()
        {
            GapfillOutcome::Filled(s) => s,
            GapfillOutcome::Skipped(r) => panic!("skipped: {r}"),
        };
        let diverged = (60..80).any(|slot| {
            (full.value(slot).unwrap() - cut_mid.value(slot).unwrap()).abs() > 0.02
        });
        assert!(diverged, "forecast mode should not see the late level shift");
    }

    #[test]
    fn gapfill_skips_when_all_bad() {
        use crate::series::{ObservationSample, Quality};
        let start = NaiveDate::parse_from_str("2000-01-01", "%Y-%m-%d").unwrap();
        let grid = TimeGrid::new(start, 30).unwrap();
        let samples = (0..20usize)
            .map(|slot| ObservationSample {
                date: grid.slot_date(slot),
                value: 0.3,
                quality: Quality::Bad,
            })
            .collect();
        let obs = ObservationSeries::new("p", "r", samples).unwrap();
        match gp_gapfill(
            &obs,
            &grid,
            GapfillMode::NonForecast,
            &Kernel::rbf(),
            &GpFitOptions::quick(),
        )
        .unwrap()
        {
            GapfillOutcome::Skipped(SkipReason::InsufficientHistory) => {}
            other => panic!("expected skip, got {other:?}"),
        }
    }
}
