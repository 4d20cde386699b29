//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::Real;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Parameters larger than this are checked on a random subsample of
    /// this many entries.
    pub max_per_param: usize,
    /// Denominator floor of the relative error.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_per_param: usize::MAX,
            abs_floor: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradCheckEntry>,
}

impl GradCheckReport {
    fn record(&mut self, e: GradCheckEntry) {
        self.checked += 1;
        if self.worst.is_none() || e.rel_err > self.max_rel_err {
            self.max_rel_err = e.rel_err;
            self.worst = Some(e);
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if let Some(w) = other.worst {
            if self.worst.is_none() || w.rel_err > self.max_rel_err {
                self.max_rel_err = w.rel_err;
                self.worst = Some(w);
            }
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Indices of a parameter to probe: all, or a seeded subsample.
pub fn probe_indices(numel: usize, max_per_param: usize, seed: u64) -> Vec<usize> {
    if numel <= max_per_param {
        (0..numel).collect()
    } else {
        let mut idx = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), numel, max_per_param).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Compares `analytic` against central differences of `loss` for the given
/// parameters (every trainable parameter when `only` is `None`).
///
/// `loss` is evaluated in the store's own precision; pass a store cast to a
/// wider type to obtain a high-precision reference.
pub fn finite_difference_check<T, F>(
    params: &ParamStore<T>,
    analytic: &ParamGrads<T>,
    only: Option<&[ParamId]>,
    options: &GradCheckOptions,
    mut loss: F,
) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&ParamStore<T>) -> Result<f64>,
{
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect(),
    };
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for id in ids {
        let numel = params.value(id).numel();
        let probes = probe_indices(numel, options.max_per_param, options.seed ^ id.index() as u64);
        for j in probes {
            let orig = params.value(id).data()[j];
            let h = T::of(options.epsilon);
            work.data_mut(id)[j] = orig + h;
            let plus = loss(&work)?;
            work.data_mut(id)[j] = orig - h;
            let minus = loss(&work)?;
            work.data_mut(id)[j] = orig;
            // use the step actually representable in T
            let step = ((orig + h) - (orig - h)).as_f64();
            let numeric = (plus - minus) / step;
            let a = analytic.get(id).map_or(0.0, |g| g.data()[j].as_f64());
            report.record(GradCheckEntry {
                param: params.get(id).name.clone(),
                index: j,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric, options.abs_floor),
            });
        }
    }
    Ok(report)
}
