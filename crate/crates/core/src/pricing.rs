//! Cost arithmetic, demand-driven pricing, consumer utility and provider grading.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Money, Request, ResourceBundle, ResourceType};

/// Unit cost per resource type, in money per unit per time unit.
pub type PriceTable = BTreeMap<ResourceType, Money>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("no price for resource type `{0}`")]
    MissingPrice(ResourceType),
    #[error("capacity must be positive, got {0}")]
    NonPositiveCapacity(f64),
    #[error("price limit must be positive, got {0}")]
    NonPositiveLimit(Money),
    #[error("{name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },
}

/// How the per-period factor of the cost summation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeriodMode {
    /// The factor is the lease length `dlt - est`.
    #[default]
    LeaseDuration,
    ConstantOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingParams {
    /// Demand sensitivity of expected prices.
    pub alpha: f64,
    /// Grade smoothing factor in `(0, 1]`.
    pub lambda: f64,
    pub w_cost: f64,
    pub w_time: f64,
    pub p_mode: PeriodMode,
}

impl Default for PricingParams {
    fn default() -> Self {
        Self { alpha: 1.0, lambda: 0.3, w_cost: 0.5, w_time: 0.5, p_mode: PeriodMode::LeaseDuration }
    }
}

impl PricingParams {
    pub fn validate(&self) -> Result<(), PricingError> {
        let check = |name, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(PricingError::OutOfRange { name, value })
            }
        };
        check("alpha", self.alpha, self.alpha >= 0.0)?;
        check("lambda", self.lambda, self.lambda > 0.0 && self.lambda <= 1.0)?;
        check("w_cost", self.w_cost, self.w_cost >= 0.0)?;
        check("w_time", self.w_time, self.w_time >= 0.0)?;
        let sum = self.w_cost + self.w_time;
        check("w_cost + w_time", sum, (sum - 1.0).abs() <= 1e-9)
    }

    /// Factor applied to every unit cost of a request.
    pub fn period(&self, req: &Request) -> f64 {
        match self.p_mode {
            PeriodMode::LeaseDuration => req.lease_duration() as f64,
            PeriodMode::ConstantOne => 1.0,
        }
    }
}

/// Sum over the bundle of quantity × unit cost × `p`, rounded once to cents.
pub fn total_cost(bundle: &ResourceBundle, prices: &PriceTable, p: f64) -> Result<Money, PricingError> {
    let mut cents = 0.0;
    for (resource, &q) in &bundle.items {
        let unit = prices.get(resource).ok_or_else(|| PricingError::MissingPrice(resource.clone()))?;
        cents += q as f64 * unit.cents() as f64 * p;
    }
    Ok(Money::from_cents_f64(cents))
}

/// Unit price a provider expects given its committed demand:
/// `base × (1 + alpha × demand / capacity)`.
pub fn expected_unit_price(base: Money, demand: f64, capacity: f64, alpha: f64) -> Result<Money, PricingError> {
    if capacity.is_nan() || capacity <= 0.0 {
        return Err(PricingError::NonPositiveCapacity(capacity));
    }
    let factor = 1.0 + alpha * demand / capacity;
    Ok(Money::from_cents_f64(base.cents() as f64 * factor))
}

/// Consumer utility of a completed lease, in `[0, 1]`.
pub fn compute_utility(pl: Money, paid: Money, on_time: bool, params: &PricingParams) -> Result<f64, PricingError> {
    if pl <= Money::ZERO {
        return Err(PricingError::NonPositiveLimit(pl));
    }
    let saving = (pl - paid).cents().max(0) as f64 / pl.cents() as f64;
    let timely = if on_time { 1.0 } else { 0.0 };
    Ok((params.w_cost * saving + params.w_time * timely).clamp(0.0, 1.0))
}

/// Exponential smoothing of a provider grade towards the latest feedback.
pub fn update_grade(old: f64, feedback_utility: f64, lambda: f64) -> Result<f64, PricingError> {
    let unit = |name, v: f64| {
        if (0.0..=1.0).contains(&v) {
            Ok(())
        } else {
            Err(PricingError::OutOfRange { name, value: v })
        }
    };
    unit("grade", old)?;
    unit("feedback", feedback_utility)?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(PricingError::OutOfRange { name: "lambda", value: lambda });
    }
    let grade = (1.0 - lambda) * old + lambda * feedback_utility;
    debug_assert!((0.0..=1.0 + 1e-12).contains(&grade));
    Ok(grade.clamp(0.0, 1.0))
}
