//! Currency-to-USD conversion used by the amount feature.

use std::collections::BTreeMap;
use std::path::Path;

use super::DataError;

/// Multiplicative USD rates keyed by currency code. `usd_amount = amount * rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    rates: BTreeMap<String, f64>,
}

impl RateTable {
    /// Fixed table used by the synthetic generator and default pipeline runs.
    pub fn builtin() -> Self {
        let rates = [
            ("USD", 1.0),
            ("EUR", 1.09),
            ("GBP", 1.27),
            ("JPY", 0.0067),
            ("CHF", 1.13),
            ("CAD", 0.73),
            ("AUD", 0.65),
            ("SGD", 0.74),
        ]
        .into_iter()
        .map(|(c, r)| (c.to_string(), r))
        .collect();
        RateTable { rates }
    }

    /// Parses a flat TOML table of `CODE = rate` entries.
    pub fn from_toml_path(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let value: toml::Value =
            text.parse().map_err(|e: toml::de::Error| DataError::Rates(e.to_string()))?;
        let table = value
            .as_table()
            .ok_or_else(|| DataError::Rates("expected a table of currency rates".into()))?;
        let mut rates = BTreeMap::new();
        for (code, v) in table {
            let rate = match v {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                other => {
                    return Err(DataError::Rates(format!(
                        "rate for {code} must be numeric, got {other}"
                    )))
                }
            };
            if !(rate.is_finite() && rate > 0.0) {
                return Err(DataError::Rates(format!("rate for {code} must be positive")));
            }
            rates.insert(code.clone(), rate);
        }
        if rates.is_empty() {
            return Err(DataError::Rates("rate table is empty".into()));
        }
        Ok(RateTable { rates })
    }

    pub fn rate(&self, currency: &str) -> Result<f64, DataError> {
        self.rates
            .get(currency)
            .copied()
            .ok_or_else(|| DataError::UnknownCurrency(currency.to_string()))
    }

    /// Converts an amount in `currency` to USD.
    pub fn usd(&self, amount: f64, currency: &str) -> Result<f64, DataError> {
        Ok(amount * self.rate(currency)?)
    }

    pub fn currencies(&self) -> impl Iterator<Item = &str> {
        self.rates.keys().map(String::as_str)
    }
}
