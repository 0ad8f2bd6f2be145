use std::collections::BTreeMap;

use super::{ArimaConfig, BirchConfig, DetectError, RnnConfig, ThresholdModel};

/// Detector hyperparameters from `k=v,...` strings. Unset keys keep their defaults.
///
/// Keys: `alpha`, `c`, `warmup` (threshold); `T`, `M`, `lambda`, `prune` (BIRCH);
/// `p`, `d`, `q`, `forget` (ARIMA); `hidden`, `lr`, `init`, `seed` (RNN).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorParams {
    values: BTreeMap<String, String>,
}

const KNOWN: [&str; 15] = [
    "alpha", "c", "warmup", "T", "M", "lambda", "prune", "p", "d", "q", "forget", "hidden", "lr", "init", "seed",
];

impl DetectorParams {
    pub fn parse(s: &str) -> Result<Self, DetectError> {
        let mut values = BTreeMap::new();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| DetectError::Params(format!("{pair:?} is not key=value")))?;
            if !KNOWN.contains(&k) {
                return Err(DetectError::Params(format!("unknown key {k:?}")));
            }
            values.insert(k.to_string(), v.to_string());
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.values.insert(key.to_string(), value.to_string());
        self
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, DetectError> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| DetectError::Params(format!("cannot parse {key}={v}"))),
        }
    }

    pub fn threshold(&self) -> Result<ThresholdModel, DetectError> {
        let alpha: f64 = self.get("alpha", ThresholdModel::DEFAULT_ALPHA)?;
        let sigma: f64 = self.get("c", ThresholdModel::DEFAULT_SIGMA)?;
        if !(alpha > 0.0 && alpha <= 1.0) || sigma <= 0.0 {
            return Err(DetectError::Params("alpha must lie in (0, 1] and c must be positive".into()));
        }
        Ok(ThresholdModel::new(alpha, sigma, self.get("warmup", ThresholdModel::DEFAULT_WARMUP)?))
    }

    pub fn birch(&self) -> Result<BirchConfig, DetectError> {
        let d = BirchConfig::default();
        let cfg = BirchConfig {
            threshold: self.get("T", d.threshold)?,
            max_clusters: self.get("M", d.max_clusters)?,
            decay: self.get("lambda", d.decay)?,
            prune_floor: self.get("prune", d.prune_floor)?,
        };
        if cfg.threshold <= 0.0 || cfg.max_clusters == 0 || !(0.0..1.0).contains(&cfg.decay) {
            return Err(DetectError::Params("BIRCH needs T > 0, M >= 1 and lambda in [0, 1)".into()));
        }
        Ok(cfg)
    }

    pub fn arima(&self) -> Result<ArimaConfig, DetectError> {
        let d = ArimaConfig::default();
        let cfg = ArimaConfig {
            p: self.get("p", d.p)?,
            d: self.get("d", d.d)?,
            q: self.get("q", d.q)?,
            forgetting: self.get("forget", d.forgetting)?,
            ..d
        };
        if !(cfg.forgetting > 0.0 && cfg.forgetting <= 1.0) {
            return Err(DetectError::Params("forget must lie in (0, 1]".into()));
        }
        Ok(cfg)
    }

    pub fn rnn(&self) -> Result<RnnConfig, DetectError> {
        let d = RnnConfig::default();
        let cfg = RnnConfig {
            hidden: self.get("hidden", d.hidden)?,
            learning_rate: self.get("lr", d.learning_rate)?,
            init_scale: self.get("init", d.init_scale)?,
            seed: self.get("seed", d.seed)?,
        };
        if cfg.hidden == 0 || cfg.learning_rate <= 0.0 {
            return Err(DetectError::Params("RNN needs hidden >= 1 and lr > 0".into()));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let p = DetectorParams::parse("T=2.5,M=10,forget=1,hidden=8").unwrap();
        assert_eq!(p.birch().unwrap().threshold, 2.5);
        assert_eq!(p.birch().unwrap().max_clusters, 10);
        assert_eq!(p.birch().unwrap().decay, 0.001);
        assert_eq!(p.arima().unwrap().forgetting, 1.0);
        assert_eq!(p.rnn().unwrap().hidden, 8);
        assert_eq!(p.threshold().unwrap(), ThresholdModel::default());
    }

    #[test]
    fn rejects_garbage() {
        assert!(DetectorParams::parse("bogus=1").is_err());
        assert!(DetectorParams::parse("T").is_err());
        assert!(DetectorParams::parse("T=x").unwrap().birch().is_err());
        assert!(DetectorParams::parse("alpha=0").unwrap().threshold().is_err());
    }
}
