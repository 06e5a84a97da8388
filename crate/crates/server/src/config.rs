use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stressmon_core::query::QueryConfig;

use crate::error::ServiceError;

pub const ENV_PREFIX: &str = "STRESSMON_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub prompt_expiry_ms: i64,
    /// Events per subject between engine snapshots.
    pub snapshot_every: u64,
    pub fsync: bool,
    /// Also keep each raw window as a CSV file.
    pub store_raw_windows: bool,
    /// Accept `now_ms` from requests instead of the wall clock.
    pub trust_client_clock: bool,
    pub query: QueryConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            prompt_expiry_ms: 15 * 60 * 1000,
            snapshot_every: 256,
            fsync: false,
            store_raw_windows: false,
            trust_client_clock: false,
            query: QueryConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ServiceError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| ServiceError::Config(format!("{ENV_PREFIX}{key}={value}: {e}")))
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Reads `path` if given (defaults otherwise), then applies
    /// `STRESSMON_*` environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies every `STRESSMON_<KEY>` pair; `QUERY_<FIELD>` targets the
    /// query engine section.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ServiceError> {
        for (k, v) in vars {
            let Some(key) = k.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let q = &mut self.query;
            match key {
                "LISTEN" => self.listen = parse(key, &v)?,
                "DATA_DIR" => self.data_dir = PathBuf::from(v),
                "PROMPT_EXPIRY_MS" => self.prompt_expiry_ms = parse(key, &v)?,
                "SNAPSHOT_EVERY" => self.snapshot_every = parse(key, &v)?,
                "FSYNC" => self.fsync = parse(key, &v)?,
                "STORE_RAW_WINDOWS" => self.store_raw_windows = parse(key, &v)?,
                "TRUST_CLIENT_CLOCK" => self.trust_client_clock = parse(key, &v)?,
                "QUERY_INITIAL_COUNT" => q.initial_count = parse(key, &v)?,
                "QUERY_P_MIN" => q.p_min = parse(key, &v)?,
                "QUERY_DENSITY_DIVISOR" => q.density_divisor = parse(key, &v)?,
                "QUERY_NEIGHBORHOOD_RADIUS" => q.neighborhood_radius = parse(key, &v)?,
                "QUERY_REGION_CELL_SIZE" => q.region_cell_size = parse(key, &v)?,
                "QUERY_SATURATION_THRESHOLD" => q.saturation_threshold = parse(key, &v)?,
                "QUERY_RNG_SEED" => q.rng_seed = parse(key, &v)?,
                // other tools share the prefix
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.prompt_expiry_ms <= 0 {
            return Err(ServiceError::Config(
                "prompt_expiry_ms must be positive".into(),
            ));
        }
        if self.snapshot_every == 0 {
            return Err(ServiceError::Config(
                "snapshot_every must be at least 1".into(),
            ));
        }
        self.query
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_then_env() {
        let mut cfg = ServiceConfig::from_toml(
            r#"
            listen = "0.0.0.0:9000"
            data_dir = "/tmp/x"
            [query]
            initial_count = 20
            "#,
        )
        .unwrap();
        assert_eq!(cfg.query.initial_count, 20);
        assert_eq!(cfg.query.p_min, 0.1);
        assert_eq!(cfg.prompt_expiry_ms, 900_000);
        cfg.apply_env([
            ("STRESSMON_QUERY_INITIAL_COUNT".to_string(), "5".to_string()),
            ("STRESSMON_PROMPT_EXPIRY_MS".into(), "60000".into()),
            ("STRESSMON_FSYNC".into(), "true".into()),
            ("HOME".into(), "/root".into()),
        ])
        .unwrap();
        assert_eq!(cfg.query.initial_count, 5);
        assert_eq!(cfg.prompt_expiry_ms, 60_000);
        assert!(cfg.fsync);
        assert_eq!(cfg.listen.port(), 9000);
    }

    #[test]
    fn bad_values_rejected() {
        let mut cfg = ServiceConfig::default();
        assert!(cfg
            .apply_env([("STRESSMON_QUERY_P_MIN".to_string(), "lots".to_string())])
            .is_err());
        assert!(ServiceConfig::from_toml("unknown_key = 1").is_err());
        cfg.query.p_min = 0.0;
        assert!(cfg.validate().is_err());
    }
}
