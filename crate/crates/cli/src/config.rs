//! Fit configuration: flags override the TOML file, which overrides defaults.

use std::path::Path;

use ldr_core::{ChainConfig, MapConfig, RPrior};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::{FitArgs, Method, RPriorArg};

const DEFAULT_K: usize = 10;
const DEFAULT_INIT_SD: f64 = 0.1;

/// Layout of `--config`:
///
/// ```toml
/// seed = 7
/// K = 10
/// [gibbs]        # any ChainConfig field
/// iterations = 4000
/// [map]          # any MapConfig field, plus init_sd
/// step_size = 0.005
/// ```
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub gibbs: Option<toml::Table>,
    pub map: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Everything a fit needs, after precedence is applied.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FitConfig {
    Gibbs {
        chains: usize,
        chain: ChainConfig,
    },
    Map {
        #[serde(rename = "K")]
        k: usize,
        init_sd: f64,
        map: MapConfig,
    },
}

/// Deserialize a section over the defaults, rejecting keys the target
/// type does not know (its own serde layer would silently drop them).
fn section<T: for<'de> Deserialize<'de> + Serialize + Default>(table: Option<&toml::Table>, name: &str) -> Result<T> {
    let Some(t) = table else {
        return Ok(T::default());
    };
    let known = serde_json::to_value(T::default()).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(key) = t.keys().find(|k| known.get(k.as_str()).is_none()) {
        return Err(CliError::Usage(format!("[{name}]: unknown key {key:?}")));
    }
    t.clone()
        .try_into()
        .map_err(|e| CliError::Usage(format!("[{name}]: {e}")))
}

pub fn resolve(args: &FitArgs, file: &FileConfig, seed: u64) -> Result<FitConfig> {
    if args.chains == 0 {
        return Err(CliError::Usage("--chains must be at least 1".into()));
    }
    let file_k = file.k.or_else(|| {
        file.gibbs
            .as_ref()
            .and_then(|g| g.get("K"))
            .and_then(|v| v.as_integer())
            .map(|v| v as usize)
    });
    let k = args.k.or(file_k).unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(CliError::Usage("--K must be at least 1".into()));
    }

    match args.method {
        Method::Gibbs => {
            let mut chain: ChainConfig = section(file.gibbs.as_ref(), "gibbs")?;
            if args.fast {
                let fast = ChainConfig::fast();
                chain.iterations = fast.iterations;
                chain.burn_in = fast.burn_in;
            }
            chain.num_subrisks = k;
            chain.seed = seed;
            if let Some(v) = args.iterations {
                chain.iterations = v;
            }
            if let Some(v) = args.burnin {
                chain.burn_in = v;
            }
            if let Some(v) = args.thin {
                chain.thin = v;
            }
            if let Some(v) = args.init_sd {
                chain.init_sd = v;
            }
            chain.validate()?;
            Ok(FitConfig::Gibbs {
                chains: args.chains,
                chain,
            })
        }
        Method::Map => {
            let mut table = file.map.clone().unwrap_or_default();
            let file_init_sd = table.remove("init_sd").and_then(|v| v.as_float());
            let prior_in_file = table.contains_key("r_prior");
            let mut map: MapConfig = section(Some(&table), "map")?;
            if !prior_in_file {
                map.r_prior = RPrior::unit(k);
            }
            map.seed = seed;
            if let Some(p) = args.r_prior {
                map.r_prior = match p {
                    RPriorArg::Vague => RPrior::vague(k),
                    RPriorArg::Unit => RPrior::unit(k),
                    RPriorArg::L2 => RPrior::l2(),
                };
            }
            if let Some(v) = args.epochs {
                map.max_epochs = v;
            }
            if let Some(v) = args.step_size {
                map.step_size = v;
            }
            if let Some(v) = args.mc_samples {
                map.mc_samples = v;
            }
            if let Some(v) = args.minibatch {
                map.minibatch_size = (v > 0).then_some(v);
            }
            map.validate()?;
            let init_sd = args.init_sd.or(file_init_sd).unwrap_or(DEFAULT_INIT_SD);
            if !(init_sd >= 0.0 && init_sd.is_finite()) {
                return Err(CliError::Usage(format!("init_sd {init_sd} must be non-negative")));
            }
            Ok(FitConfig::Map { k, init_sd, map })
        }
    }
}
