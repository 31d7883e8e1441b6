use std::path::Path;

use anyhow::{bail, Context, Result};
use topo_core::config::KvConfig;
use topo_core::probgen::SamplerConfig;
use topo_core::simp::SimpConfig;
use topo_core::toponet::{KDistribution, TrainConfig};

/// Every key any subcommand understands.
const KNOWN: &[&str] = &[
    "n", "grid", "physics", "load_direction", "lambda_fixed_x", "lambda_fixed_y", "lambda_loads",
    "boundary_weight", "f0_mean", "f0_std", "max_attempts", "iters", "rmin", "penal", "move_limit",
    "eta", "k", "epochs", "batch_size", "lr", "beta", "dropout", "stop_iters", "n0",
];

#[derive(Debug, Default)]
pub struct Settings {
    kv: KvConfig,
}

pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (x, y) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid '{s}' is not NELXxNELY"))?;
    Ok((x.trim().parse()?, y.trim().parse()?))
}

pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse().with_context(|| format!("bad list entry '{t}'")))
        .collect()
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let kv = KvConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        let unknown: Vec<_> = kv.keys().filter(|k| !KNOWN.contains(k)).collect();
        if !unknown.is_empty() {
            bail!("{}: unknown keys {}", path.display(), unknown.join(", "));
        }
        Ok(Self { kv })
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.kv.take(key)?)
    }

    pub fn sampler(&mut self) -> Result<SamplerConfig> {
        let mut c = SamplerConfig::default();
        if let Some(g) = self.take::<String>("grid")? {
            (c.nelx, c.nely) = parse_grid(&g)?;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.take(stringify!($f))? { c.$f = v; }
            )*};
        }
        set!(physics, load_direction, lambda_fixed_x, lambda_fixed_y, lambda_loads, boundary_weight,
             f0_mean, f0_std, max_attempts);
        Ok(c)
    }

    pub fn simp(&mut self) -> Result<SimpConfig> {
        let mut c = SimpConfig::default();
        if let Some(v) = self.take("iters")? {
            c.max_iters = v;
        }
        if let Some(v) = self.take("penal")? {
            c.material.penal = v;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.take(stringify!($f))? { c.$f = v; }
            )*};
        }
        set!(rmin, move_limit, eta);
        Ok(c)
    }

    pub fn train(&mut self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        if let Some(k) = self.take::<String>("k")? {
            c.k_distribution = KDistribution::preset(&k)?;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.take(stringify!($f))? { c.$f = v; }
            )*};
        }
        set!(epochs, batch_size, lr, beta, dropout);
        Ok(c)
    }
}
