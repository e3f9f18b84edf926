//! Impression logs: the CSV schema, validation and a synthetic generator.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_HEADER: [&str; 8] = [
    "episode",
    "timestep",
    "opportunity_id",
    "ad_id",
    "group",
    "value",
    "quality",
    "msb",
];

/// Advertiser objective; one mean agent per objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "CLICK")]
    Click,
    #[serde(rename = "CONV")]
    Conv,
    #[serde(rename = "CART")]
    Cart,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Click, Objective::Conv, Objective::Cart];

    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Click => "CLICK",
            Objective::Conv => "CONV",
            Objective::Cart => "CART",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "CLICK" => Ok(Objective::Click),
            "CONV" => Ok(Objective::Conv),
            "CART" => Ok(Objective::Cart),
            other => Err(format!("unknown group `{other}`")),
        }
    }
}

/// One recalled ad competing for one impression opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub episode: u32,
    pub timestep: u32,
    pub opportunity_id: u32,
    pub ad_id: u32,
    pub group: Objective,
    pub value: f64,
    /// pCTR-like eCPM multiplier in `[0, 1]`.
    pub quality: f64,
    /// Manually set bid.
    pub msb: f64,
}

impl ImpressionRecord {
    fn key(&self) -> (u32, u32, u32, u32) {
        (self.episode, self.timestep, self.opportunity_id, self.ad_id)
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.value >= 0.0) || !self.value.is_finite() {
            return Err(("value", format!("value {} must be finite and >= 0", self.value)));
        }
        if !(0.0..=1.0).contains(&self.quality) {
            return Err(("quality", format!("quality {} outside [0, 1]", self.quality)));
        }
        if !(self.msb >= 0.0) || !self.msb.is_finite() {
            return Err(("msb", format!("msb {} must be finite and >= 0", self.msb)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImpressionLog {
    pub records: Vec<ImpressionRecord>,
}

impl ImpressionLog {
    pub fn new(records: Vec<ImpressionRecord>) -> Result<Self> {
        let log = ImpressionLog { records };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            if let Err((column, message)) = r.check() {
                return Err(Error::domain(format!("record {i}, {column}: {message}")));
            }
            if !seen.insert(r.key()) {
                return Err(Error::domain(format!("record {i} duplicates key {:?}", r.key())));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Distinct episode ids in ascending order.
    pub fn episodes(&self) -> Vec<u32> {
        let mut eps: Vec<u32> = self.records.iter().map(|r| r.episode).collect();
        eps.sort_unstable();
        eps.dedup();
        eps
    }
}

/// Value distribution and size of one advertiser group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistribution {
    pub objective: Objective,
    pub ads: usize,
    /// Log-normal location of impression values.
    pub mu: f64,
    /// Log-normal scale of impression values.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogConfig {
    pub episodes: usize,
    pub timesteps: usize,
    pub opportunities: usize,
    pub groups: Vec<GroupDistribution>,
    /// Ads of each group recalled for every opportunity.
    pub recalled_per_group: usize,
    pub quality_low: f64,
    pub quality_high: f64,
    /// Manually set bids are `msb_scale * value * LogNormal(0, msb_noise)`.
    pub msb_scale: f64,
    pub msb_noise: f64,
}

impl Default for LogConfig {
    fn default() -> Self {
        let group = |objective, mu| GroupDistribution {
            objective,
            ads: 10,
            mu,
            sigma: 0.5,
        };
        LogConfig {
            episodes: 20,
            timesteps: 60,
            opportunities: 20,
            groups: vec![
                group(Objective::Click, -1.2),
                group(Objective::Conv, -1.6),
                group(Objective::Cart, -1.4),
            ],
            recalled_per_group: 1,
            quality_low: 0.5,
            quality_high: 1.0,
            msb_scale: 2.0,
            msb_noise: 0.3,
        }
    }
}

impl LogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.timesteps == 0 || self.opportunities == 0 {
            return Err(Error::domain("episodes, timesteps and opportunities must be positive"));
        }
        if self.groups.is_empty() {
            return Err(Error::domain("at least one group is required"));
        }
        let mut objectives = HashSet::new();
        for g in &self.groups {
            if !objectives.insert(g.objective) {
                return Err(Error::domain(format!("group {} listed twice", g.objective)));
            }
            if g.ads < self.recalled_per_group || g.ads == 0 {
                return Err(Error::domain(format!(
                    "group {} has {} ads, fewer than the {} recalled per opportunity",
                    g.objective, g.ads, self.recalled_per_group
                )));
            }
            if !g.mu.is_finite() || !(g.sigma >= 0.0) || !g.sigma.is_finite() {
                return Err(Error::domain(format!(
                    "group {} has invalid log-normal parameters ({}, {})",
                    g.objective, g.mu, g.sigma
                )));
            }
        }
        if self.recalled_per_group == 0 {
            return Err(Error::domain("recalled_per_group must be positive"));
        }
        if !(0.0 <= self.quality_low && self.quality_low <= self.quality_high && self.quality_high <= 1.0)
        {
            return Err(Error::domain(format!(
                "quality band [{}, {}] must lie inside [0, 1]",
                self.quality_low, self.quality_high
            )));
        }
        if !(self.msb_scale >= 0.0) || !(self.msb_noise >= 0.0) {
            return Err(Error::domain("msb scale and noise must be >= 0"));
        }
        Ok(())
    }

    /// Analytic mean of a group's values, `exp(mu + sigma^2 / 2)`.
    pub fn group_value_mean(&self, objective: Objective) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.objective == objective)
            .map(|g| (g.mu + 0.5 * g.sigma * g.sigma).exp())
    }
}

/// Rounds to 9 significant digits so that written logs read back exactly.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn generate_log<R: Rng + ?Sized>(config: &LogConfig, rng: &mut R) -> Result<ImpressionLog> {
    config.validate()?;
    let dists: Vec<LogNormal<f64>> = config
        .groups
        .iter()
        .map(|g| LogNormal::new(g.mu, g.sigma).map_err(|e| Error::domain(e.to_string())))
        .collect::<Result<_>>()?;
    let noise = LogNormal::new(0.0, config.msb_noise).map_err(|e| Error::domain(e.to_string()))?;
    let mut offsets = Vec::with_capacity(config.groups.len());
    let mut next = 0u32;
    for g in &config.groups {
        offsets.push(next);
        next += g.ads as u32;
    }

    let per_opp = config.groups.len() * config.recalled_per_group;
    let mut records =
        Vec::with_capacity(config.episodes * config.timesteps * config.opportunities * per_opp);
    for episode in 0..config.episodes {
        for timestep in 0..config.timesteps {
            for opportunity in 0..config.opportunities {
                for (g, group) in config.groups.iter().enumerate() {
                    let mut picked = index::sample(rng, group.ads, config.recalled_per_group).into_vec();
                    picked.sort_unstable();
                    for k in picked {
                        let value = round_sig9(dists[g].sample(rng));
                        let quality =
                            round_sig9(rng.random_range(config.quality_low..=config.quality_high));
                        let msb = round_sig9(config.msb_scale * value * noise.sample(rng));
                        records.push(ImpressionRecord {
                            episode: episode as u32,
                            timestep: timestep as u32,
                            opportunity_id: opportunity as u32,
                            ad_id: offsets[g] + k as u32,
                            group: group.objective,
                            value,
                            quality,
                            msb,
                        });
                    }
                }
            }
        }
    }
    Ok(ImpressionLog { records })
}

pub fn write_log(path: &Path, log: &ImpressionLog) -> Result<()> {
    log.validate()?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(LOG_HEADER)?;
    for r in &log.records {
        writer.write_record([
            r.episode.to_string(),
            r.timestep.to_string(),
            r.opportunity_id.to_string(),
            r.ad_id.to_string(),
            r.group.to_string(),
            round_sig9(r.value).to_string(),
            round_sig9(r.quality).to_string(),
            round_sig9(r.msb).to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn field<T: FromStr>(row: &csv::StringRecord, col: usize, line: u64) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = row.get(col).ok_or_else(|| Error::Parse {
        line,
        column: LOG_HEADER[col].into(),
        message: "missing field".into(),
    })?;
    raw.trim().parse().map_err(|e: T::Err| Error::Parse {
        line,
        column: LOG_HEADER[col].into(),
        message: format!("cannot parse `{raw}`: {e}"),
    })
}

pub fn read_log(path: &Path) -> Result<ImpressionLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != LOG_HEADER {
        return Err(Error::Schema(format!(
            "expected header `{}`, found `{}`",
            LOG_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != LOG_HEADER.len() {
            return Err(Error::Parse {
                line,
                column: LOG_HEADER[row.len().min(LOG_HEADER.len() - 1)].into(),
                message: format!("expected {} fields, found {}", LOG_HEADER.len(), row.len()),
            });
        }
        let record = ImpressionRecord {
            episode: field(&row, 0, line)?,
            timestep: field(&row, 1, line)?,
            opportunity_id: field(&row, 2, line)?,
            ad_id: field(&row, 3, line)?,
            group: field(&row, 4, line)?,
            value: field(&row, 5, line)?,
            quality: field(&row, 6, line)?,
            msb: field(&row, 7, line)?,
        };
        if let Err((column, message)) = record.check() {
            return Err(Error::Parse {
                line,
                column: column.into(),
                message,
            });
        }
        if !seen.insert(record.key()) {
            return Err(Error::Parse {
                line,
                column: "ad_id".into(),
                message: "duplicate (episode, timestep, opportunity_id, ad_id)".into(),
            });
        }
        records.push(record);
    }
    Ok(ImpressionLog { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;
    use std::io::Write;

    fn small_config() -> LogConfig {
        LogConfig {
            episodes: 1,
            ..LogConfig::default()
        }
    }

    #[test]
    fn one_episode_has_sixty_timesteps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let log = generate_log(&small_config(), &mut rng).unwrap();
        let steps: BTreeSet<u32> = log.records.iter().map(|r| r.timestep).collect();
        assert_eq!(steps.len(), 60);
        let opps: BTreeSet<(u32, u32)> = log
            .records
            .iter()
            .map(|r| (r.timestep, r.opportunity_id))
            .collect();
        assert_eq!(opps.len(), 60 * 20);
        // three groups, one recalled ad each
        assert_eq!(log.len(), 60 * 20 * 3);
        log.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let gen = || generate_log(&small_config(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(gen(), gen());
    }

    #[test]
    fn invalid_distribution_is_rejected() {
        let mut cfg = small_config();
        cfg.groups[0].sigma = -1.0;
        assert!(generate_log(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let mut cfg = small_config();
        cfg.quality_high = 1.5;
        assert!(generate_log(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let mut cfg = small_config();
        cfg.recalled_per_group = 11;
        assert!(generate_log(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn write_then_read_round_trips() {
        let mut cfg = small_config();
        cfg.timesteps = 5;
        let log = generate_log(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log(&path, &log).unwrap();
        let back = read_log(&path).unwrap();
        assert_eq!(back, log);
    }

    fn write_text(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn negative_value_names_line_and_column() {
        let (_dir, path) = write_text(
            "episode,timestep,opportunity_id,ad_id,group,value,quality,msb\n\
             0,0,0,1,CLICK,0.5,0.7,1.0\n\
             0,0,0,2,CONV,-0.1,0.7,1.0\n",
        );
        match read_log(&path) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "value");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unparsable_field_names_column() {
        let (_dir, path) = write_text(
            "episode,timestep,opportunity_id,ad_id,group,value,quality,msb\n\
             0,0,0,1,SHOP,0.5,0.7,1.0\n",
        );
        match read_log(&path) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "group");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_mismatch_is_schema_error() {
        let (_dir, path) = write_text("episode,timestep,opportunity,ad_id,group,value,quality,msb\n");
        assert!(matches!(read_log(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let (_dir, path) = write_text(
            "episode,timestep,opportunity_id,ad_id,group,value,quality,msb\n\
             0,0,0,1,CLICK,0.5,0.7,1.0\n\
             0,0,0,1,CLICK,0.6,0.7,1.0\n",
        );
        assert!(matches!(read_log(&path), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(round_sig9(0.123_456_789_123), 0.123_456_789);
        assert_eq!(round_sig9(12_345.678_912_3), 12_345.678_9);
        assert_eq!(round_sig9(0.0), 0.0);
    }
}
