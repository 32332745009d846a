//! Pipeline configuration file: TOML, or JSON when the path ends in `.json`.
//! Command-line flags override file values, which override defaults.

use std::path::{Path, PathBuf};

use mobacc_core::cdr_ingest::DEFAULT_MIN_ACTIVE_DAYS;
use mobacc_core::curve_fit::SelectionRule;
use mobacc_core::markov::{UnseenContext, DEFAULT_ORDER};
use mobacc_core::pipeline::FitOptions;
use mobacc_core::synthgen::{GeneratorConfig, DEFAULT_START_EPOCH};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,

    pub delimiter: char,
    pub timezone: String,
    pub positional: bool,
    pub min_active_days: usize,
    pub collapse_duplicates: bool,
    pub roam_city: Option<String>,

    pub order: usize,
    pub unseen: UnseenContext,
    /// Train on this leading fraction and test on the rest; prequential when absent.
    pub split: Option<f64>,
    pub skip_bad_users: bool,

    pub interval_width: f64,
    pub n_intervals: usize,
    pub grid_size: usize,
    pub alpha: f64,
    pub min_bin_size: usize,
    pub selection: SelectionRule,
    pub weighted: bool,
    pub truncated: bool,

    pub extrapolate: bool,
    pub tolerance: f64,

    pub dataset_id: Option<String>,
    /// Provenance timestamp written into model files.
    pub timestamp: Option<String>,

    pub generator: GeneratorSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        PipelineConfig {
            input: Vec::new(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            delimiter: ',',
            timezone: "UTC".into(),
            positional: false,
            min_active_days: DEFAULT_MIN_ACTIVE_DAYS,
            collapse_duplicates: false,
            roam_city: None,
            order: DEFAULT_ORDER,
            unseen: UnseenContext::Backoff,
            split: None,
            skip_bad_users: false,
            interval_width: fit.interval_width,
            n_intervals: fit.n_intervals,
            grid_size: fit.grid_size,
            alpha: fit.alpha,
            min_bin_size: fit.min_bin_size,
            selection: fit.selection,
            weighted: fit.weighted,
            truncated: fit.truncated,
            extrapolate: false,
            tolerance: 1e-9,
            dataset_id: None,
            timestamp: None,
            generator: GeneratorSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub n_users: usize,
    pub seq_length: usize,
    pub n_locations: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub tour_period: usize,
    pub start_epoch: i64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        GeneratorSection {
            n_users: g.n_users,
            seq_length: g.seq_length,
            n_locations: g.n_locations,
            rho_min: g.rho_min,
            rho_max: g.rho_max,
            tour_period: g.tour_period,
            start_epoch: DEFAULT_START_EPOCH,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(anyhow::Error::from)
        } else {
            toml::from_str(&text).map_err(anyhow::Error::from)
        };
        parsed.map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            interval_width: self.interval_width,
            n_intervals: self.n_intervals,
            grid_size: self.grid_size,
            alpha: self.alpha,
            min_bin_size: self.min_bin_size,
            selection: self.selection,
            weighted: self.weighted,
            truncated: self.truncated,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            n_users: g.n_users,
            seq_length: g.seq_length,
            n_locations: g.n_locations,
            rho_min: g.rho_min,
            rho_max: g.rho_max,
            tour_period: g.tour_period,
            seed: self.seed,
            start_epoch: g.start_epoch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_share_keys() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(
            &toml_path,
            "seed = 9\nmin_bin_size = 4\nselection = \"bic\"\nunseen = \"miss\"\n[generator]\nn_users = 12\n",
        )
        .unwrap();
        let c = PipelineConfig::load(&toml_path).unwrap();
        assert_eq!((c.seed, c.min_bin_size, c.generator.n_users), (9, 4, 12));
        assert_eq!(c.selection, SelectionRule::Bic);
        assert_eq!(c.unseen, UnseenContext::Miss);
        assert_eq!(c.generator_config().seed, 9);
        assert_eq!(c.order, 2);

        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, r#"{"seed": 9, "min_bin_size": 4, "selection": "bic", "unseen": "miss", "generator": {"n_users": 12}}"#).unwrap();
        assert_eq!(PipelineConfig::load(&json_path).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "sed = 1\n").unwrap();
        let err = PipelineConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("sed"), "{err}");
    }
}
