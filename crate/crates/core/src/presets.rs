//! Published parameter settings per degradation scenario and norm.

use std::fmt;
use std::str::FromStr;

use crate::analysis::{AnalysisConfig, Shrinker};
use crate::grouping::GroupingConfig;
use crate::restoration::{LambdaMode, RestoreConfig, Spread};
use crate::types::ShrinkageSpec;

/// Regulariser family applied to group codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Norm {
    /// Uniform l1 (nuclear norm, NNM).
    L1,
    /// Uniform lp (Schatten-p, SNM).
    Lp,
    /// Weighted l1 (WNNM).
    WL1,
    /// Weighted lp (WSNM).
    WLp,
}

impl Norm {
    pub const ALL: [Norm; 4] = [Norm::L1, Norm::Lp, Norm::WL1, Norm::WLp];

    pub fn name(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::Lp => "lp",
            Norm::WL1 => "wl1",
            Norm::WLp => "wlp",
        }
    }

    pub fn weighted(self) -> bool {
        matches!(self, Norm::WL1 | Norm::WLp)
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Norm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Norm::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| format!("unknown norm {s:?} (expected l1, lp, wl1 or wlp)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    /// Random-mask inpainting with this fraction of pixels missing.
    Inpaint { missing: f64 },
    /// Block CS with this sampling ratio.
    Cs { ratio: f64 },
}

impl Scenario {
    pub fn is_inpaint(&self) -> bool {
        matches!(self, Scenario::Inpaint { .. })
    }
}

/// One row of the parameter table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub scenario: Scenario,
    /// Exponent used by the lp and weighted lp norms.
    pub p: f64,
    /// `(rho, lambda)` for l1.
    pub l1: (f64, f64),
    /// `(rho, lambda)` for lp.
    pub lp: (f64, f64),
    /// `rho` for weighted l1; lambda is adaptive.
    pub wl1_rho: f64,
    /// `rho` for weighted lp; lambda is adaptive.
    pub wlp_rho: f64,
}

pub const PRESETS: [Preset; 8] = [
    Preset { name: "miss80", scenario: Scenario::Inpaint { missing: 0.8 }, p: 0.45, l1: (7e-5, 5e-6), lp: (0.006, 0.07), wl1_rho: 0.1, wlp_rho: 0.0003 },
    Preset { name: "miss70", scenario: Scenario::Inpaint { missing: 0.7 }, p: 0.45, l1: (1e-4, 7e-6), lp: (0.008, 0.07), wl1_rho: 0.1, wlp_rho: 0.0003 },
    Preset { name: "miss60", scenario: Scenario::Inpaint { missing: 0.6 }, p: 0.95, l1: (1e-5, 1e-6), lp: (7e-5, 3e-6), wl1_rho: 0.1, wlp_rho: 0.03 },
    Preset { name: "miss50", scenario: Scenario::Inpaint { missing: 0.5 }, p: 0.95, l1: (5e-5, 1e-5), lp: (0.0001, 7e-6), wl1_rho: 0.1, wlp_rho: 0.04 },
    Preset { name: "r02", scenario: Scenario::Cs { ratio: 0.2 }, p: 0.5, l1: (0.001, 5e-5), lp: (0.003, 5e-4), wl1_rho: 0.1, wlp_rho: 0.0005 },
    Preset { name: "r03", scenario: Scenario::Cs { ratio: 0.3 }, p: 0.95, l1: (0.003, 7e-4), lp: (0.01, 3e-4), wl1_rho: 0.1, wlp_rho: 0.05 },
    Preset { name: "r04", scenario: Scenario::Cs { ratio: 0.4 }, p: 0.95, l1: (0.003, 5e-4), lp: (0.006, 3e-4), wl1_rho: 0.1, wlp_rho: 0.05 },
    Preset { name: "r05", scenario: Scenario::Cs { ratio: 0.5 }, p: 0.95, l1: (0.003, 5e-4), lp: (0.006, 3e-4), wl1_rho: 0.2, wlp_rho: 0.05 },
];

pub const SIGMA: f64 = std::f64::consts::SQRT_2;
pub const GST_ITERS: usize = 2;
pub const EPS_WEIGHT: f64 = 0.35;
/// Spread estimator used by the weighted norms' adaptive lambda.
pub const SPREAD: Spread = Spread::CodeVariance;

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn find_preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn grouping(&self) -> GroupingConfig {
        let (patch_size, window) = match self.scenario {
            Scenario::Inpaint { .. } => (8, 25),
            Scenario::Cs { .. } => (7, 20),
        };
        GroupingConfig {
            patch_size,
            match_count: 60,
            window,
            stride: GroupingConfig::DEFAULT_STRIDE,
        }
    }

    /// `eps_var` of the adaptive lambda rule for a weighted norm.
    pub fn eps_var(&self, norm: Norm) -> f64 {
        match (norm, self.scenario) {
            (Norm::WLp, Scenario::Inpaint { .. }) => 0.3,
            (Norm::WLp, Scenario::Cs { .. }) => 0.4,
            _ => 0.1,
        }
    }

    pub fn rho(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L1 => self.l1.0,
            Norm::Lp => self.lp.0,
            Norm::WL1 => self.wl1_rho,
            Norm::WLp => self.wlp_rho,
        }
    }

    pub fn lambda(&self, norm: Norm) -> LambdaMode {
        match norm {
            Norm::L1 => LambdaMode::Fixed(self.l1.1),
            Norm::Lp => LambdaMode::Fixed(self.lp.1),
            Norm::WL1 | Norm::WLp => LambdaMode::Adaptive(SPREAD),
        }
    }

    pub fn exponent(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L1 | Norm::WL1 => 1.0,
            Norm::Lp | Norm::WLp => self.p,
        }
    }

    pub fn shrinkage(&self, norm: Norm) -> ShrinkageSpec {
        ShrinkageSpec {
            p: self.exponent(norm),
            weighted: norm.weighted(),
            tau: 1.0,
            eps_weight: EPS_WEIGHT,
            gst_iters: GST_ITERS,
        }
    }

    /// Full restoration config for this scenario and norm.
    pub fn config(&self, norm: Norm) -> RestoreConfig {
        RestoreConfig {
            grouping: self.grouping(),
            spec: self.shrinkage(norm),
            rho: self.rho(norm),
            lambda: self.lambda(norm),
            sigma: SIGMA,
            eps_var: self.eps_var(norm),
            ..RestoreConfig::default()
        }
    }

    pub fn shrinker(&self, norm: Norm) -> Shrinker {
        Shrinker {
            spec: self.shrinkage(norm),
            lambda: self.lambda(norm),
            rho: self.rho(norm),
            eps_var: self.eps_var(norm),
        }
    }

    /// Sparsity-analysis config using this scenario's thresholds.
    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            grouping: self.grouping(),
            sigma: SIGMA,
            nnm: self.shrinker(Norm::L1),
            wnnm: self.shrinker(Norm::WL1),
            snm: self.shrinker(Norm::Lp),
            wsnm: self.shrinker(Norm::WLp),
        }
    }
}
