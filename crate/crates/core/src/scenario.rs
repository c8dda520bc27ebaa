use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The four experimental regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Inversion model trained on clean speech only.
    #[serde(rename = "si-o")]
    SiO,
    /// Enhancement model trained on noisy speech.
    #[serde(rename = "se-base")]
    SeBase,
    /// Frozen SE-Base enhancer feeding a freshly trained inversion model.
    #[serde(rename = "sise-p")]
    SiseP,
    /// Joint enhancement + inversion on a shared backbone.
    #[serde(rename = "sise-m")]
    SiseM,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::SiO, Scenario::SeBase, Scenario::SiseP, Scenario::SiseM];

    pub fn uses_se_loss(self) -> bool {
        matches!(self, Scenario::SeBase | Scenario::SiseM)
    }

    pub fn uses_si_loss(self) -> bool {
        !matches!(self, Scenario::SeBase)
    }

    /// Whether training reads noise-augmented entries.
    pub fn uses_noisy_data(self) -> bool {
        !matches!(self, Scenario::SiO)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SiO => "si-o",
            Scenario::SeBase => "se-base",
            Scenario::SiseP => "sise-p",
            Scenario::SiseM => "sise-m",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "si-o" | "sio" => Ok(Scenario::SiO),
            "se-base" | "sebase" => Ok(Scenario::SeBase),
            "sise-p" | "sisep" => Ok(Scenario::SiseP),
            "sise-m" | "sisem" => Ok(Scenario::SiseM),
            other => Err(Error::InvalidInput(format!("unknown scenario '{other}'"))),
        }
    }
}
