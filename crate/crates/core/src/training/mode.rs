use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adaptation::{ImageTerm, InstanceTerm};
use crate::error::Error;

/// The seven ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    Baseline,
    ImageAL,
    ImageUaAL,
    InstanceAL,
    InstanceUaAL,
    #[serde(rename = "UaDAN_noUgCL")]
    UaDANNoUgCL,
    UaDAN,
}

impl AblationMode {
    pub const ALL: [AblationMode; 7] = [
        AblationMode::Baseline,
        AblationMode::ImageAL,
        AblationMode::ImageUaAL,
        AblationMode::InstanceAL,
        AblationMode::InstanceUaAL,
        AblationMode::UaDANNoUgCL,
        AblationMode::UaDAN,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Baseline => "Baseline",
            AblationMode::ImageAL => "ImageAL",
            AblationMode::ImageUaAL => "ImageUaAL",
            AblationMode::InstanceAL => "InstanceAL",
            AblationMode::InstanceUaAL => "InstanceUaAL",
            AblationMode::UaDANNoUgCL => "UaDAN_noUgCL",
            AblationMode::UaDAN => "UaDAN",
        }
    }

    pub fn image_term(self) -> ImageTerm {
        match self {
            AblationMode::ImageAL => ImageTerm::Uniform,
            AblationMode::ImageUaAL | AblationMode::UaDANNoUgCL | AblationMode::UaDAN => ImageTerm::Entropy,
            _ => ImageTerm::None,
        }
    }

    pub fn instance_term(self) -> InstanceTerm {
        match self {
            AblationMode::InstanceAL => InstanceTerm::Uniform,
            AblationMode::InstanceUaAL | AblationMode::UaDANNoUgCL => InstanceTerm::Entropy,
            AblationMode::UaDAN => InstanceTerm::Curriculum,
            _ => InstanceTerm::None,
        }
    }

    /// Whether target images take part in training at all.
    pub fn uses_target(self) -> bool {
        self != AblationMode::Baseline
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode {s:?}; expected one of {}",
                    AblationMode::ALL.map(|m| m.name()).join(", ")
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for m in AblationMode::ALL {
            assert_eq!(m.name().parse::<AblationMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("nope".parse::<AblationMode>().is_err());
    }

    #[test]
    fn term_table() {
        use AblationMode::*;
        let table = [
            (Baseline, ImageTerm::None, InstanceTerm::None),
            (ImageAL, ImageTerm::Uniform, InstanceTerm::None),
            (ImageUaAL, ImageTerm::Entropy, InstanceTerm::None),
            (InstanceAL, ImageTerm::None, InstanceTerm::Uniform),
            (InstanceUaAL, ImageTerm::None, InstanceTerm::Entropy),
            (UaDANNoUgCL, ImageTerm::Entropy, InstanceTerm::Entropy),
            (UaDAN, ImageTerm::Entropy, InstanceTerm::Curriculum),
        ];
        for (m, i, n) in table {
            assert_eq!((m.image_term(), m.instance_term()), (i, n), "{m}");
        }
    }
}
