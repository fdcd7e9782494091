use core::fmt;
use core::str::FromStr;

use alloc::string::ToString;

use crate::error::Error;

/// The four supported backbones, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArchitectureId {
    EfficientNetB0,
    EfficientNetB2,
    Vgg16,
    VitB16,
}

impl ArchitectureId {
    pub const ALL: [ArchitectureId; 4] = [
        ArchitectureId::EfficientNetB0,
        ArchitectureId::EfficientNetB2,
        ArchitectureId::Vgg16,
        ArchitectureId::VitB16,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            ArchitectureId::EfficientNetB0 => "EfficientNetB0",
            ArchitectureId::EfficientNetB2 => "EfficientNetB2",
            ArchitectureId::Vgg16 => "VGG16",
            ArchitectureId::VitB16 => "ViTB16",
        }
    }

    /// Published parameter count of the ImageNet model (1000-way classifier
    /// included).
    pub const fn published_parameters(self) -> u64 {
        match self {
            ArchitectureId::EfficientNetB0 => 5_300_000,
            ArchitectureId::EfficientNetB2 => 8_800_000,
            ArchitectureId::Vgg16 => 138_000_000,
            ArchitectureId::VitB16 => 86_600_000,
        }
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ArchitectureId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "architecture",
                value: s.to_string(),
            })
    }
}
