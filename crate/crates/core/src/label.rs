//! Closed vocabularies shared by every stage: class label, split, dataset
//! variant and record origin.

use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use crate::error::Error;

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub const fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::UnknownName { kind: $kind, value: s.to_string() }),
                }
            }
        }
    };
}

named_enum!(
    /// Binary diagnosis label. The discriminant order is the model's class
    /// order: logit 0 is `negative`, logit 1 is `positive`.
    Label, "label", {
        Negative => "negative",
        Positive => "positive",
    }
);

named_enum!(
    /// Split a record is assigned to.
    Split, "split", {
        Train => "train",
        Val => "val",
        Test => "test",
        Unassigned => "unassigned",
    }
);

named_enum!(
    /// Full-field images or cropped segmented diagnostic patches.
    Variant, "variant", {
        Ffi => "FFI",
        Sdp => "SDP",
    }
);

named_enum!(
    Origin, "origin", {
        Original => "original",
        Augmented => "augmented",
    }
);

impl Label {
    pub const COUNT: usize = 2;

    /// Class index in logit order.
    pub const fn index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }
}

/// Per-class counter indexed by [`Label::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ClassCounts {
    pub negative: usize,
    pub positive: usize,
}

impl ClassCounts {
    pub const fn new(positive: usize, negative: usize) -> Self {
        Self { negative, positive }
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Negative => self.negative,
            Label::Positive => self.positive,
        }
    }

    pub fn add(&mut self, label: Label) {
        match label {
            Label::Negative => self.negative += 1,
            Label::Positive => self.positive += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.negative + self.positive
    }
}

impl core::ops::Add for ClassCounts {
    type Output = ClassCounts;

    fn add(self, rhs: Self) -> Self {
        ClassCounts {
            negative: self.negative + rhs.negative,
            positive: self.positive + rhs.positive,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), *l);
        }
        assert_eq!("SDP".parse::<Variant>().unwrap(), Variant::Sdp);
        assert!("Positive".parse::<Label>().is_err());
    }

    #[test]
    fn label_index_order() {
        assert_eq!(Label::Negative.index(), 0);
        assert_eq!(Label::from_index(1), Some(Label::Positive));
        assert_eq!(Label::from_index(2), None);
    }
}
