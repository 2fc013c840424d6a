use serde::{Deserialize, Serialize};

/// Binary change label of a live point or pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    #[default]
    Consistent = 0,
    Changed = 1,
}

impl Label {
    pub fn is_changed(self) -> bool {
        self == Label::Changed
    }

    pub fn from_bool(changed: bool) -> Self {
        if changed {
            Label::Changed
        } else {
            Label::Consistent
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Consistent),
            1 => Some(Label::Changed),
            _ => None,
        }
    }
}
