use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Colour channel index in planar RGB data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    R = 0,
    G = 1,
    B = 2,
}

/// Assignment of colour filters to the four sites of a 2x2 Bayer cell,
/// indexed by `(row % 2, col % 2)`.
///
/// The default is `BGGR`: blue at (even, even), red at (odd, odd).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CfaLayout {
    pattern: [[Channel; 2]; 2],
}

impl Default for CfaLayout {
    fn default() -> Self {
        Self::BGGR
    }
}

impl CfaLayout {
    pub const BGGR: Self = Self {
        pattern: [[Channel::B, Channel::G], [Channel::G, Channel::R]],
    };
    pub const RGGB: Self = Self {
        pattern: [[Channel::R, Channel::G], [Channel::G, Channel::B]],
    };
    pub const GRBG: Self = Self {
        pattern: [[Channel::G, Channel::R], [Channel::B, Channel::G]],
    };
    pub const GBRG: Self = Self {
        pattern: [[Channel::G, Channel::B], [Channel::R, Channel::G]],
    };

    pub fn new(pattern: [[Channel; 2]; 2]) -> Result<Self, String> {
        let flat = [pattern[0][0], pattern[0][1], pattern[1][0], pattern[1][1]];
        let count = |c| flat.iter().filter(|&&x| x == c).count();
        if count(Channel::R) != 1 || count(Channel::B) != 1 || count(Channel::G) != 2 {
            return Err(format!("{flat:?} is not a Bayer cell (needs one R, one B, two G)"));
        }
        Ok(Self { pattern })
    }

    /// Filter colour at pixel `(row, col)`.
    #[inline]
    pub fn channel_at(&self, row: usize, col: usize) -> Channel {
        self.pattern[row & 1][col & 1]
    }

    pub fn name(&self) -> String {
        [self.pattern[0][0], self.pattern[0][1], self.pattern[1][0], self.pattern[1][1]]
            .iter()
            .map(|c| match c {
                Channel::R => 'R',
                Channel::G => 'G',
                Channel::B => 'B',
            })
            .collect()
    }
}

impl fmt::Display for CfaLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for CfaLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<Channel> = s
            .trim()
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'R' => Ok(Channel::R),
                'G' => Ok(Channel::G),
                'B' => Ok(Channel::B),
                other => Err(format!("invalid CFA letter {other:?} in {s:?}")),
            })
            .collect::<Result<_, _>>()?;
        if chars.len() != 4 {
            return Err(format!("CFA pattern {s:?} must have four letters"));
        }
        Self::new([[chars[0], chars[1]], [chars[2], chars[3]]])
    }
}

impl TryFrom<String> for CfaLayout {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CfaLayout> for String {
    fn from(c: CfaLayout) -> Self {
        c.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_puts_blue_at_even_even() {
        let c = CfaLayout::default();
        assert_eq!(c.channel_at(0, 0), Channel::B);
        assert_eq!(c.channel_at(1, 1), Channel::R);
        assert_eq!(c.channel_at(0, 1), Channel::G);
        assert_eq!(c.channel_at(3, 2), Channel::G);
        assert_eq!(c.name(), "BGGR");
    }

    #[test]
    fn parse_rejects_non_bayer_cells() {
        assert!("RGGB".parse::<CfaLayout>().is_ok());
        assert!("rggb".parse::<CfaLayout>().is_ok());
        assert!("RRGB".parse::<CfaLayout>().is_err());
        assert!("RGB".parse::<CfaLayout>().is_err());
        assert!("RGXB".parse::<CfaLayout>().is_err());
    }
}
