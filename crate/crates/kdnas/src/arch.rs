//! Architecture descriptions for encoder candidates.
//!
//! An [`ArchState`] is one point in the search space: hidden layer count,
//! attention heads, hidden size, intermediate (FFN) size, and activation.
//! The canonical text form is the comma notation `"L,A,H,F,act"`,
//! e.g. `"4,4,288,768,gelu"`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden activation of the FFN block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Silu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Gelu, Activation::Relu, Activation::Silu];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected gelu, relu or silu)"
            ))),
        }
    }
}

/// One candidate encoder architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArchState {
    pub hidden_layers: usize,
    pub attention_heads: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub activation: Activation,
}

impl ArchState {
    /// Validating constructor: all counts positive, heads divide hidden size.
    pub fn new(
        hidden_layers: usize,
        attention_heads: usize,
        hidden_size: usize,
        intermediate_size: usize,
        activation: Activation,
    ) -> Result<Self> {
        let state = Self {
            hidden_layers,
            attention_heads,
            hidden_size,
            intermediate_size,
            activation,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0
            || self.attention_heads == 0
            || self.hidden_size == 0
            || self.intermediate_size == 0
        {
            return Err(Error::Config(format!(
                "architecture fields must be positive: {self}"
            )));
        }
        if self.hidden_size % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} attention heads",
                self.hidden_size, self.attention_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.attention_heads
    }

    /// Comparison key in canonical field order; used for deterministic
    /// tie-breaking and sorted containers.
    pub fn key(&self) -> (usize, usize, usize, usize, Activation) {
        (
            self.hidden_layers,
            self.attention_heads,
            self.hidden_size,
            self.intermediate_size,
            self.activation,
        )
    }
}

impl fmt::Display for ArchState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.hidden_layers,
            self.attention_heads,
            self.hidden_size,
            self.intermediate_size,
            self.activation
        )
    }
}

impl FromStr for ArchState {
    type Err = Error;

    /// Parse the comma notation `"L,A,H,F,act"`. Errors carry the byte
    /// offset of the offending field.
    fn from_str(text: &str) -> Result<Self> {
        let mut fields = Vec::with_capacity(5);
        let mut offset = 0;
        for part in text.split(',') {
            fields.push((offset, part));
            offset += part.len() + 1;
        }
        if fields.len() != 5 {
            return Err(Error::Parse {
                pos: text.len(),
                msg: format!("expected 5 comma-separated fields, found {}", fields.len()),
            });
        }
        let count = |idx: usize, what: &str| -> Result<usize> {
            let (pos, raw) = fields[idx];
            raw.trim().parse::<usize>().map_err(|_| Error::Parse {
                pos,
                msg: format!("invalid {what} {raw:?}"),
            })
        };
        let hidden_layers = count(0, "hidden layer count")?;
        let attention_heads = count(1, "attention head count")?;
        let hidden_size = count(2, "hidden size")?;
        let intermediate_size = count(3, "intermediate size")?;
        let (act_pos, act_raw) = fields[4];
        let activation = act_raw.trim().parse::<Activation>().map_err(|_| Error::Parse {
            pos: act_pos,
            msg: format!("invalid activation {act_raw:?}"),
        })?;
        ArchState::new(
            hidden_layers,
            attention_heads,
            hidden_size,
            intermediate_size,
            activation,
        )
        .map_err(|e| Error::Parse {
            pos: 0,
            msg: e.to_string(),
        })
    }
}

impl Serialize for ArchState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArchState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let s: ArchState = "4,4,288,768,gelu".parse().unwrap();
        assert_eq!(
            s,
            ArchState::new(4, 4, 288, 768, Activation::Gelu).unwrap()
        );
        assert_eq!(s.to_string(), "4,4,288,768,gelu");
    }

    #[test]
    fn parse_rejects_unknown_activation() {
        let err = "4,4,288,768,tanh".parse::<ArchState>().unwrap_err();
        match err {
            Error::Parse { pos, .. } => assert_eq!(pos, 12),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_field_count() {
        assert!(matches!(
            "4,4,288,768".parse::<ArchState>(),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn divisibility_enforced() {
        assert!(ArchState::new(4, 3, 10, 64, Activation::Relu).is_err());
        assert!(matches!(
            "4,3,10,64,relu".parse::<ArchState>(),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn serde_uses_comma_notation() {
        let s: ArchState = "3,12,384,1024,gelu".parse().unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"3,12,384,1024,gelu\"");
        let back: ArchState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
