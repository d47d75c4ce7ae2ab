// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// One attention head, addressed by `(layer, head)`. Renders as `L{layer}H{head}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HeadIndex {
    pub layer: usize,
    pub head: usize,
}

impl HeadIndex {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    pub fn check(self, config: &ModelConfig) -> Result<Self> {
        if self.layer < config.n_layers && self.head < config.n_heads {
            Ok(self)
        } else {
            Err(Error::InvalidHead {
                head: self,
                n_layers: config.n_layers,
                n_heads: config.n_heads,
            })
        }
    }

    /// Row-major flat index into an `[n_layers x n_heads]` matrix.
    pub fn flat(self, n_heads: usize) -> usize {
        self.layer * n_heads + self.head
    }

    /// Every head of the model in `(layer, head)` order.
    pub fn all(config: &ModelConfig) -> impl Iterator<Item = HeadIndex> + '_ {
        (0..config.n_layers).flat_map(move |layer| (0..config.n_heads).map(move |head| HeadIndex { layer, head }))
    }
}

impl fmt::Display for HeadIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

impl FromStr for HeadIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = || Error::HeadParse(s.to_string());
        let rest = s.strip_prefix('L').ok_or_else(err)?;
        let (layer, head) = rest.split_once('H').ok_or_else(err)?;
        let parse = |part: &str| -> Result<usize> {
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            // Canonical form has no leading zeros.
            if part.len() > 1 && part.starts_with('0') {
                return Err(err());
            }
            part.parse().map_err(|_| err())
        };
        Ok(HeadIndex {
            layer: parse(layer)?,
            head: parse(head)?,
        })
    }
}

impl Serialize for HeadIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HeadIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
