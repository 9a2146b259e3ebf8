use std::fmt;
use std::str::FromStr;

use super::ResFusionConfig;
use crate::error::{Error, Result};

/// One of the ablation variants applied to a base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    NoResidual,
    NoAttention,
    NoDropout,
    /// Identity Q/K/V maps; attention still runs over the raw fused features.
    NoConv,
    Depth(usize),
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::NoResidual,
        Variant::NoAttention,
        Variant::NoDropout,
        Variant::NoConv,
        Variant::Depth(3),
        Variant::Depth(4),
        Variant::Depth(5),
        Variant::Depth(6),
    ];

    /// Parses `all` or a comma-separated list of variant names.
    pub fn parse_list(list: &str) -> Result<Vec<Variant>> {
        if list.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::NoResidual => f.write_str("no_residual"),
            Variant::NoAttention => f.write_str("no_attention"),
            Variant::NoDropout => f.write_str("no_dropout"),
            Variant::NoConv => f.write_str("no_conv"),
            Variant::Depth(n) => write!(f, "depth{n}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_residual" => Ok(Variant::NoResidual),
            "no_attention" => Ok(Variant::NoAttention),
            "no_dropout" => Ok(Variant::NoDropout),
            "no_conv" => Ok(Variant::NoConv),
            "depth3" => Ok(Variant::Depth(3)),
            "depth4" => Ok(Variant::Depth(4)),
            "depth5" => Ok(Variant::Depth(5)),
            "depth6" => Ok(Variant::Depth(6)),
            other => Err(Error::Parameter(format!("unknown ablation variant {other:?}"))),
        }
    }
}

/// The base configuration with one component switched off or the depth set.
pub fn ablate(cfg: &ResFusionConfig, variant: Variant) -> Result<ResFusionConfig> {
    let mut out = cfg.clone();
    match variant {
        Variant::NoResidual => out.use_residual = false,
        Variant::NoAttention => out.use_attention = false,
        Variant::NoDropout => {
            out.use_dropout = false;
            out.dropout_p = 0.0;
        }
        Variant::NoConv => out.use_qkv_conv = false,
        Variant::Depth(n) => out.n_blocks = n,
    }
    out.validate().map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_touch_only_their_field() {
        let base = ResFusionConfig::default();
        assert_eq!(ablate(&base, Variant::Depth(3)).unwrap().n_blocks, 3);
        let nd = ablate(&base, Variant::NoDropout).unwrap();
        assert_eq!(nd.dropout_p, 0.0);
        assert_eq!(nd.effective_dropout(), 0.0);
        assert_eq!(
            ablate(&base, Variant::NoConv).unwrap(),
            ResFusionConfig {
                use_qkv_conv: false,
                ..base.clone()
            }
        );
        assert!(!ablate(&base, Variant::NoResidual).unwrap().use_residual);
        assert!(!ablate(&base, Variant::NoAttention).unwrap().use_attention);
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(Variant::parse_list("all").unwrap().len(), 8);
        assert_eq!(
            Variant::parse_list("depth4, no_conv").unwrap(),
            vec![Variant::Depth(4), Variant::NoConv]
        );
        assert!(matches!("depth9".parse::<Variant>(), Err(Error::Parameter(_))));
    }
}
