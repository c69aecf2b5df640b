use std::fmt;
use std::str::FromStr;

use rand::seq::index;

use super::{PruneError, SaliencyMap};
use crate::netzoo::{remove_filters, Network};
use crate::seeding;

/// Which conv layer a layer-local strategy prunes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerRule {
    /// Zero-based conv layer index.
    Fixed(usize),
    /// The conv layer with the most filters at selection time; ties go to
    /// the lowest index.
    MostFilters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Lowest normalized Taylor scores across all conv layers.
    GlobalTaylor,
    /// Uniform random filters from one layer.
    LayerRandom(LayerRule),
    /// Lowest Taylor scores within one layer.
    LayerTaylor(LayerRule),
}

/// `(conv layer index, filter index)` in the network at selection time.
pub type FilterRef = (usize, usize);

impl LayerRule {
    pub fn resolve(self, census: &[usize]) -> Result<usize, PruneError> {
        match self {
            LayerRule::Fixed(i) if i < census.len() => Ok(i),
            LayerRule::Fixed(i) => Err(PruneError::NoSuchLayer {
                index: i,
                convs: census.len(),
            }),
            LayerRule::MostFilters => census
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .ok_or(PruneError::NoSuchLayer { index: 0, convs: 0 }),
        }
    }
}

impl Strategy {
    pub fn needs_scores(self) -> bool {
        !matches!(self, Strategy::LayerRandom(_))
    }

    /// File-name friendly label, e.g. `layer-random-2`.
    pub fn slug(self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for LayerRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRule::Fixed(i) => write!(f, "{i}"),
            LayerRule::MostFilters => f.write_str("most"),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::GlobalTaylor => f.write_str("global-taylor"),
            Strategy::LayerRandom(r) => write!(f, "layer-random:{r}"),
            Strategy::LayerTaylor(r) => write!(f, "layer-taylor:{r}"),
        }
    }
}

impl FromStr for LayerRule {
    type Err = PruneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "most" | "most-filters" => Ok(LayerRule::MostFilters),
            _ => s
                .parse()
                .map(LayerRule::Fixed)
                .map_err(|_| PruneError::BadStrategy(format!("unknown layer rule {s:?}"))),
        }
    }
}

impl FromStr for Strategy {
    type Err = PruneError;

    /// Accepts `global-taylor`, `layer-random:<rule>`, `layer-taylor:<rule>`
    /// where `<rule>` is a conv index or `most`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "global-taylor" {
            return Ok(Strategy::GlobalTaylor);
        }
        match s.split_once(':') {
            Some(("layer-random", r)) => Ok(Strategy::LayerRandom(r.parse()?)),
            Some(("layer-taylor", r)) => Ok(Strategy::LayerTaylor(r.parse()?)),
            _ => Err(PruneError::BadStrategy(format!("unknown strategy {s:?}"))),
        }
    }
}

fn lowest_in_layer(scores: &[f64], layer: usize, k: usize) -> Vec<FilterRef> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    ids.into_iter().take(k).map(|f| (layer, f)).collect()
}

/// Picks `k` filters to prune. The result is sorted by `(layer, filter)`.
///
/// GlobalTaylor skips a candidate once taking it would leave its layer
/// empty, so every layer keeps at least one filter.
pub fn select_filters(
    strategy: Strategy,
    scores: Option<&SaliencyMap>,
    census: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<FilterRef>, PruneError> {
    if k == 0 {
        return Err(PruneError::InvalidSchedule("k must be at least 1".into()));
    }
    let scores = match (strategy.needs_scores(), scores) {
        (true, None) => return Err(PruneError::MissingScores),
        (_, s) => s,
    };
    if let Some(s) = scores {
        let shape: Vec<usize> = s.layers.iter().map(Vec::len).collect();
        if shape != census {
            return Err(PruneError::StaleScores {
                scores: shape,
                census: census.to_vec(),
            });
        }
    }
    let mut picked = match strategy {
        Strategy::GlobalTaylor => {
            let s = scores.expect("checked above");
            let mut all: Vec<(f64, usize, usize)> = s
                .layers
                .iter()
                .enumerate()
                .flat_map(|(l, v)| v.iter().enumerate().map(move |(f, &x)| (x, l, f)))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut taken = vec![0; census.len()];
            let mut out = Vec::with_capacity(k);
            for (_, l, f) in all {
                if out.len() == k {
                    break;
                }
                if taken[l] + 1 < census[l] {
                    taken[l] += 1;
                    out.push((l, f));
                }
            }
            if out.len() < k {
                return Err(PruneError::NotEnoughFilters {
                    wanted: k,
                    available: out.len(),
                });
            }
            out
        }
        Strategy::LayerRandom(rule) | Strategy::LayerTaylor(rule) => {
            let layer = rule.resolve(census)?;
            if census[layer] < k + 1 {
                return Err(PruneError::TargetTooSmall {
                    layer,
                    filters: census[layer],
                    k,
                });
            }
            match strategy {
                Strategy::LayerTaylor(_) => {
                    lowest_in_layer(scores.expect("checked above").layer(layer), layer, k)
                }
                _ => {
                    let mut rng = seeding::rng(seed);
                    index::sample(&mut rng, census[layer], k)
                        .into_iter()
                        .map(|f| (layer, f))
                        .collect()
                }
            }
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Physically removes a selection, layer by layer.
pub fn apply_selection(net: &Network, selection: &[FilterRef]) -> Result<Network, PruneError> {
    let mut out = net.clone();
    let mut i = 0;
    while i < selection.len() {
        let layer = selection[i].0;
        let mut ids = Vec::new();
        while i < selection.len() && selection[i].0 == layer {
            ids.push(selection[i].1);
            i += 1;
        }
        out = remove_filters(&out, layer, &ids)?;
    }
    Ok(out)
}
