//! Exact oracle for the cached estimator on a one-dimensional homogeneous medium.
//!
//! Every path is a chain of real collisions with a fixed albedo. After each
//! collision the path either collides again (probability `scatter_prob`) or
//! leaves the medium. Each vertex gathers a fixed next-event contribution
//! `nee` (per unit throughput) and each exit gathers `exit_radiance`. With a
//! hard depth cap the path space is finite, so all expectations below are
//! computed by enumerating every branch of the collision process and of the
//! termination lotteries.

use super::{BetaConvention, PolicyConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyMedium {
    pub albedo: f64,
    /// Probability that the camera ray reaches a first collision.
    pub first_hit_prob: f64,
    pub scatter_prob: f64,
    pub nee: f64,
    pub exit_radiance: f64,
    pub max_depth: usize,
}

impl Default for ToyMedium {
    fn default() -> Self {
        Self { albedo: 0.8, first_hit_prob: 0.9, scatter_prob: 0.7, nee: 0.5, exit_radiance: 0.2, max_depth: 4 }
    }
}

/// One contribution to the pixel, tagged with where it was gathered.
#[derive(Clone, Copy, Debug)]
struct Contribution {
    value: f64,
    /// Survival product when it was gathered.
    beta: f64,
    /// Next-event estimate at this vertex, or exit after this vertex.
    vertex: usize,
    is_exit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum End {
    Early { depth: usize, beta_prev: f64 },
    Natural { depth: usize, beta: f64, zero_exit: bool },
    Cap,
}

#[derive(Clone, Debug)]
struct Leaf {
    prob: f64,
    contributions: Vec<Contribution>,
    /// `beta_before[n]` is the survival product before the lottery at vertex `n + 1`.
    beta_before: Vec<f64>,
    end: End,
}

/// Exact first and second moments of an estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub second: f64,
}

impl Moments {
    pub fn variance(&self) -> f64 {
        (self.second - self.mean * self.mean).max(0.0)
    }

    /// Expected single-sample relative squared error against `truth`.
    pub fn rmse_against(&self, truth: f64) -> f64 {
        (self.second - 2.0 * self.mean * truth + truth * truth) / (truth * truth + 1e-2)
    }
}

impl ToyMedium {
    /// Closed-form pixel value without any cache.
    pub fn exact_value(&self) -> f64 {
        let (a, s) = (self.albedo, self.scatter_prob);
        let mut reach = self.first_hit_prob;
        let mut v = (1.0 - self.first_hit_prob) * self.exit_radiance;
        let mut raw = 1.0;
        for n in 1..=self.max_depth {
            raw *= a;
            v += reach * raw * self.nee;
            if n < self.max_depth {
                v += reach * (1.0 - s) * raw * self.exit_radiance;
            }
            reach *= s;
        }
        v
    }

    fn leaves(&self, config: &PolicyConfig) -> Vec<Leaf> {
        let mut out = Vec::new();
        let camera_exit = Leaf {
            prob: 1.0 - self.first_hit_prob,
            contributions: vec![Contribution { value: self.exit_radiance, beta: 1.0, vertex: 0, is_exit: true }],
            beta_before: vec![],
            end: End::Natural { depth: 0, beta: 1.0, zero_exit: self.exit_radiance == 0.0 },
        };
        if camera_exit.prob > 0.0 {
            out.push(camera_exit);
        }
        let start = Leaf { prob: self.first_hit_prob, contributions: vec![], beta_before: vec![], end: End::Cap };
        self.expand(config, start, 1, 1.0, 1.0, 1.0, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn expand(&self, config: &PolicyConfig, mut leaf: Leaf, n: usize, raw_prev: f64, boosted_prev: f64, beta: f64, out: &mut Vec<Leaf>) {
        if leaf.prob == 0.0 {
            return;
        }
        let raw = raw_prev * self.albedo;
        let boosted = boosted_prev * self.albedo;
        leaf.contributions.push(Contribution { value: raw * self.nee, beta, vertex: n, is_exit: false });
        leaf.beta_before.push(beta);
        if n == self.max_depth {
            leaf.end = End::Cap;
            out.push(leaf);
            return;
        }
        // Lottery: branches with their probabilities.
        let tr = (config.c * boosted).clamp(0.0, 1.0);
        let (survive_prob, boosted, beta) = if tr >= config.activation_threshold {
            (1.0, boosted, beta)
        } else {
            let mut early = leaf.clone();
            early.prob *= 1.0 - tr;
            early.end = End::Early { depth: n, beta_prev: beta };
            if early.prob > 0.0 {
                out.push(early);
            }
            (tr, boosted / (tr + config.epsilon), beta * tr)
        };
        if survive_prob == 0.0 {
            return;
        }
        leaf.prob *= survive_prob;
        let mut exit = leaf.clone();
        exit.prob *= 1.0 - self.scatter_prob;
        exit.contributions.push(Contribution { value: raw * self.exit_radiance, beta, vertex: n, is_exit: true });
        exit.end = End::Natural { depth: n, beta, zero_exit: self.exit_radiance == 0.0 };
        if exit.prob > 0.0 {
            out.push(exit);
        }
        leaf.prob *= self.scatter_prob;
        self.expand(config, leaf, n + 1, raw, boosted, beta, out);
    }

    /// Fixed point of masked noise2noise training for every level:
    /// the mean training target among pixels whose record at that level is valid.
    pub fn trained_cache(&self, config: &PolicyConfig) -> Vec<f64> {
        let levels = config.max_cache_length;
        let mut mass = vec![0.0; levels];
        let mut sum = vec![0.0; levels];
        for leaf in self.leaves(config) {
            for d in 1..=levels {
                if leaf.beta_before.len() < d {
                    continue;
                }
                let beta_d = leaf.beta_before[d - 1];
                let record: f64 = leaf
                    .contributions
                    .iter()
                    .filter(|c| if c.is_exit { c.vertex >= d } else { c.vertex > d })
                    .map(|c| match config.beta_convention {
                        BetaConvention::StoreRaw => c.value * beta_d / c.beta,
                        BetaConvention::StoreBoosted => c.value / c.beta,
                    })
                    .sum();
                mass[d - 1] += leaf.prob;
                sum[d - 1] += leaf.prob * record;
            }
        }
        sum.iter().zip(&mass).map(|(s, m)| if *m > 0.0 { s / m } else { 0.0 }).collect()
    }

    /// Exact moments of the rendered pixel estimate given per-level cache values.
    pub fn estimator(&self, config: &PolicyConfig, cache: &[f64]) -> Moments {
        let read = |depth: usize, beta: f64| {
            let v = cache[config.level_for_depth(depth).min(cache.len() - 1)];
            if config.beta_division {
                v / beta
            } else {
                v
            }
        };
        let mut m = Moments { mean: 0.0, second: 0.0 };
        for leaf in self.leaves(config) {
            let mut x: f64 = leaf.contributions.iter().map(|c| c.value).sum();
            match leaf.end {
                End::Early { depth, beta_prev } => x += read(depth, beta_prev),
                End::Natural { depth, beta, zero_exit } if config.natural_substitution && zero_exit && depth >= 1 => {
                    x += read(depth, beta)
                }
                _ => {}
            }
            m.mean += leaf.prob * x;
            m.second += leaf.prob * x * x;
        }
        m
    }

    /// Train-then-render: moments of the estimator using the converged cache.
    pub fn converged_estimator(&self, config: &PolicyConfig) -> Moments {
        self.estimator(config, &self.trained_cache(config))
    }
}

/// Outcome of comparing both conventions and the cascade division on the toy medium.
#[derive(Clone, Debug, PartialEq)]
pub struct ConventionReport {
    pub truth: f64,
    /// `(convention, beta_division, c, mean, rmse)` rows.
    pub rows: Vec<(BetaConvention, bool, f64, f64, f64)>,
    pub chosen: BetaConvention,
}

/// Sum of per-C rMSE for each convention under the base division setting; the lower one wins.
pub fn select_convention(toy: &ToyMedium, base: &PolicyConfig, cs: &[f64]) -> ConventionReport {
    let truth = toy.exact_value();
    let mut rows = Vec::new();
    let mut score = [0.0; 2];
    for (ci, conv) in [BetaConvention::StoreBoosted, BetaConvention::StoreRaw].into_iter().enumerate() {
        for division in [true, false] {
            for &c in cs {
                let cfg = PolicyConfig { c, beta_convention: conv, beta_division: division, ..*base };
                let m = toy.converged_estimator(&cfg);
                let r = m.rmse_against(truth);
                if division == base.beta_division {
                    score[ci] += r;
                }
                rows.push((conv, division, c, m.mean, r));
            }
        }
    }
    let chosen = if score[0] < score[1] { BetaConvention::StoreBoosted } else { BetaConvention::StoreRaw };
    ConventionReport { truth, rows, chosen }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_probabilities_sum_to_one() {
        let toy = ToyMedium::default();
        for c in [0.0, 0.25, 0.5, 1.0, 5.0] {
            let cfg = PolicyConfig { c, ..PolicyConfig::default() };
            let total: f64 = toy.leaves(&cfg).iter().map(|l| l.prob).sum();
            assert!((total - 1.0).abs() < 1e-12, "{c}: {total}");
        }
    }

    #[test]
    fn no_policy_matches_closed_form() {
        let toy = ToyMedium::default();
        // Huge C keeps the heuristic inactive everywhere.
        let cfg = PolicyConfig { c: 1e9, ..PolicyConfig::default() };
        let m = toy.estimator(&cfg, &[0.0; 3]);
        assert!((m.mean - toy.exact_value()).abs() < 1e-12);
    }

    #[test]
    fn raw_records_without_division_are_exact() {
        let toy = ToyMedium::default();
        // C = 0 never survives a lottery, so no tail is ever observed for training.
        for c in [0.25, 0.5, 0.75] {
            let cfg = PolicyConfig { c, beta_convention: BetaConvention::StoreRaw, beta_division: false, ..PolicyConfig::default() };
            let m = toy.converged_estimator(&cfg);
            assert!((m.mean - toy.exact_value()).abs() < 1e-3, "C={c}: {} vs {}", m.mean, toy.exact_value());
        }
    }
}
