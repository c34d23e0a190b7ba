//! Parameter sweep over recommender and shadow-model settings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{train_als, AlsConfig};
use crate::data::{MetadataMatrix, RatingsMatrix};
use crate::error::{Error, Result};
use crate::regress::TreeParams;
use crate::shadow::{agreement_report, train_shadow, AgreementScope, ShadowConfig, ShadowKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Linear,
    Tree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub ranks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub kinds: Vec<KindName>,
    /// Tree-only.
    pub depths: Vec<usize>,
    /// Tree-only.
    pub bins: Vec<usize>,
    /// Linear-only.
    pub ridge: f64,
    pub min_leaf: usize,
}

impl Default for SweepGrid {
    /// Contains (rank 50, tree, λ 0.1, depth 5, bins 32),
    /// (rank 20, tree, λ 0.1, depth 3, bins 8) and
    /// (rank 12, tree, λ 0.1, depth 5, bins 8).
    fn default() -> Self {
        SweepGrid {
            ranks: vec![12, 20, 50],
            lambdas: vec![0.1],
            kinds: vec![KindName::Linear, KindName::Tree],
            depths: vec![3, 5],
            bins: vec![8, 32],
            ridge: 0.1,
            min_leaf: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rank: usize,
    pub lambda: f64,
    pub kind: ShadowKind,
}

impl SweepCell {
    pub fn label(&self) -> String {
        format!("rank={} lambda={} {}", self.rank, self.lambda, self.kind.label())
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.ranks.is_empty() || self.lambdas.is_empty() || self.kinds.is_empty() {
            return Err(Error::Config("sweep grid needs at least one rank, lambda and kind".into()));
        }
        if self.kinds.contains(&KindName::Tree) && (self.depths.is_empty() || self.bins.is_empty()) {
            return Err(Error::Config("tree cells need at least one depth and one bin count".into()));
        }
        Ok(())
    }

    /// Cells in rank, lambda, kind (linear first), depth, bins order.
    /// Tree-only axes do not multiply linear cells.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut kinds = self.kinds.clone();
        kinds.sort();
        kinds.dedup();
        let mut out = Vec::new();
        for &rank in &self.ranks {
            for &lambda in &self.lambdas {
                for &k in &kinds {
                    match k {
                        KindName::Linear => out.push(SweepCell {
                            rank,
                            lambda,
                            kind: ShadowKind::Linear { ridge: self.ridge },
                        }),
                        KindName::Tree => {
                            for &max_depth in &self.depths {
                                for &bins in &self.bins {
                                    out.push(SweepCell {
                                        rank,
                                        lambda,
                                        kind: ShadowKind::Tree(TreeParams {
                                            max_depth,
                                            bins,
                                            min_leaf: self.min_leaf,
                                        }),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub measured_on: Option<String>,
    pub mean_latent_mae: Option<f64>,
    pub observational_mae: Option<f64>,
    pub observational_mse: Option<f64>,
    pub faithfulness: Option<f64>,
    /// Set when the cell failed; the sweep carries on.
    pub error: Option<String>,
}

/// Settings shared by every cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub max_iterations: usize,
    pub train_fraction: f64,
    pub scope: AgreementScope,
    pub seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            max_iterations: 20,
            train_fraction: 0.8,
            scope: AgreementScope::Eval,
            seed: 0,
        }
    }
}

/// Trains one factor model per (rank, lambda) and one shadow per cell.
/// Rows come back in [`SweepGrid::cells`] order.
pub fn run_sweep(
    ratings: &RatingsMatrix,
    meta: &MetadataMatrix,
    eligible: Option<&[bool]>,
    grid: &SweepGrid,
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    let cells = grid.cells();
    let mut bases: Vec<(usize, f64)> = Vec::new();
    for c in &cells {
        if !bases.iter().any(|&(r, l)| r == c.rank && l.to_bits() == c.lambda.to_bits()) {
            bases.push((c.rank, c.lambda));
        }
    }
    let models: Vec<std::result::Result<_, String>> = bases
        .par_iter()
        .map(|&(rank, lambda)| {
            let cfg = AlsConfig {
                rank,
                lambda,
                max_iterations: settings.max_iterations,
                seed: settings.seed,
                ..AlsConfig::default()
            };
            train_als(ratings, &cfg).map_err(|e| e.to_string())
        })
        .collect();

    Ok(cells
        .par_iter()
        .map(|cell| {
            let b = bases
                .iter()
                .position(|&(r, l)| r == cell.rank && l.to_bits() == cell.lambda.to_bits())
                .expect("every cell has a base model");
            let mut row = SweepRow {
                cell: *cell,
                measured_on: None,
                mean_latent_mae: None,
                observational_mae: None,
                observational_mse: None,
                faithfulness: None,
                error: None,
            };
            let outcome = models[b].as_ref().map_err(|e| e.clone()).and_then(|model| {
                let shadow_cfg = ShadowConfig {
                    kind: cell.kind,
                    train_fraction: settings.train_fraction,
                    seed: settings.seed,
                };
                let shadow = train_shadow(model, meta, eligible, &shadow_cfg).map_err(|e| e.to_string())?;
                agreement_report(&shadow, model, meta, settings.scope, settings.seed).map_err(|e| e.to_string())
            });
            match outcome {
                Ok(r) => {
                    row.measured_on = Some(r.measured_on);
                    row.mean_latent_mae = Some(r.mean_latent_mae);
                    row.observational_mae = Some(r.observational_mae);
                    row.observational_mse = Some(r.observational_mse);
                    row.faithfulness = Some(r.faithfulness);
                }
                Err(e) => row.error = Some(e),
            }
            row
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Rating, RatingScale};
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn default_grid_contains_named_cells() {
        let cells = SweepGrid::default().cells();
        let has = |rank, depth, bins| {
            cells.iter().any(|c| {
                c.rank == rank
                    && c.lambda == 0.1
                    && c.kind == ShadowKind::Tree(TreeParams { max_depth: depth, bins, min_leaf: 1 })
            })
        };
        assert!(has(50, 5, 32));
        assert!(has(20, 3, 8));
        assert!(has(12, 5, 8));
        // 3 ranks × (1 linear + 4 tree)
        assert_eq!(cells.len(), 15);
    }

    #[test]
    fn linear_cells_ignore_tree_axes() {
        let g = SweepGrid {
            ranks: vec![2],
            lambdas: vec![0.1, 1.0],
            kinds: vec![KindName::Linear],
            depths: vec![1, 2, 3],
            bins: vec![4, 8],
            ..SweepGrid::default()
        };
        assert_eq!(g.cells().len(), 2);
        assert!(SweepGrid { ranks: vec![], ..g.clone() }.validate().is_err());
        assert!(SweepGrid { kinds: vec![KindName::Tree], depths: vec![], ..g }.validate().is_err());
    }

    /// Item factors linear in 4 binary features; ratings dense.
    fn linear_world(seed: u64) -> (RatingsMatrix, MetadataMatrix) {
        let mut g = rng::seeded(seed);
        let (n_users, n_items, d) = (30, 80, 4);
        let x: Vec<Vec<usize>> = (0..n_items).map(|_| (0..d).filter(|_| g.gen_bool(0.5)).collect()).collect();
        let w = [0.8, -0.6, 0.5, 0.3];
        let users: Vec<f64> = (0..n_users).map(|_| g.gen_range(0.5..1.5)).collect();
        let mut entries = Vec::new();
        for (u, &s) in users.iter().enumerate() {
            for (i, feats) in x.iter().enumerate() {
                let lin: f64 = 2.5 + feats.iter().map(|&f| w[f]).sum::<f64>();
                entries.push(Rating { user: u, item: i, value: (s * lin).clamp(1.0, 5.0) });
            }
        }
        let cols = (0..d).map(|f| (0..n_items).filter(|&i| x[i].contains(&f)).collect()).collect();
        let meta = MetadataMatrix::from_columns(n_items, (0..d).map(|f| format!("x{f}")).collect(), cols).unwrap();
        (RatingsMatrix::new(n_users, n_items, RatingScale::default(), entries).unwrap(), meta)
    }

    #[test]
    fn one_cell_grid_gives_one_row() {
        let (r, m) = linear_world(1);
        let g = SweepGrid {
            ranks: vec![1],
            lambdas: vec![0.1],
            kinds: vec![KindName::Tree],
            depths: vec![2],
            bins: vec![8],
            ..SweepGrid::default()
        };
        let rows = run_sweep(&r, &m, None, &g, &SweepSettings::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].mean_latent_mae.is_some() && rows[0].observational_mae.is_some());
        assert_eq!(rows[0].measured_on.as_deref(), Some("eval-set"));
    }

    #[test]
    fn linear_truth_favours_linear_cells() {
        let (r, m) = linear_world(2);
        let g = SweepGrid {
            ranks: vec![1],
            lambdas: vec![0.05],
            kinds: vec![KindName::Linear, KindName::Tree],
            depths: vec![1, 2],
            bins: vec![8],
            ridge: 1e-6,
            min_leaf: 1,
        };
        let rows = run_sweep(&r, &m, None, &g, &SweepSettings::default()).unwrap();
        let lin = rows.iter().find(|r| matches!(r.cell.kind, ShadowKind::Linear { .. })).unwrap();
        for t in rows.iter().filter(|r| matches!(r.cell.kind, ShadowKind::Tree(_))) {
            assert!(lin.mean_latent_mae.unwrap() < t.mean_latent_mae.unwrap(), "{lin:?} vs {t:?}");
        }
    }

    #[test]
    fn failing_cells_are_recorded() {
        let (r, m) = linear_world(3);
        let g = SweepGrid { ranks: vec![1], lambdas: vec![0.0, 0.1], kinds: vec![KindName::Linear], ..SweepGrid::default() };
        let settings = SweepSettings { train_fraction: 0.01, ..SweepSettings::default() };
        let rows = run_sweep(&r, &m, None, &g, &settings).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.error.is_some()));
    }
}
