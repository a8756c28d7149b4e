//! Self-organization by similarities: pairwise style classifiers yield an
//! accuracy matrix; row-rescaled similarity blended with rescaled agent
//! performance scores each candidate, and every agent keeps its top-k.

mod classifier;

pub use classifier::{
    classifier_accuracy, classify_batch, train_pair_classifier, BoundClassifier,
    ClassifierConfig, StyleClassifier,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding;

/// Square matrix over target styles with an undefined diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleMatrix {
    pub names: Vec<String>,
    values: Vec<Option<f64>>,
}

impl StyleMatrix {
    pub fn new(names: Vec<String>) -> Self {
        let n = names.len();
        StyleMatrix {
            names,
            values: vec![None; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n();
        self.values[i * n + j] = Some(v);
    }

    /// Defined entries of row `i`, excluding the diagonal.
    pub fn row_defined(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.n())
            .filter(|&j| j != i)
            .filter_map(|j| self.get(i, j).map(|v| (j, v)))
            .collect()
    }

    /// CSV with style names as row and column headers; undefined entries stay
    /// empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("style");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..self.n() {
            out.push_str(&self.names[i]);
            for j in 0..self.n() {
                out.push(',');
                if let Some(v) = self.get(i, j) {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy matrix: one classifier per unordered pair, mirrored.
pub type AccMatrix = StyleMatrix;

/// All SOS scoring artifacts for one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub acc: StyleMatrix,
    pub acc_rescaled: StyleMatrix,
    pub simi: StyleMatrix,
    pub perf: Vec<f64>,
    pub sc: StyleMatrix,
    pub alpha: f64,
}

impl ScoreMatrix {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Assemble the full score bundle from a measured accuracy matrix and raw
/// per-agent dev BLEU values.
pub fn score_matrix(acc: StyleMatrix, dev_bleu: &[f64], alpha: f64) -> Result<ScoreMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0,1], got {alpha}")));
    }
    if dev_bleu.len() != acc.n() {
        return Err(Error::ShapeMismatch {
            op: "score_matrix",
            detail: format!("{} BLEU values for {} styles", dev_bleu.len(), acc.n()),
        });
    }
    let acc_rescaled = rescale_rows(&acc)?;
    let mut simi = StyleMatrix::new(acc.names.clone());
    for i in 0..acc.n() {
        for (j, v) in acc_rescaled.row_defined(i) {
            simi.set(i, j, 1.0 - v);
        }
    }
    let perf = perf_scores(dev_bleu);
    let sc = combine_scores(&simi, &perf, alpha)?;
    Ok(ScoreMatrix {
        acc,
        acc_rescaled,
        simi,
        perf,
        sc,
        alpha,
    })
}

/// Min-max rescale each row over its defined entries; a constant row maps to
/// all 0.5.
pub fn rescale_rows(acc: &StyleMatrix) -> Result<StyleMatrix> {
    let mut out = StyleMatrix::new(acc.names.clone());
    for i in 0..acc.n() {
        let row = acc.row_defined(i);
        if row.len() < 2 {
            return Err(Error::RowTooSmall {
                row: i,
                defined: row.len(),
            });
        }
        let min = row.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
        let max = row.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
        for (j, v) in row {
            let rescaled = if max > min { (v - min) / (max - min) } else { 0.5 };
            out.set(i, j, rescaled);
        }
    }
    Ok(out)
}

/// Global min-max rescale of per-agent dev BLEU to [0,1]; a constant vector
/// maps to all 0.5.
pub fn perf_scores(dev_bleu: &[f64]) -> Vec<f64> {
    let min = dev_bleu.iter().copied().fold(f64::INFINITY, f64::min);
    let max = dev_bleu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    dev_bleu
        .iter()
        .map(|&b| if max > min { (b - min) / (max - min) } else { 0.5 })
        .collect()
}

/// `SC[i][j] = alpha * SIMI[i][j] + (1 - alpha) * PERF[j]`, diagonal undefined.
pub fn combine_scores(simi: &StyleMatrix, perf: &[f64], alpha: f64) -> Result<StyleMatrix> {
    if perf.len() != simi.n() {
        return Err(Error::ShapeMismatch {
            op: "combine_scores",
            detail: format!("{} PERF values for {} styles", perf.len(), simi.n()),
        });
    }
    let mut sc = StyleMatrix::new(simi.names.clone());
    for i in 0..simi.n() {
        for (j, s) in simi.row_defined(i) {
            sc.set(i, j, alpha * s + (1.0 - alpha) * perf[j]);
        }
    }
    Ok(sc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMode {
    TopK,
    Random,
}

/// Selected neighbor indexes per agent, in selection order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub names: Vec<String>,
    pub k: usize,
    pub mode: NeighborMode,
    pub neighbors: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent,neighbors\n");
        for (i, ns) in self.neighbors.iter().enumerate() {
            let list: Vec<&str> = ns.iter().map(|&j| self.names[j].as_str()).collect();
            out.push_str(&format!("{},{}\n", self.names[i], list.join(" ")));
        }
        out
    }
}

/// Pick each agent's k neighbors: the k best scores (ties to the lower style
/// index), or k uniform distinct non-self indexes in random mode. Selection
/// may be unidirectional: j in N(i) does not imply i in N(j).
pub fn select_neighbors(
    sc: &StyleMatrix,
    k: usize,
    mode: NeighborMode,
    seed: u64,
) -> Result<NeighborGraph> {
    let n = sc.n();
    if k > n.saturating_sub(1) {
        return Err(Error::KTooLarge { k, max: n - 1 });
    }
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let chosen = match mode {
            NeighborMode::TopK => {
                let mut row = sc.row_defined(i);
                if row.len() < n - 1 {
                    return Err(Error::RowTooSmall {
                        row: i,
                        defined: row.len(),
                    });
                }
                row.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.0.cmp(&b.0))
                });
                row.truncate(k);
                row.into_iter().map(|(j, _)| j).collect::<Vec<_>>()
            }
            NeighborMode::Random => {
                use rand::seq::SliceRandom;
                let mut candidates: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                candidates.shuffle(&mut seeding::stream(seed, &format!("neighbors/{i}")));
                candidates.truncate(k);
                candidates
            }
        };
        neighbors.push(chosen);
    }
    Ok(NeighborGraph {
        names: sc.names.clone(),
        k,
        mode,
        neighbors,
    })
}

/// Train one classifier per unordered target-style pair and mirror the dev
/// accuracy into the matrix. `train[i]` / `dev[i]` hold style i's sentences.
pub fn build_acc_matrix<F: Scalar>(
    names: &[String],
    train: &[Vec<Vec<String>>],
    dev: &[Vec<Vec<String>>],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(AccMatrix, Vec<StyleClassifier<F>>)> {
    let n = names.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 target styles, got {n}"
        )));
    }
    let mut acc = StyleMatrix::new(names.to_vec());
    let mut classifiers = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let pair_seed = seeding::derive_seed(seed, &format!("classifier/{}/{}", names[i], names[j]));
            let classifier = train_pair_classifier::<F>(
                &names[i],
                &names[j],
                &train[i],
                &train[j],
                cfg,
                pair_seed,
            )?;
            let accuracy = classifier_accuracy(&classifier, &dev[i], &dev[j])?;
            acc.set(i, j, accuracy);
            acc.set(j, i, accuracy);
            classifiers.push(classifier);
        }
    }
    Ok((acc, classifiers))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(names: &[&str], rows: &[&[Option<f64>]]) -> StyleMatrix {
        let mut m = StyleMatrix::new(names.iter().map(|s| s.to_string()).collect());
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    m.set(i, j, *v);
                }
            }
        }
        m
    }

    #[test]
    fn rescale_row_examples() {
        let m = matrix(
            &["a", "b", "c", "d"],
            &[
                &[None, Some(0.9), Some(0.6), Some(0.75)],
                &[Some(0.9), None, Some(0.6), Some(0.75)],
                &[Some(0.6), Some(0.9), None, Some(0.75)],
                &[Some(0.75), Some(0.9), Some(0.6), None],
            ],
        );
        let r = rescale_rows(&m).unwrap();
        assert_eq!(r.get(0, 1), Some(1.0));
        assert_eq!(r.get(0, 2), Some(0.0));
        assert_eq!(r.get(0, 3), Some(0.5));
    }

    #[test]
    fn rescale_constant_row_maps_to_half() {
        let m = matrix(
            &["a", "b", "c"],
            &[
                &[None, Some(0.7), Some(0.7)],
                &[Some(0.7), None, Some(0.7)],
                &[Some(0.7), Some(0.7), None],
            ],
        );
        let r = rescale_rows(&m).unwrap();
        assert_eq!(r.get(0, 1), Some(0.5));
        assert_eq!(r.get(0, 2), Some(0.5));
    }

    #[test]
    fn rescale_is_shift_invariant() {
        let base = matrix(
            &["a", "b", "c"],
            &[
                &[None, Some(0.4), Some(0.8)],
                &[Some(0.4), None, Some(0.8)],
                &[Some(0.4), Some(0.8), None],
            ],
        );
        let mut shifted = base.clone();
        for j in 1..3 {
            shifted.set(0, j, base.get(0, j).unwrap() + 0.1);
        }
        let r1 = rescale_rows(&base).unwrap();
        let r2 = rescale_rows(&shifted).unwrap();
        assert_eq!(r1.get(0, 1), r2.get(0, 1));
        assert_eq!(r1.get(0, 2), r2.get(0, 2));
    }

    #[test]
    fn rescale_needs_two_entries() {
        let m = matrix(&["a", "b"], &[&[None, Some(0.6)], &[Some(0.6), None]]);
        assert!(matches!(
            rescale_rows(&m),
            Err(Error::RowTooSmall { .. })
        ));
    }

    #[test]
    fn perf_examples() {
        assert_eq!(perf_scores(&[10.0, 30.0, 20.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(perf_scores(&[5.0, 5.0]), vec![0.5, 0.5]);
        // monotone
        let p = perf_scores(&[3.0, 9.0, 7.0, 1.0]);
        assert!(p[3] < p[0] && p[0] < p[2] && p[2] < p[1]);
    }

    #[test]
    fn combine_examples() {
        let simi = matrix(
            &["a", "b"],
            &[&[None, Some(0.8)], &[Some(0.8), None]],
        );
        let sc = combine_scores(&simi, &[0.3, 0.4], 0.5).unwrap();
        assert_eq!(sc.get(0, 1), Some(0.5 * 0.8 + 0.5 * 0.4));
        let sc_alpha1 = combine_scores(&simi, &[0.3, 0.4], 1.0).unwrap();
        assert_eq!(sc_alpha1.get(0, 1), Some(0.8));
        let sc_alpha0 = combine_scores(&simi, &[0.3, 0.4], 0.0).unwrap();
        assert_eq!(sc_alpha0.get(0, 1), Some(0.4));
    }

    #[test]
    fn topk_selection_examples() {
        let sc = matrix(
            &["a", "b", "c", "d"],
            &[
                &[None, Some(0.9), Some(0.1), Some(0.5)],
                &[Some(0.9), None, Some(0.1), Some(0.5)],
                &[Some(0.9), Some(0.1), None, Some(0.5)],
                &[Some(0.9), Some(0.1), Some(0.5), None],
            ],
        );
        let g = select_neighbors(&sc, 2, NeighborMode::TopK, 0).unwrap();
        assert_eq!(g.neighbors[0], vec![1, 3]);
        // k = n-1 gives everyone else
        let g_all = select_neighbors(&sc, 3, NeighborMode::TopK, 0).unwrap();
        let mut all = g_all.neighbors[0].clone();
        all.sort_unstable();
        assert_eq!(all, vec![1, 2, 3]);
        assert!(matches!(
            select_neighbors(&sc, 4, NeighborMode::TopK, 0),
            Err(Error::KTooLarge { .. })
        ));
    }

    #[test]
    fn topk_ties_break_to_lower_index() {
        let sc = matrix(
            &["a", "b", "c", "d"],
            &[
                &[None, Some(0.5), Some(0.5), Some(0.5)],
                &[Some(0.5), None, Some(0.5), Some(0.5)],
                &[Some(0.5), Some(0.5), None, Some(0.5)],
                &[Some(0.5), Some(0.5), Some(0.5), None],
            ],
        );
        let g = select_neighbors(&sc, 2, NeighborMode::TopK, 0).unwrap();
        assert_eq!(g.neighbors[0], vec![1, 2]);
        assert_eq!(g.neighbors[3], vec![0, 1]);
    }

    #[test]
    fn random_mode_is_seed_deterministic_and_valid() {
        let sc = matrix(
            &["a", "b", "c", "d"],
            &[
                &[None, Some(0.1), Some(0.1), Some(0.1)],
                &[Some(0.1), None, Some(0.1), Some(0.1)],
                &[Some(0.1), Some(0.1), None, Some(0.1)],
                &[Some(0.1), Some(0.1), Some(0.1), None],
            ],
        );
        let g1 = select_neighbors(&sc, 2, NeighborMode::Random, 5).unwrap();
        let g2 = select_neighbors(&sc, 2, NeighborMode::Random, 5).unwrap();
        assert_eq!(g1, g2);
        let g3 = select_neighbors(&sc, 3, NeighborMode::Random, 6).unwrap();
        for (i, ns) in g3.neighbors.iter().enumerate() {
            assert_eq!(ns.len(), 3);
            assert!(!ns.contains(&i));
            let mut sorted = ns.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 3);
        }
    }

    #[test]
    fn unidirectional_neighbors_exist() {
        // PERF strongly favors style b: a picks b, but b prefers c by
        // similarity, so the a<->b edge is one-way.
        let simi = matrix(
            &["a", "b", "c"],
            &[
                &[None, Some(0.2), Some(0.1)],
                &[Some(0.2), None, Some(0.9)],
                &[Some(0.1), Some(0.9), None],
            ],
        );
        let perf = [0.0, 1.0, 0.0];
        let sc = combine_scores(&simi, &perf, 0.5).unwrap();
        let g = select_neighbors(&sc, 1, NeighborMode::TopK, 0).unwrap();
        assert_eq!(g.neighbors[0], vec![1], "a points at b");
        assert_eq!(g.neighbors[1], vec![2], "b points elsewhere");
    }

    #[test]
    fn csv_has_headers_and_empty_diagonal() {
        let m = matrix(
            &["x", "y"],
            &[&[None, Some(0.25)], &[Some(0.25), None]],
        );
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "style,x,y");
        assert_eq!(lines[1], "x,,0.25");
        assert_eq!(lines[2], "y,0.25,");
    }
}
