//! Adaptive-moment (Adam) updates, dense and row-sparse.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConstants {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BiasCorrection {
    first: f64,
    second: f64,
}

impl AdamConstants {
    fn correction(&self, step: i32) -> BiasCorrection {
        BiasCorrection {
            first: 1.0 - self.beta1.powi(step),
            second: 1.0 - self.beta2.powi(step),
        }
    }

    #[inline]
    fn update(
        &self,
        lr: f64,
        bc: BiasCorrection,
        param: &mut f64,
        m: &mut f64,
        v: &mut f64,
        g: f64,
    ) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / bc.first;
        let v_hat = *v / bc.second;
        *param -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
    }
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    constants: AdamConstants,
    learning_rate: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64, constants: AdamConstants) -> Self {
        Self {
            constants,
            learning_rate,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc = self.constants.correction(self.step);
        for i in 0..params.len() {
            self.constants.update(
                self.learning_rate,
                bc,
                &mut params[i],
                &mut self.m[i],
                &mut self.v[i],
                grad[i],
            );
        }
    }
}

/// Adam over the rows of a row-major table, keeping moment state only for
/// rows that have received a gradient.
///
/// Rows that never saw a gradient have zero moments, so their dense-Adam
/// update is exactly zero and skipping them gives bit-identical results.
/// Rows are visited in ascending index order.
#[derive(Clone, Debug)]
pub struct SparseRowAdam {
    constants: AdamConstants,
    learning_rate: f64,
    dim: usize,
    step: i32,
    state: BTreeMap<u32, (Vec<f64>, Vec<f64>)>,
}

impl SparseRowAdam {
    pub fn new(dim: usize, learning_rate: f64, constants: AdamConstants) -> Self {
        Self {
            constants,
            learning_rate,
            dim,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, table: &mut [f64], grad: &BTreeMap<u32, Vec<f64>>) {
        self.step += 1;
        let bc = self.constants.correction(self.step);
        for &row in grad.keys() {
            self.state
                .entry(row)
                .or_insert_with(|| (vec![0.0; self.dim], vec![0.0; self.dim]));
        }
        let dim = self.dim;
        for (&row, (m, v)) in self.state.iter_mut() {
            let params = &mut table[row as usize * dim..(row as usize + 1) * dim];
            let g = grad.get(&row);
            for k in 0..dim {
                let gk = g.map_or(0.0, |g| g[k]);
                self.constants.update(
                    self.learning_rate,
                    bc,
                    &mut params[k],
                    &mut m[k],
                    &mut v[k],
                    gk,
                );
            }
        }
    }

    /// Rows with moment state.
    pub fn touched_rows(&self) -> impl Iterator<Item = u32> + '_ {
        self.state.keys().copied()
    }

    /// True when every stored moment is exactly zero.
    pub fn moments_are_zero(&self) -> bool {
        self.state
            .values()
            .all(|(m, v)| m.iter().chain(v).all(|&x| x == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first update is lr * g/|g| (up to epsilon)
        let mut adam = Adam::new(2, 0.01, AdamConstants::default());
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn sparse_matches_dense() {
        let dim = 3;
        let rows = 4;
        let mut dense_table: Vec<f64> = (0..rows * dim).map(|i| i as f64 * 0.1).collect();
        let mut sparse_table = dense_table.clone();
        let mut dense = Adam::new(rows * dim, 0.05, AdamConstants::default());
        let mut sparse = SparseRowAdam::new(dim, 0.05, AdamConstants::default());
        let grads: Vec<BTreeMap<u32, Vec<f64>>> = vec![
            [(1, vec![0.5, -0.2, 0.1])].into_iter().collect(),
            [(3, vec![1.0, 1.0, -1.0]), (1, vec![0.0, 0.3, 0.0])]
                .into_iter()
                .collect(),
            BTreeMap::new(),
            [(0, vec![-0.7, 0.2, 0.9])].into_iter().collect(),
        ];
        for g in &grads {
            let mut flat = vec![0.0; rows * dim];
            for (&r, vals) in g {
                flat[r as usize * dim..(r as usize + 1) * dim].copy_from_slice(vals);
            }
            dense.step(&mut dense_table, &flat);
            sparse.step(&mut sparse_table, g);
        }
        assert_eq!(dense_table, sparse_table);
        assert_eq!(sparse.touched_rows().collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut sparse = SparseRowAdam::new(2, 0.1, AdamConstants::default());
        let mut table = vec![0.25, -0.5, 0.125, 1.0];
        let before = table.clone();
        sparse.step(&mut table, &[(1, vec![0.0, 0.0])].into_iter().collect());
        assert_eq!(table, before);
        assert!(sparse.moments_are_zero());
    }
}
