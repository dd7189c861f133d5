//! Input builders shared by the benchmarks.

use isomerge_core::{Matrix, TaskMatrixSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `tasks` task sets with one `rows × cols` layer and a bias vector each.
pub fn random_tasks(seed: u64, tasks: usize, rows: usize, cols: usize) -> Vec<TaskMatrixSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..tasks)
        .map(|t| {
            let mut set = TaskMatrixSet::new(format!("task_{t:02}"));
            set.matrices
                .insert("layer.weight".into(), random_matrix(&mut rng, rows, cols));
            set.vectors.insert(
                "layer.bias".into(),
                (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            set
        })
        .collect()
}
