use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::data::ProjectionStack;
use crate::error::{Error, Result};

/// Independent Poisson draw per pixel with mean equal to the pixel value.
///
/// View `i` uses ChaCha stream `i` of `seed`, so the result does not depend
/// on how views are scheduled across threads.
pub fn add_poisson_noise(stack: &ProjectionStack, seed: u64) -> Result<ProjectionStack> {
    if let Some(bad) = stack.data.iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("Poisson mean must be finite and >= 0, got {bad}")));
    }
    let views: Vec<Vec<f32>> = stack
        .views()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, view)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            view.iter()
                .map(|&lambda| {
                    if lambda == 0.0 {
                        0.0
                    } else {
                        let d = Poisson::new(lambda as f64).expect("positive finite mean");
                        d.sample(&mut rng) as f32
                    }
                })
                .collect()
        })
        .collect();
    Ok(ProjectionStack::new(stack.n_views, stack.rows, stack.cols, views.concat())?
        .with_geometry(stack.geometry.clone()))
}
