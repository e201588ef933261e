use super::forward::{forward_with_stats, NoiseConfig};
use super::spec::ModelSpec;
use super::weights::WeightSet;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::random::{NoiseKind, RandomSource};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stdev of weight-norm direction tensors at initialization.
const DIRECTION_STDEV: f64 = 0.05;

/// Random initialization: gaussian directions, unit scales, zero biases.
///
/// With a calibration batch, each weight-normalized layer's scale is then
/// set (in layer order) so its pre-activations have unit stdev per channel
/// on that batch, and running means start at the calibration batch means.
pub fn init_weights<T: Scalar>(
    spec: &ModelSpec,
    src: &RandomSource,
    calibration: Option<&Tensor<T>>,
) -> Result<WeightSet<T>> {
    let mut weights = WeightSet::from_spec(spec, |name, shape| {
        let mut rng = src.fork(name, 0);
        if name.ends_with(".v") {
            rng.draw_noise(NoiseKind::Gaussian { sigma: DIRECTION_STDEV }, shape)
                .expect("valid sigma")
        } else if name.ends_with(".w") {
            let fan_in: usize = shape[..shape.len() - 1].iter().product();
            let sigma = (1.0 / fan_in as f64).sqrt();
            rng.draw_noise(NoiseKind::Gaussian { sigma }, shape)
                .expect("valid sigma")
        } else if name.ends_with(".g") {
            Tensor::full(shape, T::one())
        } else {
            Tensor::zeros(shape)
        }
    })?;
    if let Some(batch) = calibration {
        calibrate(spec, &mut weights, batch)?;
    }
    Ok(weights)
}

/// Data-dependent initialization on one calibration batch.
pub fn calibrate<T: Scalar>(spec: &ModelSpec, weights: &mut WeightSet<T>, batch: &Tensor<T>) -> Result<()> {
    let prefixes: Vec<String> = weights
        .params()
        .iter()
        .filter_map(|p| p.name.strip_suffix(".g").map(str::to_string))
        .collect();
    let rng = RandomSource::new(0);
    let noise = NoiseConfig::noiseless();
    for prefix in &prefixes {
        let mut tape = Tape::new();
        let bound = weights.bind(&mut tape, false);
        let x = tape.constant(batch.clone());
        let out = forward_with_stats(spec, &bound, x, &noise, &rng, &mut tape)?;
        let stats = out
            .stats
            .iter()
            .find(|s| &s.name == prefix)
            .ok_or_else(|| Error::Config(format!("no statistics for layer {prefix}")))?;
        let g = weights
            .get_mut(&format!("{prefix}.g"))
            .expect("scale parameter exists");
        let floor = T::from_f64_lossy(1e-8);
        for (gi, &s) in g.data_mut().iter_mut().zip(&stats.std) {
            *gi /= s.max(floor);
        }
    }
    let mut tape = Tape::new();
    let bound = weights.bind(&mut tape, false);
    let x = tape.constant(batch.clone());
    let out = forward_with_stats(spec, &bound, x, &noise, &rng, &mut tape)?;
    for (name, mean) in out.batch_means {
        *weights.get_mut(&name).expect("running mean exists") = mean;
    }
    Ok(())
}
