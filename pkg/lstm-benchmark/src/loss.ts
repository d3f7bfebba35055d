/**
 * Differentiable batch training loss.
 *
 * The loss is the Euclidean distance of (variability ratio, bias ratio,
 * correlation) from the ideal point (1, 1, 1) over the mini-batch, i.e.
 * 1 - KGE computed with batch statistics. Small epsilons keep the
 * denominators and the square root differentiable; away from degenerate
 * batches the value matches 1 - kge(...) to float32 precision.
 */

import * as tf from "@tensorflow/tfjs";

export const LOSS_EPS = 1e-8;

/** 1 - KGE of `sim` against `obs`, differentiable, both 1-D and aligned. */
export function kgeLoss(sim: tf.Tensor1D, obs: tf.Tensor1D): tf.Scalar {
  return tf.tidy(() => {
    const muS = sim.mean();
    const muO = obs.mean();
    const dS = sim.sub(muS);
    const dO = obs.sub(muO);
    const sdS = dS.square().mean().add(LOSS_EPS).sqrt();
    const sdO = dO.square().mean().add(LOSS_EPS).sqrt();
    const cov = dS.mul(dO).mean();
    const alpha = sdS.div(sdO);
    const beta = muS.div(muO.abs().add(LOSS_EPS));
    const r = cov.div(sdS.mul(sdO));
    const one = tf.scalar(1);
    const dist2 = one
      .sub(alpha)
      .square()
      .add(one.sub(beta).square())
      .add(one.sub(r).square());
    return dist2.add(LOSS_EPS).sqrt().asScalar();
  });
}
