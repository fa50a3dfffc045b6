#pragma once

#include "diffkd/pipeline.hpp"

namespace diffkd::testing {

/// A run configuration small enough for end-to-end unit tests.
inline RunConfig small_run_config() {
  RunConfig rc;
  rc.scene.num_beams = 8;
  rc.scene.points_per_beam = 120;
  rc.scene.num_objects = 6;
  rc.grid.H = rc.grid.W = 16;
  rc.grid.C = 4;
  rc.grid.pillar_channels = 4;
  rc.grid.norm_groups = 2;
  rc.denoiser.width = 4;
  rc.denoiser.groups = 2;
  rc.denoiser.time_dim = 4;
  rc.fusion.importance_hidden = 3;
  rc.fusion.reduce_ratio = 2;
  rc.fusion.groups = 2;
  rc.schedule_T = 20;
  rc.beta_max = 0.25;
  rc.sample_steps = 4;
  rc.train_sample_steps = 2;
  rc.train_scenes = 4;
  rc.eval_scenes = 3;
  rc.epochs = 1;
  rc.threads = 1;
  rc.pose_sigmas = {{0.0, 0.0}, {0.4, 0.4}};
  rc.finalize();
  return rc;
}

}  // namespace diffkd::testing
