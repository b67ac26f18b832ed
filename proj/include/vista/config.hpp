#pragma once

#include "vista/train.hpp"

#include <iosfwd>
#include <string>

namespace vista {

/// Flat key=value run configuration. Parsing is strict: every key must be
/// known and every value must parse, otherwise the offending key is reported.
/// dump() writes values at full precision so a dumped file re-parses to an
/// identical configuration.
struct RunConfig {
  VoxelConfig voxel;
  Index enc_channels = 16;
  Index neck_channels = 32;  // d_f == d_v
  Index d_q = 32;
  Index d_v = 32;
  Index heads = 1;
  Index pool_bev_h = 4, pool_bev_w = 4;
  Index pool_rv_h = 4, pool_rv_w = 4;
  Index num_classes = 2;
  std::string mode = "conv";
  bool decouple = true;
  std::string var_target = "both";
  double lambda_cls = 1.0, lambda_reg = 0.25, lambda_var = 1.0;
  double focal_alpha = 0.25, focal_gamma = 2.0;
  double background_weight = 1.0;
  Index steps = 300;
  Index batch_size = 1;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  Index num_scenes = 200;
  Index objects_min = 2, objects_max = 4;
  bool augment = false;
  std::string scenes_dir;
  std::string out_dir;

  static RunConfig load(const std::string& path);
  static RunConfig parse(std::istream& in, const std::string& source_name);

  void dump(std::ostream& out) const;
  void save(const std::string& path) const;

  void validate() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace vista
