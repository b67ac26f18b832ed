#pragma once

#include "vista/scene.hpp"
#include "vista/train.hpp"

#include <string>
#include <vector>

namespace vista {

// Point cloud text format: one `x,y,z,intensity` line per point, `#` comments
// and blank lines ignored. Box sidecar: one `w,h,x,y,class_id` line per box.

PointCloud load_point_cloud(const std::string& path);
void save_point_cloud(const std::string& path, const PointCloud& cloud);

std::vector<BoxFootprint> load_boxes(const std::string& path);
void save_boxes(const std::string& path, const std::vector<BoxFootprint>& boxes);

/// Scene pair `<stem>.cloud.csv` + `<stem>.boxes.csv`.
SceneSample load_scene(const std::string& stem);
void save_scene(const std::string& stem, const SceneSample& scene);

/// All scene stems (paths without the `.cloud.csv` suffix) in a directory,
/// sorted by name.
std::vector<std::string> list_scene_stems(const std::string& dir);

/// Binary 8-bit PGM (P5), min-max normalized per map; a constant map renders
/// as all-zero pixels.
void write_pgm(const std::string& path, const std::vector<double>& values, Index height,
               Index width);

/// `row,col,weight` lines, no header: exactly n*m rows for an [n x m] map.
void write_attention_csv(const std::string& path, const Tensor& attention);

void write_loss_trace_csv(const std::string& path, const std::vector<LossReport>& trace);

void write_concentration_csv(const std::string& path, const ConcentrationReport& sem,
                             const ConcentrationReport& geo);

/// Plain-text tensor dump with shape header; values at full precision.
void write_tensor(const std::string& path, const std::string& name, const Tensor& t);

void save_model_weights(const std::string& path, Model& model);
void load_model_weights(const std::string& path, Model& model);

}  // namespace vista
