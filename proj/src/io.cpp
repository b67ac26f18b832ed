#include "vista/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace vista {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<double> split_csv_doubles(const std::string& line, const std::string& path,
                                      int line_no) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(trim(field), &pos));
    } catch (...) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": invalid number '" +
                               field + "'");
    }
  }
  return out;
}

std::string fmt(double d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("io: cannot open '" + path + "'");
  return in;
}

}  // namespace

PointCloud load_point_cloud(const std::string& path) {
  auto in = open_in(path);
  PointCloud cloud;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto f = split_csv_doubles(t, path, line_no);
    if (f.size() != 4) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected x,y,z,intensity");
    }
    for (double v : f) {
      if (!std::isfinite(v)) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": non-finite value");
      }
    }
    cloud.points.push_back({f[0], f[1], f[2], f[3]});
  }
  return cloud;
}

void save_point_cloud(const std::string& path, const PointCloud& cloud) {
  auto out = open_out(path);
  out << "# x,y,z,intensity\n";
  for (const auto& p : cloud.points) {
    out << fmt(p.x) << ',' << fmt(p.y) << ',' << fmt(p.z) << ',' << fmt(p.intensity) << '\n';
  }
}

std::vector<BoxFootprint> load_boxes(const std::string& path) {
  auto in = open_in(path);
  std::vector<BoxFootprint> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto f = split_csv_doubles(t, path, line_no);
    if (f.size() != 5) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected w,h,x,y,class_id");
    }
    BoxFootprint b{f[0], f[1], f[2], f[3], static_cast<int>(f[4])};
    b.validate();
    boxes.push_back(b);
  }
  return boxes;
}

void save_boxes(const std::string& path, const std::vector<BoxFootprint>& boxes) {
  auto out = open_out(path);
  out << "# w,h,x,y,class_id\n";
  for (const auto& b : boxes) {
    out << fmt(b.w) << ',' << fmt(b.h) << ',' << fmt(b.x) << ',' << fmt(b.y) << ',' << b.class_id
        << '\n';
  }
}

SceneSample load_scene(const std::string& stem) {
  SceneSample s;
  s.cloud = load_point_cloud(stem + ".cloud.csv");
  s.boxes = load_boxes(stem + ".boxes.csv");
  return s;
}

void save_scene(const std::string& stem, const SceneSample& scene) {
  save_point_cloud(stem + ".cloud.csv", scene.cloud);
  save_boxes(stem + ".boxes.csv", scene.boxes);
}

std::vector<std::string> list_scene_stems(const std::string& dir) {
  const std::string suffix = ".cloud.csv";
  std::vector<std::string> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string p = entry.path().string();
    if (p.size() > suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0) {
      stems.push_back(p.substr(0, p.size() - suffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

void write_pgm(const std::string& path, const std::vector<double>& values, Index height,
               Index width) {
  if (static_cast<Index>(values.size()) != height * width) {
    throw std::invalid_argument("pgm: value count does not match dimensions");
  }
  double lo = values.empty() ? 0.0 : values[0], hi = lo;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  auto out = open_out(path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  const double span = hi - lo;
  for (double v : values) {
    const int g = span > 0 ? static_cast<int>(std::lround((v - lo) / span * 255.0)) : 0;
    out.put(static_cast<char>(std::clamp(g, 0, 255)));
  }
}

void write_attention_csv(const std::string& path, const Tensor& attention) {
  if (attention.rank() != 2) throw std::invalid_argument("attention csv: rank-2 tensor required");
  auto out = open_out(path);
  const Index n = attention.dim(0), m = attention.dim(1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      out << i << ',' << j << ',' << fmt(attention[i * m + j]) << '\n';
    }
  }
}

void write_loss_trace_csv(const std::string& path, const std::vector<LossReport>& trace) {
  auto out = open_out(path);
  out << "step,cls,reg,var,target,total\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace[i];
    out << i << ',' << fmt(r.cls) << ',' << fmt(r.reg) << ',' << fmt(r.var) << ','
        << fmt(r.target) << ',' << fmt(r.total) << '\n';
  }
}

void write_concentration_csv(const std::string& path, const ConcentrationReport& sem,
                             const ConcentrationReport& geo) {
  auto out = open_out(path);
  out << "branch,in_box_mass,mean_row_max,rows\n";
  out << "sem," << fmt(sem.in_box_mass) << ',' << fmt(sem.mean_row_max) << ',' << sem.rows << '\n';
  out << "geo," << fmt(geo.in_box_mass) << ',' << fmt(geo.mean_row_max) << ',' << geo.rows << '\n';
}

void write_tensor(const std::string& path, const std::string& name, const Tensor& t) {
  auto out = open_out(path);
  out << "tensor " << name << ' ' << t.rank();
  for (Index d : t.shape()) out << ' ' << d;
  out << '\n';
  for (Index i = 0; i < t.size(); ++i) {
    out << fmt(t[i]);
    out.put(i + 1 == t.size() ? '\n' : ' ');
  }
}

namespace {

void write_named_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  out << "tensor " << name << ' ' << t.rank();
  for (Index d : t.shape()) out << ' ' << d;
  out << '\n';
  for (Index i = 0; i < t.size(); ++i) {
    out << fmt(t[i]);
    out.put(i + 1 == t.size() ? '\n' : ' ');
  }
}

}  // namespace

void save_model_weights(const std::string& path, Model& model) {
  auto out = open_out(path);
  auto params = model.parameters();
  out << "weights 1 " << params.size() << '\n';
  for (auto& [name, t] : params) write_named_tensor(out, name, t);
}

void load_model_weights(const std::string& path, Model& model) {
  auto in = open_in(path);
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  in >> magic >> version >> count;
  if (magic != "weights" || version != 1) {
    throw std::runtime_error(path + ": not a weights file");
  }
  auto params = model.parameters();
  if (count != params.size()) {
    throw std::runtime_error(path + ": expected " + std::to_string(params.size()) +
                             " tensors, file has " + std::to_string(count));
  }
  for (auto& [name, t] : params) {
    std::string tag, got_name;
    Index rank = 0;
    in >> tag >> got_name >> rank;
    if (!in || tag != "tensor" || got_name != name || rank != t.rank()) {
      throw std::runtime_error(path + ": malformed entry for '" + name + "'");
    }
    for (Index d = 0; d < rank; ++d) {
      Index extent = 0;
      in >> extent;
      if (extent != t.dim(static_cast<std::size_t>(d))) {
        throw std::runtime_error(path + ": shape mismatch for '" + name + "'");
      }
    }
    for (Index i = 0; i < t.size(); ++i) {
      double v = 0;
      in >> v;
      if (!in) throw std::runtime_error(path + ": truncated values for '" + name + "'");
      if (!std::isfinite(v)) throw std::runtime_error(path + ": non-finite value in '" + name + "'");
      t.data()[i] = v;
    }
  }
}

}  // namespace vista
