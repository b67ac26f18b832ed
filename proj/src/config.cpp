#include "vista/config.hpp"

#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vista {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void bad_key(const std::string& source, const std::string& key, const std::string& why) {
  throw std::invalid_argument(source + ": " + why + " '" + key + "'");
}

double parse_double(const std::string& source, const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    bad_key(source, key, "invalid numeric value for key");
  }
}

Index parse_index(const std::string& source, const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<Index>(i);
  } catch (...) {
    bad_key(source, key, "invalid integer value for key");
  }
}

std::uint64_t parse_u64(const std::string& source, const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long i = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<std::uint64_t>(i);
  } catch (...) {
    bad_key(source, key, "invalid integer value for key");
  }
}

bool parse_bool(const std::string& source, const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_key(source, key, "invalid boolean value for key");
}

std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  return parse(in, path);
}

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
  RunConfig cfg;
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"x_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.x_min = parse_double("config", k, v); }},
      {"x_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.x_max = parse_double("config", k, v); }},
      {"y_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.y_min = parse_double("config", k, v); }},
      {"y_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.y_max = parse_double("config", k, v); }},
      {"z_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.z_min = parse_double("config", k, v); }},
      {"z_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.z_max = parse_double("config", k, v); }},
      {"res_x", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.res_x = parse_double("config", k, v); }},
      {"res_y", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.res_y = parse_double("config", k, v); }},
      {"res_z", [](RunConfig& c, const std::string& k, const std::string& v) { c.voxel.res_z = parse_double("config", k, v); }},
      {"enc_channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.enc_channels = parse_index("config", k, v); }},
      {"neck_channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.neck_channels = parse_index("config", k, v); }},
      {"d_q", [](RunConfig& c, const std::string& k, const std::string& v) { c.d_q = parse_index("config", k, v); }},
      {"d_v", [](RunConfig& c, const std::string& k, const std::string& v) { c.d_v = parse_index("config", k, v); }},
      {"heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.heads = parse_index("config", k, v); }},
      {"pool_bev_h", [](RunConfig& c, const std::string& k, const std::string& v) { c.pool_bev_h = parse_index("config", k, v); }},
      {"pool_bev_w", [](RunConfig& c, const std::string& k, const std::string& v) { c.pool_bev_w = parse_index("config", k, v); }},
      {"pool_rv_h", [](RunConfig& c, const std::string& k, const std::string& v) { c.pool_rv_h = parse_index("config", k, v); }},
      {"pool_rv_w", [](RunConfig& c, const std::string& k, const std::string& v) { c.pool_rv_w = parse_index("config", k, v); }},
      {"num_classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.num_classes = parse_index("config", k, v); }},
      {"mode", [](RunConfig& c, const std::string&, const std::string& v) { c.mode = v; }},
      {"decouple", [](RunConfig& c, const std::string& k, const std::string& v) { c.decouple = parse_bool("config", k, v); }},
      {"var_target", [](RunConfig& c, const std::string&, const std::string& v) { c.var_target = v; }},
      {"lambda_cls", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda_cls = parse_double("config", k, v); }},
      {"lambda_reg", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda_reg = parse_double("config", k, v); }},
      {"lambda_var", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda_var = parse_double("config", k, v); }},
      {"focal_alpha", [](RunConfig& c, const std::string& k, const std::string& v) { c.focal_alpha = parse_double("config", k, v); }},
      {"focal_gamma", [](RunConfig& c, const std::string& k, const std::string& v) { c.focal_gamma = parse_double("config", k, v); }},
      {"background_weight", [](RunConfig& c, const std::string& k, const std::string& v) { c.background_weight = parse_double("config", k, v); }},
      {"steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.steps = parse_index("config", k, v); }},
      {"batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_index("config", k, v); }},
      {"learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.learning_rate = parse_double("config", k, v); }},
      {"beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.beta1 = parse_double("config", k, v); }},
      {"beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.beta2 = parse_double("config", k, v); }},
      {"weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_double("config", k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64("config", k, v); }},
      {"num_scenes", [](RunConfig& c, const std::string& k, const std::string& v) { c.num_scenes = parse_index("config", k, v); }},
      {"objects_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.objects_min = parse_index("config", k, v); }},
      {"objects_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.objects_max = parse_index("config", k, v); }},
      {"augment", [](RunConfig& c, const std::string& k, const std::string& v) { c.augment = parse_bool("config", k, v); }},
      {"scenes_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.scenes_dir = v; }},
      {"out_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(line_no) +
                                  ": expected key = value, got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) bad_key(source, key, "unknown key");
    it->second(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

void RunConfig::dump(std::ostream& out) const {
  out << "x_min = " << fmt_double(voxel.x_min) << "\n";
  out << "x_max = " << fmt_double(voxel.x_max) << "\n";
  out << "y_min = " << fmt_double(voxel.y_min) << "\n";
  out << "y_max = " << fmt_double(voxel.y_max) << "\n";
  out << "z_min = " << fmt_double(voxel.z_min) << "\n";
  out << "z_max = " << fmt_double(voxel.z_max) << "\n";
  out << "res_x = " << fmt_double(voxel.res_x) << "\n";
  out << "res_y = " << fmt_double(voxel.res_y) << "\n";
  out << "res_z = " << fmt_double(voxel.res_z) << "\n";
  out << "enc_channels = " << enc_channels << "\n";
  out << "neck_channels = " << neck_channels << "\n";
  out << "d_q = " << d_q << "\n";
  out << "d_v = " << d_v << "\n";
  out << "heads = " << heads << "\n";
  out << "pool_bev_h = " << pool_bev_h << "\n";
  out << "pool_bev_w = " << pool_bev_w << "\n";
  out << "pool_rv_h = " << pool_rv_h << "\n";
  out << "pool_rv_w = " << pool_rv_w << "\n";
  out << "num_classes = " << num_classes << "\n";
  out << "mode = " << mode << "\n";
  out << "decouple = " << (decouple ? "true" : "false") << "\n";
  out << "var_target = " << var_target << "\n";
  out << "lambda_cls = " << fmt_double(lambda_cls) << "\n";
  out << "lambda_reg = " << fmt_double(lambda_reg) << "\n";
  out << "lambda_var = " << fmt_double(lambda_var) << "\n";
  out << "focal_alpha = " << fmt_double(focal_alpha) << "\n";
  out << "focal_gamma = " << fmt_double(focal_gamma) << "\n";
  out << "background_weight = " << fmt_double(background_weight) << "\n";
  out << "steps = " << steps << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "learning_rate = " << fmt_double(learning_rate) << "\n";
  out << "beta1 = " << fmt_double(beta1) << "\n";
  out << "beta2 = " << fmt_double(beta2) << "\n";
  out << "weight_decay = " << fmt_double(weight_decay) << "\n";
  out << "seed = " << seed << "\n";
  out << "num_scenes = " << num_scenes << "\n";
  out << "objects_min = " << objects_min << "\n";
  out << "objects_max = " << objects_max << "\n";
  out << "augment = " << (augment ? "true" : "false") << "\n";
  if (!scenes_dir.empty()) out << "scenes_dir = " << scenes_dir << "\n";
  // out_dir is a per-invocation concern and stays out of the effective dump
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("config: cannot write '" + path + "'");
  dump(out);
}

void RunConfig::validate() const {
  voxel.validate();
  parse_fusion_mode(mode);
  parse_var_target(var_target);
  if (enc_channels < 1 || neck_channels < 1 || d_q < 1 || d_v < 1) {
    throw std::invalid_argument("config: channel/attention dimensions must be >= 1");
  }
  if (d_v != neck_channels) {
    throw std::invalid_argument("config: d_v must equal neck_channels for the residual fusion");
  }
  if (heads != 1) {
    throw std::invalid_argument("config: heads must be 1 (single-head attention)");
  }
  if (pool_bev_h < 1 || pool_bev_w < 1 || pool_rv_h < 1 || pool_rv_w < 1) {
    throw std::invalid_argument("config: pooling kernels must be >= 1");
  }
  if (num_classes < 1) throw std::invalid_argument("config: num_classes must be >= 1");
  if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("config: learning_rate must be > 0");
  if (num_scenes < 1) throw std::invalid_argument("config: num_scenes must be >= 1");
  if (objects_min < 0 || objects_max < objects_min) {
    throw std::invalid_argument("config: need 0 <= objects_min <= objects_max");
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.voxel = voxel;
  mc.enc_channels = enc_channels;
  mc.d_f = neck_channels;
  mc.d_q = d_q;
  mc.d_v = d_v;
  mc.heads = heads;
  mc.pool_bev_kh = pool_bev_h;
  mc.pool_bev_kw = pool_bev_w;
  mc.pool_rv_kh = pool_rv_h;
  mc.pool_rv_kw = pool_rv_w;
  mc.num_classes = num_classes;
  mc.mode = parse_fusion_mode(mode);
  mc.decouple = decouple;
  mc.var_target = parse_var_target(var_target);
  mc.focal.alpha = focal_alpha;
  mc.focal.gamma = focal_gamma;
  mc.focal.background_weight = background_weight;
  mc.lambdas.lambda_cls = lambda_cls;
  mc.lambdas.lambda_reg = lambda_reg;
  mc.lambdas.lambda_var = lambda_var;
  return mc;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.steps = steps;
  tc.batch_size = batch_size;
  tc.learning_rate = learning_rate;
  tc.beta1 = beta1;
  tc.beta2 = beta2;
  tc.weight_decay = weight_decay;
  tc.seed = seed;
  tc.augment = augment;
  return tc;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  std::ostringstream sa, sb;
  a.dump(sa);
  b.dump(sb);
  return sa.str() == sb.str();
}

}  // namespace vista
