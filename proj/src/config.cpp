#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "error.hpp"

namespace derain {

namespace {

struct Key {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_num(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    DERAIN_CHECK(pos == v.size(), ErrorCode::Parse, "config: bad numeric value '", v,
                 "' for key ", key);
    return d;
  } catch (const Error&) {
    throw;
  } catch (...) {
    throw_error(ErrorCode::Parse, "config: bad numeric value '", v, "' for key ", key);
  }
}

std::string fmt_num(double d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
    auto num = [&t](const char* name, double Config::* field) {
      t[name] = {[name, field](Config& c, const std::string& v) { c.*field = parse_num(name, v); },
                 [field](const Config& c) { return fmt_num(c.*field); }};
    };
    auto integer = [&t](const char* name, int Config::* field) {
      t[name] = {[name, field](Config& c, const std::string& v) {
                   double d = parse_num(name, v);
                   DERAIN_CHECK(d == double(int(d)), ErrorCode::Parse, "config: key ", name,
                                " expects an integer, got '", v, "'");
                   c.*field = int(d);
                 },
                 [field](const Config& c) { return std::to_string(c.*field); }};
    };
    integer("model.segment_length", &Config::segment_length);
    num("model.theta", &Config::theta);
    integer("model.channels", &Config::channels);
    num("trainer.learning_rate", &Config::learning_rate);
    integer("trainer.batch_size", &Config::batch_size);
    integer("trainer.phase1_steps", &Config::phase1_steps);
    integer("trainer.phase2_steps", &Config::phase2_steps);
    integer("trainer.plateau_window", &Config::plateau_window);
    num("trainer.grad_clip_norm", &Config::grad_clip_norm);
    integer("trainer.checkpoint_interval", &Config::checkpoint_interval);
    num("trainer.alpha_phase1", &Config::alpha_phase1);
    num("trainer.beta_phase1", &Config::beta_phase1);
    num("trainer.alpha_phase2", &Config::alpha_phase2);
    num("trainer.beta_phase2", &Config::beta_phase2);
    integer("trainer.crop_size", &Config::crop_size);
    integer("trainer.crop_stride", &Config::crop_stride);
    num("rainsynth.scale_min", &Config::scale_min);
    num("rainsynth.scale_max", &Config::scale_max);
    num("rainsynth.direction_min", &Config::direction_min);
    num("rainsynth.direction_max", &Config::direction_max);
    num("rainsynth.density_min", &Config::density_min);
    num("rainsynth.density_max", &Config::density_max);
    integer("rainsynth.depth_min", &Config::depth_min);
    integer("rainsynth.depth_max", &Config::depth_max);
    num("rainsynth.opacity_min", &Config::opacity_min);
    num("rainsynth.opacity_max", &Config::opacity_max);
    num("rainsynth.speed_min", &Config::speed_min);
    num("rainsynth.speed_max", &Config::speed_max);
    num("rainsynth.wind_min", &Config::wind_min);
    num("rainsynth.wind_max", &Config::wind_max);
    return t;
  }();
  return table;
}

}  // namespace

void Config::validate() const {
  DERAIN_CHECK(segment_length >= 1, ErrorCode::InvalidArgument, "model.segment_length must be >= 1");
  DERAIN_CHECK(theta >= 0.0 && theta <= 1.0, ErrorCode::InvalidArgument,
               "model.theta=", theta, " outside [0,1]");
  DERAIN_CHECK(channels == 1 || channels == 3, ErrorCode::InvalidArgument,
               "model.channels must be 1 or 3");
  DERAIN_CHECK(learning_rate > 0.0, ErrorCode::InvalidArgument, "trainer.learning_rate must be > 0");
  DERAIN_CHECK(batch_size >= 1, ErrorCode::InvalidArgument, "trainer.batch_size must be >= 1");
  DERAIN_CHECK(phase1_steps >= 0 && phase2_steps >= 0, ErrorCode::InvalidArgument,
               "trainer phase steps must be >= 0");
  DERAIN_CHECK(grad_clip_norm >= 0.0, ErrorCode::InvalidArgument, "trainer.grad_clip_norm must be >= 0");
  DERAIN_CHECK(checkpoint_interval >= 1, ErrorCode::InvalidArgument,
               "trainer.checkpoint_interval must be >= 1");
  DERAIN_CHECK(alpha_phase1 >= 0 && beta_phase1 >= 0 && alpha_phase1 + beta_phase1 > 0,
               ErrorCode::InvalidArgument, "phase-1 loss weights must be >= 0 and not both 0");
  DERAIN_CHECK(alpha_phase2 >= 0 && beta_phase2 >= 0 && alpha_phase2 + beta_phase2 > 0,
               ErrorCode::InvalidArgument, "phase-2 loss weights must be >= 0 and not both 0");
  DERAIN_CHECK(crop_size >= 8, ErrorCode::InvalidArgument, "trainer.crop_size must be >= 8");
  DERAIN_CHECK(crop_stride >= 1, ErrorCode::InvalidArgument, "trainer.crop_stride must be >= 1");
  DERAIN_CHECK(scale_min > 0 && scale_min <= scale_max, ErrorCode::InvalidArgument,
               "rainsynth.scale range invalid");
  DERAIN_CHECK(direction_min >= -75 && direction_max <= 75 && direction_min <= direction_max,
               ErrorCode::InvalidArgument, "rainsynth.direction range outside [-75,75]");
  DERAIN_CHECK(density_min >= 0 && density_max <= 50 && density_min <= density_max,
               ErrorCode::InvalidArgument, "rainsynth.density range outside [0,50]");
  DERAIN_CHECK(depth_min >= 1 && depth_min <= depth_max, ErrorCode::InvalidArgument,
               "rainsynth.depth range invalid");
  DERAIN_CHECK(opacity_min >= 0 && opacity_max <= 1 && opacity_min <= opacity_max,
               ErrorCode::InvalidArgument, "rainsynth.opacity range outside [0,1]");
  DERAIN_CHECK(speed_min >= 100 && speed_max <= 1200 && speed_min <= speed_max,
               ErrorCode::InvalidArgument, "rainsynth.speed range outside [100,1200]");
  DERAIN_CHECK(wind_min >= 0 && wind_min <= wind_max, ErrorCode::InvalidArgument,
               "rainsynth.wind range invalid");
}

Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    DERAIN_CHECK(eq != std::string::npos, ErrorCode::Parse, "config line ", lineno,
                 ": expected 'key = value', got '", line, "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto it = key_table().find(key);
    DERAIN_CHECK(it != key_table().end(), ErrorCode::Parse, "config line ", lineno,
                 ": unknown key '", key, "'");
    it->second.set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream is(path);
  DERAIN_CHECK(is.is_open(), ErrorCode::Io, "cannot open config ", path);
  std::ostringstream text;
  text << is.rdbuf();
  return parse_config_text(text.str());
}

std::string config_to_text(const Config& c) {
  std::ostringstream os;
  for (const auto& [name, key] : key_table()) os << name << " = " << key.get(c) << "\n";
  return os.str();
}

}  // namespace derain
