#include "beltcrack/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace beltcrack {

namespace {

std::string format(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string format(Index v) { return std::to_string(v); }
std::string format(int v) { return std::to_string(v); }
std::string format(std::uint64_t v) { return std::to_string(v); }
std::string format(const std::string& v) { return v; }

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw std::invalid_argument("config key '" + key + "': bad value '" + text + "'");
  return v;
}

void parse_into(const std::string& key, const std::string& text, double& out) { out = parse_number<double>(key, text); }
void parse_into(const std::string& key, const std::string& text, Index& out) { out = parse_number<Index>(key, text); }
void parse_into(const std::string& key, const std::string& text, int& out) { out = parse_number<int>(key, text); }
void parse_into(const std::string& key, const std::string& text, std::uint64_t& out) {
  out = parse_number<std::uint64_t>(key, text);
}
void parse_into(const std::string&, const std::string& text, std::string& out) { out = text; }

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Access>
Field field(const std::string& key, Access access) {
  return {[access](const RunConfig& c) { return format(access(const_cast<RunConfig&>(c))); },
          [key, access](RunConfig& c, const std::string& v) { parse_into(key, v, access(c)); }};
}

#define BC_FIELD(key, expr) {key, field(key, [](RunConfig& c) -> auto& { return expr; })}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table{
      BC_FIELD("train_annotations", c.train_annotations),
      BC_FIELD("train_images", c.train_images),
      BC_FIELD("val_annotations", c.val_annotations),
      BC_FIELD("val_images", c.val_images),
      BC_FIELD("input_size", c.input_size),
      BC_FIELD("frames", c.model.frames),
      BC_FIELD("channels", c.model.channels),
      BC_FIELD("stride", c.model.stride),
      BC_FIELD("min_width", c.model.min_width),
      BC_FIELD("wavelet_levels", c.model.wavelet_levels),
      BC_FIELD("wavelet_kernel", c.model.wavelet_kernel),
      BC_FIELD("wavelet_basis", c.model.wavelet_basis),
      BC_FIELD("attention_heads", c.model.attention_heads),
      BC_FIELD("csab_blocks", c.model.fusion.csab_blocks),
      BC_FIELD("window", c.model.fusion.window),
      BC_FIELD("window_heads", c.model.fusion.heads),
      BC_FIELD("channel_reduction", c.model.fusion.channel_reduction),
      BC_FIELD("head_hidden", c.model.head_hidden),
      BC_FIELD("lambda_reg", c.loss.reg),
      BC_FIELD("lambda_cls", c.loss.cls),
      BC_FIELD("lambda_obj", c.loss.obj),
      BC_FIELD("zeta", c.loss.iou),
      BC_FIELD("eta", c.loss.nwd),
      BC_FIELD("nwd_constant", c.loss.nwd_constant),
      BC_FIELD("focal_alpha", c.loss.focal_alpha),
      BC_FIELD("focal_gamma", c.loss.focal_gamma),
      BC_FIELD("assign_radius", c.assign_radius),
      BC_FIELD("epochs", c.epochs),
      BC_FIELD("batch", c.batch),
      BC_FIELD("max_steps", c.max_steps),
      BC_FIELD("lr", c.lr),
      BC_FIELD("momentum", c.momentum),
      BC_FIELD("weight_decay", c.weight_decay),
      BC_FIELD("lr_final_ratio", c.lr_final_ratio),
      BC_FIELD("warmup_steps", c.warmup_steps),
      BC_FIELD("grad_clip", c.grad_clip),
      BC_FIELD("checkpoint_every", c.checkpoint_every),
      BC_FIELD("score_threshold", c.score_threshold),
      BC_FIELD("nms_iou", c.nms_iou),
      BC_FIELD("max_detections", c.max_detections),
      BC_FIELD("seed", c.seed),
      BC_FIELD("precision", c.precision),
  };
  return table;
}

#undef BC_FIELD

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

std::map<std::string, std::string> config_to_map(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(config);
  return out;
}

RunConfig config_from_map(const std::map<std::string, std::string>& values) {
  RunConfig c;
  for (const auto& [k, v] : values) {
    const auto it = fields().find(k);
    if (it == fields().end()) throw std::invalid_argument("unknown config key '" + k + "'");
    it->second.set(c, v);
  }
  validate(c);
  return c;
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string body = line;
    // a '#' inside quotes is part of the value
    bool quoted = false;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == '"') quoted = !quoted;
      if (body[i] == '#' && !quoted) {
        body.resize(i);
        break;
      }
    }
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(number) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw std::invalid_argument(origin + ":" + std::to_string(number) + ": key '" + key + "' repeated");
    }
  }
  return out;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_map(parse_key_values(ss.str(), path));
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto kv = parse_key_values(assignment, "--set " + assignment);
  if (kv.size() != 1) throw std::invalid_argument("--set expects key=value, got '" + assignment + "'");
  auto values = config_to_map(config);
  const auto& [k, v] = *kv.begin();
  if (!values.count(k)) throw std::invalid_argument("unknown config key '" + k + "'");
  values[k] = v;
  config = config_from_map(values);
}

std::string config_text(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_to_map(config)) {
    const bool is_string = k.find("annotations") != std::string::npos || k.find("images") != std::string::npos ||
                           k == "wavelet_basis" || k == "precision";
    out += k + " = " + (is_string ? "\"" + v + "\"" : v) + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : config_text(config)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void validate(const RunConfig& c) {
  auto positive = [](const char* key, double v) {
    if (!(v > 0) || !std::isfinite(v)) throw std::invalid_argument(std::string("config key '") + key + "' must be positive");
  };
  auto non_negative = [](const char* key, double v) {
    if (!(v >= 0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("config key '") + key + "' must be >= 0");
    }
  };
  positive("input_size", static_cast<double>(c.input_size));
  positive("frames", static_cast<double>(c.model.frames));
  positive("channels", static_cast<double>(c.model.channels));
  positive("stride", static_cast<double>(c.model.stride));
  positive("min_width", static_cast<double>(c.model.min_width));
  positive("wavelet_levels", c.model.wavelet_levels);
  positive("wavelet_kernel", static_cast<double>(c.model.wavelet_kernel));
  positive("attention_heads", static_cast<double>(c.model.attention_heads));
  positive("csab_blocks", static_cast<double>(c.model.fusion.csab_blocks));
  positive("window", static_cast<double>(c.model.fusion.window));
  positive("window_heads", static_cast<double>(c.model.fusion.heads));
  positive("channel_reduction", static_cast<double>(c.model.fusion.channel_reduction));
  positive("head_hidden", static_cast<double>(c.model.head_hidden));
  positive("nwd_constant", c.loss.nwd_constant);
  positive("assign_radius", c.assign_radius);
  positive("epochs", static_cast<double>(c.epochs));
  positive("batch", static_cast<double>(c.batch));
  positive("max_detections", static_cast<double>(c.max_detections));
  positive("lr_final_ratio", c.lr_final_ratio);
  positive("nms_iou", c.nms_iou);
  // zero is meaningful for these: disabled, or "no update" for lr
  for (auto [key, v] : {std::pair<const char*, double>{"lambda_reg", c.loss.reg},
                        {"lambda_cls", c.loss.cls},
                        {"lambda_obj", c.loss.obj},
                        {"zeta", c.loss.iou},
                        {"eta", c.loss.nwd},
                        {"focal_gamma", c.loss.focal_gamma},
                        {"max_steps", static_cast<double>(c.max_steps)},
                        {"lr", c.lr},
                        {"momentum", c.momentum},
                        {"weight_decay", c.weight_decay},
                        {"warmup_steps", static_cast<double>(c.warmup_steps)},
                        {"grad_clip", c.grad_clip},
                        {"checkpoint_every", static_cast<double>(c.checkpoint_every)},
                        {"score_threshold", c.score_threshold}}) {
    non_negative(key, v);
  }
  if (!(c.loss.focal_alpha > 0 && c.loss.focal_alpha < 1)) throw std::invalid_argument("focal_alpha must be in (0, 1)");
  if (c.momentum >= 1) throw std::invalid_argument("momentum must be < 1");
  if (c.nms_iou > 1) throw std::invalid_argument("nms_iou must be <= 1");
  if (c.lr_final_ratio > 1) throw std::invalid_argument("lr_final_ratio must be <= 1");
  if (c.model.wavelet_basis != "haar" && c.model.wavelet_basis != "db2") {
    throw std::invalid_argument("wavelet_basis must be haar or db2");
  }
  if (c.precision != "double" && c.precision != "float") throw std::invalid_argument("precision must be double or float");
  if (c.input_size % c.model.stride != 0) {
    throw std::invalid_argument("input_size " + std::to_string(c.input_size) + " is not a multiple of stride " +
                                std::to_string(c.model.stride));
  }
}

}  // namespace beltcrack
