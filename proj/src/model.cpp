#include "beltcrack/model.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>
#include <stdexcept>

namespace beltcrack {

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"frames", std::to_string(frames)},
      {"channels", std::to_string(channels)},
      {"stride", std::to_string(stride)},
      {"min_width", std::to_string(min_width)},
      {"wavelet_levels", std::to_string(wavelet_levels)},
      {"wavelet_kernel", std::to_string(wavelet_kernel)},
      {"wavelet_basis", wavelet_basis},
      {"attention_heads", std::to_string(attention_heads)},
      {"csab_blocks", std::to_string(fusion.csab_blocks)},
      {"window", std::to_string(fusion.window)},
      {"window_heads", std::to_string(fusion.heads)},
      {"channel_reduction", std::to_string(fusion.channel_reduction)},
      {"head_hidden", std::to_string(head_hidden)},
  };
}

template <typename Scalar>
BeltCrackDet<Scalar>::BeltCrackDet(const ModelConfig& config, Rng& rng)
    : backbone({config.channels, config.stride, config.min_width}, rng),
      hsm(config.channels, config.frames, rng),
      atm(config.channels, config.attention_heads, rng),
      wfm(config.channels, config.wavelet_levels, config.wavelet_kernel, config.wavelet_basis, rng),
      fusion(config.channels, config.fusion, rng),
      head(config.channels, config.head_hidden, config.stride, rng),
      config_(config) {}

template <typename Scalar>
ForwardTrace<Scalar> BeltCrackDet<Scalar>::trace(const std::vector<Var<Scalar>>& frames) const {
  if (static_cast<Index>(frames.size()) != config_.frames) {
    throw std::invalid_argument("model built for T=" + std::to_string(config_.frames) + ", got " +
                                std::to_string(frames.size()) + " frames");
  }
  ForwardTrace<Scalar> t;
  t.features = backbone.extract(frames);
  t.spatial = hsm(t.features);
  t.temporal = atm(t.features);
  t.frequency = wfm(t.features);
  t.fused = fusion.fuse_all(t.spatial, t.temporal, t.frequency);
  t.head = head(t.fused.output);
  return t;
}

template <typename Scalar>
NamedParameters<Scalar> BeltCrackDet<Scalar>::parameters() const {
  NamedParameters<Scalar> out;
  backbone.collect(out, "backbone");
  hsm.collect(out, "hsm");
  atm.collect(out, "atm");
  wfm.collect(out, "wfm");
  fusion.collect(out, "fusion");
  head.collect(out, "head");
  return out;
}

template <typename Scalar>
Index BeltCrackDet<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& [name, p] : parameters()) n += p.size();
  return n;
}

namespace {

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto num = [&](const char* key) { return std::stol(j.at(key).get<std::string>()); };
  c.frames = num("frames");
  c.channels = num("channels");
  c.stride = num("stride");
  c.min_width = num("min_width");
  c.wavelet_levels = static_cast<int>(num("wavelet_levels"));
  c.wavelet_kernel = num("wavelet_kernel");
  c.wavelet_basis = j.at("wavelet_basis").get<std::string>();
  c.attention_heads = num("attention_heads");
  c.fusion.csab_blocks = num("csab_blocks");
  c.fusion.window = num("window");
  c.fusion.heads = num("window_heads");
  c.fusion.channel_reduction = num("channel_reduction");
  c.head_hidden = num("head_hidden");
  return c;
}

struct CheckpointHeader {
  nlohmann::json meta;
  std::streampos data_offset;
};

CheckpointHeader read_header(std::ifstream& in, const std::string& path) {
  std::string tag;
  if (!std::getline(in, tag)) throw std::runtime_error("checkpoint " + path + ": empty file");
  const std::string expect = std::string(kCheckpointTag) + " v" + std::to_string(kCheckpointVersion);
  if (tag.rfind(kCheckpointTag, 0) != 0) throw std::runtime_error("checkpoint " + path + ": not a checkpoint");
  if (tag != expect) throw std::runtime_error("checkpoint " + path + ": version '" + tag + "', expected '" + expect + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint " + path + ": truncated header");
  CheckpointHeader h;
  h.meta = nlohmann::json::parse(line);
  h.data_offset = in.tellg();
  return h;
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const BeltCrackDet<Scalar>& model, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  nlohmann::json meta;
  meta["config"] = model.config().to_map();
  meta["parameters"] = nlohmann::json::array();
  const auto params = model.parameters();
  for (const auto& [name, p] : params) meta["parameters"].push_back({{"name", name}, {"shape", p.shape()}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << kCheckpointTag << " v" << kCheckpointVersion << "\n" << meta.dump() << "\n";
  for (const auto& [name, p] : params) {
    const Tensor<Scalar>& v = p.value();
    for (Index i = 0; i < v.size(); ++i) {
      const double d = static_cast<double>(v[i]);
      out.write(reinterpret_cast<const char*>(&d), sizeof d);
    }
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

ModelConfig read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return config_from_json(read_header(in, path).meta.at("config"));
}

template <typename Scalar>
void load_checkpoint(BeltCrackDet<Scalar>& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  const auto header = read_header(in, path);
  const auto& table = header.meta.at("parameters");
  auto params = model.parameters();
  if (table.size() != params.size()) {
    throw std::runtime_error("checkpoint " + path + ": " + std::to_string(table.size()) + " parameters, model has " +
                             std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, p] = params[k];
    const auto stored_name = table[k].at("name").get<std::string>();
    const auto stored_shape = table[k].at("shape").get<Shape>();
    if (stored_name != name || stored_shape != p.shape()) {
      throw std::runtime_error("checkpoint " + path + ": parameter " + stored_name + " " + shape_string(stored_shape) +
                               " does not match model " + name + " " + shape_string(p.shape()));
    }
  }
  for (auto& [name, p] : params) {
    Tensor<Scalar>& v = p.mutable_value();
    for (Index i = 0; i < v.size(); ++i) {
      double d = 0;
      if (!in.read(reinterpret_cast<char*>(&d), sizeof d)) {
        throw std::runtime_error("checkpoint " + path + ": truncated data at " + name);
      }
      v[i] = static_cast<Scalar>(d);
    }
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw std::runtime_error("checkpoint " + path + ": trailing data");
}

template class BeltCrackDet<float>;
template class BeltCrackDet<double>;
template void save_checkpoint(const BeltCrackDet<float>&, const std::string&);
template void save_checkpoint(const BeltCrackDet<double>&, const std::string&);
template void load_checkpoint(BeltCrackDet<float>&, const std::string&);
template void load_checkpoint(BeltCrackDet<double>&, const std::string&);

}  // namespace beltcrack
