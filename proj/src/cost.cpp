#include "beltcrack/cost.hpp"

#include <chrono>
#include <iomanip>
#include <sstream>

namespace beltcrack {

template <typename Scalar>
CostReport count_cost(const BeltCrackDet<Scalar>& model, Index input_size, int timing_runs) {
  NoGradGuard no_grad;
  CostReport rep;
  rep.input_size = input_size;
  for (const char* name : {"backbone", "hsm", "atm", "wfm", "fusion", "head"}) rep.modules.push_back({name, 0, 0});
  for (const auto& [name, p] : model.parameters()) {
    const std::string module = name.substr(0, name.find('.'));
    for (auto& m : rep.modules)
      if (m.name == module) m.parameters += p.size();
    rep.parameters += p.size();
  }

  std::vector<Var<Scalar>> frames(static_cast<std::size_t>(model.config().frames),
                                  constant(Tensor<Scalar>({3, input_size, input_size})));
  auto counted = [](ModuleCost& m, auto&& fn) {
    MacCounter::reset();
    auto out = fn();
    m.macs = MacCounter::value();
    return out;
  };
  const auto features = counted(rep.modules[0], [&] { return model.backbone.extract(frames); });
  const auto spatial = counted(rep.modules[1], [&] { return model.hsm(features); });
  const auto temporal = counted(rep.modules[2], [&] { return model.atm(features); });
  const auto frequency = counted(rep.modules[3], [&] { return model.wfm(features); });
  const auto fused = counted(rep.modules[4], [&] { return model.fusion.fuse_all(spatial, temporal, frequency); });
  counted(rep.modules[5], [&] { return model.head(fused.output); });
  for (const auto& m : rep.modules) rep.macs += m.macs;

  if (timing_runs > 0) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < timing_runs; ++i) model(frames);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.frames_per_second = secs > 0 ? timing_runs / secs : 0;
  }
  return rep;
}

std::string cost_table(const CostReport& r) {
  std::ostringstream s;
  s << std::left << std::setw(10) << "module" << std::right << std::setw(14) << "params" << std::setw(16) << "MACs"
    << "\n";
  for (const auto& m : r.modules) s << std::left << std::setw(10) << m.name << std::right << std::setw(14) << m.parameters << std::setw(16) << m.macs << "\n";
  s << std::left << std::setw(10) << "total" << std::right << std::setw(14) << r.parameters << std::setw(16) << r.macs
    << "\n";
  s << "input " << r.input_size << "x" << r.input_size << ", " << std::fixed << std::setprecision(2)
    << r.frames_per_second << " windows/s\n";
  return s.str();
}

template CostReport count_cost(const BeltCrackDet<float>&, Index, int);
template CostReport count_cost(const BeltCrackDet<double>&, Index, int);

}  // namespace beltcrack
