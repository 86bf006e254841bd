#pragma once

#include "beltcrack/model.hpp"

#include <string>
#include <vector>

namespace beltcrack {

struct ModuleCost {
  std::string name;
  Index parameters = 0;
  long long macs = 0;  // conv and matmul multiply-adds for one window
};

struct CostReport {
  std::vector<ModuleCost> modules;  // backbone, hsm, atm, wfm, fusion, head
  Index parameters = 0;
  long long macs = 0;
  Index input_size = 0;
  double frames_per_second = 0;  // windows (keyframe outputs) per second
};

// Parameter counts from the named parameter table. MACs are counted while
// running a zero input of T x 3 x size x size; throughput is timed over
// `timing_runs` further forward passes.
template <typename Scalar>
CostReport count_cost(const BeltCrackDet<Scalar>& model, Index input_size, int timing_runs = 3);

std::string cost_table(const CostReport& report);

}  // namespace beltcrack
