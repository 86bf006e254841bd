#pragma once

// Slow, loop-written references shared by the unit tests and the
// acceptance run.

#include "beltcrack/box.hpp"
#include "beltcrack/dataset.hpp"
#include "beltcrack/tensor.hpp"

#include <algorithm>
#include <set>
#include <utility>
#include <vector>

namespace beltcrack::testing {

// Brute force: repeatedly take the best remaining detection and drop
// everything overlapping it.
inline std::vector<Detection> reference_nms(std::vector<Detection> pool, double thr, double score_thr) {
  std::vector<Detection> kept;
  std::vector<Detection> rest;
  for (auto& d : pool)
    if (d.score >= score_thr) rest.push_back(d);
  while (!rest.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < rest.size(); ++i) {
      const auto& a = rest[i];
      const auto& b = rest[best];
      const bool better = a.score > b.score ||
                          (a.score == b.score && (a.box.area() > b.box.area() ||
                                                  (a.box.area() == b.box.area() && a.box.x_min < b.box.x_min)));
      if (better) best = i;
    }
    const Detection top = rest[best];
    kept.push_back(top);
    std::vector<Detection> next;
    for (std::size_t i = 0; i < rest.size(); ++i)
      if (i != best && iou(top.box, rest[i].box) <= thr) next.push_back(rest[i]);
    rest = next;
  }
  return kept;
}

// Both closed forms of the aggregate, from a dense T x c x h x w array with
// the keyframe last.
inline Tensor<double> aggregate_differences(const Tensor<double>& x) {
  const Index t = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<double> out({c, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx) {
      auto f = [&](Index frame, Index ch) { return x.at(frame, ch, y, xx); };
      const Index key = t - 1;
      double c11 = 0;
      for (Index ch = 0; ch < c; ++ch) c11 += f(key, ch) * f(key, ch);
      std::vector<double> d(t);
      for (Index i = 0; i < t; ++i) {
        if (i == key) {
          d[i] = c11;
          continue;
        }
        double dot = 0;
        for (Index ch = 0; ch < c; ++ch) dot += (f(i, ch) - f(key, ch)) * f(key, ch);
        d[i] = dot;
      }
      for (Index ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (Index i = 0; i < t; ++i) acc += d[i] * f(i, ch);
        out.at(ch, y, xx) = acc;
      }
    }
  return out;
}

inline Tensor<double> aggregate_expanded(const Tensor<double>& x) {
  // C_11 F_1 + sum_i (C_1i - C_11) F_i
  const Index t = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<double> out({c, h, w});
  const Index key = t - 1;
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx) {
      std::vector<double> cross(t, 0.0);
      for (Index i = 0; i < t; ++i)
        for (Index ch = 0; ch < c; ++ch) cross[i] += x.at(key, ch, y, xx) * x.at(i, ch, y, xx);
      for (Index ch = 0; ch < c; ++ch) {
        double acc = cross[key] * x.at(key, ch, y, xx);
        for (Index i = 0; i < t; ++i)
          if (i != key) acc += (cross[i] - cross[key]) * x.at(i, ch, y, xx);
        out.at(ch, y, xx) = acc;
      }
    }
  return out;
}

// Plain recount: greedy matching redone from scratch for the detections at
// or above t, pooled over images.
inline std::pair<int, int> recount(const std::vector<std::vector<Detection>>& dets,
                            const std::vector<std::vector<GroundTruthBox>>& gts, double t) {
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::vector<Detection> kept;
    for (const auto& d : dets[i])
      if (d.score >= t) kept.push_back(d);
    std::stable_sort(kept.begin(), kept.end(), [](auto& a, auto& b) { return a.score > b.score; });
    std::vector<bool> used(gts[i].size(), false);
    for (const auto& d : kept) {
      int best = -1;
      double best_v = -1;
      for (std::size_t g = 0; g < gts[i].size(); ++g) {
        if (used[g]) continue;
        const double v = iou(d.box, gts[i][g].box);
        if (v >= 0.5 && v > best_v) {
          best_v = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        used[best] = true;
        ++tp;
      } else {
        ++fp;
      }
    }
  }
  return {tp, fp};
}

// Integral of p_interp(r) = max{P_j : R_j >= r} over the recall axis.
inline double brute_ap(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<GroundTruthBox>>& gts) {
  int n = 0;
  for (const auto& g : gts) n += static_cast<int>(g.size());
  if (n == 0) return 0;
  std::set<double> scores;
  for (const auto& ds : dets)
    for (const auto& d : ds) scores.insert(d.score);
  std::vector<std::pair<double, double>> rp;
  for (double t : scores) {
    const auto [tp, fp] = recount(dets, gts, t);
    rp.push_back({double(tp) / n, double(tp) / (tp + fp)});
  }
  std::set<double> levels{0.0};
  for (auto& [r, p] : rp) levels.insert(r);
  double ap = 0, prev = 0;
  for (double r : levels) {
    if (r == 0) continue;
    double best = 0;
    for (auto& [rr, pp] : rp)
      if (rr >= r) best = std::max(best, pp);
    ap += (r - prev) * best;
    prev = r;
  }
  return ap;
}

}  // namespace beltcrack::testing
