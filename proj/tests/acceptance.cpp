// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Exit status is nonzero if any criterion fails.

#include "beltcrack/atm.hpp"
#include "beltcrack/fusion.hpp"
#include "beltcrack/hsm.hpp"
#include "beltcrack/loss.hpp"
#include "beltcrack/metrics.hpp"
#include "beltcrack/train.hpp"
#include "beltcrack/wavelet.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace beltcrack;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

template <typename Scalar>
double round_trip_error(const Tensor<Scalar>& x, int levels, const WaveletBasis& basis) {
  const auto pyr = wavelet_pyramid(constant(x), levels, basis);
  Var<Scalar> rec = iwt(pyr.back(), basis);
  for (int j = levels - 2; j >= 0; --j) {
    SubBands<Scalar> b = pyr[j];
    b.ll = rec;
    rec = iwt(b, basis);
  }
  return static_cast<double>((rec.value().values() - x.values()).abs().maxCoeff());
}

Outcome wavelet_round_trip() {
  const auto t0 = Clock::now();
  const WaveletBasis haar = wavelet_basis("haar");
  Rng rng(1);
  double err32 = 0, err64 = 0;
  for (int j : {1, 2, 3})
    for (Shape s : {Shape{3, 64, 64}, Shape{1, 8, 8}, Shape{2, 40, 24}, Shape{3, 17, 30}}) {
      err64 = std::max(err64, round_trip_error(uniform_tensor<double>(s, 1.0, rng), j, haar));
      err32 = std::max(err32, round_trip_error(uniform_tensor<float>(s, 1.0f, rng), j, haar));
    }
  const double secs = seconds_since(t0);
  return {err32 < 1e-5 && err64 < 1e-12 && secs < 5.0,
          "max error float32 " + fmt(err32) + ", float64 " + fmt(err64) + ", " + fmt(secs) + " s"};
}

template <typename Scalar>
std::pair<double, double> cascade_errors(Rng& rng) {
  const WaveletBasis haar = wavelet_basis("haar");
  double id = 0, zero = 0;
  for (int levels : {1, 2, 3})
    for (Shape s : {Shape{2, 16, 16}, Shape{3, 64, 64}, Shape{1, 12, 20}}) {
      const auto x = constant(uniform_tensor<Scalar>(s, Scalar(1), rng));
      const auto y = cascade_forward(x, SubbandKernels<Scalar>::delta(s[0], levels, 3), haar);
      id = std::max(id, static_cast<double>((y.value().values() - x.value().values()).abs().maxCoeff()));
      const auto z = cascade_forward(x, SubbandKernels<Scalar>::zeros(s[0], levels, 3), haar);
      zero = std::max(zero, static_cast<double>(z.value().max_abs()));
    }
  return {id, zero};
}

Outcome cascade_identity() {
  Rng rng(2);
  const auto [id64, zero64] = cascade_errors<double>(rng);
  const auto [id32, zero32] = cascade_errors<float>(rng);
  const double id = std::max(id64, id32), zero = std::max(zero64, zero32);
  return {id < 1e-5 && zero == 0.0, "delta kernels max |y - x| " + fmt(id) + ", zero kernels max |y| " + fmt(zero)};
}

Outcome aggregate_expansions() {
  Rng rng(3);
  std::uniform_int_distribution<int> dim(1, 6);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index c = dim(rng), h = dim(rng), w = dim(rng);
    Tensor<double> dense({3, c, h, w});
    FeatureStack<double> stack;
    for (Index t = 0; t < 3; ++t) {
      Tensor<double> f = uniform_tensor<double>({c, h, w}, 1.0, rng);
      for (Index i = 0; i < f.size(); ++i) dense[t * f.size() + i] = f[i];
      stack.frames.push_back(constant(f));
    }
    const Tensor<double> a = testing::aggregate_differences(dense);
    const Tensor<double> b = testing::aggregate_expanded(dense);
    const Tensor<double> got = aggregate(stack).value();
    worst = std::max({worst, (a.values() - b.values()).abs().maxCoeff(), (got.values() - a.values()).abs().maxCoeff()});
  }
  return {worst < 1e-6, "100 stacks, max disagreement " + fmt(worst)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, double>> errors;
  auto params_of = [](const auto& module, const char* prefix) {
    NamedParameters<double> p;
    module.collect(p, prefix);
    std::vector<Var<double>> out;
    for (auto& [n, v] : p) out.push_back(v);
    return out;
  };
  {
    Rng rng(12);
    SpatialModule<double> hsm(4, 3, rng);
    FeatureStack<double> s;
    for (int i = 0; i < 3; ++i) s.frames.push_back(parameter(uniform_tensor<double>({4, 3, 3}, 1.0, rng)));
    const auto w = uniform_tensor<double>({4, 3, 3}, 1.0, rng);
    auto wrt = params_of(hsm, "hsm");
    wrt.insert(wrt.end(), s.frames.begin(), s.frames.end());
    errors.push_back({"hsm", testing::check_gradients([&] { return testing::readout(hsm(s), w); }, wrt).max_relative_error});
  }
  {
    Rng rng(9);
    TemporalModule<double> atm(4, 2, rng);
    FeatureStack<double> s;
    for (int i = 0; i < 3; ++i) s.frames.push_back(parameter(uniform_tensor<double>({4, 4, 4}, 0.7, rng)));
    const auto w = uniform_tensor<double>({4, 4, 4}, 1.0, rng);
    auto wrt = params_of(atm, "atm");
    wrt.insert(wrt.end(), s.frames.begin(), s.frames.end());
    errors.push_back({"atm", testing::check_gradients([&] { return testing::readout(atm(s), w); }, wrt).max_relative_error});
  }
  {
    Rng rng(12);
    WaveletFrequencyModule<double> wfm(2, 2, 3, "haar", rng);
    FeatureStack<double> s;
    for (int i = 0; i < 3; ++i) s.frames.push_back(parameter(uniform_tensor<double>({2, 4, 4}, 1.0, rng)));
    const auto w = uniform_tensor<double>({2, 4, 4}, 1.0, rng);
    auto wrt = params_of(wfm, "wfm");
    wrt.insert(wrt.end(), s.frames.begin(), s.frames.end());
    errors.push_back({"wfm", testing::check_gradients([&] { return testing::readout(wfm(s), w); }, wrt).max_relative_error});
  }
  {
    Rng rng(12);
    FusionModule<double> fusion(4, FusionConfig{1, 2, 2, 2}, rng);
    const auto s = parameter(uniform_tensor<double>({4, 4, 4}, 1.0, rng));
    const auto t = parameter(uniform_tensor<double>({4, 4, 4}, 1.0, rng));
    const auto f = parameter(uniform_tensor<double>({4, 4, 4}, 1.0, rng));
    const auto w = uniform_tensor<double>({4, 4, 4}, 1.0, rng);
    auto wrt = params_of(fusion, "fusion");
    wrt.insert(wrt.end(), {s, t, f});
    errors.push_back({"fusion", testing::check_gradients(
                                    [&] { return testing::readout(fusion.fuse_all(s, t, f).output, w); }, wrt)
                                    .max_relative_error});
  }
  {
    Rng rng(4);
    HeadOutput<double> out;
    out.reg = parameter(uniform_tensor<double>({4, 4, 4}, 0.5, rng));
    out.obj = parameter(uniform_tensor<double>({1, 4, 4}, 2.0, rng));
    out.cls = parameter(uniform_tensor<double>({1, 4, 4}, 2.0, rng));
    out.stride = 8;
    const auto targets = assign_targets({Box::from_center(12, 12, 9, 5), Box{20, 18, 30, 29}}, 4, 4, 8);
    errors.push_back({"total_loss", testing::check_gradients([&] { return total_loss(out, targets, LossWeights{}).total; },
                                                             {out.reg, out.obj, out.cls})
                                        .max_relative_error});
  }
  const double secs = seconds_since(t0);
  bool ok = secs < 60.0;
  std::string detail;
  for (const auto& [name, e] : errors) {
    ok = ok && e < 1e-3;
    detail += name + " " + fmt(e) + ", ";
  }
  return {ok, "max relative error: " + detail + fmt(secs) + " s"};
}

Outcome loss_truths() {
  const Box b{3, 4, 17, 9};
  const double iou0 = iou_loss(b, b), nwd0 = nwd_loss(b, b, 12.8);
  const double nwd_off = nwd_loss(Box{13, 14, 23, 34}, Box{10, 10, 20, 30}, 5.0);
  const double err_off = std::abs(nwd_off - (1 - std::exp(-1.0)));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> logit(-6, 6);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const double z = logit(rng);
    const double y = (i % 2) ? 1.0 : 0.0;
    const double p = 1 / (1 + std::exp(-z));
    const double bce = -(y * std::log(p) + (1 - y) * std::log(1 - p));
    worst = std::max(worst, std::abs(focal_loss(std::vector<double>{z}, std::vector<double>{y}, 0.5, 0.0) - 0.5 * bce));
  }
  const bool ok = iou0 == 0.0 && nwd0 == 0.0 && err_off < 1e-9 && worst < 1e-9;
  return {ok, "identical boxes l_iou " + fmt(iou0) + " l_nwd " + fmt(nwd0) + "; offset (3,4) C=5 error " + fmt(err_off) +
                  "; focal(g=0,a=0.5) vs BCE/2 error " + fmt(worst)};
}

Detection make_det(const Box& b, double score) {
  Detection d;
  d.box = b;
  d.score = score;
  return d;
}

Outcome metrics_oracles() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> pos(0, 40), size(3, 16), jitter(-3, 3);
  std::uniform_int_distribution<int> count(0, 10), level(1, 8);
  int ap_mismatch = 0, pr_mismatch = 0, nms_mismatch = 0, gt_fail = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GroundTruthBox> gts;
    std::vector<Detection> dets;
    const int ng = count(rng), nd = count(rng);
    for (int i = 0; i < ng; ++i) gts.push_back({Box::from_center(pos(rng), pos(rng), size(rng), size(rng)), 0});
    for (int i = 0; i < nd; ++i) {
      Box b = Box::from_center(pos(rng), pos(rng), size(rng), size(rng));
      if (!gts.empty() && i % 3 != 0) {
        const Box& g = gts[static_cast<std::size_t>(i) % gts.size()].box;
        b = Box::from_center(g.center_x() + jitter(rng), g.center_y() + jitter(rng), g.width(), g.height());
      }
      dets.push_back(make_det(b, level(rng) / 8.0));
    }
    const std::vector<std::vector<Detection>> D{dets};
    const std::vector<std::vector<GroundTruthBox>> G{gts};
    const MatchSet m = match_dataset(D, G);
    if (average_precision(m).ap != testing::brute_ap(D, G)) ++ap_mismatch;
    for (const auto& p : pr_curve(m)) {
      const auto [tp, fp] = testing::recount(D, G, p.threshold);
      const double r = ng > 0 ? double(tp) / ng : 0.0, pr = tp + fp > 0 ? double(tp) / (tp + fp) : 1.0;
      if (p.recall != r || p.precision != pr) ++pr_mismatch;
    }
    const auto got = nms(dets, 0.5, 0.001), want = testing::reference_nms(dets, 0.5, 0.001);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) same = got[i].box == want[i].box && got[i].score == want[i].score;
    if (!same) ++nms_mismatch;
    if (ng > 0) {
      std::vector<Detection> perfect;
      for (const auto& g : gts) perfect.push_back(make_det(g.box, 0.9));
      if (average_precision(match_dataset({perfect}, G)).ap != 1.0) ++gt_fail;
    }
  }
  const bool ok = ap_mismatch == 0 && pr_mismatch == 0 && nms_mismatch == 0 && gt_fail == 0;
  return {ok, "50 scenarios: AP mismatches " + std::to_string(ap_mismatch) + ", PR point mismatches " +
                  std::to_string(pr_mismatch) + ", NMS mismatches " + std::to_string(nms_mismatch) +
                  ", gt-as-detections AP != 1: " + std::to_string(gt_fail)};
}

RunConfig desk_config() {
  RunConfig c;
  c.input_size = 64;
  c.model.frames = 5;
  c.model.stride = 8;
  c.batch = 4;
  c.lr = 0.01;
  c.seed = 0;
  return c;
}

PreparedSplit synthetic_split(const RunConfig& c, int frames, std::uint64_t seed) {
  SynthConfig sc;
  sc.frames = frames;
  auto seq = synth_sequence(sc, seed);
  Dataset ds;
  ds.records = seq.records;
  for (std::size_t i = 0; i < ds.records.size(); ++i) ds.records[i].image_id = static_cast<std::int64_t>(i + 1);
  return prepare_split(ds, seq.images, c);
}

Outcome overfit() {
  const auto t0 = Clock::now();
  RunConfig c = desk_config();
  c.max_steps = 200;
  const PreparedSplit split = synthetic_split(c, 20, 11);
  Rng rng(c.seed);
  BeltCrackDet<double> model(c.model, rng);
  const auto hist = train(model, split, c);
  const EvalReport rep = evaluate_model(model, split, c);
  const double secs = seconds_since(t0);
  return {rep.ap50 >= 0.8 && secs < 600, "20 frames 64x64, T=5, stride 8, " + std::to_string(hist.size()) +
                                             " steps: train mAP50 " + fmt(rep.ap50) + " (loss " +
                                             fmt(hist.front().loss.total) + " -> " + fmt(hist.back().loss.total) +
                                             "), " + fmt(secs) + " s"};
}

Outcome determinism() {
  RunConfig c = desk_config();
  c.max_steps = 15;
  c.seed = 21;
  const PreparedSplit split = synthetic_split(c, 8, 3);
  auto run = [&] {
    Rng rng(c.seed);
    BeltCrackDet<double> model(c.model, rng);
    std::ostringstream csv;
    TrainHooks hooks;
    hooks.loss_csv = &csv;
    train(model, split, c, hooks);
    return csv.str();
  };
  const std::string a = run(), b = run();
  return {a == b && !a.empty(), "two 15-step runs, seed 21: loss CSVs " + std::string(a == b ? "identical" : "differ") +
                                    " (" + std::to_string(a.size()) + " bytes)"};
}

Outcome fixpoint_and_buckets() {
  const fs::path dir = fs::temp_directory_path() / "beltcrack_acceptance_fixpoint";
  fs::remove_all(dir);
  SynthConfig sc;
  sc.frames = 6;
  const std::string ann = write_synth_dataset(sc, 3, 5, dir.string());
  const Dataset first = load_dataset(ann, dir.string());
  save_dataset(first.records, (dir / "again.json").string());
  const Dataset second = load_dataset((dir / "again.json").string(), dir.string());
  save_dataset(second.records, (dir / "third.json").string());
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const bool records_equal = first.records == second.records;
  const bool bytes_equal = slurp(dir / "again.json") == slurp(dir / "third.json");
  std::size_t boxes = 0;
  for (const auto& r : first.records) boxes += r.boxes.size();
  fs::remove_all(dir);

  const bool edges = kSizeBucketEdges == std::array<double, 4>{100.0, 1000.0, 10000.0, 100000.0};
  bool boundaries = true;
  for (std::size_t i = 0; i < kSizeBucketEdges.size(); ++i) {
    boundaries = boundaries && size_bucket(kSizeBucketEdges[i]) == kAllSizeBuckets[i + 1] &&
                 size_bucket(std::nextafter(kSizeBucketEdges[i], 0.0)) == kAllSizeBuckets[i];
  }
  return {records_equal && bytes_equal && edges && boundaries,
          std::to_string(first.records.size()) + " frames / " + std::to_string(boxes) + " boxes: records " +
              (records_equal ? "equal" : "differ") + ", re-save " + (bytes_equal ? "byte-identical" : "differs") +
              "; bucket edges " + (edges && boundaries ? "100/1000/10000/100000" : "wrong")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"wavelet round trip", wavelet_round_trip},
      {"cascade identity", cascade_identity},
      {"aggregate expansions", aggregate_expansions},
      {"gradient suite", gradient_suite},
      {"loss truths", loss_truths},
      {"AP / PR / NMS oracles", metrics_oracles},
      {"overfit", overfit},
      {"determinism", determinism},
      {"annotation fixpoint", fixpoint_and_buckets},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
