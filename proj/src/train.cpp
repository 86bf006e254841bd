#include "beltcrack/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace beltcrack {

namespace fs = std::filesystem;

std::vector<GroundTruthBox> PreparedSplit::input_boxes(std::size_t record) const {
  std::vector<GroundTruthBox> out = dataset.records.at(record).boxes;
  for (auto& g : out) {
    g.box.x_min *= scale_x[record];
    g.box.x_max *= scale_x[record];
    g.box.y_min *= scale_y[record];
    g.box.y_max *= scale_y[record];
  }
  return out;
}

PreparedSplit prepare_split(Dataset dataset, std::vector<Image> images, const RunConfig& config) {
  if (dataset.records.empty()) throw std::runtime_error("split is empty");
  if (images.size() != dataset.records.size()) throw std::invalid_argument("prepare_split: one image per record");
  PreparedSplit s;
  const auto size = config.input_size;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& r = dataset.records[i];
    s.scale_x.push_back(static_cast<double>(size) / r.width);
    s.scale_y.push_back(static_cast<double>(size) / r.height);
    s.images.push_back(resize_image(images[i], size, size));
  }
  s.frames = dataset.single_image_mode ? 1 : config.model.frames;
  s.windows = sliding_windows(dataset.records, s.frames, true);
  s.dataset = std::move(dataset);
  return s;
}

PreparedSplit load_split(const std::string& annotations, const std::string& image_root, const RunConfig& config) {
  Dataset ds = load_dataset(annotations, image_root);
  if (ds.records.empty()) throw std::runtime_error("split is empty: " + annotations);
  auto images = load_images(ds);
  return prepare_split(std::move(ds), std::move(images), config);
}

template <typename Scalar>
std::vector<Var<Scalar>> window_input(const PreparedSplit& split, const Window& window) {
  std::vector<Var<Scalar>> out;
  for (std::size_t i : window.frames) {
    const Image& im = split.images.at(i);
    out.push_back(constant(Tensor<Scalar>(im.shape(), im.values().template cast<Scalar>())));
  }
  return out;
}

double cosine_lr(double lr, double final_ratio, Index step, Index total_steps, Index warmup_steps) {
  if (step < warmup_steps) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const Index span = std::max<Index>(1, total_steps - warmup_steps - 1);
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  const double floor = lr * final_ratio;
  return floor + 0.5 * (lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Scalar>
SgdMomentum<Scalar>::SgdMomentum(NamedParameters<Scalar> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& [name, p] : params_) velocity_.emplace_back(p.shape());
}

template <typename Scalar>
void SgdMomentum<Scalar>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template <typename Scalar>
double SgdMomentum<Scalar>::step(double lr, double grad_clip) {
  double sq = 0;
  for (auto& [name, p] : params_) {
    if (!p.grad().empty()) sq += static_cast<double>(p.grad().values().square().sum());
  }
  const double norm = std::sqrt(sq);
  const Scalar clip = static_cast<Scalar>(grad_clip > 0 && norm > grad_clip ? grad_clip / norm : 1.0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<Scalar>& p = params_[i].second;
    auto& v = velocity_[i].values();
    auto& w = p.mutable_value().values();
    if (p.grad().empty()) continue;
    auto g = (p.grad().values() * clip).eval();
    if (weight_decay_ > 0 && p.value().rank() > 1) g += static_cast<Scalar>(weight_decay_) * w;
    v = static_cast<Scalar>(momentum_) * v + g;
    w -= static_cast<Scalar>(lr) * v;
  }
  return norm;
}

namespace {

std::string component_text(const StepRecord& r) {
  std::ostringstream s;
  s << "non-finite loss at step " << r.step << ": total=" << r.loss.total << " reg=" << r.loss.reg
    << " iou=" << r.loss.iou << " nwd=" << r.loss.nwd << " cls=" << r.loss.cls << " obj=" << r.loss.obj;
  return s.str();
}

}  // namespace

NonFiniteLoss::NonFiniteLoss(const StepRecord& r) : std::runtime_error(component_text(r)), record(r) {}

void write_loss_header(std::ostream& out) { out << "step,epoch,lr,total,reg,iou,nwd,cls,obj,grad_norm\n"; }

void write_loss_row(std::ostream& out, const StepRecord& r) {
  out << std::setprecision(17) << r.step << "," << r.epoch << "," << r.lr << "," << r.loss.total << "," << r.loss.reg
      << "," << r.loss.iou << "," << r.loss.nwd << "," << r.loss.cls << "," << r.loss.obj << "," << r.grad_norm
      << "\n";
}

Index total_steps(const RunConfig& config, std::size_t windows) {
  if (config.max_steps > 0) return config.max_steps;
  const Index per_epoch = (static_cast<Index>(windows) + config.batch - 1) / config.batch;
  return config.epochs * per_epoch;
}

template <typename Scalar>
std::vector<StepRecord> train(BeltCrackDet<Scalar>& model, const PreparedSplit& split, const RunConfig& config,
                              const TrainHooks& hooks) {
  if (split.windows.empty()) throw std::runtime_error("no training windows");
  if (split.frames != model.config().frames) {
    throw std::invalid_argument("model expects T=" + std::to_string(model.config().frames) + " but the split has T=" +
                                std::to_string(split.frames));
  }
  const Index steps = total_steps(config, split.windows.size());
  SgdMomentum<Scalar> opt(model.parameters(), config.momentum, config.weight_decay);
  std::mt19937_64 rng(config.seed ^ 0x5eed5eedull);

  // Targets are fixed per record; build them once.
  const Index stride = model.config().stride;
  const Index grid = config.input_size / stride;
  std::vector<CellTargets> targets;
  for (std::size_t i = 0; i < split.dataset.records.size(); ++i) {
    std::vector<Box> boxes;
    for (const auto& g : split.input_boxes(i)) boxes.push_back(g.box);
    targets.push_back(assign_targets(boxes, grid, grid, stride, config.assign_radius));
  }

  std::vector<std::size_t> order(split.windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  Index epoch = -1;
  if (hooks.loss_csv) write_loss_header(*hooks.loss_csv);

  std::vector<StepRecord> history;
  for (Index step = 0; step < steps; ++step) {
    StepRecord rec;
    rec.step = step;
    rec.lr = cosine_lr(config.lr, config.lr_final_ratio, step, steps, config.warmup_steps);
    opt.zero_grad();
    const Scalar weight = Scalar(1) / static_cast<Scalar>(config.batch);
    for (Index b = 0; b < config.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        ++epoch;
      }
      const Window& w = split.windows[order[cursor++]];
      const auto out = model(window_input<Scalar>(split, w));
      const auto loss = total_loss(out, targets[w.keyframe()], config.loss);
      scale(loss.total, weight).backward();
      const double k = 1.0 / static_cast<double>(config.batch);
      rec.loss.total += k * loss.breakdown.total;
      rec.loss.reg += k * loss.breakdown.reg;
      rec.loss.iou += k * loss.breakdown.iou;
      rec.loss.nwd += k * loss.breakdown.nwd;
      rec.loss.cls += k * loss.breakdown.cls;
      rec.loss.obj += k * loss.breakdown.obj;
    }
    rec.epoch = epoch;
    if (!std::isfinite(rec.loss.total)) throw NonFiniteLoss(rec);
    rec.grad_norm = opt.step(rec.lr, config.grad_clip);
    if (hooks.loss_csv) write_loss_row(*hooks.loss_csv, rec);
    if (hooks.on_step) hooks.on_step(rec);
    history.push_back(rec);
    if (!hooks.checkpoint_dir.empty() && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << (step + 1) << ".ckpt";
      save_checkpoint(model, (fs::path(hooks.checkpoint_dir) / name.str()).string());
    }
  }
  return history;
}

template <typename Scalar>
std::vector<std::vector<Detection>> predict(const BeltCrackDet<Scalar>& model, const PreparedSplit& split,
                                            const RunConfig& config, std::vector<Tensor<double>>* score_maps) {
  NoGradGuard no_grad;
  std::vector<std::vector<Detection>> out(split.dataset.records.size());
  if (score_maps) score_maps->assign(split.dataset.records.size(), Tensor<double>());
  const double size = static_cast<double>(config.input_size);
  for (const Window& w : split.windows) {
    const auto head = model(window_input<Scalar>(split, w));
    auto dets = nms(decode_detections(head, config.score_threshold, size, size), config.nms_iou, config.score_threshold);
    if (static_cast<Index>(dets.size()) > config.max_detections) dets.resize(static_cast<std::size_t>(config.max_detections));
    const std::size_t k = w.keyframe();
    for (auto& d : dets) {
      d.box.x_min /= split.scale_x[k];
      d.box.x_max /= split.scale_x[k];
      d.box.y_min /= split.scale_y[k];
      d.box.y_max /= split.scale_y[k];
    }
    out[k] = std::move(dets);
    if (score_maps) (*score_maps)[k] = score_map(head);
  }
  return out;
}

std::vector<std::vector<GroundTruthBox>> ground_truth(const PreparedSplit& split) {
  std::vector<std::vector<GroundTruthBox>> out;
  for (const auto& r : split.dataset.records) out.push_back(r.boxes);
  return out;
}

template <typename Scalar>
EvalReport evaluate_model(const BeltCrackDet<Scalar>& model, const PreparedSplit& split, const RunConfig& config) {
  return evaluate(predict(model, split, config), ground_truth(split));
}

#define BELTCRACK_INSTANTIATE_TRAIN(S)                                                                        \
  template std::vector<Var<S>> window_input(const PreparedSplit&, const Window&);                             \
  template class SgdMomentum<S>;                                                                              \
  template std::vector<StepRecord> train(BeltCrackDet<S>&, const PreparedSplit&, const RunConfig&,            \
                                         const TrainHooks&);                                                  \
  template std::vector<std::vector<Detection>> predict(const BeltCrackDet<S>&, const PreparedSplit&,          \
                                                       const RunConfig&, std::vector<Tensor<double>>*);       \
  template EvalReport evaluate_model(const BeltCrackDet<S>&, const PreparedSplit&, const RunConfig&);

BELTCRACK_INSTANTIATE_TRAIN(float)
BELTCRACK_INSTANTIATE_TRAIN(double)

}  // namespace beltcrack
