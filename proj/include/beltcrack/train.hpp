#pragma once

#include "beltcrack/config.hpp"
#include "beltcrack/dataset.hpp"
#include "beltcrack/metrics.hpp"
#include "beltcrack/model.hpp"

#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace beltcrack {

// A split loaded into memory at the network input size. Boxes in `dataset`
// stay in original pixel coordinates.
struct PreparedSplit {
  Dataset dataset;
  std::vector<Image> images;  // input_size x input_size
  std::vector<double> scale_x, scale_y;  // input px per original px, per record
  Index frames = 1;  // effective T; 1 in single-image mode
  std::vector<Window> windows;  // one per frame, head padded

  std::vector<GroundTruthBox> input_boxes(std::size_t record) const;
};

PreparedSplit prepare_split(Dataset dataset, std::vector<Image> images, const RunConfig& config);
// Loads annotations and images from disk; throws if the split is empty.
PreparedSplit load_split(const std::string& annotations, const std::string& image_root, const RunConfig& config);

template <typename Scalar>
std::vector<Var<Scalar>> window_input(const PreparedSplit& split, const Window& window);

// Cosine decay from lr to lr * final_ratio over total_steps, after an
// optional linear warmup.
double cosine_lr(double lr, double final_ratio, Index step, Index total_steps, Index warmup_steps);

// SGD with heavy-ball momentum (v = mu v + g, p -= lr v). Weight decay is
// added to the gradient of parameters with rank > 1.
template <typename Scalar>
class SgdMomentum {
 public:
  SgdMomentum(NamedParameters<Scalar> params, double momentum, double weight_decay);
  void zero_grad();
  // Returns the gradient norm before clipping.
  double step(double lr, double grad_clip);

 private:
  NamedParameters<Scalar> params_;
  std::vector<Tensor<Scalar>> velocity_;
  double momentum_, weight_decay_;
};

struct StepRecord {
  Index step = 0, epoch = 0;
  double lr = 0, grad_norm = 0;
  LossBreakdown loss;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const StepRecord& record);
  StepRecord record;
};

void write_loss_header(std::ostream& out);
void write_loss_row(std::ostream& out, const StepRecord& record);

struct TrainHooks {
  std::ostream* loss_csv = nullptr;
  std::string checkpoint_dir;  // periodic checkpoints when non-empty and checkpoint_every > 0
  std::function<void(const StepRecord&)> on_step;
};

Index total_steps(const RunConfig& config, std::size_t windows);

// Runs the optimizer over the split's windows, `batch` windows per step
// with gradients accumulated. Reshuffles every epoch from the config seed.
template <typename Scalar>
std::vector<StepRecord> train(BeltCrackDet<Scalar>& model, const PreparedSplit& split, const RunConfig& config,
                              const TrainHooks& hooks = {});

// Keyframe detections per record, in original image coordinates, after NMS.
template <typename Scalar>
std::vector<std::vector<Detection>> predict(const BeltCrackDet<Scalar>& model, const PreparedSplit& split,
                                            const RunConfig& config,
                                            std::vector<Tensor<double>>* score_maps = nullptr);

template <typename Scalar>
EvalReport evaluate_model(const BeltCrackDet<Scalar>& model, const PreparedSplit& split, const RunConfig& config);

std::vector<std::vector<GroundTruthBox>> ground_truth(const PreparedSplit& split);

}  // namespace beltcrack
