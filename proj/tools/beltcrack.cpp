#include "beltcrack/config.hpp"
#include "beltcrack/cost.hpp"
#include "beltcrack/metrics.hpp"
#include "beltcrack/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace beltcrack;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_device() {
  const char* dev = std::getenv("BELTCRACK_DEVICE");
  if (dev && std::string(dev) != "cpu" && std::string(dev) != "") {
    throw std::runtime_error(std::string("BELTCRACK_DEVICE=") + dev + ": only cpu is supported");
  }
}

RunConfig build_config(const std::string& file, const std::vector<std::string>& overrides) {
  RunConfig cfg = file.empty() ? RunConfig{} : load_config(file);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_manifest(const fs::path& run_dir, const std::string& command, const RunConfig& cfg, json extra = json::object()) {
  fs::create_directories(run_dir);
  write_text(run_dir / "config.cfg", config_text(cfg));
  json m = extra;
  m["command"] = command;
  m["config_hash"] = config_hash(cfg);
  m["seed"] = cfg.seed;
  m["device"] = "cpu";
  m["checkpoint_version"] = kCheckpointVersion;
  m["config"] = config_to_map(cfg);
  write_text(run_dir / "manifest.json", m.dump(2) + "\n");
}

void warn_all(const Dataset& ds) {
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
}

void write_eval_outputs(const EvalReport& rep, const fs::path& dir) {
  write_report(rep, (dir / "report.json").string());
  write_pr_csv(rep.pr_points, (dir / "pr.csv").string());
  write_pr_plot(rep.pr_points, rep.ap50, (dir / "pr.png").string());
  std::cout << "AP50 " << rep.ap50 << "  P " << rep.precision << "  R " << rep.recall << "  F1 " << rep.f1
            << "  (threshold " << rep.score_threshold << ")\n";
}

std::map<std::int64_t, std::vector<Detection>> by_image_id(const PreparedSplit& split,
                                                           const std::vector<std::vector<Detection>>& dets) {
  std::map<std::int64_t, std::vector<Detection>> out;
  for (std::size_t i = 0; i < dets.size(); ++i) out[split.dataset.records[i].image_id] = dets[i];
  return out;
}

// Model fields come from the checkpoint.
RunConfig with_checkpoint_model(RunConfig cfg, const std::string& checkpoint) {
  cfg.model = read_checkpoint_config(checkpoint);
  validate(cfg);
  return cfg;
}

template <typename Scalar>
BeltCrackDet<Scalar> load_model(const RunConfig& cfg, const std::string& checkpoint) {
  Rng rng(cfg.seed);
  BeltCrackDet<Scalar> model(cfg.model, rng);
  load_checkpoint(model, checkpoint);
  return model;
}

PreparedSplit load_for_model(const std::string& ann, const std::string& root, RunConfig& cfg) {
  if (ann.empty()) throw std::runtime_error("no annotation file configured for this split");
  PreparedSplit split = load_split(ann, root, cfg);
  warn_all(split.dataset);
  if (split.frames != cfg.model.frames) {
    throw std::runtime_error("split is in single-image mode (T=1) but the model expects T=" +
                             std::to_string(cfg.model.frames));
  }
  return split;
}

template <typename Scalar>
int run_train(RunConfig cfg, const fs::path& run_dir) {
  if (cfg.train_annotations.empty()) throw std::runtime_error("train_annotations is not set");
  PreparedSplit split = load_split(cfg.train_annotations, cfg.train_images, cfg);
  warn_all(split.dataset);
  if (split.frames != cfg.model.frames) {
    std::cerr << "warning: training in single-image mode, T forced to 1\n";
    cfg.model.frames = split.frames;
  }
  Rng rng(cfg.seed);
  BeltCrackDet<Scalar> model(cfg.model, rng);
  std::ofstream csv(run_dir / "loss.csv");
  TrainHooks hooks;
  hooks.loss_csv = &csv;
  hooks.checkpoint_dir = (run_dir / "checkpoints").string();
  if (cfg.checkpoint_every > 0) fs::create_directories(hooks.checkpoint_dir);
  const Index steps = total_steps(cfg, split.windows.size());
  hooks.on_step = [steps](const StepRecord& r) {
    if (r.step % 10 == 0 || r.step + 1 == steps) {
      std::cout << "step " << r.step + 1 << "/" << steps << "  loss " << r.loss.total << "  lr " << r.lr << "\n";
    }
  };
  try {
    train(model, split, cfg, hooks);
  } catch (const NonFiniteLoss&) {
    csv.flush();
    throw;
  }
  save_checkpoint(model, (run_dir / "model.ckpt").string());
  std::cout << "checkpoint " << (run_dir / "model.ckpt").string() << "\n";
  if (!cfg.val_annotations.empty()) {
    const PreparedSplit val = load_for_model(cfg.val_annotations, cfg.val_images, cfg);
    write_eval_outputs(evaluate_model(model, val, cfg), run_dir / "val");
  } else {
    std::cout << "no val_annotations configured; skipping validation\n";
  }
  return 0;
}

template <typename Scalar>
int run_eval(RunConfig cfg, const std::string& checkpoint, const std::string& split_name, const fs::path& run_dir) {
  cfg = with_checkpoint_model(cfg, checkpoint);
  const bool train_split = split_name == "train";
  const PreparedSplit split = load_for_model(train_split ? cfg.train_annotations : cfg.val_annotations,
                                             train_split ? cfg.train_images : cfg.val_images, cfg);
  const auto model = load_model<Scalar>(cfg, checkpoint);
  const auto dets = predict(model, split, cfg);
  write_coco_results(by_image_id(split, dets), (run_dir / "detections.json").string());
  write_eval_outputs(evaluate(dets, ground_truth(split)), run_dir);
  return 0;
}

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

template <typename Scalar>
int run_infer(RunConfig cfg, const std::string& checkpoint, const fs::path& input, bool heatmap, const fs::path& run_dir) {
  cfg = with_checkpoint_model(cfg, checkpoint);
  if (!fs::is_directory(input)) throw std::runtime_error("not a directory: " + input.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input))
    if (e.is_regular_file() && is_image(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no images in " + input.string());

  Dataset ds;
  ds.image_root = input.string();
  std::vector<Image> images;
  json index = json::array();
  for (std::size_t i = 0; i < files.size(); ++i) {
    images.push_back(read_image(files[i].string()));
    FrameRecord r;
    r.image_id = static_cast<std::int64_t>(i + 1);
    r.sequence_id = input.filename().string();
    r.frame_index = static_cast<Index>(i);
    r.image_path = files[i].filename().string();
    r.width = static_cast<int>(images.back().dim(2));
    r.height = static_cast<int>(images.back().dim(1));
    index.push_back({{"id", r.image_id}, {"file_name", r.image_path}, {"frame_index", r.frame_index}});
    ds.records.push_back(std::move(r));
  }
  const PreparedSplit split = prepare_split(std::move(ds), images, cfg);
  const auto model = load_model<Scalar>(cfg, checkpoint);
  std::vector<Tensor<double>> maps;
  const auto dets = predict(model, split, cfg, heatmap ? &maps : nullptr);
  write_coco_results(by_image_id(split, dets), (run_dir / "detections.json").string());
  write_text(run_dir / "images.json", index.dump(1) + "\n");
  if (heatmap) {
    for (std::size_t i = 0; i < files.size(); ++i) {
      const fs::path out = run_dir / "heatmaps" / (files[i].stem().string() + ".png");
      write_image(out.string(), render_heatmap(maps[i], images[i]));
    }
  }
  std::size_t total = 0;
  for (const auto& d : dets) total += d.size();
  std::cout << files.size() << " frames, " << total << " detections -> " << (run_dir / "detections.json").string()
            << "\n";
  return 0;
}

template <typename Scalar>
int run_cost(const RunConfig& cfg, int runs, const fs::path& run_dir) {
  Rng rng(cfg.seed);
  const BeltCrackDet<Scalar> model(cfg.model, rng);
  const CostReport rep = count_cost(model, cfg.input_size, runs);
  std::cout << cost_table(rep);
  if (!run_dir.empty()) {
    json j;
    j["input_size"] = rep.input_size;
    j["parameters"] = rep.parameters;
    j["macs"] = rep.macs;
    j["windows_per_second"] = rep.frames_per_second;
    for (const auto& m : rep.modules) j["modules"][m.name] = {{"parameters", m.parameters}, {"macs", m.macs}};
    write_text(run_dir / "cost.json", j.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conveyor belt crack detector"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;
  std::string run_dir;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a config key (key=value)")->take_all();
  };

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_config(train_cmd);
  train_cmd->add_option("-o,--run-dir", run_dir, "output run directory")->required();

  std::string checkpoint, split = "val", detections_file;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or a detections file on a split");
  add_config(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint");
  eval_cmd->add_option("--detections", detections_file, "COCO results file to score instead of a model");
  eval_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
  eval_cmd->add_option("-o,--run-dir", run_dir, "output run directory")->required();

  std::string input_dir;
  bool heatmap = false;
  auto* infer_cmd = app.add_subcommand("infer", "detect cracks in a directory of frames");
  add_config(infer_cmd);
  infer_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer_cmd->add_option("-i,--input", input_dir, "directory of frames, ordered by file name")->required();
  infer_cmd->add_flag("--heatmap", heatmap, "write a score heatmap per frame");
  infer_cmd->add_option("-o,--run-dir", run_dir, "output run directory")->required();

  SynthConfig synth;
  int sequences = 1;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic belt dataset");
  synth_cmd->add_option("-o,--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "random seed");
  synth_cmd->add_option("--sequences", sequences, "number of sequences")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--width", synth.width);
  synth_cmd->add_option("--height", synth.height);
  synth_cmd->add_option("--frames", synth.frames, "frames per sequence");
  synth_cmd->add_option("--speed", synth.belt_speed, "belt speed, px/frame");
  synth_cmd->add_option("--cracks", synth.crack_count, "cracks per sequence");
  synth_cmd->add_option("--crack-min", synth.crack_min);
  synth_cmd->add_option("--crack-max", synth.crack_max);
  synth_cmd->add_option("--thickness", synth.crack_thickness);
  synth_cmd->add_option("--noise", synth.noise);
  synth_cmd->add_option("--texture", synth.texture_density, "grain spots per 100 px^2");
  synth_cmd->add_option("--name", synth.sequence_id, "sequence id prefix");

  std::string pr_csv, plot_out;
  auto* plot_cmd = app.add_subcommand("plot-pr", "plot a PR CSV");
  plot_cmd->add_option("--csv", pr_csv, "PR CSV from eval")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("-o,--out", plot_out, "output PNG")->required();

  int runs = 3;
  auto* cost_cmd = app.add_subcommand("cost", "parameter and multiply-add counts, throughput");
  add_config(cost_cmd);
  cost_cmd->add_option("--runs", runs, "timed forward passes")->check(CLI::NonNegativeNumber);
  cost_cmd->add_option("-o,--run-dir", run_dir, "optional output run directory");

  CLI11_PARSE(app, argc, argv);

  try {
    check_device();
    if (train_cmd->parsed()) {
      const RunConfig cfg = build_config(config_file, overrides);
      write_manifest(run_dir, "train", cfg);
      return cfg.precision == "float" ? run_train<float>(cfg, run_dir) : run_train<double>(cfg, run_dir);
    }
    if (eval_cmd->parsed()) {
      if (checkpoint.empty() == detections_file.empty()) throw std::runtime_error("eval needs exactly one of --checkpoint or --detections");
      const RunConfig cfg = build_config(config_file, overrides);
      write_manifest(run_dir, "eval", cfg, {{"split", split}, {"checkpoint", checkpoint}, {"detections", detections_file}});
      if (!checkpoint.empty()) {
        return cfg.precision == "float" ? run_eval<float>(cfg, checkpoint, split, run_dir)
                                        : run_eval<double>(cfg, checkpoint, split, run_dir);
      }
      const bool train_split = split == "train";
      const std::string ann = train_split ? cfg.train_annotations : cfg.val_annotations;
      if (ann.empty()) throw std::runtime_error("no annotation file configured for split " + split);
      const Dataset ds = load_dataset(ann, train_split ? cfg.train_images : cfg.val_images, false);
      warn_all(ds);
      if (ds.records.empty()) throw std::runtime_error("split is empty: " + ann);
      const auto results = read_coco_results(detections_file);
      std::vector<std::vector<Detection>> dets;
      std::vector<std::vector<GroundTruthBox>> gts;
      for (const auto& r : ds.records) {
        const auto it = results.find(r.image_id);
        dets.push_back(it == results.end() ? std::vector<Detection>{} : it->second);
        gts.push_back(r.boxes);
      }
      write_eval_outputs(evaluate(dets, gts), run_dir);
      return 0;
    }
    if (infer_cmd->parsed()) {
      const RunConfig cfg = build_config(config_file, overrides);
      write_manifest(run_dir, "infer", cfg, {{"checkpoint", checkpoint}, {"input", input_dir}});
      return cfg.precision == "float" ? run_infer<float>(cfg, checkpoint, input_dir, heatmap, run_dir)
                                      : run_infer<double>(cfg, checkpoint, input_dir, heatmap, run_dir);
    }
    if (synth_cmd->parsed()) {
      const std::string ann = write_synth_dataset(synth, sequences, synth_seed, synth_out);
      std::cout << "wrote " << ann << "\n";
      return 0;
    }
    if (plot_cmd->parsed()) {
      const auto points = read_pr_csv(pr_csv);
      write_pr_plot(points, average_precision(points), plot_out);
      std::cout << "wrote " << plot_out << "\n";
      return 0;
    }
    if (cost_cmd->parsed()) {
      const RunConfig cfg = build_config(config_file, overrides);
      if (!run_dir.empty()) write_manifest(run_dir, "cost", cfg);
      return cfg.precision == "float" ? run_cost<float>(cfg, runs, run_dir) : run_cost<double>(cfg, runs, run_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
