#include "beltcrack/config.hpp"
#include "doctest.h"

#include <filesystem>
#include <fstream>

using namespace beltcrack;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.model.frames == 5);
  CHECK(c.batch == 4);
  CHECK(c.lr == 0.01);
  CHECK(c.momentum == 0.937);
  CHECK(c.loss.nwd_constant == 12.8);
  CHECK(c.nms_iou == 0.65);
  CHECK(c.score_threshold == 0.001);
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("map round trip is exact") {
  RunConfig c;
  c.lr = 0.1 + 0.2;
  c.loss.focal_alpha = 1.0 / 3.0;
  c.train_annotations = "a b/ann.json";
  c.seed = 18446744073709551615ull;
  const RunConfig back = config_from_map(config_to_map(c));
  CHECK(back.lr == c.lr);
  CHECK(back.loss.focal_alpha == c.loss.focal_alpha);
  CHECK(back.train_annotations == c.train_annotations);
  CHECK(back.seed == c.seed);
  CHECK(config_to_map(back) == config_to_map(c));
  CHECK(config_hash(back) == config_hash(c));
  // text form parses back too
  CHECK(config_to_map(config_from_map(parse_key_values(config_text(c), "t"))) == config_to_map(c));
}

TEST_CASE("file parsing, comments, quotes and overrides") {
  const auto path = (std::filesystem::temp_directory_path() / "beltcrack_cfg_test.toml").string();
  std::ofstream(path) << "# desk run\n"
                         "frames = 3\n"
                         "train_annotations = \"data/ann#1.json\"  # quoted hash kept\n"
                         "\n"
                         "  lr=0.02\n";
  RunConfig c = load_config(path);
  CHECK(c.model.frames == 3);
  CHECK(c.train_annotations == "data/ann#1.json");
  CHECK(c.lr == 0.02);
  const std::string before = config_hash(c);
  apply_override(c, "channels=16");
  CHECK(c.model.channels == 16);
  CHECK(config_hash(c) != before);
  apply_override(c, "wavelet_basis = db2");
  CHECK(c.model.wavelet_basis == "db2");
  std::filesystem::remove(path);
}

TEST_CASE("rejections") {
  RunConfig c;
  CHECK_THROWS_WITH(apply_override(c, "nonsense=1"), doctest::Contains("unknown config key"));
  CHECK_THROWS_WITH(apply_override(c, "epochs=0"), doctest::Contains("positive"));
  CHECK_THROWS_WITH(apply_override(c, "batch=-2"), doctest::Contains("positive"));
  CHECK_THROWS_WITH(apply_override(c, "lr=-0.1"), doctest::Contains(">= 0"));
  CHECK_THROWS_WITH(apply_override(c, "channels=abc"), doctest::Contains("bad value"));
  CHECK_THROWS_WITH(apply_override(c, "channels=8.5"), doctest::Contains("bad value"));
  CHECK_THROWS(apply_override(c, "focal_alpha=1"));
  CHECK_THROWS(apply_override(c, "wavelet_basis=sym4"));
  CHECK_THROWS(apply_override(c, "precision=half"));
  CHECK_THROWS_WITH(apply_override(c, "input_size=60"), doctest::Contains("multiple of stride"));
  CHECK_THROWS(apply_override(c, "no equals sign"));
  CHECK_THROWS(parse_key_values("a = 1\na = 2\n", "dup"));
  // a failed override leaves the config untouched
  CHECK(c.epochs == 5);
  CHECK_NOTHROW(apply_override(c, "lr=0"));
}
