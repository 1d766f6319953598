// Whole-model tests: construction, the image-pair forward pass, parameter
// accounting against closed-form arithmetic, and checkpoint save/load with
// strict name/shape/dtype agreement.

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "clf/model.hpp"
#include "clf/random.hpp"
#include "clf/tensor.hpp"

namespace {

namespace fs = std::filesystem;
using clf::Tensor;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("clf_model_test_" + std::to_string(std::rand()) +
            std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small architecture (output stride 4) so I/O tests stay quick.
clf::ModelConfig tiny_config() {
  clf::ModelConfig cfg;
  cfg.backbone.initial_dim = 2;
  cfg.backbone.block_dims = {2, 4};
  cfg.backbone.output_stride = 4;
  cfg.attention.d_model = 4;
  cfg.attention.n_heads = 2;
  cfg.attention.ffn_dim = 4;
  cfg.attention.layer_pattern = {clf::kLayerSelf, clf::kLayerCross};
  cfg.tau = 0.1;
  return cfg;
}

Tensor<double> random_image(std::size_t h, std::size_t w, clf::Rng& rng) {
  Tensor<double> img = Tensor<double>::zeros({1, h, w});
  img.fill_uniform(rng, 0.0, 1.0);
  return img;
}

// Parameter totals from the layer recipes, written out independently.
std::size_t oracle_model_params(const clf::ModelConfig& cfg) {
  std::size_t n = 9 * cfg.backbone.initial_dim + 2 * cfg.backbone.initial_dim;
  std::size_t cin = cfg.backbone.initial_dim;
  for (std::size_t dim : cfg.backbone.block_dims) {
    n += 9 * cin * dim + 2 * dim + 9 * dim * dim + 2 * dim + cin * dim + 2 * dim;
    n += 2 * (9 * dim * dim + 2 * dim);
    cin = dim;
  }
  n += cin * cin;
  std::size_t d = cfg.attention.d_model, f = cfg.attention.ffn_dim;
  std::size_t per_layer = 3 * (d * d + d)      // q, k, v
                          + (2 * d * d + d)    // merge
                          + 2 * d              // norm1
                          + (2 * d * f + f)    // ffn1
                          + (f * d + d)        // ffn2
                          + 2 * d;             // norm2
  n += cfg.attention.layer_pattern.size() * per_layer;
  return n;
}

}  // namespace

TEST_CASE("published configs validate") {
  REQUIRE_NOTHROW(clf::validate_model_config(clf::student_model_config()));
  REQUIRE_NOTHROW(clf::validate_model_config(clf::teacher_model_config()));
  // both share output stride 16, so score matrices line up on equal images
  REQUIRE(clf::student_model_config().backbone.output_stride == 16);
  REQUIRE(clf::teacher_model_config().backbone.output_stride == 16);

  clf::ModelConfig bad = clf::student_model_config();
  bad.attention.d_model = 16;  // backbone emits 32
  REQUIRE_THROWS_AS(clf::validate_model_config(bad), clf::config_error);
  bad = clf::student_model_config();
  bad.tau = 0.0;
  REQUIRE_THROWS_AS(clf::validate_model_config(bad), clf::config_error);
}

TEST_CASE("student parameter count matches closed-form arithmetic") {
  clf::Model<double> student(clf::student_model_config(), 1);
  std::size_t counted = clf::param_count<double>(student);
  REQUIRE(counted == oracle_model_params(clf::student_model_config()));
  INFO("student parameter count: " << counted);
  REQUIRE(counted > 0);
}

TEST_CASE("forward pass produces an aligned score matrix") {
  clf::Model<double> model(clf::student_model_config(), 2);
  clf::Rng rng(40);
  Tensor<double> a = random_image(64, 64, rng);
  Tensor<double> b = random_image(64, 48, rng);
  auto ps = model.forward_pair(a, b);
  REQUIRE(ps.grid_a_h == 4);
  REQUIRE(ps.grid_a_w == 4);
  REQUIRE(ps.grid_b_h == 4);
  REQUIRE(ps.grid_b_w == 3);
  REQUIRE(ps.score.s.shape() == clf::Shape{16, 12});
  REQUIRE(ps.score.tau == 0.1);
  for (double v : ps.score.s.values()) REQUIRE(std::isfinite(v));
}

TEST_CASE("tau scales scores inversely") {
  clf::ModelConfig c1 = tiny_config(), c2 = tiny_config();
  c2.tau = 1.0;
  clf::Model<double> m1(c1, 3), m2(c2, 3);  // same seed, same weights
  clf::Rng rng(41);
  Tensor<double> a = random_image(8, 8, rng);
  Tensor<double> b = random_image(8, 8, rng);
  auto s1 = m1.forward_pair(a, b);
  auto s2 = m2.forward_pair(a, b);
  for (std::size_t i = 0; i < s1.score.s.numel(); ++i)
    REQUIRE(s1.score.s.values()[i] ==
            Catch::Approx(10.0 * s2.score.s.values()[i]).margin(1e-9));
}

TEST_CASE("model construction is deterministic in the seed") {
  clf::Model<double> m1(tiny_config(), 5), m2(tiny_config(), 5), m3(tiny_config(), 6);
  auto p1 = m1.named_params(), p2 = m2.named_params(), p3 = m3.named_params();
  REQUIRE(p1.size() == p2.size());
  bool same12 = true, same13 = true;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    if (p1[i].second.values() != p2[i].second.values()) same12 = false;
    if (p1[i].second.values() != p3[i].second.values()) same13 = false;
  }
  REQUIRE(same12);
  REQUIRE_FALSE(same13);
}

TEST_CASE("checkpoints round-trip weights and architecture") {
  TempDir tmp;
  std::string path = (tmp.path / "model.clfw").string();
  clf::Model<double> model(tiny_config(), 7);
  clf::save_model(model, path);
  clf::Model<double> back = clf::load_model<double>(path);

  REQUIRE(back.config().backbone.initial_dim == 2);
  REQUIRE(back.config().backbone.block_dims == std::vector<std::size_t>{2, 4});
  REQUIRE(back.config().backbone.output_stride == 4);
  REQUIRE(back.config().attention.d_model == 4);
  REQUIRE(back.config().attention.n_heads == 2);
  REQUIRE(back.config().attention.ffn_dim == 4);
  REQUIRE(back.config().attention.layer_pattern ==
          std::vector<int>{clf::kLayerSelf, clf::kLayerCross});
  REQUIRE(back.config().tau == 0.1);

  auto pa = model.named_params(), pb = back.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    REQUIRE(pa[i].second.values() == pb[i].second.values());
  }

  clf::Rng rng(42);
  Tensor<double> a = random_image(8, 8, rng);
  Tensor<double> b = random_image(8, 8, rng);
  REQUIRE(model.forward_pair(a, b).score.s.values() ==
          back.forward_pair(a, b).score.s.values());
}

TEST_CASE("loading rejects missing, unknown, and mismatched parameters") {
  TempDir tmp;
  std::string path = (tmp.path / "model.clfw").string();
  clf::Model<double> model(tiny_config(), 8);
  clf::save_model(model, path);
  clf::WeightsMap wm = clf::load_weights(path);

  SECTION("missing parameter is named") {
    clf::WeightsMap damaged = wm;
    std::string victim = "backbone.stem.w";
    damaged.entries.erase(
        std::remove_if(damaged.entries.begin(), damaged.entries.end(),
                       [&](const clf::WeightEntry& e) { return e.name == victim; }),
        damaged.entries.end());
    std::string p2 = (tmp.path / "missing.clfw").string();
    clf::save_weights(damaged, p2);
    try {
      clf::load_model<double>(p2);
      FAIL("expected format_error");
    } catch (const clf::format_error& e) {
      REQUIRE(std::string(e.what()).find(victim) != std::string::npos);
    }
  }

  SECTION("unknown parameter is named") {
    clf::WeightsMap damaged = wm;
    damaged.add("loftr.layer9.q.w", Tensor<double>::zeros({2, 2}));
    std::string p2 = (tmp.path / "extra.clfw").string();
    clf::save_weights(damaged, p2);
    try {
      clf::load_model<double>(p2);
      FAIL("expected format_error");
    } catch (const clf::format_error& e) {
      REQUIRE(std::string(e.what()).find("loftr.layer9.q.w") != std::string::npos);
    }
  }

  SECTION("shape mismatch is named") {
    clf::WeightsMap damaged = wm;
    for (auto& e : damaged.entries)
      if (e.name == "loftr.layer0.q.b") {
        e.shape = {8};
        e.f64.assign(8, 0.0);
      }
    std::string p2 = (tmp.path / "shape.clfw").string();
    clf::save_weights(damaged, p2);
    try {
      clf::load_model<double>(p2);
      FAIL("expected format_error");
    } catch (const clf::format_error& e) {
      REQUIRE(std::string(e.what()).find("loftr.layer0.q.b") != std::string::npos);
    }
  }

  SECTION("dtype mismatch is rejected") {
    REQUIRE(clf::weights_dtype(wm) == 1);
    REQUIRE_THROWS_AS(clf::load_model<float>(path), clf::format_error);
  }
}

TEST_CASE("single-precision checkpoints round-trip") {
  TempDir tmp;
  std::string path = (tmp.path / "model32.clfw").string();
  clf::Model<float> model(tiny_config(), 9);
  clf::save_model(model, path);
  REQUIRE(clf::weights_dtype(clf::load_weights(path)) == 0);
  clf::Model<float> back = clf::load_model<float>(path);
  auto pa = model.named_params(), pb = back.named_params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    REQUIRE(pa[i].second.values() == pb[i].second.values());
  REQUIRE_THROWS_AS(clf::load_model<double>(path), clf::format_error);
}
