#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "adaseg/ops.hpp"
#include "adaseg/segmodel.hpp"
#include "gradcheck.hpp"

using adaseg::Rng;
using adaseg::ag::Tensor;
namespace ag = adaseg::ag;
namespace model = adaseg::model;
namespace fs = std::filesystem;

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.queries = 4;
  cfg.classes = 5;
  cfg.width = 16;
  cfg.heads = 4;
  cfg.stages = 2;
  cfg.image_size = 32;
  return cfg;
}

Tensor random_image(const model::ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return gradcheck::random_tensor({3, cfg.image_size, cfg.image_size}, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("init is deterministic and groups are complete") {
  auto cfg = tiny_config();
  auto a = model::init_params(cfg, 7);
  auto b = model::init_params(cfg, 7);
  CHECK(a.checksum() == b.checksum());
  auto c = model::init_params(cfg, 8);
  CHECK(a.checksum() != c.checksum());

  auto groups = a.group_names();
  for (const auto& g : model::model_groups())
    CHECK(std::find(groups.begin(), groups.end(), g) != groups.end());
}

TEST_CASE("parameter count matches the closed-form count") {
  for (auto cfg : {tiny_config(), model::ModelConfig{}}) {
    auto ps = model::init_params(cfg, 3);
    CHECK(ps.total_params() == model::expected_param_count(cfg));
  }
}

TEST_CASE("forward output shapes and determinism") {
  auto cfg = tiny_config();
  auto ps = model::init_params(cfg, 1);
  Tensor img = random_image(cfg, 2);

  auto out1 = model::forward(ps, cfg, img);
  CHECK(out1.class_logits.shape() == ag::Shape{cfg.queries, cfg.classes + 1});
  CHECK(out1.mask_logits.shape() == ag::Shape{cfg.queries, cfg.image_size / 4, cfg.image_size / 4});
  CHECK(out1.mask_features.shape() == ag::Shape{cfg.queries, cfg.width});
  CHECK(out1.feat_1_32.shape() == ag::Shape{cfg.pixel_width(), cfg.image_size / 32, cfg.image_size / 32});

  auto out2 = model::forward(ps, cfg, img);
  CHECK(out1.class_logits.data() == out2.class_logits.data());
  CHECK(out1.mask_logits.data() == out2.mask_logits.data());

  for (double v : out1.class_logits.data()) CHECK(std::isfinite(v));
  for (double v : out1.mask_logits.data()) CHECK(std::isfinite(v));

  Tensor bad = random_image(model::ModelConfig{}, 3);
  CHECK_THROWS_WITH_AS(model::forward(ps, cfg, bad), doctest::Contains("image shape"),
                       std::runtime_error);
}

TEST_CASE("initial no-object probability is around 0.9") {
  model::ModelConfig cfg;
  cfg.image_size = 32;
  cfg.width = 32;
  cfg.queries = 8;
  auto ps = model::init_params(cfg, 5);
  auto out = model::forward(ps, cfg, random_image(cfg, 6));
  const int c1 = cfg.classes + 1;
  double mean = 0;
  for (int q = 0; q < cfg.queries; ++q) {
    double mx = -1e300, sum = 0;
    for (int c = 0; c < c1; ++c) mx = std::max(mx, out.class_logits.at(q * c1 + c));
    for (int c = 0; c < c1; ++c) sum += std::exp(out.class_logits.at(q * c1 + c) - mx);
    mean += std::exp(out.class_logits.at(q * c1 + cfg.classes) - mx) / sum;
  }
  mean /= cfg.queries;
  CHECK(mean > 0.85);
  CHECK(mean < 0.95);
}

TEST_CASE("every parameter group influences the outputs") {
  auto cfg = tiny_config();
  auto ps = model::init_params(cfg, 11);
  Tensor img = random_image(cfg, 12);
  auto out = model::forward(ps, cfg, img);
  Tensor score = ag::add(ag::sum_all(ag::mul(out.class_logits, out.class_logits)),
                         ag::sum_all(ag::mul(out.mask_logits, out.mask_logits)));

  std::vector<Tensor> wrt;
  for (auto& e : ps.entries()) wrt.push_back(e.t);
  auto grads = ag::backward(score, wrt);

  std::map<std::string, double> group_norm;
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    double n = 0;
    for (double v : grads[i].data()) n += v * v;
    group_norm[ps.entries()[i].group] += n;
  }
  for (const auto& g : model::model_groups()) {
    INFO("group ", g);
    CHECK(group_norm[g] > 0.0);
  }
}

TEST_CASE("query permutation covariance") {
  auto cfg = tiny_config();
  auto ps = model::init_params(cfg, 21);
  Tensor img = random_image(cfg, 22);
  auto out = model::forward(ps, cfg, img);

  // rotate query embedding rows by one
  auto ps2 = ps.clone(true);
  {
    auto& qe = ps2.at(model::kTransformerBlock, "query_embed");
    auto& d = qe.leaf_data();
    std::vector<double> rot(d.size());
    const int q_count = cfg.queries, w = cfg.width;
    for (int q = 0; q < q_count; ++q)
      for (int j = 0; j < w; ++j)
        rot[static_cast<std::size_t>(q) * w + j] = d[static_cast<std::size_t>((q + 1) % q_count) * w + j];
    d = rot;
  }
  auto out2 = model::forward(ps2, cfg, img);

  const int c1 = cfg.classes + 1, m = cfg.mask_size();
  for (int q = 0; q < cfg.queries; ++q) {
    const int src = (q + 1) % cfg.queries;
    for (int c = 0; c < c1; ++c)
      CHECK(out2.class_logits.at(q * c1 + c) ==
            doctest::Approx(out.class_logits.at(src * c1 + c)).epsilon(1e-12));
    for (int i = 0; i < m * m; ++i)
      CHECK(out2.mask_logits.at(static_cast<std::int64_t>(q) * m * m + i) ==
            doctest::Approx(out.mask_logits.at(static_cast<std::int64_t>(src) * m * m + i)).epsilon(1e-12));
  }
}

TEST_CASE("semantic map equals the per-pixel aggregation oracle") {
  auto cfg = tiny_config();
  Rng rng(31);
  model::SegOutput out;
  out.class_logits = gradcheck::random_tensor({cfg.queries, cfg.classes + 1}, rng, -2, 2);
  out.mask_logits = gradcheck::random_tensor({cfg.queries, cfg.mask_size(), cfg.mask_size()}, rng, -3, 3);
  auto map = model::semantic_map(out, cfg);
  REQUIRE(static_cast<int>(map.size()) == cfg.image_size * cfg.image_size);

  const int c1 = cfg.classes + 1, m = cfg.mask_size();
  for (int pix = 0; pix < m * m; ++pix) {
    double best = -1;
    int best_c = 0;
    for (int c = 0; c < cfg.classes; ++c) {
      double score = 0;
      for (int q = 0; q < cfg.queries; ++q) {
        double mx = -1e300, sum = 0;
        for (int j = 0; j < c1; ++j) mx = std::max(mx, out.class_logits.at(q * c1 + j));
        for (int j = 0; j < c1; ++j) sum += std::exp(out.class_logits.at(q * c1 + j) - mx);
        const double p = std::exp(out.class_logits.at(q * c1 + c) - mx) / sum;
        const double z = out.mask_logits.at(static_cast<std::int64_t>(q) * m * m + pix);
        score += p / (1.0 + std::exp(-z));
      }
      if (score > best) {
        best = score;
        best_c = c;
      }
    }
    // compare against the upsampled map at a pixel inside this cell
    const int y = (pix / m) * 4, x = (pix % m) * 4;
    CHECK(map[static_cast<std::size_t>(y) * cfg.image_size + x] == best_c);
  }
}

TEST_CASE("semantic map degenerate cases") {
  auto cfg = tiny_config();
  const int c1 = cfg.classes + 1, m = cfg.mask_size();

  // one query, full confidence on class 3, all-positive mask
  {
    std::vector<double> cl(static_cast<std::size_t>(cfg.queries) * c1, -40.0);
    cl[0 * c1 + 3] = 40.0;
    for (int q = 1; q < cfg.queries; ++q) cl[static_cast<std::size_t>(q) * c1 + cfg.classes] = 40.0;
    std::vector<double> ml(static_cast<std::size_t>(cfg.queries) * m * m, -40.0);
    for (int i = 0; i < m * m; ++i) ml[static_cast<std::size_t>(0) * m * m + i] = 10.0;
    model::SegOutput out;
    out.class_logits = Tensor::from({cfg.queries, c1}, cl);
    out.mask_logits = Tensor::from({cfg.queries, m, m}, ml);
    for (int v : model::semantic_map(out, cfg)) CHECK(v == 3);
  }

  // every query fully no-object: fallback class 0
  {
    std::vector<double> cl(static_cast<std::size_t>(cfg.queries) * c1, -40.0);
    for (int q = 0; q < cfg.queries; ++q) cl[static_cast<std::size_t>(q) * c1 + cfg.classes] = 40.0;
    model::SegOutput out;
    out.class_logits = Tensor::from({cfg.queries, c1}, cl);
    out.mask_logits = Tensor::full({cfg.queries, m, m}, 1.3);
    for (int v : model::semantic_map(out, cfg)) CHECK(v == 0);
  }
}

TEST_CASE("semantic map is invariant to per-query class-logit shifts") {
  auto cfg = tiny_config();
  Rng rng(41);
  model::SegOutput out;
  out.class_logits = gradcheck::random_tensor({cfg.queries, cfg.classes + 1}, rng, -2, 2);
  out.mask_logits = gradcheck::random_tensor({cfg.queries, cfg.mask_size(), cfg.mask_size()}, rng, -3, 3);
  auto map1 = model::semantic_map(out, cfg);

  std::vector<double> shifted = out.class_logits.data();
  const int c1 = cfg.classes + 1;
  for (int c = 0; c < c1; ++c) shifted[static_cast<std::size_t>(2) * c1 + c] += 3.7;
  model::SegOutput out2;
  out2.class_logits = Tensor::from({cfg.queries, c1}, shifted);
  out2.mask_logits = out.mask_logits;
  CHECK(model::semantic_map(out2, cfg) == map1);
}

TEST_CASE("checkpoint round-trip is byte-stable") {
  auto cfg = tiny_config();
  adaseg::nn::Checkpoint ck;
  ck.meta["kind"] = "model";
  ck.meta["queries"] = std::to_string(cfg.queries);
  ck.sets["model"] = model::init_params(cfg, 99);

  const auto dir = fs::temp_directory_path() / "adaseg_ckpt_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.ckpt").string(), p2 = (dir / "b.ckpt").string();
  ck.save(p1);
  auto loaded = adaseg::nn::Checkpoint::load(p1);
  CHECK(loaded.meta.at("kind") == "model");
  CHECK(loaded.sets.at("model").checksum() == ck.sets.at("model").checksum());
  loaded.save(p2);

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(p1) == slurp(p2));
}
