#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "connlab/checkpoint.hpp"
#include "support.hpp"

using namespace connlab;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("connlab_ck_" + name);
}

}  // namespace

TEST(Checkpoint, DenseRoundTripIsValueExact) {
  auto engine = make_engine(1);
  Checkpoint ck;
  ck.params = testing_support::random_dense(2, 5, engine, -1.0, 1.0);
  ck.params.weights[0](0, 0) = 0.1 + 0.2;  // needs all 17 digits
  ck.params.weights[1](3, 4) = 1e-300;
  ck.link = LinkParams{0.7, 1e-3};
  ck.step = 1234;
  ck.rng_state = "opaque";
  ck.init = nlohmann::json{{"kind", "gaussian"}, {"std", 0.02}};

  const auto path = temp_file("dense.json");
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.params.weights, ck.params.weights);
  EXPECT_EQ(back.params.depth, 2);
  EXPECT_EQ(back.link.alpha, 0.7);
  EXPECT_EQ(back.link.epsilon, 1e-3);
  EXPECT_EQ(back.step, 1234);
  EXPECT_EQ(back.rng_state, "opaque");
  EXPECT_EQ(back.init, ck.init);
  std::filesystem::remove(path);
}

TEST(Checkpoint, StructuredAndOptimizerRoundTrip) {
  auto engine = make_engine(2);
  Checkpoint ck;
  ck.params = testing_support::random_structured(2, 4, engine, 0.0, 1.0);
  Optimizer opt(AdamConfig{});
  auto grads = GradientSet::zeros_like(ck.params);
  grads.da[0].setConstant(0.3);
  opt.step(ck.params, grads);
  ck.optimizer = optimizer_to_json(opt);

  const auto back = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(ck).dump()));
  EXPECT_TRUE(back.params.is_structured());
  EXPECT_TRUE(back.params.nonneg);
  for (int l = 0; l < 2; ++l) {
    EXPECT_EQ(back.params.structured[l].a, ck.params.structured[l].a);
    EXPECT_EQ(back.params.structured[l].b, ck.params.structured[l].b);
  }
  const auto restored = optimizer_from_json(back.optimizer);
  EXPECT_EQ(restored.step_count(), 1);
  EXPECT_EQ(restored.first_moments(), opt.first_moments());
  EXPECT_EQ(restored.second_moments(), opt.second_moments());
}

TEST(Checkpoint, MalformedInputIsConfigError) {
  const auto path = temp_file("bad.json");
  {
    std::ofstream os(path);
    os << "{\"L\": 1, \"n\":";
  }
  EXPECT_THROW(load_checkpoint(path), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(temp_file("missing.json")), ConfigError);
  EXPECT_THROW(checkpoint_from_json(nlohmann::json{{"L", 1}}), ConfigError);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  Checkpoint ck;
  ck.params = ModelParams::zeros(1, 4);
  auto j = checkpoint_to_json(ck);
  j["n"] = 5;
  EXPECT_THROW(checkpoint_from_json(j), ShapeError);
  j = checkpoint_to_json(ck);
  j["L"] = 2;
  EXPECT_THROW(checkpoint_from_json(j), ShapeError);
}
