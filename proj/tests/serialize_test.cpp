#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "milnet/serialize.hpp"

namespace milnet {
namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("milnet_serialize_" + name);
}

Matrix random_bag(Rng& rng, Eigen::Index m, Eigen::Index d) {
  Matrix x(m, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng) * 3.0;
  return x;
}

TEST(ModelFile, RoundTripIsBitIdenticalForEveryVariant) {
  Rng rng(1);
  for (auto v : {Variant::MiNet, Variant::MINet, Variant::MINetDS, Variant::MINetRC}) {
    for (auto p : {PoolMethod::Max, PoolMethod::Mean, PoolMethod::LSE}) {
      NetworkSpec spec = NetworkSpec::defaults(v);
      spec.pooling = {p, 0.1 * 3};
      spec.seed = rng.next_u64();
      Model m{Network::build(spec, 7), FeatureScaler{Vector::Random(7), Vector::Random(7).cwiseAbs()}};
      // Non-trivial biases too.
      m.network.for_each_layer([&](DenseLayer& l) { l.bias().setRandom(); });
      const auto path = temp_path("model.json");
      save_model(m, path);
      const Model back = load_model(path);
      EXPECT_EQ(back.network.spec(), spec);
      EXPECT_EQ(back.network.input_dim(), 7);
      ASSERT_TRUE(back.scaler.has_value());
      EXPECT_TRUE((back.scaler->mean.array() == m.scaler->mean.array()).all());
      EXPECT_TRUE((back.scaler->scale.array() == m.scaler->scale.array()).all());
      for (int t = 0; t < 5; ++t) {
        const Matrix bag = random_bag(rng, 1 + t, 7);
        EXPECT_EQ(back.score(bag), m.score(bag));
      }
      for (std::size_t l = 0; l < m.network.trunk().size(); ++l) {
        EXPECT_TRUE((back.network.trunk()[l].weights().array() == m.network.trunk()[l].weights().array()).all());
        EXPECT_TRUE((back.network.trunk()[l].bias().array() == m.network.trunk()[l].bias().array()).all());
      }
      std::filesystem::remove(path);
    }
  }
}

TEST(ModelFile, DeepSupervisionWeightsAndSeedSurvive) {
  NetworkSpec spec = NetworkSpec::defaults(Variant::MINetDS);
  spec.ds_weights = {0.25, 0.5, 1.0};
  spec.seed = 0xFFFFFFFFFFFFFFFFull;
  const Model m{Network::build(spec, 3), std::nullopt};
  const Model back = model_from_json(model_to_json(m));
  EXPECT_EQ(back.network.spec(), spec);
  EXPECT_FALSE(back.scaler.has_value());
}

TEST(ModelFile, MalformedDocumentsAreDataErrors) {
  const Model m{Network::build(NetworkSpec::defaults(Variant::MINet), 3), std::nullopt};
  auto j = model_to_json(m);
  auto bad_format = j;
  bad_format["format"] = "something-else";
  EXPECT_THROW(model_from_json(bad_format), DataError);
  auto bad_version = j;
  bad_version["version"] = 99;
  EXPECT_THROW(model_from_json(bad_version), DataError);
  auto missing = j;
  missing.erase("trunk");
  EXPECT_THROW(model_from_json(missing), DataError);
  auto wrong_shape = j;
  wrong_shape["input_dim"] = 4;
  EXPECT_THROW(model_from_json(wrong_shape), DataError);
  auto bad_variant = j;
  bad_variant["spec"]["variant"] = "nope";
  EXPECT_THROW(model_from_json(bad_variant), DataError);

  const auto path = temp_path("garbage.json");
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_model(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_model(temp_path("does_not_exist.json")), DataError);
}

}  // namespace
}  // namespace milnet
