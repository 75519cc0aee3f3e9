#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "mmkd/errors.hpp"
#include "mmkd/modal_net.hpp"

using namespace mmkd;

namespace {

ModalSample sample_2x3() { return {{0.5, -1.0}, {2.0, 0.25, -0.75}, 1}; }

}  // namespace

TEST_CASE("construction is deterministic in the seed") {
  const auto a = new_modal_net(2, 3, 5, 4, 2, 42);
  const auto b = new_modal_net(2, 3, 5, 4, 2, 42);
  const auto c = new_modal_net(2, 3, 5, 4, 2, 43);
  CHECK(serialize(a) == serialize(b));
  CHECK(serialize(a) != serialize(c));
}

TEST_CASE("layer shapes, zero biases and Glorot bounds") {
  const auto net = new_modal_net(2, 3, 5, 4, 3, 1);
  REQUIRE(net.layers().size() == 4);
  CHECK(net.depth() == 3);
  CHECK(net.input_dim() == 7);
  CHECK(net.layers()[0].weight.shape() == Shape{5, 7});
  CHECK(net.layers()[1].weight.shape() == Shape{5, 5});
  CHECK(net.layers()[3].weight.shape() == Shape{4, 5});
  for (const auto& l : net.layers()) {
    for (double b : l.bias.data()) CHECK(b == 0.0);
    const double bound = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    for (double w : l.weight.data()) CHECK(std::abs(w) <= bound);
  }
  CHECK(net.parameter_count() == 5 * 7 + 5 + 2 * (5 * 5 + 5) + 4 * 5 + 4);
}

TEST_CASE("absent modalities are zero and mask bits mark presence") {
  const auto net = new_modal_net(2, 3, 4, 3, 1, 0);
  const auto s = sample_2x3();
  CHECK(assemble_input(net, s, ModalityMode::TextOnly) == std::vector<double>{0.5, -1.0, 0, 0, 0, 1, 0});
  CHECK(assemble_input(net, s, ModalityMode::ImageOnly) == std::vector<double>{0, 0, 2.0, 0.25, -0.75, 0, 1});
  CHECK(assemble_input(net, s, ModalityMode::Joint) == std::vector<double>{0.5, -1.0, 2.0, 0.25, -0.75, 1, 1});
}

TEST_CASE("forward shapes and activation matrices") {
  const auto net = new_modal_net(2, 3, 4, 3, 2, 0);
  const auto s = sample_2x3();
  const auto out = forward(net, s, ModalityMode::Joint);
  CHECK(out.logits.shape() == Shape{3});
  CHECK(out.hidden.shape() == Shape{4});
  for (double h : out.hidden.data()) CHECK(h >= 0.0);
  const auto logits = activations_matrix(net, s, ActivationSource::Logits);
  const auto hidden = activations_matrix(net, s, ActivationSource::Hidden);
  CHECK(logits.values.shape() == Shape{3, 3});
  CHECK(hidden.values.shape() == Shape{3, 4});
  for (std::size_t j = 0; j < 3; ++j) CHECK(logits.values.at(2, j) == out.logits.at(j));
}

TEST_CASE("mismatched sample widths name the field") {
  const auto net = new_modal_net(2, 3, 4, 3, 1, 0);
  ModalSample bad{{1.0}, {1.0, 2.0, 3.0}, 0};
  CHECK_THROWS_WITH_AS(forward(net, bad, ModalityMode::Joint), doctest::Contains("text_feats"), DataError);
  bad = {{1.0, 2.0}, {1.0}, 0};
  CHECK_THROWS_WITH_AS(forward(net, bad, ModalityMode::Joint), doctest::Contains("image_feats"), DataError);
}

TEST_CASE("invalid architectures are rejected") {
  CHECK_THROWS_AS(new_modal_net(0, 3, 4, 3, 1, 0), ParameterError);
  CHECK_THROWS_AS(new_modal_net(2, 3, 4, 3, 0, 0), ParameterError);
  CHECK_THROWS_AS(new_modal_net(2, 3, 0, 3, 1, 0), ParameterError);
}

TEST_CASE("copies are deep") {
  const auto a = new_modal_net(2, 3, 4, 3, 1, 0);
  ModalNet b = a;
  b.parameters()[0].mutable_data()[0] += 1.0;
  CHECK(a.layers()[0].weight.at(0) != b.layers()[0].weight.at(0));
  b.copy_weights_from(a);
  CHECK(serialize(a) == serialize(b));
  CHECK_THROWS_AS(b.copy_weights_from(new_modal_net(2, 3, 4, 3, 2, 0)), DimensionError);
}

TEST_CASE("serialize round trip is byte-identical and preserves outputs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto net = new_modal_net(2, 3, 6, 3, 1 + static_cast<int>(seed % 3), seed);
    const auto text = serialize(net);
    const auto back = deserialize(text);
    CHECK(serialize(back) == text);
    const auto s = sample_2x3();
    CHECK(forward(back, s, ModalityMode::Joint).logits.to_vector() ==
          forward(net, s, ModalityMode::Joint).logits.to_vector());
  }
}

TEST_CASE("malformed documents report the offending path") {
  const auto good = nlohmann::json::parse(serialize(new_modal_net(2, 3, 4, 3, 1, 0)));

  auto doc = good;
  doc["layers"][0]["weights"].erase(0);
  CHECK_THROWS_WITH_AS(deserialize(doc.dump()), doctest::Contains("$.layers[0].weights"), ParseError);

  doc = good;
  doc.erase("hidden_dim");
  CHECK_THROWS_WITH_AS(deserialize(doc.dump()), doctest::Contains("hidden_dim"), ParseError);

  doc = good;
  doc["schema_version"] = 99;
  CHECK_THROWS_AS(deserialize(doc.dump()), ParseError);

  CHECK_THROWS_AS(deserialize("{not json"), ParseError);
  CHECK_THROWS_AS(deserialize("[]"), ParseError);
}
