#include "mmkd/modal_net.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

#include "mmkd/errors.hpp"
#include "mmkd/rng.hpp"

namespace mmkd {

using nlohmann::json;

std::string_view to_string(ModalityMode mode) {
  switch (mode) {
    case ModalityMode::TextOnly: return "text";
    case ModalityMode::ImageOnly: return "image";
    case ModalityMode::Joint: return "joint";
  }
  return "?";
}

std::string_view to_string(ActivationSource source) {
  return source == ActivationSource::Logits ? "logits" : "hidden";
}

ActivationSource activation_source_from_string(std::string_view name) {
  if (name == "logits") return ActivationSource::Logits;
  if (name == "hidden") return ActivationSource::Hidden;
  throw ParameterError("unknown activation source '" + std::string(name) + "' (expected logits or hidden)");
}

ModalNet::ModalNet(int text_dim, int image_dim, int hidden_dim, int num_classes, std::vector<DenseLayer> layers)
    : text_dim_(text_dim),
      image_dim_(image_dim),
      hidden_dim_(hidden_dim),
      num_classes_(num_classes),
      layers_(std::move(layers)) {
  if (text_dim < 1 || image_dim < 1 || hidden_dim < 1 || num_classes < 1) {
    throw ParameterError("ModalNet dimensions must be >= 1");
  }
  if (layers_.size() < 2) throw ParameterError("ModalNet needs at least one hidden layer");
  std::size_t width = static_cast<std::size_t>(input_dim());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::size_t out = i + 1 == layers_.size() ? num_classes : hidden_dim;
    if (l.weight.shape() != Shape{out, width} || l.bias.shape() != Shape{out}) {
      throw DimensionError("layer " + std::to_string(i) + " has weight " + shape_to_string(l.weight.shape()) +
                           " and bias " + shape_to_string(l.bias.shape()) + ", expected " +
                           shape_to_string({out, width}) + " and " + shape_to_string({out}));
    }
    width = out;
  }
}

ModalNet::ModalNet(const ModalNet& other)
    : text_dim_(other.text_dim_),
      image_dim_(other.image_dim_),
      hidden_dim_(other.hidden_dim_),
      num_classes_(other.num_classes_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back({l.weight.clone(), l.bias.clone()});
}

ModalNet& ModalNet::operator=(const ModalNet& other) {
  if (this != &other) *this = ModalNet(other);
  return *this;
}

std::vector<Tensor> ModalNet::parameters() const {
  std::vector<Tensor> out;
  out.reserve(layers_.size() * 2);
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::size_t ModalNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

void ModalNet::set_trainable(bool on) {
  for (auto& p : parameters()) p.set_requires_grad(on);
}

void ModalNet::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

void ModalNet::copy_weights_from(const ModalNet& other) {
  auto dst = parameters();
  auto src = other.parameters();
  if (dst.size() != src.size()) throw DimensionError("copy_weights_from: layer count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].shape() != src[i].shape()) throw DimensionError("copy_weights_from: parameter shape mismatch");
    auto d = dst[i].mutable_data();
    auto s = src[i].data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

ModalNet new_modal_net(int text_dim, int image_dim, int hidden_dim, int num_classes, int depth, std::uint64_t seed) {
  if (text_dim < 1 || image_dim < 1 || hidden_dim < 1 || num_classes < 1 || depth < 1) {
    throw ParameterError("new_modal_net: dimensions and depth must be >= 1 (got text_dim=" + std::to_string(text_dim) +
                         ", image_dim=" + std::to_string(image_dim) + ", hidden_dim=" + std::to_string(hidden_dim) +
                         ", num_classes=" + std::to_string(num_classes) + ", depth=" + std::to_string(depth) + ")");
  }
  auto rng = make_rng(seed, streams::kInit);
  std::vector<DenseLayer> layers;
  std::size_t fan_in = static_cast<std::size_t>(text_dim + image_dim + 2);
  for (int i = 0; i <= depth; ++i) {
    const std::size_t fan_out = static_cast<std::size_t>(i == depth ? num_classes : hidden_dim);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> w(fan_out * fan_in);
    for (auto& v : w) v = dist(rng);
    layers.push_back({Tensor::from({fan_out, fan_in}, std::move(w)), Tensor::zeros({fan_out})});
    fan_in = fan_out;
  }
  return ModalNet(text_dim, image_dim, hidden_dim, num_classes, std::move(layers));
}

std::vector<double> assemble_input(const ModalNet& net, const ModalSample& sample, ModalityMode mode) {
  if (sample.text_feats.size() != static_cast<std::size_t>(net.text_dim())) {
    throw DataError("sample text_feats has " + std::to_string(sample.text_feats.size()) + " values, net expects text_dim=" +
                    std::to_string(net.text_dim()));
  }
  if (sample.image_feats.size() != static_cast<std::size_t>(net.image_dim())) {
    throw DataError("sample image_feats has " + std::to_string(sample.image_feats.size()) +
                    " values, net expects image_dim=" + std::to_string(net.image_dim()));
  }
  const bool text = mode != ModalityMode::ImageOnly;
  const bool image = mode != ModalityMode::TextOnly;
  std::vector<double> x(static_cast<std::size_t>(net.input_dim()), 0.0);
  if (text) std::copy(sample.text_feats.begin(), sample.text_feats.end(), x.begin());
  if (image) std::copy(sample.image_feats.begin(), sample.image_feats.end(), x.begin() + net.text_dim());
  x[x.size() - 2] = text ? 1.0 : 0.0;
  x[x.size() - 1] = image ? 1.0 : 0.0;
  return x;
}

ForwardResult forward(const ModalNet& net, const ModalSample& sample, ModalityMode mode) {
  Tensor h = Tensor::vector(assemble_input(net, sample, mode));
  const auto& layers = net.layers();
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = relu(add(matvec(layers[i].weight, h), layers[i].bias));
  }
  Tensor logits = add(matvec(layers.back().weight, h), layers.back().bias);
  return {std::move(logits), std::move(h)};
}

std::array<ForwardResult, 3> forward_all_modes(const ModalNet& net, const ModalSample& sample) {
  return {forward(net, sample, ModalityMode::TextOnly), forward(net, sample, ModalityMode::ImageOnly),
          forward(net, sample, ModalityMode::Joint)};
}

ModalityActivations activations_from(const std::array<ForwardResult, 3>& passes, ActivationSource source) {
  std::array<Tensor, 3> rows;
  for (std::size_t i = 0; i < 3; ++i) {
    rows[i] = source == ActivationSource::Logits ? passes[i].logits : passes[i].hidden;
  }
  return {stack_rows(rows), source};
}

ModalityActivations activations_matrix(const ModalNet& net, const ModalSample& sample, ActivationSource source) {
  return activations_from(forward_all_modes(net, sample), source);
}

// ---------------------------------------------------------------------------
// Model documents

std::string serialize(const ModalNet& net) {
  json doc;
  doc["schema_version"] = 1;
  doc["text_dim"] = net.text_dim();
  doc["image_dim"] = net.image_dim();
  doc["hidden_dim"] = net.hidden_dim();
  doc["num_classes"] = net.num_classes();
  doc["depth"] = net.depth();
  json layers = json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weights", l.weight.to_vector()},
                      {"bias", l.bias.to_vector()}});
  }
  doc["layers"] = std::move(layers);
  return doc.dump(1) + "\n";
}

namespace {

const json& field(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing field");
  return *it;
}

int positive_int(const json& obj, const char* key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_number_integer() || v.get<long long>() < 1 || v.get<long long>() > 1'000'000) {
    throw ParseError(path + "." + key + ": expected a positive integer");
  }
  return v.get<int>();
}

std::vector<double> number_array(const json& obj, const char* key, std::size_t expected, const std::string& path) {
  const auto& v = field(obj, key, path);
  const std::string where = path + "." + key;
  if (!v.is_array()) throw ParseError(where + ": expected an array of numbers");
  if (v.size() != expected) {
    throw ParseError(where + ": expected " + std::to_string(expected) + " values, got " + std::to_string(v.size()));
  }
  std::vector<double> out;
  out.reserve(expected);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ParseError(where + "[" + std::to_string(i) + "]: expected a number");
    const double x = v[i].get<double>();
    if (!std::isfinite(x)) throw ParseError(where + "[" + std::to_string(i) + "]: non-finite value");
    out.push_back(x);
  }
  return out;
}

}  // namespace

ModalNet deserialize(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("$: malformed model document: ") + e.what());
  }
  const std::string root = "$";
  if (!doc.is_object()) throw ParseError("$: expected an object");
  const auto& version = field(doc, "schema_version", root);
  if (!version.is_number_integer() || version.get<int>() != 1) {
    throw ParseError("$.schema_version: unsupported value " + version.dump());
  }
  const int text_dim = positive_int(doc, "text_dim", root);
  const int image_dim = positive_int(doc, "image_dim", root);
  const int hidden_dim = positive_int(doc, "hidden_dim", root);
  const int num_classes = positive_int(doc, "num_classes", root);
  const int depth = positive_int(doc, "depth", root);
  const auto& layers_doc = field(doc, "layers", root);
  if (!layers_doc.is_array() || layers_doc.size() != static_cast<std::size_t>(depth) + 1) {
    throw ParseError("$.layers: expected an array of " + std::to_string(depth + 1) + " layers");
  }

  std::vector<DenseLayer> layers;
  std::size_t width = static_cast<std::size_t>(text_dim + image_dim + 2);
  for (std::size_t i = 0; i < layers_doc.size(); ++i) {
    const std::string path = "$.layers[" + std::to_string(i) + "]";
    const auto& l = layers_doc[i];
    if (!l.is_object()) throw ParseError(path + ": expected an object");
    const std::size_t out = i + 1 == layers_doc.size() ? num_classes : hidden_dim;
    const auto rows = static_cast<std::size_t>(positive_int(l, "rows", path));
    const auto cols = static_cast<std::size_t>(positive_int(l, "cols", path));
    if (rows != out || cols != width) {
      throw ParseError(path + ": shape [" + std::to_string(rows) + "x" + std::to_string(cols) + "] does not chain, expected [" +
                       std::to_string(out) + "x" + std::to_string(width) + "]");
    }
    auto w = number_array(l, "weights", rows * cols, path);
    auto b = number_array(l, "bias", rows, path);
    layers.push_back({Tensor::from({rows, cols}, std::move(w)), Tensor::from({rows}, std::move(b))});
    width = out;
  }
  return ModalNet(text_dim, image_dim, hidden_dim, num_classes, std::move(layers));
}

}  // namespace mmkd
