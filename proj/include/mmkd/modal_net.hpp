#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mmkd/sample.hpp"
#include "mmkd/tensor.hpp"

namespace mmkd {

/// Which modalities are fed to the network. The numeric value is the row of
/// that mode in a ModalityActivations matrix.
enum class ModalityMode : int { TextOnly = 0, ImageOnly = 1, Joint = 2 };

inline constexpr std::array<ModalityMode, 3> kModalityModes = {ModalityMode::TextOnly, ModalityMode::ImageOnly,
                                                                ModalityMode::Joint};

std::string_view to_string(ModalityMode mode);

enum class ActivationSource { Logits, Hidden };

std::string_view to_string(ActivationSource source);
ActivationSource activation_source_from_string(std::string_view name);

struct DenseLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
};

/// Feed-forward multimodal classifier: `depth` relu hidden layers of equal
/// width followed by an affine output layer. The input is
/// [text | image | mask_text, mask_image].
///
/// Copies are deep; moves share storage.
class ModalNet {
 public:
  ModalNet(int text_dim, int image_dim, int hidden_dim, int num_classes, std::vector<DenseLayer> layers);

  ModalNet(const ModalNet& other);
  ModalNet& operator=(const ModalNet& other);
  ModalNet(ModalNet&&) noexcept = default;
  ModalNet& operator=(ModalNet&&) noexcept = default;

  int text_dim() const { return text_dim_; }
  int image_dim() const { return image_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  int num_classes() const { return num_classes_; }
  int depth() const { return static_cast<int>(layers_.size()) - 1; }
  int input_dim() const { return text_dim_ + image_dim_ + 2; }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Weight and bias handles in layer order; writing through them updates the net.
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  void set_trainable(bool on);
  void zero_grad();

  /// Overwrites all parameter values with those of a net of identical shape.
  void copy_weights_from(const ModalNet& other);

 private:
  int text_dim_;
  int image_dim_;
  int hidden_dim_;
  int num_classes_;
  std::vector<DenseLayer> layers_;
};

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
ModalNet new_modal_net(int text_dim, int image_dim, int hidden_dim, int num_classes, int depth, std::uint64_t seed);

/// Model input for one mode: absent modality slots are zero, mask bits mark presence.
std::vector<double> assemble_input(const ModalNet& net, const ModalSample& sample, ModalityMode mode);

struct ForwardResult {
  Tensor logits;  // [num_classes], pre-softmax
  Tensor hidden;  // [hidden_dim], last relu layer
};

ForwardResult forward(const ModalNet& net, const ModalSample& sample, ModalityMode mode);

/// Forward results for TextOnly, ImageOnly, Joint in that order.
std::array<ForwardResult, 3> forward_all_modes(const ModalNet& net, const ModalSample& sample);

/// The 3 x D matrix A: one row per modality mode.
struct ModalityActivations {
  Tensor values;
  ActivationSource source = ActivationSource::Logits;
};

ModalityActivations activations_matrix(const ModalNet& net, const ModalSample& sample, ActivationSource source);
ModalityActivations activations_from(const std::array<ForwardResult, 3>& passes, ActivationSource source);

/// JSON model document; doubles are written in shortest round-trip form.
std::string serialize(const ModalNet& net);
ModalNet deserialize(std::string_view document);

}  // namespace mmkd
