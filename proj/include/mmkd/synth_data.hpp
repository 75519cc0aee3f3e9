#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmkd/sample.hpp"

namespace mmkd {

enum class SplitTag { Train, Val, Test, All };

std::string_view to_string(SplitTag tag);

struct Dataset {
  std::vector<ModalSample> samples;
  int text_dim = 0;
  int image_dim = 0;
  int num_classes = 0;
  SplitTag split = SplitTag::All;

  std::size_t size() const { return samples.size(); }
  /// Throws DataError if any sample disagrees with the declared dims.
  void validate() const;
  std::vector<int> class_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Hidden labeling rule of the synthetic task:
///   label = argmax_c  u_c.z_t + v_c.z_i + w_c * (z_t^T M z_i)
/// Each term is scaled to unit variance for standard-normal inputs. The
/// bilinear term couples the modalities, so neither alone determines the label.
struct GenerationRule {
  int text_dim = 0;
  int image_dim = 0;
  int num_classes = 0;
  std::vector<double> text_weights;   // [num_classes x text_dim]
  std::vector<double> image_weights;  // [num_classes x image_dim]
  std::vector<double> cross_weights;  // [num_classes]
  std::vector<double> coupling;       // M, [text_dim x image_dim]

  std::vector<double> scores(std::span<const double> text, std::span<const double> image) const;
  int label(std::span<const double> text, std::span<const double> image) const;
};

GenerationRule make_rule(int text_dim, int image_dim, int num_classes, std::uint64_t seed);

/// Class-balanced (within one sample) dataset drawn from make_rule(seed).
/// Features are the latent vectors plus N(0, noise_std^2) observation noise.
Dataset generate(int n, int text_dim, int image_dim, int num_classes, double noise_std, std::uint64_t seed);

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

DatasetSplits split(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed);

inline constexpr std::array<double, 3> kDefaultSplit = {0.8, 0.1, 0.1};

/// Fraction of samples the rule labels correctly.
double rule_accuracy(const GenerationRule& rule, const Dataset& ds);

enum class ProbeInput { Text, Image, Both };

std::string_view to_string(ProbeInput input);

/// Multinomial logistic regression on the chosen features, trained by
/// full-batch gradient descent from zero weights, scored on `eval`.
double linear_probe_accuracy(const Dataset& train, const Dataset& eval, ProbeInput input, int iterations = 500,
                             double learning_rate = 0.5);

struct CsvSchema {
  int text_dim = 0;
  int image_dim = 0;
  int num_classes = 0;
};

std::string to_csv(const Dataset& ds);
/// `source` names the input in error messages. Without a schema, dims come
/// from the header and num_classes is max(label) + 1.
Dataset parse_csv(std::string_view text, std::string_view source = "<csv>",
                  const std::optional<CsvSchema>& expected = std::nullopt);

void write_csv(const Dataset& ds, const std::string& path);
Dataset read_csv(const std::string& path, const std::optional<CsvSchema>& expected = std::nullopt);

/// Shortest decimal that reads back to the same double.
std::string format_double(double value);

}  // namespace mmkd
