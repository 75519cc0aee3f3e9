#pragma once

#include <vector>

namespace mmkd {

/// One labeled example. Text-only, image-only and joint views are formed by
/// masking at the model input.
struct ModalSample {
  std::vector<double> text_feats;
  std::vector<double> image_feats;
  int label = 0;

  friend bool operator==(const ModalSample&, const ModalSample&) = default;
};

}  // namespace mmkd
