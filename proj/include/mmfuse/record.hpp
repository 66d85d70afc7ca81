#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

enum Label : int { kUnlabeled = -1, kControl = 0, kImpaired = 1 };

/// Frame-level acoustic embeddings of one fixed-length audio chunk, stored
/// row-major as rows × cols (frames × feature dim).
struct FrameMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// One participant: transcript embedding plus the chunked acoustic frames.
struct UtteranceRecord {
  std::string id;
  int label = kUnlabeled;
  std::vector<float> text;
  std::vector<FrameMatrix> chunks;

  std::size_t text_dim() const { return text.size(); }
  std::size_t audio_dim() const { return chunks.empty() ? 0 : chunks.front().cols; }
};

/// Double-precision constant tensor of a chunk's frames. Throws
/// DimensionError for a chunk with no frames.
Tensor to_tensor(const FrameMatrix& frames);
Tensor to_tensor(const std::vector<float>& values);

}  // namespace mmfuse
