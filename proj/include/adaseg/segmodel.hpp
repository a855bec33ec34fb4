#pragma once

#include <vector>

#include "adaseg/envsim.hpp"
#include "adaseg/params.hpp"
#include "adaseg/tensor.hpp"

// Miniature query-based mask-classification segmentation network:
// strided conv backbone -> FPN pixel decoder -> learned queries with a task
// embedding -> self-attention block -> multi-stage cross-attention decoder ->
// class and mask heads. Parameter groups mirror the named model parts so
// variant masks can freeze or adapt them independently.
namespace adaseg::model {

struct ModelConfig {
  int queries = 16;    // Q
  int classes = 8;     // C; the class head emits C+1 with a no-object slot
  int width = 64;      // d, transformer width; pixel decoder runs at d/2
  int heads = 4;
  int stages = 3;      // decoder stages; memories cycle 1/32, 1/16, 1/8
  int image_size = 64;  // square input, >= 16 and divisible by 4

  int pixel_width() const { return width / 2; }
  // spatial size after `downs` stride-2 convs; small inputs saturate at 1
  int res(int downs) const {
    int s = image_size;
    for (int i = 0; i < downs; ++i) s = (s - 1) / 2 + 1;
    return s;
  }
  int mask_size() const { return res(2); }
};

// canonical group names (Table-style model parts)
inline constexpr const char* kBackbone = "backbone";
inline constexpr const char* kTaskMlp = "task_mlp";
inline constexpr const char* kPixelDecoder = "pixel_decoder";
inline constexpr const char* kTransformerBlock = "transformer_block";
inline constexpr const char* kMultistageDecoder = "multistage_decoder";
inline constexpr const char* kClassHead = "class_head";
inline constexpr const char* kMaskHead = "mask_head";

inline const std::vector<std::string>& model_groups() {
  static const std::vector<std::string> g = {kBackbone,          kTaskMlp,   kPixelDecoder,
                                             kTransformerBlock,  kMultistageDecoder,
                                             kClassHead,         kMaskHead};
  return g;
}

struct SegOutput {
  ag::Tensor class_logits;   // [Q, C+1]
  ag::Tensor mask_logits;    // [Q, res(2), res(2)], 1/4 resolution
  ag::Tensor mask_features;  // [Q, d], residual stream entering the last FFN
  ag::Tensor feat_1_32;      // [d/2, res(5), res(5)] from the pixel decoder
};

nn::ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// closed-form parameter count implied by the architecture and config
std::int64_t expected_param_count(const ModelConfig& cfg);

ag::Tensor image_to_tensor(const env::Frame& f);  // [3, H, W] scaled to [0,1]

SegOutput forward(const nn::ParamSet& params, const ModelConfig& cfg, const ag::Tensor& image);

// per-pixel argmax of sum_q p_q(class) * sigmoid(mask_q), no-object excluded,
// nearest-upsampled to [H, W]; plain values, no graph
std::vector<int> semantic_map(const SegOutput& out, const ModelConfig& cfg);

}  // namespace adaseg::model
