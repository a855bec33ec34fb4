#pragma once

#include <array>
#include <vector>

#include "adaseg/params.hpp"
#include "adaseg/segmodel.hpp"

// Fusion module: embeds per-frame image features and predictions into a
// token sequence, runs a small transformer over it (latent-query decoder for
// fixed-length sequences, causal self-attention for variable-length ones) and
// decodes the learned adaptive loss plus auxiliary action/logit/mask heads.
// Only the learned loss drives adaptation; the aux heads are trained only
// when explicitly weighted.
namespace adaseg::fusion {

enum class EmbedderVariant { Vanilla, MLP };
enum class FusionMode { FixedLengthDecoder, Causal };

inline constexpr const char* kImageEmbedder = "image_embedder";
inline constexpr const char* kPredEmbedder = "pred_embedder";
inline constexpr const char* kTransformer = "fusion_transformer";
inline constexpr const char* kLossDecoder = "loss_decoder";
inline constexpr const char* kActionDecoder = "action_decoder";
inline constexpr const char* kLogitsDecoder = "logits_decoder";
inline constexpr const char* kMasksDecoder = "masks_decoder";

struct FusionConfig {
  int width = 64;
  int layers = 2;
  int heads = 4;
  int latents = 8;
  int max_frames = 5;
  int expected_frames = 2;  // fixed-length decoder rejects other lengths
  EmbedderVariant embedder = EmbedderVariant::MLP;
  FusionMode mode = FusionMode::FixedLengthDecoder;
  double loss_head_init = 1e-3;

  // source dimensions, filled from the model config
  int model_width = 0, pixel_width = 0, queries = 0, classes = 0, mask_size = 0,
      spatial_tokens = 0;

  static FusionConfig from_model(const model::ModelConfig& m);
};

nn::ParamSet init_fusion(const FusionConfig& cfg, std::uint64_t seed);

struct TokenSeq {
  ag::Tensor tokens;                    // [n, width]
  std::vector<int> frame_sizes;        // tokens per frame
  std::vector<ag::Tensor> pred_embeds;  // per frame [Q, width], for the PCA view
};

TokenSeq embed_frames(const nn::ParamSet& phi, const FusionConfig& cfg,
                      const std::vector<model::SegOutput>& outs);

struct FusionOutput {
  ag::Tensor learned_loss;   // scalar, softplus head, >= 0
  ag::Tensor action_logits;  // [5]
  ag::Tensor aux_logits;     // [Q, C+1]
  ag::Tensor aux_masks;      // [Q, m, m]
};

FusionOutput fuse(const nn::ParamSet& phi, const FusionConfig& cfg, const TokenSeq& seq);

// zero out the final loss-decoder layer (constant-loss configuration)
void zero_loss_head(nn::ParamSet& phi);

struct PcaResult {
  std::vector<std::array<double, 2>> coords;  // per token
  std::vector<int> frame_of;
  std::array<std::vector<double>, 2> components;  // unit eigenvectors
  double separation = 0;  // between-frame / within-frame variance (2-D)
  bool degenerate = false;
};

// PCA over prediction-embedder outputs of >= 2 frames (power iteration with
// deflation); degenerate rank yields zero projections with the flag set
PcaResult pca_embeddings(const std::vector<ag::Tensor>& frame_embeds);

}  // namespace adaseg::fusion
