#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "timnet/autodiff.hpp"
#include "timnet/rng.hpp"

namespace timnet::model {

enum class Variant { Full, TcnBaseline, NoBd, NoMs, NoDf };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  std::uint32_t n_tabs = 8;
  std::uint32_t kernel_size = 2;
  std::uint32_t channels = 39;
  std::uint32_t in_channels = 39;  // input feature width (n_mfcc)
  double dropout = 0.1;
  std::uint32_t n_classes = 0;
  std::uint32_t input_T = 0;  // 0 = accept any length
  Variant variant = Variant::Full;

  /// Dilation of block j (1-based) is 2^(j-1).
  std::size_t dilation_of(std::size_t j) const { return std::size_t{1} << (j - 1); }
  void validate() const;
};

struct SubBlockParams {
  diff::DiffValue conv_w;  // [k,C,C]
  diff::DiffValue conv_b;  // [C]
  diff::BatchNormState bn;
};

/// Two sub-blocks; the sigmoid of the second sub-block's output gates the
/// block input.
struct TabParams {
  SubBlockParams sub1;
  SubBlockParams sub2;
};

struct DirectionParams {
  diff::DiffValue entry_w;  // [1,Cin,C], plain channel-mixing map, no activation
  diff::DiffValue entry_b;  // [C]
  std::vector<TabParams> tabs;
};

struct NamedTensorRef {
  std::string name;
  Tensor* tensor;
};

struct TimNetParams {
  DirectionParams fwd;
  DirectionParams bwd;
  diff::DiffValue w_drf;   // [n]
  diff::DiffValue head_w;  // [C,K]
  diff::DiffValue head_b;  // [K]

  /// Parameters updated by the optimizer under the given variant. no_df
  /// excludes the frozen fusion weights; no_bd excludes the backward stack;
  /// no_ms excludes the unused fusion weights.
  std::vector<diff::DiffValue> trainable(Variant variant);

  /// Every array in the model, trainable or not (includes batch-norm running
  /// stats), in a stable order. Used by checkpointing.
  std::vector<NamedTensorRef> named_state();
};

struct ForwardTrace {
  std::vector<diff::DiffValue> feat_fwd;  // F_1..F_n  [B,T,C]
  std::vector<diff::DiffValue> feat_bwd;
  std::vector<diff::DiffValue> attn_fwd;  // A_1..A_n  [B,T,C]
  std::vector<diff::DiffValue> attn_bwd;
  std::vector<diff::DiffValue> g;  // pooled per-scale vectors g_1..g_n  [B,C]
  diff::DiffValue g_drf;           // fused representation [B,C]
  diff::DiffValue logits;          // [B,K]
  diff::DiffValue probs;           // [B,K]
};

/// Glorot-uniform conv/dense weights, zero biases, gamma=1/beta=0,
/// w_drf = 1/n. Deterministic under the stream; draws do not depend on the
/// variant, so different variants share parameters for a given seed.
TimNetParams init_timnet(const ModelConfig& cfg, RngStream& rng);

/// Deep copy (fresh parameter nodes, values and running stats copied).
TimNetParams clone_params(TimNetParams& src, const ModelConfig& cfg);

/// One temporal-aware block: two (conv -> BN -> ReLU -> spatial dropout)
/// sub-blocks, sigmoid attention, elementwise gate of the block input.
/// Returns (F_{j+1}, A).
std::pair<diff::DiffValue, diff::DiffValue> tab_forward(const diff::DiffValue& x, TabParams& p,
                                                        std::size_t dilation, double dropout,
                                                        diff::Mode mode, RngStream& rng,
                                                        bool update_running = true);

/// Full network pass over a [B,T,in_channels] batch.
ForwardTrace forward(const diff::DiffValue& x, TimNetParams& params, const ModelConfig& cfg,
                     diff::Mode mode, RngStream& rng, bool update_running = true);

/// g_drf = sum_j w[j] * g[j].
diff::DiffValue dynamic_fusion(std::span<const diff::DiffValue> g_list,
                               const diff::DiffValue& w_drf);

/// Frames seen by one output frame of the n-block stack:
/// 1 + 2*(kernel_size-1)*(2^n - 1).
std::size_t receptive_field(std::size_t n, std::size_t kernel_size = 2);

/// Closed-form count of trainable scalars for a config (matches
/// TimNetParams::trainable).
std::size_t trainable_param_count(const ModelConfig& cfg);

// --- checkpointing -----------------------------------------------------------
// File layout: magic "TIMC", version u32, config block, label vocabulary,
// then named parameter records (name, rank, dims u32[], float64 LE values).

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TimNetParams params;
  ModelConfig cfg;
  std::vector<std::string> labels;  // class index -> label string
};

void checkpoint_save(TimNetParams& params, const ModelConfig& cfg,
                     const std::vector<std::string>& labels, const std::filesystem::path& path);

Checkpoint checkpoint_load(const std::filesystem::path& path);

/// Load and fail if the stored config disagrees with the expected one.
Checkpoint checkpoint_load_expect(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace timnet::model
