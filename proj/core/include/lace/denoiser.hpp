#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lace/tape.hpp"

namespace lace {

struct DenoiserConfig {
  int input_dim = 10;  // N + 5
  int seq_len = 25;    // L
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 256;
  int time_embed_dim = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct ParamTensor {
  std::string name;
  Eigen::MatrixXd value;
};

/// Sinusoidal embedding of integer timesteps, one row per entry of `t`.
Eigen::MatrixXd timestep_embedding(const std::vector<int>& t, int dim);

/// Epsilon-predictor: element encoder, transformer blocks with
/// time-conditioned adaptive layer norm, element decoder. No positional
/// encoding, so the map is equivariant to row permutations within an item.
class Denoiser {
 public:
  Denoiser() = default;
  /// Fan-in scaled uniform init; AdaLN scale/shift output layers start at 0.
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }
  size_t num_scalars() const;

  /// One recorded forward pass. `params` aligns with params().
  struct Pass {
    ad::Var input;
    ad::Var output;
    std::vector<ad::Var> params;
  };

  /// Records a forward pass for `items` stacked inputs (items * L rows).
  Pass forward(ad::Tape& tape, const Eigen::MatrixXd& x, const std::vector<int>& t,
               bool input_grad = false, bool param_grads = true) const;

  /// Forward without gradient bookkeeping.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, const std::vector<int>& t) const;

  struct Gradients {
    std::vector<Eigen::MatrixXd> params;
    std::optional<Eigen::MatrixXd> input;
  };

  /// Replays `tape` from the output with d loss / d output = `output_grad`.
  Gradients backward(ad::Tape& tape, const Pass& pass, const Eigen::MatrixXd& output_grad) const;

  /// Sets the decoder's final layer to zero so the output is identically 0.
  void zero_output_layer();

  /// Throws kNonFinite naming the first tensor holding NaN/Inf.
  void check_finite() const;

 private:
  int index(const std::string& name) const;

  DenoiserConfig config_;
  std::vector<ParamTensor> params_;
};

/// Adaptive layer norm on raw matrices: (1 + gamma) o LN(x) + beta, gamma
/// and beta broadcast over rows. Used by tests and the reference path.
Eigen::MatrixXd adaln_reference(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma,
                                const Eigen::RowVectorXd& beta, double eps = 1e-5);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int num_classes = 0;
  int max_len = 0;
  std::uint32_t schedule_hash = 0;
  nlohmann::json extra;  // free-form (training config, step counters)
};

struct Checkpoint {
  Denoiser model;
  CheckpointMeta meta;
};

/// Binary container: magic, version, header JSON, little-endian float64
/// parameter blobs, CRC32 trailer. Written atomically.
void save_checkpoint(const Denoiser& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Validates a loaded checkpoint against the expected class count / length.
void check_checkpoint_shape(const Checkpoint& ckpt, int num_classes, int max_len);

}  // namespace lace
