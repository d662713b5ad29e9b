#pragma once

#include <optional>
#include <vector>

#include "robustae/channel.hpp"
#include "robustae/sio.hpp"
#include "robustae/target.hpp"

namespace robustae::eval {

/// Per-image evaluation outcome. The bare-model and post-channel verdicts
/// come from separate forward passes.
struct EvalRecord {
  int y = 0;
  int pred_clean = 0;        // F(x~)
  int pred_transmitted = 0;  // F(channel(x~))
  std::vector<double> logits_clean;
  std::vector<double> logits_transmitted;
  double l2 = 0.0;
  double linf = 0.0;
};

struct AsrPair {
  double asr = 0.0;        // N1 / N, bare model
  double asr_prime = 0.0;  // N2 / N, after the channel
};

AsrPair asr(const std::vector<EvalRecord>& records);

/// Average confidence level over transmitted images: mean softmax probability
/// of the true label (v = true) or of the top wrong label (v = false).
double acl(const Tensor& transmitted_images, const std::vector<int>& labels,
           const target::TargetModel& model, bool v);

struct ErrorSplit {
  double osn_noise_mse = 0.0;  // MSE(x* - channel(x*)), on the 0..255 scale
  double sim_error_mse = 0.0;  // MSE(sio(x*) - channel(x*))
  int count = 0;
};

struct ErrorAnalysis {
  std::optional<ErrorSplit> success;  // post-channel attack still succeeds
  std::optional<ErrorSplit> fail;
};

/// Splits AEs by post-channel attack success and reports mean channel-noise
/// and simulation-error MSE per split. Empty splits are reported as absent.
ErrorAnalysis error_analysis(const std::vector<Tensor>& aes, const std::vector<int>& labels,
                             const channel::ChannelSpec& spec, const sio::SIOModel& surrogate,
                             const target::TargetModel& model);

// Preprocessing defenses (applied after the channel, before the classifier).
Tensor bit_depth_reduce(const Tensor& x, int bits);
Tensor jpeg_defense(const Tensor& x, int qf = 75);
Tensor random_resize_pad(const Tensor& x, uint64_t seed);

/// Runs AEs through channel -> optional defense -> classifier and fills
/// records.
enum class Defense { none, bit_red, jpeg, resize_pad };
Defense defense_from_string(const std::string& s, int* param);

std::vector<EvalRecord> evaluate_aes(const std::vector<Tensor>& aes,
                                     const std::vector<Tensor>& originals,
                                     const std::vector<int>& labels,
                                     const channel::ChannelSpec& spec,
                                     const target::TargetModel& model,
                                     Defense defense = Defense::none, int defense_param = 0,
                                     uint64_t defense_seed = 0);

}  // namespace robustae::eval
