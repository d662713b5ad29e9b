#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "robustae/jpeg.hpp"
#include "robustae/tensor.hpp"

namespace robustae::channel {

struct ChannelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A named 3x3 enhancement kernel. "sharpen" is identity plus strength times
/// the 4-neighbor Laplacian.
struct FilterPreset {
  std::string name;
  double strength = 0.0;
};

/// Deterministic mock lossy-channel pipeline built on a real JPEG codec.
/// Stage order is fixed: truncation -> optional resize -> optional filter ->
/// JPEG encode/decode.
struct ChannelSpec {
  std::string id;
  std::optional<int> resize_long_side;
  std::optional<FilterPreset> filter;
  jpeg::QualityFactor jpeg_qf{80};

  /// Built-in channels: "mock-fb" (sharpen 0.5 + qf 80) and "mock-alt"
  /// (qf 60 only).
  static ChannelSpec preset(const std::string& id);
};

struct TransmitResult {
  Tensor image;                 // decoded channel output, same shape unless resized
  std::vector<uint8_t> bytes;   // the raw JPEG stream (for QT extraction)
};

/// Runs one image through the channel. Pure given the spec: identical inputs
/// give identical bytes and pixels.
TransmitResult transmit(const ChannelSpec& spec, const Tensor& x);

/// QF histogram over a directory of JPEG files via QT extraction, plus the
/// maximum-likelihood (most frequent) QF. Unreadable files are skipped with a
/// warning; an empty or fully unreadable directory is an error.
struct QfAnalysis {
  std::map<int, int> histogram;
  int argmax_qf = 0;
  int skipped = 0;
};
QfAnalysis analyze_qf(const std::string& dir);

/// Bilinear resize used for the optional channel resize stage.
Tensor resize_bilinear(const Tensor& x, int h_to, int w_to);
/// 3x3 filter application with replicate borders, clamped to [0,1].
Tensor apply_filter(const Tensor& x, const FilterPreset& f);

}  // namespace robustae::channel

#include "robustae/attacks.hpp"
#include "robustae/dataset.hpp"

namespace robustae::channel {

/// Builds surrogate-training pairs: for every clean image an attack is drawn
/// uniformly from attack_mix (standard training parameters), the AE is
/// generated against the target and transmitted through the channel. Images
/// an attack fails on are skipped with a log entry.
data::PairSet build_pairs(const ChannelSpec& spec, const data::LabeledSet& clean_set,
                          const target::TargetModel& model,
                          const std::vector<attack::Method>& attack_mix, uint64_t seed,
                          int limit = -1);

}  // namespace robustae::channel
