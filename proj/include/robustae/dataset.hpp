#pragma once

#include <string>
#include <vector>

#include "robustae/tensor.hpp"

namespace robustae::data {

/// Labeled image set; images are Nx3xHxW in [0,1].
struct LabeledSet {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return images.numel() ? images.dim(0) : 0; }
  Tensor image(int i) const;
};

/// Procedural 10-class 32x32 dataset: large-structure shapes (disk, square,
/// triangle, plus, stripes, checker, ring, X, dot grid) over noisy gradient
/// backgrounds with randomized colors and placement. Class evidence survives
/// mild JPEG compression; the color/noise nuisances keep decision margins
/// small. Deterministic given the seed.
LabeledSet make_shapes10(int n, uint64_t seed);

/// One (uploaded, transmitted) training unit for the channel surrogate.
struct TransmissionPair {
  Tensor uploaded;
  Tensor transmitted;
  std::string attack;
  std::string channel_id;
  int est_qf = 0;
};

using PairSet = std::vector<TransmissionPair>;

/// On-disk pair layout: <root>/{uploaded,transmitted}/NNNNN.png plus a
/// manifest.jsonl with one record per pair.
void save_pairs(const std::string& root, const PairSet& pairs);
PairSet load_pairs(const std::string& root);

}  // namespace robustae::data
