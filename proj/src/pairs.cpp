#include <iostream>

#include "robustae/channel.hpp"

namespace robustae::channel {

data::PairSet build_pairs(const ChannelSpec& spec, const data::LabeledSet& clean_set,
                          const target::TargetModel& model,
                          const std::vector<attack::Method>& attack_mix, uint64_t seed,
                          int limit) {
  if (attack_mix.empty()) throw ChannelError("build_pairs: empty attack mix");
  const int n = limit < 0 ? clean_set.size() : std::min(limit, clean_set.size());
  if (n < 1) throw ChannelError("build_pairs: empty clean set");

  Rng rng(derive_seed(seed, "build-pairs"));
  data::PairSet pairs;
  pairs.reserve(n);
  int skipped = 0;
  for (int i = 0; i < n; ++i) {
    attack::Method m = attack_mix[rng.uniform_int(0, static_cast<int>(attack_mix.size()) - 1)];
    attack::AttackConfig cfg = attack::training_defaults(m);
    cfg.seed = derive_seed(seed, "pair-" + std::to_string(i));
    Tensor x = clean_set.image(i);
    int y = clean_set.labels[i];
    try {
      attack::AEResult res = attack::run_attack(m, x, y, model, nullptr, cfg);
      TransmitResult tr = transmit(spec, res.adversarial);
      data::TransmissionPair p;
      p.uploaded = std::move(res.adversarial);
      p.transmitted = std::move(tr.image);
      p.attack = attack::method_to_string(m);
      p.channel_id = spec.id;
      p.est_qf = jpeg::estimate_qf(jpeg::extract_quant_table(tr.bytes)).value;
      pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      std::cerr << "build_pairs: skipping image " << i << ": " << e.what() << "\n";
      ++skipped;
    }
  }
  if (pairs.empty()) throw ChannelError("build_pairs: every attack failed");
  if (skipped > 0)
    std::cerr << "build_pairs: " << skipped << " of " << n << " images skipped\n";
  return pairs;
}

}  // namespace robustae::channel
