#include "robustae/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "robustae/image_io.hpp"
#include "robustae/nn.hpp"

namespace robustae::eval {

AsrPair asr(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("asr: no records");
  int n1 = 0, n2 = 0;
  for (const auto& r : records) {
    if (r.pred_clean != r.y) ++n1;
    if (r.pred_transmitted != r.y) ++n2;
  }
  const double n = static_cast<double>(records.size());
  return {n1 / n, n2 / n};
}

double acl(const Tensor& transmitted_images, const std::vector<int>& labels,
           const target::TargetModel& model, bool v) {
  const int m = transmitted_images.dim(0);
  if (m == 0) throw std::invalid_argument("acl: empty image set");
  if (static_cast<int>(labels.size()) != m)
    throw std::invalid_argument("acl: label count mismatch");
  Tensor z = model.logits(transmitted_images);
  Tensor p = nn::softmax_rows(z);
  const int c = z.dim(1);
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    int y = labels[i];
    if (y < 0 || y >= c) throw std::invalid_argument("acl: label out of range");
    int pick = y;
    if (!v) {
      pick = -1;
      for (int j = 0; j < c; ++j) {
        if (j == y) continue;
        if (pick < 0 || z.at(i, j) > z.at(i, pick)) pick = j;
      }
    }
    total += p.at(i, pick);
  }
  return total / m;
}

namespace {

double mse_255(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    double d = 255.0 * (a[i] - b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

}  // namespace

ErrorAnalysis error_analysis(const std::vector<Tensor>& aes, const std::vector<int>& labels,
                             const channel::ChannelSpec& spec, const sio::SIOModel& surrogate,
                             const target::TargetModel& model) {
  if (aes.empty()) throw std::invalid_argument("error_analysis: empty AE set");
  if (aes.size() != labels.size())
    throw std::invalid_argument("error_analysis: label count mismatch");

  ErrorSplit succ, fail;
  for (size_t i = 0; i < aes.size(); ++i) {
    Tensor transmitted = channel::transmit(spec, aes[i]).image;
    Tensor simulated = sio::sio_forward(surrogate, aes[i]);
    double osn_mse = mse_255(aes[i], transmitted);
    double sim_mse = mse_255(simulated, transmitted);
    bool fooled = model.classify_one(transmitted) != labels[i];
    ErrorSplit& s = fooled ? succ : fail;
    s.osn_noise_mse += osn_mse;
    s.sim_error_mse += sim_mse;
    s.count += 1;
  }
  ErrorAnalysis out;
  if (succ.count > 0) {
    succ.osn_noise_mse /= succ.count;
    succ.sim_error_mse /= succ.count;
    out.success = succ;
  }
  if (fail.count > 0) {
    fail.osn_noise_mse /= fail.count;
    fail.sim_error_mse /= fail.count;
    out.fail = fail;
  }
  return out;
}

Tensor bit_depth_reduce(const Tensor& x, int bits) {
  if (bits < 1 || bits > 8)
    throw std::invalid_argument("bit_depth_reduce: bits must be in [1,8]");
  const double levels = std::pow(2.0, bits) - 1.0;
  Tensor y = x;
  for (size_t i = 0; i < y.numel(); ++i) {
    double v = std::clamp(y[i], 0.0, 1.0);
    y[i] = std::floor(v * levels + 0.5) / levels;  // round half up
  }
  return y;
}

Tensor jpeg_defense(const Tensor& x, int qf) {
  auto bytes = io::encode_jpeg(x, qf);
  return io::decode_jpeg(bytes);
}

Tensor random_resize_pad(const Tensor& x, uint64_t seed) {
  Rng rng(seed);
  const int h = x.dim(2), w = x.dim(3);
  double scale = rng.uniform(0.9, 1.1);
  int h2 = std::max(1, static_cast<int>(std::lround(h * scale)));
  int w2 = std::max(1, static_cast<int>(std::lround(w * scale)));
  Tensor resized = channel::resize_bilinear(x, h2, w2);
  Tensor out({x.dim(0), x.dim(1), h, w});
  // smaller: zero-pad at a random offset; larger: crop at a random offset
  int oy = h2 <= h ? rng.uniform_int(0, h - h2) : -rng.uniform_int(0, h2 - h);
  int ox = w2 <= w ? rng.uniform_int(0, w - w2) : -rng.uniform_int(0, w2 - w);
  for (int s = 0; s < x.dim(0); ++s)
    for (int c = 0; c < x.dim(1); ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          int si = i - oy, sj = j - ox;
          out.at(s, c, i, j) = (si >= 0 && si < h2 && sj >= 0 && sj < w2)
                                   ? resized.at(s, c, si, sj)
                                   : 0.0;
        }
  return out;
}

Defense defense_from_string(const std::string& s, int* param) {
  auto colon = s.find(':');
  std::string name = s.substr(0, colon);
  int p = 0;
  if (colon != std::string::npos) p = std::stoi(s.substr(colon + 1));
  if (param) *param = p;
  if (name == "none") return Defense::none;
  if (name == "bitred") {
    if (param && *param == 0) *param = 4;
    return Defense::bit_red;
  }
  if (name == "jpeg") {
    if (param && *param == 0) *param = 75;
    return Defense::jpeg;
  }
  if (name == "rrp") return Defense::resize_pad;
  throw std::invalid_argument("unknown defense: " + s);
}

std::vector<EvalRecord> evaluate_aes(const std::vector<Tensor>& aes,
                                     const std::vector<Tensor>& originals,
                                     const std::vector<int>& labels,
                                     const channel::ChannelSpec& spec,
                                     const target::TargetModel& model, Defense defense,
                                     int defense_param, uint64_t defense_seed) {
  if (aes.empty()) throw std::invalid_argument("evaluate_aes: empty AE set");
  if (aes.size() != labels.size() || aes.size() != originals.size())
    throw std::invalid_argument("evaluate_aes: size mismatch");

  std::vector<EvalRecord> records;
  records.reserve(aes.size());
  for (size_t i = 0; i < aes.size(); ++i) {
    EvalRecord r;
    r.y = labels[i];
    Tensor z1 = model.logits(aes[i]);
    r.pred_clean = 0;
    for (int j = 0; j < z1.dim(1); ++j) {
      r.logits_clean.push_back(z1.at(0, j));
      if (z1.at(0, j) > z1.at(0, r.pred_clean)) r.pred_clean = j;
    }

    Tensor through = channel::transmit(spec, aes[i]).image;
    switch (defense) {
      case Defense::none: break;
      case Defense::bit_red: through = bit_depth_reduce(through, defense_param); break;
      case Defense::jpeg: through = jpeg_defense(through, defense_param); break;
      case Defense::resize_pad:
        through = random_resize_pad(through, derive_seed(defense_seed, "rrp-" + std::to_string(i)));
        break;
    }
    Tensor z2 = model.logits(through);
    r.pred_transmitted = 0;
    for (int j = 0; j < z2.dim(1); ++j) {
      r.logits_transmitted.push_back(z2.at(0, j));
      if (z2.at(0, j) > z2.at(0, r.pred_transmitted)) r.pred_transmitted = j;
    }

    Tensor delta = aes[i] - originals[i];
    r.l2 = l2_norm(delta);
    r.linf = linf_norm(delta);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace robustae::eval
