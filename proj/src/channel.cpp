#include "robustae/channel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "robustae/image_io.hpp"

namespace robustae::channel {

namespace fs = std::filesystem;

ChannelSpec ChannelSpec::preset(const std::string& id) {
  if (id == "mock-fb") {
    ChannelSpec s;
    s.id = id;
    s.filter = FilterPreset{"sharpen", 0.5};
    s.jpeg_qf = jpeg::QualityFactor(80);
    return s;
  }
  if (id == "mock-alt") {
    ChannelSpec s;
    s.id = id;
    s.jpeg_qf = jpeg::QualityFactor(60);
    return s;
  }
  throw ChannelError("unknown channel preset: " + id);
}

Tensor resize_bilinear(const Tensor& x, int h_to, int w_to) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, h_to, w_to});
  const double sy = static_cast<double>(h) / h_to;
  const double sx = static_cast<double>(w) / w_to;
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h_to; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y1 = std::clamp(y0 + 1, 0, h - 1);
        y0 = std::clamp(y0, 0, h - 1);
        for (int j = 0; j < w_to; ++j) {
          double fx = (j + 0.5) * sx - 0.5;
          int x0 = static_cast<int>(std::floor(fx));
          double wx = fx - x0;
          int x1 = std::clamp(x0 + 1, 0, w - 1);
          x0 = std::clamp(x0, 0, w - 1);
          double top = (1 - wx) * x.at(s, ci, y0, x0) + wx * x.at(s, ci, y0, x1);
          double bot = (1 - wx) * x.at(s, ci, y1, x0) + wx * x.at(s, ci, y1, x1);
          y.at(s, ci, i, j) = (1 - wy) * top + wy * bot;
        }
      }
  return y;
}

Tensor apply_filter(const Tensor& x, const FilterPreset& f) {
  if (f.name != "sharpen") throw ChannelError("unknown filter preset: " + f.name);
  const double s = f.strength;
  // identity + s * 4-neighbor Laplacian
  const double kc = 1.0 + 4.0 * s, kn = -s;
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, h, w});
  auto px = [&](int si, int ci, int i, int j) {
    return x.at(si, ci, std::clamp(i, 0, h - 1), std::clamp(j, 0, w - 1));
  };
  for (int si = 0; si < n; ++si)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          double v = kc * px(si, ci, i, j) + kn * (px(si, ci, i - 1, j) + px(si, ci, i + 1, j) +
                                                   px(si, ci, i, j - 1) + px(si, ci, i, j + 1));
          y.at(si, ci, i, j) = std::clamp(v, 0.0, 1.0);
        }
  return y;
}

TransmitResult transmit(const ChannelSpec& spec, const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != 3)
    throw ChannelError("transmit: expected N x 3 x H x W input with N=1");
  if (x.dim(0) != 1) throw ChannelError("transmit: one image at a time");
  if (!x.all_finite()) throw ChannelError("transmit: non-finite input");

  // truncation: clamp then snap to the 8-bit grid before any processing
  Tensor img = io::quantize8(x);

  if (spec.resize_long_side) {
    int target = *spec.resize_long_side;
    int long_side = std::max(img.dim(2), img.dim(3));
    if (long_side > target) {
      double scale = static_cast<double>(target) / long_side;
      int h2 = std::max(1, static_cast<int>(std::lround(img.dim(2) * scale)));
      int w2 = std::max(1, static_cast<int>(std::lround(img.dim(3) * scale)));
      img = resize_bilinear(img, h2, w2);
    }
  }
  if (spec.filter) img = apply_filter(img, *spec.filter);

  TransmitResult r;
  try {
    r.bytes = io::encode_jpeg(img, spec.jpeg_qf.value);
    r.image = io::decode_jpeg(r.bytes);
  } catch (const io::CodecError& e) {
    throw ChannelError(std::string("channel codec failure: ") + e.what());
  }
  return r;
}

QfAnalysis analyze_qf(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ChannelError("analyze_qf: not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ChannelError("analyze_qf: empty directory: " + dir);

  QfAnalysis a;
  for (const auto& p : files) {
    try {
      auto bytes = io::read_file(p.string());
      auto qt = jpeg::extract_quant_table(bytes);
      int qf = jpeg::estimate_qf(qt).value;
      a.histogram[qf]++;
    } catch (const std::exception& e) {
      std::cerr << "analyze_qf: skipping " << p << ": " << e.what() << "\n";
      a.skipped++;
    }
  }
  if (a.histogram.empty()) throw ChannelError("analyze_qf: no readable JPEG files in " + dir);
  int best_count = -1;
  for (const auto& [qf, count] : a.histogram)
    if (count > best_count) {
      best_count = count;
      a.argmax_qf = qf;
    }
  return a;
}

}  // namespace robustae::channel
