#include "robustae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "nlohmann/json.hpp"
#include "robustae/image_io.hpp"

namespace robustae::data {

namespace fs = std::filesystem;

Tensor LabeledSet::image(int i) const {
  const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out({1, c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(0, ci, y, x) = images.at(i, ci, y, x);
  return out;
}

namespace {

constexpr int kSize = 32;

struct Rgb {
  double r, g, b;
};

double luma(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

Rgb random_color(Rng& rng) {
  return {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
}

// foreground sampled until it has clear luma contrast against the background,
// so class evidence is carried by the luma plane (which 4:2:0 keeps intact)
Rgb contrasting_color(Rng& rng, const Rgb& bg) {
  for (int tries = 0; tries < 64; ++tries) {
    Rgb c = random_color(rng);
    if (std::abs(luma(c) - luma(bg)) > 0.35) return c;
  }
  double yb = luma(bg);
  return yb > 0.5 ? Rgb{0.05, 0.05, 0.05} : Rgb{0.95, 0.95, 0.95};
}

void put(Tensor& imgs, int n, int y, int x, const Rgb& c) {
  imgs.at(n, 0, y, x) = c.r;
  imgs.at(n, 1, y, x) = c.g;
  imgs.at(n, 2, y, x) = c.b;
}

void draw_shape(Tensor& imgs, int n, int cls, Rng& rng, const Rgb& fg) {
  const double cx = 15.5 + rng.uniform(-3.0, 3.0);
  const double cy = 15.5 + rng.uniform(-3.0, 3.0);
  const double rad = rng.uniform(7.0, 11.0);

  auto inside = [&](int y, int x) -> bool {
    double dx = x - cx, dy = y - cy;
    switch (cls) {
      case 0:  // filled disk
        return dx * dx + dy * dy <= rad * rad;
      case 1: {  // square outline
        double m = std::max(std::abs(dx), std::abs(dy));
        return m <= rad && m >= rad - 2.5;
      }
      case 2:  // filled triangle, apex up
        return dy >= -rad && dy <= rad && std::abs(dx) <= (dy + rad) * 0.6;
      case 3:  // plus
        return (std::abs(dx) <= 2.0 && std::abs(dy) <= rad) ||
               (std::abs(dy) <= 2.0 && std::abs(dx) <= rad);
      case 4:  // horizontal stripes
        return (y / 4) % 2 == 0;
      case 5:  // vertical stripes
        return (x / 4) % 2 == 0;
      case 6:  // checkerboard
        return ((y / 8) + (x / 8)) % 2 == 0;
      case 7: {  // ring
        double d2 = dx * dx + dy * dy;
        return d2 <= rad * rad && d2 >= (rad - 3.0) * (rad - 3.0);
      }
      case 8:  // X
        return std::abs(std::abs(dx) - std::abs(dy)) <= 2.0 &&
               std::max(std::abs(dx), std::abs(dy)) <= rad;
      case 9: {  // 3x3 dot grid
        for (int gy = -1; gy <= 1; ++gy)
          for (int gx = -1; gx <= 1; ++gx) {
            double ddx = x - (cx + gx * 9.0), ddy = y - (cy + gy * 9.0);
            if (ddx * ddx + ddy * ddy <= 2.5 * 2.5) return true;
          }
        return false;
      }
      default:
        return false;
    }
  };

  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x)
      if (inside(y, x)) put(imgs, n, y, x, fg);
}

}  // namespace

LabeledSet make_shapes10(int n, uint64_t seed) {
  LabeledSet set;
  set.num_classes = 10;
  set.images = Tensor({n, 3, kSize, kSize});
  set.labels.resize(n);

  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "shapes10-" + std::to_string(i)));
    int cls = i % 10;
    set.labels[i] = cls;

    Rgb bg0 = random_color(rng), bg1 = random_color(rng);
    bool vertical = rng.uniform(0.0, 1.0) < 0.5;
    for (int y = 0; y < kSize; ++y)
      for (int x = 0; x < kSize; ++x) {
        double t = (vertical ? y : x) / (kSize - 1.0);
        put(set.images, i, y, x,
            {bg0.r + t * (bg1.r - bg0.r), bg0.g + t * (bg1.g - bg0.g),
             bg0.b + t * (bg1.b - bg0.b)});
      }

    Rgb bg_mid = {0.5 * (bg0.r + bg1.r), 0.5 * (bg0.g + bg1.g), 0.5 * (bg0.b + bg1.b)};
    draw_shape(set.images, i, cls, rng, contrasting_color(rng, bg_mid));

    const double sigma = 0.06;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < kSize; ++y)
        for (int x = 0; x < kSize; ++x) {
          double v = set.images.at(i, c, y, x) + rng.normal(0.0, sigma);
          set.images.at(i, c, y, x) = std::clamp(v, 0.0, 1.0);
        }
  }
  return set;
}

void save_pairs(const std::string& root, const PairSet& pairs) {
  fs::create_directories(fs::path(root) / "uploaded");
  fs::create_directories(fs::path(root) / "transmitted");
  std::ofstream manifest(fs::path(root) / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("save_pairs: cannot write manifest in " + root);
  char name[16];
  for (size_t i = 0; i < pairs.size(); ++i) {
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    std::string up = (fs::path(root) / "uploaded" / name).string();
    std::string tr = (fs::path(root) / "transmitted" / name).string();
    io::write_png(up, pairs[i].uploaded);
    io::write_png(tr, pairs[i].transmitted);
    nlohmann::json rec = {{"uploaded_path", std::string("uploaded/") + name},
                          {"transmitted_path", std::string("transmitted/") + name},
                          {"attack", pairs[i].attack},
                          {"channel_id", pairs[i].channel_id},
                          {"est_qf", pairs[i].est_qf}};
    manifest << rec.dump() << "\n";
  }
}

PairSet load_pairs(const std::string& root) {
  std::ifstream manifest(fs::path(root) / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("load_pairs: no manifest.jsonl in " + root);
  PairSet pairs;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    TransmissionPair p;
    p.uploaded = io::read_png((fs::path(root) / rec.at("uploaded_path").get<std::string>()).string());
    p.transmitted =
        io::read_png((fs::path(root) / rec.at("transmitted_path").get<std::string>()).string());
    p.attack = rec.value("attack", "");
    p.channel_id = rec.value("channel_id", "");
    p.est_qf = rec.value("est_qf", 0);
    if (!p.uploaded.same_shape(p.transmitted))
      throw std::runtime_error("load_pairs: shape mismatch in pair " + line);
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw std::runtime_error("load_pairs: empty manifest in " + root);
  return pairs;
}

}  // namespace robustae::data
