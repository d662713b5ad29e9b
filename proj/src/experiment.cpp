#include "robustae/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "robustae/image_io.hpp"

namespace robustae::exp {

namespace fs = std::filesystem;

void write_json(const std::string& path, const nlohmann::json& j) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_json: cannot open " + path);
  f << j.dump(2) << "\n";
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_json: cannot open " + path);
  return nlohmann::json::parse(f);
}

uint64_t config_hash(const nlohmann::json& j) {
  std::string s = j.dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = (i + j) / 2.0 + 1.0;  // averaged rank for the tie group
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double num = 0, va = 0, vb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0 || vb <= 0) return 0.0;
  return num / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Config serialization

namespace {

nlohmann::json atk_to_json(const attack::AttackConfig& a) {
  return {{"epsilon", a.epsilon},
          {"alpha", a.alpha},
          {"iters", a.iters},
          {"mu", a.mu},
          {"lambda", a.lambda},
          {"c", a.c_fidelity},
          {"k", a.margin_k},
          {"cw_lr", a.cw_lr},
          {"success_on",
           a.success_on == attack::AttackConfig::SuccessOn::clean ? "clean" : "transmitted"},
          {"momentum_norm",
           a.momentum_norm == attack::AttackConfig::MomentumNorm::grad ? "grad" : "loss"},
          {"mifgsm_literal_rebase", a.mifgsm_literal_rebase}};
}

attack::AttackConfig atk_from_json(const nlohmann::json& j) {
  attack::AttackConfig a;
  a.epsilon = j.value("epsilon", a.epsilon);
  a.alpha = j.value("alpha", a.alpha);
  a.iters = j.value("iters", a.iters);
  a.mu = j.value("mu", a.mu);
  a.lambda = j.value("lambda", a.lambda);
  a.c_fidelity = j.value("c", a.c_fidelity);
  a.margin_k = j.value("k", a.margin_k);
  a.cw_lr = j.value("cw_lr", a.cw_lr);
  if (j.value("success_on", "clean") == std::string("transmitted"))
    a.success_on = attack::AttackConfig::SuccessOn::transmitted;
  if (j.value("momentum_norm", "grad") == std::string("loss"))
    a.momentum_norm = attack::AttackConfig::MomentumNorm::loss;
  a.mifgsm_literal_rebase = j.value("mifgsm_literal_rebase", false);
  return a;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["channel"] = channel_id;
  j["out_dir"] = out_dir;
  j["seed"] = seed;
  j["train_images"] = train_images;
  j["pair_count"] = pair_count;
  j["eval_count"] = eval_count;
  j["cnn"] = {{"epochs", cnn.epochs}, {"batch", cnn.batch}, {"lr", cnn.lr},
              {"min_accuracy", cnn.min_accuracy}};
  j["sio"] = {{"widths", sio_cfg.widths},
              {"reduction", sio_cfg.reduction},
              {"use_residual", sio_cfg.use_residual},
              {"use_jpeg_tail", sio_cfg.use_jpeg_tail},
              {"use_scse", sio_cfg.use_scse}};
  j["sio_train"] = {{"lr", sio_train.lr},
                    {"max_epochs", sio_train.max_epochs},
                    {"batch_size", sio_train.batch_size},
                    {"plateau_patience", sio_train.plateau_patience}};
  if (sio_checkpoint) j["sio_checkpoint"] = *sio_checkpoint;
  j["attack"] = atk_to_json(atk);
  j["attack"]["method"] = attack::method_to_string(method);
  j["attack"]["robust"] = robust;
  j["defense"] = defense;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.channel_id = j.value("channel", c.channel_id);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.seed = j.value("seed", c.seed);
  c.train_images = j.value("train_images", c.train_images);
  c.pair_count = j.value("pair_count", c.pair_count);
  c.eval_count = j.value("eval_count", c.eval_count);
  if (j.contains("cnn")) {
    c.cnn.epochs = j["cnn"].value("epochs", c.cnn.epochs);
    c.cnn.batch = j["cnn"].value("batch", c.cnn.batch);
    c.cnn.lr = j["cnn"].value("lr", c.cnn.lr);
    c.cnn.min_accuracy = j["cnn"].value("min_accuracy", c.cnn.min_accuracy);
  }
  if (j.contains("sio")) {
    auto ws = j["sio"].value("widths", std::vector<int>{16, 32, 64, 128});
    if (ws.size() == 4) std::copy(ws.begin(), ws.end(), c.sio_cfg.widths.begin());
    c.sio_cfg.reduction = j["sio"].value("reduction", c.sio_cfg.reduction);
    c.sio_cfg.use_residual = j["sio"].value("use_residual", true);
    c.sio_cfg.use_jpeg_tail = j["sio"].value("use_jpeg_tail", true);
    c.sio_cfg.use_scse = j["sio"].value("use_scse", true);
  }
  if (j.contains("sio_train")) {
    c.sio_train.lr = j["sio_train"].value("lr", c.sio_train.lr);
    c.sio_train.max_epochs = j["sio_train"].value("max_epochs", c.sio_train.max_epochs);
    c.sio_train.batch_size = j["sio_train"].value("batch_size", c.sio_train.batch_size);
    c.sio_train.plateau_patience =
        j["sio_train"].value("plateau_patience", c.sio_train.plateau_patience);
  }
  if (j.contains("sio_checkpoint")) c.sio_checkpoint = j["sio_checkpoint"].get<std::string>();
  if (j.contains("attack")) {
    c.atk = atk_from_json(j["attack"]);
    c.method = attack::method_from_string(j["attack"].value("method", "pgd"));
    c.robust = j["attack"].value("robust", true);
  }
  c.defense = j.value("defense", c.defense);
  return c;
}

void ExperimentConfig::validate() const {
  channel::ChannelSpec::preset(channel_id);  // throws on unknown id
  atk.validate();
  if (robust && sio_checkpoint && !fs::exists(*sio_checkpoint))
    throw ConfigError("robust attack configured but sio checkpoint is missing: " +
                      *sio_checkpoint);
  if (eval_count < 1 || pair_count < 1 || train_images < 10)
    throw ConfigError("experiment sizes out of range");
}

// ---------------------------------------------------------------------------
// Report

nlohmann::json Report::to_json() const {
  return {{"asr", asr},
          {"asr_prime", asr_prime},
          {"avg_l2", avg_l2},
          {"avg_linf", avg_linf},
          {"acl_true", acl_true},
          {"acl_false", acl_false},
          {"sim", {{"psnr", sim.psnr}, {"ssim", sim.ssim}, {"mse", sim.mse}}},
          {"n_images", n_images}};
}

std::string Report::table() const {
  std::ostringstream os;
  os << "  metric        value\n";
  os << "  ASR           " << asr * 100 << " %\n";
  os << "  ASR'          " << asr_prime * 100 << " %\n";
  os << "  Avg.l2        " << avg_l2 << "\n";
  os << "  Avg.linf      " << avg_linf << "\n";
  os << "  ACL(true)     " << acl_true << "\n";
  os << "  ACL(false)    " << acl_false << "\n";
  os << "  sim PSNR      " << sim.psnr << " dB\n";
  os << "  sim SSIM      " << sim.ssim << "\n";
  os << "  sim MSE       " << sim.mse << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(ExperimentConfig cfg, bool force) : cfg_(std::move(cfg)), force_(force) {
  cfg_.validate();
  fs::create_directories(cfg_.out_dir);
}

bool Pipeline::stage_fresh(const std::string& stage, const nlohmann::json& stage_cfg,
                           const std::vector<std::string>& artifacts) const {
  if (force_) return false;
  fs::path mpath = fs::path(cfg_.out_dir) / (stage + ".manifest.json");
  if (!fs::exists(mpath)) return false;
  try {
    nlohmann::json m = read_json(mpath.string());
    if (m.value("config_hash", uint64_t(0)) != config_hash(stage_cfg)) return false;
  } catch (...) {
    return false;
  }
  for (const auto& a : artifacts)
    if (!fs::exists(a)) return false;
  return true;
}

void Pipeline::write_manifest(const std::string& stage, const nlohmann::json& stage_cfg,
                              const std::vector<std::string>& artifacts) const {
  nlohmann::json m = {{"stage", stage},
                      {"config_hash", config_hash(stage_cfg)},
                      {"artifacts", artifacts}};
  write_json((fs::path(cfg_.out_dir) / (stage + ".manifest.json")).string(), m);
}

std::shared_ptr<target::TargetModel> Pipeline::ensure_target() {
  if (target_) return target_;
  std::string path = (fs::path(cfg_.out_dir) / "target.ckpt").string();
  nlohmann::json scfg = {{"train_images", cfg_.train_images},
                         {"seed", cfg_.seed},
                         {"epochs", cfg_.cnn.epochs},
                         {"lr", cfg_.cnn.lr}};
  if (stage_fresh("target", scfg, {path})) {
    target::ClassifierSpec spec;
    spec.checkpoint_path = path;
    target_ = target::load_classifier(spec);
    return target_;
  }
  auto ds = data::make_shapes10(cfg_.train_images, derive_seed(cfg_.seed, "dataset-train"));
  auto res = target::train_reference_cnn(ds, derive_seed(cfg_.seed, "cnn"), cfg_.cnn);
  std::cerr << "[pipeline] target trained, held-out accuracy " << res.val_accuracy << "\n";
  target::save_classifier(path, *res.model);
  write_manifest("target", scfg, {path});
  target_ = res.model;
  return target_;
}

data::PairSet& Pipeline::ensure_pairs() {
  if (pairs_) return *pairs_;
  auto model = ensure_target();
  std::string root = (fs::path(cfg_.out_dir) / "pairs" / cfg_.channel_id).string();
  nlohmann::json scfg = {{"pair_count", cfg_.pair_count},
                         {"channel", cfg_.channel_id},
                         {"seed", cfg_.seed}};
  if (stage_fresh("pairs", scfg, {root + "/manifest.jsonl"})) {
    pairs_ = data::load_pairs(root);
    return *pairs_;
  }
  auto spec = channel::ChannelSpec::preset(cfg_.channel_id);
  auto clean = data::make_shapes10(cfg_.pair_count, derive_seed(cfg_.seed, "dataset-pairs"));
  std::vector<attack::Method> mix = {attack::Method::fgsm, attack::Method::pgd,
                                     attack::Method::mifgsm, attack::Method::cw};
  pairs_ = channel::build_pairs(spec, clean, *model, mix, derive_seed(cfg_.seed, "pairs"));
  data::save_pairs(root, *pairs_);
  write_manifest("pairs", scfg, {root + "/manifest.jsonl"});
  return *pairs_;
}

sio::SIOModel& Pipeline::ensure_sio() {
  if (sio_) return *sio_;
  if (cfg_.sio_checkpoint) {
    sio_ = sio::load_sio(*cfg_.sio_checkpoint);
    return *sio_;
  }
  std::string path = (fs::path(cfg_.out_dir) / "sio.ckpt").string();
  nlohmann::json scfg = cfg_.to_json()["sio"];
  scfg["sio_train"] = cfg_.to_json()["sio_train"];
  scfg["pair_count"] = cfg_.pair_count;
  scfg["seed"] = cfg_.seed;
  if (stage_fresh("sio", scfg, {path})) {
    sio_ = sio::load_sio(path);
    return *sio_;
  }
  auto pairs = ensure_pairs();
  // maximum-likelihood quality factor from the transmitted streams
  std::map<int, int> hist;
  for (const auto& p : pairs) hist[p.est_qf]++;
  int best_qf = 0, best_count = -1;
  for (auto [qf, count] : hist)
    if (count > best_count) {
      best_count = count;
      best_qf = qf;
    }
  sio::SIOConfig scc = cfg_.sio_cfg;
  scc.q = jpeg::QualityFactor(best_qf);
  sio::SIOModel model(scc, derive_seed(cfg_.seed, "sio-init"));
  sio::TrainConfig tc = cfg_.sio_train;
  tc.seed = derive_seed(cfg_.seed, "sio-train");
  auto log = sio::train_sio(model, pairs, tc);
  log.write_csv((fs::path(cfg_.out_dir) / "sio_train_log.csv").string());
  sio::save_sio(path, model);
  write_manifest("sio", scfg, {path});
  sio_ = std::move(model);
  return *sio_;
}

const std::vector<Tensor>& Pipeline::eval_images() {
  if (!eval_images_.empty()) return eval_images_;
  auto model = ensure_target();
  // oversample, keep the first eval_count correctly-classified images
  int pool = cfg_.eval_count * 2 + 64;
  auto ds = data::make_shapes10(pool, derive_seed(cfg_.seed, "dataset-eval"));
  for (int i = 0; i < ds.size() && static_cast<int>(eval_images_.size()) < cfg_.eval_count; ++i) {
    Tensor img = ds.image(i);
    if (model->classify_one(img) == ds.labels[i]) {
      eval_images_.push_back(std::move(img));
      eval_labels_.push_back(ds.labels[i]);
    }
  }
  if (static_cast<int>(eval_images_.size()) < cfg_.eval_count)
    std::cerr << "[pipeline] warning: only " << eval_images_.size()
              << " correctly-classified eval images available\n";
  return eval_images_;
}

const std::vector<int>& Pipeline::eval_labels() {
  eval_images();
  return eval_labels_;
}

Pipeline::AttackBatch Pipeline::attack_eval_set(
    const std::optional<attack::AttackConfig>& override_cfg, std::optional<bool> robust_override) {
  auto model = ensure_target();
  bool robust = robust_override.value_or(cfg_.robust);
  const sio::SIOModel* surrogate = nullptr;
  if (robust) surrogate = &ensure_sio();
  attack::AttackConfig acfg = override_cfg.value_or(cfg_.atk);
  if (!robust) acfg.lambda = 1.0;

  AttackBatch batch;
  const auto& imgs = eval_images();
  const auto& labels = eval_labels();
  for (size_t i = 0; i < imgs.size(); ++i) {
    attack::AttackConfig ci = acfg;
    ci.seed = derive_seed(cfg_.seed, "attack-" + std::to_string(i));
    attack::AEResult r = attack::run_attack(cfg_.method, imgs[i], labels[i], *model,
                                            surrogate, ci);
    batch.originals.push_back(imgs[i]);
    batch.labels.push_back(labels[i]);
    batch.aes.push_back(r.adversarial);
    batch.results.push_back(std::move(r));
  }
  return batch;
}

Report Pipeline::run() {
  auto model = ensure_target();
  auto spec = channel::ChannelSpec::preset(cfg_.channel_id);
  AttackBatch batch = attack_eval_set();

  // persist AEs + results manifest
  fs::path ae_dir = fs::path(cfg_.out_dir) / "aes" /
                    (attack::method_to_string(cfg_.method) + (cfg_.robust ? "-robust" : "-vanilla"));
  fs::create_directories(ae_dir);
  std::ofstream results((ae_dir / "results.jsonl").string());
  for (size_t i = 0; i < batch.aes.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    io::write_png((ae_dir / name).string(), batch.aes[i]);
    nlohmann::json rec = {{"path", name},
                          {"y", batch.labels[i]},
                          {"success_clean", batch.results[i].success_clean},
                          {"l2", batch.results[i].l2},
                          {"linf", batch.results[i].linf},
                          {"iters", batch.results[i].iterations_used}};
    results << rec.dump() << "\n";
  }

  int defense_param = 0;
  eval::Defense defense = eval::defense_from_string(cfg_.defense, &defense_param);
  auto records = eval::evaluate_aes(batch.aes, batch.originals, batch.labels, spec, *model,
                                    defense, defense_param, derive_seed(cfg_.seed, "defense"));
  auto rates = eval::asr(records);

  Report rep;
  rep.asr = rates.asr;
  rep.asr_prime = rates.asr_prime;
  rep.n_images = static_cast<int>(records.size());
  for (const auto& r : records) {
    rep.avg_l2 += r.l2;
    rep.avg_linf += r.linf;
  }
  rep.avg_l2 /= rep.n_images;
  rep.avg_linf /= rep.n_images;

  // confidence levels over the transmitted AEs
  {
    const int m = static_cast<int>(batch.aes.size());
    const int h = batch.aes[0].dim(2), w = batch.aes[0].dim(3);
    Tensor transmitted({m, 3, h, w});
    for (int i = 0; i < m; ++i) {
      Tensor t = channel::transmit(spec, batch.aes[i]).image;
      for (int c = 0; c < 3; ++c)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) transmitted.at(i, c, yy, xx) = t.at(0, c, yy, xx);
    }
    rep.acl_true = eval::acl(transmitted, batch.labels, *model, true);
    rep.acl_false = eval::acl(transmitted, batch.labels, *model, false);
  }

  if (cfg_.robust || cfg_.sio_checkpoint) {
    auto& surrogate = ensure_sio();
    auto& pairs = ensure_pairs();
    // validation slice: last 10% of the pair set
    size_t n_val = std::max<size_t>(1, pairs.size() / 10);
    data::PairSet val(pairs.end() - n_val, pairs.end());
    rep.sim = sio::validate_sim(surrogate, val);
  }

  write_json((fs::path(cfg_.out_dir) / "report.json").string(), rep.to_json());
  std::ofstream table((fs::path(cfg_.out_dir) / "report.txt").string());
  table << rep.table();
  // CSV mirror of the headline columns
  std::ofstream csv((fs::path(cfg_.out_dir) / "report.csv").string());
  csv << "method,robust,lambda,asr,asr_prime,avg_l2\n";
  csv << attack::method_to_string(cfg_.method) << "," << (cfg_.robust ? 1 : 0) << ","
      << cfg_.atk.lambda << "," << rep.asr << "," << rep.asr_prime << "," << rep.avg_l2 << "\n";
  return rep;
}

SweepResult Pipeline::sweep_lambda(const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("sweep_lambda: empty grid");
  for (double l : grid)
    if (l <= 0.0 || l > 1.0)
      throw std::invalid_argument("sweep_lambda: lambda values must be in (0,1]");
  auto model = ensure_target();
  auto spec = channel::ChannelSpec::preset(cfg_.channel_id);

  SweepResult out;
  for (double l : grid) {
    attack::AttackConfig acfg = cfg_.atk;
    acfg.lambda = l;
    AttackBatch batch = attack_eval_set(acfg, l < 1.0 ? true : cfg_.robust);
    auto records = eval::evaluate_aes(batch.aes, batch.originals, batch.labels, spec, *model);
    auto rates = eval::asr(records);
    double avg_l2 = 0.0;
    for (const auto& r : records) avg_l2 += r.l2;
    avg_l2 /= records.size();
    out.rows.push_back({l, rates.asr, rates.asr_prime, avg_l2});
  }

  std::vector<double> ls, asrs, asrps;
  for (const auto& r : out.rows) {
    ls.push_back(r.lambda);
    asrs.push_back(r.asr);
    asrps.push_back(r.asr_prime);
  }
  out.spearman_asr = spearman(ls, asrs);
  out.spearman_asr_prime = spearman(ls, asrps);

  std::ofstream csv((fs::path(cfg_.out_dir) / "sweep_lambda.csv").string());
  csv << "lambda,asr,asr_prime,avg_l2\n";
  for (const auto& r : out.rows)
    csv << r.lambda << "," << r.asr << "," << r.asr_prime << "," << r.avg_l2 << "\n";
  nlohmann::json j = {{"spearman_asr", out.spearman_asr},
                      {"spearman_asr_prime", out.spearman_asr_prime}};
  write_json((fs::path(cfg_.out_dir) / "sweep_lambda.json").string(), j);
  return out;
}

}  // namespace robustae::exp
