#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"
#include "robustae/channel.hpp"
#include "robustae/evaluate.hpp"
#include "robustae/sio_train.hpp"

namespace robustae::exp {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// End-to-end experiment description. One master seed; every stage derives
/// its own stream from it.
struct ExperimentConfig {
  std::string channel_id = "mock-fb";
  std::string out_dir = "runs/exp";
  uint64_t seed = 7;

  int train_images = 4000;  // reference-classifier training set
  int pair_count = 500;     // surrogate-training pairs
  int eval_count = 200;     // held-out, correctly-classified eval images

  target::CnnTrainConfig cnn;
  sio::SIOConfig sio_cfg;
  sio::TrainConfig sio_train;
  std::optional<std::string> sio_checkpoint;  // load instead of training

  attack::Method method = attack::Method::pgd;
  bool robust = true;
  attack::AttackConfig atk;

  std::string defense = "none";

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;
};

uint64_t config_hash(const nlohmann::json& j);

struct Report {
  double asr = 0.0;
  double asr_prime = 0.0;
  double avg_l2 = 0.0;
  double avg_linf = 0.0;
  double acl_true = 0.0;
  double acl_false = 0.0;
  sio::SimMetrics sim;
  int n_images = 0;
  nlohmann::json to_json() const;
  std::string table() const;
};

struct SweepRow {
  double lambda = 0.0;
  double asr = 0.0;
  double asr_prime = 0.0;
  double avg_l2 = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double spearman_asr = 0.0;
  double spearman_asr_prime = 0.0;
};

/// Spearman rank correlation with averaged ranks on ties; 0 when either
/// variable is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Stage-wise pipeline with config-hash manifests: a stage whose manifest
/// matches the current config is a no-op unless force is set.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg, bool force = false);

  std::shared_ptr<target::TargetModel> ensure_target();
  data::PairSet& ensure_pairs();
  sio::SIOModel& ensure_sio();

  struct AttackBatch {
    std::vector<Tensor> originals;
    std::vector<Tensor> aes;
    std::vector<int> labels;
    std::vector<attack::AEResult> results;
  };
  /// Attacks the held-out eval images with the configured method. The
  /// override lets sweeps reuse one pipeline with varying lambda.
  AttackBatch attack_eval_set(const std::optional<attack::AttackConfig>& override_cfg = {},
                              std::optional<bool> robust_override = {});

  Report run();
  SweepResult sweep_lambda(const std::vector<double>& grid);

  const ExperimentConfig& config() const { return cfg_; }
  /// Held-out eval images (correctly classified by the target).
  const std::vector<Tensor>& eval_images();
  const std::vector<int>& eval_labels();

 private:
  ExperimentConfig cfg_;
  bool force_;
  std::shared_ptr<target::TargetModel> target_;
  std::optional<data::PairSet> pairs_;
  std::optional<sio::SIOModel> sio_;
  std::vector<Tensor> eval_images_;
  std::vector<int> eval_labels_;

  bool stage_fresh(const std::string& stage, const nlohmann::json& stage_cfg,
                   const std::vector<std::string>& artifacts) const;
  void write_manifest(const std::string& stage, const nlohmann::json& stage_cfg,
                      const std::vector<std::string>& artifacts) const;
};

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

}  // namespace robustae::exp
