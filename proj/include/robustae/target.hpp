#pragma once

#include <functional>
#include <memory>
#include <string>

#include "robustae/dataset.hpp"
#include "robustae/nn.hpp"

namespace robustae::target {

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Adapter interface for attack targets. Any classifier that can produce
/// logits for a [0,1] NCHW batch and a vector-Jacobian product against them
/// can be wrapped behind this and driven by every attack in the library.
/// Implementations must be safe for concurrent const use.
class TargetModel {
 public:
  virtual ~TargetModel() = default;

  virtual int num_classes() const = 0;
  virtual Tensor logits(const Tensor& x) const = 0;  // (N, c)

  struct LogitsVjp {
    Tensor z;
    std::function<Tensor(const Tensor&)> vjp;  // d(loss)/dlogits -> d(loss)/dx
  };
  virtual LogitsVjp logits_vjp(const Tensor& x) const = 0;

  /// classify is argmax of logits, always.
  int classify_one(const Tensor& x) const;
  std::vector<int> classify(const Tensor& x) const;
};

/// Desk-scale reference classifier: four 3x3 convolutions with two 2x
/// poolings, then two linear layers. Input is 3x32x32.
class SmallCnn : public TargetModel {
 public:
  SmallCnn() = default;
  SmallCnn(int num_classes, uint64_t seed);

  int num_classes() const override { return classes_; }
  Tensor logits(const Tensor& x) const override;
  LogitsVjp logits_vjp(const Tensor& x) const override;

  struct Tape {
    nn::Conv2d::Ctx c1, c2, c3, c4;
    nn::Linear::Ctx f1, f2;
    Tensor a1, a2, a3, a4, a5;  // pre-activations
    Tensor p1_in, p2_in;        // pool input shapes
  };
  Tensor forward(const Tensor& x, Tape* tape) const;
  Tensor backward(const Tape& tape, const Tensor& dlogits, nn::GradBuf* gb) const;

  nn::ParamMap params();

 private:
  int classes_ = 10;
  nn::Conv2d c1_, c2_, c3_, c4_;
  nn::Linear f1_, f2_;
};

/// Toy linear target (logits = W x + b) used by the small-instance oracles.
class LinearTarget : public TargetModel {
 public:
  LinearTarget(Tensor w, Tensor b, std::vector<int> input_shape);

  int num_classes() const override { return w_.dim(0); }
  Tensor logits(const Tensor& x) const override;
  LogitsVjp logits_vjp(const Tensor& x) const override;

 private:
  Tensor w_, b_;
  std::vector<int> input_shape_;
};

struct ClassifierSpec {
  std::string architecture = "smallcnn-v1";
  int num_classes = 10;
  int input_size = 32;
  std::string checkpoint_path;
};

std::shared_ptr<TargetModel> load_classifier(const ClassifierSpec& spec);
void save_classifier(const std::string& path, SmallCnn& model);

struct CnnTrainConfig {
  int epochs = 10;
  int batch = 32;
  double lr = 1e-3;
  double val_frac = 0.2;
  double min_accuracy = 0.8;
  bool verbose = false;
};

struct CnnTrainResult {
  std::shared_ptr<SmallCnn> model;
  double val_accuracy = 0.0;
};

/// Trains the reference CNN; deterministic given the seed. Throws
/// TrainingError with diagnostics when the accuracy floor is unmet.
CnnTrainResult train_reference_cnn(const data::LabeledSet& ds, uint64_t seed,
                                   const CnnTrainConfig& cfg = {});

}  // namespace robustae::target
