#pragma once

// Domain-adaptation losses, the gradient reversal layer, gradient checking and
// a toy adversarial training loop over synthetic two-domain feature maps.
//
// Feature maps are [n, H, W, C]; domain classifiers produce [n, H, W, 1]
// probability maps. Domain label 0 is the source, 1 the target.

#include "lgsim/autodiff.hpp"
#include "lgsim/errors.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace lgsim {

enum class Activation { Identity, Tanh, Relu, Sigmoid };

std::string to_string(Activation a);

// Per-location affine map followed by an elementwise nonlinearity.
struct Dense {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]
  Activation activation = Activation::Identity;

  // Glorot-uniform weights, zero bias.
  static Dense make(const std::string& name, int in, int out, Activation act, std::mt19937_64& rng);
  int in_dim() const { return weight.value.dim(0); }
  int out_dim() const { return weight.value.dim(1); }
  Graph::Var operator()(Graph& g, Graph::Var x);
};

struct FeatureExtractor {
  std::vector<Dense> layers;

  void validate() const;  // throws ShapeMismatch
  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }
  Graph::Var operator()(Graph& g, Graph::Var x);
  std::vector<Parameter*> parameters();
};

struct DomainClassifier {
  Dense layer;  // C -> 1, sigmoid

  static DomainClassifier make(const std::string& name, int in, std::mt19937_64& rng);
  Graph::Var operator()(Graph& g, Graph::Var features);
  std::vector<Parameter*> parameters();
};

struct GrlConfig {
  double r = 1.0;
  void validate() const;  // throws InvalidArgument unless r > 0
};

struct ForwardBackward {
  Tensor probabilities;                    // [n, H, W, 1]
  std::vector<Tensor> extractor_grads;     // per extractor parameter
  std::vector<Tensor> classifier_grads;    // per classifier parameter
};

// classifier(grl(extractor(input))), back-propagated from `upstream`
// (d objective / d probabilities; ones when empty).
ForwardBackward forward_backward(FeatureExtractor& extractor, DomainClassifier& classifier,
                                 const GrlConfig& grl, const Tensor& input,
                                 const Tensor& upstream = {});

// Plain-value losses. Maps are [H, W] or [1, H, W, 1]; all maps within one
// list share a shape. Probabilities are clamped to [1e-7, 1 - 1e-7].
double sample_level_loss(const std::vector<Tensor>& source_maps, const std::vector<Tensor>& target_maps,
                         LocationReduce reduce = LocationReduce::Mean);
double anchor_level_loss(const std::vector<Tensor>& source_maps, const std::vector<Tensor>& target_maps,
                         LocationReduce reduce = LocationReduce::Mean);
double consistency_loss(const std::vector<Tensor>& sample_source, const std::vector<Tensor>& anchor_source,
                        const std::vector<Tensor>& sample_target, const std::vector<Tensor>& anchor_target,
                        LocationReduce reduce = LocationReduce::Mean);

struct LossBreakdown {
  double detection = 0.0;
  double sample = 0.0;
  double anchor = 0.0;
  double consistency = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

LossBreakdown total_loss(double detection, double sample, double anchor, double consistency, double lambda);

// Mean cross-entropy of a linear head over source features [n, C].
double toy_detection_loss(const Tensor& features, Dense& head, const std::vector<int>& labels);

// Stacks same-shaped maps into a batch [n, H, W, 1].
Tensor stack_maps(const std::vector<Tensor>& maps);

// ---------------------------------------------------------------------------
// Toy model and training

struct ToyDataConfig {
  int grid = 4;            // H = W
  int input_dim = 8;
  int task_dims = 2;       // leading dims carry the class signal
  double class_offset = 1.0;
  double noise = 1.0;
  double domain_shift = 2.0;  // target offset on every nuisance dim
  int train_per_domain = 256;
  int eval_per_domain = 256;
};

struct DomainData {
  Tensor inputs;            // [n, H, W, D]
  std::vector<int> labels;  // task labels (hidden from training for the target)
};

struct ToyDataset {
  DomainData source_train, target_train, source_eval, target_eval;
};

ToyDataset make_toy_dataset(const ToyDataConfig& config, std::uint64_t seed);

struct ToyTrainConfig {
  ToyDataConfig data;
  std::vector<int> sample_widths = {8};  // F_s layers
  std::vector<int> anchor_widths = {4};  // layers after the 2x2 pool
  int classes = 2;
  int epochs = 150;
  int batch = 16;
  double learning_rate = 0.001;           // extractor and task head
  double classifier_learning_rate = 0.1;  // domain classifiers
  double lambda = 0.1;
  GrlConfig grl;
  LocationReduce reduce = LocationReduce::Mean;
  std::uint64_t seed = 7;
};

struct ToyModel {
  FeatureExtractor sample_extractor;  // F_s
  FeatureExtractor anchor_extractor;  // F_a after pooling
  Dense task_head;
  DomainClassifier sample_classifier;  // D_s
  DomainClassifier anchor_classifier;  // D_a

  static ToyModel make(const ToyTrainConfig& config, std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> extractor_parameters();
  std::vector<Parameter*> classifier_parameters();
};

struct ToyLossVars {
  Graph::Var detection, sample, anchor, consistency, total;
  LossBreakdown values;
};

// Builds the full objective for one source/target batch.
ToyLossVars build_toy_loss(Graph& g, ToyModel& model, const Tensor& source, const std::vector<int>& labels,
                           const Tensor& target, double lambda, const GrlConfig& grl, LocationReduce reduce);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;  // batch means
};

struct ToyReport {
  static constexpr int kSchemaVersion = 1;
  ToyTrainConfig config;
  std::vector<EpochRecord> epochs;
  double source_task_accuracy = 0.0;
  double target_task_accuracy = 0.0;
  double domain_accuracy = 0.0;         // probe on frozen F_s features
  double anchor_domain_accuracy = 0.0;  // probe on frozen F_a features
  bool diverged = false;
};

class DivergedTraining : public Error {
public:
  DivergedTraining(const std::string& what, ToyReport partial)
      : Error("DivergedTraining", what), partial_(std::move(partial)) {}
  const ToyReport& partial() const noexcept { return partial_; }

private:
  ToyReport partial_;
};

ToyReport toy_adversarial_train(const ToyTrainConfig& config);

std::string report_to_json(const ToyReport& report);

// Held-out accuracy of a fresh logistic-regression probe trained on the first
// half of each feature set and scored on the second half. Rows are feature
// vectors; the split is by row order.
double domain_probe_accuracy(const std::vector<std::vector<double>>& source,
                             const std::vector<std::vector<double>>& target);

class Adam {
public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(const std::vector<Parameter*>& params);

private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Gradient checking

struct GradcheckEntry {
  std::string op;
  std::size_t checked = 0;  // gradient components compared
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  double step = 1e-6;
  double tolerance = 1e-6;
  int configurations = 0;
  std::vector<GradcheckEntry> entries;
  bool passed() const;
  double max_rel_error() const;
};

// |a - n| / max(|a|, |n|, kGradcheckFloor)
double gradcheck_relative_error(double analytic, double numeric);
constexpr double kGradcheckFloor = 1e-2;

struct GradcheckOptions {
  std::uint64_t seed = 1;
  int configurations = 100;
  double step = 1e-6;
  double tolerance = 1e-6;
  bool inject_grl_sign_bug = false;
};

// Checks every differentiable op, plus the full adversarial objective, against
// central differences. Gradients of parameters upstream of a GRL are expected
// to equal -r times the difference quotient of the reversed loss terms.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

std::string gradcheck_to_json(const GradcheckReport& report);

}  // namespace lgsim
