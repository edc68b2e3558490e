#include "lgsim/da_core.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lgsim {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

Dense Dense::make(const std::string& name, int in, int out, Activation act, std::mt19937_64& rng) {
  if (in <= 0 || out <= 0) throw ShapeMismatch("dense layer " + name + " needs positive widths");
  const double a = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor w({in, out});
  for (double& v : w.values) v = u(rng);
  Dense d;
  d.weight = Parameter(name + ".weight", std::move(w));
  d.bias = Parameter(name + ".bias", Tensor({out}, 0.0));
  d.activation = act;
  return d;
}

Graph::Var Dense::operator()(Graph& g, Graph::Var x) {
  Graph::Var y = g.add_bias(g.matmul(x, g.parameter(weight)), g.parameter(bias));
  switch (activation) {
    case Activation::Identity: return y;
    case Activation::Tanh: return g.tanh(y);
    case Activation::Relu: return g.relu(y);
    case Activation::Sigmoid: return g.sigmoid(y);
  }
  return y;
}

void FeatureExtractor::validate() const {
  if (layers.empty()) throw ShapeMismatch("feature extractor has no layers");
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i - 1].out_dim() != layers[i].in_dim()) {
      throw ShapeMismatch("layer " + std::to_string(i) + " expects width " +
                          std::to_string(layers[i].in_dim()) + ", previous layer gives " +
                          std::to_string(layers[i - 1].out_dim()));
    }
  }
}

Graph::Var FeatureExtractor::operator()(Graph& g, Graph::Var x) {
  for (auto& l : layers) x = l(g, x);
  return x;
}

std::vector<Parameter*> FeatureExtractor::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

DomainClassifier DomainClassifier::make(const std::string& name, int in, std::mt19937_64& rng) {
  return {Dense::make(name, in, 1, Activation::Sigmoid, rng)};
}

Graph::Var DomainClassifier::operator()(Graph& g, Graph::Var features) { return layer(g, features); }

std::vector<Parameter*> DomainClassifier::parameters() { return {&layer.weight, &layer.bias}; }

void GrlConfig::validate() const {
  if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("GRL magnitude r must be positive");
}

ForwardBackward forward_backward(FeatureExtractor& extractor, DomainClassifier& classifier,
                                 const GrlConfig& grl, const Tensor& input, const Tensor& upstream) {
  extractor.validate();
  grl.validate();
  Tensor x = input;
  if (x.rank() == 3) x.shape.insert(x.shape.begin(), 1);
  if (x.rank() != 4 || x.dim(3) != extractor.in_dim()) {
    throw ShapeMismatch("input " + shape_string(input.shape) + " does not fit extractor width " +
                        std::to_string(extractor.in_dim()));
  }
  if (classifier.layer.in_dim() != extractor.out_dim()) {
    throw ShapeMismatch("classifier width does not match extractor output");
  }
  auto params = extractor.parameters();
  auto cparams = classifier.parameters();
  for (auto* p : params) p->zero_grad();
  for (auto* p : cparams) p->zero_grad();

  Graph g;
  const auto prob = classifier(g, g.grl(extractor(g, g.constant(std::move(x))), grl.r));
  std::vector<double> w(g.value(prob).size(), 1.0);
  if (!upstream.values.empty()) {
    if (upstream.size() != w.size()) throw ShapeMismatch("upstream gradient does not match the probability map");
    w = upstream.values;
  }
  g.backward(g.weighted_sum(prob, w));

  ForwardBackward out;
  out.probabilities = g.value(prob);
  for (auto* p : params) out.extractor_grads.push_back(p->grad);
  for (auto* p : cparams) out.classifier_grads.push_back(p->grad);
  return out;
}

Tensor stack_maps(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw EmptyBatch("no maps in batch");
  auto hw = [](const Tensor& m) -> std::pair<int, int> {
    if (m.rank() == 2) return {m.dim(0), m.dim(1)};
    if (m.rank() == 4 && m.dim(0) == 1 && m.dim(3) == 1) return {m.dim(1), m.dim(2)};
    throw ShapeMismatch("map must be [H, W] or [1, H, W, 1], got " + shape_string(m.shape));
  };
  const auto [h, w] = hw(maps.front());
  Tensor out({static_cast<int>(maps.size()), h, w, 1});
  std::size_t k = 0;
  for (const auto& m : maps) {
    if (hw(m) != std::pair{h, w}) throw ShapeMismatch("maps in a batch must share a shape");
    for (double v : m.values) out[k++] = v;
  }
  return out;
}

namespace {

double level_loss(const std::vector<Tensor>& source, const std::vector<Tensor>& target, LocationReduce reduce) {
  Graph g;
  const auto s = g.domain_bce(g.constant(stack_maps(source)), 0, reduce);
  const auto t = g.domain_bce(g.constant(stack_maps(target)), 1, reduce);
  return g.scalar(g.add(s, t));
}

}  // namespace

double sample_level_loss(const std::vector<Tensor>& source_maps, const std::vector<Tensor>& target_maps,
                         LocationReduce reduce) {
  return level_loss(source_maps, target_maps, reduce);
}

double anchor_level_loss(const std::vector<Tensor>& source_maps, const std::vector<Tensor>& target_maps,
                         LocationReduce reduce) {
  return level_loss(source_maps, target_maps, reduce);
}

double consistency_loss(const std::vector<Tensor>& sample_source, const std::vector<Tensor>& anchor_source,
                        const std::vector<Tensor>& sample_target, const std::vector<Tensor>& anchor_target,
                        LocationReduce reduce) {
  Graph g;
  auto gap = [&](const std::vector<Tensor>& s, const std::vector<Tensor>& a) {
    return g.abs(g.sub(g.level_mean(g.constant(stack_maps(s)), reduce),
                       g.level_mean(g.constant(stack_maps(a)), reduce)));
  };
  return g.scalar(g.add(gap(sample_source, anchor_source), gap(sample_target, anchor_target)));
}

LossBreakdown total_loss(double detection, double sample, double anchor, double consistency, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
  return {detection, sample, anchor, consistency, lambda,
          detection + lambda * (sample + anchor + consistency)};
}

double toy_detection_loss(const Tensor& features, Dense& head, const std::vector<int>& labels) {
  if (features.rank() != 2) throw ShapeMismatch("source features must be [n, C]");
  if (features.dim(0) == 0) throw EmptyBatch("no source features");
  Graph g;
  return g.scalar(g.softmax_xent(head(g, g.constant(features)), labels));
}

// ---------------------------------------------------------------------------

ToyDataset make_toy_dataset(const ToyDataConfig& c, std::uint64_t seed) {
  if (c.grid <= 0 || c.grid % 2) throw InvalidArgument("toy grid must be even and positive");
  if (c.task_dims < 1 || c.task_dims > c.input_dim) throw InvalidArgument("task_dims out of range");
  if (c.train_per_domain < 2 || c.eval_per_domain < 2) throw EmptyBatch("toy domains need at least two items");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  auto make = [&](int n, double shift) {
    DomainData d;
    d.inputs = Tensor({n, c.grid, c.grid, c.input_dim});
    std::size_t k = 0;
    for (int i = 0; i < n; ++i) {
      const int y = coin(rng) ? 1 : 0;
      d.labels.push_back(y);
      for (int l = 0; l < c.grid * c.grid; ++l) {
        for (int j = 0; j < c.input_dim; ++j) {
          const double mu = j < c.task_dims ? (y ? c.class_offset : -c.class_offset) : shift;
          d.inputs[k++] = mu + c.noise * normal(rng);
        }
      }
    }
    return d;
  };
  ToyDataset ds;
  ds.source_train = make(c.train_per_domain, 0.0);
  ds.target_train = make(c.train_per_domain, c.domain_shift);
  ds.source_eval = make(c.eval_per_domain, 0.0);
  ds.target_eval = make(c.eval_per_domain, c.domain_shift);
  return ds;
}

ToyModel ToyModel::make(const ToyTrainConfig& c, std::mt19937_64& rng) {
  if (c.sample_widths.empty() || c.anchor_widths.empty()) throw InvalidArgument("toy model needs layers");
  ToyModel m;
  int width = c.data.input_dim;
  for (std::size_t i = 0; i < c.sample_widths.size(); ++i) {
    m.sample_extractor.layers.push_back(
        Dense::make("sample." + std::to_string(i), width, c.sample_widths[i], Activation::Tanh, rng));
    width = c.sample_widths[i];
  }
  const int sample_width = width;
  for (std::size_t i = 0; i < c.anchor_widths.size(); ++i) {
    m.anchor_extractor.layers.push_back(
        Dense::make("anchor." + std::to_string(i), width, c.anchor_widths[i], Activation::Tanh, rng));
    width = c.anchor_widths[i];
  }
  m.task_head = Dense::make("task", width, c.classes, Activation::Identity, rng);
  m.sample_classifier = DomainClassifier::make("domain.sample", sample_width, rng);
  m.anchor_classifier = DomainClassifier::make("domain.anchor", width, rng);
  return m;
}

std::vector<Parameter*> ToyModel::extractor_parameters() {
  auto out = sample_extractor.parameters();
  for (auto* p : anchor_extractor.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> ToyModel::classifier_parameters() {
  auto out = sample_classifier.parameters();
  for (auto* p : anchor_classifier.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> ToyModel::parameters() {
  auto out = extractor_parameters();
  out.push_back(&task_head.weight);
  out.push_back(&task_head.bias);
  for (auto* p : classifier_parameters()) out.push_back(p);
  return out;
}

ToyLossVars build_toy_loss(Graph& g, ToyModel& m, const Tensor& source, const std::vector<int>& labels,
                           const Tensor& target, double lambda, const GrlConfig& grl, LocationReduce reduce) {
  if (source.rank() != 4 || target.rank() != 4) throw ShapeMismatch("toy batches must be [n, H, W, D]");
  const auto fs_s = m.sample_extractor(g, g.constant(source));
  const auto fs_t = m.sample_extractor(g, g.constant(target));
  const auto fa_s = m.anchor_extractor(g, g.avg_pool2x2(fs_s));
  const auto fa_t = m.anchor_extractor(g, g.avg_pool2x2(fs_t));

  ToyLossVars out;
  out.detection = g.softmax_xent(m.task_head(g, g.location_mean(fa_s)), labels);

  const auto ds_s = m.sample_classifier(g, g.grl(fs_s, grl.r));
  const auto ds_t = m.sample_classifier(g, g.grl(fs_t, grl.r));
  const auto da_s = m.anchor_classifier(g, g.grl(fa_s, grl.r));
  const auto da_t = m.anchor_classifier(g, g.grl(fa_t, grl.r));
  out.sample = g.add(g.domain_bce(ds_s, 0, reduce), g.domain_bce(ds_t, 1, reduce));
  out.anchor = g.add(g.domain_bce(da_s, 0, reduce), g.domain_bce(da_t, 1, reduce));
  out.consistency =
      g.add(g.abs(g.sub(g.level_mean(ds_s, reduce), g.level_mean(da_s, reduce))),
            g.abs(g.sub(g.level_mean(ds_t, reduce), g.level_mean(da_t, reduce))));
  out.total = g.add(out.detection, g.scale(g.add(g.add(out.sample, out.anchor), out.consistency), lambda));
  out.values = total_loss(g.scalar(out.detection), g.scalar(out.sample), g.scalar(out.anchor),
                          g.scalar(out.consistency), lambda);
  return out;
}

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->value.size(), 0.0);
      v_[i].assign(params[i]->value.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i]->value.values;
    const auto& gr = params[i]->grad.values;
    for (std::size_t k = 0; k < w.size(); ++k) {
      m_[i][k] = b1_ * m_[i][k] + (1.0 - b1_) * gr[k];
      v_[i][k] = b2_ * v_[i][k] + (1.0 - b2_) * gr[k] * gr[k];
      w[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
    }
  }
}

double domain_probe_accuracy(const std::vector<std::vector<double>>& source,
                             const std::vector<std::vector<double>>& target) {
  if (source.size() < 2 || target.size() < 2) throw EmptyBatch("probe needs two rows per domain");
  const std::size_t dim = source.front().size();
  struct Row {
    const std::vector<double>* x;
    int y;
  };
  std::vector<Row> train, test;
  for (std::size_t i = 0; i < source.size(); ++i) (i < source.size() / 2 ? train : test).push_back({&source[i], 0});
  for (std::size_t i = 0; i < target.size(); ++i) (i < target.size() / 2 ? train : test).push_back({&target[i], 1});

  std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
  for (const auto& r : train)
    for (std::size_t j = 0; j < dim; ++j) mu[j] += (*r.x)[j] / double(train.size());
  for (const auto& r : train)
    for (std::size_t j = 0; j < dim; ++j) sd[j] += std::pow((*r.x)[j] - mu[j], 2) / double(train.size());
  for (double& s : sd) s = std::sqrt(s) + 1e-12;

  std::vector<double> w(dim + 1, 0.0);
  auto logit = [&](const std::vector<double>& x) {
    double z = w[dim];
    for (std::size_t j = 0; j < dim; ++j) z += w[j] * (x[j] - mu[j]) / sd[j];
    return z;
  };
  constexpr int kIterations = 300;
  constexpr double kStep = 0.5, kL2 = 1e-4;
  for (int it = 0; it < kIterations; ++it) {
    std::vector<double> grad(dim + 1, 0.0);
    for (const auto& r : train) {
      const double p = 1.0 / (1.0 + std::exp(-logit(*r.x)));
      const double e = p - r.y;
      for (std::size_t j = 0; j < dim; ++j) grad[j] += e * ((*r.x)[j] - mu[j]) / sd[j];
      grad[dim] += e;
    }
    for (std::size_t j = 0; j <= dim; ++j) {
      w[j] -= kStep * (grad[j] / double(train.size()) + (j < dim ? kL2 * w[j] : 0.0));
    }
  }
  std::size_t correct = 0;
  for (const auto& r : test) correct += (logit(*r.x) > 0.0) == (r.y == 1);
  return double(correct) / double(test.size());
}

namespace {

Tensor gather(const Tensor& inputs, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  std::vector<int> shape = inputs.shape;
  shape[0] = static_cast<int>(end - begin);
  const std::size_t stride = inputs.size() / static_cast<std::size_t>(inputs.dim(0));
  Tensor out(shape);
  for (std::size_t i = begin; i < end; ++i) {
    std::copy_n(inputs.values.begin() + static_cast<std::ptrdiff_t>(idx[i] * stride), stride,
                out.values.begin() + static_cast<std::ptrdiff_t>((i - begin) * stride));
  }
  return out;
}

std::vector<std::vector<double>> rows(const Tensor& t) {
  const std::size_t c = static_cast<std::size_t>(t.dim(-1));
  std::vector<std::vector<double>> out(t.size() / c);
  for (std::size_t r = 0; r < out.size(); ++r) out[r].assign(t.values.begin() + r * c, t.values.begin() + (r + 1) * c);
  return out;
}

double task_accuracy(ToyModel& m, const DomainData& d) {
  Graph g;
  const auto fa = m.anchor_extractor(g, g.avg_pool2x2(m.sample_extractor(g, g.constant(d.inputs))));
  const Tensor& z = g.value(m.task_head(g, g.location_mean(fa)));
  const std::size_t K = static_cast<std::size_t>(z.dim(1));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    const auto* row = &z.values[i * K];
    correct += static_cast<int>(std::max_element(row, row + K) - row) == d.labels[i];
  }
  return double(correct) / double(d.labels.size());
}

void evaluate(ToyModel& m, const ToyDataset& ds, ToyReport& report) {
  report.source_task_accuracy = task_accuracy(m, ds.source_eval);
  report.target_task_accuracy = task_accuracy(m, ds.target_eval);
  Graph g;
  const auto fs_s = m.sample_extractor(g, g.constant(ds.source_eval.inputs));
  const auto fs_t = m.sample_extractor(g, g.constant(ds.target_eval.inputs));
  const auto fa_s = m.anchor_extractor(g, g.avg_pool2x2(fs_s));
  const auto fa_t = m.anchor_extractor(g, g.avg_pool2x2(fs_t));
  report.domain_accuracy = domain_probe_accuracy(rows(g.value(fs_s)), rows(g.value(fs_t)));
  report.anchor_domain_accuracy = domain_probe_accuracy(rows(g.value(fa_s)), rows(g.value(fa_t)));
}

}  // namespace

ToyReport toy_adversarial_train(const ToyTrainConfig& config) {
  config.grl.validate();
  if (!(config.lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
  if (config.epochs < 0 || config.batch < 1) throw InvalidArgument("epochs must be >= 0 and batch >= 1");
  if (config.batch > config.data.train_per_domain) throw InvalidArgument("batch larger than the training split");

  const ToyDataset ds = make_toy_dataset(config.data, config.seed);
  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
  ToyModel model = ToyModel::make(config, rng);
  Adam adam(config.learning_rate);
  Adam adam_cls(config.classifier_learning_rate);
  const auto params = model.parameters();
  auto base = model.extractor_parameters();
  base.push_back(&model.task_head.weight);
  base.push_back(&model.task_head.bias);
  const auto classifiers = model.classifier_parameters();

  ToyReport report;
  report.config = config;
  const std::size_t n = static_cast<std::size_t>(config.data.train_per_domain);
  const std::size_t b = static_cast<std::size_t>(config.batch);
  std::vector<std::size_t> src(n), tgt(n);
  std::iota(src.begin(), src.end(), 0);
  std::iota(tgt.begin(), tgt.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(src.begin(), src.end(), rng);
    std::shuffle(tgt.begin(), tgt.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss.lambda = config.lambda;
    std::size_t batches = 0;
    for (std::size_t at = 0; at + b <= n; at += b, ++batches) {
      std::vector<int> labels;
      for (std::size_t i = at; i < at + b; ++i) labels.push_back(ds.source_train.labels[src[i]]);
      for (auto* p : params) p->zero_grad();
      Graph g;
      ToyLossVars loss;
      try {
        loss = build_toy_loss(g, model, gather(ds.source_train.inputs, src, at, at + b), labels,
                              gather(ds.target_train.inputs, tgt, at, at + b), config.lambda, config.grl,
                              config.reduce);
      } catch (const NonFiniteLoss& e) {
        report.diverged = true;
        throw DivergedTraining(std::string("epoch ") + std::to_string(epoch) + ": " + e.what(), report);
      }
      if (!std::isfinite(loss.values.total)) {
        report.diverged = true;
        throw DivergedTraining("epoch " + std::to_string(epoch) + ": loss is not finite", report);
      }
      g.backward(loss.total);
      adam.step(base);
      adam_cls.step(classifiers);
      rec.loss.detection += loss.values.detection;
      rec.loss.sample += loss.values.sample;
      rec.loss.anchor += loss.values.anchor;
      rec.loss.consistency += loss.values.consistency;
      rec.loss.total += loss.values.total;
    }
    for (double* v : {&rec.loss.detection, &rec.loss.sample, &rec.loss.anchor, &rec.loss.consistency,
                      &rec.loss.total}) {
      *v /= double(batches);
    }
    report.epochs.push_back(rec);
  }
  evaluate(model, ds, report);
  return report;
}

std::string report_to_json(const ToyReport& r) {
  using nlohmann::json;
  const auto& c = r.config;
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"detection", e.loss.detection},
                      {"sample", e.loss.sample},
                      {"anchor", e.loss.anchor},
                      {"consistency", e.loss.consistency},
                      {"total", e.loss.total}});
  }
  json j = {
      {"schema_version", ToyReport::kSchemaVersion},
      {"config",
       {{"seed", c.seed},
        {"epochs", c.epochs},
        {"batch", c.batch},
        {"learning_rate", c.learning_rate},
        {"classifier_learning_rate", c.classifier_learning_rate},
        {"lambda", c.lambda},
        {"grl_r", c.grl.r},
        {"location_reduce", c.reduce == LocationReduce::Mean ? "mean" : "sum"},
        {"sample_widths", c.sample_widths},
        {"anchor_widths", c.anchor_widths},
        {"data",
         {{"grid", c.data.grid},
          {"input_dim", c.data.input_dim},
          {"task_dims", c.data.task_dims},
          {"class_offset", c.data.class_offset},
          {"noise", c.data.noise},
          {"domain_shift", c.data.domain_shift},
          {"train_per_domain", c.data.train_per_domain},
          {"eval_per_domain", c.data.eval_per_domain}}}}},
      {"epochs", epochs},
      {"final",
       {{"source_task_accuracy", r.source_task_accuracy},
        {"target_task_accuracy", r.target_task_accuracy},
        {"domain_accuracy", r.domain_accuracy},
        {"anchor_domain_accuracy", r.anchor_domain_accuracy}}},
      {"diverged", r.diverged}};
  return j.dump(2) + "\n";
}

}  // namespace lgsim
