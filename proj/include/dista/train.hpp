#pragma once

// BPTT training loop, evaluation, and the smooth-mode gradient check.

#include <chrono>
#include <limits>

#include "dista/data.hpp"
#include "dista/gradcheck.hpp"
#include "dista/optim.hpp"

namespace dista {

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_loss = 0;
  double test_acc = 0;
  double lr = 0;
  double tau_mean = 0;
  double tau_min = 0;
  double tau_max = 0;
  double wall_seconds = 0;
};

struct EvalResult {
  double accuracy = 0;
  double loss = 0;
};

struct TauSummary {
  double mean = 0, min = 0, max = 0;
  std::size_t count = 0;
};

template <class T>
TauSummary tau_summary(const ParamStore<T>& store) {
  TauSummary s{0, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), 0};
  for (const auto& p : store) {
    if (p.kind != ParamKind::tau) continue;
    for (T v : p.value.values()) {
      s.mean += v;
      s.min = std::min(s.min, static_cast<double>(v));
      s.max = std::max(s.max, static_cast<double>(v));
      ++s.count;
    }
  }
  if (s.count == 0) return {};
  s.mean /= static_cast<double>(s.count);
  return s;
}

/// Index of the largest logit in row r; ties go to the lowest index.
template <class T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.cols(); ++j)
    if (logits(r, j) > logits(r, best)) best = j;
  return best;
}

template <class T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<int>& labels) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < labels.size(); ++r)
    n += argmax_row(logits, r) == static_cast<std::size_t>(labels[r]);
  return n;
}

/// Accuracy and mean loss of a logit function over a sample list, in
/// fixed-size chunks and in order.
template <class T, class LogitFn>
EvalResult evaluate_with(LogitFn&& logits_of, const Dataset& ds, const std::vector<Sample>& samples,
                         const ModelConfig& cfg, std::size_t batch_size) {
  if (samples.empty()) throw DataError("evaluate: empty dataset");
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
  double loss = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch<T> batch = make_batch<T>(ds, samples, idx, cfg);
    Tape<T> tape(false);
    const Tensor<T> z = logits_of(tape, batch);
    const Var<T> zv = tape.constant(z);
    loss += static_cast<double>(cross_entropy(zv, batch.labels).value()[0]) * static_cast<double>(idx.size());
    correct += count_correct(z, batch.labels);
  }
  const double n = static_cast<double>(samples.size());
  return {static_cast<double>(correct) / n, loss / n};
}

/// Inference-mode evaluation. Batch-norm running statistics are read, not
/// updated, so repeated calls agree exactly.
template <class T>
EvalResult evaluate(Model<T>& model, const Dataset& ds, const std::vector<Sample>& samples,
                    std::size_t batch_size = 100) {
  return evaluate_with<T>(
      [&](Tape<T>& tape, const Batch<T>& b) {
        ForwardContext<T> ctx{&tape, BnMode::infer};
        return model_forward(ctx, model, b.steps, b.size()).value();
      },
      ds, samples, model.config(), batch_size);
}

/// One pass over the training split: forward, BPTT, AdamW per batch, at
/// the learning rate the cosine schedule gives for this epoch.
template <class T>
MetricsRow train_epoch(Model<T>& model, const Dataset& ds, const TrainHyper& hyper, OptimState<T>& state,
                       std::size_t epoch) {
  hyper.validate();
  if (ds.train.empty()) throw DataError("train_epoch: empty training split");
  const auto started = std::chrono::steady_clock::now();
  MetricsRow row;
  row.epoch = epoch;
  row.lr = cosine_lr(std::min(epoch, hyper.epochs), hyper.epochs, hyper);
  const auto batches = batch_iter(ds.train.size(), hyper.batch_size, hyper.seed, epoch);
  if (batches.empty()) throw DataError("train_epoch: training split smaller than one batch");
  double loss_sum = 0;
  std::size_t seen = 0, correct = 0;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const Batch<T> batch = make_batch<T>(ds, ds.train, batches[bi], model.config());
    Tape<T> tape;
    ForwardContext<T> ctx{&tape, BnMode::train};
    const Var<T> logits = model_forward(ctx, model, batch.steps, batch.size());
    const Var<T> loss = cross_entropy(logits, batch.labels);
    const double lv = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(lv))
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
    model.params().zero_grad();
    reverse_accumulate(tape, loss);
    adamw_step(model.params(), state, hyper, row.lr);
    loss_sum += lv * static_cast<double>(batch.size());
    correct += count_correct(logits.value(), batch.labels);
    seen += batch.size();
  }
  row.train_loss = loss_sum / static_cast<double>(seen);
  row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
  const TauSummary tau = tau_summary(model.params());
  row.tau_mean = tau.mean;
  row.tau_min = tau.min;
  row.tau_max = tau.max;
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return row;
}

// ------------------------------------------------------------- gradcheck

/// L=2, D=16, N=8, T=4, H=2, window 4, denoising off.
inline ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.blocks = 2;
  c.dim = 16;
  c.tokens = 8;
  c.in_features = 8;
  c.timesteps = 4;
  c.num_classes = 4;
  c.attention.heads = 2;
  c.attention.taw_size = 4;
  c.attention.adn_enabled = false;
  c.adn_blocks = 0;
  return c;
}

struct GradcheckOptions {
  ModelConfig model = tiny_gradcheck_config();
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-6;
  bool corrupt_tau_grad = false;
};

struct GroupError {
  std::string group;
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // parameter[index] with the largest error
};

struct GradcheckReport {
  std::vector<GroupError> groups;
  std::vector<std::string> offenders;  // parameter names above tolerance
  double tolerance = 0;

  bool passed() const {
    return std::all_of(groups.begin(), groups.end(), [&](const auto& g) { return g.max_rel_error < tolerance; });
  }
};

/// Group a parameter is reported under.
inline std::string gradcheck_group(const std::string& name, ParamKind kind) {
  switch (kind) {
    case ParamKind::tau: return "tau";
    case ParamKind::bn_gamma:
    case ParamKind::bn_beta: return "batchnorm";
    case ParamKind::bias: return "bias";
    case ParamKind::weight: return name.find(".taw_") != std::string::npos ? "taw_weight" : "weight";
  }
  return "other";
}

/// ∂V[2]/∂τ for a spike-free two-step neuron driven by I = (0.2, 0):
/// V[1] = 0.2, V[2] = (1 − 1/τ)·0.2, so the derivative is 0.2/τ².
inline double closed_form_tau_gradient(double tau = kTauInit) {
  Tape<double> tape;
  ForwardContext<double> ctx{&tape};
  const Var<double> t = tape.leaf(Tensor<double>::scalar(tau));
  std::vector<Var<double>> in{tape.constant(Tensor<double>({1, 1}, 0.2)), tape.constant(Tensor<double>({1, 1}, 0.0))};
  const auto trace = lif_sequence<double>(ctx, in, t, 1.0, 1.0);
  reverse_accumulate(tape, sum(trace.membrane[1]));
  return tape.grad(t)[0];
}

/// Full-model BPTT gradients in smooth mode against central finite
/// differences of the same smooth forward pass, for every parameter entry.
inline GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  Model<double> model(opt.model, opt.seed);
  const ModelConfig& cfg = model.config();
  std::mt19937_64 rng(opt.seed ^ 0xD157A);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<Tensor<double>> steps;
  for (std::size_t t = 0; t < cfg.timesteps; ++t) {
    Tensor<double> s({opt.batch * cfg.tokens, cfg.in_features});
    for (auto& v : s.values()) v = nd(rng);
    steps.push_back(std::move(s));
  }
  std::vector<int> labels(opt.batch);
  for (std::size_t i = 0; i < opt.batch; ++i) labels[i] = static_cast<int>(i % cfg.num_classes);

  auto loss_of = [&](bool with_grad, bool corrupt) {
    Tape<double> tape(with_grad);
    ForwardContext<double> ctx{&tape, BnMode::train, SpikeMode::smooth, nullptr, corrupt};
    const Var<double> loss = cross_entropy(model_forward(ctx, model, steps, opt.batch), labels);
    if (with_grad) {
      model.params().zero_grad();
      reverse_accumulate(tape, loss);
    }
    return loss.value()[0];
  };
  loss_of(true, opt.corrupt_tau_grad);
  std::vector<Tensor<double>> analytic;
  for (const auto& p : model.params()) analytic.push_back(p.grad);

  GradcheckReport report;
  report.tolerance = opt.tolerance;
  std::map<std::string, GroupError> groups;
  for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
    auto& p = model.params()[pi];
    const Tensor<double> numeric = finite_diff_grad(
        [&](const Tensor<double>& x) {
          const Tensor<double> saved = p.value;
          p.value = x;
          const double l = loss_of(false, false);
          p.value = saved;
          return l;
        },
        p.value, opt.step);
    const std::string gname = gradcheck_group(p.name, p.kind);
    GroupError& g = groups[gname];
    g.group = gname;
    bool offended = false;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double e = relative_error(analytic[pi][i], numeric[i], opt.floor);
      if (e >= g.max_rel_error) {
        g.max_rel_error = e;
        g.worst = p.name + "[" + std::to_string(i) + "]";
      }
      offended = offended || !(e < opt.tolerance);
      ++g.checked;
    }
    if (offended) report.offenders.push_back(p.name);
  }
  for (auto& [_, g] : groups) report.groups.push_back(g);

  GroupError closed{"tau_closed_form", 0, 1, "lif(I=0.2,0)"};
  closed.max_rel_error = relative_error(closed_form_tau_gradient(), 0.2 / (kTauInit * kTauInit), opt.floor);
  if (!(closed.max_rel_error < opt.tolerance)) report.offenders.push_back(closed.worst);
  report.groups.push_back(closed);
  return report;
}

}  // namespace dista
