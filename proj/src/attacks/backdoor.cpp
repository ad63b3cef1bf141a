#include "naslab/attacks/backdoor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "naslab/core/error.hpp"

namespace naslab {

void BackdoorConfig::validate() const {
  if (trigger_size < 1) throw ConfigError("trigger_size must be >= 1");
  if (!(transparency >= 0.0 && transparency <= 1.0)) throw ConfigError("transparency must lie in [0, 1]");
  if (n_neuron < 1) throw ConfigError("n_neuron must be >= 1");
  if (!(preprocess_lr >= 0.0)) throw ConfigError("preprocess_lr must be >= 0");
  if (preprocess_iters < 0) throw ConfigError("preprocess_iters must be >= 0");
  if (preprocess_batch < 1) throw ConfigError("preprocess_batch must be >= 1");
  if (target_class < 0) throw ConfigError("target_class must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  finetune.validate();
}

void to_json(nlohmann::json& j, const BackdoorConfig& c) {
  j = {{"trigger_size", c.trigger_size},
       {"transparency", c.transparency},
       {"trigger_location", "bottom_right"},
       {"n_neuron", c.n_neuron},
       {"neuron_selection", "largest_abs_weight_to_target"},
       {"preprocess_lr", c.preprocess_lr},
       {"preprocess_iters", c.preprocess_iters},
       {"preprocess_batch", c.preprocess_batch},
       {"target_class", c.target_class},
       {"lambda", c.lambda},
       {"finetune", c.finetune},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, BackdoorConfig& c) {
  c.trigger_size = j.value("trigger_size", c.trigger_size);
  c.transparency = j.value("transparency", c.transparency);
  c.n_neuron = j.value("n_neuron", c.n_neuron);
  c.preprocess_lr = j.value("preprocess_lr", c.preprocess_lr);
  c.preprocess_iters = j.value("preprocess_iters", c.preprocess_iters);
  c.preprocess_batch = j.value("preprocess_batch", c.preprocess_batch);
  c.target_class = j.value("target_class", c.target_class);
  c.lambda = j.value("lambda", c.lambda);
  if (j.contains("finetune")) c.finetune = j.at("finetune").get<TrainConfig>();
  c.seed = j.value("seed", c.seed);
}

std::pair<int, int> trigger_origin(const Shape& sample_shape, int trigger_size) {
  if (sample_shape.size() != 3) throw InputError("trigger needs a [C, H, W] sample shape");
  const int h = sample_shape[1], w = sample_shape[2];
  if (trigger_size > h || trigger_size > w) throw ConfigError("trigger does not fit inside the image");
  return {h - trigger_size, w - trigger_size};
}

Tensor embed_trigger(const Tensor& x, const Tensor& trigger, const BackdoorConfig& config) {
  if (x.rank() != 4) throw InputError("embed_trigger expects an NCHW batch");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), s = config.trigger_size;
  if (trigger.shape() != Shape{c, s, s}) throw InputError("trigger shape does not match the images");
  auto [row0, col0] = trigger_origin({c, h, w}, s);
  const double keep = config.transparency;
  Tensor out = x;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < s; ++r)
        for (int q = 0; q < s; ++q) {
          const std::size_t e = ((static_cast<std::size_t>(i) * c + ch) * h + row0 + r) * w + col0 + q;
          out[e] = keep * x[e] + (1.0 - keep) * trigger[(static_cast<std::size_t>(ch) * s + r) * s + q];
        }
  return out;
}

std::vector<int> select_target_neurons(const Model& model, int target_class, int n_neuron) {
  if (target_class < 0 || target_class >= model.num_classes()) throw ConfigError("target class out of range");
  const Tensor& w = model.store().params()[static_cast<std::size_t>(model.classifier().weight)].value;
  if (w.rank() != 2) throw ConfigError("model has no penultimate layer feeding a dense classifier");
  const int f = w.dim(1);
  if (n_neuron > f) throw ConfigError("n_neuron exceeds the penultimate width");
  std::vector<int> idx(static_cast<std::size_t>(f));
  std::iota(idx.begin(), idx.end(), 0);
  const double* row = w.data() + static_cast<std::size_t>(target_class) * f;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(row[a]) > std::abs(row[b]); });
  idx.resize(static_cast<std::size_t>(n_neuron));
  return idx;
}

Tensor optimize_trigger(const Model& model, const Tensor& x, std::span<const int> neurons,
                        const BackdoorConfig& config) {
  const int c = x.dim(1), s = config.trigger_size;
  auto [row0, col0] = trigger_origin({c, x.dim(2), x.dim(3)}, s);
  Rng rng = Rng(config.seed).fork(11);
  Tensor r({c, s, s});
  for (double& v : r.values()) v = rng.uniform();
  for (int it = 0; it < config.preprocess_iters; ++it) {
    Tape tape;
    ForwardContext ctx = bind(tape, model, Mode::eval);
    Var patch = tape.variable(r);
    Var xin = blend_patch(tape.constant(x), patch, row0, col0, config.transparency);
    tape.backward(mean_of_columns(model.forward(ctx, xin).features, neurons));
    Tensor g = tape.grad(patch);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double sg = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      r[i] = std::clamp(r[i] + config.preprocess_lr * sg, 0.0, 1.0);
    }
  }
  return r;
}

AttackReport backdoor_report(const Model& clean, const Model& trojan, const Dataset& test, const Tensor& trigger,
                             const BackdoorConfig& config) {
  AttackReport rep;
  rep.attack = "backdoor";
  rep.model_id = trojan.describe();
  rep.config = config;
  const std::vector<int> trig_pred = predict_labels(trojan, embed_trigger(test.images, trigger, config));
  const std::vector<int> trojan_pred = predict_labels(trojan, test.images);
  const std::vector<int> clean_pred = predict_labels(clean, test.images);
  for (int i = 0; i < test.size(); ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    rep.records.push_back({i, trig_pred[k] == config.target_class, 0.0, "trigger"});
  }
  for (int i = 0; i < test.size(); ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    rep.records.push_back(
        {i, trojan_pred[k] == test.labels[k], clean_pred[k] == test.labels[k] ? 1.0 : 0.0, "clean"});
  }
  rep.aggregates = compute_aggregates(rep.attack, rep.records);
  return rep;
}

BackdoorResult trojannn_inject(const Model& clean, const DataSplit& data, const BackdoorConfig& config) {
  config.validate();
  data.train.validate();
  if (config.target_class >= clean.num_classes()) throw ConfigError("target class out of range");
  trigger_origin(data.train.sample_shape(), config.trigger_size);

  BackdoorResult res;
  res.neurons = select_target_neurons(clean, config.target_class, config.n_neuron);
  Rng rng = Rng(config.seed).fork(12);
  const int nb = std::min(config.preprocess_batch, data.train.size());
  std::vector<int> rows = rng.sample_without_replacement(data.train.size(), nb);
  res.trigger = optimize_trigger(clean, gather_rows(data.train.images, rows), res.neurons, config);

  res.model = clean.clone();
  TrainHooks hooks;
  if (config.lambda > 0.0) {
    hooks.extra_weight = config.lambda;
    const int bs = std::min(config.finetune.batch_size, data.train.size());
    hooks.extra_batch = [&, bs](int step) {
      Rng pick = Rng(config.seed).fork(1000 + static_cast<std::uint64_t>(step));
      std::vector<int> r = pick.sample_without_replacement(data.train.size(), bs);
      Dataset b = data.train.subset(r);
      b.images = embed_trigger(b.images, res.trigger, config);
      std::fill(b.labels.begin(), b.labels.end(), config.target_class);
      return b;
    };
  }
  res.history = fit(*res.model, data.train, config.finetune, hooks);
  res.report = backdoor_report(clean, *res.model, data.test, res.trigger, config);
  return res;
}

}  // namespace naslab
