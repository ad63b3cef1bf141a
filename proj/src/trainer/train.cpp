#include "naslab/trainer/train.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "naslab/attacks/evasion.hpp"
#include "naslab/core/hash.hpp"

namespace naslab {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
  if (initial_lr < 0.0 || momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0)
    throw ConfigError("learning rate, momentum or weight decay out of range");
  if (crop_pad < 0) throw ConfigError("crop_pad must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"optimizer", "sgd_momentum"},
       {"initial_lr", c.initial_lr},
       {"lr_schedule", "cosine"},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"grad_clip", c.grad_clip},
       {"seed", c.seed},
       {"random_flip", c.random_flip},
       {"random_crop", c.random_crop},
       {"crop_pad", c.crop_pad}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.random_flip = j.value("random_flip", c.random_flip);
  c.random_crop = j.value("random_crop", c.random_crop);
  c.crop_pad = j.value("crop_pad", c.crop_pad);
}

double cosine_lr(double initial_lr, int step, int total_steps) {
  if (total_steps <= 1) return initial_lr;
  return 0.5 * initial_lr * (1.0 + std::cos(std::numbers::pi * step / (total_steps - 1)));
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.values()) v *= f;
  }
  return norm;
}

void Sgd::step(ParamStore& store, const std::vector<Tensor>& grads, double lr) {
  auto& params = store.params();
  if (grads.size() != params.size()) throw InputError("gradient count does not match parameter count");
  if (velocity_.empty())
    for (const Param& p : params) velocity_.emplace_back(p.value.shape());
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* theta = params[k].value.data();
    double* v = velocity_[k].data();
    const double* g = grads[k].data();
    const std::size_t n = params[k].value.size();
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = momentum_ * v[i] + g[i] + weight_decay_ * theta[i];
      theta[i] -= lr * v[i];
    }
  }
}

namespace {

void augment(Tensor& x, const TrainConfig& config, Rng& rng) {
  if (!config.random_flip && !config.random_crop) return;
  const int n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> plane(static_cast<std::size_t>(h * w));
  for (int i = 0; i < n; ++i) {
    const bool flip = config.random_flip && rng.uniform() < 0.5;
    int dy = 0, dx = 0;
    if (config.random_crop) {
      dy = rng.index(2 * config.crop_pad + 1) - config.crop_pad;
      dx = rng.index(2 * config.crop_pad + 1) - config.crop_pad;
    }
    for (int c = 0; c < ch; ++c) {
      double* img = x.data() + (static_cast<std::size_t>(i) * ch + c) * h * w;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const int sy = y + dy, sx0 = xx + dx;
          const int sx = flip ? w - 1 - sx0 : sx0;
          plane[static_cast<std::size_t>(y * w + xx)] =
              (sy < 0 || sy >= h || sx0 < 0 || sx0 >= w) ? 0.0 : img[sy * w + sx];
        }
      std::copy(plane.begin(), plane.end(), img);
    }
  }
}

}  // namespace

namespace {

using BatchLoss = std::function<LossGrad(std::span<const int> rows, Rng& rng, int step)>;

std::vector<EpochStats> run_fit(Model& model, int n, const TrainConfig& config, const BatchLoss& batch_loss) {
  config.validate();
  if (n == 0) throw InputError("cannot train on an empty dataset");
  Rng rng(config.seed);
  Sgd opt(config.momentum, config.weight_decay);
  const int bs = std::min(config.batch_size, n);
  // A trailing batch of one sample would give degenerate batch statistics.
  const int full = n / bs, rest = n % bs;
  const int per_epoch = full + (rest >= 2 ? 1 : 0);
  const int total = per_epoch * config.epochs;
  std::vector<EpochStats> history;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<double> last_good = model.store().flat();
    std::vector<int> order = rng.permutation(n);
    EpochStats stats;
    stats.epoch = epoch;
    for (int b = 0; b < per_epoch; ++b) {
      const int first = b * bs, count = std::min(bs, n - first);
      LossGrad lg = batch_loss(std::span<const int>(order.data() + first, static_cast<std::size_t>(count)), rng, step);
      if (!std::isfinite(lg.loss))
        throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step),
                               epoch, std::move(last_good));
      clip_grad_norm(lg.grads, config.grad_clip);
      stats.lr = cosine_lr(config.initial_lr, step, total);
      opt.step(model.store(), lg.grads, stats.lr);
      stats.mean_loss += lg.loss / per_epoch;
      ++step;
    }
    history.push_back(stats);
  }
  return history;
}

}  // namespace

std::vector<EpochStats> fit(Model& model, const Dataset& train, const TrainConfig& config, const TrainHooks& hooks) {
  train.validate();
  return run_fit(model, train.size(), config, [&](std::span<const int> rows, Rng& rng, int step) {
    Dataset batch = train.subset(rows);
    augment(batch.images, config, rng);
    if (hooks.transform) batch.images = hooks.transform(model, batch.images, batch.labels, step);
    if (!hooks.extra_batch) return loss_and_grads(model, batch.images, batch.labels, Mode::train, true);
    // One forward pass over both batches so batch norm sees the mixture. Scaled one-hot targets make the
    // loss mean_clean + extra_weight * mean_extra.
    const Dataset extra = hooks.extra_batch(step);
    const int b1 = batch.size(), b2 = extra.size(), total = b1 + b2, k = model.num_classes();
    Shape shape = batch.images.shape();
    shape[0] = total;
    Tensor x(shape);
    std::copy(batch.images.values().begin(), batch.images.values().end(), x.data());
    std::copy(extra.images.values().begin(), extra.images.values().end(), x.data() + batch.images.size());
    Tensor t({total, k});
    for (int i = 0; i < b1; ++i) t[static_cast<std::size_t>(i) * k + batch.labels[i]] = double(total) / b1;
    for (int i = 0; i < b2; ++i)
      t[static_cast<std::size_t>(b1 + i) * k + extra.labels[i]] = hooks.extra_weight * total / b2;
    Tape tape;
    ForwardContext ctx = bind(tape, model, Mode::train, true, true);
    Var loss = soft_cross_entropy(model.forward(ctx, tape.constant(x)).logits, t);
    tape.backward(loss);
    LossGrad lg;
    lg.loss = loss.value()[0];
    for (const Var& p : ctx.params) lg.grads.push_back(tape.grad(p));
    return lg;
  });
}

std::vector<EpochStats> fit_soft(Model& model, const Tensor& images, const Tensor& targets, const TrainConfig& config) {
  if (images.rank() != 4 || targets.rank() != 2 || images.dim(0) != targets.dim(0) ||
      targets.dim(1) != model.num_classes())
    throw InputError("fit_soft expects images [N, C, H, W] and targets [N, classes]");
  return run_fit(model, images.dim(0), config, [&](std::span<const int> rows, Rng& rng, int) {
    Tensor x = gather_rows(images, rows);
    augment(x, config, rng);
    Tensor t = gather_rows(targets, rows);
    Tape tape;
    ForwardContext ctx = bind(tape, model, Mode::train, true, true);
    Var loss = soft_cross_entropy(model.forward(ctx, tape.constant(x)).logits, t);
    tape.backward(loss);
    LossGrad lg;
    lg.loss = loss.value()[0];
    for (const Var& p : ctx.params) lg.grads.push_back(tape.grad(p));
    return lg;
  });
}

TrainedModel::TrainedModel(const TrainedModel& other)
    : model(other.model ? other.model->clone() : nullptr),
      arch(other.arch),
      config(other.config),
      fingerprint(other.fingerprint),
      train_accuracy(other.train_accuracy),
      test_accuracy(other.test_accuracy),
      history(other.history),
      notes(other.notes) {}

TrainedModel& TrainedModel::operator=(const TrainedModel& other) {
  if (this != &other) *this = TrainedModel(other);
  return *this;
}

namespace {

TrainedModel run_training(const ArchSpec& arch, const DataSplit& data, const TrainConfig& config,
                          const TrainHooks& hooks) {
  TrainedModel tm;
  tm.arch = arch;
  tm.config = config;
  tm.model = build_model(arch);
  tm.fingerprint = fingerprint(data);
  tm.history = fit(*tm.model, data.train, config, hooks);
  if (!tm.model->store().all_finite()) throw DivergenceError("trained parameters are not finite");
  tm.train_accuracy = evaluate_accuracy(*tm.model, data.train);
  tm.test_accuracy = data.test.size() > 0 ? evaluate_accuracy(*tm.model, data.test) : 0.0;
  return tm;
}

}  // namespace

TrainedModel train_model(const ArchSpec& arch, const DataSplit& data, const TrainConfig& config) {
  return run_training(arch, data, config, {});
}

TrainedModel adversarial_train(const ArchSpec& arch, const DataSplit& data, const TrainConfig& config,
                               const EvasionConfig& evasion) {
  evasion.validate();
  EvasionConfig ev = evasion;
  ev.target_mode = TargetMode::untargeted;
  TrainHooks hooks;
  hooks.transform = [ev](const Model& model, const Tensor& x, std::span<const int> labels, int step) {
    EvasionConfig local = ev;
    local.seed = ev.seed + 0x9e37ULL * static_cast<std::uint64_t>(step + 1);
    return pgd_attack(model, x, labels, local).adversarial;
  };
  TrainedModel tm = run_training(arch, data, config, hooks);
  tm.notes["adversarial_training"] = evasion;
  return tm;
}

DataSplit poison_labels(const DataSplit& data, double p_pos, std::uint64_t seed) {
  if (!(p_pos >= 0.0 && p_pos <= 1.0)) throw ConfigError("p_pos must lie in [0, 1]");
  const int m = data.train.num_classes;
  if (m < 2) throw InputError("poisoning needs at least two classes");
  DataSplit out = data;
  const int n = data.train.size();
  const int k = static_cast<int>(std::floor(p_pos * n + 1e-9));
  Rng rng(seed);
  for (int row : rng.sample_without_replacement(n, k)) {
    int& y = out.train.labels[static_cast<std::size_t>(row)];
    y = (y + 1 + rng.index(m - 1)) % m;
  }
  return out;
}

double evaluate_accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw InputError("accuracy of an empty split");
  std::vector<int> pred = predict_labels(model, data.images);
  int hit = 0;
  for (int i = 0; i < data.size(); ++i) hit += pred[static_cast<std::size_t>(i)] == data.labels[static_cast<std::size_t>(i)];
  return static_cast<double>(hit) / data.size();
}

namespace {

std::vector<double> blob_values(const Model& model) {
  std::vector<double> values = model.store().flat();
  for (const Tensor& b : model.store().buffers()) values.insert(values.end(), b.values().begin(), b.values().end());
  return values;
}

}  // namespace

void save_checkpoint(const TrainedModel& tm, const std::string& prefix) {
  if (!tm.model) throw InputError("checkpoint of an empty TrainedModel");
  const std::vector<double> values = blob_values(*tm.model);
  std::span<const unsigned char> bytes(reinterpret_cast<const unsigned char*>(values.data()),
                                       values.size() * sizeof(double));
  std::filesystem::path p(prefix + ".bin");
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  {
    std::ofstream out(prefix + ".bin", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed to write " + prefix + ".bin");
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const EpochStats& e : tm.history) hist.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"lr", e.lr}});
  nlohmann::json side = {{"schema", "naslab.checkpoint/1"},
                         {"arch", tm.arch},
                         {"source", tm.model->describe()},
                         {"train_config", tm.config},
                         {"dataset_fingerprint", tm.fingerprint},
                         {"metrics", {{"train_accuracy", tm.train_accuracy}, {"test_accuracy", tm.test_accuracy}}},
                         {"history", hist},
                         {"notes", tm.notes},
                         {"num_params", tm.model->store().num_scalars()},
                         {"num_values", values.size()},
                         {"blob_sha256", sha256_hex(bytes)}};
  std::ofstream out(prefix + ".json", std::ios::trunc);
  out << side.dump(2) << "\n";
  if (!out) throw Error("failed to write " + prefix + ".json");
}

TrainedModel load_checkpoint(const std::string& prefix) {
  std::ifstream side_in(prefix + ".json");
  if (!side_in) throw InputError("missing checkpoint sidecar " + prefix + ".json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(side_in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint sidecar: ") + e.what(), e.byte);
  }
  std::ifstream blob_in(prefix + ".bin", std::ios::binary);
  if (!blob_in) throw InputError("missing checkpoint blob " + prefix + ".bin");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob_in)), std::istreambuf_iterator<char>());
  const std::string digest = sha256_hex(bytes);
  if (digest != side.at("blob_sha256").get<std::string>())
    throw IntegrityError("checkpoint " + prefix + ".bin hash " + digest + " does not match recorded " +
                         side.at("blob_sha256").get<std::string>());
  TrainedModel tm;
  tm.arch = side.at("arch").get<ArchSpec>();
  tm.config = side.at("train_config").get<TrainConfig>();
  tm.fingerprint = side.at("dataset_fingerprint").get<std::string>();
  tm.train_accuracy = side.at("metrics").at("train_accuracy").get<double>();
  tm.test_accuracy = side.at("metrics").at("test_accuracy").get<double>();
  tm.notes = side.value("notes", nlohmann::json::object());
  for (const auto& e : side.value("history", nlohmann::json::array()))
    tm.history.push_back({e.at("epoch").get<int>(), e.at("mean_loss").get<double>(), e.at("lr").get<double>()});
  tm.model = build_model(tm.arch);
  const std::size_t np = tm.model->store().num_scalars();
  std::size_t nb = 0;
  for (const Tensor& b : tm.model->store().buffers()) nb += b.size();
  if (bytes.size() != (np + nb) * sizeof(double))
    throw IntegrityError("checkpoint blob size does not match the architecture in " + prefix + ".json");
  std::vector<double> values((np + nb));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  tm.model->store().set_flat(std::span<const double>(values.data(), np));
  std::size_t at = np;
  for (Tensor& b : tm.model->store().buffers()) {
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(at), values.begin() + static_cast<std::ptrdiff_t>(at + b.size()),
              b.data());
    at += b.size();
  }
  return tm;
}

}  // namespace naslab
