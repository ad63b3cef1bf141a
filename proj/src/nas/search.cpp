#include "naslab/nas/search.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace naslab {

void SearchConfig::validate() const {
  if (epochs < 0) throw ConfigError("search epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("search batch_size must be >= 1");
  if (n_step < 1) throw ConfigError("n_step must be >= 1");
  if (!(skip_gamma > 0.0 && skip_gamma <= 1.0)) throw ConfigError("skip_gamma must lie in (0, 1]");
  if (!(val_split > 0.0 && val_split < 1.0)) throw ConfigError("val_split must lie in (0, 1)");
  if (w_lr < 0.0 || arch_lr < 0.0) throw ConfigError("learning rates must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
}

void to_json(nlohmann::json& j, const SearchConfig& c) {
  j = {{"epochs", c.epochs},     {"batch_size", c.batch_size}, {"w_lr", c.w_lr},
       {"arch_lr", c.arch_lr},   {"n_step", c.n_step},         {"skip_gamma", c.skip_gamma},
       {"seed", c.seed},         {"val_split", c.val_split},   {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, SearchConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.w_lr = j.value("w_lr", c.w_lr);
  c.arch_lr = j.value("arch_lr", c.arch_lr);
  c.n_step = j.value("n_step", c.n_step);
  c.skip_gamma = j.value("skip_gamma", c.skip_gamma);
  c.seed = j.value("seed", c.seed);
  c.val_split = j.value("val_split", c.val_split);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
}

namespace {

std::vector<Var> leaves(Tape& tape, const std::vector<Tensor>& values, bool track) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (const Tensor& t : values) out.push_back(track ? tape.variable(t) : tape.constant(t));
  return out;
}

double max_abs(const std::vector<Tensor>& ts) {
  double m = 0.0;
  for (const Tensor& t : ts) m = std::max(m, linf_norm(t.values()));
  return m;
}

[[noreturn]] void diverged(const char* where, double loss, const std::vector<Tensor>& theta,
                           const std::vector<Tensor>& alpha) {
  std::ostringstream msg;
  msg << "non-finite loss " << loss << " in " << where << "; max|theta| = " << max_abs(theta)
      << ", max|alpha| = " << max_abs(alpha);
  throw DivergenceError(msg.str());
}

}  // namespace

std::vector<Tensor> inner_unroll(const BilevelLoss& loss, std::vector<Tensor> theta, const std::vector<Tensor>& alpha,
                                 const Batch& trn, int steps, double lr) {
  for (int s = 0; s < steps; ++s) {
    Tape tape;
    std::vector<Var> th = leaves(tape, theta, true), al = leaves(tape, alpha, false);
    Var l = loss(tape, th, al, trn);
    if (!std::isfinite(l.value()[0])) diverged("inner unroll", l.value()[0], theta, alpha);
    tape.backward(l);
    for (std::size_t k = 0; k < theta.size(); ++k) axpy(-lr, tape.grad(th[k]).values(), theta[k].values());
  }
  return theta;
}

ArchGradient first_order_arch_gradient(const BilevelLoss& loss, const std::vector<Tensor>& theta,
                                       const std::vector<Tensor>& alpha, const Batch& trn, const Batch& val,
                                       int n_step, double inner_lr) {
  std::vector<Tensor> unrolled = inner_unroll(loss, theta, alpha, trn, n_step, inner_lr);
  Tape tape;
  std::vector<Var> th = leaves(tape, unrolled, false), al = leaves(tape, alpha, true);
  Var l = loss(tape, th, al, val);
  ArchGradient out;
  out.val_loss = l.value()[0];
  if (!std::isfinite(out.val_loss)) diverged("validation loss", out.val_loss, unrolled, alpha);
  tape.backward(l);
  for (const Var& a : al) out.grad.push_back(tape.grad(a));
  return out;
}

BilevelLoss supernet_loss(const SuperNetwork& net) {
  const SuperNetwork* p = &net;
  return [p](Tape& tape, std::span<const Var> theta, std::span<const Var> alpha, const Batch& b) {
    ForwardContext ctx;
    ctx.tape = &tape;
    ctx.params.assign(theta.begin(), theta.end());
    // Train-mode batch norm with update_buffers off only reads the buffer shapes.
    ctx.buffers = const_cast<std::vector<Tensor>*>(&p->store().buffers());
    ctx.update_buffers = false;
    ctx.mode = Mode::train;
    ctx.arch_normal = alpha[0];
    ctx.arch_reduce = alpha[1];
    return cross_entropy(p->forward(ctx, tape.constant(b.x)).logits, b.y);
  };
}

ArchParams arch_gradient_step(const SuperNetwork& net, const Batch& trn, const Batch& val, const SearchConfig& config,
                              double* val_loss) {
  config.validate();
  std::vector<Tensor> theta;
  for (const Param& p : net.store().params()) theta.push_back(p.value);
  std::vector<Tensor> alpha{net.arch().normal, net.arch().reduce};
  ArchGradient g = first_order_arch_gradient(supernet_loss(net), theta, alpha, trn, val, config.n_step, config.w_lr);
  ArchParams next = net.arch();
  axpy(-config.arch_lr, g.grad[0].values(), next.normal.values());
  axpy(-config.arch_lr, g.grad[1].values(), next.reduce.values());
  if (val_loss) *val_loss = g.val_loss;
  return next;
}

std::string SearchTrace::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,val_loss,skip_logit_mean,genotype_string\n";
  for (const SearchEpoch& e : epochs)
    out << e.epoch << "," << e.val_loss << "," << e.skip_logit_mean << ",\"" << e.genotype << "\"\n";
  return out.str();
}

namespace {

Batch make_batch(const Dataset& d, std::span<const int> order, int first, int count) {
  Dataset part = d.subset(order.subspan(static_cast<std::size_t>(first), static_cast<std::size_t>(count)));
  return {std::move(part.images), std::move(part.labels)};
}

}  // namespace

SearchResult darts_search(const Dataset& data, const CellTemplate& cell, const NetworkTemplate& net_t,
                          const SearchConfig& config, const ArchParams* arch) {
  config.validate();
  data.validate();
  SuperNetwork net(cell, net_t, config.seed);
  if (arch) {
    if (arch->normal.shape() != net.arch().normal.shape() || arch->reduce.shape() != net.arch().reduce.shape())
      throw ConfigError("initial architecture logits do not match the cell template");
    net.arch() = *arch;
  }
  Rng rng = Rng(config.seed).fork(7);
  const int n = data.size();
  std::vector<int> perm = rng.permutation(n);
  const int n_val = static_cast<int>(std::lround(config.val_split * n));
  if (n_val < 1 || n - n_val < 1) throw ConfigError("val_split leaves an empty search split");
  Dataset val = data.subset(std::span<const int>(perm.data(), static_cast<std::size_t>(n_val)));
  Dataset trn = data.subset(std::span<const int>(perm.data() + n_val, static_cast<std::size_t>(n - n_val)));
  const int bs = std::min({config.batch_size, trn.size(), val.size()});
  const int iters = std::min(trn.size() / bs, val.size() / bs);

  SearchResult res;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> pt = rng.permutation(trn.size()), pv = rng.permutation(val.size());
    double val_sum = 0.0;
    for (int it = 0; it < iters; ++it) {
      Batch tb = make_batch(trn, pt, it * bs, bs), vb = make_batch(val, pv, it * bs, bs);
      double vl = 0.0;
      ArchParams next;
      try {
        next = arch_gradient_step(net, tb, vb, config, &vl);
      } catch (const DivergenceError& e) {
        throw SearchDiverged(std::string(e.what()) + " at epoch " + std::to_string(epoch), res.trace);
      }
      if (config.skip_gamma < 1.0) next = suppress_skip_step(next, config.skip_gamma);
      if (!next.all_finite())
        throw SearchDiverged("architecture logits became non-finite at epoch " + std::to_string(epoch), res.trace);
      net.arch() = std::move(next);
      val_sum += vl;

      LossGrad lg = loss_and_grads(net, tb.x, tb.y, Mode::train, true);
      if (!std::isfinite(lg.loss))
        throw SearchDiverged("non-finite training loss at epoch " + std::to_string(epoch), res.trace);
      clip_grad_norm(lg.grads, config.grad_clip);
      auto& params = net.store().params();
      for (std::size_t k = 0; k < params.size(); ++k) axpy(-config.w_lr, lg.grads[k].values(), params[k].value.values());
    }
    SearchEpoch rec;
    rec.epoch = epoch;
    rec.val_loss = iters > 0 ? val_sum / iters : std::numeric_limits<double>::quiet_NaN();
    const Tensor& a = net.arch().normal;
    const int edges = a.dim(0);
    for (int e = 0; e < edges; ++e) {
      const double s = a[static_cast<std::size_t>(e) * kNumOps + op_index(OpKind::skip_connect)];
      rec.skip_logit_mean += s / edges;
      rec.negative_skip_logits = rec.negative_skip_logits || s < 0.0;
    }
    rec.genotype = to_string(discretize(net.arch(), cell));
    res.trace.epochs.push_back(std::move(rec));
  }
  res.arch = net.arch();
  res.genotype = discretize(res.arch, cell);
  return res;
}

RandomSearchResult random_search(const CellTemplate& cell, const NetworkTemplate& net, int budget, std::uint64_t seed,
                                 const DataSplit& data, const TrainConfig& brief) {
  if (budget < 1) throw ConfigError("random search budget must be >= 1");
  cell.validate();
  Rng rng(seed);
  RandomSearchResult res;
  for (int i = 0; i < budget; ++i) res.candidates.push_back({random_genotype(cell, rng), 0.0});
  if (budget == 1) {
    res.candidates[0].val_accuracy = std::numeric_limits<double>::quiet_NaN();
    res.best = res.candidates[0].genotype;
    return res;
  }
  double best = -1.0;
  for (int i = 0; i < budget; ++i) {
    ArchSpec spec;
    spec.kind = "cell";
    spec.genotype = to_string(res.candidates[static_cast<std::size_t>(i)].genotype);
    spec.cell = cell;
    spec.network = net;
    spec.init_seed = seed + static_cast<std::uint64_t>(i) + 1;
    TrainedModel tm = train_model(spec, data, brief);
    res.candidates[static_cast<std::size_t>(i)].val_accuracy = tm.test_accuracy;
    if (tm.test_accuracy > best) {
      best = tm.test_accuracy;
      res.best = res.candidates[static_cast<std::size_t>(i)].genotype;
    }
  }
  return res;
}

}  // namespace naslab
