#include "naslab/harness/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "naslab/attacks/backdoor.hpp"
#include "naslab/attacks/evasion.hpp"
#include "naslab/attacks/membership.hpp"
#include "naslab/attacks/steal.hpp"
#include "naslab/core/error.hpp"
#include "naslab/core/hash.hpp"
#include "naslab/diagnostics/diagnostics.hpp"
#include "naslab/nas/variants.hpp"
#include "naslab/search_space/genotype.hpp"
#include "naslab/trainer/train.hpp"

namespace naslab {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kKinds{"search", "train", "attack", "diagnose"};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
  if (!out) throw InputError("write failed for " + p.string());
}

/// Names of earlier stages a stage consumes.
std::vector<std::string> references(const nlohmann::json& cfg) {
  std::vector<std::string> out;
  for (const char* key : {"genotype_from", "model"})
    if (cfg.contains(key) && cfg.at(key).is_string()) out.push_back(cfg.at(key).get<std::string>());
  if (cfg.contains("reports"))
    for (const auto& r : cfg.at("reports")) out.push_back(r.get<std::string>());
  return out;
}

void fill_seed(nlohmann::json& block, std::uint64_t seed, const char* field = "seed") {
  if (!block.is_object()) block = nlohmann::json::object();
  if (!block.contains(field)) block[field] = seed;
}

std::vector<int> pick_rows(int total, int count, std::uint64_t seed) {
  std::vector<int> rows = Rng(seed).sample_without_replacement(total, std::min(count, total));
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

void ExperimentSpec::validate() const {
  dataset.validate();
  std::set<std::string> seen;
  std::map<std::string, std::string> kind_of;
  for (const StageSpec& s : stages) {
    if (s.name.empty()) throw ConfigError("every stage needs a name");
    if (!kKinds.count(s.kind)) throw ConfigError("stage '" + s.name + "' has unknown kind '" + s.kind + "'");
    if (!seen.insert(s.name).second) throw ConfigError("duplicate stage name '" + s.name + "'");
    for (const std::string& ref : references(s.config))
      if (!kind_of.count(ref))
        throw ConfigError("stage '" + s.name + "' refers to '" + ref + "', which is not an earlier stage");
    if (s.config.contains("genotype_from") && kind_of[s.config.at("genotype_from").get<std::string>()] != "search")
      throw ConfigError("genotype_from must name a search stage");
    if (s.config.contains("model") && s.config.at("model").is_string() &&
        kind_of[s.config.at("model").get<std::string>()] != "train")
      throw ConfigError("model must name a train stage");
    kind_of[s.name] = s.kind;
  }
}

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  nlohmann::json stages = nlohmann::json::array();
  for (const StageSpec& st : s.stages) {
    nlohmann::json c = st.config;
    c["name"] = st.name;
    c["kind"] = st.kind;
    stages.push_back(c);
  }
  j = {{"schema", kExperimentSchema}, {"name", s.name}, {"seed", s.seed},
       {"dataset", s.dataset},         {"output_dir", s.output_dir}, {"stages", stages}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  const std::string schema = j.value("schema", std::string());
  if (schema != kExperimentSchema)
    throw ConfigError("experiment schema must be '" + std::string(kExperimentSchema) + "', got '" + schema + "'");
  s.name = j.value("name", s.name);
  s.seed = j.value("seed", s.seed);
  if (j.contains("dataset")) s.dataset = j.at("dataset").get<DatasetSpec>();
  s.output_dir = j.value("output_dir", s.output_dir);
  s.stages.clear();
  for (const auto& st : j.value("stages", nlohmann::json::array())) {
    StageSpec spec;
    spec.name = st.at("name").get<std::string>();
    spec.kind = st.at("kind").get<std::string>();
    spec.config = st;
    s.stages.push_back(std::move(spec));
  }
}

ExperimentSpec load_experiment(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("invalid experiment JSON in " + path + ": " + e.what(), e.byte);
  }
  ExperimentSpec s = j.get<ExperimentSpec>();
  s.validate();
  return s;
}

std::string run_id(const ExperimentSpec& spec) {
  nlohmann::json j = spec;
  j.erase("output_dir");
  return sha256_hex(j.dump()).substr(0, 16);
}

IngestedData ingest_dataset(const DatasetSpec& spec, const std::string& data_root) {
  IngestedData d;
  d.split = load_dataset(spec, data_root);
  d.fingerprint = fingerprint(d.split);
  return d;
}

void to_json(nlohmann::json& j, const StageRecord& r) {
  j = {{"name", r.name}, {"kind", r.kind},       {"key", r.key},
       {"dir", r.dir},   {"outputs", r.outputs}, {"summary", r.summary}, {"config", r.config}};
}

void from_json(const nlohmann::json& j, StageRecord& r) {
  r.name = j.at("name").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.key = j.at("key").get<std::string>();
  r.dir = j.at("dir").get<std::string>();
  r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  r.summary = j.value("summary", nlohmann::json::object());
  r.config = j.value("config", nlohmann::json::object());
}

ResultStore ResultStore::open(const std::string& root) {
  ResultStore s;
  s.root = root;
  const fs::path manifest = fs::path(root) / "manifest.json";
  if (!fs::exists(manifest)) return s;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(manifest));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("invalid manifest " + manifest.string() + ": " + e.what(), e.byte);
  }
  if (j.value("schema", std::string()) != kStoreSchema) throw ConfigError("unexpected store schema in " + manifest.string());
  s.run_id = j.value("run_id", std::string());
  s.spec = j.value("spec", nlohmann::json::object());
  s.stages = j.value("stages", std::vector<StageRecord>{});
  s.history = j.value("history", nlohmann::json::array());
  return s;
}

void ResultStore::save() const {
  nlohmann::json j = {{"schema", kStoreSchema}, {"run_id", run_id}, {"spec", spec}, {"stages", stages}, {"history", history}};
  write_text(fs::path(root) / "manifest.json", j.dump(2) + "\n");
}

const StageRecord* ResultStore::find(const std::string& name) const {
  for (const StageRecord& r : stages)
    if (r.name == name) return &r;
  return nullptr;
}

std::string ResultStore::path(const StageRecord& r, const std::string& file) const {
  return (fs::path(root) / r.dir / file).string();
}

AttackReport ResultStore::report(const StageRecord& r) const {
  return nlohmann::json::parse(read_text(path(r, "report.json"))).get<AttackReport>();
}

nlohmann::json ResultStore::result(const StageRecord& r) const {
  return nlohmann::json::parse(read_text(path(r, "result.json")));
}

namespace {

struct Context {
  const ExperimentSpec& spec;
  ResultStore& store;
  const IngestedData& data;
  const RunOptions& options;
};

struct StageOutput {
  std::map<std::string, std::string> files;  // name -> content, written as text
  std::vector<std::string> binary;            // files written directly by the stage
  nlohmann::json summary = nlohmann::json::object();
};

void check_outputs(const ResultStore& store, const StageRecord& r) {
  for (const auto& [file, hash] : r.outputs) {
    const std::string p = store.path(r, file);
    if (!fs::exists(p)) throw IntegrityError("artifact " + p + " of stage '" + r.name + "' is missing");
    const std::string now = sha256_file(p);
    if (now != hash)
      throw IntegrityError("artifact " + p + " of stage '" + r.name + "' has sha256 " + now + ", manifest records " + hash);
  }
}

const StageRecord& upstream(const Context& ctx, const nlohmann::json& cfg, const char* field) {
  const std::string name = cfg.at(field).get<std::string>();
  const StageRecord* r = ctx.store.find(name);
  if (!r) throw ConfigError("stage '" + cfg.at("name").get<std::string>() + "' needs '" + name + "', which has not run");
  check_outputs(ctx.store, *r);
  return *r;
}

ArchSpec arch_for_data(ArchSpec a, const Dataset& data) {
  a.network.num_classes = data.num_classes;
  a.network.input = data.sample_shape();
  return a;
}

TrainedModel load_model(const Context& ctx, const nlohmann::json& cfg) {
  const StageRecord& r = upstream(ctx, cfg, "model");
  return load_checkpoint(ctx.store.path(r, "model"));
}

StageOutput run_search(const Context& ctx, const nlohmann::json& cfg) {
  StageOutput out;
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const std::string method = cfg.value("method", std::string("DARTS"));
  const CellTemplate cell = cfg.value("cell", CellTemplate{});
  NetworkTemplate net = cfg.value("network", NetworkTemplate{});
  net.num_classes = ctx.data.split.train.num_classes;
  net.input = ctx.data.split.train.sample_shape();
  const int subset = std::min(cfg.value("subset", ctx.data.split.train.size()), ctx.data.split.train.size());
  const Dataset train = ctx.data.split.train.slice(0, subset);

  Genotype g;
  nlohmann::json result = {{"method", method}};
  if (method == "random") {
    TrainConfig brief = cfg.value("random_train", TrainConfig{.epochs = 1});
    brief.seed = seed;
    RandomSearchResult r =
        random_search(cell, net, cfg.value("random_budget", 1), seed, DataSplit{train, ctx.data.split.test}, brief);
    g = r.best;
    nlohmann::json cands = nlohmann::json::array();
    for (const RandomCandidate& c : r.candidates)
      cands.push_back({{"genotype", to_string(c.genotype)},
                       {"val_accuracy", std::isfinite(c.val_accuracy) ? nlohmann::json(c.val_accuracy) : nlohmann::json("nan")}});
    result["candidates"] = cands;
  } else {
    SearchConfig sc = cfg.value("search", SearchConfig{});
    if (!cfg.contains("search") || !cfg.at("search").contains("seed")) sc.seed = seed;
    const VariantSettings vs = cfg.value("variant_settings", VariantSettings{});
    try {
      VariantResult vr = run_variant(parse_variant(method), train, cell, net, sc, vs);
      g = vr.genotype;
      out.files["trace.csv"] = vr.search.trace.to_csv();
      result["searched_genotype"] = to_string(vr.search.genotype);
      int negative = 0;
      for (const SearchEpoch& e : vr.search.trace.epochs) negative += e.negative_skip_logits;
      result["epochs_with_negative_skip_logits"] = negative;
      result["final_skip_logit_mean"] = vr.search.trace.epochs.empty() ? 0.0 : vr.search.trace.epochs.back().skip_logit_mean;
    } catch (const SearchDiverged& e) {
      write_text(fs::path(ctx.store.root) / "failed" / (cfg.at("name").get<std::string>() + "_trace.csv"),
                 e.trace().to_csv());
      throw;
    }
  }
  const TopologyMetrics m = topology_metrics(g);
  result["genotype"] = to_string(g);
  result["depth"] = m.depth;
  result["width_nodes"] = m.width_nodes;
  result["skip_count"] = m.skip_count;
  out.files["genotype.txt"] = to_string(g) + "\n";
  out.files["result.json"] = result.dump(2) + "\n";
  out.summary = result;
  out.summary.erase("candidates");
  return out;
}

StageOutput run_train(const Context& ctx, const nlohmann::json& cfg, const fs::path& dir) {
  StageOutput out;
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  nlohmann::json arch_j = cfg.value("arch", nlohmann::json::object());
  fill_seed(arch_j, seed, "init_seed");
  ArchSpec arch = arch_j.get<ArchSpec>();
  if (cfg.contains("genotype_from")) {
    const StageRecord& s = upstream(ctx, cfg, "genotype_from");
    std::string text = read_text(ctx.store.path(s, "genotype.txt"));
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    arch.kind = "cell";
    arch.genotype = text;
    if (!arch_j.contains("cell") && s.config.contains("cell")) arch.cell = s.config.at("cell").get<CellTemplate>();
  }
  arch = arch_for_data(arch, ctx.data.split.train);
  nlohmann::json tj = cfg.value("train", nlohmann::json::object());
  fill_seed(tj, seed);
  const TrainConfig tc = tj.get<TrainConfig>();

  DataSplit data = ctx.data.split;
  const double p = cfg.value("poison_rate", 0.0);
  if (p > 0.0) data = poison_labels(data, p, seed);
  TrainedModel tm;
  if (cfg.contains("adversarial")) {
    nlohmann::json ej = cfg.at("adversarial");
    fill_seed(ej, seed);
    tm = adversarial_train(arch, data, tc, ej.get<EvasionConfig>());
  } else {
    tm = train_model(arch, data, tc);
  }
  if (p > 0.0) tm.notes["poison_rate"] = p;
  tm.fingerprint = ctx.data.fingerprint;
  save_checkpoint(tm, (dir / "model").string());
  out.binary = {"model.bin", "model.json"};
  out.summary = {{"model_id", tm.model->describe()},
                 {"kind", tm.arch.kind},
                 {"num_params", tm.model->store().num_scalars()},
                 {"train_accuracy", tm.train_accuracy},
                 {"test_accuracy", tm.test_accuracy}};
  out.files["result.json"] = out.summary.dump(2) + "\n";
  return out;
}

StageOutput run_attack(const Context& ctx, const nlohmann::json& cfg) {
  StageOutput out;
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const std::string attack = cfg.at("attack").get<std::string>();
  nlohmann::json ac = cfg.value("config", nlohmann::json::object());
  fill_seed(ac, seed);
  const TrainedModel tm = load_model(ctx, cfg);
  const Dataset& test = ctx.data.split.test;
  const int n = cfg.value("inputs", test.size());
  const std::vector<int> rows = pick_rows(test.size(), n, seed);
  const Dataset sample = test.subset(rows);
  nlohmann::json extra = nlohmann::json::object();

  AttackReport rep;
  if (attack == "evasion") {
    rep = evasion_report(*tm.model, sample.images, sample.labels, rows, ac.get<EvasionConfig>());
  } else if (attack == "backdoor") {
    BackdoorConfig bc = ac.get<BackdoorConfig>();
    BackdoorResult r = trojannn_inject(*tm.model, DataSplit{ctx.data.split.train, sample}, bc);
    rep = std::move(r.report);
    for (AttackRecord& rec : rep.records) rec.input_id = rows[static_cast<std::size_t>(rec.input_id)];
    extra["trigger"] = std::vector<double>(r.trigger.values().begin(), r.trigger.values().end());
    extra["neurons"] = r.neurons;
  } else if (attack == "membership") {
    const Dataset& train = ctx.data.split.train;
    const std::vector<int> mem_rows = pick_rows(train.size(), n, seed + 1);
    const std::vector<int> non_rows(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), mem_rows.size())));
    MembershipResult r = membership_infer(*tm.model, train.subset(mem_rows), test.subset(non_rows), ac.get<MembershipConfig>());
    rep = std::move(r.report);
    for (AttackRecord& rec : rep.records)
      rec.input_id = (rec.group == "member" ? mem_rows : non_rows)[static_cast<std::size_t>(rec.input_id)];
  } else if (attack == "knockoff") {
    StealConfig sc = ac.get<StealConfig>();
    sc.surrogate = arch_for_data(sc.surrogate, test);
    if (!ac.contains("surrogate") || !ac.at("surrogate").contains("init_seed")) sc.surrogate.init_seed = seed;
    DatasetSpec pool_spec = ctx.spec.dataset;
    pool_spec.seed = ctx.spec.dataset.seed + 7919;
    pool_spec.train_size = cfg.value("pool_size", 2 * std::max<long>(1, sc.query_budget));
    pool_spec.test_size = 1;
    const DataSplit pool = load_dataset(pool_spec, ctx.options.data_root);
    ProbabilityOracle victim = [&](const Tensor& b) { return predict_proba(*tm.model, b); };
    StealResult r = knockoff_steal(victim, pool.train.images, sample.images, sc);
    rep = std::move(r.report);
    for (AttackRecord& rec : rep.records) rec.input_id = rows[static_cast<std::size_t>(rec.input_id)];
    extra["queries"] = r.queried.size();
  } else if (attack == "poisoning") {
    const double p = cfg.at("p_pos").get<double>();
    TrainConfig tc = tm.config;
    TrainedModel poisoned = train_model(tm.arch, poison_labels(ctx.data.split, p, seed), tc);
    const std::vector<int> before = predict_labels(*tm.model, sample.images);
    const std::vector<int> after = predict_labels(*poisoned.model, sample.images);
    rep.attack = "poisoning";
    rep.model_id = tm.model->describe();
    rep.config = {{"p_pos", p}, {"seed", seed}, {"train", tc}};
    for (std::size_t i = 0; i < rows.size(); ++i)
      rep.records.push_back({rows[i], after[i] == sample.labels[i], before[i] == sample.labels[i] ? 1.0 : 0.0, "clean"});
    rep.aggregates = compute_aggregates(rep.attack, rep.records);
    extra["p_pos"] = p;
  } else {
    throw ConfigError("unknown attack '" + attack + "'");
  }
  out.files["report.json"] = nlohmann::json(rep).dump(1) + "\n";
  out.summary = {{"attack", attack}, {"model", cfg.at("model")}, {"aggregates", rep.aggregates}};
  if (rep.config.contains("target_mode")) out.summary["target_mode"] = rep.config.at("target_mode");
  if (attack == "knockoff") {
    out.summary["strategy"] = rep.config.at("strategy");
    out.summary["query_budget"] = rep.config.at("query_budget");
  }
  if (attack == "poisoning") out.summary["p_pos"] = extra["p_pos"];
  out.files["result.json"] = extra.dump(1) + "\n";
  return out;
}

StageOutput run_diagnose(const Context& ctx, const nlohmann::json& cfg) {
  StageOutput out;
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const std::string what = cfg.at("diagnostic").get<std::string>();
  nlohmann::json dc = cfg.value("config", nlohmann::json::object());
  nlohmann::json result = {{"diagnostic", what}};

  auto model_for = [&]() -> std::pair<std::unique_ptr<Model>, std::string> {
    if (cfg.contains("model") && cfg.at("model").is_string()) {
      TrainedModel tm = load_model(ctx, cfg);
      return {std::move(tm.model), "trained"};
    }
    nlohmann::json aj = cfg.value("arch", nlohmann::json::object());
    fill_seed(aj, seed, "init_seed");
    return {build_model(arch_for_data(aj.get<ArchSpec>(), ctx.data.split.train)), "init"};
  };

  if (what == "contour") {
    auto [model, phase] = model_for();
    const ContourSpec cs = dc.get<ContourSpec>();
    ContourGrid g;
    if (cs.space == ContourSpace::parameter) {
      g = parameter_contour(*model, ctx.data.split.train, cs);
    } else {
      const int idx = cfg.value("input_index", 0);
      const int row[1] = {idx};
      g = input_contour(*model, gather_rows(ctx.data.split.test.images, row),
                        ctx.data.split.test.labels.at(static_cast<std::size_t>(idx)), cs);
    }
    out.files["contour.csv"] = contour_to_csv(g);
    result["grid"] = g;
    result["phase"] = phase;
    out.summary = {{"space", to_string(g.space)}, {"baseline", g.baseline}, {"model_id", g.model_id}};
  } else if (what == "variance") {
    auto [model, phase] = model_for();
    const int n = std::min(cfg.value("samples", 64), ctx.data.split.train.size());
    VarianceReport r = gradient_variance(*model, ctx.data.split.train.slice(0, n), cfg.value("phase", phase));
    result["report"] = r;
    out.summary = result["report"];
  } else if (what == "lipschitz") {
    auto [model, phase] = model_for();
    const int n = std::min(cfg.value("samples", 8), ctx.data.split.test.size());
    LipschitzProbeConfig lc;
    lc.pairs_per_point = dc.value("pairs_per_point", lc.pairs_per_point);
    lc.radius = dc.value("radius", lc.radius);
    lc.seed = dc.value("seed", seed);
    const Dataset s = ctx.data.split.test.slice(0, n);
    result["report"] = input_lipschitz_probe(*model, s.images, s.labels, lc);
    result["phase"] = phase;
    out.summary = result["report"];
  } else if (what == "convergence") {
    ConvergenceProbeConfig pc;
    pc.lipschitz = dc.value("lipschitz", pc.lipschitz);
    pc.min_curvature = dc.value("min_curvature", std::min(pc.min_curvature, pc.lipschitz));
    pc.dimension = dc.value("dimension", pc.dimension);
    pc.sigma2 = dc.value("sigma2", pc.sigma2);
    if (dc.contains("step_sizes")) {
      pc.step_sizes = dc.at("step_sizes").get<std::vector<double>>();
    } else {
      pc.step_sizes.assign(static_cast<std::size_t>(dc.value("horizon", 10)), dc.value("step", 1.0 / pc.lipschitz));
    }
    pc.initial_distance = dc.value("initial_distance", pc.initial_distance);
    pc.trials = dc.value("trials", pc.trials);
    pc.seed = dc.value("seed", seed);
    result["report"] = convergence_gap_probe(pc);
    out.summary = result["report"];
  } else if (what == "overlap") {
    std::vector<AttackReport> reps;
    std::vector<std::string> names;
    for (const auto& name : cfg.at("reports")) {
      const StageRecord* r = ctx.store.find(name.get<std::string>());
      if (!r || r->kind != "attack") throw ConfigError("overlap needs attack stages; '" + name.get<std::string>() + "' is not one");
      check_outputs(ctx.store, *r);
      reps.push_back(ctx.store.report(*r));
      names.push_back(name.get<std::string>());
    }
    result["histogram"] = vulnerability_overlap(reps);
    result["reports"] = names;
    out.summary = result["histogram"];
  } else {
    throw ConfigError("unknown diagnostic '" + what + "'");
  }
  out.files["result.json"] = result.dump(1) + "\n";
  return out;
}

}  // namespace

ResultStore run_experiment(const ExperimentSpec& spec, const std::string& out_dir, const RunOptions& options,
                           RunSummary* summary) {
  spec.validate();
  RunSummary local;
  RunSummary& sum = summary ? *summary : local;
  auto log = [&](const std::string& m) {
    if (options.log) options.log(m);
  };
  fs::create_directories(out_dir);
  ResultStore store = ResultStore::open(out_dir);
  store.root = out_dir;
  store.run_id = run_id(spec);
  store.spec = spec;
  store.spec.erase("output_dir");
  if (spec.stages.empty()) {
    store.save();
    return store;
  }

  const IngestedData data = ingest_dataset(spec.dataset, options.data_root);
  Context ctx{spec, store, data, options};
  for (const StageSpec& st : spec.stages) {
    if (!options.kinds.empty() && !options.kinds.count(st.kind)) {
      ++sum.skipped;
      continue;
    }
    nlohmann::json cfg = st.config;
    cfg["name"] = st.name;
    cfg["kind"] = st.kind;
    fill_seed(cfg, spec.seed);
    std::string key_src = cfg.dump() + "|" + data.fingerprint;
    for (const std::string& ref : references(cfg)) {
      const StageRecord* r = store.find(ref);
      if (!r) throw ConfigError("stage '" + st.name + "' needs '" + ref + "', which has not run");
      key_src += "|" + r->key;
    }
    const std::string key = sha256_hex(key_src);
    const std::string rel = "stages/" + st.name + "/" + key.substr(0, 12);

    auto existing = std::find_if(store.stages.begin(), store.stages.end(),
                                 [&](const StageRecord& r) { return r.name == st.name; });
    if (existing != store.stages.end() && existing->key == key) {
      bool present = true;
      for (const auto& [file, hash] : existing->outputs) present = present && fs::exists(fs::path(out_dir) / rel / file);
      if (present) {
        check_outputs(store, *existing);
        log("cached  " + st.name);
        ++sum.cached;
        store.history.push_back({{"name", st.name}, {"key", key}, {"action", "cached"}});
        continue;
      }
    }

    log("running " + st.name + " (" + st.kind + ")");
    const fs::path dir = fs::path(out_dir) / rel;
    fs::create_directories(dir);
    StageOutput so;
    if (st.kind == "search")
      so = run_search(ctx, cfg);
    else if (st.kind == "train")
      so = run_train(ctx, cfg, dir);
    else if (st.kind == "attack")
      so = run_attack(ctx, cfg);
    else
      so = run_diagnose(ctx, cfg);

    StageRecord rec;
    rec.name = st.name;
    rec.kind = st.kind;
    rec.key = key;
    rec.dir = rel;
    rec.summary = so.summary;
    rec.config = cfg;
    for (const auto& [file, text] : so.files) write_text(dir / file, text);
    for (const auto& [file, text] : so.files) rec.outputs[file] = sha256_file((dir / file).string());
    for (const std::string& file : so.binary) rec.outputs[file] = sha256_file((dir / file).string());
    if (existing != store.stages.end())
      *existing = rec;
    else
      store.stages.push_back(rec);
    store.history.push_back({{"name", st.name}, {"key", key}, {"action", "executed"}});
    ++sum.executed;
    store.save();
  }
  // Keep the manifest in spec order.
  std::vector<StageRecord> ordered;
  for (const StageSpec& st : spec.stages)
    if (const StageRecord* r = store.find(st.name)) ordered.push_back(*r);
  for (const StageRecord& r : store.stages)
    if (std::none_of(spec.stages.begin(), spec.stages.end(), [&](const StageSpec& s) { return s.name == r.name; }))
      ordered.push_back(r);
  store.stages = std::move(ordered);
  store.save();
  return store;
}

}  // namespace naslab
