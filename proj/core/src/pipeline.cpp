#include "sparsegroup/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "sparsegroup/group_structure.hpp"
#include "sparsegroup/regularizer.hpp"
#include "sparsegroup/shuffle.hpp"

namespace sparsegroup {

namespace {

using nlohmann::json;

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  return seed * 0x9E3779B97F4A7C15ULL + stream;
}

}  // namespace

void RunConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (finetune_epochs < 0)
    throw std::invalid_argument("finetune_epochs must be >= 0");
  if (!(lr > 0.0) || !(finetune_lr > 0.0))
    throw std::invalid_argument("learning rates must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0))
    throw std::invalid_argument("weight decay must be nonnegative");
  if (!(target_rate > 0.0 && target_rate < 1.0))
    throw std::invalid_argument("target rate must lie in (0, 1)");
  if (!(p_train > 0.0 && p_train <= 1.0))
    throw std::invalid_argument("p_train must lie in (0, 1]");
  if (!(delta_lambda >= 0.0))
    throw std::invalid_argument("delta_lambda must be nonnegative");
  if (!(power > 0.0 && power <= 1.0))
    throw std::invalid_argument("power must lie in (0, 1]");
  if (restarts < 0 || max_perm_iters < 1 || batch_size < 1)
    throw std::invalid_argument("bad optimizer settings");
}

RunConfig config_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  RunConfig c;
  c.seed = j.value("seed", std::uint64_t(0));
  c.epochs = j.value("epochs", c.epochs);
  c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
  c.lr = j.value("lr", c.lr);
  c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.target_rate = j.value("target_rate", c.target_rate);
  c.p_train = j.value("p_train", c.p_train);
  c.delta_lambda = j.value("delta_lambda", c.delta_lambda);
  c.power = j.value("power", c.power);
  c.norm = norm_from_string(j.value("norm", std::string("l1")));
  c.restarts = j.value("restarts", c.restarts);
  c.max_perm_iters = j.value("max_perm_iters", c.max_perm_iters);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.shuffle_mode =
      shuffle_mode_from_string(j.value("shuffle_mode", std::string("finetune")));
  c.validate();
  return c;
}

RunConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

namespace {

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["finetune_epochs"] = c.finetune_epochs;
  j["lr"] = c.lr;
  j["finetune_lr"] = c.finetune_lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["target_rate"] = c.target_rate;
  j["p_train"] = c.p_train;
  j["delta_lambda"] = c.delta_lambda;
  j["power"] = c.power;
  j["norm"] = norm_to_string(c.norm);
  j["restarts"] = c.restarts;
  j["max_perm_iters"] = c.max_perm_iters;
  j["batch_size"] = c.batch_size;
  j["shuffle_mode"] = shuffle_mode_to_string(c.shuffle_mode);
  return j;
}

json plan_to_json(const RunPlan& plan) {
  json j;
  j["stage"] = plan.stage;
  j["shuffle_mode"] = plan.shuffle_mode;
  j["config"] = config_to_json(plan.config);
  j["layers"] = json::array();
  for (const PlanLayer& l : plan.grouping.layers) {
    json lj;
    lj["name"] = l.name;
    lj["capacity"] = l.capacity;
    lj["group_level"] = l.group_level;
    lj["gather_in"] = l.gather_in.map();
    lj["scatter_out"] = l.scatter_out.map();
    lj["off_block_mass_removed"] = l.off_block_mass_removed;
    j["layers"].push_back(std::move(lj));
  }
  j["threshold_used"] = plan.grouping.threshold_used;
  j["target_rate"] = plan.grouping.target_rate;
  j["achieved_rate"] = plan.grouping.achieved_rate;
  j["capacity_limited"] = plan.grouping.capacity_limited;
  j["lambda_history"] = plan.grouping.lambda_history;
  j["sparsity_history"] = plan.grouping.sparsity_history;
  j["epochs"] = json::array();
  for (const EpochRecord& e : plan.epochs) {
    json ej;
    ej["epoch"] = e.epoch;
    ej["loss"] = e.loss;
    ej["accuracy"] = e.accuracy;
    ej["levels"] = e.levels;
    ej["lambda"] = e.lambda;
    ej["sparsity"] = e.sparsity;
    j["epochs"].push_back(std::move(ej));
  }
  j["events"] = plan.events;
  j["pre_compression_accuracy"] = plan.pre_compression_accuracy;
  j["post_compression_accuracy"] = plan.post_compression_accuracy;
  j["finetune_accuracy"] = plan.finetune_accuracy;
  return j;
}

RunPlan plan_from_json(const json& j) {
  RunPlan plan;
  plan.stage = j.value("stage", std::string("train"));
  plan.shuffle_mode = j.value("shuffle_mode", std::string("finetune"));
  if (j.contains("config"))
    plan.config = config_from_json_text(j.at("config").dump());
  for (const json& lj : j.value("layers", json::array())) {
    PlanLayer l;
    l.name = lj.at("name").get<std::string>();
    l.capacity = lj.at("capacity").get<int>();
    l.group_level = lj.at("group_level").get<int>();
    l.gather_in = Permutation(lj.at("gather_in").get<std::vector<int>>());
    l.scatter_out = Permutation(lj.at("scatter_out").get<std::vector<int>>());
    l.off_block_mass_removed = lj.value("off_block_mass_removed", 0.0);
    plan.grouping.layers.push_back(std::move(l));
  }
  plan.grouping.threshold_used = j.value("threshold_used", 0.0);
  plan.grouping.target_rate = j.value("target_rate", 0.0);
  plan.grouping.achieved_rate = j.value("achieved_rate", 0.0);
  plan.grouping.capacity_limited = j.value("capacity_limited", false);
  plan.grouping.lambda_history =
      j.value("lambda_history", std::vector<double>{});
  plan.grouping.sparsity_history =
      j.value("sparsity_history", std::vector<double>{});
  for (const json& ej : j.value("epochs", json::array())) {
    EpochRecord e;
    e.epoch = ej.at("epoch").get<int>();
    e.loss = ej.at("loss").get<double>();
    e.accuracy = ej.at("accuracy").get<double>();
    e.levels = ej.at("levels").get<std::vector<int>>();
    e.lambda = ej.at("lambda").get<double>();
    e.sparsity = ej.at("sparsity").get<double>();
    plan.epochs.push_back(std::move(e));
  }
  plan.events = j.value("events", std::vector<std::string>{});
  plan.pre_compression_accuracy = j.value("pre_compression_accuracy", -1.0);
  plan.post_compression_accuracy = j.value("post_compression_accuracy", -1.0);
  plan.finetune_accuracy = j.value("finetune_accuracy", -1.0);
  return plan;
}

}  // namespace

std::string plan_to_json_text(const RunPlan& plan) {
  return plan_to_json(plan).dump(2) + "\n";
}

RunPlan plan_from_json_text(const std::string& text) {
  return plan_from_json(json::parse(text));
}

void save_plan(const RunPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plan: " + path);
  out << plan_to_json_text(plan);
}

RunPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open plan: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return plan_from_json_text(ss.str());
}

std::string config_to_json_text(const RunConfig& config) {
  return config_to_json(config).dump(2) + "\n";
}

TrainOutput run_train(const RunConfig& config) {
  config.validate();
  const SynthDataset data = make_synth_dataset(config.seed);
  MicroNet net = make_micronet(config.seed);
  const std::vector<LayerSpec> specs = net.conv_specs();
  const std::size_t L = specs.size();

  RunPlan plan;
  plan.config = config;
  plan.stage = "train";
  plan.shuffle_mode = shuffle_mode_to_string(config.shuffle_mode);
  plan.grouping.target_rate = config.target_rate;

  std::vector<int> capacities(L);
  std::vector<RegMatrix> lp_cost;  // max-level cost matrices for the LP steps
  std::vector<Permutation> p_out(L), q_in(L);
  for (std::size_t l = 0; l < L; ++l) {
    capacities[l] = max_group_level(specs[l].c_out, specs[l].c_in);
    lp_cost.push_back(build_reg_matrix(specs[l].c_out, specs[l].c_in,
                                       std::nullopt, config.power));
  }

  auto optimize_layer = [&](std::size_t l, bool initial) {
    ShuffleOptions opts;
    opts.max_iters = config.max_perm_iters;
    opts.restarts = initial ? config.restarts : 0;
    opts.seed = mix(config.seed, 0xB00 + l);
    if (!initial) {
      opts.init_p = p_out[l].map();
      opts.init_q = q_in[l].map();
    }
    const ImportanceMatrix s = importance_matrix(net.convs[l].w, config.norm);
    const ShuffleResult r = optimize_permutations(s, lp_cost[l], opts);
    p_out[l] = r.p_out;
    q_in[l] = r.q_in;
  };

  // Initial permutation update, before any training happens.
  for (std::size_t l = 0; l < L; ++l) optimize_layer(l, true);
  plan.events.push_back("init_permutations");

  std::vector<int> levels(L, 1);
  std::vector<RegMatrix> reg(L);
  auto rebuild_reg = [&] {
    for (std::size_t l = 0; l < L; ++l)
      reg[l] = build_reg_matrix(specs[l].c_out, specs[l].c_in, levels[l],
                                config.power);
  };
  rebuild_reg();

  SparsityState state;
  state.delta_lambda = config.delta_lambda;
  state.total_epochs = config.epochs;
  state.target = config.target_rate;

  SgdOptions sgd;
  sgd.lr = config.lr;
  sgd.momentum = config.momentum;
  sgd.weight_decay = 0.0;  // structured regularization replaces weight decay
  sgd.batch_size = config.batch_size;

  DenseWork work(net, config.batch_size);
  Gradients velocity = Gradients::like_dense(net);

  for (int t = 1; t <= config.epochs; ++t) {
    RegPenalty penalty;
    penalty.lambda = state.lambda;
    penalty.norm = config.norm;
    penalty.reg = reg;
    penalty.p_out = p_out;
    penalty.q_in = q_in;
    const EpochStats stats = train_epoch(net, data, sgd, penalty,
                                         mix(config.seed, 0xE0000 + t),
                                         velocity, work);
    plan.events.push_back("epoch" + std::to_string(t) + ".train");

    for (std::size_t l = 0; l < L; ++l) optimize_layer(l, false);
    plan.events.push_back("epoch" + std::to_string(t) + ".update_permutations");

    for (std::size_t l = 0; l < L; ++l) {
      const ImportanceMatrix sp = permute_importance(
          importance_matrix(net.convs[l].w, config.norm), p_out[l], q_in[l]);
      levels[l] = group_level(sp, config.p_train, capacities[l]);
    }
    plan.events.push_back("epoch" + std::to_string(t) + ".update_levels");

    rebuild_reg();
    plan.events.push_back("epoch" + std::to_string(t) + ".update_reg_matrices");

    const double sparsity = model_sparsity(levels, specs);
    const double lambda_active = state.lambda;
    state = lambda_step(state, sparsity);
    plan.events.push_back("epoch" + std::to_string(t) + ".update_lambda");

    plan.grouping.lambda_history.push_back(lambda_active);
    plan.grouping.sparsity_history.push_back(sparsity);
    EpochRecord rec;
    rec.epoch = t;
    rec.loss = stats.mean_loss;
    rec.accuracy = stats.accuracy;
    rec.levels = levels;
    rec.lambda = lambda_active;
    rec.sparsity = sparsity;
    plan.epochs.push_back(std::move(rec));
  }

  for (std::size_t l = 0; l < L; ++l) {
    PlanLayer pl;
    pl.name = specs[l].name;
    pl.capacity = capacities[l];
    pl.group_level = levels[l];
    pl.gather_in = q_in[l];
    pl.scatter_out = p_out[l];
    plan.grouping.layers.push_back(std::move(pl));
  }
  return {std::move(net), std::move(plan)};
}

CompressOutput run_compress(const MicroNet& net, const RunPlan& train_plan,
                            double target_rate) {
  if (train_plan.stage != "train")
    throw std::runtime_error("compress expects a training-stage plan");
  const RunConfig& config = train_plan.config;
  const SynthDataset data = make_synth_dataset(config.seed);

  std::vector<Permutation> p_out, q_in;
  for (const PlanLayer& l : train_plan.grouping.layers) {
    p_out.push_back(l.scatter_out);
    q_in.push_back(l.gather_in);
  }

  CompressOutput out;
  const double pre_acc = evaluate(net, data, Split::Test);
  CompressResult cr =
      compress_model(net, p_out, q_in, target_rate, config.norm);
  const double post_acc = evaluate(cr.net, data, Split::Test);

  out.net = std::move(cr.net);
  out.plan = train_plan;
  cr.plan.lambda_history = train_plan.grouping.lambda_history;
  cr.plan.sparsity_history = train_plan.grouping.sparsity_history;
  out.plan.grouping = std::move(cr.plan);
  out.plan.stage = "compressed";
  out.plan.pre_compression_accuracy = pre_acc;
  out.plan.post_compression_accuracy = post_acc;
  out.plan.events.push_back("compress");
  return out;
}

FinetuneOutput run_finetune(const CompressedNet& net, const RunPlan& plan,
                            const RunConfig& config) {
  config.validate();
  if (plan.stage != "compressed" && plan.stage != "finetuned")
    throw std::runtime_error("finetune expects a compressed-stage plan");
  const SynthDataset data = make_synth_dataset(config.seed);

  FinetuneOutput out;
  out.plan = plan;
  out.plan.config = config;
  out.plan.shuffle_mode = shuffle_mode_to_string(config.shuffle_mode);
  out.plan.grouping = shuffle_variant(plan.grouping, config.shuffle_mode,
                                      mix(config.seed, 0x5F));
  out.net = net;
  for (std::size_t l = 0; l < out.net.layers.size(); ++l) {
    out.net.layers[l].gather_in = out.plan.grouping.layers[l].gather_in;
    out.net.layers[l].scatter_out = out.plan.grouping.layers[l].scatter_out;
  }
  if (shuffle_mode_reinitializes(config.shuffle_mode))
    reinit_weights(out.net, mix(config.seed, 0x1717));
  out.plan.events.push_back("finetune." +
                            shuffle_mode_to_string(config.shuffle_mode));

  SgdOptions sgd;
  sgd.momentum = config.momentum;
  sgd.weight_decay = config.weight_decay;
  sgd.batch_size = config.batch_size;

  GroupedWork work(out.net, config.batch_size);
  Gradients velocity = Gradients::like_grouped(out.net);
  const int N = config.finetune_epochs;
  for (int t = 1; t <= N; ++t) {
    double lr = config.finetune_lr;
    if (t > (3 * N) / 4)
      lr *= 0.01;
    else if (t > N / 2)
      lr *= 0.1;
    sgd.lr = lr;
    train_epoch_grouped(out.net, data, sgd, mix(config.seed, 0xF0000 + t),
                        velocity, work);
  }
  out.final_accuracy = evaluate(out.net, data, Split::Test);
  out.plan.stage = "finetuned";
  out.plan.finetune_accuracy = out.final_accuracy;
  return out;
}

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string csv_escape(const std::string& s) { return s; }

}  // namespace

void write_reports(const RunPlan& plan, const ArchSpec* arch,
                   ReportFormat format, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const ArchSpec spec = arch ? *arch : make_arch_preset("micronet");

  std::vector<int> levels;
  for (const PlanLayer& l : plan.grouping.layers)
    levels.push_back(l.group_level);
  const CompressionReport rep = compression_report(spec, levels);

  std::vector<std::pair<std::string, Matrix>> confusions;
  for (std::size_t l = 0; l + 1 < plan.grouping.layers.size(); ++l) {
    const PlanLayer& a = plan.grouping.layers[l];
    const PlanLayer& b = plan.grouping.layers[l + 1];
    if (a.scatter_out.size() != b.gather_in.size()) continue;
    confusions.emplace_back(a.name + "-" + b.name, confusion_matrix(a, b));
  }

  if (format == ReportFormat::Json) {
    json j;
    j["cardinality"] = json::array();
    for (const PlanLayer& l : plan.grouping.layers)
      j["cardinality"].push_back({{"layer", l.name},
                                  {"group_level", l.group_level},
                                  {"cardinality", 1 << (l.group_level - 1)},
                                  {"capacity", l.capacity}});
    j["confusion"] = json::array();
    for (const auto& [name, m] : confusions) {
      json rows = json::array();
      for (int r = 0; r < m.rows; ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols; ++c) row.push_back(int(m(r, c)));
        rows.push_back(std::move(row));
      }
      j["confusion"].push_back({{"pair", name}, {"matrix", std::move(rows)}});
    }
    j["ledger"] = {{"params_dense", rep.params_dense},
                   {"params_grouped", rep.params_grouped},
                   {"flops_dense", rep.flops_dense},
                   {"flops_grouped", rep.flops_grouped},
                   {"rate", rep.rate}};
    j["ledger"]["layers"] = json::array();
    for (const ReportRow& r : rep.rows)
      j["ledger"]["layers"].push_back({{"name", r.name},
                                       {"group_level", r.group_level},
                                       {"cardinality", r.cardinality},
                                       {"params_dense", r.params_dense},
                                       {"params_grouped", r.params_grouped},
                                       {"flops_dense", r.flops_dense},
                                       {"flops_grouped", r.flops_grouped}});
    j["trajectories"] = {{"lambda", plan.grouping.lambda_history},
                         {"sparsity", plan.grouping.sparsity_history}};
    write_file(out_dir + "/report.json", j.dump(2) + "\n");
    return;
  }

  {
    std::ostringstream ss;
    ss << "layer,group_level,cardinality,capacity\n";
    for (const PlanLayer& l : plan.grouping.layers)
      ss << csv_escape(l.name) << "," << l.group_level << ","
         << (1 << (l.group_level - 1)) << "," << l.capacity << "\n";
    write_file(out_dir + "/cardinality.csv", ss.str());
  }
  for (std::size_t i = 0; i < confusions.size(); ++i) {
    std::ostringstream ss;
    const Matrix& m = confusions[i].second;
    ss << "# " << confusions[i].first << "\n";
    for (int r = 0; r < m.rows; ++r) {
      for (int c = 0; c < m.cols; ++c)
        ss << (c ? "," : "") << int(m(r, c));
      ss << "\n";
    }
    write_file(out_dir + "/confusion_" + std::to_string(i) + ".csv", ss.str());
  }
  {
    std::ostringstream ss;
    ss << "name,group_level,cardinality,params_dense,params_grouped,"
          "flops_dense,flops_grouped\n";
    for (const ReportRow& r : rep.rows)
      ss << csv_escape(r.name) << "," << r.group_level << "," << r.cardinality
         << "," << r.params_dense << "," << r.params_grouped << ","
         << r.flops_dense << "," << r.flops_grouped << "\n";
    ss << "total,,," << rep.params_dense << "," << rep.params_grouped << ","
       << rep.flops_dense << "," << rep.flops_grouped << "\n";
    ss << "rate," << rep.rate << ",,,,,\n";
    write_file(out_dir + "/ledger.csv", ss.str());
  }
  {
    std::ostringstream ss;
    ss << "epoch,lambda,sparsity\n";
    for (std::size_t t = 0; t < plan.grouping.lambda_history.size(); ++t)
      ss << (t + 1) << "," << plan.grouping.lambda_history[t] << ","
         << (t < plan.grouping.sparsity_history.size()
                 ? plan.grouping.sparsity_history[t]
                 : 0.0)
         << "\n";
    write_file(out_dir + "/trajectories.csv", ss.str());
  }
}

namespace {

bool check(std::ostream& log, const std::string& name, bool ok) {
  log << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
  return ok;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-12});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

bool verify_artifacts(const std::string& ckpt_path,
                      const std::string& plan_path, std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const RunPlan plan = load_plan(plan_path);
  bool ok = true;

  std::vector<int> levels;
  for (const PlanLayer& l : plan.grouping.layers) {
    levels.push_back(l.group_level);
    ok &= check(log, l.name + ": 1 <= level <= capacity",
                l.group_level >= 1 && l.group_level <= l.capacity);
  }

  const bool compressed = checkpoint_is_compressed(ckpt);
  CompressedNet cnet;
  MicroNet dnet;
  if (compressed) {
    cnet = compressed_from_checkpoint(ckpt, plan.grouping);
  } else {
    dnet = dense_from_checkpoint(ckpt);
    std::vector<Permutation> p_out, q_in;
    for (const PlanLayer& l : plan.grouping.layers) {
      p_out.push_back(l.scatter_out);
      q_in.push_back(l.gather_in);
    }
    CompressedNet rebuilt;
    rebuilt.input_shape = dnet.input_shape;
    rebuilt.fc = dnet.fc;
    for (std::size_t l = 0; l < dnet.convs.size(); ++l)
      rebuilt.layers.push_back(compress_layer(
          dnet.convs[l].w, dnet.convs[l].bias, p_out[l], q_in[l],
          plan.grouping.layers[l].group_level, dnet.convs[l].stride,
          dnet.convs[l].pad));
    cnet = std::move(rebuilt);
  }

  // Parameter ledger: grouped count = dense count / 2^{g-1} per layer.
  {
    const std::vector<LayerSpec> specs =
        compressed ? std::vector<LayerSpec>{} : dnet.conv_specs();
    bool ledger = true;
    for (std::size_t l = 0; l < cnet.layers.size(); ++l) {
      const GroupedLayer& gl = cnet.layers[l];
      const long long dense = 1LL * gl.c_in * gl.c_out * gl.k * gl.k;
      ledger &= gl.param_count(false) == dense / gl.groups;
    }
    ok &= check(log, "parameter ledger (dense / 2^(g-1))", ledger);
    if (!compressed) {
      const double recomputed = model_sparsity(levels, specs);
      ok &= check(log, "achieved_rate matches recomputation",
                  std::abs(recomputed - plan.grouping.achieved_rate) < 1e-12);
    }
  }

  // Masked-dense equivalence on random inputs.
  {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> unit(0.0, 1.0);
    bool equiv = true, fused_ok = true;
    for (int trial = 0; trial < 5; ++trial) {
      FeatureMap f(cnet.input_shape);
      for (double& x : f.data) x = unit(rng);
      FeatureMap via_grouped = f, via_masked = f;
      for (const GroupedLayer& gl : cnet.layers) {
        via_grouped = groupconv_forward(gl, via_grouped);
        via_masked = conv_forward(masked_dense_equivalent(gl), via_masked);
        const double err = max_rel_err(via_grouped.data, via_masked.data);
        equiv &= err <= 1e-6;
        for (double& x : via_grouped.data) x = std::max(0.0, x);
        via_masked = via_grouped;
      }
      const std::vector<double> plain = logits(cnet, f.data.data(), false);
      const std::vector<double> fused = logits(cnet, f.data.data(), true);
      fused_ok &= plain == fused;
    }
    ok &= check(log, "grouped forward == masked dense forward (1e-6)", equiv);
    ok &= check(log, "fused shuffle == unfused shuffle (exact)", fused_ok);
  }

  // Groupability of the reconstructed masked weights, tol 0.
  {
    bool groupable = true;
    for (const GroupedLayer& gl : cnet.layers) {
      const ConvLayer masked = masked_dense_equivalent(gl);
      int level = 1;
      while ((1 << (level - 1)) < gl.groups) ++level;
      groupable &= is_groupable(importance_matrix(masked.w), level,
                                gl.scatter_out, gl.gather_in, 0.0);
    }
    ok &= check(log, "masked weights are groupable at tol 0", groupable);
  }

  // Confusion-matrix marginals.
  {
    bool marginals = true;
    for (std::size_t l = 0; l + 1 < plan.grouping.layers.size(); ++l) {
      const PlanLayer& a = plan.grouping.layers[l];
      const PlanLayer& b = plan.grouping.layers[l + 1];
      if (a.scatter_out.size() != b.gather_in.size()) continue;
      const Matrix d = confusion_matrix(a, b);
      const int C = a.scatter_out.size();
      for (int r = 0; r < d.rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < d.cols; ++c) s += d(r, c);
        marginals &= s == double(C / d.rows);
      }
      for (int c = 0; c < d.cols; ++c) {
        double s = 0.0;
        for (int r = 0; r < d.rows; ++r) s += d(r, c);
        marginals &= s == double(C / d.cols);
      }
    }
    ok &= check(log, "confusion-matrix marginals", marginals);
  }

  return ok;
}

}  // namespace sparsegroup
