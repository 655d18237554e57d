// Command-line harness: train, propagate, evaluate, sweep, verify.
// Structured results go to stdout as line-delimited JSON (or CSV for sweep
// files); human-facing warnings go to stderr.

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kgprop/checkpoint.hpp"
#include "kgprop/eval.hpp"
#include "kgprop/graph.hpp"
#include "kgprop/model.hpp"
#include "kgprop/propagation.hpp"
#include "kgprop/trainer.hpp"
#include "kgprop/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void emit(const json& j) {
  std::printf("%s\n", j.dump().c_str());
  std::fflush(stdout);
}

struct DataFlags {
  std::string dir, train, valid, test;
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--data", d.dir,
                  "Dataset directory holding train.txt, valid.txt, and test.txt");
  cmd->add_option("--train-file", d.train, "Training triplets, TSV head<TAB>relation<TAB>tail");
  cmd->add_option("--valid-file", d.valid, "Validation triplets (same format)");
  cmd->add_option("--test-file", d.test, "Test triplets (same format)");
}

kgprop::Dataset load_data(const DataFlags& d) {
  std::string train = d.train, valid = d.valid, test = d.test;
  if (!d.dir.empty()) {
    auto fill = [&](std::string& slot, const char* name) {
      if (!slot.empty()) return;
      const fs::path p = fs::path(d.dir) / name;
      if (fs::exists(p)) slot = p.string();
    };
    fill(train, "train.txt");
    fill(valid, "valid.txt");
    fill(test, "test.txt");
  }
  if (train.empty()) {
    throw kgprop::ConfigError("no training file found (use --data or --train-file)");
  }
  return kgprop::load_dataset(train, valid, test);
}

// Applies a flat key=value config file to a subcommand. Lines are
// "name=value" using the long option names without the leading dashes; '#'
// starts a comment. Values parse exactly as if typed on the command line,
// and flags that were actually typed keep their values.
void apply_config(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kgprop::DataError("cannot open config: " + path);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw kgprop::ParseError(path + ":" + std::to_string(lineno) + ": expected name=value");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (key == "config") {
      throw kgprop::ConfigError(path + ":" + std::to_string(lineno) +
                                ": config files cannot nest");
    }
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr) {
      throw kgprop::ConfigError(path + ":" + std::to_string(lineno) + ": unknown option \"" +
                                key + "\"");
    }
    if (opt->count() > 0) continue;  // command line wins
    opt->add_result(value);
    opt->run_callback();
  }
}

void check_digests(const kgprop::CheckpointHeader& header, const kgprop::Dataset& ds) {
  if (header.entity_digest != 0 && ds.entities &&
      header.entity_digest != ds.entities->digest()) {
    throw kgprop::ConfigError("checkpoint was written against a different entity vocabulary");
  }
  if (header.relation_digest != 0 && ds.relations &&
      header.relation_digest != ds.relations->digest()) {
    throw kgprop::ConfigError("checkpoint was written against a different relation vocabulary");
  }
}

template <typename S>
void check_sizes(const kgprop::EmbeddingStore<S>& store, const kgprop::Dataset& ds) {
  const auto ne = static_cast<int64_t>(ds.entities->size());
  const auto nr = static_cast<int64_t>(ds.relations->size());
  if (store.num_entities != ne || store.num_relations != nr) {
    throw kgprop::DataError("checkpoint holds " + std::to_string(store.num_entities) + "x" +
                            std::to_string(store.num_relations) + " embeddings but the dataset " +
                            "needs " + std::to_string(ne) + "x" + std::to_string(nr));
  }
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
  DataFlags data;
  std::string out;
  std::string model = "transe";
  std::string norm = "l2";
  std::string negative_mode = "both";
  std::string precision = "float32";
  int dim = 200;
  double gamma = 12.0;
  int ote_groups = 1;
  double lr = 0.05;
  int batch_size = 1024;
  int negatives = 1;
  int epochs = 100;
  uint64_t seed = 1;
  int threads = 1;
  int retry_bound = 100;
  bool filtered_negatives = false;
  bool norm_clip = false;
  std::vector<double> fractions = {1.0};
};

std::string fraction_path(const std::string& out, double fraction) {
  if (fraction >= 0.9995) return out;
  char buf[32];
  std::snprintf(buf, sizeof(buf), ".p%g", fraction * 100.0);
  return out + buf;
}

template <typename S>
int run_train(const TrainArgs& a) {
  const kgprop::Dataset ds = load_data(a.data);
  kgprop::ModelSpec spec;
  spec.family = kgprop::family_from_string(a.model);
  spec.dim = a.dim;
  spec.margin = a.gamma;
  spec.norm = kgprop::norm_from_string(a.norm);
  spec.ote_groups = a.ote_groups;
  kgprop::TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.negatives_per_positive = a.negatives;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.negative_mode = kgprop::negative_mode_from_string(a.negative_mode);
  cfg.filtered_negatives = a.filtered_negatives;
  cfg.negative_retry_bound = a.retry_bound;
  cfg.threads = a.threads;
  cfg.norm_clip = a.norm_clip;
  cfg.checkpoint_fractions = a.fractions;

  std::optional<kgprop::KnownTripletSet> filter;
  if (a.filtered_negatives) {
    filter.emplace(ds.train.num_entities, ds.train.num_relations);
    filter->insert_all(ds.union_all().triplets);
  }
  const uint64_t entity_digest = ds.entities->digest();
  const uint64_t relation_digest = ds.relations->digest();

  kgprop::TrainHooks<S> hooks;
  hooks.on_epoch = [](const kgprop::EpochStats& st) {
    emit(json{{"event", "epoch"},
              {"epoch", st.epoch},
              {"step", st.step},
              {"loss", st.mean_loss},
              {"seconds", st.seconds}});
  };
  hooks.on_checkpoint = [&](double fraction, const kgprop::EmbeddingStore<S>& store) {
    const std::string path = fraction_path(a.out, fraction);
    kgprop::save_checkpoint(path, spec, store, entity_digest, relation_digest);
    emit(json{{"event", "checkpoint"}, {"fraction", fraction}, {"path", path}});
  };

  auto [store, report] = kgprop::train<S>(ds.train, spec, cfg, filter ? &*filter : nullptr, hooks);
  emit(json{{"event", "trained"},
            {"entities", store.num_entities},
            {"relations", store.num_relations},
            {"triplets", ds.train.triplets.size()},
            {"steps", report.total_steps},
            {"degraded_negatives", report.degraded_negatives},
            {"seconds", report.seconds}});
  return 0;
}

// ---- propagate ------------------------------------------------------------

struct PropagateArgs {
  DataFlags data;
  std::string checkpoint, out;
  std::string mode = "rep";
  double alpha = 0.98;
  int hops = 1;
  int threads = 1;
};

template <typename S>
int run_propagate(const PropagateArgs& a, const kgprop::CheckpointHeader& header) {
  const kgprop::Dataset ds = load_data(a.data);
  auto [spec, store] = kgprop::load_checkpoint<S>(a.checkpoint);
  check_digests(header, ds);
  check_sizes(store, ds);
  const kgprop::AdjacencyIndex adj = kgprop::build_adjacency(ds.train);
  kgprop::PropagationConfig cfg;
  cfg.alpha = a.alpha;
  cfg.hops = a.hops;
  cfg.mode = kgprop::propagation_mode_from_string(a.mode);
  cfg.threads = a.threads;
  const kgprop::HopHook<S> hook = [](int hop, const kgprop::EmbeddingStore<S>&, double seconds) {
    emit(json{{"event", "hop"}, {"hop", hop}, {"seconds", seconds}});
  };
  kgprop::EmbeddingStore<S> out = cfg.mode == kgprop::PropagationMode::Rep
                                      ? kgprop::propagate(store, adj, spec, cfg, hook)
                                      : kgprop::propagate_ep(store, adj, cfg, hook);
  kgprop::save_checkpoint(a.out, spec, out, header.entity_digest, header.relation_digest);
  emit(json{{"event", "propagated"},
            {"mode", a.mode},
            {"alpha", a.alpha},
            {"hops", a.hops},
            {"iteration", out.iteration},
            {"path", a.out}});
  return 0;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  DataFlags data;
  std::string checkpoint;
  std::string protocol = "filtered";
  std::string tie = "average";
  std::string split = "test";
  std::string candidate_file;
  std::string metrics_out;
  int threads = 1;
};

template <typename S>
int run_evaluate(const EvaluateArgs& a, const kgprop::CheckpointHeader& header) {
  const kgprop::Dataset ds = load_data(a.data);
  auto [spec, store] = kgprop::load_checkpoint<S>(a.checkpoint);
  check_digests(header, ds);
  check_sizes(store, ds);
  const kgprop::KnowledgeGraph& split = a.split == "test" ? ds.test : ds.valid;
  if (split.triplets.empty()) {
    throw kgprop::DataError("the requested " + a.split + " split is empty");
  }
  kgprop::EvalOptions options;
  options.protocol = kgprop::protocol_from_string(a.protocol);
  options.tie = kgprop::tie_policy_from_string(a.tie);
  options.threads = a.threads;

  std::optional<kgprop::KnownTripletSet> filter;
  std::optional<std::vector<std::vector<kgprop::EntityId>>> lists;
  if (options.protocol == kgprop::EvalProtocol::Candidates) {
    if (a.candidate_file.empty()) {
      throw kgprop::ConfigError("the candidates protocol needs --candidate-file");
    }
    lists = kgprop::load_candidates(a.candidate_file, *ds.entities, split.triplets.size());
  } else {
    filter.emplace(ds.train.num_entities, ds.train.num_relations);
    filter->insert_all(ds.union_all().triplets);
  }
  const kgprop::RankingReport report =
      kgprop::evaluate(spec, store, std::span<const kgprop::Triplet>(split.triplets),
                       filter ? &*filter : nullptr, lists ? &*lists : nullptr, options);
  const std::string violation = report.check_invariants();
  if (!violation.empty()) {
    std::fprintf(stderr, "warning: report invariant violated: %s\n", violation.c_str());
  }
  json doc = json::parse(report.to_json());
  doc["protocol"] = a.protocol;
  doc["tie"] = a.tie;
  doc["split"] = a.split;
  doc["checkpoint"] = a.checkpoint;
  doc["iteration"] = store.iteration;
  emit(doc);
  if (!a.metrics_out.empty()) {
    std::ofstream out(a.metrics_out, std::ios::trunc);
    if (!out) throw kgprop::DataError("cannot open " + a.metrics_out + " for writing");
    out << doc.dump(2) << "\n";
  }
  return 0;
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
  DataFlags data;
  std::string checkpoint, out;
  std::string mode = "rep";
  std::string tie = "average";
  std::string split = "valid";
  std::vector<double> alphas = {0.98};
  int hops = 1;
  int threads = 1;
};

int64_t alpha_key(double alpha) {
  int64_t bits;
  std::memcpy(&bits, &alpha, sizeof(bits));
  return bits;
}

template <typename S>
int run_sweep(const SweepArgs& a, const kgprop::CheckpointHeader& header) {
  const kgprop::Dataset ds = load_data(a.data);
  auto [spec, store] = kgprop::load_checkpoint<S>(a.checkpoint);
  check_digests(header, ds);
  check_sizes(store, ds);
  const kgprop::KnowledgeGraph& split = a.split == "test" ? ds.test : ds.valid;
  if (split.triplets.empty()) {
    throw kgprop::DataError("the requested " + a.split + " split is empty");
  }
  const kgprop::AdjacencyIndex adj = kgprop::build_adjacency(ds.train);
  kgprop::KnownTripletSet filter(ds.train.num_entities, ds.train.num_relations);
  filter.insert_all(ds.union_all().triplets);
  kgprop::EvalOptions options;
  options.tie = kgprop::tie_policy_from_string(a.tie);
  options.threads = a.threads;
  const kgprop::PropagationMode mode = kgprop::propagation_mode_from_string(a.mode);

  // Finished (alpha, hop) pairs survive restarts through the output file.
  std::set<std::pair<int64_t, int>> done;
  bool has_file = fs::exists(a.out);
  if (has_file) {
    std::ifstream in(a.out);
    std::string line;
    while (std::getline(in, line)) {
      double alpha = 0, metrics[4] = {0, 0, 0, 0};
      int hop = 0;
      if (std::sscanf(line.c_str(), "%lf,%d,%lf,%lf,%lf,%lf", &alpha, &hop, &metrics[0],
                      &metrics[1], &metrics[2], &metrics[3]) == 6) {
        done.insert({alpha_key(alpha), hop});
      }
    }
  }
  std::ofstream csv(a.out, std::ios::app);
  if (!csv) throw kgprop::DataError("cannot open " + a.out + " for writing");
  if (!has_file) csv << "alpha,hop,mrr,hits1,hits3,hits10\n" << std::flush;

  auto record = [&](double alpha, int hop, const kgprop::EmbeddingStore<S>& cur) {
    if (done.count({alpha_key(alpha), hop})) {
      emit(json{{"event", "skip"}, {"alpha", alpha}, {"hop", hop}});
      return;
    }
    const kgprop::RankingReport report =
        kgprop::evaluate(spec, cur, std::span<const kgprop::Triplet>(split.triplets), &filter,
                         nullptr, options);
    char row[192];
    std::snprintf(row, sizeof(row), "%.17g,%d,%.17g,%.17g,%.17g,%.17g\n", alpha, hop,
                  report.combined.mrr, report.combined.hits1, report.combined.hits3,
                  report.combined.hits10);
    csv << row << std::flush;
    emit(json{{"event", "sweep"},
              {"alpha", alpha},
              {"hop", hop},
              {"mrr", report.combined.mrr},
              {"hits@1", report.combined.hits1},
              {"hits@3", report.combined.hits3},
              {"hits@10", report.combined.hits10}});
  };

  for (double alpha : a.alphas) {
    kgprop::EmbeddingStore<S> cur = store;
    record(alpha, 0, cur);
    kgprop::PropagationConfig cfg;
    cfg.alpha = alpha;
    cfg.hops = 1;
    cfg.mode = mode;
    cfg.threads = a.threads;
    for (int hop = 1; hop <= a.hops; ++hop) {
      cur = mode == kgprop::PropagationMode::Rep ? kgprop::propagate(cur, adj, spec, cfg)
                                                 : kgprop::propagate_ep(cur, adj, cfg);
      record(alpha, hop, cur);
    }
  }
  return 0;
}

// ---- verify -----------------------------------------------------------------

struct VerifyArgs {
  std::vector<std::string> properties;
  uint64_t seed = 7;
  double beta = 0.01;
  int pairs = 2000;
  int points = 200;
  bool list = false;
};

int run_verify(const VerifyArgs& a) {
  if (a.list) {
    for (const std::string& name : kgprop::verify::property_names()) {
      std::printf("%s\n", name.c_str());
    }
    return 0;
  }
  kgprop::verify::VerifyParams params;
  params.seed = a.seed;
  params.beta = a.beta;
  params.inversion_pairs = a.pairs;
  params.gradient_points = a.points;
  int failed = 0;
  for (const auto& r : kgprop::verify::run_properties(a.properties, params)) {
    emit(json{{"property", r.name}, {"pass", r.pass}, {"metric", r.metric}, {"detail", r.detail}});
    if (!r.pass) ++failed;
  }
  if (failed > 0) {
    std::fprintf(stderr, "%d propert%s failed\n", failed, failed == 1 ? "y" : "ies");
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph embeddings with relational context propagation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kgprop 1.0.0");
  // Repeated scalar flags keep the last value so wrapper scripts can append
  // overrides; list-valued flags opt back into accumulation below.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  const char* config_help = "Flat name=value file; command-line flags win";
  std::string train_config, prop_config, eval_config, sweep_config, verify_config;

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Fit embeddings with margin-ranking SGD");
  train_cmd->add_option("--config", train_config, config_help);
  add_data_flags(train_cmd, train_args.data);
  train_cmd->add_option("--out", train_args.out, "Checkpoint to write")->required();
  train_cmd->add_option("--model", train_args.model, "Score family")
      ->check(CLI::IsMember({"transe", "distmult", "rotate", "ote"}))
      ->capture_default_str();
  train_cmd->add_option("--dim", train_args.dim, "Entity dimension")->capture_default_str();
  train_cmd->add_option("--gamma", train_args.gamma, "Ranking margin")->capture_default_str();
  train_cmd->add_option("--norm", train_args.norm, "Distance norm")
      ->check(CLI::IsMember({"l1", "l2"}))
      ->capture_default_str();
  train_cmd->add_option("--ote-groups", train_args.ote_groups, "Block count for the ote family")
      ->capture_default_str();
  train_cmd->add_option("--lr", train_args.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", train_args.batch_size, "Positives per step")
      ->capture_default_str();
  train_cmd->add_option("--negatives", train_args.negatives, "Negatives per positive")
      ->capture_default_str();
  train_cmd->add_option("--negative-mode", train_args.negative_mode, "Side to corrupt")
      ->check(CLI::IsMember({"head", "tail", "both"}))
      ->capture_default_str();
  train_cmd->add_flag("--filtered-negatives", train_args.filtered_negatives,
                      "Resample negatives that hit known triplets");
  train_cmd->add_option("--negative-retry-bound", train_args.retry_bound,
                        "Resample attempts before giving up")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_args.epochs, "Passes over the training set")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_args.seed, "Deterministic seed")->capture_default_str();
  train_cmd->add_option("--threads", train_args.threads, "Worker threads (1 = bit-reproducible)")
      ->capture_default_str();
  train_cmd->add_flag("--norm-clip", train_args.norm_clip,
                      "Project updated entity rows onto the unit ball");
  train_cmd->add_option("--ckpt-fractions", train_args.fractions,
                        "Progress fractions that also write checkpoints")
      ->delimiter(',')
      ->take_all()
      ->capture_default_str();
  train_cmd->add_option("--precision", train_args.precision, "Stored float width")
      ->check(CLI::IsMember({"float32", "float64"}))
      ->capture_default_str();

  PropagateArgs prop_args;
  auto* prop_cmd =
      app.add_subcommand("propagate", "Blend entities with relational neighbor contexts");
  prop_cmd->add_option("--config", prop_config, config_help);
  add_data_flags(prop_cmd, prop_args.data);
  prop_cmd->add_option("--checkpoint", prop_args.checkpoint, "Input checkpoint")->required();
  prop_cmd->add_option("--out", prop_args.out, "Checkpoint to write")->required();
  prop_cmd->add_option("--alpha", prop_args.alpha, "Retained fraction per hop")
      ->capture_default_str();
  prop_cmd->add_option("--hops", prop_args.hops, "Adaptation hops")->capture_default_str();
  prop_cmd->add_option("--mode", prop_args.mode, "rep = relational, ep = raw neighbor mean")
      ->check(CLI::IsMember({"rep", "ep"}))
      ->capture_default_str();
  prop_cmd->add_option("--threads", prop_args.threads, "Worker threads")->capture_default_str();

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Rank link-prediction queries");
  eval_cmd->add_option("--config", eval_config, config_help);
  add_data_flags(eval_cmd, eval_args.data);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint to score")->required();
  eval_cmd->add_option("--protocol", eval_args.protocol, "Candidate source")
      ->check(CLI::IsMember({"filtered", "candidates"}))
      ->capture_default_str();
  eval_cmd->add_option("--candidate-file", eval_args.candidate_file,
                       "Per-triplet candidate labels (candidates protocol)");
  eval_cmd->add_option("--tie", eval_args.tie, "Tie policy")
      ->check(CLI::IsMember({"average", "optimistic", "pessimistic"}))
      ->capture_default_str();
  eval_cmd->add_option("--split", eval_args.split, "Evaluation split")
      ->check(CLI::IsMember({"valid", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--metrics-out", eval_args.metrics_out, "Also write the report here");
  eval_cmd->add_option("--threads", eval_args.threads, "Worker threads")->capture_default_str();

  SweepArgs sweep_args;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "Grid alpha x hops, evaluating each point into a CSV");
  sweep_cmd->add_option("--config", sweep_config, config_help);
  add_data_flags(sweep_cmd, sweep_args.data);
  sweep_cmd->add_option("--checkpoint", sweep_args.checkpoint, "Input checkpoint")->required();
  sweep_cmd->add_option("--out", sweep_args.out, "CSV to append finished points to")->required();
  sweep_cmd->add_option("--alphas", sweep_args.alphas, "Retained fractions to grid")
      ->delimiter(',')
      ->take_all()
      ->capture_default_str();
  sweep_cmd->add_option("--hops", sweep_args.hops, "Largest hop count")->capture_default_str();
  sweep_cmd->add_option("--mode", sweep_args.mode, "rep = relational, ep = raw neighbor mean")
      ->check(CLI::IsMember({"rep", "ep"}))
      ->capture_default_str();
  sweep_cmd->add_option("--split", sweep_args.split, "Evaluation split")
      ->check(CLI::IsMember({"valid", "test"}))
      ->capture_default_str();
  sweep_cmd->add_option("--tie", sweep_args.tie, "Tie policy")
      ->check(CLI::IsMember({"average", "optimistic", "pessimistic"}))
      ->capture_default_str();
  sweep_cmd->add_option("--threads", sweep_args.threads, "Worker threads")->capture_default_str();

  VerifyArgs verify_args;
  auto* verify_cmd =
      app.add_subcommand("verify", "Run executable property checks on synthetic graphs");
  verify_cmd->add_option("--config", verify_config, config_help);
  verify_cmd->add_option("--property", verify_args.properties,
                         "Property names (repeatable); empty runs everything")
      ->delimiter(',')
      ->take_all();
  verify_cmd->add_flag("--list", verify_args.list, "Print property names and exit");
  verify_cmd->add_option("--seed", verify_args.seed, "Deterministic seed")->capture_default_str();
  verify_cmd->add_option("--beta", verify_args.beta, "Descent rate for the equivalence check")
      ->capture_default_str();
  verify_cmd->add_option("--pairs", verify_args.pairs, "Inversion sample count")
      ->capture_default_str();
  verify_cmd->add_option("--points", verify_args.points, "Gradient-check sample count")
      ->capture_default_str();

  int rc = 0;
  train_cmd->callback([&] {
    if (!train_config.empty()) apply_config(train_cmd, train_config);
    rc = train_args.precision == "float64" ? run_train<double>(train_args)
                                           : run_train<float>(train_args);
  });
  prop_cmd->callback([&] {
    if (!prop_config.empty()) apply_config(prop_cmd, prop_config);
    const kgprop::CheckpointHeader header = kgprop::peek_checkpoint(prop_args.checkpoint);
    rc = header.float_width == 4 ? run_propagate<float>(prop_args, header)
                                 : run_propagate<double>(prop_args, header);
  });
  eval_cmd->callback([&] {
    if (!eval_config.empty()) apply_config(eval_cmd, eval_config);
    const kgprop::CheckpointHeader header = kgprop::peek_checkpoint(eval_args.checkpoint);
    rc = header.float_width == 4 ? run_evaluate<float>(eval_args, header)
                                 : run_evaluate<double>(eval_args, header);
  });
  sweep_cmd->callback([&] {
    if (!sweep_config.empty()) apply_config(sweep_cmd, sweep_config);
    const kgprop::CheckpointHeader header = kgprop::peek_checkpoint(sweep_args.checkpoint);
    rc = header.float_width == 4 ? run_sweep<float>(sweep_args, header)
                                 : run_sweep<double>(sweep_args, header);
  });
  verify_cmd->callback([&] {
    if (!verify_config.empty()) apply_config(verify_cmd, verify_config);
    rc = run_verify(verify_args);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return rc;
}
