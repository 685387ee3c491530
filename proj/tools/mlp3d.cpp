// mlp3d command line: count, verify, train, search, eval.
//
// Exit codes: 0 success, 1 failed verification, 2 usage or schema error,
// 3 non-finite loss, 4 any other runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "mlp3d/checkpoint.hpp"
#include "mlp3d/config_io.hpp"
#include "mlp3d/errors.hpp"
#include "mlp3d/kernels.hpp"
#include "mlp3d/search.hpp"
#include "mlp3d/synthdata.hpp"
#include "mlp3d/train.hpp"
#include "mlp3d/verify.hpp"

namespace fs = std::filesystem;
using namespace mlp3d;

namespace {

constexpr int kExitVerify = 1, kExitUsage = 2, kExitDiverged = 3, kExitRuntime = 4;

struct DivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::array<std::size_t, 3> parse_geometry(const std::string& text) {
  std::array<std::size_t, 3> g{};
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  if (!(in >> g[0] >> x1 >> g[1] >> x2 >> g[2]) || x1 != 'x' || x2 != 'x' || !in.eof())
    throw ConfigError("geometry must look like HxWxT, got '" + text + "'");
  return g;
}

// ---- count ---------------------------------------------------------------

struct CountArgs {
  std::string spec_file, variant, geometry;
  std::size_t classes = 174;
};

Json cost_json(const NetworkSpec& spec) {
  const CostReport r = cost_report(spec);
  Json stages = Json::array(), blocks = Json::array(), transitions = Json::array();
  for (std::size_t s = 0; s < kStages; ++s) {
    const auto g = spec.stage_geometry(s);
    stages.push_back({{"stage", s + 1},
                      {"grid", {g.height, g.width, g.time}},
                      {"channels", g.channels},
                      {"params", r.stage_params[s]},
                      {"macs", r.stage_macs[s]}});
  }
  for (std::size_t s = 0; s + 1 < kStages; ++s)
    transitions.push_back({{"after_stage", s + 1}, {"params", r.transition_params[s]}, {"macs", r.transition_macs[s]}});
  for (const auto& b : r.blocks)
    blocks.push_back({{"stage", b.stage + 1},
                      {"block", b.index + 1},
                      {"gtm", gtm_to_json(b.gtm)},
                      {"params", b.params},
                      {"macs", b.macs},
                      {"gtm_params", b.gtm_params},
                      {"gtm_macs", b.gtm_macs}});
  return {{"name", spec.name},
          {"geometry", {spec.height, spec.width, spec.time}},
          {"params", r.params},
          {"macs", r.macs},
          {"embed", {{"params", r.embed_params}, {"macs", r.embed_macs}}},
          {"per_stage", stages},
          {"transitions", transitions},
          {"head", {{"params", r.head_params}, {"macs", r.head_macs}}},
          {"per_block", blocks}};
}

int run_count(const CountArgs& a) {
  if (a.spec_file.empty() == a.variant.empty()) {
    std::cerr << "count: give exactly one of --spec or --variant\n";
    return kExitUsage;
  }
  NetworkSpec spec;
  if (!a.variant.empty()) {
    const auto g = parse_geometry(a.geometry.empty() ? "128x128x64" : a.geometry);
    spec = make_variant(a.variant, g[0], g[1], g[2], a.classes);
  } else {
    Json doc = read_json_file(a.spec_file);
    if (!a.geometry.empty()) {
      const auto g = parse_geometry(a.geometry);
      doc["height"] = g[0];
      doc["width"] = g[1];
      doc["time"] = g[2];
    }
    spec = spec_from_json(doc);
  }
  std::cout << cost_json(spec).dump(2) << '\n';
  return 0;
}

// ---- verify --------------------------------------------------------------

struct VerifyArgs {
  std::string suite = "all";
  bool fault = false;
  std::uint64_t seed = 0;
};

int run_verify(const VerifyArgs& a) {
  const SuiteOptions opt{a.seed, a.fault};
  std::vector<CheckResult> results;
  auto take = [&](std::vector<CheckResult> r) { results.insert(results.end(), r.begin(), r.end()); };
  if (a.suite == "oracle" || a.suite == "all") {
    take(oracle_suite(opt));
    take(permutation_suite(opt));
  }
  if (a.suite == "grad" || a.suite == "all") take(grad_suite(opt));
  if (a.suite == "init" || a.suite == "all") take(init_suite(opt));
  for (const auto& r : results) std::cout << format_result(r) << '\n';
  const bool ok = all_passed(results);
  std::cout << (ok ? "all checks passed" : "some checks FAILED") << " (" << results.size() << " checks)\n";
  return ok ? 0 : kExitVerify;
}

// ---- shared run configuration ---------------------------------------------

struct RunArgs {
  std::string config, out_dir = "run", checkpoint;
  std::optional<std::uint64_t> seed;
  std::string split = "val";
};

struct RunConfig {
  NetworkSpec spec;
  TrainConfig train;
  SynthConfig data;
  SearchSpace space;
  std::size_t search_val_size = 0;  // 0 uses the whole validation split
  std::size_t eval_batch = 32;
  double init_stddev = 0.02;
  std::string cache_dir;
};

RunConfig load_run_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  const Json j = read_json_file(path);
  require_keys(j, {"spec", "train", "data", "space", "search", "init_stddev", "cache_dir"}, "run config");
  if (!j.contains("spec")) throw ConfigError("run config: missing key 'spec'");
  RunConfig rc;
  rc.data = synth_from_json(j.value("data", Json::object()));
  Json spec_doc = j["spec"];
  // Geometry and class count follow the data unless the spec names them.
  for (auto [key, v] : {std::pair{"height", rc.data.height}, {"width", rc.data.width}, {"time", rc.data.time},
                        {"num_classes", kSynthClasses}})
    if (!spec_doc.contains(key)) spec_doc[key] = v;
  rc.spec = spec_from_json(spec_doc);
  rc.train = train_from_json(j.value("train", Json::object()));
  if (seed) rc.train.seed = *seed;
  rc.space = space_from_json(j.value("space", Json::object()));
  if (j.contains("search")) {
    const Json& s = j["search"];
    require_keys(s, {"val_size", "eval_batch"}, "search settings");
    rc.search_val_size = s.value("val_size", std::size_t{0});
    rc.eval_batch = s.value("eval_batch", std::size_t{32});
  }
  rc.init_stddev = j.value("init_stddev", 0.02);
  rc.cache_dir = j.value("cache_dir", std::string{});
  if (rc.spec.height != rc.data.height || rc.spec.width != rc.data.width || rc.spec.time != rc.data.time)
    throw ConfigError("run config: spec geometry does not match the data geometry");
  if (rc.spec.num_classes != kSynthClasses) throw ConfigError("run config: synthetic tasks have 4 classes");
  return rc;
}

SynthSplits load_data(const RunConfig& rc) {
  if (rc.cache_dir.empty()) return generate(rc.data);
  return generate_cached(rc.data, rc.cache_dir);
}

void log_epoch(const EpochRecord& r) {
  spdlog::info("epoch {:3d}  loss {:.4f}  val {:.2f}%  lr {:.3e}", r.epoch, r.train_loss, r.val_acc, r.lr);
}

// ---- train ----------------------------------------------------------------

template <class Real>
int train_with(const RunConfig& rc, const fs::path& out) {
  const SynthSplits data = load_data(rc);
  std::mt19937_64 rng(rc.train.seed);
  auto params = init_params<Real>(rc.spec, rng, {.stddev = rc.init_stddev});
  auto model = make_classifier(rc.spec, params);
  TrainHooks<Real> hooks;
  hooks.on_epoch = log_epoch;
  const TrainResult r = train_model(model, data.train, data.val, rc.train, hooks);
  fs::create_directories(out);
  write_trace_csv(out / "trace.csv", r.trace);
  if (r.diverged) throw DivergedError(r.message);
  save_checkpoint(out / "checkpoint.bin", rc.spec, params);
  write_json_file(out / "spec.json", spec_to_json(rc.spec));
  std::cout << Json{{"final_val_acc", r.trace.back().val_acc}, {"epochs", r.trace.size()},
                    {"checkpoint", (out / "checkpoint.bin").string()}}
                   .dump()
            << '\n';
  return 0;
}

int run_train(const RunArgs& a) {
  const RunConfig rc = load_run_config(a.config, a.seed);
  return rc.train.precision == Precision::f64 ? train_with<double>(rc, a.out_dir) : train_with<float>(rc, a.out_dir);
}

// ---- search ---------------------------------------------------------------

template <class Real>
int search_with(const RunConfig& rc, const fs::path& out) {
  const SynthSplits data = load_data(rc);
  std::mt19937_64 rng(rc.train.seed);
  auto net = make_supernet<Real>(rc.spec, rc.space, rng, rc.init_stddev);
  spdlog::info("supernet: {} blocks x {} candidates", net.candidates.size(), net.candidates.front().size());
  const TrainResult pre = pretrain_supernet(net, data.train, data.val, rc.train, log_epoch);
  fs::create_directories(out);
  write_trace_csv(out / "pretrain_trace.csv", pre.trace);
  if (pre.diverged) throw DivergedError(pre.message);
  save_checkpoint(out / "supernet.bin", net.spec, net.params);

  const Dataset val = rc.search_val_size == 0 ? data.val : data.val.slice(0, rc.search_val_size);
  const SearchResult res = greedy_search(net.candidates, make_estimator(net, val, rc.eval_batch), rc.space, rc.train.seed);
  write_search_trace(out / "search_trace.jsonl", res.trace);
  NetworkSpec best = rc.spec;
  best.gtm_per_block = res.architecture;
  write_json_file(out / "best_spec.json", spec_to_json(best));

  Json arch = Json::array();
  for (const auto& g : res.architecture) arch.push_back(gtm_to_json(g));
  std::cout << Json{{"architecture", arch},
                    {"best_repeat", res.best_repeat},
                    {"repeat_scores", res.repeat_scores},
                    {"gmacs", static_cast<double>(count_flops(best)) * 1e-9}}
                   .dump()
            << '\n';
  return 0;
}

int run_search(const RunArgs& a) {
  const RunConfig rc = load_run_config(a.config, a.seed);
  return rc.train.precision == Precision::f64 ? search_with<double>(rc, a.out_dir) : search_with<float>(rc, a.out_dir);
}

// ---- eval -----------------------------------------------------------------

template <class Real>
int eval_with(const RunConfig& rc, const std::string& checkpoint, const std::string& split) {
  auto ck = load_checkpoint<Real>(checkpoint);
  const SynthSplits data = load_data(rc);
  const Classifier<Real> model = make_classifier(ck.spec, ck.params);
  const Dataset& d = split == "train" ? data.train : data.val;
  const double top1 = evaluate_accuracy(model, d, rc.train.batch_size);
  std::cout << Json{{"split", split}, {"clips", d.size()}, {"top1", top1}}.dump() << '\n';
  return 0;
}

int run_eval(const RunArgs& a) {
  const RunConfig rc = load_run_config(a.config, std::nullopt);
  const Json manifest = read_checkpoint_manifest(a.checkpoint);
  return manifest.value("dtype", "f32") == "f64" ? eval_with<double>(rc, a.checkpoint, a.split)
                                                  : eval_with<float>(rc, a.checkpoint, a.split);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MLP-3D video classifier toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker cap for the parallel kernels (default: MLP3D_THREADS or 1)")
      ->check(CLI::NonNegativeNumber);
  spdlog::set_pattern("[%H:%M:%S] %v");

  CountArgs count;
  auto* c = app.add_subcommand("count", "Print parameter and MAC counts as JSON");
  auto* spec_opt = c->add_option("--spec", count.spec_file, "Network spec JSON file");
  auto* variant_opt = c->add_option("--variant", count.variant, "XS, S, M, L or micro");
  spec_opt->excludes(variant_opt);
  c->add_option("--geometry", count.geometry, "Input HxWxT, e.g. 64x64x16");
  c->add_option("--classes", count.classes, "Number of classes for --variant");

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Run self-check suites");
  v->add_option("--suite", verify.suite)->check(CLI::IsMember({"oracle", "grad", "init", "all"}));
  v->add_flag("--fault", verify.fault, "Corrupt weights on purpose; every check should fail");
  v->add_option("--seed", verify.seed);

  RunArgs train, search, eval;
  auto* t = app.add_subcommand("train", "Train a network on a synthetic task");
  t->add_option("--config", train.config, "Run config JSON")->required();
  t->add_option("--out", train.out_dir, "Output directory");
  t->add_option("--seed", train.seed, "Overrides train.seed");
  auto* s = app.add_subcommand("search", "Supernet training and greedy search");
  s->add_option("--config", search.config, "Run config JSON")->required();
  s->add_option("--out", search.out_dir, "Output directory");
  s->add_option("--seed", search.seed, "Overrides train.seed");
  auto* e = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
  e->add_option("--config", eval.config, "Run config JSON (data and batch size)")->required();
  e->add_option("--checkpoint", eval.checkpoint)->required();
  e->add_option("--split", eval.split)->check(CLI::IsMember({"train", "val"}));
  e->add_option("--seed", eval.seed, "Accepted for uniformity; evaluation is deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }
  if (threads > 0) kernels::set_num_threads(threads);

  try {
    if (c->parsed()) return run_count(count);
    if (v->parsed()) return run_verify(verify);
    if (t->parsed()) return run_train(train);
    if (s->parsed()) return run_search(search);
    if (e->parsed()) return run_eval(eval);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const DivergedError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
