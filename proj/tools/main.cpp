// foginv command-line front end. Every command is a pure function of
// (flags, config file, input files); exit codes: 0 ok, 2 config, 3 io,
// 4 training abort, 5 verification failure.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "foginv/config.hpp"
#include "foginv/errors.hpp"
#include "foginv/gradbattery.hpp"
#include "foginv/io.hpp"
#include "foginv/metrics.hpp"
#include "foginv/scenegen.hpp"
#include "foginv/segnet.hpp"
#include "foginv/trainer.hpp"

namespace fs = std::filesystem;

namespace {

using namespace foginv;

constexpr int kConfigExit = 2;
constexpr int kIoExit = 3;
constexpr int kAbortExit = 4;
constexpr int kVerifyExit = 5;

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw IoError("not a number: '" + s + "'");
  return v;
}

struct GenArgs {
  std::string config, out, seed;
};

int run_gen_data(const CLI::App& cmd, const GenArgs& a) {
  RunConfig cfg;
  if (cmd.count("--config") > 0) cfg.load_file(a.config);
  if (cmd.count("--out") > 0) cfg.set("data_root", a.out);
  if (cmd.count("--seed") > 0) cfg.set("master_seed", a.seed);
  cfg.validate();

  build_dataset(cfg.dataset_config());

  const Dataset data(cfg.data_root);
  std::size_t total = 0;
  std::cout << "dataset " << cfg.data_root << ":";
  for (const char* split : {"train", "eval"}) {
    for (const char* domain : {"CW", "SF", "RF"}) {
      if (!data.has(split, domain)) continue;
      const std::size_t n = data.rows(split, domain).size();
      total += n;
      std::cout << ' ' << split << '/' << domain << ' ' << n;
    }
  }
  std::cout << " total " << total << '\n';
  return 0;
}

struct TrainArgs {
  std::string config, data, out, fsm_direction, lambda_fsm, lambda_con, beta,
      taps, seed;
};

int run_train(const CLI::App& cmd, const TrainArgs& a) {
  // Flag override > config file > built-in default. Values stay strings
  // until RunConfig::set so flags and file lines share one parse error path.
  RunConfig cfg;
  if (cmd.count("--config") > 0) cfg.load_file(a.config);
  struct Override {
    const char* flag;
    const char* key;
    const std::string* value;
  };
  const Override overrides[] = {
      {"--data", "data_root", &a.data},
      {"--fsm-direction", "fsm_direction", &a.fsm_direction},
      {"--lambda-fsm", "lambda_fsm", &a.lambda_fsm},
      {"--lambda-con", "lambda_con", &a.lambda_con},
      {"--beta", "beta", &a.beta},
      {"--taps", "tap_layers", &a.taps},
      {"--seed", "master_seed", &a.seed},
  };
  for (const auto& [flag, key, value] : overrides) {
    if (cmd.count(flag) > 0) cfg.set(key, *value);
  }
  cfg.validate();

  const Dataset data(cfg.data_root);
  Trainer trainer(cfg, data);
  trainer.train(a.out);

  const auto& log = trainer.log();
  std::cout << "trained " << cfg.total_iters << " iterations";
  if (!log.empty()) {
    const TrainLogRow& last = log.back();
    std::cout << " (final ce " << format_double(last.seg_ce) << ", total "
              << format_double(last.total) << ")";
  }
  std::cout << " -> " << a.out << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, split = "eval", out;
};

int run_eval(const CLI::App& cmd, const EvalArgs& a) {
  const SegNetwork net = SegNetwork::load(a.checkpoint);
  const Dataset data(a.data);
  const std::vector<SplitEval> evals = evaluate_split(net, data, a.split);
  if (evals.empty())
    throw IoError("split '" + a.split + "' not found under " + a.data);

  // stdout mirrors the CSV cell strings exactly, so the file parses back to
  // the printed numbers.
  std::vector<std::vector<std::string>> rows;
  for (const SplitEval& ev : evals) {
    std::cout << ev.domain << ": " << ev.images << " images\n";
    for (std::size_t c = 0; c < ev.res.per_class.size(); ++c) {
      if (!ev.res.present[c]) continue;
      rows.push_back({ev.domain, std::to_string(c),
                      format_double(ev.res.per_class[c])});
    }
    rows.push_back({ev.domain, "mean", format_double(ev.res.mean)});
  }
  for (const auto& r : rows)
    std::cout << "  " << r[0] << ' ' << r[1] << ' ' << r[2] << '\n';

  const fs::path out = cmd.count("--out") > 0
                           ? fs::path(a.out)
                           : fs::path(a.checkpoint) / ("eval_" + a.split + ".csv");
  write_csv(out, {"domain", "class", "iou"}, rows);
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

struct AnalyzeArgs {
  std::string checkpoint, baseline, data, filters, out = "analysis";
};

int run_analyze(const CLI::App& cmd, const AnalyzeArgs& a) {
  AnalyzeOptions opts;
  opts.checkpoint = a.checkpoint;
  opts.baseline = fs::path(a.baseline);
  opts.data_root = a.data;
  opts.out_dir = a.out;
  if (cmd.count("--filters") > 0) opts.filter_dir = fs::path(a.filters);
  analyze(opts);

  // Paired report straight from the emitted CSV; run ids appear in row order,
  // checkpoint first, baseline second.
  const auto csv = read_csv(fs::path(a.out) / "analysis.csv");
  std::vector<std::string> run_ids;
  std::vector<std::pair<std::string, std::string>> order;  // (metric, key)
  std::map<std::pair<std::string, std::string>,
           std::map<std::string, std::string>>
      table;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    const auto& row = csv[i];
    if (std::find(run_ids.begin(), run_ids.end(), row[0]) == run_ids.end())
      run_ids.push_back(row[0]);
    const auto cell = std::make_pair(row[1], row[2]);
    if (table.find(cell) == table.end()) order.push_back(cell);
    table[cell][row[0]] = row[3];
  }
  if (run_ids.size() != 2)
    throw IoError("analysis.csv: expected exactly two run ids");

  std::cout << "analysis: " << run_ids[0] << " vs " << run_ids[1]
            << " (baseline)\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %-8s %13s %13s %13s", "metric",
                "key", "final", "baseline", "delta");
  std::cout << line << '\n';
  for (const auto& cell : order) {
    const auto& per_run = table.at(cell);
    const std::string& v0 = per_run.at(run_ids[0]);
    const std::string& v1 = per_run.at(run_ids[1]);
    const double delta = parse_double(v0) - parse_double(v1);
    std::snprintf(line, sizeof line, "%-26s %-8s %13s %13s %13s",
                  cell.first.c_str(), cell.second.c_str(), v0.c_str(),
                  v1.c_str(), format_double(delta).c_str());
    std::cout << line << '\n';
  }
  std::cout << "wrote " << (fs::path(a.out) / "analysis.csv").string() << '\n';
  return 0;
}

struct GradArgs {
  std::string scale = "small";
  std::uint64_t seed = 1;
};

int run_grad_check(const GradArgs& a) {
  const CheckScale scale = parse_check_scale(a.scale);
  const CheckReport report = run_grad_checks(scale, a.seed);
  print_report(std::cout, report);
  if (!report.all_passed()) {
    std::string failing;
    for (const CheckCase& c : report.cases) {
      if (c.max_rel_error >= report.tolerance) {
        if (!failing.empty()) failing += ", ";
        failing += c.name;
      }
    }
    throw VerifyError("gradient check failed: " + failing);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "foginv: procedural foggy-scene segmentation workbench\n"
      "data generation, training, evaluation and diagnostics"};
  app.require_subcommand(1);

  GenArgs ga;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate the three-domain dataset (clear / synthetic fog / "
                  "heterogeneous fog)");
  gen->add_option("--config", ga.config, "run config file");
  gen->add_option("--out", ga.out, "dataset root (overrides data_root)");
  gen->add_option("--seed", ga.seed, "master seed override");

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Run the three-phase trainer");
  train->add_option("--config", ta.config, "run config file");
  train->add_option("--data", ta.data, "dataset root (overrides data_root)");
  train->add_option("--out", ta.out, "checkpoint directory")->required();
  train->add_option("--fsm-direction", ta.fsm_direction,
                    "bidirectional | fog_to_clear | clear_to_fog");
  train->add_option("--lambda-fsm", ta.lambda_fsm,
                    "style matching loss weight");
  train->add_option("--lambda-con", ta.lambda_con,
                    "prediction consistency loss weight");
  train->add_option("--beta", ta.beta, "synthetic fog attenuation");
  train->add_option("--taps", ta.taps, "comma list of tap layers, e.g. C1,R1");
  train->add_option("--seed", ta.seed, "master seed override");

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "Per-class IoU on a split");
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint directory")
      ->required();
  eval->add_option("--data", ea.data, "dataset root")->required();
  eval->add_option("--split", ea.split, "split name (default eval)");
  eval->add_option("--out", ea.out,
                   "CSV path (default <checkpoint>/eval_<split>.csv)");

  AnalyzeArgs aa;
  CLI::App* ana = app.add_subcommand(
      "analyze", "Paired fog-factor / clustering / gap report");
  ana->add_option("--checkpoint", aa.checkpoint, "run under analysis")
      ->required();
  ana->add_option("--baseline", aa.baseline, "reference run")->required();
  ana->add_option("--data", aa.data, "dataset root")->required();
  ana->add_option("--filters", aa.filters,
                  "fog-pass filter directory to use for both runs");
  ana->add_option("--out", aa.out, "report directory (default analysis)");

  GradArgs ra;
  CLI::App* grad =
      app.add_subcommand("grad-check", "Finite-difference gradient battery");
  grad->add_option("--scale", ra.scale, "micro | small (default small)")
      ->check(CLI::IsMember({"micro", "small"}));
  grad->add_option("--seed", ra.seed, "battery master seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (gen->parsed()) return run_gen_data(*gen, ga);
    if (train->parsed()) return run_train(*train, ta);
    if (eval->parsed()) return run_eval(*eval, ea);
    if (ana->parsed()) return run_analyze(*ana, aa);
    if (grad->parsed()) return run_grad_check(ra);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const TrainAbort& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kAbortExit;
  } catch (const VerifyError& e) {
    std::cerr << "verification failed: " << e.what() << '\n';
    return kVerifyExit;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIoExit;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIoExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
