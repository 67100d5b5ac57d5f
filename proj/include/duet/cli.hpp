#pragma once
// Command line front end: run, eval, parse, serve.
// Exit codes: 0 success, 1 usage or input error, 2 runtime failure.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "duet/agents.hpp"
#include "duet/eval.hpp"
#include "duet/heuristic.hpp"
#include "duet/refine.hpp"
#include "duet/remote.hpp"
#include "duet/service.hpp"
#include "duet/stats.hpp"
#include "duet/table.hpp"

namespace duet {

inline constexpr std::string_view kGrammarHelp =
    "sequence grammar:\n"
    "  sequence := expr (',' expr)*\n"
    "  expr     := term (('+' | '-') term)*\n"
    "  term     := factor (('*' | '/') factor)*\n"
    "  factor   := FEATURE | OPNAME '(' expr ')' | '(' expr ')'\n"
    "  FEATURE  := f1, f2, ...   OPNAME := log sqrt square abs reciprocal sin cos tanh\n"
    "no numeric constants, no unary minus; example: (f1*f2),log(f3),(f4/f5)\n";

struct BackendOptions {
  std::string kind = "heuristic";
  std::string record;  // replay source, or where to copy the transcript
  std::string config;  // JSON config file
};

struct FileConfig {
  RemoteConfig remote;
  AgentConfig agent;
};

inline FileConfig load_config(const std::string& path) {
  FileConfig fc;
  fc.remote.api_key = RemoteConfig::key_from_env();
  if (path.empty()) return fc;
  auto j = nlohmann::json::parse(read_file(path));
  fc.remote.model = j.value("model", fc.remote.model);
  fc.remote.base_url = j.value("base_url", fc.remote.base_url);
  fc.remote.retries = j.value("retries", fc.remote.retries);
  fc.remote.timeout_s = j.value("timeout_s", fc.remote.timeout_s);
  fc.agent.temperature_critic = j.value("temperature_critic", fc.agent.temperature_critic);
  fc.agent.temperature_generator = j.value("temperature_generator", fc.agent.temperature_generator);
  fc.agent.max_tokens = j.value("max_tokens", fc.agent.max_tokens);
  return fc;
}

inline std::unique_ptr<ChatBackend> make_backend(const BackendOptions& opt, const FileConfig& fc) {
  if (opt.kind == "heuristic") return std::make_unique<HeuristicBackend>();
  if (opt.kind == "replay") {
    if (opt.record.empty()) throw std::invalid_argument("--backend replay needs --record <transcript.jsonl>");
    return std::make_unique<ReplayBackend>(Transcript::load(opt.record));
  }
  if (opt.kind == "remote") {
    if (fc.remote.api_key.empty()) throw std::invalid_argument("--backend remote needs DUET_API_KEY in the environment");
    return std::make_unique<RemoteHttpBackend>(fc.remote);
  }
  throw std::invalid_argument("unknown backend '" + opt.kind + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(trim(item));
  }
  return out;
}

// Prints the offending line with a caret under the error position.
inline void print_parse_error(std::ostream& err, const std::string& where, const std::string& line,
                              const ParseError& e) {
  err << where << ": error at offset " << e.position() << ": " << e.message() << "\n";
  err << "  " << line << "\n  " << std::string(e.position(), ' ') << "^\n";
}

namespace cli {

inline int cmd_parse(const std::string& file, const std::string& expr, const std::string& out_path, std::ostream& out,
                     std::ostream& err) {
  std::vector<std::pair<std::string, std::string>> lines;  // (where, text)
  if (!expr.empty()) {
    lines.emplace_back("<expr>", expr);
  } else {
    std::istringstream in(read_file(file));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      lines.emplace_back(file + ":" + std::to_string(n), line);
    }
  }
  std::string canonical;
  bool failed = false;
  const auto ops = OperatorSet::standard();
  for (const auto& [where, text] : lines) {
    try {
      canonical += render(parse(text, ops)) + "\n";
    } catch (const ParseError& e) {
      print_parse_error(err, where, text, e);
      failed = true;
    }
  }
  if (failed) {
    err << kGrammarHelp;
    return 1;
  }
  if (out_path.empty()) {
    out << canonical;
  } else {
    write_text(out_path, canonical);
  }
  return 0;
}

struct RunArgs {
  std::string data, meta, out_dir = "out";
  std::size_t iterations = 3, k_max = 10;
  double budget = 4.0;
  std::uint64_t seed = 0;
  std::string ops;
  bool dump_stats = false;
  BackendOptions backend;
};

inline int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  FileConfig fc = load_config(a.backend.config);
  LoadedDataset ds = load_csv(a.data, a.meta);
  OperatorSet ops = a.ops.empty() ? OperatorSet::standard() : OperatorSet::from_names(split_list(a.ops));
  LoopConfig cfg;
  cfg.iterations = a.iterations;
  cfg.k_max = a.k_max;
  cfg.budget_multiplier = a.budget;
  cfg.seed = a.seed;
  cfg.agent = fc.agent;
  cfg.validate();
  auto backend = make_backend(a.backend, fc);
  RunResult result;
  int code = 0;
  try {
    result = run(ds.table, ds.meta, ops, cfg, *backend);
  } catch (const RunAborted& e) {
    err << "run aborted: " << e.what() << "\n";
    result = e.partial();
    code = 2;
  }
  LabelColumn labels{ds.meta.target_name, &ds.labels, &ds.class_names};
  write_run_outputs(result, a.out_dir, labels);
  std::filesystem::path dir(a.out_dir);
  write_text((dir / "timing.json").string(), to_json(timing_profile(result)).dump(2) + "\n");
  if (a.dump_stats) {
    nlohmann::json j{{"original", to_json(summarize(ds.table), &ds.table)},
                     {"transformed", to_json(summarize(result.table), &result.table)}};
    write_text((dir / "stats.json").string(), j.dump(2) + "\n");
  }
  if (!a.backend.record.empty() && a.backend.kind != "replay") result.transcript.save(a.backend.record);
  for (const auto& it : result.iterations) {
    out << "round " << it.index << ": proposed " << (it.proposed ? render(*it.proposed) : "(skipped: " + it.skipped + ")")
        << " accepted " << it.accepted.size() << ", columns now " << it.cols_after << "\n";
  }
  out << "wrote " << (dir / "transformed.csv").string() << " (" << result.table.cols() << " features, "
      << result.table.rows() << " rows)\n";
  return code;
}

struct EvalArgs {
  std::string original, transformed, labels_from, models = "dt,rf,knn", seeds = "0,1,2,3,4", report;
  double test_fraction = 0.25;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  DatasetMeta meta = load_meta(a.labels_from);
  LoadedDataset orig = load_csv_text(read_file(a.original), meta);
  LoadedDataset trans = load_csv_text(read_file(a.transformed), meta);
  if (orig.labels.size() != trans.labels.size()) {
    throw DataError(DataError::Kind::schema, "original and transformed tables differ in row count");
  }
  for (std::size_t i = 0; i < orig.labels.size(); ++i) {
    if (orig.class_names[static_cast<std::size_t>(orig.labels[i])] !=
        trans.class_names[static_cast<std::size_t>(trans.labels[i])]) {
      throw DataError(DataError::Kind::schema, "label mismatch at row " + std::to_string(i + 1));
    }
  }
  std::vector<ClassifierSpec> specs;
  for (const auto& m : split_list(a.models)) {
    ClassifierSpec s;
    s.kind = kind_from_name(m);
    specs.push_back(s);
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(a.seeds)) seeds.push_back(std::stoull(s));
  EvalReport report = compare(orig.table, trans.table, orig.labels, specs, seeds, a.test_fraction);
  out << to_text(report);
  if (!a.report.empty()) write_text(a.report, to_json(report).dump(2) + "\n");
  return 0;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::string snapshot;
  BackendOptions backend;
};

inline std::atomic<httplib::Server*> g_server{nullptr};

inline int cmd_serve(const ServeArgs& a, std::ostream& out) {
  FileConfig fc = load_config(a.backend.config);
  make_backend(a.backend, fc);  // fail fast on bad backend options
  ServiceConfig sc;
  sc.loop.agent = fc.agent;
  SessionService service([opt = a.backend, fc] { return make_backend(opt, fc); }, sc);
  if (!a.snapshot.empty() && std::filesystem::exists(a.snapshot)) {
    service.restore(nlohmann::json::parse(read_file(a.snapshot)));
  }
  httplib::Server server;
  mount(server, service);
  if (!a.static_dir.empty() && !server.set_mount_point("/", a.static_dir)) {
    throw std::invalid_argument("static directory '" + a.static_dir + "' not found");
  }
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  out << "serving on http://" << a.host << ":" << a.port << std::endl;
  bool ok = server.listen(a.host, a.port);
  g_server = nullptr;
  if (!a.snapshot.empty()) write_text(a.snapshot, service.snapshot().dump() + "\n");
  return ok ? 0 : 2;
}

}  // namespace cli

inline int cli_run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"duet: critic/generator feature transformation"};
  app.require_subcommand(1);

  auto add_backend = [](CLI::App* cmd, BackendOptions& b) {
    cmd->add_option("--backend", b.kind, "chat backend")->check(CLI::IsMember({"remote", "replay", "heuristic"}));
    cmd->add_option("--record", b.record, "transcript: replay source, or copy destination for other backends");
    cmd->add_option("--config", b.config, "JSON config (model, base_url, temperatures, max_tokens, retries)");
  };

  cli::RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "automatic critic/generator rounds");
  run_cmd->add_option("--data", run_args.data, "CSV with header")->required();
  run_cmd->add_option("--meta", run_args.meta, "JSON metadata")->required();
  run_cmd->add_option("--iterations", run_args.iterations)->check(CLI::PositiveNumber);
  run_cmd->add_option("--k-max", run_args.k_max, "max new features per round")->check(CLI::PositiveNumber);
  run_cmd->add_option("--budget", run_args.budget, "max columns as a multiple of the original count");
  run_cmd->add_option("--out-dir", run_args.out_dir);
  run_cmd->add_option("--seed", run_args.seed);
  run_cmd->add_option("--ops", run_args.ops, "comma separated operator names");
  run_cmd->add_flag("--dump-stats", run_args.dump_stats, "write stats.json");
  add_backend(run_cmd, run_args.backend);

  cli::EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "compare downstream accuracy, original vs transformed");
  eval_cmd->add_option("--original", eval_args.original)->required();
  eval_cmd->add_option("--transformed", eval_args.transformed)->required();
  eval_cmd->add_option("--labels-from", eval_args.labels_from, "metadata JSON naming the target column")->required();
  eval_cmd->add_option("--models", eval_args.models, "comma separated: dt, rf, knn");
  eval_cmd->add_option("--seeds", eval_args.seeds, "comma separated split/forest seeds");
  eval_cmd->add_option("--test-fraction", eval_args.test_fraction);
  eval_cmd->add_option("--report", eval_args.report, "write the JSON report here");

  std::string parse_file, parse_expr_text, parse_out;
  auto* parse_cmd = app.add_subcommand("parse", "validate and canonicalize a .fts file");
  parse_cmd->add_option("file", parse_file, ".fts file, one sequence per line");
  parse_cmd->add_option("--expr", parse_expr_text, "a single sequence given inline");
  parse_cmd->add_option("--out", parse_out, "write canonical lines here instead of stdout");

  cli::ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP session service");
  serve_cmd->add_option("--host", serve_args.host);
  serve_cmd->add_option("--port", serve_args.port);
  serve_cmd->add_option("--static-dir", serve_args.static_dir, "serve UI assets from this directory");
  serve_cmd->add_option("--snapshot", serve_args.snapshot, "session snapshot file (loaded at start, written at exit)");
  add_backend(serve_cmd, serve_args.backend);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    if (parse_cmd->parsed()) err << kGrammarHelp;
    return 1;
  }

  try {
    if (parse_cmd->parsed()) {
      if (parse_file.empty() == parse_expr_text.empty()) {
        err << "parse: give exactly one of FILE or --expr\n" << kGrammarHelp;
        return 1;
      }
      return cli::cmd_parse(parse_file, parse_expr_text, parse_out, out, err);
    }
    if (run_cmd->parsed()) return cli::cmd_run(run_args, out, err);
    if (eval_cmd->parsed()) return cli::cmd_eval(eval_args, out);
    if (serve_cmd->parsed()) return cli::cmd_serve(serve_args, out);
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == DataError::Kind::io ? 2 : 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace duet
