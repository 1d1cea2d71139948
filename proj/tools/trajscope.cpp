// trajscope command line: one subcommand per pipeline stage plus `run`.
//
// Exit codes: 0 ok, 1 other failure, 2 validation error, 3 stale artifact.

#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trajscope.hpp"

namespace {

trajscope::AnnotationService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace trajscope;

  CLI::App app{"Trajectory clustering, classification and anomaly detection pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string run_dir = "run";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool force = false;
  bool quiet = false;
  app.add_option("--config", config_path, "configuration file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override the seed key");
  app.add_option("--run-dir", run_dir, "artifact directory")->capture_default_str();
  app.add_option("--set", overrides, "override a key: --set vae_epochs=50");
  app.add_flag("--force", force, "use upstream artifacts even when they are stale");
  app.add_flag("-q,--quiet", quiet, "no progress output");

  std::map<std::string, CLI::App*> stage_cmds;
  for (const auto& s : stage_names()) {
    if (s == "annotate") continue;
    stage_cmds[s] = app.add_subcommand(s, "run the " + s + " stage");
  }
  stage_cmds["synth"]->alias("ingest");

  auto* annotate = app.add_subcommand("annotate", "label clusters: from ground truth, a labels file, or over HTTP");
  std::string labels_file;
  bool auto_mode = false;
  bool serve = false;
  std::optional<std::string> host;
  std::optional<int> port;
  auto* labels_opt = annotate->add_option("--labels", labels_file, "labels file")->check(CLI::ExistingFile);
  auto* auto_opt = annotate->add_flag("--auto", auto_mode, "majority ground-truth label per cluster");
  auto* serve_opt = annotate->add_flag("--serve", serve, "start the annotation HTTP service");
  labels_opt->excludes(auto_opt)->excludes(serve_opt);
  auto_opt->excludes(serve_opt);
  annotate->add_option("--host", host, "service address");
  annotate->add_option("--port", port, "service port");

  auto* run = app.add_subcommand("run", "run a range of stages, skipping those already current");
  std::string from = "synth";
  std::string to = "eval";
  run->add_option("--from", from, "first stage")->check(CLI::IsMember(stage_names()));
  run->add_option("--to", to, "last stage")->check(CLI::IsMember(stage_names()));

  auto* show = app.add_subcommand("config", "print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Config cfg = config_path.empty() ? Config() : Config::load(config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + o + "'");
      cfg.set(std::string(detail::trim(o.substr(0, eq))), std::string(detail::trim(o.substr(eq + 1))));
    }
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (*labels_opt) {
      cfg.set("annotate_mode", "file");
      cfg.set("labels_file", labels_file);
    }
    if (auto_mode) cfg.set("annotate_mode", "auto");
    if (serve) cfg.set("annotate_mode", "serve");
    if (host) cfg.set("http_host", *host);
    if (port) cfg.set("http_port", std::to_string(*port));

    if (show->parsed()) {
      std::cout << cfg.to_text();
      return 0;
    }

    Pipeline::Log log;
    if (!quiet) log = [](const std::string& m) { std::cerr << m << "\n"; };
    Pipeline pipeline(run_dir, cfg, log);

    if (run->parsed()) {
      pipeline.run(from, to, force);
    } else if (annotate->parsed()) {
      if (cfg.get("annotate_mode") == "serve") {
        AnnotationService service(run_dir, cfg);
        const auto bound = service.bind(cfg.get("http_host"), static_cast<int>(cfg.count("http_port")));
        std::cerr << "annotation service on http://" << cfg.get("http_host") << ":" << bound << "\n";
        g_service = &service;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        service.listen();
        g_service = nullptr;
      } else {
        pipeline.run_stage("annotate", force);
      }
    } else {
      for (const auto& [name, cmd] : stage_cmds) {
        if (cmd->parsed()) pipeline.run_stage(name, force);
      }
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const StaleArtifactError& e) {
    std::cerr << "stale: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
