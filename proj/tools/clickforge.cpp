// clickforge command-line front end.

#include "clickforge/annoserve.hpp"
#include "clickforge/checkpoint.hpp"
#include "clickforge/evalbench.hpp"
#include "clickforge/image_io.hpp"
#include "clickforge/trainer.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace clickforge;

namespace {

std::vector<double> parse_targets(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = std::stod(item, &used);
    if (used != item.size()) throw InvalidArgument("bad target '" + item + "'");
    out.push_back(v > 1.0 ? v / 100.0 : v);
  }
  if (out.empty()) throw InvalidArgument("no targets given");
  return out;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  write_file_atomic(path, Bytes(text.begin(), text.end()));
}

struct AdaptFlags {
  std::string mode = "local";
  double lr_adm = AdaptConfig{}.lr_adm;
  double lr_bsm = AdaptConfig{}.lr_bsm;
  int steps = AdaptConfig{}.steps_per_click;
  std::string optimizer = to_string(AdaptConfig{}.optimizer);
  std::string step_log;

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "Adaptation mode")->check(CLI::IsMember({"off", "local", "global"}));
    app->add_option("--lr-adm", lr_adm, "ADM adaptation learning rate");
    app->add_option("--lr-bsm", lr_bsm, "BSM adaptation learning rate (global mode)");
    app->add_option("--steps", steps, "Adaptation steps per click");
    app->add_option("--adapt-optimizer", optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
    app->add_option("--step-log", step_log, "Append per-step loss records (TSV) to this file");
  }

  AdaptConfig config() const {
    AdaptConfig c;
    c.mode = parse_adapt_mode(mode);
    c.lr_adm = lr_adm;
    c.lr_bsm = lr_bsm;
    c.steps_per_click = steps;
    c.optimizer = parse_optimizer_kind(optimizer);
    for (const auto& w : c.warnings()) std::cerr << "warning: " << w << '\n';
    return c;
  }
};

struct EvalFlags {
  std::string targets = "85,90";
  int cap = 20;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--targets", targets, "Target IoUs, percent or fraction, comma separated");
    app->add_option("--cap", cap, "Maximum clicks per image");
    app->add_option("--seed", seed, "Seed recorded in the report");
  }

  EvalConfig config() const {
    EvalConfig c;
    c.targets = parse_targets(targets);
    c.cap = cap;
    c.seed = seed;
    return c;
  }
};

HttpFrontend* g_frontend = nullptr;

void on_signal(int) {
  if (g_frontend) g_frontend->stop();
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Click-driven interactive segmentation with test-time adaptation"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  std::string gen_kind = "source", gen_out;
  int gen_count = 100, gen_size = 64;
  std::uint64_t gen_seed = 0;
  gen->add_option("--kind", gen_kind, "source, shifted or changed")->check(CLI::IsMember({"source", "shifted", "changed"}));
  gen->add_option("--count", gen_count, "Number of images");
  gen->add_option("--size", gen_size, "Image height and width");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Two-phase offline training");
  std::string train_data, train_out, train_phase = "both", train_init, train_optimizer = "adam", train_log;
  TrainConfig tc;
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--phase", train_phase, "bsm, adm or both")->check(CLI::IsMember({"bsm", "adm", "both"}));
  train->add_option("--out", train_out, "Output checkpoint")->required();
  train->add_option("--init", train_init, "Checkpoint holding the phase-1 BSM (required for --phase adm)");
  train->add_option("--seed", tc.seed, "Training seed");
  train->add_option("--epochs", tc.epochs, "Epochs per phase");
  train->add_option("--batch", tc.batch_size, "Batch size");
  train->add_option("--lr-bsm", tc.lr_bsm, "Phase-1 learning rate");
  train->add_option("--lr-adm", tc.lr_adm, "Phase-2 learning rate");
  train->add_option("--optimizer", train_optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
  train->add_option("--log", train_log, "Also write the training log to this file");

  // noc-eval
  auto* noc = app.add_subcommand("noc-eval", "Number-of-clicks evaluation");
  std::string noc_ckpt, noc_data, noc_out, noc_csv;
  int noc_kmax = 20;
  AdaptFlags noc_adapt;
  EvalFlags noc_eval_flags;
  noc->add_option("--ckpt", noc_ckpt, "Checkpoint")->required();
  noc->add_option("--data", noc_data, "Dataset directory")->required();
  noc->add_option("--out", noc_out, "Report path (JSON); '-' for stdout");
  noc->add_option("--miou-csv", noc_csv, "Also write an mIoU@k curve (separate run) as CSV");
  noc->add_option("--k-max", noc_kmax, "Curve length for --miou-csv");
  noc_adapt.add(noc);
  noc_eval_flags.add(noc);

  // forget-eval
  auto* forget = app.add_subcommand("forget-eval", "Forgetting protocol: baseline, adapt, re-evaluate");
  std::string fg_ckpt, fg_adapt, fg_eval, fg_out;
  AdaptFlags fg_adapt_flags;
  fg_adapt_flags.mode = "global";
  EvalFlags fg_eval_flags;
  forget->add_option("--ckpt", fg_ckpt, "Checkpoint")->required();
  forget->add_option("--adapt", fg_adapt, "Dataset adapted on")->required();
  forget->add_option("--eval", fg_eval, "Dataset evaluated before and after")->required();
  forget->add_option("--out", fg_out, "Report path (JSON); '-' for stdout");
  fg_adapt_flags.add(forget);
  fg_eval_flags.add(forget);

  // ablation
  auto* abl = app.add_subcommand("ablation", "ADM x Optim grid");
  std::string abl_ckpt, abl_data, abl_out;
  AdaptFlags abl_adapt;
  EvalFlags abl_eval;
  abl->add_option("--ckpt", abl_ckpt, "Checkpoint")->required();
  abl->add_option("--data", abl_data, "Dataset directory")->required();
  abl->add_option("--out", abl_out, "Report path (JSON); '-' for stdout");
  abl_adapt.add(abl);
  abl_eval.add(abl);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the annotation service");
  std::string serve_config;
  serve->add_option("--config", serve_config, "key = value config file (CLICKFORGE_* env vars override)");

  // init
  auto* init = app.add_subcommand("init", "Write a freshly initialized checkpoint");
  std::string init_out;
  init->add_option("--out", init_out, "Output checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const ModelConfig model;
    if (*gen) {
      DomainSpec spec;
      spec.kind = parse_domain_kind(gen_kind);
      spec.height = spec.width = gen_size;
      spec.seed = gen_seed;
      save_dataset(generate_dataset(spec, gen_count), gen_out);
    } else if (*init) {
      save_checkpoint(init_params<Real>(model), init_out);
    } else if (*train) {
      tc.optimizer = parse_optimizer_kind(train_optimizer);
      const Dataset data = load_dataset(train_data);
      std::ofstream log_file;
      TrainLog log;
      log.sink = &std::cout;
      ParamSet<Real> params;
      if (train_phase == "adm") {
        if (train_init.empty()) throw InvalidArgument("--phase adm needs --init <phase-1 checkpoint>");
        params = train_adm(data, load_checkpoint(train_init, model), tc, model, &log);
      } else {
        params = train_bsm(data, tc, model, &log);
        if (train_phase == "both") params = train_adm(data, params, tc, model, &log);
      }
      save_checkpoint(params, train_out);
      if (!train_log.empty()) {
        log_file.open(train_log);
        for (const auto& r : log.epochs)
          log_file << (r.phase == TrainPhase::kBsm ? "bsm" : "adm") << '\t' << r.epoch << '\t' << r.mean_loss << '\t'
                   << r.seconds << '\n';
      }
    } else if (*noc) {
      const ParamSet<Real> params = load_checkpoint(noc_ckpt, model);
      const Dataset data = load_dataset(noc_data);
      const AdaptConfig adapt = noc_adapt.config();
      const EvalConfig ec = noc_eval_flags.config();
      std::ofstream step_log;
      EnginePredictor engine(params, model, adapt);
      if (!noc_adapt.step_log.empty()) {
        step_log.open(noc_adapt.step_log, std::ios::app);
        engine.set_step_log(&step_log);
      }
      NoCReport report = noc_eval(engine, data, ec);
      report.mode = to_string(adapt.mode);
      write_json(noc_out, to_json(report));
      if (!noc_csv.empty()) {
        EnginePredictor fresh(params, model, adapt);
        std::ostringstream csv;
        write_miou_csv(csv, miou_curve(fresh, data, noc_kmax));
        const std::string text = csv.str();
        write_file_atomic(noc_csv, Bytes(text.begin(), text.end()));
      }
    } else if (*forget) {
      const ParamSet<Real> params = load_checkpoint(fg_ckpt, model);
      const DecayReport report = forgetting_protocol(params, model, load_dataset(fg_adapt), load_dataset(fg_eval),
                                                     fg_adapt_flags.config(), fg_eval_flags.config());
      write_json(fg_out, to_json(report));
    } else if (*abl) {
      const ParamSet<Real> params = load_checkpoint(abl_ckpt, model);
      write_json(abl_out, to_json(ablation_grid(params, model, load_dataset(abl_data), abl_adapt.config(),
                                                abl_eval.config())));
    } else if (*serve) {
      const std::optional<std::filesystem::path> file =
          serve_config.empty() ? std::nullopt : std::optional<std::filesystem::path>(serve_config);
      ServiceConfig cfg = load_service_config(file, [](const char* name) { return std::getenv(name); });
      AnnotationService service(cfg, model);
      HttpFrontend frontend(service);
      const int port = frontend.bind(cfg.host, cfg.port);
      g_frontend = &frontend;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "clickforge: serving checkpoint v" << service.checkpoint_version() << " on " << cfg.host << ':'
                << port << '\n';
      frontend.run();
      g_frontend = nullptr;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
