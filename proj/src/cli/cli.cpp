#include "scz/cli.hpp"

#include <CLI11.hpp>
#include <signal.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "scz/error.hpp"
#include "scz/harness.hpp"
#include "scz/image_io.hpp"
#include "scz/service.hpp"

namespace scz {
namespace {

namespace fs = std::filesystem;

struct Globals {
  std::optional<std::uint64_t> seed;
  bool deterministic = true;
  bool paper_split = false;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io_error, "cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(Errc::io_error, "cannot write " + path.string());
  return f;
}

std::string with_suffix(const std::string& source_id, const std::string& suffix) {
  const fs::path p(source_id);
  return (p.parent_path() / (p.stem().string() + suffix + ".png")).generic_string();
}

std::string transform_suffix(const Provenance& p) {
  switch (p.transform) {
    case Transform::original: return "";
    case Transform::shear: return "_shear";
    case Transform::hflip: return "_hflip";
  }
  return "";
}

std::vector<ManifestRecord> records_for(const std::vector<LabeledItem>& items, const std::string& split) {
  std::vector<ManifestRecord> out;
  for (const auto& it : items) out.push_back({it.source_id, it.label, it.provenance, split, it.source_id});
  return out;
}

std::vector<ManifestRecord> split_records(const DatasetSplit& s) {
  std::vector<ManifestRecord> out = records_for(s.train, "train");
  for (auto& r : records_for(s.validation, "validation")) out.push_back(std::move(r));
  for (auto& r : records_for(s.test, "test")) out.push_back(std::move(r));
  return out;
}

TrainConfig load_train_config(const std::optional<fs::path>& path, const Globals& g) {
  TrainConfig cfg = path ? TrainConfig::from_kv(KeyValues::read(*path)) : TrainConfig{};
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.augment.seed = *g.seed;
  }
  cfg.deterministic = g.deterministic;
  return cfg;
}

void print_prediction(std::ostream& out, const Prediction& p) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", p.p_patient);
  out << "p_patient\t" << buf << "\nlabel\t" << to_string(p.label) << '\n';
}

// Blocks SIGINT/SIGTERM in this thread (and threads it spawns) and stops the
// service from a watcher thread once one arrives.
int serve_until_signal(Service& svc, std::ostream& out) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  const int port = svc.bind();
  out << "listening on http://" << svc.config().bind_address << ':' << port << " model "
      << to_string(svc.model().arch()) << ' ' << svc.checksum() << std::endl;
  std::thread watcher([&svc, set] {
    int sig = 0;
    sigwait(&set, &sig);
    svc.stop();
  });
  svc.listen();
  // listen() can also end without a signal (socket error); wake the watcher.
  pthread_kill(watcher.native_handle(), SIGTERM);
  watcher.join();
  out << "stopped" << std::endl;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Loop-handwriting screening toolkit: data, training, evaluation and inference", "scz"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random stream")->check(CLI::NonNegativeNumber);
  app.add_flag("--deterministic,!--no-deterministic", g.deterministic,
               "Sequential, bit-reproducible execution (default on)");
  app.add_flag("--paper-split", g.paper_split, "Split augmented images individually instead of by source image");

  std::function<int()> action;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled loop dataset");
  fs::path synth_out;
  int per_class = 120;
  std::optional<fs::path> synth_cfg;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--per-class", per_class, "Images per class")->check(CLI::PositiveNumber);
  synth->add_option("--config", synth_cfg, "Synthesis config (key = value)")->check(CLI::ExistingFile);
  synth->callback([&] {
    action = [&] {
      SynthConfig cfg = synth_cfg ? SynthConfig::from_kv(KeyValues::read(*synth_cfg)) : SynthConfig{};
      if (!synth_cfg || synth->count("--per-class")) cfg.count_per_class = per_class;
      if (g.seed) cfg.seed = *g.seed;
      const auto items = synth_generate(cfg);
      save_items(items, synth_out);
      cfg.to_kv().write(synth_out / "synth.cfg");
      write_manifest(records_for(items, "none"), synth_out / "manifest.tsv");
      out << "wrote " << items.size() << " images to " << synth_out.string() << '\n';
      return kExitOk;
    };
  });

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "Crop, center, LoG-filter and normalize a labeled dataset");
  fs::path prep_in, prep_out;
  std::optional<fs::path> prep_cfg;
  prep->add_option("--data", prep_in, "Labeled dataset root")->required()->check(CLI::ExistingDirectory);
  prep->add_option("--out", prep_out, "Output directory")->required();
  prep->add_option("--config", prep_cfg, "Preprocess config")->check(CLI::ExistingFile);
  prep->callback([&] {
    action = [&] {
      const PreprocessConfig cfg = prep_cfg ? PreprocessConfig::read(*prep_cfg) : PreprocessConfig{};
      auto items = preprocess_items(load_dir(prep_in), cfg);
      for (auto& it : items) it.source_id = with_suffix(it.source_id, "");
      save_items(items, prep_out);
      cfg.to_kv().write(prep_out / "preprocess.cfg");
      write_manifest(records_for(items, "none"), prep_out / "manifest.tsv");
      out << "preprocessed " << items.size() << " images into " << prep_out.string() << '\n';
      return kExitOk;
    };
  });

  // augment
  auto* aug = app.add_subcommand("augment", "Write original, sheared and flipped copies of a labeled dataset");
  fs::path aug_in, aug_out;
  std::optional<fs::path> aug_cfg;
  aug->add_option("--data", aug_in, "Labeled dataset root")->required()->check(CLI::ExistingDirectory);
  aug->add_option("--out", aug_out, "Output directory")->required();
  aug->add_option("--config", aug_cfg, "Augmentation config")->check(CLI::ExistingFile);
  aug->callback([&] {
    action = [&] {
      AugmentConfig cfg = aug_cfg ? AugmentConfig::from_kv(KeyValues::read(*aug_cfg)) : AugmentConfig{};
      if (g.seed) cfg.seed = *g.seed;
      const auto items = augment_items(load_dir(aug_in), cfg);
      std::vector<ManifestRecord> records;
      for (const auto& it : items) {
        const std::string path = with_suffix(it.source_id, transform_suffix(it.provenance));
        ensure_dir((aug_out / path).parent_path());
        save_image(it.image, aug_out / path);
        records.push_back({it.source_id, it.label, it.provenance, "none", path});
      }
      cfg.to_kv().write(aug_out / "augment.cfg");
      write_manifest(records, aug_out / "manifest.tsv");
      out << "wrote " << items.size() << " images to " << aug_out.string() << '\n';
      return kExitOk;
    };
  });

  // split
  auto* split = app.add_subcommand("split", "Augment and split a labeled dataset 80/10/10, writing a manifest");
  fs::path split_in, split_manifest;
  std::optional<fs::path> split_cfg;
  split->add_option("--data", split_in, "Labeled dataset root")->required()->check(CLI::ExistingDirectory);
  split->add_option("--out", split_manifest, "Manifest file to write")->required();
  split->add_option("--config", split_cfg, "Train config (seed and augmentation settings)")->check(CLI::ExistingFile);
  split->callback([&] {
    action = [&] {
      const TrainConfig cfg = load_train_config(split_cfg, g);
      const auto items = augment_items(load_dir(split_in), cfg.augment);
      const DatasetSplit s = stratified_split(items, {}, cfg.seed, !g.paper_split);
      auto records = split_records(s);
      // Paths are relative to the manifest's directory.
      const fs::path rel = fs::relative(fs::absolute(split_in), fs::absolute(split_manifest).parent_path());
      for (auto& r : records) r.path = (rel / r.path).generic_string();
      write_manifest(records, split_manifest);
      out << "train " << s.train.size() << " validation " << s.validation.size() << " test " << s.test.size()
          << '\n';
      return kExitOk;
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one architecture and evaluate it on the held-out test split");
  std::string train_arch;
  fs::path train_data, train_out = "run";
  std::optional<fs::path> train_cfg;
  std::optional<int> epochs, patience;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  train_cmd->add_option("--arch", train_arch, "custom_cnn | mini_inception | mini_effnet");
  train_cmd->add_option("--data", train_data, "Labeled dataset root")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", train_out, "Run directory for model, history, metrics and logs");
  train_cmd->add_option("--config", train_cfg, "Train config")->check(CLI::ExistingFile);
  train_cmd->add_option("--epochs", epochs, "Maximum epochs");
  train_cmd->add_option("--patience", patience, "Early-stopping patience in epochs");
  train_cmd->add_option("--batch-size", batch, "Mini-batch size");
  train_cmd->add_option("--lr", lr, "Adam learning rate");
  train_cmd->callback([&] {
    action = [&] {
      TrainConfig cfg = load_train_config(train_cfg, g);
      if (!train_arch.empty()) cfg.arch = parse_arch(train_arch);
      if (epochs) cfg.max_epochs = *epochs;
      if (patience) cfg.early_stop_patience = *patience;
      if (epochs && !patience) cfg.early_stop_patience = std::min(cfg.early_stop_patience, cfg.max_epochs);
      if (batch) cfg.batch_size = *batch;
      if (lr) cfg.learning_rate = *lr;
      cfg.validate();
      const DatasetSplit s = prepare_split(load_dir(train_data), cfg, !g.paper_split);
      ensure_dir(train_out);
      cfg.to_kv().write(train_out / "train.cfg");
      write_manifest(split_records(s), train_out / "manifest.tsv");
      TrainResult r = train(cfg, s, [&](const EpochRecord& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %3d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f\n", e.epoch,
                      e.train_loss, e.train_acc, e.val_loss, e.val_acc);
        out << buf << std::flush;
      });
      const std::uint32_t crc = save_model(r.model, train_out / "model.sczm");
      write_history(r.history, train_out / "history.tsv");
      const Evaluation ev = evaluate(r.model, s.test);
      auto log = open_out(train_out / "predictions.tsv");
      write_prediction_log(ev.log, log);
      const std::string metrics = format_metrics(ev.metrics);
      open_out(train_out / "metrics.txt") << metrics;
      out << "best epoch " << r.history.best_epoch << ", model " << checksum_hex(crc) << '\n' << metrics;
      return kExitOk;
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a labeled dataset");
  fs::path eval_model, eval_data;
  std::optional<fs::path> eval_log, eval_pre;
  eval->add_option("--model", eval_model, "Model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Labeled dataset root")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--log", eval_log, "Write the per-item prediction log here");
  eval->add_option("--preprocess", eval_pre, "Preprocess config")->check(CLI::ExistingFile);
  eval->callback([&] {
    action = [&] {
      const LoadedModel m = load_model(eval_model);
      const PreprocessConfig pre = resolve_preprocess(m.model, eval_pre);
      const Evaluation ev = evaluate(m.model, preprocess_items(load_dir(eval_data), pre));
      if (eval_log) {
        auto f = open_out(*eval_log);
        write_prediction_log(ev.log, f);
      }
      out << format_metrics(ev.metrics);
      return kExitOk;
    };
  });

  // compare
  auto* cmp = app.add_subcommand("compare", "Train several architectures on the same split and rank them");
  fs::path cmp_data;
  std::optional<fs::path> cmp_out, cmp_cfg;
  std::vector<std::string> cmp_archs{"custom_cnn", "mini_inception", "mini_effnet"};
  std::optional<int> cmp_epochs;
  cmp->add_option("--data", cmp_data, "Labeled dataset root")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("--archs", cmp_archs, "Architectures to compare")->delimiter(',');
  cmp->add_option("--out", cmp_out, "Write the comparison table here");
  cmp->add_option("--config", cmp_cfg, "Train config")->check(CLI::ExistingFile);
  cmp->add_option("--epochs", cmp_epochs, "Maximum epochs");
  cmp->callback([&] {
    action = [&] {
      TrainConfig cfg = load_train_config(cmp_cfg, g);
      if (cmp_epochs) {
        cfg.max_epochs = *cmp_epochs;
        cfg.early_stop_patience = std::min(cfg.early_stop_patience, cfg.max_epochs);
      }
      std::vector<ArchId> archs;
      for (const auto& a : cmp_archs) archs.push_back(parse_arch(a));
      const DatasetSplit s = prepare_split(load_dir(cmp_data), cfg, !g.paper_split);
      const auto rows = compare(archs, cfg, s, [&](ArchId a, const EpochRecord& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s epoch %d val_acc %.4f\n", std::string(to_string(a)).c_str(), e.epoch,
                      e.val_acc);
        out << buf << std::flush;
      });
      const std::string table = format_compare_table(rows);
      if (cmp_out) open_out(*cmp_out) << table;
      out << table;
      return kExitOk;
    };
  });

  // predict
  auto* pred = app.add_subcommand("predict", "Score one image");
  fs::path pred_model, pred_image;
  std::optional<fs::path> pred_pre;
  bool pred_json = false;
  pred->add_option("--model", pred_model, "Model file")->required()->check(CLI::ExistingFile);
  pred->add_option("image", pred_image, "PNG or PGM image")->required()->check(CLI::ExistingFile);
  pred->add_option("--preprocess", pred_pre, "Preprocess config")->check(CLI::ExistingFile);
  pred->add_flag("--json", pred_json, "Print the service's JSON response body");
  pred->callback([&] {
    action = [&] {
      const LoadedModel m = load_model(pred_model);
      const PreprocessConfig pre = resolve_preprocess(m.model, pred_pre);
      const auto bytes = read_file_bytes(pred_image);
      const Prediction p = predict_image_bytes(m.model, bytes, pre);
      if (pred_json) {
        out << to_json(PredictResponse{p.p_patient, p.label, m.model.arch(), checksum_hex(m.checksum), pre}) << '\n';
      } else {
        print_prediction(out, p);
      }
      return kExitOk;
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  ServiceConfig svc_cfg;
  std::optional<fs::path> svc_pre;
  serve->add_option("--model", svc_cfg.model_path, "Model file")->required();
  serve->add_option("--bind", svc_cfg.bind_address, "Address to bind (default loopback)");
  serve->add_option("--port", svc_cfg.port, "Port, 0 for any free one")->check(CLI::Range(0, 65535));
  serve->add_option("--max-upload", svc_cfg.max_upload_bytes, "Upload size limit in bytes");
  serve->add_option("--preprocess", svc_pre, "Preprocess config");
  serve->add_option("--timeout", svc_cfg.request_timeout_s, "Request read/write timeout in seconds");
  serve->add_option("--cors-origin", svc_cfg.cors_origin, "Value of Access-Control-Allow-Origin");
  serve->callback([&] {
    action = [&] {
      svc_cfg.preprocess_config_path = svc_pre;
      Service svc(svc_cfg);
      return serve_until_signal(svc, out);
    };
  });

  std::vector<std::string> rest(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error\tbad_usage\t" << e.what() << '\n' << app.help();
    return kExitUsage;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    return action ? action() : kExitUsage;
  } catch (const Error& e) {
    err << "error\t" << to_string(e.code()) << '\t' << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error\tinternal\t" << e.what() << '\n';
  }
  return kExitFailure;
}

}  // namespace scz
