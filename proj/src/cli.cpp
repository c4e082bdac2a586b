#include "crispedge/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "crispedge/config.hpp"
#include "crispedge/data.hpp"
#include "crispedge/errors.hpp"
#include "crispedge/gradsuite.hpp"
#include "crispedge/io.hpp"
#include "crispedge/parallel.hpp"
#include "crispedge/trainer.hpp"

namespace fs = std::filesystem;

namespace crispedge {

namespace {

/// Options every subcommand accepts, plus flags bound to config keys.
struct Invocation {
  std::string config_file;
  std::vector<std::string> sets;
  bool show_config = false;
  std::vector<std::string> prefixes;
  std::deque<std::string> storage;
  std::vector<std::pair<CLI::Option*, std::string>> bound;

  void flag(CLI::App* app, const std::string& name, const std::string& key) {
    const auto& keys = config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.key == key; });
    storage.emplace_back();
    bound.emplace_back(app->add_option(name, storage.back(), it->doc + " [" + key + "]"), key);
  }

  Config resolve() const {
    Config c;
    if (!config_file.empty()) c.merge_file(config_file);
    for (const std::string& s : sets) c.merge_assignment(s, "--set");
    for (const auto& [opt, key] : bound) {
      if (opt->count() > 0) c.set(key, opt->as<std::string>(), "flag");
    }
    return c;
  }
};

int to_int(const Config& c, const std::string& key, long lo) {
  const long v = c.get_int(key);
  if (v < lo || v > 1'000'000'000) throw ConfigError(key + " must be >= " + std::to_string(lo));
  return static_cast<int>(v);
}

int jobs_of(const Config& c) { return to_int(c, "jobs", 1); }

NetworkTopology topology_of(const Config& c, int input_channels) {
  return NetworkTopology::parse(input_channels, c.get("net.stages"), c.get("net.refine"));
}

TrainConfig train_config_of(const Config& c) {
  TrainConfig t;
  t.epochs = to_int(c, "train.epochs", 0);
  t.batch_size = to_int(c, "train.batch_size", 1);
  t.mode = parse_loss_mode(c.get("train.loss"));
  t.kappa = c.get_double("train.kappa");
  t.tau = c.get_double("train.tau");
  t.weight_floor = c.get_double("train.weight_floor");
  t.optimizer.learning_rate = c.get_double("train.lr");
  t.optimizer.momentum = c.get_double("train.momentum");
  t.optimizer.weight_decay = c.get_double("train.weight_decay");
  t.optimizer.lr_decay = c.get_double("train.lr_decay");
  t.lr_decay_epochs = c.get_ints("train.lr_decay_epochs");
  t.seed = c.get_u64("seed");
  t.loss.zeta = c.get_double("loss.zeta");
  t.loss.epsilon = c.get_double("loss.epsilon");
  t.loss.clamp = c.get_double("loss.clamp");
  t.eval_fraction = c.get_double("eval.max_dist_fraction");
  t.eval_thresholds = to_int(c, "eval.thresholds", 1);
  t.jobs = jobs_of(c);
  t.validate();
  return t;
}

std::vector<Sample> select_split(std::vector<Sample> samples, const std::string& split) {
  if (split == "all") return samples;
  std::erase_if(samples, [&](const Sample& s) { return s.split != split; });
  return samples;
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

template <typename F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

int input_channels_of(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ContractError("the manifest lists no samples");
  return samples.front().image.shape().c;
}

// Subcommands. Each returns an exit code; errors propagate as exceptions.

int cmd_gen(const Config& c, const std::string& out_dir, std::ostream& out) {
  GenConfig g;
  g.count = to_int(c, "gen.count", 1);
  g.height = to_int(c, "gen.height", 1);
  g.width = to_int(c, "gen.width", 1);
  g.channels = to_int(c, "gen.channels", 1);
  g.annotators = to_int(c, "gen.annotators", 1);
  g.jitter = c.get_double("gen.jitter");
  g.seed = c.get_u64("seed");
  g.holdout_percent = to_int(c, "gen.holdout_percent", 0);
  g.jobs = jobs_of(c);
  try {
    g.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  const std::vector<Sample> samples = gen_synthetic(g);
  const fs::path manifest = save_dataset(out_dir, samples);
  const auto [train, test] = partition(samples);
  out << "wrote " << samples.size() << " samples (" << train.size() << " train, " << test.size()
      << " test) to " << manifest.string() << '\n';
  return exit_ok;
}

int cmd_train(const Config& c, const std::string& data, const std::string& out_dir, std::ostream& out) {
  const TrainConfig tc = train_config_of(c);
  const std::vector<Sample> samples = load_dataset(data);
  const NetworkTopology topo = topology_of(c, input_channels_of(samples));
  const auto [train_set, held_out] = partition(samples);
  const TrainResult r = train(train_set, held_out, topo, tc);

  const fs::path dir(out_dir);
  write_crb(pack_parameters(r.net), dir / "params.crb");
  write_text(dir / "network.cfg", c.format({"net."}));
  write_text(dir / "loss_trace.csv", render([&](std::ostream& os) { write_loss_trace(os, r.report); }));
  out << "trained " << train_set.size() << " samples for " << tc.epochs << " epochs (" << loss_mode_name(tc.mode)
      << ")\n";
  if (r.report.held_out) {
    const std::string block = render([&](std::ostream& os) { write_score_block(os, *r.report.held_out); });
    write_text(dir / "scores.txt", block);
    out << "held-out " << held_out.size() << " samples:\n" << block;
  }
  return exit_ok;
}

MicroDrnet load_model(const fs::path& model_dir, const Config& base, int input_channels) {
  Config c = base;
  c.merge_file(model_dir / "network.cfg");
  MicroDrnet net(topology_of(c, input_channels), 0);
  unpack_parameters(net, read_crb(model_dir / "params.crb"));
  return net;
}

fs::path relative_to(const fs::path& target, const fs::path& dir) {
  return fs::absolute(target).lexically_normal().lexically_relative(fs::absolute(dir).lexically_normal());
}

int cmd_infer(const Config& c, const std::string& model, const std::string& data, const std::string& out_dir,
              const std::string& split, std::ostream& out) {
  ScaleSet scales{c.get_doubles("infer.scales")};
  try {
    scales.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("infer.scales: ") + e.what());
  }
  const int jobs = jobs_of(c);
  const Manifest source = Manifest::read(data);
  const std::vector<Sample> all = load_dataset(data);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (split == "all" || all[i].split == split) keep.push_back(i);
  }
  const MicroDrnet net = load_model(model, c, input_channels_of(all));
  const bool single = scales.scales.size() == 1 && scales.scales[0] == 1.0;

  std::vector<ProbabilityMap> maps(keep.size());
  parallel_for(keep.size(), jobs, [&](std::size_t k) {
    MicroDrnet local = net;
    const Tensor& image = all[keep[k]].image;
    maps[k] = single ? predict(local, image) : predict_multiscale(local, image, scales);
  });

  const fs::path dir(out_dir);
  const fs::path base = fs::path(data).parent_path();
  Manifest m;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const ManifestEntry& src = source.entries[keep[k]];
    const std::string rel = "maps/" + src.id + ".crb";
    write_crb(to_tensor(maps[k]), dir / rel);
    ManifestEntry e{src.id, rel, {}, src.split};
    for (const std::string& a : src.annotations) {
      const fs::path p(a);
      e.annotations.push_back(p.is_absolute() ? a : relative_to(base / p, dir).generic_string());
    }
    m.entries.push_back(std::move(e));
  }
  m.write(dir / "manifest.tsv");
  out << "wrote " << keep.size() << " maps to " << (dir / "manifest.tsv").string() << '\n';
  return exit_ok;
}

ProbabilityMap probability_map_of(const Sample& s) {
  const Shape sh = s.image.shape();
  if (sh.c != 1) throw ShapeError(s.id + ": prediction must have one channel");
  ProbabilityMap p(sh.h, sh.w);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = s.image[i];
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(s.id + ": prediction value outside [0, 1]");
    p[i] = v;
  }
  return p;
}

std::string tolerance_text(double lo, double hi) {
  auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return std::string(buf);
  };
  return lo == hi ? f(lo) : f(lo) + ".." + f(hi);
}

int cmd_eval(const Config& c, const std::string& predictions, const std::string& out_dir, const std::string& split,
             std::ostream& out) {
  const double fraction = c.get_double("eval.max_dist_fraction");
  if (!(fraction > 0.0)) throw ConfigError("eval.max_dist_fraction must be > 0");
  const EvalOptions options{to_int(c, "eval.thresholds", 1), jobs_of(c)};
  const std::vector<Sample> samples = select_split(load_dataset(predictions), split);
  if (samples.empty()) throw ContractError("no predictions to evaluate");

  std::vector<ProbabilityMap> preds;
  std::vector<AnnotationSet> anns;
  double lo = 1e300, hi = 0.0;
  for (const Sample& s : samples) {
    preds.push_back(probability_map_of(s));
    anns.push_back(s.annotations);
    const double d0 = tolerance_pixels(s.image.shape().h, s.image.shape().w, fraction);
    lo = std::min(lo, d0);
    hi = std::max(hi, d0);
  }
  const CriteriaReport report = eval_criteria(preds, anns, fraction, options);
  const std::string block = render([&](std::ostream& os) { write_score_block(os, report); });
  out << "d0 = " << tolerance_text(lo, hi) << " px, d0/4 = " << tolerance_text(lo / 4, hi / 4) << " px\n" << block;
  if (!out_dir.empty()) {
    const fs::path dir(out_dir);
    write_text(dir / "scores.txt", block);
    for (Criterion cr : {Criterion::correctness, Criterion::localness, Criterion::thickness}) {
      static const char* names[] = {"correctness", "localness", "thickness"};
      write_text(dir / (std::string("pr_") + names[static_cast<int>(cr)] + ".csv"),
                 render([&](std::ostream& os) { write_pr_csv(os, report.get(cr).curve); }));
    }
  }
  return exit_ok;
}

int cmd_gradcheck(const Config& c, std::ostream& out, std::ostream& err) {
  const double step = c.get_double("gradcheck.step");
  if (!(step > 0.0)) throw ConfigError("gradcheck.step must be > 0");
  const auto rows = gradient_suite(c.get_u64("seed"), to_int(c, "gradcheck.seeds", 1), step);
  if (write_grad_table(out, rows)) return exit_ok;
  err << "crispedge: gradcheck: relative error above " << kGradTolerance << '\n';
  return exit_numeric;
}

int cmd_ablate(const Config& c, const std::string& data, const std::string& out_file, std::ostream& out) {
  const TrainConfig tc = train_config_of(c);
  std::vector<LossMode> modes;
  for (const std::string& m : c.get_strings("ablate.modes")) modes.push_back(parse_loss_mode(m));
  if (modes.empty()) throw ConfigError("ablate.modes is empty");
  const std::vector<Sample> samples = load_dataset(data);
  const NetworkTopology topo = topology_of(c, input_channels_of(samples));
  const auto [train_set, held_out] = partition(samples);
  const auto rows = ablation_run(train_set, held_out, topo, tc, modes);
  const std::string csv = render([&](std::ostream& os) { write_ablation_csv(os, rows); });
  write_text(out_file, csv);
  out << csv;
  return exit_ok;
}

int exit_code_of(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const TopologyError*>(&e)) return exit_config;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const IoError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const ContractError*>(&e)) {
    return exit_data;
  }
  if (dynamic_cast<const TrainingError*>(&e) || dynamic_cast<const DomainError*>(&e)) return exit_numeric;
  return exit_internal;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app("Crisp boundary detection: synthetic data, training, inference and benchmark.", "crispedge");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::deque<Invocation> invocations;
  std::vector<std::pair<CLI::App*, std::function<int(const Config&)>>> actions;

  auto add = [&](const std::string& name, const std::string& desc, std::vector<std::string> prefixes) {
    CLI::App* sub = app.add_subcommand(name, desc);
    Invocation& inv = invocations.emplace_back();
    inv.prefixes = std::move(prefixes);
    sub->add_option("--config", inv.config_file, "config file of key = value lines")->check(CLI::ExistingFile);
    sub->add_option("--set", inv.sets, "override one key, e.g. --set train.lr=0.02")->take_all();
    sub->add_flag("--show-config", inv.show_config, "print the resolved configuration and exit");
    return std::pair<CLI::App*, Invocation*>{sub, &inv};
  };

  std::string out_dir, data, model, predictions, split = "all", out_file;

  {
    auto [sub, inv] = add("gen", "write a synthetic dataset (manifest, CRB1 images, PGM annotations)",
                          {"seed", "jobs", "gen."});
    sub->add_option("--out", out_dir, "output directory")->required();
    inv->flag(sub, "--seed", "seed");
    inv->flag(sub, "--jobs", "jobs");
    inv->flag(sub, "--count", "gen.count");
    inv->flag(sub, "--height", "gen.height");
    inv->flag(sub, "--width", "gen.width");
    inv->flag(sub, "--channels", "gen.channels");
    inv->flag(sub, "--annotators", "gen.annotators");
    inv->flag(sub, "--jitter", "gen.jitter");
    inv->flag(sub, "--holdout-percent", "gen.holdout_percent");
    actions.emplace_back(sub, [&](const Config& c) { return cmd_gen(c, out_dir, out); });
  }
  auto train_flags = [](CLI::App* sub, Invocation* inv) {
    inv->flag(sub, "--seed", "seed");
    inv->flag(sub, "--jobs", "jobs");
    inv->flag(sub, "--epochs", "train.epochs");
    inv->flag(sub, "--batch-size", "train.batch_size");
    inv->flag(sub, "--loss", "train.loss");
    inv->flag(sub, "--lr", "train.lr");
    inv->flag(sub, "--kappa", "train.kappa");
    inv->flag(sub, "--tau", "train.tau");
    inv->flag(sub, "--weight-floor", "train.weight_floor");
    inv->flag(sub, "--max-dist-fraction", "eval.max_dist_fraction");
    inv->flag(sub, "--thresholds", "eval.thresholds");
  };
  {
    auto [sub, inv] = add("train", "train on the train split; score the test split",
                          {"seed", "jobs", "net.", "train.", "loss.", "eval."});
    sub->add_option("--data", data, "dataset manifest")->required();
    sub->add_option("--out", out_dir, "directory for params.crb, network.cfg, loss_trace.csv, scores.txt")
        ->required();
    train_flags(sub, inv);
    actions.emplace_back(sub, [&](const Config& c) { return cmd_train(c, data, out_dir, out); });
  }
  {
    auto [sub, inv] = add("infer", "write probability maps for a dataset", {"jobs", "infer."});
    sub->add_option("--model", model, "directory written by train")->required();
    sub->add_option("--data", data, "dataset manifest")->required();
    sub->add_option("--out", out_dir, "directory for maps/ and manifest.tsv")->required();
    sub->add_option("--split", split, "all, train or test")->check(CLI::IsMember({"all", "train", "test"}))->capture_default_str();
    inv->flag(sub, "--jobs", "jobs");
    inv->flag(sub, "--scales", "infer.scales");
    actions.emplace_back(sub, [&](const Config& c) { return cmd_infer(c, model, data, out_dir, split, out); });
  }
  {
    auto [sub, inv] = add("eval", "score prediction maps under correctness, localness and thickness",
                          {"jobs", "eval."});
    sub->add_option("--predictions", predictions, "manifest written by infer")->required();
    sub->add_option("--out", out_dir, "directory for scores.txt and pr_<criterion>.csv");
    sub->add_option("--split", split, "all, train or test")->check(CLI::IsMember({"all", "train", "test"}))->capture_default_str();
    inv->flag(sub, "--jobs", "jobs");
    inv->flag(sub, "--max-dist-fraction", "eval.max_dist_fraction");
    inv->flag(sub, "--thresholds", "eval.thresholds");
    actions.emplace_back(sub, [&](const Config& c) { return cmd_eval(c, predictions, out_dir, split, out); });
  }
  {
    auto [sub, inv] = add("gradcheck", "compare analytic gradients with central differences",
                          {"seed", "gradcheck."});
    inv->flag(sub, "--seed", "seed");
    inv->flag(sub, "--seeds", "gradcheck.seeds");
    inv->flag(sub, "--step", "gradcheck.step");
    actions.emplace_back(sub, [&](const Config& c) { return cmd_gradcheck(c, out, err); });
  }
  {
    auto [sub, inv] = add("ablate", "train one model per loss mode and tabulate held-out scores",
                          {"seed", "jobs", "net.", "train.", "loss.", "eval.", "ablate."});
    sub->add_option("--data", data, "dataset manifest")->required();
    sub->add_option("--out", out_file, "CSV output file")->required();
    train_flags(sub, inv);
    inv->flag(sub, "--modes", "ablate.modes");
    actions.emplace_back(sub, [&](const Config& c) { return cmd_ablate(c, data, out_file, out); });
  }

  std::reverse(args.begin(), args.end());
  std::string name = "usage";
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    if (!subs.empty()) name = subs.front()->get_name();
    err << "crispedge: " << name << ": " << e.what() << " (try --help)\n";
    return exit_usage;
  }

  for (std::size_t i = 0; i < actions.size(); ++i) {
    CLI::App* sub = actions[i].first;
    if (!sub->parsed()) continue;
    name = sub->get_name();
    try {
      const Config config = invocations[i].resolve();
      if (invocations[i].show_config) {
        config.show(out, invocations[i].prefixes);
        return exit_ok;
      }
      return actions[i].second(config);
    } catch (const std::exception& e) {
      err << "crispedge: " << name << ": " << e.what() << '\n';
      return exit_code_of(e);
    }
  }
  err << "crispedge: usage: no subcommand\n";
  return exit_usage;
}

}  // namespace crispedge
