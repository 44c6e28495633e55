// irwgan: unaligned image-to-image translation with learned per-sample
// importance weights. Subcommands: train, eval, sweep-ess, diagnose,
// translate, synth.
//
// Exit codes: 0 ok, 2 usage/config, 3 divergence, 4 missing artifact,
// 5 I/O failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include "irwgan/metrics.hpp"
#include "irwgan/synthdata.hpp"
#include "irwgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace irwgan;

namespace {

constexpr const char* kVersion = "0.1.0";

int classify_error(const std::string& msg) {
  if (msg.find("unknown config key") != std::string::npos || msg.find("override must") != std::string::npos) return 2;
  if (msg.find("divergence") != std::string::npos || msg.find("non-finite") != std::string::npos) return 3;
  if (msg.find("no checkpoint") != std::string::npos || msg.find("checkpoint format") != std::string::npos) return 4;
  if (msg.find("cannot ") != std::string::npos || msg.find("not a directory") != std::string::npos ||
      msg.find("no samples") != std::string::npos)
    return 5;
  return 2;
}

std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json dataset_fingerprint(const DomainDataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : d.samples) h = fnv1a_bytes(s.data.data(), s.data.size() * sizeof(double), h);
  int aligned = 0, unaligned = 0;
  if (d.labels)
    for (Label l : *d.labels) (l == Label::aligned ? aligned : unaligned)++;
  nlohmann::json j;
  j["name"] = d.name;
  j["size"] = d.size();
  j["shape"] = {d.height(), d.width(), d.channels()};
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  j["content_hash"] = buf;
  if (d.labels) j["label_counts"] = {{"aligned", aligned}, {"unaligned", unaligned}};
  return j;
}

// config < IRW_SEED < --seed flag
void apply_seed_precedence(ExperimentConfig& cfg, const std::optional<std::uint64_t>& flag_seed) {
  if (const char* env = std::getenv("IRW_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);
  if (flag_seed) cfg.seed = *flag_seed;
}

struct TrainInputs {
  ExperimentConfig config;
  DomainDataset x, y;
  std::optional<SynthSpec> synth;
};

SynthSpec parse_synth_spec(const std::string& arg) {
  if (arg == "default") return SynthSpec{};
  return synth_spec_from_json(nlohmann::json::parse(read_text_file(arg)));
}

TrainInputs resolve_inputs(const std::string& config_path, const std::string& synth_arg,
                           const std::vector<std::string>& overrides, const std::optional<std::uint64_t>& flag_seed) {
  TrainInputs in;
  nlohmann::json cfg_json;
  if (!config_path.empty()) {
    cfg_json = nlohmann::json::parse(read_text_file(config_path));
  } else {
    cfg_json = to_json(desk_config());  // reduced networks for synthetic runs
  }
  for (const auto& kv : overrides) apply_override(cfg_json, kv);
  in.config = config_from_json(cfg_json);
  apply_seed_precedence(in.config, flag_seed);
  in.config.validate();

  if (!synth_arg.empty()) {
    SynthSpec spec = parse_synth_spec(synth_arg);
    spec.base.resolution = in.config.resolution;
    spec.seed = in.config.seed;
    auto [x, y] = make_unaligned_pair(spec);
    in.x = std::move(x);
    in.y = std::move(y);
    in.synth = spec;
  } else {
    require(!in.config.data_x.empty() && !in.config.data_y.empty(),
            "config must name data_x and data_y directories (or pass --synth)");
    in.x = load_dataset(in.config.data_x, in.config.resolution,
                        in.config.labels_x.empty() ? std::nullopt : std::optional(in.config.labels_x));
    in.y = load_dataset(in.config.data_y, in.config.resolution,
                        in.config.labels_y.empty() ? std::nullopt : std::optional(in.config.labels_y));
  }
  return in;
}

void write_manifest(const TrainInputs& in, const std::string& out_dir) {
  nlohmann::json j;
  j["tool_version"] = kVersion;
  j["seed"] = in.config.seed;
  j["config"] = to_json(in.config);
  j["dataset_x"] = dataset_fingerprint(in.x);
  j["dataset_y"] = dataset_fingerprint(in.y);
  if (in.synth) j["synth"] = to_json(*in.synth);
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "manifest.json").string(), j.dump(2) + "\n");
  if (in.synth) write_text_file((fs::path(out_dir) / "synth.json").string(), to_json(*in.synth).dump(2) + "\n");
}

std::string find_final_checkpoint(const std::string& run_dir) {
  const fs::path dir = fs::path(run_dir) / "checkpoints";
  if (!fs::is_directory(dir)) throw Error("no checkpoint in " + run_dir);
  int best = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("ep", 0) == 0 && name.size() > 7) {
      const int k = std::atoi(name.substr(2, name.size() - 7).c_str());
      best = std::max(best, k);
    }
  }
  if (best < 0) throw Error("no checkpoint in " + run_dir);
  return (dir / ("ep" + std::to_string(best) + ".ckpt")).string();
}

std::string checkpoint_precision(const std::string& path) {
  return nlohmann::json::parse(read_text_file(path)).at("precision").get<std::string>();
}

template <class S>
std::vector<ImageTensor> translate_images(TrainState<S>& st, const DomainDataset& input,
                                          const std::string& direction) {
  Network<S>& net = direction == "x2y" ? st.G : st.F;
  std::vector<ImageTensor> out;
  out.reserve(input.size());
  TrainView view = train_view(input);
  const int chunk = std::max(1, st.config.effective_micro_batch());
  for (std::size_t start = 0; start < input.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t stop = std::min(input.size(), start + static_cast<std::size_t>(chunk));
    std::vector<int> idx;
    for (std::size_t i = start; i < stop; ++i) idx.push_back(static_cast<int>(i));
    Tensor<S> block = make_batch(view, idx).tensors.template cast<S>();
    Tensor<S> res = net.eval(block);
    const int c = res.dim(1), h = res.dim(2), w = res.dim(3);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ImageTensor img(h, w, c);
      const std::size_t per = img.size();
      for (std::size_t k = 0; k < per; ++k) img.data[k] = static_cast<double>(res.data[i * per + k]);
      img.clamp();
      out.push_back(std::move(img));
    }
  }
  return out;
}

template <class S>
nlohmann::json do_eval(const std::string& ckpt, const DomainDataset& test_x, const DomainDataset& test_y) {
  TrainState<S> st = load_checkpoint<S>(ckpt);
  require(st.resolution == test_x.height() && st.resolution == test_y.height(),
          "test sets do not match the checkpoint resolution");

  std::vector<ImageTensor> gen_y = translate_images(st, test_x, "x2y");
  std::vector<ImageTensor> gen_x = translate_images(st, test_y, "y2x");

  FeatureSet f_x = raw_features(test_x.samples);
  FeatureSet f_y = raw_features(test_y.samples);
  FeatureSet f_gy = raw_features(gen_y);
  FeatureSet f_gx = raw_features(gen_x);

  const double fid_x2y = fid(f_gy, f_y);
  const double fid_y2x = fid(f_gx, f_x);
  const double kid_x2y = kid(f_gy, f_y);
  const double kid_y2x = kid(f_gx, f_x);

  nlohmann::json j;
  j["fid"] = {{"x2y", fid_x2y}, {"y2x", fid_y2x}};
  j["kid"] = {{"x2y", kid_x2y}, {"y2x", kid_y2x}};
  j["kid_x100"] = {{"x2y", 100.0 * kid_x2y}, {"y2x", 100.0 * kid_y2x}};

  auto domain_report = [&st](Network<S>& B, const DomainDataset& d, bool learned) {
    nlohmann::json r;
    std::vector<double> w;
    if (learned) {
      WeightReport rep = dataset_weights(B, d, st.config.effective_micro_batch(), st.config.batch_size);
      w = rep.weights();
    } else {
      w.assign(d.size(), 1.0);
    }
    r["ess"] = ess_statistic(w);
    r["ess_ratio_form"] = ess_ratio_form(w);
    if (d.labels) {
      BetaReport br = beta_report(w, *d.labels);
      r["accuracy"] = br.accuracy;
      r["precision"] = br.precision ? nlohmann::json(*br.precision) : nlohmann::json(nullptr);
      r["recall"] = br.recall ? nlohmann::json(*br.recall) : nlohmann::json(nullptr);
    } else {
      r["accuracy"] = nullptr;
      r["precision"] = nullptr;
      r["recall"] = nullptr;
    }
    return r;
  };
  nlohmann::json rx = domain_report(st.BX, test_x, st.config.learn_beta_x);
  nlohmann::json ry = domain_report(st.BY, test_y, st.config.learn_beta_y);
  j["precision"] = {{"x", rx["precision"]}, {"y", ry["precision"]}};
  j["recall"] = {{"x", rx["recall"]}, {"y", ry["recall"]}};
  j["accuracy"] = {{"x", rx["accuracy"]}, {"y", ry["accuracy"]}};
  j["ess_x"] = rx["ess"];
  j["ess_y"] = ry["ess"];
  j["ess_x_ratio_form"] = rx["ess_ratio_form"];
  j["ess_y_ratio_form"] = ry["ess_ratio_form"];
  return j;
}

struct SweepRow {
  double lambda_ess = 0;
  double ess_x = 0, ess_y = 0;
  double beta_accuracy = 0;
  double fid_x2y = 0;
};

template <class S>
SweepRow sweep_one(double lambda, const SynthSpec& spec, ExperimentConfig cfg, const std::string& dir) {
  cfg.lambda_ess = lambda;
  auto [x, y] = make_unaligned_pair(spec);
  RunResult<S> res = run_training<S>(x, y, cfg, dir);
  TrainState<S>& st = res.state;

  auto weights_of = [&](Network<S>& B, const DomainDataset& d, bool learned) {
    if (!learned) return std::vector<double>(d.size(), 1.0);
    return dataset_weights(B, d, cfg.effective_micro_batch(), cfg.batch_size).weights();
  };
  std::vector<double> wx = weights_of(st.BX, x, cfg.learn_beta_x);
  std::vector<double> wy = weights_of(st.BY, y, cfg.learn_beta_y);

  SweepRow row;
  row.lambda_ess = lambda;
  row.ess_x = ess_statistic(wx);
  row.ess_y = ess_statistic(wy);
  row.beta_accuracy = 0.5 * (beta_report(wx, *x.labels).accuracy + beta_report(wy, *y.labels).accuracy);

  std::vector<ImageTensor> gen_y = translate_images(st, x, "x2y");
  row.fid_x2y = fid(raw_features(gen_y), raw_features(y.samples));

  write_histogram_csv(weight_histogram(wx, &*x.labels, 20), (fs::path(dir) / "histogram_X.csv").string());
  write_histogram_csv(weight_histogram(wy, &*y.labels, 20), (fs::path(dir) / "histogram_Y.csv").string());
  return row;
}

template <class S>
void do_sweep(const std::vector<double>& values, const SynthSpec& spec, const ExperimentConfig& cfg,
              const std::string& out_dir, bool parallel) {
  fs::create_directories(out_dir);
  std::vector<SweepRow> rows(values.size());
  auto dir_of = [&](double v) { return (fs::path(out_dir) / ("ess_" + fmt_g17(v))).string(); };
  if (!parallel) {
    for (std::size_t i = 0; i < values.size(); ++i) rows[i] = sweep_one<S>(values[i], spec, cfg, dir_of(values[i]));
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < values.size(); ++i)
      pool.emplace_back([&, i]() {
        ExperimentConfig c = cfg;
        c.seed = cfg.seed + i;  // independent seeds in parallel mode
        SynthSpec sp = spec;
        sp.seed = c.seed;
        rows[i] = sweep_one<S>(values[i], sp, c, dir_of(values[i]));
      });
    for (auto& t : pool) t.join();
  }
  std::ofstream csv(fs::path(out_dir) / "sweep.csv");
  require(csv.good(), "cannot write sweep.csv");
  csv << "lambda_ess,ess_x,ess_y,beta_accuracy,fid\n";
  for (const auto& r : rows)
    csv << fmt_g17(r.lambda_ess) << ',' << fmt_g17(r.ess_x) << ',' << fmt_g17(r.ess_y) << ','
        << fmt_g17(r.beta_accuracy) << ',' << fmt_g17(r.fid_x2y) << '\n';
}

ExperimentConfig config_for(const std::string& config_path, const std::vector<std::string>& overrides,
                            const std::optional<std::uint64_t>& flag_seed) {
  nlohmann::json cfg_json =
      config_path.empty() ? to_json(desk_config()) : nlohmann::json::parse(read_text_file(config_path));
  for (const auto& kv : overrides) apply_override(cfg_json, kv);
  ExperimentConfig cfg = config_from_json(cfg_json);
  apply_seed_precedence(cfg, flag_seed);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IrwGAN: unaligned image translation with learned importance weights"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train on PNG directories or a synthetic pair");
  std::string t_config, t_synth, t_out;
  std::vector<std::string> t_set;
  std::optional<std::uint64_t> t_seed;
  train->add_option("--config", t_config, "config JSON path");
  train->add_option("--synth", t_synth, "synth spec JSON path or 'default'");
  train->add_option("--out", t_out, "run directory")->required();
  train->add_option("--set", t_set, "config override key=value (repeatable)");
  train->add_option("--seed", t_seed, "seed override (wins over config and IRW_SEED)");

  auto* eval = app.add_subcommand("eval", "evaluate a finished run against test directories");
  std::string e_run, e_tx, e_ty, e_lx, e_ly, e_out;
  eval->add_option("--run", e_run, "run directory with checkpoints")->required();
  eval->add_option("--test-x", e_tx, "domain X test PNG directory")->required();
  eval->add_option("--test-y", e_ty, "domain Y test PNG directory")->required();
  eval->add_option("--labels-x", e_lx, "labels CSV for test X");
  eval->add_option("--labels-y", e_ly, "labels CSV for test Y");
  eval->add_option("--out", e_out, "metrics JSON output path (default <run>/metrics.json)");

  auto* sweep = app.add_subcommand("sweep-ess", "run a lambda_ess sweep on a synthetic pair");
  std::string s_values = "0,0.1,1,3,10", s_synth = "default", s_out, s_config;
  std::vector<std::string> s_set;
  std::optional<std::uint64_t> s_seed;
  bool s_parallel = false;
  sweep->add_option("--values", s_values, "comma-separated lambda_ess values (>= 2)");
  sweep->add_option("--synth", s_synth, "synth spec JSON path or 'default'");
  sweep->add_option("--config", s_config, "config JSON path");
  sweep->add_option("--out", s_out, "sweep output directory")->required();
  sweep->add_option("--set", s_set, "config override key=value (repeatable)");
  sweep->add_option("--seed", s_seed, "seed override");
  sweep->add_flag("--parallel", s_parallel, "run values concurrently (seeds become seed+index)");

  auto* diag = app.add_subcommand("diagnose", "quicker-translation probe on a labeled synthetic pair");
  std::string d_synth = "default", d_out, d_config;
  std::vector<std::string> d_set;
  std::optional<std::uint64_t> d_seed;
  diag->add_option("--synth", d_synth, "synth spec JSON path or 'default'");
  diag->add_option("--config", d_config, "config JSON path");
  diag->add_option("--out", d_out, "probe output directory")->required();
  diag->add_option("--set", d_set, "config override key=value (repeatable)");
  diag->add_option("--seed", d_seed, "seed override");

  auto* trans = app.add_subcommand("translate", "apply a trained mapping to a PNG directory");
  std::string tr_run, tr_in, tr_dir = "x2y", tr_out;
  trans->add_option("--run", tr_run, "run directory with checkpoints")->required();
  trans->add_option("--input", tr_in, "input PNG directory")->required();
  trans->add_option("--direction", tr_dir, "x2y or y2x")->check(CLI::IsMember({"x2y", "y2x"}));
  trans->add_option("--out", tr_out, "output directory")->required();

  auto* synth = app.add_subcommand("synth", "materialize a synthetic pair to PNG directories");
  std::string sy_spec = "default", sy_out;
  synth->add_option("--spec", sy_spec, "synth spec JSON path or 'default'");
  synth->add_option("--out", sy_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (*train) {
      require(t_config.empty() != t_synth.empty(), "pass exactly one of --config and --synth");
      TrainInputs in = resolve_inputs(t_config, t_synth, t_set, t_seed);
      write_manifest(in, t_out);
      if (in.config.precision == "f64")
        run_training<double>(in.x, in.y, in.config, t_out);
      else
        run_training<float>(in.x, in.y, in.config, t_out);
    } else if (*eval) {
      const std::string ckpt = find_final_checkpoint(e_run);
      const int res = nlohmann::json::parse(read_text_file(ckpt)).at("resolution").get<int>();
      DomainDataset tx = load_dataset(e_tx, res, e_lx.empty() ? std::nullopt : std::optional(e_lx));
      DomainDataset ty = load_dataset(e_ty, res, e_ly.empty() ? std::nullopt : std::optional(e_ly));
      nlohmann::json j =
          checkpoint_precision(ckpt) == "f64" ? do_eval<double>(ckpt, tx, ty) : do_eval<float>(ckpt, tx, ty);
      const std::string out = e_out.empty() ? (fs::path(e_run) / "metrics.json").string() : e_out;
      write_text_file(out, j.dump(2) + "\n");
      std::cout << j.dump(2) << "\n";
    } else if (*sweep) {
      std::vector<double> values;
      for (std::size_t pos = 0; pos < s_values.size();) {
        std::size_t comma = s_values.find(',', pos);
        if (comma == std::string::npos) comma = s_values.size();
        values.push_back(std::stod(s_values.substr(pos, comma - pos)));
        pos = comma + 1;
      }
      require(values.size() >= 2, "sweep needs at least 2 lambda_ess values");
      ExperimentConfig cfg = config_for(s_config, s_set, s_seed);
      SynthSpec spec = parse_synth_spec(s_synth);
      spec.base.resolution = cfg.resolution;
      spec.seed = cfg.seed;
      if (cfg.precision == "f64")
        do_sweep<double>(values, spec, cfg, s_out, s_parallel);
      else
        do_sweep<float>(values, spec, cfg, s_out, s_parallel);
    } else if (*diag) {
      ExperimentConfig cfg = config_for(d_config, d_set, d_seed);
      SynthSpec spec = parse_synth_spec(d_synth);
      spec.base.resolution = cfg.resolution;
      spec.seed = cfg.seed;
      auto [x, y] = make_unaligned_pair(spec);
      if (cfg.precision == "f64")
        hypothesis_probe<double>(x, y, cfg, d_out);
      else
        hypothesis_probe<float>(x, y, cfg, d_out);
    } else if (*trans) {
      const std::string ckpt = find_final_checkpoint(tr_run);
      const int res = nlohmann::json::parse(read_text_file(ckpt)).at("resolution").get<int>();
      DomainDataset input = load_dataset(tr_in, res);
      fs::create_directories(tr_out);
      auto emit = [&](auto state) {
        auto imgs = translate_images(state, input, tr_dir);
        for (std::size_t i = 0; i < imgs.size(); ++i)
          write_png((fs::path(tr_out) / input.filenames[i]).string(), imgs[i]);
      };
      if (checkpoint_precision(ckpt) == "f64")
        emit(load_checkpoint<double>(ckpt));
      else
        emit(load_checkpoint<float>(ckpt));
    } else if (*synth) {
      SynthSpec spec = parse_synth_spec(sy_spec);
      auto [x, y] = make_unaligned_pair(spec);
      fs::create_directories(sy_out);
      materialize_domain(x, (fs::path(sy_out) / "X").string());
      materialize_domain(y, (fs::path(sy_out) / "Y").string());
      write_text_file((fs::path(sy_out) / "synth.json").string(), to_json(spec).dump(2) + "\n");
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_error(e.what());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
