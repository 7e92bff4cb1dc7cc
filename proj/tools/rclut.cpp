// rclut: train, export, upscale, evaluate and size/RF analysis.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 corrupt pack.

#include <rclut/rclut.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 1, kData = 2, kCorrupt = 3 };

int exit_code(rclut::ErrorCode c) {
  using rclut::ErrorCode;
  switch (c) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnsupportedInterval:
    case ErrorCode::TopologyMismatch:
      return kConfig;
    case ErrorCode::CorruptPack:
      return kCorrupt;
    default:
      return kData;
  }
}

struct ConfigDoc {
  rclut::NetworkConfig network;
  rclut::TrainConfig train = rclut::TrainConfig::desk();
};

/// A preset name, a NetworkConfig JSON file, or a document
/// {"network": <preset name | config>, "train": {...}}.
ConfigDoc load_config(const std::string& spec, const std::string& profile) {
  ConfigDoc doc;
  if (profile == "paper") doc.train = rclut::TrainConfig::paper();
  else if (profile != "desk") rclut::fail(rclut::ErrorCode::InvalidConfig, "unknown profile '" + profile + "'");

  if (!fs::exists(spec)) {
    doc.network = rclut::presets::by_name(spec);
    return doc;
  }
  json j;
  try {
    std::ifstream f(spec);
    j = json::parse(f);
    const json& net = j.contains("network") ? j.at("network") : j;
    doc.network = net.is_string() ? rclut::presets::by_name(net.get<std::string>()) : net.get<rclut::NetworkConfig>();
    if (j.contains("train")) j.at("train").get_to(doc.train);
  } catch (const json::exception& e) {
    rclut::fail(rclut::ErrorCode::InvalidConfig, spec + ": " + e.what());
  }
  return doc;
}

void print_effective(const json& j) { std::cout << "effective config:\n" << j.dump(2) << "\n"; }

std::string mib(std::size_t bytes) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f MiB", static_cast<double>(bytes) / (1024.0 * 1024.0));
  return buf;
}

void print_pack(const rclut::LutPack& pack) {
  std::cout << "scale " << pack.scale << ", rotation ensemble " << (pack.rotation_ensemble ? "on" : "off") << "\n";
  for (std::size_t s = 0; s < pack.stages.size(); ++s)
    for (std::size_t b = 0; b < pack.stages[s].size(); ++b) {
      const auto& br = pack.stages[s][b];
      std::size_t rc_bytes = 0;
      for (const auto& t : br.rc) rc_bytes += t.entries.size();
      std::cout << "  s" << s << ".b" << b << ": ";
      if (br.rc_size > 0)
        std::cout << "rc " << br.rc_size << "x" << br.rc_size << " (" << br.rc.size() << " x "
                  << br.rc.front().sample_count() << " = " << rc_bytes << " B), ";
      std::cout << json(br.block.kind).get<std::string>() << " "
                << (br.block.kind == rclut::BlockKind::In1Out4 ? "256" : "17^4") << " x " << br.block.out_channels
                << " = " << br.block.entries.size() << " B\n";
    }
  std::cout << "total " << pack.total_bytes() << " B (" << mib(pack.total_bytes()) << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstructed-convolution LUT super-resolution"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: RCLUT_THREADS or all cores)");

  // train
  auto* train = app.add_subcommand("train", "Train a reference network");
  std::string t_config = "rclut-default", t_data, t_out, t_profile = "desk", t_cache, t_loss;
  std::int64_t t_iters = -1, t_seed = -1;
  train->add_option("--config", t_config, "Preset name or JSON config document");
  train->add_option("--data", t_data, "Directory of HR PNGs")->required();
  train->add_option("--out", t_out, "Checkpoint path")->required();
  train->add_option("--iters", t_iters, "Iterations (overrides the config)");
  train->add_option("--seed", t_seed, "Seed (overrides the config)");
  train->add_option("--profile", t_profile, "Base training profile: desk or paper");
  train->add_option("--cache", t_cache, "LR cache directory");
  train->add_option("--loss-csv", t_loss, "Loss log (default: <out>.loss.csv)");

  // export
  auto* exp = app.add_subcommand("export", "Cache a checkpoint into a LUT pack");
  std::string e_ckpt, e_out, e_data;
  int e_interval = 4;
  std::uint64_t e_ft_iters = 0, e_seed = 0;
  bool e_full_rc = false;
  exp->add_option("--ckpt", e_ckpt, "Checkpoint")->required();
  exp->add_option("--out", e_out, "Output .rclt")->required();
  exp->add_option("--interval", e_interval, "Sampling interval exponent (only 4)");
  exp->add_option("--finetune-iters", e_ft_iters, "LUT-aware finetuning iterations");
  exp->add_option("--data", e_data, "HR PNGs for finetuning");
  exp->add_option("--seed", e_seed, "Finetuning seed");
  exp->add_flag("--full-rc", e_full_rc, "Store 256-entry RC tables");

  // upscale
  auto* up = app.add_subcommand("upscale", "Super-resolve a PNG with a LUT pack");
  std::string u_lut, u_in, u_out;
  up->add_option("--lut", u_lut, "LUT pack")->required();
  up->add_option("--in", u_in, "Input PNG")->required();
  up->add_option("--out", u_out, "Output PNG")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Y-channel PSNR/SSIM on a dataset");
  std::string v_lut, v_dataset, v_report;
  bool v_bicubic = false, v_passthrough = false;
  int v_scale = 4, v_crop = -1;
  auto* lut_opt = ev->add_option("--lut", v_lut, "LUT pack");
  auto* bic_opt = ev->add_flag("--bicubic", v_bicubic, "Bicubic baseline");
  auto* pass_opt = ev->add_flag("--passthrough", v_passthrough, "Ground-truth passthrough");
  lut_opt->excludes(bic_opt)->excludes(pass_opt);
  bic_opt->excludes(pass_opt);
  ev->add_option("--dataset", v_dataset, "Directory of HR PNGs")->required();
  ev->add_option("--scale", v_scale, "Scale factor (taken from the pack when --lut is given)");
  ev->add_option("--crop", v_crop, "Border shave in pixels (default: scale)");
  ev->add_option("--report", v_report, "Report path stem (<stem>.csv, <stem>.json)");

  // rf
  auto* rf = app.add_subcommand("rf", "Receptive field of a config");
  std::string r_config;
  rf->add_option("--config", r_config, "Preset name or JSON config")->required();

  // size
  auto* size = app.add_subcommand("size", "LUT size estimate");
  std::string s_kind;
  int s_n = 2, s_r = 4;
  std::string s_config;
  size->add_option("--kind", s_kind, "full_srlut, sampled_srlut or full_1d");
  size->add_option("--n", s_n, "RF side n");
  size->add_option("--r", s_r, "Scale r");
  size->add_option("--config", s_config, "Report the table bytes of a config instead");

  // inspect
  auto* insp = app.add_subcommand("inspect", "Print the manifest of a LUT pack");
  std::string i_lut;
  insp->add_option("--lut", i_lut, "LUT pack")->required();

  // synth
  auto* syn = app.add_subcommand("synth", "Write procedural test images");
  std::string y_out;
  int y_count = 20, y_size = 128;
  std::uint64_t y_seed = 1;
  bool y_color = false;
  syn->add_option("--out", y_out, "Output directory")->required();
  syn->add_option("--count", y_count, "Number of images");
  syn->add_option("--size", y_size, "Side length in pixels");
  syn->add_option("--seed", y_seed, "Seed");
  syn->add_flag("--color", y_color, "RGB scenes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    rclut::set_thread_count(threads);

    if (*train) {
      ConfigDoc doc = load_config(t_config, t_profile);
      if (t_iters >= 0) doc.train.iterations = static_cast<std::uint64_t>(t_iters);
      if (t_seed >= 0) doc.train.seed = static_cast<std::uint64_t>(t_seed);
      rclut::validate(doc.network);
      rclut::validate(doc.train);
      print_effective({{"network", doc.network}, {"train", doc.train}, {"data", t_data}, {"out", t_out}});
      rclut::PrepareStats stats;
      const auto pairs = rclut::prepare_pairs({t_data, doc.network.scale, t_cache}, &stats);
      std::cout << "images: " << stats.loaded << " loaded, " << stats.skipped << " skipped, " << stats.cache_hits
                << " cached\n";
      rclut::TrainOptions opt;
      opt.checkpoint = t_out;
      opt.loss_csv = t_loss.empty() ? fs::path(t_out + ".loss.csv") : fs::path(t_loss);
      opt.on_log = [](const rclut::LossRecord& r) {
        std::printf("iter %8llu  loss %.6e  %.1f s\n", static_cast<unsigned long long>(r.iteration), r.loss,
                    r.wall_ms / 1000.0);
        std::fflush(stdout);
      };
      std::vector<rclut::LossRecord> log;
      rclut::train(doc.network, doc.train, pairs, opt, &log);
      std::cout << "wrote " << t_out << "\n";
      return kOk;
    }

    if (*exp) {
      print_effective({{"ckpt", e_ckpt}, {"out", e_out}, {"interval", e_interval}, {"finetune_iters", e_ft_iters},
                       {"full_rc", e_full_rc}});
      rclut::sample_points(e_interval);
      const rclut::TrainState st = rclut::load_checkpoint(e_ckpt);
      rclut::LutPack pack = rclut::export_pack(st.config, st.params, !e_full_rc);
      if (e_ft_iters > 0) {
        if (e_data.empty()) rclut::fail(rclut::ErrorCode::InvalidConfig, "--finetune-iters needs --data");
        auto pairs = rclut::prepare_pairs({e_data, pack.scale, {}});
        rclut::TrainConfig tc = rclut::TrainConfig::desk();
        tc.iterations = e_ft_iters;
        tc.seed = e_seed;
        tc.lr = 1e-3;
        const auto res = rclut::lut_aware_finetune(pack, pairs, {}, tc);
        std::printf("finetune: validation MSE %.6e -> %.6e (best at iteration %llu)\n", res.initial_val_mse,
                    res.best_val_mse, static_cast<unsigned long long>(res.best_iteration));
        pack = res.pack;
      }
      rclut::write_pack(pack, e_out);
      print_pack(pack);
      return kOk;
    }

    if (*up) {
      print_effective({{"lut", u_lut}, {"in", u_in}, {"out", u_out}, {"threads", rclut::thread_count()}});
      const rclut::LutPack pack = rclut::read_pack(u_lut);
      const rclut::Image img = rclut::load_png(u_in);
      const auto t0 = std::chrono::steady_clock::now();
      const rclut::Image out = rclut::upscale(img, pack);
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rclut::save_png(out, u_out);
      const double mp = static_cast<double>(out.width) * out.height / 1e6;
      std::printf("%dx%d -> %dx%d in %.3f s (%.2f MP/s)\n", img.width, img.height, out.width, out.height, sec,
                  sec > 0 ? mp / sec : 0.0);
      return kOk;
    }

    if (*ev) {
      rclut::SrFn fn;
      std::string method;
      if (!v_lut.empty()) {
        auto pack = std::make_shared<rclut::LutPack>(rclut::read_pack(v_lut));
        v_scale = pack->scale;
        fn = [pack](const rclut::Image& lr, const rclut::Image&) { return rclut::upscale(lr, *pack); };
        method = "lut";
      } else if (v_passthrough) {
        fn = rclut::passthrough_sr();
        method = "passthrough";
      } else {
        fn = rclut::bicubic_sr(v_scale);
        method = "bicubic";
      }
      print_effective({{"method", method}, {"lut", v_lut}, {"dataset", v_dataset}, {"scale", v_scale},
                       {"crop", v_crop < 0 ? v_scale : v_crop}, {"report", v_report}});
      const auto rep = rclut::evaluate(fn, fs::path(v_dataset), v_scale, v_crop);
      for (const auto& s : rep.images) std::printf("%-32s %8.4f dB  %.5f\n", s.name.c_str(), s.psnr, s.ssim);
      std::printf("mean PSNR %.4f dB, mean SSIM %.5f\n", rep.mean_psnr, rep.mean_ssim);
      if (!v_report.empty()) rep.write(v_report);
      return kOk;
    }

    if (*rf) {
      const auto doc = load_config(r_config, "desk");
      print_effective({{"network", doc.network}});
      std::cout << "receptive field: " << rclut::receptive_field(doc.network) << "\n";
      return kOk;
    }

    if (*size) {
      if (!s_config.empty()) {
        const auto doc = load_config(s_config, "desk");
        print_effective({{"network", doc.network}});
        const std::size_t bytes = rclut::config_table_bytes(doc.network);
        rclut::SizeEstimate e;
        e.bytes = bytes;
        e.log10_bytes = std::log10(static_cast<double>(bytes));
        std::cout << bytes << " B (" << rclut::format_bytes(e) << ")\n";
        return kOk;
      }
      if (s_kind.empty()) rclut::fail(rclut::ErrorCode::InvalidConfig, "--kind or --config is required");
      const auto kind = rclut::parse_size_kind(s_kind);
      print_effective({{"kind", s_kind}, {"n", s_n}, {"r", s_r}});
      const auto e = rclut::size_formula(kind, s_n, s_r);
      std::cout << rclut::exact_bytes_string(e) << " B (" << rclut::format_bytes(e) << ")\n";
      return kOk;
    }

    if (*insp) {
      print_effective({{"lut", i_lut}});
      const rclut::LutPack pack = rclut::read_pack(i_lut);
      std::size_t tables = 0;
      for (const auto& s : pack.stages)
        for (const auto& b : s) tables += b.rc.size() + 1;
      std::cout << "tables " << tables << ", CRC ok\n";
      std::cout << "topology " << json(rclut::pack_topology(pack)).dump() << "\n";
      print_pack(pack);
      return kOk;
    }

    if (*syn) {
      print_effective({{"out", y_out}, {"count", y_count}, {"size", y_size}, {"seed", y_seed}, {"color", y_color}});
      const auto paths = rclut::write_synthetic_set(y_out, y_count, y_size, y_size, y_seed, y_color);
      std::cout << "wrote " << paths.size() << " images\n";
      return kOk;
    }
  } catch (const rclut::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
