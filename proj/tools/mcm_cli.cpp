#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mcm/data.hpp"
#include "mcm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mcm;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> pts;
};

std::string line_chart(const std::string& title, const std::string& xlabel,
                       const std::string& ylabel, const std::vector<Series>& series) {
  const double px0 = 64, py0 = 44, px1 = 600, py1 = 344;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series) {
    for (auto [x, y] : s.pts) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto mx = [&](double x) { return px0 + (x - xmin) / (xmax - xmin) * (px1 - px0); };
  auto my = [&](double y) { return py1 - (y - ymin) / (ymax - ymin) * (py1 - py0); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};
  const int n_colors = 6;
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='400' "
         "viewBox='0 0 640 400'>\n"
      << "<rect width='640' height='400' fill='white'/>\n"
      << "<text x='320' y='24' text-anchor='middle' font-family='sans-serif' font-size='15'>"
      << title << "</text>\n";
  svg << "<line x1='" << px0 << "' y1='" << py1 << "' x2='" << px1 << "' y2='" << py1
      << "' stroke='black'/>\n";
  svg << "<line x1='" << px0 << "' y1='" << py0 << "' x2='" << px0 << "' y2='" << py1
      << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = xmin + (xmax - xmin) * i / 4.0;
    double fy = ymin + (ymax - ymin) * i / 4.0;
    svg << "<line x1='" << mx(fx) << "' y1='" << py1 << "' x2='" << mx(fx) << "' y2='"
        << py1 + 5 << "' stroke='black'/>\n"
        << "<text x='" << mx(fx) << "' y='" << py1 + 20
        << "' text-anchor='middle' font-family='sans-serif' font-size='11'>" << fmt(fx)
        << "</text>\n";
    svg << "<line x1='" << px0 - 5 << "' y1='" << my(fy) << "' x2='" << px0 << "' y2='"
        << my(fy) << "' stroke='black'/>\n"
        << "<text x='" << px0 - 8 << "' y='" << my(fy) + 4
        << "' text-anchor='end' font-family='sans-serif' font-size='11'>" << fmt(fy)
        << "</text>\n";
  }
  svg << "<text x='" << (px0 + px1) / 2 << "' y='384' text-anchor='middle' "
      << "font-family='sans-serif' font-size='12'>" << xlabel << "</text>\n";
  svg << "<text x='16' y='" << (py0 + py1) / 2 << "' text-anchor='middle' "
      << "font-family='sans-serif' font-size='12' transform='rotate(-90 16 "
      << (py0 + py1) / 2 << ")'>" << ylabel << "</text>\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = colors[si % n_colors];
    svg << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (auto [x, y] : series[si].pts) svg << mx(x) << "," << my(y) << " ";
    svg << "'/>\n";
    double ly = py0 + 14.0 * si;
    svg << "<line x1='" << px1 - 90 << "' y1='" << ly << "' x2='" << px1 - 70 << "' y2='" << ly
        << "' stroke='" << color << "' stroke-width='2'/>\n"
        << "<text x='" << px1 - 64 << "' y='" << ly + 4
        << "' font-family='sans-serif' font-size='11'>" << series[si].name << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot open file: " + path.string());
  os << content;
  require(static_cast<bool>(os), "write failed: " + path.string());
}

int run_synth(const std::string& out, int t_len, int size, uint64_t seed, double a, double noise,
              int count, const std::string& prefix) {
  for (int i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s%03d", prefix.c_str(), i);
    auto ph = synth_phantom(make_phantom_spec(t_len, size, size, a, seed + i, noise));
    save_phantom(out, name, ph);
    std::cout << "wrote " << (fs::path(out) / name).string() << "_{seq,gt,masks}.mcmt\n";
  }
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_override,
              const std::string& ckpt_override) {
  TrainConfig cfg = load_config(config_path);
  if (!data_override.empty()) cfg.data_dir = data_override;
  require(!cfg.data_dir.empty(), "no data_dir configured");
  Dataset ds = load_dataset(cfg.data_dir, cfg.crop);
  std::cout << "loaded " << ds.items.size() << " sequence(s) from " << cfg.data_dir << "\n";
  Rng rng(cfg.seed);
  auto model = init_model(cfg.c_base, cfg.d_state, cfg.K, rng);
  std::vector<NamedParam> params;
  model.collect(params);
  auto st = make_adam_state(params);
  auto res = train(model, st, ds, cfg, &std::cout);
  fs::create_directories(cfg.out_dir);
  fs::path ckpt = ckpt_override.empty() ? fs::path(cfg.out_dir) / "model.mcmc"
                                        : fs::path(ckpt_override);
  save_checkpoint(ckpt.string(), model, st, cfg);
  std::ostringstream csv;
  csv.precision(17);
  csv << "epoch,total,sim,smooth\n";
  for (const auto& rec : res.log) {
    csv << rec.epoch << "," << rec.total << "," << rec.sim << "," << rec.smooth << "\n";
  }
  fs::path loss_csv = fs::path(cfg.out_dir) / "loss.csv";
  write_text(loss_csv, csv.str());
  std::cout << "initial sim " << res.initial_sim << " final sim " << res.final_sim << "\n"
            << "checkpoint " << ckpt.string() << "\n"
            << "loss log " << loss_csv.string() << "\n";
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& out) {
  auto lc = load_checkpoint(ckpt);
  Dataset ds = load_dataset(data, lc.cfg.crop);
  auto records = evaluate(lc.model, ds);
  write_eval_records(out, records);
  double dice_acc = 0, epe_acc = 0, jac_acc = 0, tc_acc = 0;
  int dice_n = 0, epe_n = 0, tc_n = 0;
  for (const auto& r : records) {
    jac_acc += r.neg_jac_pct;
    if (r.has_dice) {
      dice_acc += r.dice;
      ++dice_n;
    }
    if (r.has_epe) {
      epe_acc += r.epe;
      ++epe_n;
    }
    if (r.has_tc) {
      tc_acc += r.tc_index;
      ++tc_n;
    }
  }
  std::cout << records.size() << " records -> " << out << "\n";
  if (dice_n) std::cout << "mean dice " << dice_acc / dice_n << "\n";
  if (epe_n) std::cout << "mean epe " << epe_acc / epe_n << "\n";
  if (tc_n) std::cout << "mean tc_index " << tc_acc / tc_n << "\n";
  if (!records.empty()) std::cout << "mean neg_jac_pct " << jac_acc / records.size() << "\n";
  return 0;
}

int run_infer(const std::string& ckpt, const std::string& seq_path, int t,
              const std::string& out) {
  auto lc = load_checkpoint(ckpt);
  auto seq = load_tensor(seq_path);
  require(seq->shape.size() == 3, "expected a [T,H,W] sequence");
  if (seq->dim(1) != lc.cfg.crop || seq->dim(2) != lc.cfg.crop) {
    seq = preprocess(seq, lc.cfg.crop);
  }
  auto phi = predict_field(lc.model, seq, t);
  save_tensor(out, *phi);
  std::cout << "wrote " << out << " [2," << phi->dim(1) << "," << phi->dim(2) << "]\n";
  return 0;
}

int run_profile(int c_base, int d_state, int size, int calls, int warmup,
                const std::string& out) {
  auto rows = profile_model(c_base, d_state, size, calls, warmup);
  std::printf("%-5s %-14s %-12s %s\n", "n_f", "peak_bytes", "mean_ms", "calls");
  std::ostringstream csv;
  csv << "n_f,peak_bytes,mean_ms,calls\n";
  for (const auto& r : rows) {
    std::printf("%-5d %-14lld %-12.3f %d\n", r.n_f, static_cast<long long>(r.peak_bytes),
                r.mean_ms, r.calls);
    csv << r.n_f << "," << r.peak_bytes << "," << r.mean_ms << "," << r.calls << "\n";
  }
  if (!out.empty()) {
    write_text(out, csv.str());
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

int run_plot(const std::string& records_path, const std::string& loss_path,
             const std::string& out_dir) {
  fs::create_directories(out_dir);
  if (!records_path.empty()) {
    auto records = read_eval_records(records_path);
    std::vector<std::string> order;
    std::map<std::string, Series> by_seq;
    std::ostringstream csv;
    csv.precision(17);
    csv << "seq_id,t,mean_mag\n";
    for (const auto& r : records) {
      if (!by_seq.count(r.seq_id)) {
        order.push_back(r.seq_id);
        by_seq[r.seq_id].name = r.seq_id;
      }
      by_seq[r.seq_id].pts.push_back({static_cast<double>(r.t), r.mean_mag});
      csv << r.seq_id << "," << r.t << "," << r.mean_mag << "\n";
    }
    std::vector<Series> series;
    for (const auto& id : order) series.push_back(by_seq[id]);
    write_text(fs::path(out_dir) / "tc_curve.csv", csv.str());
    write_text(fs::path(out_dir) / "tc_curve.svg",
               line_chart("mean displacement magnitude over the cycle", "frame",
                          "mean |phi| (px)", series));
    std::cout << "wrote " << (fs::path(out_dir) / "tc_curve.{csv,svg}").string() << "\n";
  }
  if (!loss_path.empty()) {
    std::ifstream is(loss_path);
    require(static_cast<bool>(is), "cannot open file: " + loss_path);
    std::string line;
    std::getline(is, line);  // header
    Series total{"total", {}}, sim{"sim", {}}, smooth{"smooth", {}};
    std::ostringstream csv;
    csv << "epoch,total,sim,smooth\n";
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string cell;
      std::vector<double> cells;
      while (std::getline(ls, cell, ',')) cells.push_back(std::stod(cell));
      require(cells.size() == 4, "bad loss csv line: " + line);
      total.pts.push_back({cells[0], cells[1]});
      sim.pts.push_back({cells[0], cells[2]});
      smooth.pts.push_back({cells[0], cells[3]});
      csv << line << "\n";
    }
    write_text(fs::path(out_dir) / "loss_curve.csv", csv.str());
    write_text(fs::path(out_dir) / "loss_curve.svg",
               line_chart("training loss", "epoch", "loss", {total, sim, smooth}));
    std::cout << "wrote " << (fs::path(out_dir) / "loss_curve.{csv,svg}").string() << "\n";
  }
  require(!records_path.empty() || !loss_path.empty(), "nothing to plot");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motion tracking over cardiac cine sequences"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate phantom sequences with ground truth");
  std::string synth_out = "data";
  int synth_T = 10, synth_size = 64, synth_count = 1;
  uint64_t synth_seed = 0;
  double synth_a = 0.1, synth_noise = 0.0;
  std::string synth_prefix = "case";
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--T", synth_T, "frames per cycle");
  synth->add_option("--size", synth_size, "image height and width");
  synth->add_option("--seed", synth_seed, "base RNG seed");
  synth->add_option("--a", synth_a, "contraction amplitude");
  synth->add_option("--noise", synth_noise, "intensity noise sigma");
  synth->add_option("--count", synth_count, "number of sequences");
  synth->add_option("--prefix", synth_prefix, "sequence name prefix");

  auto* tr = app.add_subcommand("train", "train a model from a config file");
  std::string train_config, train_data, train_ckpt;
  tr->add_option("--config", train_config, "config file")->required();
  tr->add_option("--data", train_data, "override data_dir");
  tr->add_option("--out", train_ckpt, "checkpoint path (default <out_dir>/model.mcmc)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_out = "eval_records.jsonl";
  ev->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--out", eval_out, "records output path");

  auto* inf = app.add_subcommand("infer", "predict one motion field");
  std::string infer_ckpt, infer_seq, infer_out = "phi.mcmt";
  int infer_t = 0;
  inf->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
  inf->add_option("--seq", infer_seq, "sequence tensor file")->required();
  inf->add_option("--t", infer_t, "target frame")->required();
  inf->add_option("--out", infer_out, "output tensor path");

  auto* prof = app.add_subcommand("profile", "measure forward cost per window length");
  int prof_cbase = 4, prof_dstate = 8, prof_size = 64, prof_calls = 100, prof_warmup = 10;
  std::string prof_out;
  prof->add_option("--c-base", prof_cbase, "base channel width");
  prof->add_option("--d-state", prof_dstate, "state dimension");
  prof->add_option("--size", prof_size, "image height and width");
  prof->add_option("--calls", prof_calls, "timed calls per row");
  prof->add_option("--warmup", prof_warmup, "discarded warm-up calls");
  prof->add_option("--out", prof_out, "also write a CSV here");

  auto* plot = app.add_subcommand("plot", "emit CSV and SVG curves");
  std::string plot_records, plot_loss, plot_dir = "plots";
  plot->add_option("--records", plot_records, "eval records (jsonl)");
  plot->add_option("--loss", plot_loss, "loss csv from train");
  plot->add_option("--out-dir", plot_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      return run_synth(synth_out, synth_T, synth_size, synth_seed, synth_a, synth_noise,
                       synth_count, synth_prefix);
    }
    if (*tr) return run_train(train_config, train_data, train_ckpt);
    if (*ev) return run_eval(eval_ckpt, eval_data, eval_out);
    if (*inf) return run_infer(infer_ckpt, infer_seq, infer_t, infer_out);
    if (*prof) return run_profile(prof_cbase, prof_dstate, prof_size, prof_calls, prof_warmup,
                                  prof_out);
    if (*plot) return run_plot(plot_records, plot_loss, plot_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
