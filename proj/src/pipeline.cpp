#include "mcm/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "mcm/encoder.hpp"
#include "mcm/metrics.hpp"
#include "mcm/ops.hpp"
#include "mcm/warp_loss.hpp"

namespace mcm {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double d = std::stod(value, &used);
    require(used == value.size(), "bad value for " + key + ": " + value);
    return d;
  } catch (const std::logic_error&) {
    require(false, "bad value for " + key + ": " + value);
  }
  return 0.0;
}

int parse_int(const std::string& key, const std::string& value) {
  double d = parse_double(key, value);
  int i = static_cast<int>(d);
  require(d == i, "bad value for " + key + ": " + value);
  return i;
}

uint64_t parse_seed(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    uint64_t s = std::stoull(value, &used);
    require(used == value.size(), "bad value for " + key + ": " + value);
    return s;
  } catch (const std::logic_error&) {
    require(false, "bad value for " + key + ": " + value);
  }
  return 0;
}

TensorPtr frame_slice(const TensorPtr& seq, int t) {
  int h = seq->dim(1), w = seq->dim(2);
  int64_t np = static_cast<int64_t>(h) * w;
  auto out = make_tensor({h, w});
  std::copy_n(seq->v.begin() + t * np, np, out->v.begin());
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  require(lr > 0.0, "learning rate must be > 0");
  require(lambda >= 0.0, "lambda must be >= 0");
  require(epochs >= 0, "epochs must be >= 0");
  require(steps_per_epoch >= 1, "steps per epoch must be >= 1");
  require(batch_size >= 1, "batch size must be >= 1");
  require(K >= 0, "half-window must be >= 0");
  require(c_base >= 1, "channel width must be >= 1");
  require(d_state >= 1, "state size must be >= 1");
  require(crop >= 32 && crop % 32 == 0, "crop must be a positive multiple of 32");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    require(eq != std::string::npos, "bad config line " + std::to_string(lineno) + ": " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    require(!key.empty() && !value.empty(),
            "bad config line " + std::to_string(lineno) + ": " + line);
    if (key == "lr") {
      cfg.lr = parse_double(key, value);
    } else if (key == "lambda") {
      cfg.lambda = parse_double(key, value);
    } else if (key == "epochs") {
      cfg.epochs = parse_int(key, value);
    } else if (key == "steps_per_epoch") {
      cfg.steps_per_epoch = parse_int(key, value);
    } else if (key == "batch_size") {
      cfg.batch_size = parse_int(key, value);
    } else if (key == "K") {
      cfg.K = parse_int(key, value);
    } else if (key == "c_base") {
      cfg.c_base = parse_int(key, value);
    } else if (key == "d_state") {
      cfg.d_state = parse_int(key, value);
    } else if (key == "crop") {
      cfg.crop = parse_int(key, value);
    } else if (key == "seed") {
      cfg.seed = parse_seed(key, value);
    } else if (key == "data_dir") {
      cfg.data_dir = value;
    } else if (key == "out_dir") {
      cfg.out_dir = value;
    } else {
      require(false, "unknown config key: " + key);
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

AdamState make_adam_state(const std::vector<NamedParam>& params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto& p : params) {
    st.m.push_back(make_tensor(p.t->shape));
    st.v.push_back(make_tensor(p.t->shape));
  }
  return st;
}

void adam_step(const std::vector<NamedParam>& params, AdamState& st, double lr) {
  require(st.m.size() == params.size() && st.v.size() == params.size(),
          "optimizer state mismatch");
  ++st.step;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].t;
    Tensor& m = *st.m[i];
    Tensor& v = *st.v[i];
    bool has_g = !p.g.empty();
    for (int64_t j = 0; j < p.numel(); ++j) {
      double g = has_g ? p.g[j] : 0.0;
      require(std::isfinite(g), "diverged at step " + std::to_string(st.step));
      m.v[j] = b1 * m.v[j] + (1.0 - b1) * g;
      v.v[j] = b2 * v.v[j] + (1.0 - b2) * g * g;
      p.v[j] -= lr * (m.v[j] / c1) / (std::sqrt(v.v[j] / c2) + eps);
    }
  }
}

Dataset load_dataset(const std::string& dir, int crop) {
  Dataset ds;
  auto names = dataset_names(dir);
  require(!names.empty(), "no sequences found: " + dir);
  for (const auto& name : names) {
    auto ph = load_phantom(dir, name);
    if (ph.seq->dim(1) != crop || ph.seq->dim(2) != crop) {
      ph.seq = preprocess(ph.seq, crop);
      ph.gt.clear();
      ph.masks.clear();
    }
    ds.ids.push_back(name);
    ds.items.push_back(std::move(ph));
  }
  return ds;
}

double mean_sim(const McmModel& model, const Dataset& ds) {
  require(!ds.items.empty(), "empty dataset");
  NoGradGuard guard;
  double acc = 0.0;
  int64_t n = 0;
  for (const auto& item : ds.items) {
    int t_len = item.seq->dim(0);
    auto ref = frame_slice(item.seq, 0);
    for (int t = 0; t < t_len; ++t) {
      auto phi = predict_motion(model, item.seq, WindowSpec{t, model.K, t_len});
      auto sim = sim_loss(frame_slice(item.seq, t), warp(ref, phi));
      acc += sim->v[0];
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

TrainResult train(McmModel& model, AdamState& st, const Dataset& ds, const TrainConfig& cfg,
                  std::ostream* progress) {
  require(!ds.items.empty(), "empty dataset");
  require(cfg.lr >= 0.0, "negative learning rate");
  require(cfg.batch_size >= 1, "batch size must be >= 1");
  require(cfg.steps_per_epoch >= 1, "steps per epoch must be >= 1");
  require(cfg.epochs >= 0, "epochs must be >= 0");
  std::vector<NamedParam> params;
  model.collect(params);
  require(st.m.size() == params.size(), "optimizer state mismatch");
  Rng rng(cfg.seed);
  TrainResult res;
  res.initial_sim = mean_sim(model, ds);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double acc_total = 0.0, acc_sim = 0.0, acc_smooth = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      for (auto& p : params) p.t->zero_grad();
      std::vector<TensorPtr> losses;
      double sim_v = 0.0, smooth_v = 0.0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        int si = rng.uniform_int(static_cast<int>(ds.items.size()));
        const TensorPtr& seq = ds.items[si].seq;
        int t_len = seq->dim(0);
        int t = rng.uniform_int(t_len);
        auto phi = predict_motion(model, seq, WindowSpec{t, cfg.K, t_len});
        auto sim = sim_loss(frame_slice(seq, t), warp(frame_slice(seq, 0), phi));
        auto smooth = smooth_loss(phi);
        sim_v += sim->v[0];
        smooth_v += smooth->v[0];
        losses.push_back(add_scaled(sim, smooth, cfg.lambda));
      }
      TensorPtr total = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      if (cfg.batch_size > 1) total = scale(total, 1.0 / cfg.batch_size);
      require(std::isfinite(total->v[0]),
              "diverged at step " + std::to_string(st.step + 1) + ": loss is not finite");
      backward(total);
      adam_step(params, st, cfg.lr);
      // keep the whole optimizer trajectory on the float32 grid; checkpoints
      // then reload bitwise
      for (size_t i = 0; i < params.size(); ++i) {
        round_f32_inplace(*params[i].t);
        round_f32_inplace(*st.m[i]);
        round_f32_inplace(*st.v[i]);
      }
      acc_total += total->v[0];
      acc_sim += sim_v / cfg.batch_size;
      acc_smooth += smooth_v / cfg.batch_size;
    }
    LossRecord rec;
    rec.epoch = epoch;
    rec.total = acc_total / cfg.steps_per_epoch;
    rec.sim = acc_sim / cfg.steps_per_epoch;
    rec.smooth = acc_smooth / cfg.steps_per_epoch;
    res.log.push_back(rec);
    if (progress) {
      *progress << "epoch " << (epoch + 1) << "/" << cfg.epochs << " loss " << rec.total
                << " sim " << rec.sim << " smooth " << rec.smooth << "\n";
    }
  }
  res.final_sim = mean_sim(model, ds);
  return res;
}

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'C', 'M', 'C'};

// Config snapshot layout inside the "cfg" tensor. The seed is split into
// 16-bit limbs so it survives the float32 payload exactly.
enum CfgIndex {
  kCfgLr = 0,
  kCfgLambda,
  kCfgK,
  kCfgCBase,
  kCfgDState,
  kCfgCrop,
  kCfgBatch,
  kCfgEpochs,
  kCfgSteps,
  kCfgSeed0,
  kCfgSeed1,
  kCfgSeed2,
  kCfgSeed3,
  kCfgCount
};

TensorPtr encode_config(const TrainConfig& cfg) {
  auto t = make_tensor({kCfgCount});
  t->v[kCfgLr] = cfg.lr;
  t->v[kCfgLambda] = cfg.lambda;
  t->v[kCfgK] = cfg.K;
  t->v[kCfgCBase] = cfg.c_base;
  t->v[kCfgDState] = cfg.d_state;
  t->v[kCfgCrop] = cfg.crop;
  t->v[kCfgBatch] = cfg.batch_size;
  t->v[kCfgEpochs] = cfg.epochs;
  t->v[kCfgSteps] = cfg.steps_per_epoch;
  for (int i = 0; i < 4; ++i) t->v[kCfgSeed0 + i] = (cfg.seed >> (16 * i)) & 0xffff;
  return t;
}

TrainConfig decode_config(const Tensor& t) {
  require(t.numel() == kCfgCount, "checkpoint config size mismatch");
  TrainConfig cfg;
  cfg.lr = t.v[kCfgLr];
  cfg.lambda = t.v[kCfgLambda];
  cfg.K = static_cast<int>(t.v[kCfgK]);
  cfg.c_base = static_cast<int>(t.v[kCfgCBase]);
  cfg.d_state = static_cast<int>(t.v[kCfgDState]);
  cfg.crop = static_cast<int>(t.v[kCfgCrop]);
  cfg.batch_size = static_cast<int>(t.v[kCfgBatch]);
  cfg.epochs = static_cast<int>(t.v[kCfgEpochs]);
  cfg.steps_per_epoch = static_cast<int>(t.v[kCfgSteps]);
  cfg.seed = 0;
  for (int i = 0; i < 4; ++i) {
    cfg.seed |= static_cast<uint64_t>(t.v[kCfgSeed0 + i]) << (16 * i);
  }
  return cfg;
}

void save_named_tensors(const std::string& path, const std::vector<NamedParam>& items) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    require(static_cast<bool>(os), "cannot open file: " + tmp.string());
    os.write(kCheckpointMagic, 4);
    os.put(1);  // version
    for (const auto& item : items) {
      require(item.name.size() <= 0xffff, "tensor name too long");
      uint16_t len = static_cast<uint16_t>(item.name.size());
      char lb[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
      os.write(lb, 2);
      os.write(item.name.data(), len);
      write_tensor(os, *item.t);
    }
    os.flush();
    require(static_cast<bool>(os), "write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::vector<NamedParam> load_named_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open file: " + path);
  char magic[4] = {};
  require(static_cast<bool>(is.read(magic, 4)), "truncated file");
  require(std::equal(magic, magic + 4, kCheckpointMagic), "bad magic");
  int version = is.get();
  require(version >= 0, "truncated file");
  require(version == 1, "unsupported version: " + std::to_string(version));
  std::vector<NamedParam> items;
  while (is.peek() != std::ifstream::traits_type::eof()) {
    unsigned char lb[2];
    require(static_cast<bool>(is.read(reinterpret_cast<char*>(lb), 2)), "truncated file");
    uint16_t len = static_cast<uint16_t>(lb[0] | (lb[1] << 8));
    std::string name(len, '\0');
    require(static_cast<bool>(is.read(name.data(), len)), "truncated file");
    items.push_back({name, read_tensor(is)});
  }
  return items;
}

}  // namespace

void save_checkpoint(const std::string& path, const McmModel& model, const AdamState& st,
                     const TrainConfig& cfg) {
  std::vector<NamedParam> params;
  model.collect(params);
  require(st.m.size() == params.size() && st.v.size() == params.size(),
          "optimizer state mismatch");
  std::vector<NamedParam> items = params;
  for (size_t i = 0; i < params.size(); ++i) items.push_back({"adam.m." + params[i].name, st.m[i]});
  for (size_t i = 0; i < params.size(); ++i) items.push_back({"adam.v." + params[i].name, st.v[i]});
  items.push_back({"cfg", encode_config(cfg)});
  auto step_t = make_tensor({1});
  step_t->v[0] = static_cast<double>(st.step);
  items.push_back({"step", step_t});
  save_named_tensors(path, items);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto items = load_named_tensors(path);
  std::map<std::string, TensorPtr> by_name;
  for (auto& item : items) {
    bool inserted = by_name.emplace(item.name, item.t).second;
    require(inserted, "duplicate tensor in checkpoint: " + item.name);
  }
  auto take = [&](const std::string& name) {
    auto it = by_name.find(name);
    require(it != by_name.end(), "checkpoint missing tensor: " + name);
    TensorPtr t = it->second;
    by_name.erase(it);
    return t;
  };
  LoadedCheckpoint lc;
  lc.cfg = decode_config(*take("cfg"));
  auto step_t = take("step");
  require(step_t->numel() == 1, "checkpoint step size mismatch");
  Rng rng(lc.cfg.seed);
  lc.model = init_model(lc.cfg.c_base, lc.cfg.d_state, lc.cfg.K, rng);
  std::vector<NamedParam> params;
  lc.model.collect(params);
  lc.adam = make_adam_state(params);
  lc.adam.step = static_cast<int64_t>(step_t->v[0]);
  auto restore = [&](const std::string& name, Tensor& dst) {
    auto src = take(name);
    require(src->shape == dst.shape, "checkpoint shape mismatch: " + name);
    dst.v = src->v;
  };
  for (size_t i = 0; i < params.size(); ++i) {
    restore(params[i].name, *params[i].t);
    restore("adam.m." + params[i].name, *lc.adam.m[i]);
    restore("adam.v." + params[i].name, *lc.adam.v[i]);
  }
  require(by_name.empty(),
          "unexpected tensor in checkpoint: " + (by_name.empty() ? "" : by_name.begin()->first));
  return lc;
}

TensorPtr predict_field(const McmModel& model, const TensorPtr& seq, int t) {
  require(seq->shape.size() == 3, "expected a [T,H,W] sequence");
  NoGradGuard guard;
  WindowSpec spec{t, model.K, seq->dim(0)};
  spec.validate();
  return predict_motion(model, seq, spec);
}

std::vector<EvalRecord> evaluate(const McmModel& model, const Dataset& ds) {
  require(ds.ids.size() == ds.items.size(), "dataset ids out of sync");
  std::vector<EvalRecord> out;
  for (size_t s = 0; s < ds.items.size(); ++s) {
    const Phantom& item = ds.items[s];
    int t_len = item.seq->dim(0);
    int h = item.seq->dim(1), w = item.seq->dim(2);
    int64_t np = static_cast<int64_t>(h) * w;
    std::vector<TensorPtr> fields;
    fields.reserve(t_len);
    for (int t = 0; t < t_len; ++t) fields.push_back(predict_field(model, item.seq, t));
    bool has_tc = t_len >= 3;
    TemporalConsistency tc;
    if (has_tc) tc = temporal_consistency(fields);
    bool has_masks = item.masks.size() == static_cast<size_t>(t_len);
    bool has_gt = item.gt.size() == static_cast<size_t>(t_len);
    for (int t = 0; t < t_len; ++t) {
      EvalRecord r;
      r.seq_id = ds.ids[s];
      r.t = t;
      auto jm = jacobian_metrics(fields[t]);
      r.neg_jac_pct = jm.neg_pct;
      r.mean_abs_jm1 = jm.mean_abs_jm1;
      double mag = 0.0;
      for (int64_t p = 0; p < np; ++p) {
        mag += std::hypot(fields[t]->v[p], fields[t]->v[np + p]);
      }
      r.mean_mag = mag / static_cast<double>(np);
      if (has_masks) {
        r.has_dice = true;
        r.dice = dice(warp_labels(item.masks[0], fields[t]), item.masks[t], 1);
      }
      if (has_gt) {
        r.has_epe = true;
        const LabelMask* mp = nullptr;
        if (has_masks) {
          for (int lab : item.masks[t].labels) {
            if (lab != 0) {
              mp = &item.masks[t];
              break;
            }
          }
        }
        r.epe = endpoint_error(fields[t], item.gt[t], mp);
      }
      if (has_tc) {
        r.has_tc = true;
        r.tc_index = tc.tc_index;
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

void write_eval_records(const std::string& path, const std::vector<EvalRecord>& records) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot open file: " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["seq_id"] = r.seq_id;
    j["t"] = r.t;
    j["neg_jac_pct"] = r.neg_jac_pct;
    j["mean_abs_jm1"] = r.mean_abs_jm1;
    j["mean_mag"] = r.mean_mag;
    if (r.has_dice) j["dice"] = r.dice;
    if (r.has_epe) j["epe"] = r.epe;
    if (r.has_tc) j["tc_index"] = r.tc_index;
    os << j.dump() << "\n";
  }
  require(static_cast<bool>(os), "write failed: " + path);
}

std::vector<EvalRecord> read_eval_records(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open file: " + path);
  std::vector<EvalRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    EvalRecord r;
    r.seq_id = j.at("seq_id").get<std::string>();
    r.t = j.at("t").get<int>();
    r.neg_jac_pct = j.at("neg_jac_pct").get<double>();
    r.mean_abs_jm1 = j.at("mean_abs_jm1").get<double>();
    r.mean_mag = j.value("mean_mag", 0.0);
    if (j.contains("dice")) {
      r.has_dice = true;
      r.dice = j["dice"].get<double>();
    }
    if (j.contains("epe")) {
      r.has_epe = true;
      r.epe = j["epe"].get<double>();
    }
    if (j.contains("tc_index")) {
      r.has_tc = true;
      r.tc_index = j["tc_index"].get<double>();
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ProfileRow> profile_model(int c_base, int d_state, int size, int calls, int warmup) {
  require(calls >= 1, "calls must be >= 1");
  std::vector<ProfileRow> rows;
  for (int K : {0, 1, 2}) {
    Rng rng(42);
    auto model = init_model(c_base, d_state, K, rng);
    auto ph = synth_phantom(make_phantom_spec(5, size, size, 0.1, 1));
    NoGradGuard guard;
    auto run = [&] {
      auto phi = predict_field(model, ph.seq, 2);
      (void)phi;
    };
    for (int i = 0; i < warmup; ++i) run();
    reset_peak_tensor_bytes();
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < calls; ++i) run();
    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / calls;
    rows.push_back({2 * K + 1, peak_tensor_bytes(), ms, calls});
  }
  return rows;
}

}  // namespace mcm
