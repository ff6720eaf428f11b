#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mcm/data.hpp"
#include "mcm/decoder.hpp"

namespace mcm {

struct TrainConfig {
  double lr = 1e-4;
  double lambda = 0.05;
  int epochs = 10;
  int steps_per_epoch = 20;
  int batch_size = 1;
  int K = 2;  // half-window; window length is 2K+1
  int c_base = 16;
  int d_state = 8;
  int crop = 128;
  uint64_t seed = 0;
  std::string data_dir;
  std::string out_dir = ".";
  void validate() const;
};

// One `key = value` per line, # comments. Unknown keys are errors and the
// parsed config is validated.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);

struct AdamState {
  std::vector<TensorPtr> m, v;  // aligned with the collected parameter list
  int64_t step = 0;
};

AdamState make_adam_state(const std::vector<NamedParam>& params);

// Bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8) from the
// gradients currently stored on the parameters. A parameter without a
// gradient buffer counts as zero-gradient.
void adam_step(const std::vector<NamedParam>& params, AdamState& st, double lr);

struct Dataset {
  std::vector<std::string> ids;
  std::vector<Phantom> items;
};

// Loads every *_seq.mcmt under dir. Sequences already at crop x crop pass
// through untouched; anything else is center-cropped and renormalized, which
// drops the (no longer aligned) gt fields and masks.
Dataset load_dataset(const std::string& dir, int crop);

struct LossRecord {
  int epoch = 0;
  double total = 0.0, sim = 0.0, smooth = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> log;  // one record per epoch, means over its steps
  double initial_sim = 0.0;     // mean_sim before / after training
  double final_sim = 0.0;
};

// Mean photometric loss over every (sequence, target frame) pair under the
// current weights; no gradients.
double mean_sim(const McmModel& model, const Dataset& ds);

// Uniformly samples (sequence, target frame) pairs, descends total_loss with
// Adam, and keeps parameters and moments on the float32 grid after every step
// so checkpoints round-trip exactly. Aborts on non-finite loss or gradients.
TrainResult train(McmModel& model, AdamState& st, const Dataset& ds, const TrainConfig& cfg,
                  std::ostream* progress = nullptr);

// Checkpoint container: "MCMC", u8 version = 1, then (u16 name length LE,
// name bytes, tensor blob) records covering parameters, Adam moments, a
// config snapshot, and the step counter. Writes are atomic (temp + rename).
void save_checkpoint(const std::string& path, const McmModel& model, const AdamState& st,
                     const TrainConfig& cfg);

struct LoadedCheckpoint {
  McmModel model;
  AdamState adam;
  TrainConfig cfg;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Motion field from the resting frame to frame t, without building a graph.
TensorPtr predict_field(const McmModel& model, const TensorPtr& seq, int t);

struct EvalRecord {
  std::string seq_id;
  int t = 0;
  bool has_dice = false;
  double dice = 0.0;  // warped resting mask vs frame mask, myocardium label
  double neg_jac_pct = 0.0;
  double mean_abs_jm1 = 0.0;
  bool has_epe = false;
  double epe = 0.0;
  bool has_tc = false;
  double tc_index = 0.0;  // one value per sequence, repeated on its records
  double mean_mag = 0.0;  // mean displacement magnitude of this frame's field
};

// Predicts fields for every frame of every sequence; one record per
// (sequence, frame). Missing masks or gt drop the corresponding fields via
// the has_* flags instead of failing.
std::vector<EvalRecord> evaluate(const McmModel& model, const Dataset& ds);

// Line-delimited JSON records.
void write_eval_records(const std::string& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_eval_records(const std::string& path);

struct ProfileRow {
  int n_f = 0;
  int64_t peak_bytes = 0;
  double mean_ms = 0.0;
  int calls = 0;
};

// Forward-pass cost for window lengths 1, 3, 5 at the given image size.
// Latency is averaged over `calls` runs after `warmup` discarded runs; peak
// bytes track live tensor storage.
std::vector<ProfileRow> profile_model(int c_base, int d_state, int size, int calls = 100,
                                      int warmup = 10);

}  // namespace mcm
