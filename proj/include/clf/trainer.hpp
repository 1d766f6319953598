#pragma once

// Training loop: deterministic pair sampling, gradient accumulation over
// micro-batches, AdamW steps on a stepped learning rate, per-virtual-batch
// metric logging, and epoch checkpoints.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <type_traits>
#include <ostream>
#include <string>
#include <vector>

#include "clf/dataio.hpp"
#include "clf/distill.hpp"
#include "clf/error.hpp"
#include "clf/geometry.hpp"
#include "clf/matching.hpp"
#include "clf/model.hpp"
#include "clf/optim.hpp"
#include "clf/random.hpp"
#include "clf/tensor.hpp"

namespace clf {

struct TrainOutcome {
  std::vector<MetricsRow> rows;
  std::vector<std::string> skipped_pairs;  // "scene:idA:idB" with empty ground truth
};

namespace detail {

template <typename T>
struct TrainingPair {
  LoadedPair<T> data;
  GroundTruthMatches gt;
  std::string label;
};

// Load every dataset pair and its ground truth once; training samples from
// the usable subset (nonempty ground truth) with replacement.
template <typename T>
std::vector<TrainingPair<T>> prepare_pairs(const std::string& data_root,
                                           std::size_t grid_step, double depth_tol,
                                           std::vector<std::string>& skipped,
                                           std::ostream* log) {
  std::vector<ScenePairRef> refs = scan_dataset(data_root);
  if (refs.empty())
    throw dataset_error(data_root + ": no scene pairs found");
  std::vector<TrainingPair<T>> out;
  for (const auto& ref : refs) {
    TrainingPair<T> tp;
    tp.data = load_scene_pair<T>(ref);
    tp.label = ref.scene + ":" + std::to_string(ref.id_a) + ":" +
               std::to_string(ref.id_b);
    tp.gt = generate_ground_truth(tp.data.depth_a, tp.data.depth_b, tp.data.cam_a,
                                  tp.data.cam_b, grid_step, depth_tol);
    if (tp.gt.pairs.empty()) {
      skipped.push_back(tp.label);
      if (log)
        *log << "warning: skipping pair " << tp.label
             << " (no ground-truth matches)\n";
      continue;
    }
    out.push_back(std::move(tp));
  }
  if (out.empty())
    throw dataset_error(data_root + ": every pair has empty ground truth");
  return out;
}

}  // namespace detail

// Train `student` on the dataset under `data_root`, writing metrics.csv and
// ckpt_epoch{N}.clfw / ckpt_latest.clfw into `out_dir`. The teacher, when
// present, is evaluated without gradients and never modified.
template <typename T>
TrainOutcome train(Model<T>& student, std::type_identity_t<Model<T>*> teacher,
                   const std::string& data_root, const TrainConfig& tcfg,
                   const DistillConfig& dcfg, const std::string& out_dir,
                   std::ostream* log = nullptr) {
  validate_train_config(tcfg);
  validate_distill_config(dcfg);
  if (!teacher && dcfg.c_d != 0.0)
    throw config_error("train: distill weight c_d is nonzero but no teacher given");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  fs::path metrics = fs::path(out_dir) / "metrics.csv";
  {
    std::ofstream head(metrics, std::ios::trunc);
    if (!head) throw dataset_error(metrics.string() + ": cannot open for writing");
    head << kMetricsHeader << "\n";
  }
  auto checkpoint = [&](std::size_t epochs_done) {
    fs::path ck = fs::path(out_dir) / ("ckpt_epoch" + std::to_string(epochs_done) +
                                       ".clfw");
    save_model(student, ck.string());
    fs::copy_file(ck, fs::path(out_dir) / "ckpt_latest.clfw",
                  fs::copy_options::overwrite_existing);
  };

  TrainOutcome outcome;
  std::size_t stride = student.config().backbone.output_stride;
  auto pairs = detail::prepare_pairs<T>(data_root, stride, tcfg.depth_tol,
                                        outcome.skipped_pairs, log);

  AdamW<T> opt(student.named_params(), tcfg);
  opt.zero_grad();
  checkpoint(0);

  // Teacher scores are constant across the run; compute once per distinct pair.
  std::map<std::size_t, Tensor<T>> teacher_scores;
  auto teacher_score = [&](std::size_t idx) -> const Tensor<T>& {
    auto it = teacher_scores.find(idx);
    if (it == teacher_scores.end()) {
      NoGradScope<T> guard;
      PairScores<T> ps = teacher->forward_pair(pairs[idx].data.image_a,
                                               pairs[idx].data.image_b);
      it = teacher_scores.emplace(idx, ps.score.s).first;
    }
    return it->second;
  };

  Rng rng(tcfg.seed);
  const std::size_t virtual_batch = tcfg.micro_batch * tcfg.accum_steps;
  long global_step = 0;

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    double lr = lr_schedule(epoch, tcfg);
    std::vector<std::size_t> sampled(tcfg.epoch_pairs);
    for (auto& s : sampled) s = rng.below(pairs.size());

    for (std::size_t start = 0; start < sampled.size(); start += virtual_batch) {
      std::size_t batch_end = std::min(start + virtual_batch, sampled.size());
      std::size_t batch_size = batch_end - start;
      std::size_t n_micro = (batch_size + tcfg.micro_batch - 1) / tcfg.micro_batch;

      double log_loss = 0, log_ld = 0, log_lt = 0, log_mae = 0;
      for (std::size_t m = 0; m < n_micro; ++m) {
        std::size_t lo = start + m * tcfg.micro_batch;
        std::size_t hi = std::min(lo + tcfg.micro_batch, batch_end);

        Tape<T> tape;
        Tensor<T> micro_sum = Tensor<T>::scalar(T(0));
        double micro_ld = 0, micro_lt = 0;
        for (std::size_t s = lo; s < hi; ++s) {
          const auto& tp = pairs[sampled[s]];
          PairScores<T> ps = student.forward_pair(tp.data.image_a, tp.data.image_b);
          MatchProbability<T> prob = dual_softmax(ps.score);
          Tensor<T> lt = target_loss(prob, tp.gt);
          Tensor<T> ld = teacher ? kl_distill_loss(ps.score.s,
                                                   teacher_score(sampled[s]), T(dcfg.t))
                                 : Tensor<T>::scalar(T(0));
          LossBreakdown<T> bd = total_loss(ld, lt, dcfg);
          micro_sum = add(micro_sum, bd.total);
          micro_ld += double(bd.l_distill.item());
          micro_lt += double(bd.l_target.item());
          log_mae += mae(prob, tp.gt);
        }
        Tensor<T> micro_mean = scale(micro_sum, T(1) / T(hi - lo));
        // scale by 1/n before backward so accumulated grads form the
        // virtual-batch mean; parameters step only after the last micro-batch
        tape.backward(scale(micro_mean, T(1) / T(n_micro)));
        log_loss += micro_mean.item() / double(n_micro);
        log_ld += micro_ld / double(hi - lo) / double(n_micro);
        log_lt += micro_lt / double(hi - lo) / double(n_micro);
      }
      opt.step(lr);
      opt.zero_grad();

      MetricsRow row;
      row.epoch = long(epoch);
      row.step = ++global_step;
      row.loss = log_loss;
      row.l_distill = log_ld;
      row.l_target = log_lt;
      row.mae = log_mae / double(batch_size);
      row.lr = lr;
      append_metrics(metrics, row);
      outcome.rows.push_back(row);
    }
    if ((epoch + 1) % tcfg.ckpt_every == 0 || epoch + 1 == tcfg.epochs)
      checkpoint(epoch + 1);
  }
  return outcome;
}

}  // namespace clf
