// clf — batch driver for the coarse-matching pipeline: synthesize datasets,
// generate ground truth, train (optionally against a teacher), match image
// pairs, evaluate MAE, and benchmark throughput. Commands read and write
// files only; nothing is interactive.
//
// Exit codes: 0 success, 2 usage/config error, 3 data/format error,
// 4 numeric failure.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clf/attention.hpp"
#include "clf/config.hpp"
#include "clf/dataio.hpp"
#include "clf/error.hpp"
#include "clf/geometry.hpp"
#include "clf/matching.hpp"
#include "clf/model.hpp"
#include "clf/random.hpp"
#include "clf/tensor.hpp"
#include "clf/trainer.hpp"

namespace fs = std::filesystem;

namespace {

// "HxW" -> (h, w); both decimal, height first
void parse_size(const std::string& s, std::size_t& h, std::size_t& w) {
  std::size_t x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == s.size())
    throw clf::config_error("--size expects HEIGHTxWIDTH, got '" + s + "'");
  try {
    h = std::stoull(s.substr(0, x));
    w = std::stoull(s.substr(x + 1));
  } catch (const std::exception&) {
    throw clf::config_error("--size expects HEIGHTxWIDTH, got '" + s + "'");
  }
  if (h == 0 || w == 0)
    throw clf::config_error("--size dimensions must be positive, got '" + s + "'");
}

struct PairId {
  std::string scene;
  long id_a = 0, id_b = 0;
};

// "SCENE:IDA:IDB"
PairId parse_pair_id(const std::string& s) {
  std::size_t c1 = s.find(':');
  std::size_t c2 = c1 == std::string::npos ? std::string::npos : s.find(':', c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw clf::config_error("--pair expects SCENE:IDA:IDB, got '" + s + "'");
  PairId p;
  p.scene = s.substr(0, c1);
  try {
    p.id_a = std::stol(s.substr(c1 + 1, c2 - c1 - 1));
    p.id_b = std::stol(s.substr(c2 + 1));
  } catch (const std::exception&) {
    throw clf::config_error("--pair expects SCENE:IDA:IDB, got '" + s + "'");
  }
  if (p.scene.empty())
    throw clf::config_error("--pair expects SCENE:IDA:IDB, got '" + s + "'");
  return p;
}

std::ofstream open_out(const std::string& path) {
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw clf::dataset_error(path + ": cannot open for writing");
  return out;
}

// ---------------------------------------------------------------------------
// synth-data
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t scenes = 2;
  std::string size = "64x64";
  std::uint64_t seed = 0;
  bool force = false;
};

void cmd_synth_data(const SynthArgs& a) {
  std::size_t h = 0, w = 0;
  parse_size(a.size, h, w);
  if (fs::exists(a.out)) {
    if (!fs::is_directory(a.out))
      throw clf::config_error(a.out + " exists and is not a directory");
    if (!fs::is_empty(a.out) && !a.force)
      throw clf::config_error(a.out +
                              " is not empty; pass --force to write into it");
  }
  clf::generate_synthetic_dataset(a.out, a.scenes, h, w, a.seed);
  std::cout << "wrote " << a.scenes << " scenes of " << h << "x" << w
            << " under " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// gen-gt
// ---------------------------------------------------------------------------

struct GenGtArgs {
  std::string data;
  std::string pair;
  std::size_t step = 16;
  double tol = 0.02;
  std::string out;
};

void cmd_gen_gt(const GenGtArgs& a) {
  PairId want = parse_pair_id(a.pair);
  std::vector<clf::ScenePairRef> refs = clf::scan_dataset(a.data);
  const clf::ScenePairRef* hit = nullptr;
  for (const auto& r : refs)
    if (r.scene == want.scene && r.id_a == want.id_a && r.id_b == want.id_b)
      hit = &r;
  if (!hit)
    throw clf::dataset_error(a.data + ": no pair " + a.pair +
                             " (format SCENE:IDA:IDB, listed in pairs.txt)");

  clf::LoadedPair<double> pair = clf::load_scene_pair<double>(*hit);
  clf::GroundTruthMatches gt = clf::generate_ground_truth(
      pair.depth_a, pair.depth_b, pair.cam_a, pair.cam_b, a.step, a.tol);

  std::ofstream out = open_out(a.out);
  const double half = double(a.step) * 0.5;
  for (const auto& [ca, cb] : gt.pairs) {
    double ua = double(ca % gt.grid_a_w) * double(a.step) + half;
    double va = double(ca / gt.grid_a_w) * double(a.step) + half;
    double ub = double(cb % gt.grid_b_w) * double(a.step) + half;
    double vb = double(cb / gt.grid_b_w) * double(a.step) + half;
    out << ca << " " << cb << " " << clf::detail::fmt_shortest(ua) << " "
        << clf::detail::fmt_shortest(va) << " " << clf::detail::fmt_shortest(ub)
        << " " << clf::detail::fmt_shortest(vb) << "\n";
  }
  std::cout << "wrote " << gt.pairs.size() << " ground-truth matches to "
            << a.out << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::string teacher;  // optional weights file
  std::string out;
};

template <typename T>
void run_train(const clf::RunConfig& cfg, const TrainArgs& a) {
  clf::Model<T> student(cfg.model_config(), cfg.train.seed);

  std::optional<clf::Model<T>> teacher;
  clf::DistillConfig dcfg = cfg.distill;
  if (!a.teacher.empty()) {
    teacher.emplace(clf::load_model<T>(a.teacher));
    if (teacher->config().backbone.output_stride !=
        cfg.backbone.output_stride)
      throw clf::config_error(
          "teacher stride " +
          std::to_string(teacher->config().backbone.output_stride) +
          " does not match student stride " +
          std::to_string(cfg.backbone.output_stride) +
          "; score matrices would disagree");
  } else {
    dcfg.c_d = 0.0;  // no teacher: distillation weight forced off
  }

  clf::TrainOutcome outcome =
      clf::train(student, teacher ? &*teacher : nullptr, a.data, cfg.train,
                 dcfg, a.out, &std::cerr);
  std::cout << "trained " << cfg.train.epochs << " epoch(s), "
            << outcome.rows.size() << " metric rows, "
            << outcome.skipped_pairs.size() << " skipped pair(s); outputs in "
            << a.out << "\n";
}

void cmd_train(const TrainArgs& a) {
  clf::RunConfig cfg = clf::load_run_config(a.config);
  clf::validate_run_config(cfg);
  if (cfg.dtype == clf::Dtype::f32)
    run_train<float>(cfg, a);
  else
    run_train<double>(cfg, a);
}

// ---------------------------------------------------------------------------
// match
// ---------------------------------------------------------------------------

struct MatchArgs {
  std::string weights;
  std::string image_a;
  std::string image_b;
  double threshold = 0.2;
  std::string out;
};

template <typename T>
void run_match(const MatchArgs& a) {
  clf::NoGradScope<T> inference;
  clf::Model<T> model = clf::load_model<T>(a.weights);
  clf::Tensor<T> img_a = clf::load_image<T>(a.image_a);
  clf::Tensor<T> img_b = clf::load_image<T>(a.image_b);

  clf::PairScores<T> scores = model.forward_pair(img_a, img_b);
  clf::MatchProbability<T> prob = clf::dual_softmax(scores.score);
  clf::MatchSet matches = clf::extract_matches(prob, a.threshold);

  const std::size_t stride = model.config().backbone.output_stride;
  const double half = double(stride) * 0.5;
  std::ofstream out = open_out(a.out);
  for (const auto& m : matches.matches) {
    double ua = double(m.cell_a % scores.grid_a_w) * double(stride) + half;
    double va = double(m.cell_a / scores.grid_a_w) * double(stride) + half;
    double ub = double(m.cell_b % scores.grid_b_w) * double(stride) + half;
    double vb = double(m.cell_b / scores.grid_b_w) * double(stride) + half;
    out << clf::detail::fmt_shortest(ua) << " " << clf::detail::fmt_shortest(va)
        << " " << clf::detail::fmt_shortest(ub) << " "
        << clf::detail::fmt_shortest(vb) << " "
        << clf::detail::fmt_shortest(double(m.confidence)) << "\n";
  }
  std::cout << "wrote " << matches.matches.size() << " matches to " << a.out
            << "\n";
}

void cmd_match(const MatchArgs& a) {
  clf::WeightsMap wm = clf::load_weights(a.weights);
  if (clf::weights_dtype(wm) == 0)
    run_match<float>(a);
  else
    run_match<double>(a);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string weights;
  std::string data;
  std::string out;
  double tol = 0.02;
};

template <typename T>
void run_eval(const EvalArgs& a) {
  clf::NoGradScope<T> inference;
  clf::Model<T> model = clf::load_model<T>(a.weights);
  const std::size_t stride = model.config().backbone.output_stride;

  std::vector<clf::ScenePairRef> refs = clf::scan_dataset(a.data);
  if (refs.empty()) throw clf::dataset_error(a.data + ": no scene pairs found");

  double sum = 0.0;
  for (const auto& ref : refs) {
    clf::LoadedPair<T> pair = clf::load_scene_pair<T>(ref);
    clf::GroundTruthMatches gt = clf::generate_ground_truth(
        pair.depth_a, pair.depth_b, pair.cam_a, pair.cam_b, stride, a.tol);
    clf::PairScores<T> scores = model.forward_pair(pair.image_a, pair.image_b);
    sum += clf::mae(clf::dual_softmax(scores.score), gt);
  }
  double mean = sum / double(refs.size());

  std::string row = std::to_string(refs.size()) + "," +
                    clf::detail::fmt_shortest(mean);
  std::ofstream out = open_out(a.out);
  out << "pairs,mean_mae\n" << row << "\n";
  std::cout << "pairs,mean_mae\n" << row << "\n";
}

void cmd_eval(const EvalArgs& a) {
  clf::WeightsMap wm = clf::load_weights(a.weights);
  if (clf::weights_dtype(wm) == 0)
    run_eval<float>(a);
  else
    run_eval<double>(a);
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string weights;
  std::string size = "640x480";
  std::size_t iters = 5;
};

template <typename T>
clf::Tensor<T> random_image(std::size_t h, std::size_t w, clf::Rng& rng) {
  clf::Tensor<T> img = clf::Tensor<T>::zeros({1, h, w});
  for (auto& v : img.values_mut()) v = T(rng.uniform());
  return img;
}

template <typename Fn>
double time_once_ms(const Fn& fn) {
  auto t0 = std::chrono::steady_clock::now();
  fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

template <typename T>
void run_bench(const BenchArgs& a) {
  if (a.iters == 0) throw clf::config_error("--iters must be >= 1");
  std::size_t h = 0, w = 0;
  parse_size(a.size, h, w);

  clf::NoGradScope<T> inference;
  clf::Model<T> model = clf::load_model<T>(a.weights);
  clf::Rng rng(0);
  clf::Tensor<T> img_a = random_image<T>(h, w, rng);
  clf::Tensor<T> img_b = random_image<T>(h, w, rng);

  auto pipeline = [&] {
    clf::PairScores<T> s = model.forward_pair(img_a, img_b);
    clf::dual_softmax(s.score);
  };
  pipeline();  // warm-up
  std::vector<double> samples;
  for (std::size_t i = 0; i < a.iters; ++i)
    samples.push_back(time_once_ms(pipeline));
  std::sort(samples.begin(), samples.end());
  double median = samples[samples.size() / 2];

  std::cout << "median_ms=" << clf::detail::fmt_shortest(median)
            << " fps=" << clf::detail::fmt_shortest(1000.0 / median) << "\n";

  // attention-path comparison at this resolution's sequence length
  const clf::AttentionConfig& att = model.config().attention;
  const std::size_t stride = model.config().backbone.output_stride;
  const std::size_t n = (h / stride) * (w / stride);
  const std::size_t dh = att.d_model / att.n_heads;
  auto rand_heads = [&](std::size_t rows) {
    clf::Tensor<T> t = clf::Tensor<T>::zeros({att.n_heads, rows, dh});
    for (auto& v : t.values_mut()) v = T(rng.uniform() - 0.5);
    return t;
  };
  clf::Tensor<T> q = rand_heads(n), k = rand_heads(n), v = rand_heads(n);
  double fast_ms =
      time_once_ms([&] { clf::linear_attention_fast(q, k, v); });
  double ref_ms =
      time_once_ms([&] { clf::linear_attention_reference(q, k, v); });
  std::cout << "attention_n=" << n
            << " fast_ms=" << clf::detail::fmt_shortest(fast_ms)
            << " reference_ms=" << clf::detail::fmt_shortest(ref_ms)
            << " speedup=" << clf::detail::fmt_shortest(ref_ms / fast_ms)
            << "\n";
}

void cmd_bench(const BenchArgs& a) {
  clf::WeightsMap wm = clf::load_weights(a.weights);
  if (clf::weights_dtype(wm) == 0)
    run_bench<float>(a);
  else
    run_bench<double>(a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "clf — coarse feature-matching pipeline: synthetic data, ground truth, "
      "training with optional distillation, matching, evaluation, benchmarks"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* c_synth = app.add_subcommand(
      "synth-data", "Generate a deterministic synthetic plane-scene dataset");
  c_synth->add_option("--out", synth.out, "Output dataset directory")->required();
  c_synth->add_option("--scenes", synth.scenes, "Number of scenes")
      ->capture_default_str();
  c_synth->add_option("--size", synth.size, "Image size as HEIGHTxWIDTH")
      ->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Generator seed")
      ->capture_default_str();
  c_synth->add_flag("--force", synth.force, "Write into a non-empty directory");

  GenGtArgs gengt;
  CLI::App* c_gengt = app.add_subcommand(
      "gen-gt", "Write depth-consistent cell matches for one dataset pair");
  c_gengt->add_option("--data", gengt.data, "Dataset directory")->required();
  c_gengt->add_option("--pair", gengt.pair, "Pair as SCENE:IDA:IDB")->required();
  c_gengt->add_option("--step", gengt.step, "Grid step in pixels")
      ->capture_default_str();
  c_gengt->add_option("--tol", gengt.tol, "Relative depth-consistency tolerance")
      ->capture_default_str();
  c_gengt->add_option("--out", gengt.out,
                      "Output file: lines 'cellA cellB uA vA uB vB'")
      ->required();

  TrainArgs train;
  CLI::App* c_train = app.add_subcommand(
      "train", "Train a model from a key=value config file");
  c_train->add_option("--data", train.data, "Dataset directory")->required();
  c_train->add_option("--config", train.config, "Run configuration file")
      ->required();
  c_train->add_option("--teacher", train.teacher,
                      "Teacher weights; omitting it forces distill.c_d to 0");
  c_train->add_option("--out", train.out,
                      "Output directory for metrics.csv and checkpoints")
      ->required();
  c_train->footer("Config defaults:\n" +
                  clf::serialize_run_config(clf::RunConfig{}));

  MatchArgs match;
  CLI::App* c_match = app.add_subcommand(
      "match", "Match two images; writes 'uA vA uB vB conf' per line");
  c_match->add_option("--weights", match.weights, "Model weights file")
      ->required();
  c_match->add_option("--imageA", match.image_a, "First image (PGM)")->required();
  c_match->add_option("--imageB", match.image_b, "Second image (PGM)")
      ->required();
  c_match->add_option("--threshold", match.threshold,
                      "Confidence threshold in (0, 1)")
      ->capture_default_str();
  c_match->add_option("--out", match.out, "Output match file")->required();

  EvalArgs eval;
  CLI::App* c_eval = app.add_subcommand(
      "eval", "Mean match-probability MAE over every dataset pair");
  c_eval->add_option("--weights", eval.weights, "Model weights file")->required();
  c_eval->add_option("--data", eval.data, "Dataset directory")->required();
  c_eval->add_option("--out", eval.out, "Output CSV (header pairs,mean_mae)")
      ->required();
  c_eval->add_option("--tol", eval.tol, "Ground-truth depth tolerance")
      ->capture_default_str();

  BenchArgs bench;
  CLI::App* c_bench = app.add_subcommand(
      "bench", "Median latency and FPS of the matching pipeline");
  c_bench->add_option("--weights", bench.weights, "Model weights file")
      ->required();
  c_bench->add_option("--size", bench.size, "Image size as HEIGHTxWIDTH")
      ->capture_default_str();
  c_bench->add_option("--iters", bench.iters, "Timed iterations")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (c_synth->parsed()) cmd_synth_data(synth);
    if (c_gengt->parsed()) cmd_gen_gt(gengt);
    if (c_train->parsed()) cmd_train(train);
    if (c_match->parsed()) cmd_match(match);
    if (c_eval->parsed()) cmd_eval(eval);
    if (c_bench->parsed()) cmd_bench(bench);
  } catch (const clf::config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const clf::contract_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const clf::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {  // data, format, dimension, geometry, I/O
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
